// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "v2apt/data.hpp"
#include "v2apt/model.hpp"
#include "v2apt/rng.hpp"

namespace v2apt {

struct LossBreakdown {
  double task_ce = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

template <typename T>
struct Loss {
  Tensor<T> total;  // scalar on the tape
  LossBreakdown breakdown;
};

/// task_ce + beta·kl with task_ce the batch-mean cross-entropy. Throws
/// ContractError for labels outside [0, C).
template <typename T>
Loss<T> total_loss(const Tensor<T>& logits, std::span<const int> labels, const Tensor<T>& kl,
                   double beta);

struct AdamWHyper {
  double lr = 1e-3;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamWHyper from(const TrainConfig& cfg);
};

/// First/second moments of one trainable parameter, kept in 64-bit.
struct MomentBuffers {
  std::string name;
  std::vector<double> m;
  std::vector<double> v;
};

/// AdamW with decoupled weight decay:
///   theta <- theta - lr·m_hat/(sqrt(v_hat) + eps) - lr·wd·theta.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWHyper hyper = {}) : hyper_(hyper) {}

  /// Updates every trainable parameter from its grad buffer, then clears the
  /// grads. A frozen parameter holding a gradient is a freeze violation and
  /// throws ContractError before anything is modified.
  void step(ParameterList<T>& params);

  std::uint64_t steps() const noexcept { return steps_; }
  const AdamWHyper& hyper() const noexcept { return hyper_; }
  const std::vector<MomentBuffers>& moments() const noexcept { return moments_; }
  void restore(std::uint64_t steps, std::vector<MomentBuffers> moments);

 private:
  MomentBuffers& buffers_for(const Parameter<T>& p);

  AdamWHyper hyper_;
  std::uint64_t steps_ = 0;
  std::vector<MomentBuffers> moments_;
};

struct StepMetrics {
  std::uint64_t step = 0;  // 1-based index of the completed step
  LossBreakdown loss;
  double accuracy = 0.0;  // on the batch, from the train-mode logits
};

struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::size_t steps = 0;
  double mean_task_ce = 0.0;
  double mean_kl = 0.0;
  double mean_total = 0.0;
  double accuracy = 0.0;
};

/// Linear KL warmup 0 -> beta over the first max(1, floor(frac·total))
/// steps; `step` counts completed steps before the update.
double kl_beta_at(std::uint64_t step, std::uint64_t total_steps, double beta, double warmup_frac);

/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

/// Training state for one model: optimizer, step counter and the epsilon
/// stream. Batch order is a pure function of (seed, epoch), so the step
/// counter alone locates the next batch.
template <typename T>
class Trainer {
 public:
  using StepCallback = std::function<void(const StepMetrics&)>;

  Trainer(Model<T>& model, TrainConfig config, std::uint64_t total_steps);

  StepMetrics train_step(const Dataset& data);
  /// Runs steps until the current epoch is exhausted.
  EpochMetrics train_epoch(const Dataset& data, const StepCallback& on_step = {});
  /// Runs until `total_steps` steps have completed.
  std::vector<StepMetrics> train(const Dataset& data, const StepCallback& on_step = {});

  std::vector<std::size_t> epoch_order(std::uint64_t epoch, std::size_t dataset_size) const;
  std::size_t batches_per_epoch(std::size_t dataset_size) const;

  std::uint64_t step() const noexcept { return step_; }
  std::uint64_t total_steps() const noexcept { return total_steps_; }
  double current_beta() const;
  const TrainConfig& config() const noexcept { return config_; }
  Model<T>& model() noexcept { return *model_; }
  const AdamW<T>& optimizer() const noexcept { return optimizer_; }
  RngCursor epsilon_cursor() const noexcept { return eps_rng_.cursor(); }

  void restore(std::uint64_t step, RngCursor epsilon, std::uint64_t optimizer_steps,
               std::vector<MomentBuffers> moments);

 private:
  Model<T>* model_;
  TrainConfig config_;
  std::uint64_t total_steps_;
  std::uint64_t step_ = 0;
  AdamW<T> optimizer_;
  Rng eps_rng_;
};

/// Eval-mode accuracy (Z = mu). Throws ContractError on an empty dataset.
template <typename T>
double evaluate(const Model<T>& model, const Dataset& data, std::size_t batch_size = 256);

/// Eval-mode predicted classes.
template <typename T>
std::vector<int> predict(const Model<T>& model, const Dataset& data, std::size_t batch_size = 256);

/// FNV-1a over the raw bytes of every frozen parameter, in parameter order.
template <typename T>
std::uint64_t frozen_hash(const Model<T>& model);

/// Checks image geometry and class count against the model config.
void check_compatible(const ModelConfig& config, const Dataset& data);

/// One JSON object per line.
void write_metrics_line(std::ostream& os, const StepMetrics& m, const std::string& split = "train");
void write_eval_line(std::ostream& os, const std::string& split, double accuracy, std::uint64_t step);

}  // namespace v2apt
