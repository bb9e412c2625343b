// SPDX-License-Identifier: Apache-2.0
#include "v2apt/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace v2apt {

template <typename T>
Loss<T> total_loss(const Tensor<T>& logits, std::span<const int> labels, const Tensor<T>& kl,
                   double beta) {
  Loss<T> out;
  const auto ce = cross_entropy(logits, labels);
  out.total = add(ce, scale(kl, static_cast<T>(beta)));
  out.breakdown.task_ce = static_cast<double>(ce.item());
  out.breakdown.kl = static_cast<double>(kl.item());
  out.breakdown.beta = beta;
  out.breakdown.total = static_cast<double>(out.total.item());
  return out;
}

AdamWHyper AdamWHyper::from(const TrainConfig& cfg) {
  return {cfg.lr, cfg.weight_decay, cfg.beta1, cfg.beta2, cfg.adam_eps};
}

template <typename T>
MomentBuffers& AdamW<T>::buffers_for(const Parameter<T>& p) {
  auto it = std::find_if(moments_.begin(), moments_.end(), [&](const auto& b) { return b.name == p.name; });
  if (it != moments_.end()) {
    if (it->m.size() != p.tensor.numel()) {
      throw ContractError("optimizer state for '" + p.name + "' has " + std::to_string(it->m.size()) +
                          " entries, parameter has " + std::to_string(p.tensor.numel()));
    }
    return *it;
  }
  moments_.push_back({p.name, std::vector<double>(p.tensor.numel(), 0.0),
                      std::vector<double>(p.tensor.numel(), 0.0)});
  return moments_.back();
}

template <typename T>
void AdamW<T>::step(ParameterList<T>& params) {
  for (const auto& p : params) {
    if (!p.trainable && p.tensor.has_grad()) {
      throw ContractError("freeze violation: frozen parameter '" + p.name + "' has a gradient");
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(hyper_.beta1, t);
  const double c2 = 1.0 - std::pow(hyper_.beta2, t);
  for (auto& p : params) {
    if (!p.trainable) continue;
    auto& buf = buffers_for(p);
    auto theta = p.tensor.mutable_data();
    const bool has = p.tensor.has_grad();
    const auto g = p.tensor.grad();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = has ? static_cast<double>(g[i]) : 0.0;
      buf.m[i] = hyper_.beta1 * buf.m[i] + (1.0 - hyper_.beta1) * gi;
      buf.v[i] = hyper_.beta2 * buf.v[i] + (1.0 - hyper_.beta2) * gi * gi;
      const double m_hat = buf.m[i] / c1;
      const double v_hat = buf.v[i] / c2;
      const double old = static_cast<double>(theta[i]);
      theta[i] = static_cast<T>(old - hyper_.lr * m_hat / (std::sqrt(v_hat) + hyper_.eps) -
                                hyper_.lr * hyper_.weight_decay * old);
    }
    p.tensor.clear_grad();
  }
}

template <typename T>
void AdamW<T>::restore(std::uint64_t steps, std::vector<MomentBuffers> moments) {
  steps_ = steps;
  moments_ = std::move(moments);
}

double kl_beta_at(std::uint64_t step, std::uint64_t total_steps, double beta, double warmup_frac) {
  const auto warmup = std::max<std::uint64_t>(
      1, static_cast<std::uint64_t>(std::floor(warmup_frac * static_cast<double>(total_steps))));
  if (step >= warmup) return beta;
  return beta * static_cast<double>(step) / static_cast<double>(warmup);
}

std::size_t argmax(std::span<const double> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

namespace {

template <typename T>
std::vector<int> row_argmax(const Tensor<T>& logits) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  const auto data = logits.data();
  std::vector<int> out(b);
  std::vector<double> row(c);
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t j = 0; j < c; ++j) row[j] = static_cast<double>(data[i * c + j]);
    out[i] = static_cast<int>(argmax(row));
  }
  return out;
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(Model<T>& model, TrainConfig config, std::uint64_t total_steps)
    : model_(&model),
      config_(std::move(config)),
      total_steps_(total_steps),
      optimizer_(AdamWHyper::from(config_)),
      eps_rng_(Rng(config_.seed).split("epsilon")) {
  config_.validate();
}

template <typename T>
std::size_t Trainer<T>::batches_per_epoch(std::size_t dataset_size) const {
  return (dataset_size + config_.batch_size - 1) / config_.batch_size;
}

template <typename T>
std::vector<std::size_t> Trainer<T>::epoch_order(std::uint64_t epoch, std::size_t dataset_size) const {
  std::vector<std::size_t> order(dataset_size);
  for (std::size_t i = 0; i < dataset_size; ++i) order[i] = i;
  Rng r = Rng(config_.seed).split("data_order").split(epoch);
  for (std::size_t i = dataset_size; i > 1; --i) std::swap(order[i - 1], order[r.below(i)]);
  return order;
}

template <typename T>
double Trainer<T>::current_beta() const {
  return kl_beta_at(step_, total_steps_, config_.kl_beta, config_.kl_warmup_frac);
}

template <typename T>
StepMetrics Trainer<T>::train_step(const Dataset& data) {
  if (data.size() == 0) throw ContractError("train_step: empty dataset");
  check_compatible(model_->config(), data);
  const std::size_t bpe = batches_per_epoch(data.size());
  const std::uint64_t epoch = step_ / bpe;
  const std::size_t b = step_ % bpe;
  const auto order = epoch_order(epoch, data.size());
  const std::size_t lo = b * config_.batch_size;
  const std::size_t hi = std::min(lo + config_.batch_size, data.size());
  const std::span<const std::size_t> batch(order.data() + lo, hi - lo);

  std::vector<int> labels;
  labels.reserve(batch.size());
  for (auto i : batch) labels.push_back(data.labels[i]);
  const auto images = data.images<T>(batch);
  const double beta = current_beta();

  StepMetrics metrics;
  {
    Tape<T> tape;
    const auto out = model_->forward(images, SampleMode::train, &eps_rng_);
    const auto loss = total_loss(out.logits, labels, out.kl, beta);
    metrics.loss = loss.breakdown;
    const auto& l = loss.breakdown;
    if (!std::isfinite(l.total) || !std::isfinite(l.task_ce) || !std::isfinite(l.kl)) {
      std::ostringstream os;
      os << "non-finite loss at step " << step_ + 1 << ": task_ce=" << l.task_ce << " kl=" << l.kl
         << " beta=" << l.beta << " total=" << l.total;
      throw NumericError(os.str());
    }
    tape.backward(loss.total);
    const auto pred = row_argmax(out.logits);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  }
  optimizer_.step(model_->parameters());
  ++step_;
  metrics.step = step_;
  return metrics;
}

template <typename T>
EpochMetrics Trainer<T>::train_epoch(const Dataset& data, const StepCallback& on_step) {
  if (data.size() == 0) throw ContractError("train_epoch: empty dataset");
  const std::size_t bpe = batches_per_epoch(data.size());
  EpochMetrics em;
  em.epoch = step_ / bpe;
  double weighted_correct = 0.0;
  std::size_t seen = 0;
  do {
    const std::size_t b = step_ % bpe;
    const std::size_t n = std::min(config_.batch_size, data.size() - b * config_.batch_size);
    const auto m = train_step(data);
    if (on_step) on_step(m);
    em.mean_task_ce += m.loss.task_ce;
    em.mean_kl += m.loss.kl;
    em.mean_total += m.loss.total;
    weighted_correct += m.accuracy * static_cast<double>(n);
    seen += n;
    ++em.steps;
  } while (step_ % bpe != 0);
  const auto s = static_cast<double>(em.steps);
  em.mean_task_ce /= s;
  em.mean_kl /= s;
  em.mean_total /= s;
  em.accuracy = weighted_correct / static_cast<double>(seen);
  return em;
}

template <typename T>
std::vector<StepMetrics> Trainer<T>::train(const Dataset& data, const StepCallback& on_step) {
  std::vector<StepMetrics> history;
  while (step_ < total_steps_) {
    history.push_back(train_step(data));
    if (on_step) on_step(history.back());
  }
  return history;
}

template <typename T>
void Trainer<T>::restore(std::uint64_t step, RngCursor epsilon, std::uint64_t optimizer_steps,
                         std::vector<MomentBuffers> moments) {
  step_ = step;
  eps_rng_ = Rng::from_cursor(epsilon);
  optimizer_.restore(optimizer_steps, std::move(moments));
}

template <typename T>
std::vector<int> predict(const Model<T>& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw ContractError("evaluate: empty dataset");
  check_compatible(model.config(), data);
  NoGradGuard no_grad;
  std::vector<int> out;
  out.reserve(data.size());
  std::vector<std::size_t> idx;
  for (std::size_t lo = 0; lo < data.size(); lo += batch_size) {
    const std::size_t hi = std::min(lo + batch_size, data.size());
    idx.resize(hi - lo);
    for (std::size_t i = lo; i < hi; ++i) idx[i - lo] = i;
    const auto fwd = model.forward(data.images<T>(idx), SampleMode::eval);
    const auto pred = row_argmax(fwd.logits);
    out.insert(out.end(), pred.begin(), pred.end());
  }
  return out;
}

template <typename T>
double evaluate(const Model<T>& model, const Dataset& data, std::size_t batch_size) {
  const auto pred = predict(model, data, batch_size);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == data.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

template <typename T>
std::uint64_t frozen_hash(const Model<T>& model) {
  std::string bytes;
  for (const auto& p : model.parameters()) {
    if (p.trainable) continue;
    const auto d = p.tensor.data();
    bytes.append(p.name);
    bytes.append(reinterpret_cast<const char*>(d.data()), d.size_bytes());
  }
  return fnv1a64(bytes);
}

void check_compatible(const ModelConfig& config, const Dataset& data) {
  if (data.height != config.image_size || data.width != config.image_size ||
      data.channels != config.channels) {
    throw ConfigError("dataset images are " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                      "x" + std::to_string(data.channels) + ", model expects " +
                      std::to_string(config.image_size) + "x" + std::to_string(config.image_size) + "x" +
                      std::to_string(config.channels));
  }
  if (data.num_classes != config.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.num_classes) + " classes, model.num_classes is " +
                      std::to_string(config.num_classes));
  }
}

void write_metrics_line(std::ostream& os, const StepMetrics& m, const std::string& split) {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["step"] = m.step;
  j["task_ce"] = m.loss.task_ce;
  j["kl"] = m.loss.kl;
  j["beta"] = m.loss.beta;
  j["total"] = m.loss.total;
  j["accuracy"] = m.accuracy;
  os << j.dump() << '\n';
}

void write_eval_line(std::ostream& os, const std::string& split, double accuracy, std::uint64_t step) {
  nlohmann::ordered_json j;
  j["split"] = split;
  j["step"] = step;
  j["accuracy"] = accuracy;
  os << j.dump() << '\n';
}

#define V2APT_INSTANTIATE_TRAINER(T)                                                       \
  template Loss<T> total_loss(const Tensor<T>&, std::span<const int>, const Tensor<T>&, double); \
  template class AdamW<T>;                                                                 \
  template class Trainer<T>;                                                               \
  template std::vector<int> predict(const Model<T>&, const Dataset&, std::size_t);         \
  template double evaluate(const Model<T>&, const Dataset&, std::size_t);                  \
  template std::uint64_t frozen_hash(const Model<T>&);

V2APT_INSTANTIATE_TRAINER(float)
V2APT_INSTANTIATE_TRAINER(double)

#undef V2APT_INSTANTIATE_TRAINER

}  // namespace v2apt
