// SPDX-License-Identifier: Apache-2.0
#include "v2apt/workflow.hpp"

#include <ostream>

namespace v2apt {

Method parse_method(std::string_view name) {
  if (name == "vpt") return Method::vpt;
  if (name == "v2apt") return Method::v2apt;
  if (name == "head") return Method::head;
  throw ConfigError("unknown method '" + std::string(name) + "' (valid methods: vpt, v2apt, head)");
}

std::string_view method_name(Method m) {
  switch (m) {
    case Method::vpt: return "vpt";
    case Method::v2apt: return "v2apt";
    case Method::head: return "head";
  }
  return "?";
}

ModelConfig method_config(ModelConfig config, Method method) {
  if (method == Method::vpt) config.instance_tokens = 0;
  if (method == Method::head) {
    config.prompt_tokens = 0;
    config.instance_tokens = 0;
  }
  config.validate();
  return config;
}

ModelConfig pretrain_config(ModelConfig config) { return method_config(std::move(config), Method::head); }

void check_backbone_compatible(const ModelConfig& backbone, const ModelConfig& target) {
  auto check = [](const char* key, std::size_t a, std::size_t b) {
    if (a != b) {
      throw ConfigError(std::string("backbone mismatch: ") + key + " is " + std::to_string(a) +
                        " in the checkpoint but " + std::to_string(b) + " in the config");
    }
  };
  check("model.layers", backbone.layers, target.layers);
  check("model.dim", backbone.dim, target.dim);
  check("model.heads", backbone.heads, target.heads);
  check("model.mlp_ratio", backbone.mlp_ratio, target.mlp_ratio);
  check("model.patch_size", backbone.patch_size, target.patch_size);
  check("model.image_size", backbone.image_size, target.image_size);
  check("model.channels", backbone.channels, target.channels);
}

namespace {

template <typename T>
RunOutcome run(const RunConfig& config, Model<T>& model, std::uint64_t total_steps, const Dataset& train,
               const Dataset* test, const RunOptions& options) {
  Trainer<T> trainer(model, config.train, total_steps);
  if (options.resume) {
    if (options.resume->config != config) {
      throw ConfigError("resume checkpoint was written with a different config");
    }
    restore_trainer(trainer, *options.resume);
  }
  RunOutcome outcome;
  outcome.frozen_hash_before = frozen_hash(model);
  const std::uint64_t stop = std::min(total_steps, options.stop_at.value_or(total_steps));
  while (trainer.step() < stop) {
    outcome.history.push_back(trainer.train_step(train));
    if (options.metrics) write_metrics_line(*options.metrics, outcome.history.back());
  }
  outcome.frozen_hash_after = frozen_hash(model);
  outcome.train_accuracy = evaluate(model, train);
  if (options.metrics) write_eval_line(*options.metrics, "train", outcome.train_accuracy, trainer.step());
  if (test) {
    outcome.test_accuracy = evaluate(model, *test);
    if (options.metrics) write_eval_line(*options.metrics, "test", *outcome.test_accuracy, trainer.step());
  }
  outcome.checkpoint = capture(model, config, &trainer);
  return outcome;
}

}  // namespace

template <typename T>
RunOutcome run_pretrain(const RunConfig& config, const Dataset& train, const Dataset* test,
                        const RunOptions& options) {
  RunConfig cfg = config;
  cfg.model = pretrain_config(config.model);
  cfg.validate();
  check_compatible(cfg.model, train);
  auto model = options.resume ? restore_model<T>(*options.resume) : Model<T>(cfg.model, cfg.train.seed);
  return run(cfg, model, cfg.train.pretrain_steps, train, test, options);
}

template <typename T>
RunOutcome run_tune(const RunConfig& config, const Checkpoint& backbone, Method method,
                    const Dataset& train, const Dataset* test, const RunOptions& options) {
  RunConfig cfg = config;
  cfg.model = method_config(config.model, method);
  cfg.validate();
  check_backbone_compatible(backbone.config.model, cfg.model);
  check_compatible(cfg.model, train);
  if (options.resume) {
    auto model = restore_model<T>(*options.resume);
    return run(cfg, model, cfg.train.tune_steps, train, test, options);
  }
  Model<T> model(cfg.model, cfg.train.seed);
  for (auto& p : model.parameters()) {
    if (p.name.rfind("backbone.", 0) != 0) continue;
    const auto* rec = backbone.find(p.name);
    if (!rec) throw FormatError("tensors", "backbone checkpoint lacks '" + p.name + "'");
    if (rec->shape != p.tensor.shape()) {
      throw ConfigError("backbone tensor '" + p.name + "' has shape " + shape_str(rec->shape) +
                        ", expected " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec->values[i]);
  }
  model.freeze();
  return run(cfg, model, cfg.train.tune_steps, train, test, options);
}

CheckReport gradcheck_model(const ModelConfig& config, const ModelCheckOptions& options) {
  Model<double> model(config, options.seed);
  if (options.freeze) model.freeze();
  const std::size_t s = config.image_size, b = options.batch;
  Rng data_rng = Rng(options.seed).split("gradcheck_data");
  std::vector<double> pixels(b * s * s * config.channels);
  for (auto& v : pixels) v = data_rng.uniform();
  const Tensor<double> images({b, s, s, config.channels}, std::move(pixels));
  std::vector<int> labels(b);
  for (auto& l : labels) l = static_cast<int>(data_rng.below(config.num_classes));
  const RngCursor eps_start = Rng(options.seed).split("gradcheck_eps").cursor();

  auto objective = [&]() {
    Rng eps = Rng::from_cursor(eps_start);
    const auto out = model.forward(images, SampleMode::train, &eps);
    return total_loss(out.logits, labels, out.kl, options.beta).total;
  };
  std::vector<NamedTensor> params;
  for (const auto& p : model.parameters()) {
    if (p.trainable && p.tensor.numel() > 0) params.push_back({p.name, p.tensor});
  }
  return finite_diff_check(objective, std::move(params), options.eps, options.tol);
}

template RunOutcome run_pretrain<float>(const RunConfig&, const Dataset&, const Dataset*, const RunOptions&);
template RunOutcome run_pretrain<double>(const RunConfig&, const Dataset&, const Dataset*, const RunOptions&);
template RunOutcome run_tune<float>(const RunConfig&, const Checkpoint&, Method, const Dataset&, const Dataset*,
                                    const RunOptions&);
template RunOutcome run_tune<double>(const RunConfig&, const Checkpoint&, Method, const Dataset&,
                                     const Dataset*, const RunOptions&);

}  // namespace v2apt
