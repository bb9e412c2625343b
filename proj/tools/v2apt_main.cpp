// SPDX-License-Identifier: Apache-2.0
// Command-line driver: data generation, pretraining, prompt tuning,
// evaluation, gradient checking and similarity-map analysis.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "v2apt/analysis.hpp"
#include "v2apt/workflow.hpp"

namespace {

using namespace v2apt;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

struct Split {
  Dataset train;
  Dataset test;
};

Split split_for(const Dataset& ds, const RunConfig& cfg) {
  auto [train, test] = split(ds, cfg.train.train_frac, cfg.train.split_seed);
  return {std::move(train), std::move(test)};
}

const Dataset& pick_split(const std::string& which, const Dataset& all, const Split& s) {
  if (which == "train") return s.train;
  if (which == "test") return s.test;
  if (which == "all") return all;
  throw ConfigError("unknown split '" + which + "' (valid: train, test, all)");
}

std::unique_ptr<std::ofstream> open_metrics(const std::string& path) {
  if (path.empty()) return nullptr;
  auto out = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*out) throw IoError("cannot open metrics file '" + path + "' for writing");
  return out;
}

void report(const RunOutcome& outcome) {
  std::printf("steps %llu\n", static_cast<unsigned long long>(outcome.checkpoint.step));
  if (!outcome.history.empty()) {
    const auto& last = outcome.history.back().loss;
    std::printf("final task_ce %.9g kl %.9g total %.9g\n", last.task_ce, last.kl, last.total);
  }
  std::printf("train accuracy %.6f\n", outcome.train_accuracy);
  if (outcome.test_accuracy) std::printf("test accuracy %.6f\n", *outcome.test_accuracy);
  std::printf("frozen hash %016llx -> %016llx\n", static_cast<unsigned long long>(outcome.frozen_hash_before),
              static_cast<unsigned long long>(outcome.frozen_hash_after));
}

template <typename T>
RunOutcome dispatch_pretrain(const RunConfig& cfg, const Split& s, const RunOptions& opt) {
  return run_pretrain<T>(cfg, s.train, &s.test, opt);
}

template <typename T>
RunOutcome dispatch_tune(const RunConfig& cfg, const Checkpoint& bb, Method m, const Split& s,
                         const RunOptions& opt) {
  return run_tune<T>(cfg, bb, m, s.train, &s.test, opt);
}

template <typename Fn>
auto with_precision(Precision p, Fn&& fn) {
  if (p == Precision::f64) return fn(double{});
  return fn(float{});
}

struct Options {
  std::string preset, out, config, data, backbone, method = "v2apt", ckpt, metrics, resume, format = "csv",
      split = "test", with_ckpt, without_ckpt;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> stop_at;
  std::size_t index = 0, count = 16;
  std::optional<std::size_t> layer;  // defaults to the final layer
  double tol = 1e-4;
};

int cmd_gen_data(const Options& o) {
  const auto spec = preset(o.preset);
  const auto ds = generate(spec, o.seed);
  save_dataset(ds, o.out);
  std::printf("wrote %zu samples (%zu classes) to %s\n", ds.size(), ds.num_classes, o.out.c_str());
  return kExitOk;
}

int cmd_pretrain(const Options& o) {
  const auto cfg = RunConfig::load(o.config);
  const auto ds = load_dataset(o.data);
  const auto s = split_for(ds, cfg);
  auto metrics = open_metrics(o.metrics);
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) resume = load_checkpoint(o.resume);
  RunOptions opt{o.stop_at, resume ? &*resume : nullptr, metrics.get()};
  const auto outcome = with_precision(cfg.train.precision, [&](auto tag) {
    return dispatch_pretrain<decltype(tag)>(cfg, s, opt);
  });
  save_checkpoint(outcome.checkpoint, o.out);
  report(outcome);
  return kExitOk;
}

int cmd_tune(const Options& o) {
  const auto cfg = RunConfig::load(o.config);
  const auto method = parse_method(o.method);
  const auto backbone = load_checkpoint(o.backbone);
  const auto ds = load_dataset(o.data);
  const auto s = split_for(ds, cfg);
  auto metrics = open_metrics(o.metrics);
  std::optional<Checkpoint> resume;
  if (!o.resume.empty()) resume = load_checkpoint(o.resume);
  RunOptions opt{o.stop_at, resume ? &*resume : nullptr, metrics.get()};
  const auto outcome = with_precision(cfg.train.precision, [&](auto tag) {
    return dispatch_tune<decltype(tag)>(cfg, backbone, method, s, opt);
  });
  save_checkpoint(outcome.checkpoint, o.out);
  std::printf("method %s\n", std::string(method_name(method)).c_str());
  report(outcome);
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const auto ckpt = load_checkpoint(o.ckpt);
  const auto ds = load_dataset(o.data);
  const auto s = split_for(ds, ckpt.config);
  const auto& data = pick_split(o.split, ds, s);
  const double acc = with_precision(ckpt.config.train.precision, [&](auto tag) {
    using T = decltype(tag);
    return evaluate(restore_model<T>(ckpt), data);
  });
  std::printf("accuracy %.6f (%s split, %zu samples)\n", acc, o.split.c_str(), data.size());
  return kExitOk;
}

int cmd_gradcheck(const Options& o) {
  const auto cfg = o.config.empty() ? tiny_config() : RunConfig::load(o.config);
  ModelCheckOptions opt;
  opt.tol = o.tol;
  opt.seed = o.seed;
  const auto start = std::chrono::steady_clock::now();
  const auto report = gradcheck_model(cfg.model, opt);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  for (const auto& p : report.params) {
    std::printf("%-44s %6zu  rel %.3e  %s\n", p.name.c_str(), p.elements, p.max_rel_error,
                p.passed ? "ok" : "FAIL");
  }
  std::printf("%s\n(%.1f s)\n", report.summary().c_str(), secs);
  return report.passed() ? kExitOk : kExitNumeric;
}

std::size_t resolve_layer(const Options& o, const ModelConfig& model) {
  const std::size_t layer = o.layer.value_or(model.layers - 1);
  if (layer >= model.layers) {
    throw ConfigError("--layer " + std::to_string(layer) + " out of range for " + std::to_string(model.layers) +
                      " layers");
  }
  return layer;
}

int cmd_simmap(const Options& o) {
  const auto ckpt = load_checkpoint(o.ckpt);
  const auto ds = load_dataset(o.data);
  const auto s = split_for(ds, ckpt.config);
  const auto& data = pick_split(o.split, ds, s);
  const auto format = parse_map_format(o.format);
  const std::size_t layer = resolve_layer(o, ckpt.config.model);
  auto map = with_precision(ckpt.config.train.precision, [&](auto tag) {
    using T = decltype(tag);
    return layer_similarity_maps(restore_model<T>(ckpt), data, o.index)[layer];
  });
  map.checkpoint_id = o.ckpt;
  export_map(map, o.out, format);
  std::printf("layer %zu input %zu: %zux%zu map, mean similarity %.9g -> %s\n", map.layer, map.input_index,
              map.rows, map.cols, mean_similarity(map), o.out.c_str());
  return kExitOk;
}

int cmd_latent_stats(const Options& o) {
  const auto ckpt = load_checkpoint(o.ckpt);
  const auto ds = load_dataset(o.data);
  const auto s = split_for(ds, ckpt.config);
  const auto& data = pick_split(o.split, ds, s);
  const auto stats = with_precision(ckpt.config.train.precision, [&](auto tag) {
    using T = decltype(tag);
    return latent_stats(restore_model<T>(ckpt), data);
  });
  nlohmann::ordered_json j;
  j["samples"] = stats.samples;
  j["mean_kl"] = stats.mean_kl;
  j["active_dims"] = stats.active_dims;
  j["mu_mean"] = stats.mu_mean;
  j["mu_variance"] = stats.mu_variance;
  std::cout << j.dump() << '\n';
  return kExitOk;
}

int cmd_simmap_compare(const Options& o) {
  const auto with = load_checkpoint(o.with_ckpt);
  const auto without = load_checkpoint(o.without_ckpt);
  if (with.config.train.precision != without.config.train.precision) {
    throw ConfigError("checkpoints use different precisions");
  }
  const auto ds = load_dataset(o.data);
  const auto s = split_for(ds, with.config);
  const auto& data = pick_split(o.split, ds, s);
  const auto cmp = with_precision(with.config.train.precision, [&](auto tag) {
    using T = decltype(tag);
    return compare_similarity(restore_model<T>(with), restore_model<T>(without), data,
                              resolve_layer(o, with.config.model), o.count);
  });
  std::printf("layer %zu over %zu inputs\n", cmp.layer, cmp.inputs);
  std::printf("mean similarity with VAE    %.9g\n", cmp.with_vae);
  std::printf("mean similarity without VAE %.9g\n", cmp.without_vae);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"V2APT: VAE-generated instance prompts for frozen vision transformers"};
  app.require_subcommand(1);
  Options o;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset file");
  gen->add_option("--preset", o.preset, "Task preset")->required();
  gen->add_option("--seed", o.seed, "Generator seed");
  gen->add_option("--out", o.out, "Output V2DS file")->required();

  auto* pre = app.add_subcommand("pretrain", "Train the backbone and head on a source task");
  pre->add_option("--config", o.config, "Run config file")->required();
  pre->add_option("--data", o.data, "V2DS dataset")->required();
  pre->add_option("--out", o.out, "Output checkpoint")->required();
  pre->add_option("--metrics", o.metrics, "JSON-lines metrics file");
  pre->add_option("--stop-at", o.stop_at, "Stop after this many steps");
  pre->add_option("--resume", o.resume, "Resume from checkpoint");

  auto* tune = app.add_subcommand("tune", "Freeze a pretrained backbone and tune prompts + head");
  tune->add_option("--config", o.config, "Run config file")->required();
  tune->add_option("--backbone-ckpt", o.backbone, "Pretrained checkpoint")->required();
  tune->add_option("--data", o.data, "V2DS dataset")->required();
  tune->add_option("--method", o.method, "vpt, v2apt or head");
  tune->add_option("--out", o.out, "Output checkpoint")->required();
  tune->add_option("--metrics", o.metrics, "JSON-lines metrics file");
  tune->add_option("--stop-at", o.stop_at, "Stop after this many steps");
  tune->add_option("--resume", o.resume, "Resume from checkpoint");

  auto* ev = app.add_subcommand("eval", "Eval-mode accuracy of a checkpoint");
  ev->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  ev->add_option("--data", o.data, "V2DS dataset")->required();
  ev->add_option("--split", o.split, "train, test or all");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model in 64-bit");
  gc->add_option("--config", o.config, "Run config file (default: tiny config)");
  gc->add_option("--tol", o.tol, "Relative error tolerance");
  gc->add_option("--seed", o.seed, "Seed for parameters and inputs");

  auto* sm = app.add_subcommand("simmap", "Export a prompt/patch cosine-similarity map");
  sm->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  sm->add_option("--data", o.data, "V2DS dataset")->required();
  sm->add_option("--index", o.index, "Input index within the split");
  sm->add_option("--layer", o.layer, "Encoder layer, 0-based (default: last)");
  sm->add_option("--out", o.out, "Output file")->required();
  sm->add_option("--format", o.format, "csv or pgm");
  sm->add_option("--split", o.split, "train, test or all");

  auto* ls = app.add_subcommand("latent-stats", "Encoder mean statistics over a dataset");
  ls->add_option("--ckpt", o.ckpt, "Checkpoint")->required();
  ls->add_option("--data", o.data, "V2DS dataset")->required();
  ls->add_option("--split", o.split, "train, test or all");

  auto* cmp = app.add_subcommand("simmap-compare", "Mean similarity with vs without instance prompts");
  cmp->add_option("--with", o.with_ckpt, "Checkpoint with instance prompts")->required();
  cmp->add_option("--without", o.without_ckpt, "Checkpoint without instance prompts")->required();
  cmp->add_option("--data", o.data, "V2DS dataset")->required();
  cmp->add_option("--layer", o.layer, "Encoder layer, 0-based (default: last)");
  cmp->add_option("--count", o.count, "Number of inputs");
  cmp->add_option("--split", o.split, "train, test or all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(o);
    if (*pre) return cmd_pretrain(o);
    if (*tune) return cmd_tune(o);
    if (*ev) return cmd_eval(o);
    if (*gc) return cmd_gradcheck(o);
    if (*sm) return cmd_simmap(o);
    if (*ls) return cmd_latent_stats(o);
    if (*cmp) return cmd_simmap_compare(o);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s [field: %s]\n", e.what(), e.field().c_str());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitNumeric;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
