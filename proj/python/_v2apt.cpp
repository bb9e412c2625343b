// SPDX-License-Identifier: Apache-2.0
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "v2apt/analysis.hpp"
#include "v2apt/workflow.hpp"

namespace py = pybind11;
using namespace v2apt;

namespace {

template <typename Fn>
auto with_precision(Precision p, Fn&& fn) {
  if (p == Precision::f64) return fn(double{});
  return fn(float{});
}

py::dict outcome_dict(RunOutcome outcome) {
  py::list losses;
  for (const auto& m : outcome.history) losses.append(m.loss.total);
  py::dict d;
  d["checkpoint"] = std::move(outcome.checkpoint);
  d["losses"] = losses;
  d["train_accuracy"] = outcome.train_accuracy;
  d["test_accuracy"] = outcome.test_accuracy ? py::cast(*outcome.test_accuracy) : py::none();
  d["frozen_unchanged"] = outcome.frozen_hash_before == outcome.frozen_hash_after;
  return d;
}

RunOptions options(std::optional<std::uint64_t> stop_at, const Checkpoint* resume) {
  RunOptions o;
  o.stop_at = stop_at;
  o.resume = resume;
  return o;
}

}  // namespace

PYBIND11_MODULE(_v2apt, m) {
  m.doc() = "Variational instance-adaptive prompt tuning on a frozen mini-ViT";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<ShapeError>(m, "ShapeError", base);
  py::register_exception<ConfigError>(m, "ConfigError", base);
  py::register_exception<ContractError>(m, "ContractError", base);
  py::register_exception<NumericError>(m, "NumericError", base);
  py::register_exception<IoError>(m, "IoError", base);
  py::register_exception<FormatError>(m, "FormatError", base);

  py::class_<RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("from_text", &RunConfig::from_text)
      .def_static("load", &RunConfig::load)
      .def_static("tiny", &tiny_config)
      .def("to_text", &RunConfig::to_text)
      .def("save", &RunConfig::save)
      .def("hash", &RunConfig::hash)
      .def("__eq__", [](const RunConfig& a, const RunConfig& b) { return a == b; })
      .def("__repr__", [](const RunConfig& c) { return "RunConfig(\n" + c.to_text() + ")"; });

  py::class_<Dataset>(m, "Dataset")
      .def_static("load", &load_dataset)
      .def("save", [](const Dataset& d, const std::string& path) { save_dataset(d, path); })
      .def("__len__", &Dataset::size)
      .def_readonly("num_classes", &Dataset::num_classes)
      .def_readonly("height", &Dataset::height)
      .def_readonly("width", &Dataset::width)
      .def_readonly("channels", &Dataset::channels)
      .def_readonly("labels", &Dataset::labels)
      .def("image", [](const Dataset& d, std::size_t i) {
        if (i >= d.size()) throw py::index_error("image index out of range");
        const auto img = d.image(i);
        return std::vector<float>(img.begin(), img.end());
      })
      .def("to_bytes", [](const Dataset& d) {
        const auto b = encode_dataset(d);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      })
      .def_static("from_bytes", [](const py::bytes& b) {
        const std::string s = b;
        return decode_dataset(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
      })
      .def("__eq__", [](const Dataset& a, const Dataset& b) { return a == b; });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_static("load", &load_checkpoint)
      .def("save", [](const Checkpoint& c, const std::string& path) { save_checkpoint(c, path); })
      .def_readonly("config", &Checkpoint::config)
      .def_readonly("step", &Checkpoint::step)
      .def_readonly("total_steps", &Checkpoint::total_steps)
      .def("tensor_names", [](const Checkpoint& c) {
        std::vector<std::string> names;
        for (const auto& t : c.tensors) names.push_back(t.name);
        return names;
      })
      .def("tensor", [](const Checkpoint& c, const std::string& name) {
        const auto* t = c.find(name);
        if (!t) throw py::key_error(name);
        return py::make_tuple(t->shape, t->values, t->trainable);
      })
      .def("to_bytes", [](const Checkpoint& c) {
        const auto b = encode_checkpoint(c);
        return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
      })
      .def_static("from_bytes", [](const py::bytes& b) {
        const std::string s = b;
        return decode_checkpoint(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
      });

  m.def("presets", &preset_names);
  m.def("generate", [](const std::string& name, std::uint64_t seed) { return generate(preset(name), seed); },
        py::arg("preset"), py::arg("seed") = 0);
  m.def("split", &split, py::arg("dataset"), py::arg("train_frac") = 0.8, py::arg("seed") = 0);

  m.def(
      "pretrain",
      [](const RunConfig& cfg, const Dataset& train, const Dataset* test, std::optional<std::uint64_t> stop_at,
         const Checkpoint* resume) {
        py::gil_scoped_release release;
        auto out = with_precision(cfg.train.precision, [&](auto tag) {
          return run_pretrain<decltype(tag)>(cfg, train, test, options(stop_at, resume));
        });
        py::gil_scoped_acquire acquire;
        return outcome_dict(std::move(out));
      },
      py::arg("config"), py::arg("train"), py::arg("test") = nullptr, py::arg("stop_at") = py::none(),
      py::arg("resume") = nullptr);

  m.def(
      "tune",
      [](const RunConfig& cfg, const Checkpoint& backbone, const std::string& method, const Dataset& train,
         const Dataset* test, std::optional<std::uint64_t> stop_at, const Checkpoint* resume) {
        const auto mth = parse_method(method);
        py::gil_scoped_release release;
        auto out = with_precision(cfg.train.precision, [&](auto tag) {
          return run_tune<decltype(tag)>(cfg, backbone, mth, train, test, options(stop_at, resume));
        });
        py::gil_scoped_acquire acquire;
        return outcome_dict(std::move(out));
      },
      py::arg("config"), py::arg("backbone"), py::arg("method"), py::arg("train"), py::arg("test") = nullptr,
      py::arg("stop_at") = py::none(), py::arg("resume") = nullptr);

  m.def("evaluate", [](const Checkpoint& ckpt, const Dataset& data) {
    return with_precision(ckpt.config.train.precision,
                          [&](auto tag) { return evaluate(restore_model<decltype(tag)>(ckpt), data); });
  });

  m.def(
      "gradcheck",
      [](const RunConfig& cfg, double tol, std::uint64_t seed) {
        ModelCheckOptions o;
        o.tol = tol;
        o.seed = seed;
        const auto report = gradcheck_model(cfg.model, o);
        py::dict d;
        d["passed"] = report.passed();
        d["params"] = report.params.size();
        d["worst_rel_error"] = report.worst_rel_error();
        d["summary"] = report.summary();
        return d;
      },
      py::arg("config") = tiny_config(), py::arg("tol") = 1e-4, py::arg("seed") = 0);

  m.def(
      "kl_divergence",
      [](const std::vector<double>& mu, const std::vector<double>& logvar) {
        if (mu.size() != logvar.size()) throw ShapeError("kl_divergence: mu and logvar lengths differ");
        const LatentDistribution<double> d{Tensor<double>({mu.size()}, mu), Tensor<double>({logvar.size()}, logvar)};
        return kl_divergence(d).item();
      },
      py::arg("mu"), py::arg("logvar"));

  m.def(
      "similarity_maps",
      [](const Checkpoint& ckpt, const Dataset& data, std::size_t index) {
        const auto maps = with_precision(ckpt.config.train.precision, [&](auto tag) {
          return layer_similarity_maps(restore_model<decltype(tag)>(ckpt), data, index);
        });
        std::vector<std::vector<std::vector<double>>> out;
        for (const auto& map : maps) {
          auto& rows = out.emplace_back();
          for (std::size_t i = 0; i < map.rows; ++i) {
            rows.emplace_back(map.values.begin() + i * map.cols, map.values.begin() + (i + 1) * map.cols);
          }
        }
        return out;
      },
      py::arg("checkpoint"), py::arg("data"), py::arg("index") = 0);

  m.def("latent_stats", [](const Checkpoint& ckpt, const Dataset& data) {
    const auto s = with_precision(ckpt.config.train.precision,
                                  [&](auto tag) { return latent_stats(restore_model<decltype(tag)>(ckpt), data); });
    py::dict d;
    d["mu_mean"] = s.mu_mean;
    d["mu_variance"] = s.mu_variance;
    d["mean_kl"] = s.mean_kl;
    d["active_dims"] = s.active_dims;
    d["samples"] = s.samples;
    return d;
  });
}
