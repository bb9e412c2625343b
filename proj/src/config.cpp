// SPDX-License-Identifier: Apache-2.0
#include "v2apt/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "v2apt/errors.hpp"
#include "v2apt/rng.hpp"

namespace v2apt {

std::size_t ModelConfig::num_patches() const {
  const std::size_t side = image_size / patch_size;
  return side * side;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (layers == 0) fail("model.layers must be positive");
  if (dim == 0 || heads == 0) fail("model.dim and model.heads must be positive");
  if (dim % heads != 0) fail("model.dim must be divisible by model.heads");
  if (mlp_ratio == 0) fail("model.mlp_ratio must be positive");
  if (patch_size == 0 || image_size == 0) fail("model.patch_size and model.image_size must be positive");
  if (image_size % patch_size != 0) {
    fail("model.image_size " + std::to_string(image_size) + " is not divisible by model.patch_size " +
         std::to_string(patch_size));
  }
  if (channels == 0) fail("model.channels must be positive");
  if (num_classes < 2) fail("model.num_classes must be at least 2");
  if (instance_tokens > prompt_tokens) {
    fail("prompt budget violated: model.instance_tokens " + std::to_string(instance_tokens) +
         " exceeds model.prompt_tokens " + std::to_string(prompt_tokens));
  }
  if (uses_vae() && (latent_dim == 0 || vae_hidden == 0)) {
    fail("model.latent_dim and model.vae_hidden must be positive when instance tokens are used");
  }
  if (vae_input != "mean_pool") fail("model.vae_input: unsupported value '" + vae_input + "'");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (!(lr > 0.0)) fail("train.lr must be positive");
  if (!(weight_decay >= 0.0)) fail("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    fail("train.beta1/beta2 must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) fail("train.adam_eps must be positive");
  if (batch_size == 0) fail("train.batch_size must be positive");
  if (!(kl_beta >= 0.0)) fail("train.kl_beta must be non-negative");
  if (!(kl_warmup_frac >= 0.0 && kl_warmup_frac <= 1.0)) fail("train.kl_warmup_frac must lie in [0, 1]");
  if (!(train_frac > 0.0 && train_frac < 1.0)) fail("train.train_frac must lie in (0, 1)");
}

std::string_view precision_name(Precision p) { return p == Precision::f64 ? "f64" : "f32"; }

namespace {

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename N>
N parse_number(const std::string& key, std::string_view text) {
  N value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + key + "': cannot parse value '" + std::string(text) + "'");
  }
  return value;
}

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string& key, std::string_view)> set;
};

template <typename N, typename Member>
Field number_field(Member member) {
  return Field{
      [member](const RunConfig& c) {
        if constexpr (std::is_floating_point_v<N>) {
          return format_double(std::invoke(member, c));
        } else {
          return std::to_string(std::invoke(member, c));
        }
      },
      [member](RunConfig& c, const std::string& key, std::string_view v) {
        std::invoke(member, c) = parse_number<N>(key, v);
      }};
}

#define V2APT_SIZE(path) number_field<std::size_t>([](auto& c) -> auto& { return c.path; })
#define V2APT_U64(path) number_field<std::uint64_t>([](auto& c) -> auto& { return c.path; })
#define V2APT_DOUBLE(path) number_field<double>([](auto& c) -> auto& { return c.path; })

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"model.layers", V2APT_SIZE(model.layers)},
      {"model.dim", V2APT_SIZE(model.dim)},
      {"model.heads", V2APT_SIZE(model.heads)},
      {"model.mlp_ratio", V2APT_SIZE(model.mlp_ratio)},
      {"model.patch_size", V2APT_SIZE(model.patch_size)},
      {"model.image_size", V2APT_SIZE(model.image_size)},
      {"model.channels", V2APT_SIZE(model.channels)},
      {"model.num_classes", V2APT_SIZE(model.num_classes)},
      {"model.prompt_tokens", V2APT_SIZE(model.prompt_tokens)},
      {"model.instance_tokens", V2APT_SIZE(model.instance_tokens)},
      {"model.latent_dim", V2APT_SIZE(model.latent_dim)},
      {"model.vae_hidden", V2APT_SIZE(model.vae_hidden)},
      {"model.vae_input",
       Field{[](const RunConfig& c) { return c.model.vae_input; },
             [](RunConfig& c, const std::string&, std::string_view v) { c.model.vae_input = std::string(v); }}},
      {"train.lr", V2APT_DOUBLE(train.lr)},
      {"train.weight_decay", V2APT_DOUBLE(train.weight_decay)},
      {"train.beta1", V2APT_DOUBLE(train.beta1)},
      {"train.beta2", V2APT_DOUBLE(train.beta2)},
      {"train.adam_eps", V2APT_DOUBLE(train.adam_eps)},
      {"train.batch_size", V2APT_SIZE(train.batch_size)},
      {"train.kl_beta", V2APT_DOUBLE(train.kl_beta)},
      {"train.kl_warmup_frac", V2APT_DOUBLE(train.kl_warmup_frac)},
      {"train.pretrain_steps", V2APT_SIZE(train.pretrain_steps)},
      {"train.tune_steps", V2APT_SIZE(train.tune_steps)},
      {"train.train_frac", V2APT_DOUBLE(train.train_frac)},
      {"train.seed", V2APT_U64(train.seed)},
      {"train.split_seed", V2APT_U64(train.split_seed)},
      {"train.precision",
       Field{[](const RunConfig& c) { return std::string(precision_name(c.train.precision)); },
             [](RunConfig& c, const std::string& key, std::string_view v) {
               if (v == "f32") {
                 c.train.precision = Precision::f32;
               } else if (v == "f64") {
                 c.train.precision = Precision::f64;
               } else {
                 throw ConfigError("config key '" + key + "': expected f32 or f64, got '" +
                                   std::string(v) + "'");
               }
             }}},
  };
  return table;
}

#undef V2APT_SIZE
#undef V2APT_U64
#undef V2APT_DOUBLE

std::string_view trim(std::string_view s) {
  const auto ws = " \t\r";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [key, field] : fields()) {
    out += key;
    out += " = ";
    out += field.get(*this);
    out += '\n';
  }
  return out;
}

RunConfig RunConfig::from_text(std::string_view text) {
  RunConfig config;
  std::map<std::string, bool> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    const std::string key(trim(line.substr(0, eq)));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = fields().find(key);
    if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
    if (seen[key]) throw ConfigError("duplicate config key '" + key + "'");
    seen[key] = true;
    it->second.set(config, key, value);
  }
  config.validate();
  return config;
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_text(ss.str());
}

void RunConfig::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write config file '" + path + "'");
  out << to_text();
  if (!out) throw IoError("failed writing config file '" + path + "'");
}

std::uint64_t RunConfig::hash() const { return fnv1a64(to_text()); }

RunConfig tiny_config() {
  RunConfig c;
  c.model.layers = 2;
  c.model.dim = 16;
  c.model.heads = 2;
  c.model.mlp_ratio = 2;
  c.model.patch_size = 4;
  c.model.image_size = 8;
  c.model.channels = 3;
  c.model.num_classes = 3;
  c.model.prompt_tokens = 4;
  c.model.instance_tokens = 2;
  c.model.latent_dim = 4;
  c.model.vae_hidden = 8;
  c.train.batch_size = 4;
  c.train.precision = Precision::f64;
  return c;
}

}  // namespace v2apt
