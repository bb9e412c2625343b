// SPDX-License-Identifier: Apache-2.0
#include "v2apt/checkpoint.hpp"

#include <algorithm>

#include "v2apt/binary_io.hpp"

namespace v2apt {

namespace {

constexpr char kMagic[4] = {'V', '2', 'A', 'P'};

std::uint8_t dtype_tag(Precision p) { return p == Precision::f64 ? 2 : 1; }

}  // namespace

const TensorRecord* Checkpoint::find(const std::string& name) const {
  auto it = std::find_if(tensors.begin(), tensors.end(), [&](const auto& t) { return t.name == name; });
  return it == tensors.end() ? nullptr : &*it;
}

FreezeMask Checkpoint::freeze_mask() const {
  FreezeMask mask;
  for (const auto& t : tensors) {
    if (!t.trainable) mask.frozen.push_back(t.name);
  }
  return mask;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.raw(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  const auto text = ckpt.config.to_text();
  w.str(text);
  w.u64(fnv1a64(text));
  w.u64(ckpt.step);
  w.u64(ckpt.total_steps);

  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    if (shape_numel(t.shape) != t.values.size()) {
      throw ContractError("checkpoint tensor '" + t.name + "' does not match its shape");
    }
    w.str(t.name);
    w.u8(dtype_tag(t.dtype));
    w.u8(t.trainable ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) w.u64(e);
    if (t.dtype == Precision::f64) {
      for (double v : t.values) w.f64(v);
    } else {
      for (double v : t.values) w.f32(static_cast<float>(v));
    }
  }

  w.u64(ckpt.optimizer_steps);
  w.u32(static_cast<std::uint32_t>(ckpt.moments.size()));
  for (const auto& m : ckpt.moments) {
    w.str(m.name);
    w.u64(m.m.size());
    for (double v : m.m) w.f64(v);
    for (double v : m.v) w.f64(v);
  }

  w.u32(static_cast<std::uint32_t>(ckpt.cursors.size()));
  for (const auto& [name, c] : ckpt.cursors) {
    w.str(name);
    w.u64(c.key);
    w.u64(c.counter);
  }
  append_crc32(w);
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  {
    ByteReader header(bytes);
    const auto magic = header.raw(4, "magic");
    if (!std::equal(magic.begin(), magic.end(), kMagic)) {
      throw FormatError("magic", "checkpoint: bad magic (expected V2AP)");
    }
    const auto version = header.u32("version");
    if (version != kCheckpointVersion) {
      throw FormatError("version", "checkpoint: unsupported version " + std::to_string(version));
    }
  }
  const auto payload = check_crc32(bytes, "checkpoint");
  ByteReader r(payload);
  r.raw(8, "magic");
  Checkpoint ckpt;
  const auto text = r.str("config");
  const auto stored_hash = r.u64("config_hash");
  if (fnv1a64(text) != stored_hash) {
    throw FormatError("config_hash", "checkpoint: config hash does not match the stored config");
  }
  try {
    ckpt.config = RunConfig::from_text(text);
  } catch (const ConfigError& e) {
    throw FormatError("config", std::string("checkpoint: ") + e.what());
  }
  ckpt.step = r.u64("step");
  ckpt.total_steps = r.u64("total_steps");

  const auto n_tensors = r.u32("tensor_count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    TensorRecord t;
    t.name = r.str("tensor.name");
    const auto tag = r.u8("tensor.dtype");
    if (tag != 1 && tag != 2) throw FormatError("tensor.dtype", "checkpoint: unknown dtype tag");
    t.dtype = tag == 2 ? Precision::f64 : Precision::f32;
    t.trainable = r.u8("tensor.trainable") != 0;
    const auto rank = r.u32("tensor.rank");
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(r.u64("tensor.extent"));
    const auto n = shape_numel(t.shape);
    const std::size_t width = t.dtype == Precision::f64 ? 8 : 4;
    if (n > r.remaining() / width) throw FormatError("tensor.data", "checkpoint: truncated tensor data");
    t.values.resize(n);
    for (auto& v : t.values) v = t.dtype == Precision::f64 ? r.f64("tensor.data") : r.f32("tensor.data");
    ckpt.tensors.push_back(std::move(t));
  }

  ckpt.optimizer_steps = r.u64("optimizer_steps");
  const auto n_moments = r.u32("moment_count");
  for (std::uint32_t i = 0; i < n_moments; ++i) {
    MomentBuffers m;
    m.name = r.str("moment.name");
    const auto n = r.u64("moment.size");
    if (n > r.remaining() / 16) throw FormatError("moment.data", "checkpoint: truncated moment data");
    m.m.resize(n);
    m.v.resize(n);
    for (auto& v : m.m) v = r.f64("moment.data");
    for (auto& v : m.v) v = r.f64("moment.data");
    ckpt.moments.push_back(std::move(m));
  }

  const auto n_cursors = r.u32("cursor_count");
  for (std::uint32_t i = 0; i < n_cursors; ++i) {
    auto name = r.str("cursor.name");
    RngCursor c;
    c.key = r.u64("cursor.key");
    c.counter = r.u64("cursor.counter");
    ckpt.cursors.emplace_back(std::move(name), c);
  }
  if (r.remaining() != 0) throw FormatError("trailer", "checkpoint: unexpected bytes after cursors");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

template <typename T>
Checkpoint capture(const Model<T>& model, const RunConfig& config, const Trainer<T>* trainer) {
  if (config.model != model.config()) {
    throw ContractError("capture: run config does not describe this model");
  }
  Checkpoint ckpt;
  ckpt.config = config;
  constexpr Precision dtype = sizeof(T) == 8 ? Precision::f64 : Precision::f32;
  ckpt.config.train.precision = dtype;
  for (const auto& p : model.parameters()) {
    TensorRecord t;
    t.name = p.name;
    t.dtype = dtype;
    t.trainable = p.trainable;
    t.shape = p.tensor.shape();
    const auto d = p.tensor.data();
    t.values.assign(d.begin(), d.end());
    ckpt.tensors.push_back(std::move(t));
  }
  if (trainer) {
    ckpt.step = trainer->step();
    ckpt.total_steps = trainer->total_steps();
    ckpt.optimizer_steps = trainer->optimizer().steps();
    ckpt.moments = trainer->optimizer().moments();
    ckpt.cursors.emplace_back("epsilon", trainer->epsilon_cursor());
  }
  return ckpt;
}

template <typename T>
Model<T> restore_model(const Checkpoint& ckpt) {
  Model<T> model(ckpt.config.model, ckpt.config.train.seed);
  for (auto& p : model.parameters()) {
    const auto* rec = ckpt.find(p.name);
    if (!rec) throw FormatError("tensors", "checkpoint: missing tensor '" + p.name + "'");
    if (rec->shape != p.tensor.shape()) {
      throw FormatError("tensors", "checkpoint: tensor '" + p.name + "' has shape " + shape_str(rec->shape) +
                                       ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(rec->values[i]);
  }
  if (ckpt.tensors.size() != model.parameters().size()) {
    throw FormatError("tensors", "checkpoint: tensor count does not match the model");
  }
  model.apply_freeze_mask(ckpt.freeze_mask());
  return model;
}

template <typename T>
void restore_trainer(Trainer<T>& trainer, const Checkpoint& ckpt) {
  RngCursor eps = Rng(ckpt.config.train.seed).split("epsilon").cursor();
  for (const auto& [name, c] : ckpt.cursors) {
    if (name == "epsilon") eps = c;
  }
  trainer.restore(ckpt.step, eps, ckpt.optimizer_steps, ckpt.moments);
}

#define V2APT_INSTANTIATE_CKPT(T)                                                     \
  template Checkpoint capture(const Model<T>&, const RunConfig&, const Trainer<T>*); \
  template Model<T> restore_model(const Checkpoint&);                                \
  template void restore_trainer(Trainer<T>&, const Checkpoint&);

V2APT_INSTANTIATE_CKPT(float)
V2APT_INSTANTIATE_CKPT(double)

#undef V2APT_INSTANTIATE_CKPT

}  // namespace v2apt
