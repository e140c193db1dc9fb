#pragma once

#include <filesystem>
#include <istream>
#include <ostream>
#include <string>

#include "mtlforge/arch/model.hpp"
#include "mtlforge/io.hpp"

namespace mtl {

inline constexpr char kCheckpointMagic[] = "MTLCKPT\n";
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, version, config as key/value strings, then every parameter
// and buffer as (kind, name, rank, dims, f64 values). Little-endian.

inline void write_checkpoint(std::ostream& os, const Model& model) {
  os.write(kCheckpointMagic, 8);
  io::put_u32(os, kCheckpointVersion);
  const auto kv = model.config().to_kv();
  io::put_u64(os, kv.size());
  for (const auto& [k, v] : kv) {
    io::put_string(os, k);
    io::put_string(os, v);
  }
  io::put_u64(os, model.parameters().size() + model.buffers().size());
  auto put_tensor = [&](std::uint8_t kind, const std::string& name, const Tensor& t) {
    io::put_u8(os, kind);
    io::put_string(os, name);
    io::put_u64(os, t.rank());
    for (auto d : t.shape()) io::put_u64(os, d);
    for (double v : t.data()) io::put_f64(os, v);
  };
  for (const auto& p : model.parameters()) put_tensor(0, p.name, p.value);
  for (const auto& b : model.buffers()) put_tensor(1, b.name, b.value);
}

inline Model read_checkpoint(std::istream& is, const std::string& what = "checkpoint") {
  io::Reader r(is, what);
  r.expect_magic(kCheckpointMagic);
  if (const auto v = r.u32(); v != kCheckpointVersion) r.fail("unsupported version " + std::to_string(v));
  std::map<std::string, std::string> kv;
  for (auto n = r.count(1024); n > 0; --n) {
    auto k = r.string();
    kv[k] = r.string();
  }
  Model model(ModelConfig::from_kv(kv));
  const auto n = r.count();
  if (n != model.parameters().size() + model.buffers().size()) r.fail("tensor count does not match the model");
  for (std::size_t i = 0; i < n; ++i) {
    const auto kind = r.u8();
    const auto name = r.string();
    Shape shape(r.count(8));
    for (auto& d : shape) d = r.count();
    Tensor* dst = nullptr;
    if (kind == 0) {
      for (auto& p : model.parameters())
        if (p.name == name) dst = &p.value;
    } else if (kind == 1) {
      for (auto& b : model.buffers())
        if (b.name == name) dst = &b.value;
    }
    if (!dst) r.fail("unexpected tensor '" + name + "'");
    if (dst->shape() != shape) r.fail("shape mismatch for '" + name + "'");
    for (auto& v : dst->data()) v = r.f64();
  }
  if (!r.at_end()) r.fail("trailing bytes");
  return model;
}

inline void save_checkpoint(const std::filesystem::path& p, const Model& model) {
  auto out = io::open_out(p);
  write_checkpoint(out, model);
  if (!out) throw DataError("failed writing " + p.string());
}

inline Model load_checkpoint(const std::filesystem::path& p) {
  if (!std::filesystem::exists(p)) throw DataError("missing checkpoint " + p.string());
  auto in = io::open_in(p);
  return read_checkpoint(in, p.string());
}

}  // namespace mtl
