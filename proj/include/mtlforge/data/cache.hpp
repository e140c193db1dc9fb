#pragma once

#include <filesystem>
#include <sstream>
#include <string>

#include "mtlforge/data/dataset.hpp"
#include "mtlforge/io.hpp"

namespace mtl {

inline constexpr char kDatasetMagic[] = "MTLDSET\n";
inline constexpr std::uint32_t kDatasetVersion = 1;

/// Columnar dump: header, then one block per column, little-endian.
inline void write_dataset(std::ostream& os, const TaskDataset& d) {
  os.write(kDatasetMagic, 8);
  io::put_u32(os, kDatasetVersion);
  io::put_u64(os, d.task_id);
  io::put_string(os, d.task_name);
  io::put_u64(os, d.rows());
  io::put_u64(os, d.n_features());
  for (const auto& n : d.feature_names) io::put_string(os, n);
  for (auto ts : d.timestamps) io::put_i64(os, ts);
  for (std::size_t j = 0; j < d.n_features(); ++j)
    for (std::size_t i = 0; i < d.rows(); ++i) io::put_f64(os, d.feature(i, j));
  for (std::size_t k = 0; k < 3; ++k)
    for (const auto& t : d.temporal) io::put_i32(os, t[k]);
  for (double y : d.target) io::put_f64(os, y);
  for (auto s : d.split) io::put_u8(os, static_cast<std::uint8_t>(s));
  for (const auto& c : d.stats.features) {
    io::put_f64(os, c.mean);
    io::put_f64(os, c.stdev);
  }
  io::put_f64(os, d.stats.target.mean);
  io::put_f64(os, d.stats.target.stdev);
}

inline TaskDataset read_dataset(std::istream& is, const std::string& what = "dataset cache") {
  io::Reader r(is, what);
  r.expect_magic(kDatasetMagic);
  if (const auto v = r.u32(); v != kDatasetVersion) r.fail("unsupported version " + std::to_string(v));
  TaskDataset d;
  d.task_id = r.u64();
  d.task_name = r.string();
  const auto n = r.count(), D = r.count(1 << 16);
  for (std::size_t j = 0; j < D; ++j) d.feature_names.push_back(r.string());
  d.timestamps.resize(n);
  for (auto& ts : d.timestamps) ts = r.i64();
  d.features.resize(n * D);
  for (std::size_t j = 0; j < D; ++j)
    for (std::size_t i = 0; i < n; ++i) d.features[i * D + j] = r.f64();
  d.temporal.resize(n);
  for (std::size_t k = 0; k < 3; ++k)
    for (auto& t : d.temporal) t[k] = r.i32();
  d.target.resize(n);
  for (auto& y : d.target) y = r.f64();
  d.split.resize(n);
  for (auto& s : d.split) {
    const auto v = r.u8();
    if (v > 2) r.fail("bad split code");
    s = static_cast<Split>(v);
  }
  d.stats.features.resize(D);
  for (auto& c : d.stats.features) {
    c.mean = r.f64();
    c.stdev = r.f64();
  }
  d.stats.target.mean = r.f64();
  d.stats.target.stdev = r.f64();
  if (!r.at_end()) r.fail("trailing bytes");
  return d;
}

inline void save_dataset(const std::filesystem::path& p, const TaskDataset& d) {
  auto out = io::open_out(p);
  write_dataset(out, d);
  if (!out) throw DataError("failed writing " + p.string());
}

inline TaskDataset load_dataset(const std::filesystem::path& p) {
  auto in = io::open_in(p);
  return read_dataset(in, p.string());
}

}  // namespace mtl
