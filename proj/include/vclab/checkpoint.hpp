#pragma once

// Versioned parameter container: magic "VCCK", u32 version, then
// (name, shape, 64-bit little-endian values) entries each with Adam state,
// then a JSON metadata blob (run config, domain statistics, RNG state).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "core/io.hpp"
#include "core/nn.hpp"

namespace vclab {

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
  std::vector<double> adam_m;
  std::vector<double> adam_v;
  long adam_t = 0;
};

struct Checkpoint {
  std::vector<CheckpointEntry> entries;
  std::string meta_json;

  const CheckpointEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

template <typename Real>
CheckpointEntry checkpoint_entry(const Parameter<Real>& p) {
  CheckpointEntry e;
  e.name = p.name;
  e.shape = p.value.shape();
  e.values.assign(p.value.values().begin(), p.value.values().end());
  e.adam_m.assign(p.adam_m.begin(), p.adam_m.end());
  e.adam_v.assign(p.adam_v.begin(), p.adam_v.end());
  e.adam_t = p.adam_t;
  return e;
}

template <typename Real>
void restore_parameter(Parameter<Real>& p, const CheckpointEntry& e) {
  if (e.shape != p.value.shape())
    throw std::runtime_error("checkpoint entry '" + e.name + "' has shape " + shape_str(e.shape) +
                             ", parameter expects " + shape_str(p.value.shape()));
  auto& v = p.value.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<Real>(e.values[i]);
    p.adam_m[i] = static_cast<Real>(e.adam_m[i]);
    p.adam_v[i] = static_cast<Real>(e.adam_v[i]);
  }
  p.adam_t = e.adam_t;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  atomic_write(path, [&](std::ostream& os) {
    os.write("VCCK", 4);
    detail::write_le<std::uint32_t>(os, 1);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(ck.entries.size()));
    for (const auto& e : ck.entries) {
      detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.name.size()));
      os.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.shape.size()));
      for (long d : e.shape) detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(d));
      for (double v : e.values) detail::write_le<double>(os, v);
      for (double v : e.adam_m) detail::write_le<double>(os, v);
      for (double v : e.adam_v) detail::write_le<double>(os, v);
      detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(e.adam_t));
    }
    detail::write_le<std::uint64_t>(os, static_cast<std::uint64_t>(ck.meta_json.size()));
    os.write(ck.meta_json.data(), static_cast<std::streamsize>(ck.meta_json.size()));
  });
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "VCCK", 4) != 0)
    throw std::runtime_error(path.string() + " is not a VCCK checkpoint");
  const auto version = detail::read_le<std::uint32_t>(is);
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  const auto n = detail::read_le<std::uint32_t>(is);
  ck.entries.resize(n);
  for (auto& e : ck.entries) {
    const auto name_len = detail::read_le<std::uint32_t>(is);
    e.name.resize(name_len);
    is.read(e.name.data(), name_len);
    const auto ndim = detail::read_le<std::uint32_t>(is);
    e.shape.resize(ndim);
    for (auto& d : e.shape) d = static_cast<long>(detail::read_le<std::uint64_t>(is));
    const long count = shape_numel(e.shape);
    e.values.resize(static_cast<std::size_t>(count));
    for (auto& v : e.values) v = detail::read_le<double>(is);
    e.adam_m.resize(static_cast<std::size_t>(count));
    for (auto& v : e.adam_m) v = detail::read_le<double>(is);
    e.adam_v.resize(static_cast<std::size_t>(count));
    for (auto& v : e.adam_v) v = detail::read_le<double>(is);
    e.adam_t = static_cast<long>(detail::read_le<std::uint64_t>(is));
  }
  const auto meta_len = detail::read_le<std::uint64_t>(is);
  ck.meta_json.resize(meta_len);
  is.read(ck.meta_json.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw std::runtime_error("truncated checkpoint " + path.string());
  return ck;
}

}  // namespace vclab
