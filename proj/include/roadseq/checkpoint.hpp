#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "roadseq/array.hpp"
#include "roadseq/binio.hpp"
#include "roadseq/error.hpp"

namespace roadseq::nn {

// Checkpoint format: magic SQAP, u32 parameter count, then per parameter
// u32 name length + UTF-8 name, u32 rank, u32 dims, f64 values (all LE).

inline void save_checkpoint(const std::vector<const Parameter*>& params,
                            const std::string& path) {
  std::string out = "SQAP";
  binio::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    binio::put_u32(out, static_cast<std::uint32_t>(p->name.size()));
    out += p->name;
    binio::put_u32(out, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape)
      binio::put_u32(out, static_cast<std::uint32_t>(d));
    for (double x : p->value.v) binio::put_f64(out, x);
  }
  binio::write_file(path, out);
}

struct CheckpointEntry {
  std::string name;
  Array value;
};

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  binio::Reader r(binio::read_file(path), path);
  if (r.raw(4) != "SQAP") throw ValidationError(path + ": bad magic");
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    const std::uint32_t name_len = r.u32();
    e.name = r.raw(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = r.u32();
    Array a(shape);
    for (std::size_t k = 0; k < a.numel(); ++k) a.v[k] = r.f64();
    e.value = std::move(a);
    out.push_back(std::move(e));
  }
  r.expect_end();
  return out;
}

// Fills existing parameters by name; every parameter must be present with a
// matching shape.
inline void load_checkpoint(const std::string& path,
                            const std::vector<Parameter*>& params) {
  const auto entries = read_checkpoint(path);
  for (Parameter* p : params) {
    const CheckpointEntry* found = nullptr;
    for (const auto& e : entries)
      if (e.name == p->name) {
        found = &e;
        break;
      }
    if (!found)
      throw ValidationError(path + ": missing parameter " + p->name);
    if (found->value.shape != p->value.shape)
      throw ValidationError(path + ": shape mismatch for " + p->name +
                            " (checkpoint " + found->value.shape_str() +
                            ", model " + p->value.shape_str() + ")");
    p->value = found->value;
    p->zero_grad();
  }
}

}  // namespace roadseq::nn
