#pragma once

// SVWP parameter files (little-endian):
//   "SVWP", u32 count, then per entry:
//   u32 name_len, name bytes, u32 rank, u32 dims[rank], f32 data[prod(dims)].
// Parameters come first in registration order, then buffers.

#include <map>
#include <string>
#include <vector>

#include "svw/ad/module.hpp"
#include "svw/core/io.hpp"

namespace svw::ad {

struct CheckpointEntry {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

inline std::string encode_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out = "SVWP";
  io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.name.size()));
    out += e.name;
    io::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.dims.size()));
    for (auto d : e.dims) io::put_le<std::uint32_t>(out, d);
    for (float x : e.data) io::put_f32(out, x);
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes, const std::string& origin) {
  io::Reader in(bytes, origin);
  if (in.raw(4) != "SVWP") throw DataError(origin + ": not a parameter file");
  const auto count = in.get<std::uint32_t>();
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointEntry e;
    e.name = in.raw(in.get<std::uint32_t>());
    const auto rank = in.get<std::uint32_t>();
    if (rank > 8) throw DataError(origin + ": bad rank for " + e.name);
    std::size_t numel = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      e.dims.push_back(in.get<std::uint32_t>());
      numel *= e.dims.back();
    }
    if (numel * 4 > in.remaining()) throw DataError(origin + ": truncated file");
    e.data.resize(numel);
    for (float& x : e.data) x = in.f32();
    entries.push_back(std::move(e));
  }
  if (!in.done()) throw DataError(origin + ": trailing bytes");
  return entries;
}

template <class T>
std::vector<CheckpointEntry> checkpoint_entries(Module<T>& m) {
  std::vector<CheckpointEntry> out;
  for (auto& [name, p] : m.named_parameters()) {
    const Shape& s = p.shape();
    out.push_back({name,
                   {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c), static_cast<std::uint32_t>(s.h),
                    static_cast<std::uint32_t>(s.w)},
                   std::vector<float>(p.values().begin(), p.values().end())});
  }
  for (auto& [name, b] : m.named_buffers()) {
    out.push_back({name, {static_cast<std::uint32_t>(b->size())}, std::vector<float>(b->begin(), b->end())});
  }
  return out;
}

template <class T>
void save_checkpoint(Module<T>& m, const fs::path& path) {
  io::write_file_atomic(path, encode_checkpoint(checkpoint_entries(m)));
}

/// Copies entries into an identically structured module; names and sizes must match.
template <class T>
void apply_checkpoint(Module<T>& m, const std::vector<CheckpointEntry>& entries, const std::string& origin = "<checkpoint>") {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  auto find = [&](const std::string& name, std::size_t numel) -> const CheckpointEntry& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError(origin + ": missing entry " + name);
    if (it->second->data.size() != numel) {
      throw DataError(origin + ": size mismatch for " + name + " (" + std::to_string(it->second->data.size()) +
                      " vs " + std::to_string(numel) + ")");
    }
    return *it->second;
  };
  auto params = m.named_parameters();
  auto buffers = m.named_buffers();
  if (entries.size() != params.size() + buffers.size()) {
    throw DataError(origin + ": " + std::to_string(entries.size()) + " entries, model has " +
                    std::to_string(params.size() + buffers.size()));
  }
  for (auto& [name, p] : params) {
    const auto& e = find(name, p.numel());
    std::copy(e.data.begin(), e.data.end(), p.values().begin());
  }
  for (auto& [name, b] : buffers) {
    const auto& e = find(name, b->size());
    std::copy(e.data.begin(), e.data.end(), b->begin());
  }
}

template <class T>
void load_checkpoint(Module<T>& m, const fs::path& path) {
  apply_checkpoint(m, decode_checkpoint(io::read_file(path), path.string()), path.string());
}

}  // namespace svw::ad
