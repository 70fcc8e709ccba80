#pragma once

// Binary checkpoint container.
//
// Layout: magic "MOEG", format version u32, entry count u32, then per entry:
// name length u16, UTF-8 name, rank u8, dims as u32 little-endian, payload
// little-endian. Payloads are f32 except for entries whose name starts with
// "rng/", which hold u64 words (RNG stream states and the master seed).
// A rank-0 entry has no dims and exactly one payload value.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace moegan {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
  std::string name;
  std::uint8_t rank = 0;
  std::vector<std::uint32_t> dims;
  std::vector<float> f32;
  std::vector<std::uint64_t> u64;

  bool is_u64() const { return name.rfind("rng/", 0) == 0; }
  std::size_t count() const {
    std::size_t n = 1;
    for (std::uint32_t d : dims) n *= d;
    return n;
  }
};

inline constexpr char kCheckpointMagic[4] = {'M', 'O', 'E', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}
template <typename T>
T take(const std::string& in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw CheckpointError("checkpoint: truncated file");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}
}  // namespace detail

inline std::string serialize_checkpoint(const std::vector<CheckpointEntry>& entries) {
  std::string out;
  out.append(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (e.name.size() > 0xffff) throw CheckpointError("checkpoint: name too long: " + e.name);
    if (e.rank != e.dims.size())
      throw CheckpointError("checkpoint: rank/dims mismatch for " + e.name);
    detail::put<std::uint16_t>(out, static_cast<std::uint16_t>(e.name.size()));
    out.append(e.name);
    detail::put<std::uint8_t>(out, e.rank);
    for (std::uint32_t d : e.dims) detail::put<std::uint32_t>(out, d);
    std::size_t n = e.count();
    if (e.is_u64()) {
      if (e.u64.size() != n) throw CheckpointError("checkpoint: payload size mismatch for " + e.name);
      for (std::uint64_t v : e.u64) detail::put<std::uint64_t>(out, v);
    } else {
      if (e.f32.size() != n) throw CheckpointError("checkpoint: payload size mismatch for " + e.name);
      for (float v : e.f32) detail::put<float>(out, v);
    }
  }
  return out;
}

inline std::vector<CheckpointEntry> parse_checkpoint(const std::string& bytes) {
  std::size_t off = 0;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointError("checkpoint: bad magic");
  off = 4;
  auto version = detail::take<std::uint32_t>(bytes, off);
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  auto count = detail::take<std::uint32_t>(bytes, off);
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    auto name_len = detail::take<std::uint16_t>(bytes, off);
    if (off + name_len > bytes.size()) throw CheckpointError("checkpoint: truncated name");
    e.name.assign(bytes.data() + off, name_len);
    off += name_len;
    e.rank = detail::take<std::uint8_t>(bytes, off);
    for (int d = 0; d < e.rank; ++d) e.dims.push_back(detail::take<std::uint32_t>(bytes, off));
    std::size_t n = e.count();
    if (e.is_u64())
      for (std::size_t j = 0; j < n; ++j) e.u64.push_back(detail::take<std::uint64_t>(bytes, off));
    else
      for (std::size_t j = 0; j < n; ++j) e.f32.push_back(detail::take<float>(bytes, off));
    entries.push_back(std::move(e));
  }
  if (off != bytes.size()) throw CheckpointError("checkpoint: trailing bytes");
  return entries;
}

inline void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("checkpoint: cannot open " + path + " for writing");
  std::string bytes = serialize_checkpoint(entries);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("checkpoint: write failed for " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

// Name-keyed view; duplicate names are rejected.
inline std::map<std::string, const CheckpointEntry*> index_checkpoint(
    const std::vector<CheckpointEntry>& entries) {
  std::map<std::string, const CheckpointEntry*> m;
  for (const auto& e : entries)
    if (!m.emplace(e.name, &e).second)
      throw CheckpointError("checkpoint: duplicate entry " + e.name);
  return m;
}

}  // namespace moegan
