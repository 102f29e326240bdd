#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "camnet/autodiff.hpp"
#include "camnet/errors.hpp"

namespace camnet::ad {

// Flat binary checkpoint: 8 magic bytes, u32 version, u32 entry count, then a
// manifest of (name, shape, element offset) records, then the little-endian
// f64 payload. Round trips are bit-exact.

inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'M', 'N', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  std::vector<int> shape;
  std::vector<double> data;
};

namespace detail {

inline void put_u32(std::string& buf, uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back((char)((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::string& buf, uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back((char)((v >> (8 * i)) & 0xff));
}
inline void put_f64(std::string& buf, double d) {
  uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(buf, bits);
}

struct ByteReader {
  const std::string& buf;
  size_t pos = 0;
  explicit ByteReader(const std::string& b) : buf(b) {}
  void need(size_t n) const {
    if (pos + n > buf.size())
      throw_error(ErrorKind::MalformedFile, "checkpoint: truncated file");
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= (uint32_t)(uint8_t)buf[pos + i] << (8 * i);
    pos += 4;
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= (uint64_t)(uint8_t)buf[pos + i] << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path,
                            const std::vector<CheckpointEntry>& entries) {
  std::string buf;
  buf.append(kCheckpointMagic, 8);
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, (uint32_t)entries.size());
  uint64_t offset = 0;
  for (const CheckpointEntry& e : entries) {
    detail::put_u32(buf, (uint32_t)e.name.size());
    buf.append(e.name);
    detail::put_u32(buf, (uint32_t)e.shape.size());
    size_t n = 1;
    for (int d : e.shape) {
      detail::put_u32(buf, (uint32_t)d);
      n *= (size_t)d;
    }
    if (n != e.data.size())
      throw_error(ErrorKind::ShapeMismatch, "checkpoint: entry '" + e.name +
                                                "' data does not match shape");
    detail::put_u64(buf, offset);
    offset += n;
  }
  for (const CheckpointEntry& e : entries)
    for (double d : e.data) detail::put_f64(buf, d);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_error(ErrorKind::Io, "cannot open checkpoint for writing: " + path.string());
  out.write(buf.data(), (std::streamsize)buf.size());
  if (!out) throw_error(ErrorKind::Io, "write failed: " + path.string());
}

inline std::vector<CheckpointEntry> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_error(ErrorKind::Io, "cannot open checkpoint: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(buf);
  if (r.bytes(8) != std::string(kCheckpointMagic, 8))
    throw_error(ErrorKind::MalformedFile, "checkpoint: bad magic bytes");
  uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw_error(ErrorKind::MalformedFile,
                "checkpoint: unsupported version " + std::to_string(version));
  uint32_t count = r.u32();
  struct Rec {
    std::string name;
    std::vector<int> shape;
    uint64_t offset;
    size_t numel;
  };
  std::vector<Rec> recs;
  uint64_t total = 0;
  for (uint32_t i = 0; i < count; ++i) {
    Rec rec;
    uint32_t name_len = r.u32();
    rec.name = r.bytes(name_len);
    uint32_t ndim = r.u32();
    rec.numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      rec.shape.push_back((int)r.u32());
      rec.numel *= (size_t)rec.shape.back();
    }
    rec.offset = r.u64();
    total += rec.numel;
    recs.push_back(std::move(rec));
  }
  size_t payload_start = r.pos;
  if (payload_start + total * 8 > buf.size())
    throw_error(ErrorKind::MalformedFile, "checkpoint: payload shorter than manifest claims");
  std::vector<CheckpointEntry> entries;
  for (const Rec& rec : recs) {
    detail::ByteReader pr(buf);
    pr.pos = payload_start + rec.offset * 8;
    CheckpointEntry e;
    e.name = rec.name;
    e.shape = rec.shape;
    e.data.reserve(rec.numel);
    for (size_t i = 0; i < rec.numel; ++i) e.data.push_back(pr.f64());
    entries.push_back(std::move(e));
  }
  return entries;
}

// Convenience bridges between named parameter lists and checkpoint entries.
inline std::vector<CheckpointEntry> entries_from_params(
    const std::vector<std::pair<std::string, Tensor>>& named) {
  std::vector<CheckpointEntry> out;
  for (const auto& [name, t] : named) out.push_back({name, t.shape(), t.value()});
  return out;
}

inline void load_into_params(const std::vector<CheckpointEntry>& entries,
                             std::vector<std::pair<std::string, Tensor>>& named) {
  if (entries.size() != named.size())
    throw_error(ErrorKind::ShapeMismatch, "checkpoint: parameter count mismatch");
  for (size_t i = 0; i < named.size(); ++i) {
    const CheckpointEntry* found = nullptr;
    for (const CheckpointEntry& e : entries)
      if (e.name == named[i].first) {
        found = &e;
        break;
      }
    if (!found)
      throw_error(ErrorKind::ShapeMismatch,
                  "checkpoint: missing parameter '" + named[i].first + "'");
    if (found->shape != named[i].second.shape())
      throw_error(ErrorKind::ShapeMismatch,
                  "checkpoint: shape mismatch for '" + named[i].first + "'");
    named[i].second.mutable_value() = found->data;
  }
}

}  // namespace camnet::ad
