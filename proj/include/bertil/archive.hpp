#pragma once

// Binary archive of precomputed per-aspect embeddings.
//
// Layout (all integers and floats little-endian):
//   "AELC" | version u32 = 1 | record_count u64 | layer_count u8 = 5 |
//   layer_indices 5 x u8 | context_dim u16 = 768 | generic_dim u16 = 300
// then per record:
//   id_len u16 | id bytes | label_id u8 | oov_flag u8 |
//   5 x 768 f32 (row-major stack) | 300 f32 (generic)

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "bertil/binary_io.hpp"
#include "bertil/errors.hpp"
#include "bertil/tensor.hpp"

namespace bertil {

inline constexpr std::array<char, 4> kArchiveMagic{'A', 'E', 'L', 'C'};
inline constexpr std::uint32_t kArchiveVersion = 1;
inline constexpr std::size_t kArchiveLayers = 5;
inline constexpr std::size_t kArchiveContextDim = 768;
inline constexpr std::size_t kArchiveGenericDim = 300;

struct ArchiveMeta {
  std::array<std::uint8_t, kArchiveLayers> layer_indices{8, 9, 10, 11, 12};
  std::uint16_t context_dim = kArchiveContextDim;
  std::uint16_t generic_dim = kArchiveGenericDim;

  friend bool operator==(const ArchiveMeta&, const ArchiveMeta&) = default;
};

struct ArchiveRecord {
  std::string example_id;
  std::uint8_t label_id = 0;
  Tensor<float> stack;    // layers x context_dim
  Tensor<float> generic;  // generic_dim
  bool oov = false;

  friend bool operator==(const ArchiveRecord&, const ArchiveRecord&) = default;
};

struct Archive {
  ArchiveMeta meta;
  std::vector<ArchiveRecord> records;
};

namespace detail {

inline void validate_meta(const ArchiveMeta& meta) {
  if (meta.context_dim != kArchiveContextDim || meta.generic_dim != kArchiveGenericDim) {
    throw ValidationError("archive dims must be " + std::to_string(kArchiveContextDim) + "/" +
                          std::to_string(kArchiveGenericDim) + ", got " +
                          std::to_string(meta.context_dim) + "/" +
                          std::to_string(meta.generic_dim));
  }
}

inline void validate_records(std::span<const ArchiveRecord> records, const ArchiveMeta& meta) {
  std::unordered_set<std::string> seen;
  for (const ArchiveRecord& r : records) {
    if (r.example_id.size() > 0xFFFF) {
      throw ValidationError("example id longer than 65535 bytes: " + r.example_id.substr(0, 40));
    }
    if (!seen.insert(r.example_id).second) {
      throw ValidationError("duplicate example id in archive: " + r.example_id);
    }
    const Shape stack_shape{kArchiveLayers, meta.context_dim};
    if (r.stack.shape() != stack_shape) {
      throw ValidationError("record " + r.example_id + ": stack is " +
                            shape_to_string(r.stack.shape()) + ", expected " +
                            shape_to_string(stack_shape));
    }
    if (r.generic.size() != meta.generic_dim || r.generic.rank() != 1) {
      throw ValidationError("record " + r.example_id + ": generic embedding is " +
                            shape_to_string(r.generic.shape()) + ", expected [" +
                            std::to_string(meta.generic_dim) + "]");
    }
  }
}

}  // namespace detail

/// Validates everything first, so a rejected call writes no bytes.
inline std::size_t write_archive(std::ostream& out, std::span<const ArchiveRecord> records,
                                 const ArchiveMeta& meta = {}) {
  detail::validate_meta(meta);
  detail::validate_records(records, meta);
  binary::Writer w(out);
  w.bytes(kArchiveMagic.data(), kArchiveMagic.size());
  w.u32(kArchiveVersion);
  w.u64(records.size());
  w.u8(static_cast<std::uint8_t>(kArchiveLayers));
  for (std::uint8_t idx : meta.layer_indices) w.u8(idx);
  w.u16(meta.context_dim);
  w.u16(meta.generic_dim);
  for (const ArchiveRecord& r : records) {
    w.u16(static_cast<std::uint16_t>(r.example_id.size()));
    w.bytes(r.example_id.data(), r.example_id.size());
    w.u8(r.label_id);
    w.u8(r.oov ? 1 : 0);
    w.f32s(r.stack.data());
    w.f32s(r.generic.data());
  }
  out.flush();
  if (!out) throw IoError("archive write failed");
  return records.size();
}

inline std::size_t write_archive(const std::filesystem::path& path,
                                 std::span<const ArchiveRecord> records,
                                 const ArchiveMeta& meta = {}) {
  detail::validate_meta(meta);
  detail::validate_records(records, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  try {
    return write_archive(out, records, meta);
  } catch (...) {
    out.close();
    std::error_code ec;
    std::filesystem::remove(path, ec);
    throw;
  }
}

/// Reads and validates a whole archive. Nothing is returned unless every
/// declared record is present and well-formed.
inline Archive read_archive(std::istream& in, const std::string& source = "archive") {
  binary::Reader r(in, source);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kArchiveMagic) {
    throw FormatError(source + ": bad magic (expected \"AELC\")");
  }
  const std::uint32_t version = r.u32();
  if (version != kArchiveVersion) {
    throw FormatError(source + ": unsupported version " + std::to_string(version));
  }
  const std::uint64_t count = r.u64();
  const std::uint8_t layer_count = r.u8();
  if (layer_count != kArchiveLayers) {
    throw FormatError(source + ": layer_count " + std::to_string(layer_count) + ", expected 5");
  }
  Archive archive;
  for (auto& idx : archive.meta.layer_indices) idx = r.u8();
  archive.meta.context_dim = r.u16();
  archive.meta.generic_dim = r.u16();
  if (archive.meta.context_dim != kArchiveContextDim ||
      archive.meta.generic_dim != kArchiveGenericDim) {
    throw FormatError(source + ": declared dims " + std::to_string(archive.meta.context_dim) +
                      "/" + std::to_string(archive.meta.generic_dim) + ", expected 768/300");
  }

  std::unordered_set<std::string> seen;
  archive.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t i = 0; i < count; ++i) {
    if (r.at_end()) {
      throw FormatError(source + ": truncated at byte offset " + std::to_string(r.offset()) +
                        " after " + std::to_string(i) + " of " + std::to_string(count) +
                        " declared records");
    }
    ArchiveRecord rec;
    rec.example_id = r.string(r.u16());
    rec.label_id = r.u8();
    const std::uint8_t oov = r.u8();
    if (oov > 1) {
      throw FormatError(source + ": record " + rec.example_id + " has oov_flag " +
                        std::to_string(oov) + " at offset " + std::to_string(r.offset() - 1));
    }
    rec.oov = oov == 1;
    rec.stack = Tensor<float>::matrix(kArchiveLayers, archive.meta.context_dim);
    r.f32s(rec.stack.data());
    rec.generic = Tensor<float>({archive.meta.generic_dim});
    r.f32s(rec.generic.data());
    if (!seen.insert(rec.example_id).second) {
      throw FormatError(source + ": duplicate example id " + rec.example_id);
    }
    archive.records.push_back(std::move(rec));
  }
  if (!r.at_end()) {
    throw FormatError(source + ": trailing bytes after " + std::to_string(count) +
                      " declared records at byte offset " + std::to_string(r.offset()));
  }
  return archive;
}

inline Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open archive " + path.string());
  return read_archive(in, path.string());
}

}  // namespace bertil
