#pragma once

// Model checkpoint.
//
// Layout (little-endian):
//   "AELM" | version u32 = 1 | header_len u32 | header (UTF-8 JSON: config
//   echo, dims, optimizer constants, tool version) | matrix_count u32 |
//   per matrix in for_each_matrix order:
//     name_len u16 | name | rows u32 | cols u32 | rows*cols f32

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "bertil/binary_io.hpp"
#include "bertil/errors.hpp"
#include "bertil/model.hpp"

namespace bertil {

inline constexpr std::array<char, 4> kCheckpointMagic{'A', 'E', 'L', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParameters<float> params;
  nlohmann::json header;
};

inline nlohmann::json dims_to_json(const ModelDims& d) {
  return {{"layers", d.layers},         {"context_dim", d.context_dim},
          {"generic_dim", d.generic_dim}, {"heads", d.heads},
          {"head_dim", d.head_dim},     {"projection_dim", d.projection_dim},
          {"classes", d.classes}};
}

inline ModelDims dims_from_json(const nlohmann::json& j) {
  ModelDims d;
  d.layers = j.at("layers").get<std::size_t>();
  d.context_dim = j.at("context_dim").get<std::size_t>();
  d.generic_dim = j.at("generic_dim").get<std::size_t>();
  d.heads = j.at("heads").get<std::size_t>();
  d.head_dim = j.at("head_dim").get<std::size_t>();
  d.projection_dim = j.at("projection_dim").get<std::size_t>();
  d.classes = j.at("classes").get<std::size_t>();
  return d;
}

/// Writes `params`; the header gains a "dims" entry derived from the shapes.
inline void save_checkpoint(std::ostream& out, const ModelParameters<float>& params,
                            nlohmann::json header = nlohmann::json::object()) {
  header["dims"] = dims_to_json(infer_dims(params));
  const std::string text = header.dump();
  binary::Writer w(out);
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  const auto mats = matrices(params);
  w.u32(static_cast<std::uint32_t>(mats.size()));
  for_each_matrix(params, [&](const std::string& name, const Tensor<float>& m) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    w.f32s(m.data());
  });
  out.flush();
  if (!out) throw IoError("checkpoint write failed");
}

inline void save_checkpoint(const std::filesystem::path& path,
                            const ModelParameters<float>& params,
                            nlohmann::json header = nlohmann::json::object()) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  save_checkpoint(out, params, std::move(header));
}

inline Checkpoint load_checkpoint(std::istream& in, const std::string& source = "checkpoint") {
  binary::Reader r(in, source);
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw FormatError(source + ": bad magic (expected \"AELM\")");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  const std::string text = r.string(r.u32());
  try {
    ck.header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": header is not valid JSON: " + e.what());
  }
  ModelDims dims;
  try {
    dims = dims_from_json(ck.header.at("dims"));
    dims.validate();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": header lacks model dims: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(source + ": " + e.what());
  }
  ck.params = zero_params<float>(dims);
  const std::uint32_t count = r.u32();
  if (count != matrices(ck.params).size()) {
    throw FormatError(source + ": " + std::to_string(count) + " matrices, expected " +
                      std::to_string(matrices(ck.params).size()));
  }
  for_each_matrix(ck.params, [&](const std::string& name, Tensor<float>& m) {
    const std::string got = r.string(r.u16());
    if (got != name) throw FormatError(source + ": found matrix '" + got + "', expected '" + name + "'");
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    if (rows != m.rows() || cols != m.cols()) {
      throw FormatError(source + ": matrix " + name + " is " + std::to_string(rows) + "x" +
                        std::to_string(cols) + ", expected " + shape_to_string(m.shape()));
    }
    r.f32s(m.data());
  });
  if (!r.at_end()) throw FormatError(source + ": trailing bytes at offset " + std::to_string(r.offset()));
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  return load_checkpoint(in, path.string());
}

}  // namespace bertil
