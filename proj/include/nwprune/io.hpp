#pragma once

// Bundle file layout (all integers little-endian):
//
//   [0, 4)        magic "NWB1"
//   [4, 12)       u64 header length H
//   [12, 12+H)    UTF-8 JSON header
//                   {"tensors":[{"name","dtype":"f32","shape","offset","nbytes"}],
//                    "graph":{...}, "metadata":{...}, "crc32":<data-section CRC-32>}
//   [12+H, end)   data section; tensor offsets are relative to its start
//
// Tensors are packed back to back in bundle order with no padding. The JSON
// header is written with sorted keys and no whitespace, so encoding is a pure
// function of the bundle.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <zlib.h>

#include "nwprune/bundle.hpp"
#include "nwprune/error.hpp"

namespace nwprune {

inline constexpr std::string_view kBundleMagic = "NWB1";
inline constexpr std::string_view kToolVersion = "nwprune 1.0.0";

using json = nlohmann::json;

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks for >4 GiB sections.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

/// Lower-case hex SHA-256 digest.
inline std::string sha256_hex(std::string_view bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[md[i] >> 4]);
    out.push_back(kHex[md[i] & 0xF]);
  }
  return out;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

// --- graph <-> JSON -------------------------------------------------------

inline json to_json(const LayerSpec& l) {
  return json{
      {"id", l.id},
      {"kind", std::string(to_string(l.kind))},
      {"weights", l.weight_refs},
      {"in_channels", l.in_channels},
      {"out_channels", l.out_channels},
      {"in_spatial", {l.in_spatial.h, l.in_spatial.w}},
      {"out_spatial", {l.out_spatial.h, l.out_spatial.w}},
      {"kernel", l.kernel},
      {"stride", l.stride},
      {"padding", l.padding},
      {"window", l.window},
      {"bias", l.bias},
      {"eps", l.eps},
      {"stage", l.stage},
  };
}

inline json to_json(const ArchGraph& g) {
  json layers = json::array();
  for (const auto& l : g.layers) layers.push_back(to_json(l));
  json edges = json::array();
  for (const auto& [from, to] : g.edges) edges.push_back({from, to});
  return json{{"layers", layers}, {"edges", edges}, {"inputs", g.inputs}, {"outputs", g.outputs}};
}

namespace detail {

template <class T>
T field(const json& j, const char* key, const T& fallback) {
  auto it = j.find(key);
  if (it == j.end()) return fallback;
  return it->get<T>();
}

inline Spatial spatial_field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) return {};
  if (!it->is_array() || it->size() != 2) throw FormatError(std::string("'") + key + "' must be [h, w]");
  return {(*it)[0].get<std::int64_t>(), (*it)[1].get<std::int64_t>()};
}

}  // namespace detail

inline LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.id = j.at("id").get<std::string>();
  l.kind = parse_layer_kind(j.at("kind").get<std::string>());
  l.weight_refs = detail::field(j, "weights", std::vector<std::string>{});
  l.in_channels = j.at("in_channels").get<std::int64_t>();
  l.out_channels = j.at("out_channels").get<std::int64_t>();
  l.in_spatial = detail::spatial_field(j, "in_spatial");
  l.out_spatial = detail::spatial_field(j, "out_spatial");
  l.kernel = detail::field<std::int64_t>(j, "kernel", 0);
  l.stride = detail::field<std::int64_t>(j, "stride", 1);
  l.padding = detail::field<std::int64_t>(j, "padding", 0);
  l.window = detail::field<std::int64_t>(j, "window", 0);
  l.bias = detail::field(j, "bias", false);
  l.eps = detail::field(j, "eps", 1e-5);
  l.stage = detail::field(j, "stage", std::string{});
  return l;
}

inline ArchGraph graph_from_json(const json& j) {
  ArchGraph g;
  for (const auto& l : j.at("layers")) g.layers.push_back(layer_from_json(l));
  for (const auto& e : j.at("edges")) {
    if (!e.is_array() || e.size() != 2) throw FormatError("edges must be [from, to] pairs");
    g.edges.emplace_back(e[0].get<std::string>(), e[1].get<std::string>());
  }
  g.inputs = j.at("inputs").get<std::vector<std::string>>();
  g.outputs = j.at("outputs").get<std::vector<std::string>>();
  return g;
}

// --- bundle encode / decode -------------------------------------------------

namespace detail {

inline void put_u64_le(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64_le(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{static_cast<unsigned char>(in[i])} << (8 * i);
  return v;
}

inline void append_f32_le(std::string& out, const std::vector<float>& data) {
  const std::size_t start = out.size();
  out.resize(start + data.size() * 4);
  if (data.empty()) return;
  std::memcpy(out.data() + start, data.data(), data.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = start; i < out.size(); i += 4) {
      std::swap(out[i], out[i + 3]);
      std::swap(out[i + 1], out[i + 2]);
    }
  }
}

inline std::vector<float> read_f32_le(std::string_view bytes) {
  std::vector<float> out(bytes.size() / 4);
  if (out.empty()) return out;
  std::memcpy(out.data(), bytes.data(), out.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    for (auto& f : out) {
      auto u = std::bit_cast<std::uint32_t>(f);
      u = (u >> 24) | ((u >> 8) & 0xFF00u) | ((u << 8) & 0xFF0000u) | (u << 24);
      f = std::bit_cast<float>(u);
    }
  }
  return out;
}

}  // namespace detail

/// Serializes a bundle to the on-disk byte layout. Does not validate.
inline std::string encode_bundle(const ModelBundle& b) {
  std::string data;
  json tensors = json::array();
  for (const auto& t : b.tensors) {
    tensors.push_back({{"name", t.name},
                       {"dtype", "f32"},
                       {"shape", t.shape},
                       {"offset", data.size()},
                       {"nbytes", t.nbytes()}});
    detail::append_f32_le(data, t.data);
  }
  json header{{"tensors", tensors},
              {"graph", to_json(b.graph)},
              {"metadata", b.metadata},
              {"crc32", crc32_of(data)}};
  const std::string header_text = header.dump();

  std::string out;
  out.reserve(12 + header_text.size() + data.size());
  out.append(kBundleMagic);
  detail::put_u64_le(out, header_text.size());
  out.append(header_text);
  out.append(data);
  return out;
}

/// Parses the on-disk layout. Checks framing and checksum but not graph
/// invariants; see read_bundle for the validating entry point.
inline ModelBundle decode_bundle(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != kBundleMagic) throw FormatError("bad magic: not an NWB1 bundle");
  if (bytes.size() < 12) throw CorruptionError("truncated header length");
  const std::uint64_t header_len = detail::get_u64_le(bytes.substr(4, 8));
  if (header_len > bytes.size() - 12)
    throw CorruptionError("header length " + std::to_string(header_len) + " exceeds file size");
  const std::string_view header_text = bytes.substr(12, header_len);
  const std::string_view data = bytes.substr(12 + header_len);

  json header;
  try {
    header = json::parse(header_text);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what());
  }

  ModelBundle b;
  try {
    const auto crc = header.at("crc32").get<std::uint32_t>();
    std::uint64_t expected_offset = 0;
    for (const auto& tj : header.at("tensors")) {
      TensorRecord t;
      t.name = tj.at("name").get<std::string>();
      const auto dtype = tj.at("dtype").get<std::string>();
      if (dtype != "f32") throw UnsupportedError("tensor " + t.name + ": dtype '" + dtype + "' (only f32)");
      t.shape = tj.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = tj.at("offset").get<std::uint64_t>();
      const auto nbytes = tj.at("nbytes").get<std::uint64_t>();
      if (static_cast<std::uint64_t>(t.numel()) * 4 != nbytes)
        throw CorruptionError("tensor " + t.name + ": nbytes does not match shape");
      if (offset != expected_offset || offset + nbytes > data.size())
        throw CorruptionError("tensor " + t.name + ": offset/length outside data section");
      t.data = detail::read_f32_le(data.substr(offset, nbytes));
      expected_offset = offset + nbytes;
      b.tensors.push_back(std::move(t));
    }
    if (expected_offset != data.size())
      throw CorruptionError("data section is " + std::to_string(data.size()) + " bytes, header accounts for " +
                            std::to_string(expected_offset));
    if (crc32_of(data) != crc) throw CorruptionError("data section checksum mismatch");
    b.graph = graph_from_json(header.at("graph"));
    b.metadata = header.at("metadata").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed header: ") + e.what());
  }
  return b;
}

/// Canonical content hash; equals the SHA-256 of the file write_bundle produces.
inline std::string bundle_sha256(const ModelBundle& b) { return sha256_hex(encode_bundle(b)); }

/// Reads and validates a bundle file.
inline ModelBundle read_bundle(const std::filesystem::path& path) {
  ModelBundle b = decode_bundle(read_file(path));
  require_valid(b);
  return b;
}

/// Validates, then writes. Nothing touches the filesystem if validation fails.
inline void write_bundle(const ModelBundle& b, const std::filesystem::path& path) {
  require_valid(b);
  write_file(path, encode_bundle(b));
}

}  // namespace nwprune
