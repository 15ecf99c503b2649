#pragma once

#include <nlohmann/json.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "plane/autodiff/optim.hpp"

namespace plane::ad {

// Layout:
//   8 bytes   magic "PLNCKPT\0"
//   8 bytes   header length H (uint64, little endian)
//   H bytes   UTF-8 JSON: {"format_version":1,"meta":{...},
//                          "tensors":[{"name","shape","offset","count"}]}
//   payload   float64 little-endian values, tensors back to back; offsets
//             are in bytes from the start of the payload.
inline constexpr char kCheckpointMagic[8] = {'P', 'L', 'N', 'C', 'K', 'P', 'T', '\0'};
inline constexpr int kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Checkpoint {
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  const NamedTensor& get(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t;
    throw Error("checkpoint has no tensor named " + name);
  }
  bool contains(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return true;
    return false;
  }
};

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint64_t get_u64(const std::string& in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["meta"] = ck.meta;
  header["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : ck.tensors) {
    if (t.data.size() != shape_numel(t.shape)) throw Error("checkpoint tensor size mismatch: " + t.name);
    header["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"offset", offset}, {"count", t.data.size()}});
    offset += 8 * t.data.size();
  }
  const std::string h = header.dump();
  std::string out(kCheckpointMagic, 8);
  detail::put_u64(out, h.size());
  out += h;
  out.reserve(out.size() + offset);
  for (const auto& t : ck.tensors)
    for (double v : t.data) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes, const std::string& where = "checkpoint") {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw Error("not a checkpoint file: " + where);
  const std::uint64_t hlen = detail::get_u64(bytes, 8);
  if (16 + hlen > bytes.size()) throw Error("truncated checkpoint header: " + where);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad checkpoint header in " + where + ": " + e.what());
  }
  if (header.value("format_version", 0) != kCheckpointVersion)
    throw Error("unsupported checkpoint version in " + where);
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  const std::size_t base = 16 + hlen;
  for (const auto& t : header.at("tensors")) {
    NamedTensor nt;
    nt.name = t.at("name").get<std::string>();
    nt.shape = t.at("shape").get<Shape>();
    const auto offset = t.at("offset").get<std::uint64_t>();
    const auto count = t.at("count").get<std::uint64_t>();
    if (count != shape_numel(nt.shape) || base + offset + 8 * count > bytes.size())
      throw Error("corrupt checkpoint tensor " + nt.name + " in " + where);
    nt.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i)
      nt.data[i] = std::bit_cast<double>(detail::get_u64(bytes, base + offset + 8 * i));
    ck.tensors.push_back(std::move(nt));
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint: " + path.string());
  const std::string bytes = serialize_checkpoint(ck);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed: " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), path.string());
}

inline Checkpoint to_checkpoint(const std::vector<Parameter>& params, nlohmann::json meta = nlohmann::json::object()) {
  Checkpoint ck;
  ck.meta = std::move(meta);
  for (const auto& p : params)
    ck.tensors.push_back({p.name, p.tensor.shape(), std::vector<double>(p.tensor.data().begin(), p.tensor.data().end())});
  return ck;
}

/// Copies checkpoint values into matching parameters; every parameter must be present.
inline void load_into(const Checkpoint& ck, std::vector<Parameter>& params) {
  for (auto& p : params) {
    const auto& t = ck.get(p.name);
    if (t.shape != p.tensor.shape())
      throw Error("checkpoint shape mismatch for " + p.name + ": " + shape_str(t.shape) + " vs " +
                  shape_str(p.tensor.shape()));
    std::copy(t.data.begin(), t.data.end(), p.tensor.mutable_data().begin());
  }
}

}  // namespace plane::ad
