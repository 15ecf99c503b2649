#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "plane/geom3d/point_cloud.hpp"

namespace plane::geom {

namespace detail {

inline std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write file: " + path.string());
  out << bytes;
  if (!out) throw Error("write failed: " + path.string());
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void check_finite(const Vec3& p, const std::string& where) {
  if (!std::isfinite(p.x()) || !std::isfinite(p.y()) || !std::isfinite(p.z()))
    throw Error("non-finite coordinate in " + where);
}

inline std::uint8_t parse_label(double v, const std::string& where) {
  if (v == 0.0) return 0;
  if (v == 1.0) return 1;
  if (v > 0.0 && std::isfinite(v)) return 1;
  throw Error("invalid label value in " + where);
}

}  // namespace detail

/// ASCII PLY text. Labels, when present, become a uchar "anomaly" property.
inline std::string to_ply(const PointCloud& cloud) {
  std::string s = "ply\nformat ascii 1.0\n";
  if (!cloud.class_name.empty()) s += "comment class " + cloud.class_name + "\n";
  s += "element vertex " + std::to_string(cloud.size()) + "\n";
  s += "property float x\nproperty float y\nproperty float z\n";
  if (cloud.labels) s += "property uchar anomaly\n";
  s += "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    s += detail::fmt_double(p.x()) + ' ' + detail::fmt_double(p.y()) + ' ' + detail::fmt_double(p.z());
    if (cloud.labels) s += ' ' + std::to_string(static_cast<int>((*cloud.labels)[i]));
    s += '\n';
  }
  return s;
}

inline PointCloud parse_ply(const std::string& text, const std::string& where = "ply") {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (detail::lower(line).rfind("ply", 0) != 0) throw Error("not a PLY file: " + where);
  struct Element {
    std::string name;
    std::size_t count = 0;
    std::vector<std::string> props;
  };
  std::vector<Element> elements;
  std::string class_name;
  bool ascii = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "comment") {
      std::string tag;
      ls >> tag;
      if (tag == "class") ls >> class_name;
    } else if (kw == "element") {
      Element e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (kw == "property") {
      if (elements.empty()) throw Error("PLY property before element: " + where);
      std::string type, name;
      ls >> type;
      if (type == "list") {
        std::string a, b;
        ls >> a >> b;
      }
      ls >> name;
      elements.back().props.push_back(name);
    } else if (kw == "end_header") {
      break;
    }
  }
  if (!ascii) throw Error("only ASCII PLY is supported: " + where);
  PointCloud cloud;
  cloud.class_name = class_name;
  for (const auto& e : elements) {
    if (e.name != "vertex") {
      for (std::size_t i = 0; i < e.count; ++i) std::getline(in, line);
      continue;
    }
    auto find = [&](const std::string& n) -> std::optional<std::size_t> {
      auto it = std::find(e.props.begin(), e.props.end(), n);
      if (it == e.props.end()) return std::nullopt;
      return static_cast<std::size_t>(it - e.props.begin());
    };
    const auto ix = find("x"), iy = find("y"), iz = find("z");
    if (!ix || !iy || !iz) throw Error("PLY vertex lacks x/y/z: " + where);
    auto il = find("anomaly");
    if (!il) il = find("label");
    cloud.points.reserve(e.count);
    if (il) cloud.labels.emplace();
    std::vector<double> vals(e.props.size());
    for (std::size_t i = 0; i < e.count; ++i) {
      if (!std::getline(in, line)) throw Error("PLY truncated: " + where);
      std::istringstream ls(line);
      for (auto& v : vals) {
        std::string tok;
        if (!(ls >> tok)) throw Error("PLY row too short: " + where);
        v = std::strtod(tok.c_str(), nullptr);
      }
      Vec3 p(vals[*ix], vals[*iy], vals[*iz]);
      detail::check_finite(p, where);
      cloud.points.push_back(p);
      if (il) cloud.labels->push_back(detail::parse_label(vals[*il], where));
    }
  }
  if (cloud.points.empty()) throw Error("PLY has no vertices: " + where);
  return cloud;
}

inline PointCloud read_ply(const std::filesystem::path& path) {
  return parse_ply(detail::read_file(path), path.string());
}

inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  detail::write_file(path, to_ply(cloud));
}

/// Whitespace-separated "x y z [label]" rows; '#' starts a comment line.
inline PointCloud parse_xyz(const std::string& text, const std::string& where = "xyz") {
  std::istringstream in(text);
  std::string line;
  PointCloud cloud;
  bool labelled = false, first = true;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) {
      if (tok[0] == '#') break;
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str()) throw Error("unparsable value '" + tok + "' in " + where);
      vals.push_back(v);
    }
    if (vals.empty()) continue;
    if (vals.size() < 3) throw Error("row with fewer than 3 columns in " + where);
    if (first) {
      labelled = vals.size() >= 4;
      if (labelled) cloud.labels.emplace();
      first = false;
    }
    Vec3 p(vals[0], vals[1], vals[2]);
    detail::check_finite(p, where);
    cloud.points.push_back(p);
    if (labelled) cloud.labels->push_back(vals.size() >= 4 ? detail::parse_label(vals[3], where) : 0);
  }
  if (cloud.points.empty()) throw Error("no points in " + where);
  return cloud;
}

inline PointCloud read_xyz(const std::filesystem::path& path) {
  return parse_xyz(detail::read_file(path), path.string());
}

inline void write_xyz(const std::filesystem::path& path, const PointCloud& cloud) {
  std::string s;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    s += detail::fmt_double(p.x()) + ' ' + detail::fmt_double(p.y()) + ' ' + detail::fmt_double(p.z());
    if (cloud.labels) s += ' ' + std::to_string(static_cast<int>((*cloud.labels)[i]));
    s += '\n';
  }
  detail::write_file(path, s);
}

/// ASCII PCD (DATA ascii). A "label" field, if present, becomes labels.
inline PointCloud parse_pcd(const std::string& text, const std::string& where = "pcd") {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> fields;
  bool data = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "FIELDS") {
      std::string f;
      while (ls >> f) fields.push_back(detail::lower(f));
    } else if (kw == "DATA") {
      std::string mode;
      ls >> mode;
      if (mode != "ascii") throw Error("only ASCII PCD is supported: " + where);
      data = true;
      break;
    }
  }
  if (!data) throw Error("PCD lacks DATA section: " + where);
  auto find = [&](const std::string& n) -> std::optional<std::size_t> {
    auto it = std::find(fields.begin(), fields.end(), n);
    if (it == fields.end()) return std::nullopt;
    return static_cast<std::size_t>(it - fields.begin());
  };
  const auto ix = find("x"), iy = find("y"), iz = find("z");
  if (!ix || !iy || !iz) throw Error("PCD lacks x/y/z fields: " + where);
  const auto il = find("label");
  PointCloud cloud;
  if (il) cloud.labels.emplace();
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::vector<double> vals;
    std::string tok;
    while (ls >> tok) vals.push_back(std::strtod(tok.c_str(), nullptr));
    if (vals.empty()) continue;
    if (vals.size() < fields.size()) throw Error("PCD row too short: " + where);
    Vec3 p(vals[*ix], vals[*iy], vals[*iz]);
    detail::check_finite(p, where);
    cloud.points.push_back(p);
    if (il) cloud.labels->push_back(detail::parse_label(vals[*il], where));
  }
  if (cloud.points.empty()) throw Error("no points in " + where);
  return cloud;
}

/// Dispatches on extension: .ply, .pcd, anything else as XYZ text.
inline PointCloud read_cloud(const std::filesystem::path& path) {
  const std::string ext = detail::lower(path.extension().string());
  const std::string text = detail::read_file(path);
  if (ext == ".ply") return parse_ply(text, path.string());
  if (ext == ".pcd") return parse_pcd(text, path.string());
  return parse_xyz(text, path.string());
}

}  // namespace plane::geom
