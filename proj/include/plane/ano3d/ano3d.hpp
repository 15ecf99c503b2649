#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "plane/core/rng.hpp"
#include "plane/geom3d/kdtree.hpp"
#include "plane/geom3d/normals.hpp"
#include "plane/geom3d/rotation.hpp"

namespace plane::ano3d {

using geom::Mat3;
using geom::PointCloud;
using geom::Vec3;

enum class DefectType { none, bulge, concavity, hole };

inline std::string to_string(DefectType t) {
  switch (t) {
    case DefectType::none: return "none";
    case DefectType::bulge: return "bulge";
    case DefectType::concavity: return "concavity";
    case DefectType::hole: return "hole";
  }
  return "none";
}

inline DefectType parse_defect_type(const std::string& s) {
  if (s == "none") return DefectType::none;
  if (s == "bulge") return DefectType::bulge;
  if (s == "concavity") return DefectType::concavity;
  if (s == "hole") return DefectType::hole;
  throw Error("unknown defect type: " + s);
}

struct AnomalyConfig {
  /// Unset means "draw one of bulge/concavity/hole uniformly".
  std::optional<DefectType> defect_type;
  std::size_t m = 64;   // displaced neighbours for bulge/concavity
  std::size_t x = 63;   // removed neighbours for hole (plus the centre)
  double mu = 0.05;
  double sigma = 0.02;
  std::size_t hole_boundary_k = 16;
  bool per_point_jitter = false;
  std::uint64_t seed = 0;

  void validate() const {
    require(m >= 3, "AnomalyConfig: M must be >= 3");
    require(sigma > 0.0, "AnomalyConfig: sigma must be > 0");
    require(mu > 0.0, "AnomalyConfig: mu must be > 0");
  }
};

struct DefectMeta {
  DefectType type = DefectType::none;
  std::size_t center = 0;
  double t = 0.0;
  Vec3 normal = Vec3::Zero();  // displacement direction (already signed)
  std::uint64_t seed = 0;
  geom::RotationAngles angles;
  std::vector<std::size_t> affected;  // displaced or removed input indices
  std::vector<double> per_point_t;    // only with per_point_jitter
};

struct DefectResult {
  PointCloud cloud;
  std::vector<std::uint8_t> mask;
  DefectMeta meta;
};

/// Displacement distance for one defect: N(mu, sigma^2) clamped to >= sigma/2.
inline double sample_displacement(Rng& rng, double mu, double sigma) {
  return std::max(rng.normal(mu, sigma), 0.5 * sigma);
}

namespace detail {

inline PointCloud with_labels(PointCloud cloud, const std::vector<std::uint8_t>& mask) {
  if (cloud.labels) {
    for (std::size_t i = 0; i < mask.size(); ++i) (*cloud.labels)[i] = (*cloud.labels)[i] | mask[i];
  } else {
    cloud.labels = mask;
  }
  return cloud;
}

}  // namespace detail

/// Moves the M nearest points of `center` by t along the outward patch
/// normal (sign = +1) or the inward one (sign = -1). Deterministic given
/// its arguments, which is what replay relies on.
inline DefectResult apply_displacement(const PointCloud& cloud, std::size_t center, std::size_t m, double t,
                                       int sign, const std::vector<double>& per_point_t = {}) {
  require(cloud.size() >= m, "insufficient points for displacement defect");
  const geom::KdTree tree(cloud.points);
  const auto nb = tree.knn(cloud.points[center], m);
  std::vector<std::size_t> idx;
  idx.reserve(nb.size());
  for (const auto& n : nb) idx.push_back(n.index);
  const Vec3 dir = static_cast<double>(sign) * geom::estimate_normal(cloud, idx);
  DefectResult r;
  r.cloud = cloud;
  r.mask.assign(cloud.size(), 0);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const double step = per_point_t.empty() ? t : per_point_t[k];
    r.cloud.points[idx[k]] += step * dir;
    r.mask[idx[k]] = 1;
  }
  r.cloud = detail::with_labels(std::move(r.cloud), r.mask);
  r.meta.type = sign > 0 ? DefectType::bulge : DefectType::concavity;
  r.meta.center = center;
  r.meta.t = t;
  r.meta.normal = dir;
  r.meta.affected = std::move(idx);
  r.meta.per_point_t = per_point_t;
  return r;
}

/// Removes `center` and its x nearest neighbours, then flags the
/// boundary_k surviving points closest to the removed set's centroid.
inline DefectResult apply_hole(const PointCloud& cloud, std::size_t center, std::size_t x, std::size_t boundary_k) {
  require(cloud.size() >= x + 1 + boundary_k, "insufficient points for hole defect");
  const geom::KdTree tree(cloud.points);
  const auto nb = tree.knn(cloud.points[center], x + 1);
  std::vector<std::uint8_t> removed(cloud.size(), 0);
  std::vector<std::size_t> idx;
  Vec3 hole_center = Vec3::Zero();
  for (const auto& n : nb) {
    removed[n.index] = 1;
    idx.push_back(n.index);
    hole_center += cloud.points[n.index];
  }
  hole_center /= static_cast<double>(nb.size());
  DefectResult r;
  r.cloud.class_name = cloud.class_name;
  std::optional<std::vector<std::uint8_t>> kept_labels;
  if (cloud.labels) kept_labels.emplace();
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (removed[i]) continue;
    r.cloud.points.push_back(cloud.points[i]);
    if (kept_labels) kept_labels->push_back((*cloud.labels)[i]);
  }
  r.cloud.labels = kept_labels;
  r.mask.assign(r.cloud.size(), 0);
  if (boundary_k > 0) {
    for (const auto& n : geom::KdTree(r.cloud.points).knn(hole_center, boundary_k)) r.mask[n.index] = 1;
  }
  r.cloud = detail::with_labels(std::move(r.cloud), r.mask);
  std::sort(idx.begin(), idx.end());
  r.meta.type = DefectType::hole;
  r.meta.center = center;
  r.meta.affected = std::move(idx);
  return r;
}

namespace detail {

inline DefectResult gen_displacement(const PointCloud& cloud, const AnomalyConfig& cfg, int sign) {
  cfg.validate();
  require(cloud.size() >= cfg.m, "insufficient points for displacement defect");
  Rng rng(cfg.seed);
  constexpr int kAttempts = 8;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const auto center = static_cast<std::size_t>(rng.index(cloud.size()));
    const double t = sample_displacement(rng, cfg.mu, cfg.sigma);
    std::vector<double> per_point;
    if (cfg.per_point_jitter)
      for (std::size_t k = 0; k < cfg.m; ++k) per_point.push_back(sample_displacement(rng, cfg.mu, cfg.sigma));
    try {
      DefectResult r = apply_displacement(cloud, center, cfg.m, t, sign, per_point);
      r.meta.seed = cfg.seed;
      return r;
    } catch (const Error& e) {
      if (std::string(e.what()) != "degenerate neighborhood") throw;
    }
  }
  throw Error("degenerate neighborhood after 8 attempts");
}

}  // namespace detail

inline DefectResult gen_bulge(const PointCloud& cloud, const AnomalyConfig& cfg) {
  return detail::gen_displacement(cloud, cfg, +1);
}

inline DefectResult gen_concavity(const PointCloud& cloud, const AnomalyConfig& cfg) {
  return detail::gen_displacement(cloud, cfg, -1);
}

inline DefectResult gen_hole(const PointCloud& cloud, const AnomalyConfig& cfg) {
  cfg.validate();
  require(cloud.size() >= cfg.x + 1 + cfg.hole_boundary_k, "insufficient points for hole defect");
  Rng rng(cfg.seed);
  const auto center = static_cast<std::size_t>(rng.index(cloud.size()));
  DefectResult r = apply_hole(cloud, center, cfg.x, cfg.hole_boundary_k);
  r.meta.seed = cfg.seed;
  return r;
}

/// Random rotation followed by the configured defect (or a uniformly drawn
/// one). DefectType::none yields the rotated cloud with an all-zero mask.
inline DefectResult ano3d_augment(const PointCloud& cloud, const AnomalyConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  const auto angles = geom::RotationAngles::random(rng);
  const PointCloud rotated = geom::rotate(cloud, geom::rotation_matrix(angles));
  DefectType type;
  if (cfg.defect_type) {
    type = *cfg.defect_type;
  } else {
    constexpr std::array kTypes{DefectType::bulge, DefectType::concavity, DefectType::hole};
    type = kTypes[rng.index(kTypes.size())];
  }
  AnomalyConfig sub = cfg;
  sub.seed = rng.next();
  DefectResult r;
  switch (type) {
    case DefectType::none:
      r.cloud = rotated;
      r.mask.assign(rotated.size(), 0);
      r.cloud = detail::with_labels(std::move(r.cloud), r.mask);
      break;
    case DefectType::bulge: r = gen_bulge(rotated, sub); break;
    case DefectType::concavity: r = gen_concavity(rotated, sub); break;
    case DefectType::hole: r = gen_hole(rotated, sub); break;
  }
  r.meta.type = type;
  r.meta.seed = seed;
  r.meta.angles = angles;
  return r;
}

inline nlohmann::json meta_to_json(const DefectMeta& m, const AnomalyConfig& cfg) {
  nlohmann::json j;
  j["type"] = to_string(m.type);
  j["center"] = m.center;
  j["t"] = m.t;
  j["normal"] = {m.normal.x(), m.normal.y(), m.normal.z()};
  j["seed"] = m.seed;
  j["rotation"] = {m.angles.theta_x, m.angles.theta_y, m.angles.theta_z};
  j["config"] = {{"m", cfg.m},
                 {"x", cfg.x},
                 {"mu", cfg.mu},
                 {"sigma", cfg.sigma},
                 {"hole_boundary_k", cfg.hole_boundary_k},
                 {"per_point_jitter", cfg.per_point_jitter}};
  return j;
}

/// Rebuilds the configuration and seed recorded in a meta sidecar.
inline std::pair<AnomalyConfig, std::uint64_t> config_from_meta(const nlohmann::json& j) {
  AnomalyConfig cfg;
  cfg.defect_type = parse_defect_type(j.at("type").get<std::string>());
  const auto& c = j.at("config");
  cfg.m = c.at("m").get<std::size_t>();
  cfg.x = c.at("x").get<std::size_t>();
  cfg.mu = c.at("mu").get<double>();
  cfg.sigma = c.at("sigma").get<double>();
  cfg.hole_boundary_k = c.at("hole_boundary_k").get<std::size_t>();
  cfg.per_point_jitter = c.value("per_point_jitter", false);
  return {cfg, j.at("seed").get<std::uint64_t>()};
}

}  // namespace plane::ano3d
