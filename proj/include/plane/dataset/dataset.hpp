#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <map>
#include <sstream>
#include <filesystem>
#include <string>
#include <vector>

#include "plane/ano3d/ano3d.hpp"
#include "plane/core/digest.hpp"
#include "plane/core/parallel.hpp"
#include "plane/dataset/shapes.hpp"
#include "plane/geom3d/io.hpp"
#include "plane/geom3d/sampling.hpp"

namespace plane::dataset {

namespace fs = std::filesystem;

struct Sample {
  PointCloud cloud;
  int label_object = 0;
  std::string category;
};

struct Splits {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

struct DatasetSpec {
  std::vector<std::string> categories{"sphere", "box", "cylinder"};
  std::size_t train_per_class = 4;
  std::size_t test_normal_per_class = 10;
  std::size_t test_anomalous_per_class = 10;
  std::size_t points_per_sample = 2048;
  double jitter = 0.002;
  std::uint64_t seed = 0;
  std::size_t workers = 1;

  void validate() const {
    require(!categories.empty(), "DatasetSpec: no categories");
    require(train_per_class >= 1 && test_normal_per_class >= 1 && test_anomalous_per_class >= 1,
            "DatasetSpec: counts must be >= 1");
    require(points_per_sample >= 256, "DatasetSpec: points_per_sample must be >= 256");
    for (const auto& c : categories) parse_shape(c);
  }
};

inline Sample make_sample(PointCloud cloud, std::string category) {
  Sample s;
  s.label_object = cloud.any_anomalous() ? 1 : 0;
  s.category = std::move(category);
  s.cloud = std::move(cloud);
  s.cloud.class_name = s.category;
  return s;
}

/// Few-shot desk corpus. Train clouds are untouched normal shapes; test
/// normals are randomly rotated copies of fresh shapes and test anomalies
/// pass through the Ano3D augmentation. Every cloud has exactly
/// points_per_sample points (hole bases are generated X+1 points larger).
inline Splits build_dataset(const DatasetSpec& spec, const ano3d::AnomalyConfig& ano_cfg) {
  spec.validate();
  ano_cfg.validate();
  const std::size_t n = spec.points_per_sample;
  const std::size_t per_class = spec.train_per_class + spec.test_normal_per_class + spec.test_anomalous_per_class;
  const std::size_t total = per_class * spec.categories.size();
  std::vector<Sample> out(total);
  std::vector<int> is_train(total, 0);

  parallel_for(total, spec.workers, [&](std::size_t job) {
    const std::size_t ci = job / per_class, si = job % per_class;
    const std::string& cat = spec.categories[ci];
    const ShapeKind kind = parse_shape(cat);
    const std::uint64_t sample_seed = mix_seed(mix_seed(spec.seed, ci + 1), si + 1);
    if (si < spec.train_per_class) {
      PointCloud c = synth_shape(kind, n, spec.jitter, sample_seed);
      c.labels = std::vector<std::uint8_t>(c.size(), 0);
      out[job] = make_sample(std::move(c), cat);
      is_train[job] = 1;
      return;
    }
    ano3d::AnomalyConfig cfg = ano_cfg;
    Rng rng(mix_seed(sample_seed, 0xD5));
    if (si < spec.train_per_class + spec.test_normal_per_class) {
      cfg.defect_type = ano3d::DefectType::none;
    } else if (!cfg.defect_type || *cfg.defect_type == ano3d::DefectType::none) {
      constexpr std::array kTypes{ano3d::DefectType::bulge, ano3d::DefectType::concavity, ano3d::DefectType::hole};
      cfg.defect_type = kTypes[rng.index(kTypes.size())];
    }
    const std::size_t base_n = *cfg.defect_type == ano3d::DefectType::hole ? n + cfg.x + 1 : n;
    const PointCloud base = synth_shape(kind, base_n, spec.jitter, sample_seed);
    auto r = ano3d::ano3d_augment(base, cfg, rng.next());
    out[job] = make_sample(std::move(r.cloud), cat);
  });

  Splits s;
  for (std::size_t i = 0; i < total; ++i) (is_train[i] ? s.train : s.test).push_back(std::move(out[i]));
  return s;
}

inline std::string cloud_digest(const PointCloud& c) { return sha256_hex(geom::to_ply(c)); }

// ---------------------------------------------------------------------------
// Manifests

struct ManifestEntry {
  std::string path;  // relative to the manifest directory unless absolute
  std::string category;
  std::string split;  // "train" or "test"
  int label = 0;
  std::string gt_path;  // empty when labels are embedded or absent
};

struct Manifest {
  std::vector<ManifestEntry> entries;
  fs::path base_dir;
};

inline nlohmann::json manifest_to_json(const Manifest& m) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json j{{"path", e.path}, {"category", e.category}, {"split", e.split}, {"label", e.label}};
    j["gt_path"] = e.gt_path.empty() ? nlohmann::json(nullptr) : nlohmann::json(e.gt_path);
    arr.push_back(std::move(j));
  }
  return {{"format_version", 1}, {"samples", arr}};
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  geom::detail::write_file(path, manifest_to_json(m).dump(2) + "\n");
}

inline Manifest read_manifest(const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(geom::detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("invalid manifest " + path.string() + ": " + e.what());
  }
  Manifest m;
  m.base_dir = path.parent_path();
  for (const auto& s : j.at("samples")) {
    ManifestEntry e;
    e.path = s.at("path").get<std::string>();
    e.category = s.at("category").get<std::string>();
    e.split = s.at("split").get<std::string>();
    e.label = s.value("label", 0);
    if (s.contains("gt_path") && !s["gt_path"].is_null()) e.gt_path = s["gt_path"].get<std::string>();
    m.entries.push_back(std::move(e));
  }
  return m;
}

inline fs::path resolve(const Manifest& m, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : m.base_dir / path;
}

/// Per-point 0/1 labels from a GT file: either one label per row, or rows
/// whose last column is the label (e.g. "x y z label").
inline std::vector<std::uint8_t> read_gt_labels(const fs::path& path) {
  std::istringstream in(geom::detail::read_file(path));
  std::vector<std::uint8_t> labels;
  std::string line;
  while (std::getline(in, line)) {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    std::vector<double> vals;
    double v;
    while (ls >> v) vals.push_back(v);
    if (vals.empty()) continue;
    labels.push_back(geom::detail::parse_label(vals.back(), path.string()));
  }
  return labels;
}

inline Sample load_entry(const Manifest& m, const ManifestEntry& e) {
  const fs::path p = resolve(m, e.path);
  PointCloud c = geom::read_cloud(p);
  if (!e.gt_path.empty()) {
    const fs::path gp = resolve(m, e.gt_path);
    auto labels = read_gt_labels(gp);
    require(labels.size() == c.size(), "GT label count does not match points: " + gp.string());
    c.labels = std::move(labels);
  }
  Sample s = make_sample(std::move(c), e.category);
  if (!s.cloud.has_labels()) s.label_object = e.label;
  return s;
}

inline Splits load_manifest(const fs::path& path, std::size_t workers = 1) {
  const Manifest m = read_manifest(path);
  std::vector<Sample> all(m.entries.size());
  parallel_for(all.size(), workers, [&](std::size_t i) { all[i] = load_entry(m, m.entries[i]); });
  Splits s;
  for (std::size_t i = 0; i < all.size(); ++i)
    (m.entries[i].split == "train" ? s.train : s.test).push_back(std::move(all[i]));
  return s;
}

/// Writes every sample as PLY under `dir` and returns the manifest.
inline Manifest write_splits(const fs::path& dir, const Splits& splits) {
  Manifest m;
  m.base_dir = dir;
  auto emit = [&](const std::vector<Sample>& v, const std::string& split) {
    std::map<std::string, std::size_t> counter;
    for (const auto& s : v) {
      char name[64];
      std::snprintf(name, sizeof name, "%s_%03zu.ply", s.category.c_str(), counter[s.category]++);
      const std::string rel = split + "/" + name;
      geom::write_ply(dir / rel, s.cloud);
      m.entries.push_back({rel, s.category, split, s.label_object, ""});
    }
  };
  emit(splits.train, "train");
  emit(splits.test, "test");
  write_manifest(dir / "manifest.json", m);
  return m;
}

// ---------------------------------------------------------------------------
// Published dataset layouts

enum class RealLayout { anomaly_shapenet, real3d_ad };

inline RealLayout parse_layout(const std::string& s) {
  if (s == "anomaly_shapenet") return RealLayout::anomaly_shapenet;
  if (s == "real3d_ad") return RealLayout::real3d_ad;
  throw Error("unknown dataset layout: " + s);
}

/// Indexes `<root>/<category>/{train,test}/` point files (.pcd/.ply/.txt/.xyz)
/// with ground truth in `<root>/<category>/{GT,gt}/<stem>.txt`. Test files
/// without a GT file are treated as normal. Both layouts share this shape;
/// Real3D-AD additionally keeps GT next to the test clouds which is also
/// accepted.
inline Manifest index_real_dataset(const fs::path& root, RealLayout layout) {
  if (!fs::is_directory(root)) throw Error("dataset root not found: " + root.string());
  auto is_cloud = [](const fs::path& p) {
    const auto e = geom::detail::lower(p.extension().string());
    return e == ".pcd" || e == ".ply" || e == ".xyz" || (e == ".txt");
  };
  Manifest m;
  m.base_dir = root;
  std::vector<fs::path> cats;
  for (const auto& d : fs::directory_iterator(root))
    if (d.is_directory()) cats.push_back(d.path());
  std::sort(cats.begin(), cats.end());
  if (cats.empty()) throw Error("no samples found under " + root.string());
  for (const auto& cat_dir : cats) {
    const std::string cat = cat_dir.filename().string();
    std::vector<fs::path> gt_dirs{cat_dir / "GT", cat_dir / "gt"};
    if (layout == RealLayout::real3d_ad) gt_dirs.push_back(cat_dir / "test");
    std::size_t found = 0;
    for (const std::string split : {"train", "test"}) {
      const fs::path dir = cat_dir / split;
      if (!fs::is_directory(dir)) continue;
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(dir))
        if (f.is_regular_file() && is_cloud(f.path())) files.push_back(f.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        ManifestEntry e;
        // A .txt beside .pcd files in the test directory is a GT sidecar.
        if (geom::detail::lower(f.extension().string()) == ".txt" && split == "test") {
          auto sibling = f;
          if (fs::exists(sibling.replace_extension(".pcd")) || fs::exists(sibling.replace_extension(".ply"))) continue;
        }
        e.path = fs::relative(f, root).string();
        e.category = cat;
        e.split = split;
        if (split == "test") {
          for (const auto& gd : gt_dirs) {
            fs::path g = gd / f.filename();
            g.replace_extension(".txt");
            if (g != f && fs::exists(g)) {
              e.gt_path = fs::relative(g, root).string();
              break;
            }
          }
        }
        m.entries.push_back(std::move(e));
        ++found;
      }
    }
    if (found == 0) throw Error("no samples found in category " + cat_dir.string());
  }
  return m;
}

inline Splits load_real_dataset(const fs::path& root, RealLayout layout, std::size_t workers = 1) {
  const Manifest m = index_real_dataset(root, layout);
  std::vector<Sample> all(m.entries.size());
  parallel_for(all.size(), workers, [&](std::size_t i) {
    all[i] = load_entry(m, m.entries[i]);
    // object label follows the point labels for real data
    all[i].label_object = all[i].cloud.any_anomalous() ? 1 : 0;
  });
  Splits s;
  for (std::size_t i = 0; i < all.size(); ++i)
    (m.entries[i].split == "train" ? s.train : s.test).push_back(std::move(all[i]));
  return s;
}

}  // namespace plane::dataset
