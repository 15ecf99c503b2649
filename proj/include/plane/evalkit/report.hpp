#pragma once

#include <nlohmann/json.hpp>

#include <array>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "plane/core/parallel.hpp"
#include "plane/dataset/dataset.hpp"
#include "plane/dualprompt/model.hpp"
#include "plane/evalkit/metrics.hpp"
#include "plane/geom3d/io.hpp"

namespace plane::eval {

inline const std::array<std::string, 7>& metric_names() {
  static const std::array<std::string, 7> names{"O-AUROC", "P-AUROC", "P-PRO", "O-AP", "P-AP", "O-F1", "P-F1"};
  return names;
}

struct ReportRow {
  std::string category;
  std::array<double, 7> values{};  // in metric_names() order; NaN when undefined
};

struct RuntimeStats {
  double seconds = 0.0;
  double samples_per_second = 0.0;
  double flops_per_sample = 0.0;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  ReportRow mean{"MEAN", {}};
  RuntimeStats runtime;

  const ReportRow& row(const std::string& category) const {
    for (const auto& r : rows)
      if (r.category == category) return r;
    if (category == "MEAN") return mean;
    throw Error("no report row for category: " + category);
  }

  double value(const std::string& category, const std::string& metric) const {
    const auto& names = metric_names();
    const auto it = std::find(names.begin(), names.end(), metric);
    if (it == names.end()) throw Error("unknown metric: " + metric);
    return row(category).values[static_cast<std::size_t>(it - names.begin())];
  }
};

/// Mean over categories of each metric, skipping undefined entries.
inline ReportRow mean_row(const std::vector<ReportRow>& rows) {
  ReportRow m{"MEAN", {}};
  for (std::size_t k = 0; k < 7; ++k) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& r : rows)
      if (std::isfinite(r.values[k])) {
        s += r.values[k];
        ++n;
      }
    m.values[k] = n ? s / static_cast<double>(n) : std::nan("");
  }
  return m;
}

/// Test samples paired with their predicted maps.
struct ScoredSample {
  const dataset::Sample* sample = nullptr;
  dp::AnomalyMap map;
};

namespace detail {

template <class F>
double or_nan(F&& f) {
  try {
    return f();
  } catch (const Error&) {
    return std::nan("");
  }
}

}  // namespace detail

inline ReportRow category_row(const std::string& category, const std::vector<const ScoredSample*>& items,
                              double fpr_limit, double region_radius = 0.0) {
  std::vector<double> obj, pts;
  std::vector<std::uint8_t> obj_lab, pt_lab;
  std::vector<ProSample> pro;
  for (const auto* s : items) {
    const auto& cloud = s->sample->cloud;
    require(s->map.point_scores.size() == cloud.size(), "score map size does not match cloud: " + category);
    obj.push_back(s->map.object_score);
    obj_lab.push_back(s->sample->label_object ? 1 : 0);
    std::vector<std::uint8_t> mask = cloud.labels ? *cloud.labels : std::vector<std::uint8_t>(cloud.size(), 0);
    pts.insert(pts.end(), s->map.point_scores.begin(), s->map.point_scores.end());
    pt_lab.insert(pt_lab.end(), mask.begin(), mask.end());
    pro.push_back(make_pro_sample(s->map.point_scores, std::move(mask), cloud, region_radius));
  }
  ReportRow r;
  r.category = category;
  r.values = {detail::or_nan([&] { return auroc(obj, obj_lab); }),
              detail::or_nan([&] { return auroc(pts, pt_lab); }),
              detail::or_nan([&] { return aupro(pro, fpr_limit); }),
              detail::or_nan([&] { return average_precision(obj, obj_lab); }),
              detail::or_nan([&] { return average_precision(pts, pt_lab); }),
              detail::or_nan([&] { return f1_max(obj, obj_lab); }),
              detail::or_nan([&] { return f1_max(pts, pt_lab); })};
  return r;
}

/// Metrics per category from precomputed maps; categories in first-seen order.
inline EvalReport evaluate_maps(const std::vector<ScoredSample>& scored, double fpr_limit = 0.3) {
  require(!scored.empty(), "evaluate: empty test split");
  std::vector<std::string> order;
  std::map<std::string, std::vector<const ScoredSample*>> by_cat;
  for (const auto& s : scored) {
    if (!by_cat.count(s.sample->category)) order.push_back(s.sample->category);
    by_cat[s.sample->category].push_back(&s);
  }
  EvalReport rep;
  for (const auto& c : order) rep.rows.push_back(category_row(c, by_cat[c], fpr_limit));
  rep.mean = mean_row(rep.rows);
  return rep;
}

/// Rough multiply-add count of one forward pass.
inline double estimate_flops(const dp::ModelConfig& c, std::size_t n_points) {
  const double g = static_cast<double>(c.point.groups), k = static_cast<double>(c.point.group_size);
  const double d = static_cast<double>(c.point.dim), n = static_cast<double>(n_points);
  auto block = [](double len, double w) { return len * (4 * w * w + 8 * w * w) + 2 * len * len * w; };
  const double embed = g * k * (3 * 32 + 32 * 32 + 32 * 64 + 64 * d) + g * 32 * 64;
  const double point = embed + static_cast<double>(c.point.layers) * block(g, d);
  const double tl = static_cast<double>(c.head.text_prompt_len + 2);
  const double text = 2.0 * static_cast<double>(c.text.layers) * block(tl, d);
  const double seq = g + static_cast<double>(c.head.point_prompt_len + 1);
  const double pcfa = static_cast<double>(c.point.tap_layers.size()) * (seq * 8 * d * d + 2 * g * seq * d + 2 * g * d);
  const double dpcm = d * static_cast<double>(c.head.dpcm_hidden) * 3;
  return 2.0 * (point + text + pcfa + dpcm) + 3.0 * n * static_cast<double>(c.point.tap_layers.size());
}

/// Runs the model on every test sample and scores the maps.
inline EvalReport evaluate(const dp::PlaneModel& model, const std::vector<dataset::Sample>& test,
                           double fpr_limit = 0.3, std::size_t workers = 1,
                           std::vector<ScoredSample>* maps_out = nullptr) {
  require(!test.empty(), "evaluate: empty test split");
  std::vector<ScoredSample> scored(test.size());
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(test.size(), workers, [&](std::size_t i) {
    scored[i].sample = &test[i];
    scored[i].map = model.infer(test[i].cloud, test[i].category);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EvalReport rep = evaluate_maps(scored, fpr_limit);
  rep.runtime.seconds = secs;
  rep.runtime.samples_per_second = secs > 0 ? static_cast<double>(test.size()) / secs : 0.0;
  rep.runtime.flops_per_sample = estimate_flops(model.config(), test[0].cloud.size());
  if (maps_out) *maps_out = std::move(scored);
  return rep;
}

namespace detail {

inline std::string fmt_metric(double v) { return std::isfinite(v) ? geom::detail::fmt_double(v) : "nan"; }

inline double parse_metric(const std::string& s) {
  if (s == "nan") return std::nan("");
  std::size_t pos = 0;
  double v = 0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) throw Error("invalid metric value in report: " + s);
  return v;
}

inline nlohmann::json metric_json(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

}  // namespace detail

inline std::string report_to_csv(const EvalReport& rep) {
  std::string out = "category";
  for (const auto& n : metric_names()) out += "," + n;
  out += "\n";
  auto line = [&](const ReportRow& r) {
    out += r.category;
    for (double v : r.values) out += "," + detail::fmt_metric(v);
    out += "\n";
  };
  for (const auto& r : rep.rows) line(r);
  line(rep.mean);
  return out;
}

inline EvalReport parse_report_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw Error("empty report CSV");
  std::string expect = "category";
  for (const auto& n : metric_names()) expect += "," + n;
  if (line != expect) throw Error("unexpected report CSV header: " + line);
  EvalReport rep;
  bool have_mean = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (cells.size() != 8) throw Error("report CSV row has " + std::to_string(cells.size()) + " fields");
    ReportRow r;
    r.category = cells[0];
    for (std::size_t k = 0; k < 7; ++k) r.values[k] = detail::parse_metric(cells[k + 1]);
    if (r.category == "MEAN") {
      rep.mean = r;
      have_mean = true;
    } else {
      rep.rows.push_back(r);
    }
  }
  if (!have_mean) throw Error("report CSV has no MEAN row");
  return rep;
}

inline nlohmann::json report_to_json(const EvalReport& rep) {
  auto row = [](const ReportRow& r) {
    nlohmann::json j = {{"category", r.category}};
    for (std::size_t k = 0; k < 7; ++k) j[metric_names()[k]] = detail::metric_json(r.values[k]);
    return j;
  };
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : rep.rows) rows.push_back(row(r));
  return {{"metrics", metric_names()},
          {"categories", rows},
          {"mean", row(rep.mean)},
          {"runtime",
           {{"seconds", rep.runtime.seconds},
            {"samples_per_second", rep.runtime.samples_per_second},
            {"flops_per_sample", rep.runtime.flops_per_sample}}}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  auto row = [](const nlohmann::json& r) {
    ReportRow out;
    out.category = r.at("category");
    for (std::size_t k = 0; k < 7; ++k) {
      const auto& v = r.at(metric_names()[k]);
      out.values[k] = v.is_null() ? std::nan("") : v.get<double>();
    }
    return out;
  };
  EvalReport rep;
  for (const auto& r : j.at("categories")) rep.rows.push_back(row(r));
  rep.mean = row(j.at("mean"));
  const auto& rt = j.at("runtime");
  rep.runtime = {rt.at("seconds"), rt.at("samples_per_second"), rt.at("flops_per_sample")};
  return rep;
}

inline void write_report(const std::filesystem::path& dir, const EvalReport& rep) {
  std::filesystem::create_directories(dir);
  geom::detail::write_file(dir / "report.csv", report_to_csv(rep));
  geom::detail::write_file(dir / "report.json", report_to_json(rep).dump(2) + "\n");
}

/// Blue -> cyan -> green -> yellow -> red ramp for a score in [0,1].
inline std::array<std::uint8_t, 3> heat_color(double s) {
  s = std::clamp(s, 0.0, 1.0);
  const double r = std::clamp(1.5 - std::abs(4.0 * s - 3.0), 0.0, 1.0);
  const double g = std::clamp(1.5 - std::abs(4.0 * s - 2.0), 0.0, 1.0);
  const double b = std::clamp(1.5 - std::abs(4.0 * s - 1.0), 0.0, 1.0);
  auto q = [](double v) { return static_cast<std::uint8_t>(std::lround(v * 255.0)); };
  return {q(r), q(g), q(b)};
}

/// ASCII PLY with a float "score" property and an 8-bit heat color per vertex.
inline std::string score_ply(const geom::PointCloud& cloud, const std::vector<double>& scores) {
  require(scores.size() == cloud.size(), "score_ply: score count does not match cloud");
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\n";
  if (!cloud.class_name.empty()) os << "comment class " << cloud.class_name << "\n";
  os << "element vertex " << cloud.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nproperty double score\n"
        "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    const auto c = heat_color(scores[i]);
    os << geom::detail::fmt_double(p.x()) << ' ' << geom::detail::fmt_double(p.y()) << ' '
       << geom::detail::fmt_double(p.z()) << ' ' << geom::detail::fmt_double(scores[i]) << ' ' << int(c[0]) << ' '
       << int(c[1]) << ' ' << int(c[2]) << '\n';
  }
  return os.str();
}

inline void write_score_ply(const std::filesystem::path& path, const geom::PointCloud& cloud,
                            const std::vector<double>& scores) {
  geom::detail::write_file(path, score_ply(cloud, scores));
}

struct BenchResult {
  std::vector<double> totals;  // seconds per repetition
  std::vector<dp::StageTimes> stages;
  double median_total = 0.0;
  dp::StageTimes median_stage;
  double samples_per_second = 0.0;
  double flops_per_sample = 0.0;
  std::size_t points = 0;
};

inline double median(std::vector<double> v) {
  require(!v.empty(), "median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline BenchResult benchmark(const dp::PlaneModel& model, const geom::PointCloud& cloud, const std::string& cls,
                             std::size_t repetitions) {
  require(repetitions >= 3, "benchmark needs at least 3 repetitions");
  BenchResult r;
  r.points = cloud.size();
  for (std::size_t i = 0; i < repetitions; ++i) {
    dp::StageTimes st;
    const auto t0 = std::chrono::steady_clock::now();
    (void)model.infer(cloud, cls, &st);
    r.totals.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    r.stages.push_back(st);
  }
  std::vector<double> e, h, p;
  for (const auto& s : r.stages) {
    e.push_back(s.encode);
    h.push_back(s.head);
    p.push_back(s.interp);
  }
  r.median_total = median(r.totals);
  r.median_stage = {median(e), median(h), median(p)};
  r.samples_per_second = r.median_total > 0 ? 1.0 / r.median_total : 0.0;
  r.flops_per_sample = estimate_flops(model.config(), cloud.size());
  return r;
}

inline nlohmann::json bench_to_json(const BenchResult& r) {
  nlohmann::json reps = nlohmann::json::array();
  for (std::size_t i = 0; i < r.totals.size(); ++i)
    reps.push_back({{"total", r.totals[i]},
                    {"encode", r.stages[i].encode},
                    {"head", r.stages[i].head},
                    {"interp", r.stages[i].interp}});
  return {{"points", r.points},
          {"repetitions", r.totals.size()},
          {"median_seconds", r.median_total},
          {"max_seconds", *std::max_element(r.totals.begin(), r.totals.end())},
          {"samples_per_second", r.samples_per_second},
          {"flops_per_sample", r.flops_per_sample},
          {"median_stage_seconds",
           {{"encode", r.median_stage.encode}, {"head", r.median_stage.head}, {"interp", r.median_stage.interp}}},
          {"timings", reps}};
}

}  // namespace plane::eval
