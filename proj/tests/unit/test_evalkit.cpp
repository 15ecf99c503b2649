#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "plane/ano3d/ano3d.hpp"
#include "plane/dataset/dataset.hpp"
#include "plane/evalkit/metrics.hpp"
#include "plane/evalkit/report.hpp"
#include "support/oracles.hpp"

using namespace plane;
using geom::PointCloud;
using geom::Vec3;

namespace {

using Labels = std::vector<std::uint8_t>;

struct Instance {
  std::vector<double> s;
  Labels y;
};

Instance random_instance(Rng& rng, std::size_t n, bool ties) {
  Instance in;
  for (std::size_t i = 0; i < n; ++i) {
    in.s.push_back(ties ? std::floor(rng.uniform() * 5) / 5 : rng.uniform());
    in.y.push_back(rng.uniform() < 0.4);
  }
  in.y[0] = 1;
  in.y[1] = 0;
  return in;
}

std::vector<double> exp_of(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v) out.push_back(std::exp(3 * x));
  return out;
}

}  // namespace

TEST(auroc, basics_and_errors) {
  EXPECT_EQ(eval::auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, Labels{0, 0, 1, 1}), 1.0);
  EXPECT_EQ(eval::auroc(std::vector<double>(6, 0.3), Labels{0, 1, 0, 1, 1, 0}), 0.5);
  try {
    eval::auroc(std::vector<double>{0.1, 0.2}, Labels{1, 1});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("undefined AUROC"), std::string::npos);
  }
}

TEST(auroc, matches_pairwise_oracle) {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    const auto in = random_instance(rng, 20 + rng.index(30), t % 2);
    EXPECT_NEAR(eval::auroc(in.s, in.y), oracle::auroc_pairs(in.s, in.y), 1e-12);
    std::vector<double> neg;
    for (double v : in.s) neg.push_back(-v);
    if (t % 2 == 0) {
      EXPECT_NEAR(eval::auroc(in.s, in.y) + eval::auroc(neg, in.y), 1.0, 1e-12);
    }
  }
}

TEST(average_precision, closed_forms_and_oracle) {
  EXPECT_EQ(eval::average_precision(std::vector<double>{0.9, 0.8, 0.1, 0.2}, Labels{1, 1, 0, 0}), 1.0);
  for (std::size_t k = 1; k <= 6; ++k) {
    std::vector<double> s{0.9, 0.8, 0.7, 0.6, 0.5, 0.4};
    Labels y(6, 0);
    y[k - 1] = 1;
    EXPECT_NEAR(eval::average_precision(s, y), 1.0 / double(k), 1e-15);
  }
  Rng rng(2);
  for (int t = 0; t < 30; ++t) {
    const auto in = random_instance(rng, 30, t % 2);
    EXPECT_NEAR(eval::average_precision(in.s, in.y), oracle::ap_sweep(in.s, in.y), 1e-12);
  }
  EXPECT_THROW(eval::average_precision(std::vector<double>{0.1, 0.3}, Labels{0, 0}), Error);
}

TEST(f1_max, closed_forms_and_oracle) {
  EXPECT_EQ(eval::f1_max(std::vector<double>{0.9, 0.8, 0.1}, Labels{1, 1, 0}), 1.0);
  Rng rng(3);
  for (int t = 0; t < 30; ++t) {
    const auto in = random_instance(rng, 25, t % 2);
    const double f = eval::f1_max(in.s, in.y);
    EXPECT_NEAR(f, oracle::f1_sweep(in.s, in.y), 1e-12);
    const double p = double(std::count(in.y.begin(), in.y.end(), 1)), n = double(in.y.size()) - p;
    EXPECT_GE(f + 1e-15, 2 * p / (p + n + p));
  }
  EXPECT_THROW(eval::f1_max(std::vector<double>{0.1}, Labels{0}), Error);
}

TEST(metrics, invariant_under_monotone_transform) {
  Rng rng(4);
  const auto in = random_instance(rng, 40, false);
  const auto ex = exp_of(in.s);
  EXPECT_EQ(eval::auroc(in.s, in.y), eval::auroc(ex, in.y));
  EXPECT_NEAR(eval::average_precision(in.s, in.y), eval::average_precision(ex, in.y), 1e-15);
  EXPECT_NEAR(eval::f1_max(in.s, in.y), eval::f1_max(ex, in.y), 1e-15);
}

TEST(extract_regions, single_bulge_and_two_far_defects) {
  const auto cloud = dataset::synth_shape("sphere", 2048, 0.0, 5);
  ano3d::AnomalyConfig cfg;
  cfg.defect_type = ano3d::DefectType::bulge;
  cfg.seed = 1;
  const auto r = ano3d::gen_bulge(cloud, cfg);
  const auto regions = eval::extract_regions(r.mask, cloud);
  ASSERT_EQ(regions.size(), 1u);
  EXPECT_EQ(regions[0].size(), 64u);

  // Two masks around antipodal points.
  Labels two(cloud.size(), 0);
  const geom::KdTree tree(cloud.points);
  for (const Vec3& q : {Vec3(1, 0, 0), Vec3(-1, 0, 0)})
    for (const auto& nb : tree.knn(q, 40)) two[nb.index] = 1;
  EXPECT_EQ(eval::extract_regions(two, cloud).size(), 2u);
}

TEST(extract_regions, matches_union_find_oracle) {
  Rng rng(6);
  for (int t = 0; t < 10; ++t) {
    PointCloud c;
    Labels mask;
    for (int i = 0; i < 150; ++i) {
      c.points.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
      mask.push_back(rng.uniform() < 0.3);
    }
    const double r = 0.15;
    const auto got = eval::extract_regions(mask, c, r);
    auto want = oracle::components_union_find(mask, c, r);
    EXPECT_EQ(got, want);
  }
}

TEST(aupro, perfect_anti_and_dense_oracle) {
  Rng rng(7);
  PointCloud c;
  Labels mask(40, 0);
  for (int i = 0; i < 40; ++i) c.points.emplace_back(i < 20 ? i * 0.01 : 5 + i * 0.01, 0, 0);
  for (int i : {2, 3, 4, 5, 25, 26, 27}) mask[i] = 1;
  std::vector<double> perfect(mask.begin(), mask.end());
  const auto sp = eval::make_pro_sample(perfect, mask, c, 0.015);
  ASSERT_EQ(sp.regions.size(), 2u);
  EXPECT_NEAR(eval::aupro({sp}), 1.0, 1e-12);
  std::vector<double> anti;
  for (auto m : mask) anti.push_back(1.0 - m);
  EXPECT_LT(eval::aupro({eval::make_pro_sample(anti, mask, c, 0.015)}), 1e-9);

  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(40);
    for (auto& v : s) v = t % 2 ? std::floor(rng.uniform() * 8) / 8 : rng.uniform();
    const auto sample = eval::make_pro_sample(s, mask, c, 0.015);
    const oracle::ProCase pc{s, mask, sample.regions};
    for (double lim : {0.3, 1.0}) EXPECT_NEAR(eval::aupro({sample}, lim), oracle::aupro_dense({pc}, lim), 1e-9);
    EXPECT_NEAR(eval::aupro({sample}), eval::aupro({eval::make_pro_sample(exp_of(s), mask, c, 0.015)}), 1e-12);
  }
  EXPECT_THROW(eval::aupro({eval::make_pro_sample(std::vector<double>(40, 0.1), Labels(40, 0), c)}), Error);
}

TEST(report, oracle_maps_score_one_and_mean_row) {
  dataset::DatasetSpec spec;
  spec.categories = {"sphere", "box"};
  spec.train_per_class = 1;
  spec.test_normal_per_class = 3;
  spec.test_anomalous_per_class = 3;
  spec.points_per_sample = 512;
  const auto splits = dataset::build_dataset(spec, {});
  std::vector<eval::ScoredSample> scored;
  for (const auto& s : splits.test) {
    eval::ScoredSample ss;
    ss.sample = &s;
    ss.map.point_scores.assign(s.cloud.labels->begin(), s.cloud.labels->end());
    ss.map.object_score = *std::max_element(ss.map.point_scores.begin(), ss.map.point_scores.end());
    scored.push_back(ss);
  }
  const auto rep = eval::evaluate_maps(scored);
  ASSERT_EQ(rep.rows.size(), 2u);
  for (const auto& row : rep.rows)
    for (double v : row.values) EXPECT_NEAR(v, 1.0, 1e-12) << row.category;
  for (std::size_t k = 0; k < 7; ++k)
    EXPECT_NEAR(rep.mean.values[k], 0.5 * (rep.rows[0].values[k] + rep.rows[1].values[k]), 1e-15);
  EXPECT_EQ(rep.value("box", "P-PRO"), rep.rows[1].values[2]);
  EXPECT_THROW(rep.value("box", "X-AUROC"), Error);
}

TEST(report, undefined_metrics_become_nan_and_mean_skips_them) {
  eval::ReportRow a{"a", {0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.4}};
  eval::ReportRow b{"b", {std::nan(""), 0.2, 0.3, 0.4, 0.5, 0.6, 0.6}};
  const auto m = eval::mean_row({a, b});
  EXPECT_DOUBLE_EQ(m.values[0], 0.5);
  EXPECT_DOUBLE_EQ(m.values[1], 0.4);
}

TEST(report, csv_and_json_round_trip) {
  eval::EvalReport rep;
  rep.rows.push_back({"sphere", {0.1234567890123, 0.5, 0.25, 1.0, 0.0, 0.75, 1.0 / 3.0}});
  rep.rows.push_back({"box", {std::nan(""), 0.9, 0.8, 0.7, 0.6, 0.5, 0.4}});
  rep.mean = eval::mean_row(rep.rows);
  const auto csv = eval::report_to_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "category,O-AUROC,P-AUROC,P-PRO,O-AP,P-AP,O-F1,P-F1");
  const auto back = eval::parse_report_csv(csv);
  EXPECT_EQ(eval::report_to_csv(back), csv);
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].values[6], rep.rows[0].values[6]);
  EXPECT_TRUE(std::isnan(back.rows[1].values[0]));
  const auto jback = eval::report_from_json(nlohmann::json::parse(eval::report_to_json(rep).dump()));
  EXPECT_EQ(eval::report_to_csv(jback), csv);
}

TEST(score_ply, heat_colors_and_properties) {
  EXPECT_EQ(eval::heat_color(0.0), (std::array<std::uint8_t, 3>{0, 0, 128}));
  EXPECT_EQ(eval::heat_color(1.0), (std::array<std::uint8_t, 3>{128, 0, 0}));
  EXPECT_EQ(eval::heat_color(0.5)[1], 255);
  PointCloud c;
  c.points = {Vec3(0, 0, 0), Vec3(1, 2, 3)};
  const auto ply = eval::score_ply(c, {0.25, 0.75});
  EXPECT_NE(ply.find("property double score"), std::string::npos);
  EXPECT_NE(ply.find("property uchar red"), std::string::npos);
  const auto back = geom::parse_ply(ply);
  EXPECT_EQ(back.points, c.points);
  EXPECT_THROW(eval::score_ply(c, {0.1}), Error);
}

TEST(benchmark, repetitions_median_and_stages) {
  dp::ModelConfig cfg;
  cfg.categories = {"sphere"};
  cfg.point.layers = 4;
  cfg.point.tap_layers = {2, 4};
  const dp::PlaneModel model(cfg);
  const auto small = dataset::synth_shape("sphere", 2048, 0.002, 1);
  const auto big = dataset::synth_shape("sphere", 8192, 0.002, 1);
  const auto r = eval::benchmark(model, small, "sphere", 3);
  EXPECT_EQ(r.totals.size(), 3u);
  EXPECT_EQ(r.median_total, eval::median(r.totals));
  EXPECT_LE(r.median_total, *std::max_element(r.totals.begin(), r.totals.end()));
  for (std::size_t i = 0; i < 3; ++i) {
    const double staged = r.stages[i].encode + r.stages[i].head + r.stages[i].interp;
    EXPECT_LT(std::abs(staged - r.totals[i]) / r.totals[i], 0.10);
  }
  EXPECT_GT(eval::benchmark(model, big, "sphere", 3).median_total, r.median_total);
  EXPECT_THROW(eval::benchmark(model, small, "sphere", 2), Error);
  const auto j = eval::bench_to_json(r);
  EXPECT_EQ(j.at("repetitions"), 3);
  EXPECT_TRUE(j.contains("median_seconds"));
}
