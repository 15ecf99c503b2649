#pragma once

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <iostream>
#include <set>

#include "plane/evalkit/report.hpp"
#include "plane/train/trainer.hpp"

namespace plane::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kVersion = "plane 0.1.0";

inline std::string utc_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Records one command invocation beside its outputs.
struct RunManifest {
  std::string command;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs, outputs;
  std::string started_at = utc_now();

  void write(const fs::path& dir) const {
    json j = {{"command", command},  {"config", config},         {"seed", seed},
              {"inputs", inputs},    {"outputs", outputs},       {"code_version", kVersion},
              {"started_at", started_at}, {"finished_at", utc_now()}};
    geom::detail::write_file(dir / "run_manifest.json", j.dump(2) + "\n");
  }
};

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

inline std::vector<std::size_t> parse_taps(const std::string& s) {
  std::vector<std::size_t> out;
  for (const auto& t : split_list(s)) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(t, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != t.size()) throw Error("invalid tap layer: " + t);
    out.push_back(v);
  }
  if (out.empty()) throw Error("--taps is empty");
  return out;
}

inline void ensure_distinct(const fs::path& input, const fs::path& output) {
  std::error_code ec;
  if (fs::exists(output) && fs::equivalent(input, output, ec)) throw Error("output would overwrite input: " + output.string());
}

/// Defect flags shared by synth, inject and train.
struct DefectFlags {
  std::string type;
  std::size_t m = 64, x = 63;
  double mu = 0.05, sigma = 0.02;

  void add(CLI::App* app, bool with_type) {
    if (with_type) app->add_option("--type", type, "bulge, concavity, hole or none (default: random)");
    app->add_option("--m", m, "displaced points for bulge/concavity");
    app->add_option("--x", x, "removed neighbours for hole");
    app->add_option("--mu", mu, "mean displacement");
    app->add_option("--sigma", sigma, "displacement std");
  }

  ano3d::AnomalyConfig config() const {
    ano3d::AnomalyConfig c;
    if (!type.empty() && type != "random") c.defect_type = ano3d::parse_defect_type(type);
    c.m = m;
    c.x = x;
    c.mu = mu;
    c.sigma = sigma;
    c.validate();
    return c;
  }

  json to_json() const { return {{"type", type.empty() ? "random" : type}, {"m", m}, {"x", x}, {"mu", mu}, {"sigma", sigma}}; }
};

inline std::string class_of(const geom::PointCloud& cloud, const std::string& flag) {
  if (!flag.empty()) return flag;
  if (!cloud.class_name.empty()) return cloud.class_name;
  throw Error("input has no class comment; pass --class");
}

/// Parses argv and runs one subcommand. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Point-cloud anomaly detection with dual prompts", "plane"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::uint64_t seed = 0;
  std::size_t workers = 0;
  std::string out_dir, manifest_path, input, checkpoint, cls;
  DefectFlags defect;

  auto common = [&](CLI::App* c) {
    c->add_option("--seed", seed, "random seed");
    c->add_option("--workers", workers, "worker threads (0 = logical cores; PLANE_NUM_WORKERS overrides)");
  };

  // synth
  auto* synth = app.add_subcommand("synth", "build the synthetic desk corpus");
  std::string categories = "sphere,box,cylinder";
  std::size_t n_train = 4, n_test_normal = 10, n_test_anom = 10, points = 2048;
  double jitter = 0.002;
  common(synth);
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--categories", categories, "comma-separated shape names");
  synth->add_option("--train", n_train, "normal training samples per category");
  synth->add_option("--test-normal", n_test_normal, "normal test samples per category");
  synth->add_option("--test-anomalous", n_test_anom, "defected test samples per category");
  synth->add_option("--points", points, "points per sample");
  synth->add_option("--jitter", jitter, "per-point noise std");
  defect.add(synth, true);

  // inject
  auto* inject = app.add_subcommand("inject", "apply one pseudo-anomaly to a point cloud");
  std::string replay;
  common(inject);
  inject->add_option("--input", input, "input point cloud")->required();
  inject->add_option("--out", out_dir, "output directory")->required();
  inject->add_option("--replay", replay, "meta JSON from an earlier inject");
  defect.add(inject, true);

  // train
  auto* train_cmd = app.add_subcommand("train", "fit prompts and adapters on a manifest's train split");
  train::TrainConfig tc;
  dp::ModelConfig mc;
  std::string taps = "2,5,8,11", config_file, loss = "both";
  std::uint64_t encoder_seed = mc.encoder_seed;
  std::string encoder_weights;
  common(train_cmd);
  train_cmd->add_option("--manifest", manifest_path, "dataset manifest")->required();
  train_cmd->add_option("--out", out_dir, "output directory")->required();
  train_cmd->add_option("--config", config_file, "training config (key=value or JSON), flags override");
  train_cmd->add_option("--epochs", tc.epochs, "training epochs");
  train_cmd->add_option("--batch", tc.batch_size, "batch size");
  train_cmd->add_option("--lr-adapter", tc.lr_adapter, "learning rate of the PCFA adapters");
  train_cmd->add_option("--lr-prompts", tc.lr_prompts_dpcm, "learning rate of prompts and DPCM");
  train_cmd->add_option("--text-prompt-len", mc.head.text_prompt_len, "static text prompt length");
  train_cmd->add_option("--point-prompt-len", mc.head.point_prompt_len, "static point prompt length");
  train_cmd->add_option("--taps", taps, "comma-separated 1-based tap layers");
  train_cmd->add_option("--loss", loss, "both, focal or dice");
  train_cmd->add_option("--temperature", mc.head.temperature, "cosine multiplier in the score softmax");
  train_cmd->add_option("--anomaly-ratio", tc.anomaly_ratio, "pseudo-anomalous share of each batch");
  train_cmd->add_option("--checkpoint-every", tc.checkpoint_every, "epochs between periodic checkpoints");
  train_cmd->add_option("--encoder-seed", encoder_seed, "seed of the frozen encoder weights");
  train_cmd->add_option("--encoder-weights", encoder_weights, "external frozen encoder checkpoint");
  defect.add(train_cmd, true);

  // infer
  auto* infer = app.add_subcommand("infer", "score one point cloud");
  common(infer);
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer->add_option("--input", input, "input point cloud")->required();
  infer->add_option("--out", out_dir, "output directory")->required();
  infer->add_option("--class", cls, "category name (default: PLY class comment)");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a manifest's test split");
  double fpr_limit = 0.3;
  bool save_maps = false;
  common(eval_cmd);
  eval_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", manifest_path, "dataset manifest")->required();
  eval_cmd->add_option("--out", out_dir, "output directory")->required();
  eval_cmd->add_option("--fpr-limit", fpr_limit, "AU-PRO integration limit");
  eval_cmd->add_flag("--save-maps", save_maps, "write a colored score PLY per test sample");

  // bench
  auto* bench = app.add_subcommand("bench", "time inference on one point cloud");
  std::size_t reps = 5;
  common(bench);
  bench->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  bench->add_option("--input", input, "input point cloud")->required();
  bench->add_option("--out", out_dir, "output directory")->required();
  bench->add_option("--reps", reps, "repetitions (>= 3)");
  bench->add_option("--class", cls, "category name (default: PLY class comment)");

  // ingest
  auto* ingest = app.add_subcommand("ingest", "index a published dataset directory into a manifest");
  std::string root, layout = "anomaly_shapenet";
  common(ingest);
  ingest->add_option("--root", root, "dataset root")->required();
  ingest->add_option("--layout", layout, "anomaly_shapenet or real3d_ad");
  ingest->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    const std::size_t nw = resolve_workers(workers);
    RunManifest rm;
    rm.seed = seed;
    const fs::path out_path(out_dir);

    if (synth->parsed()) {
      rm.command = "synth";
      dataset::DatasetSpec spec;
      spec.categories = split_list(categories);
      spec.train_per_class = n_train;
      spec.test_normal_per_class = n_test_normal;
      spec.test_anomalous_per_class = n_test_anom;
      spec.points_per_sample = points;
      spec.jitter = jitter;
      spec.seed = seed;
      spec.workers = nw;
      const auto splits = dataset::build_dataset(spec, defect.config());
      const auto m = dataset::write_splits(out_path, splits);
      rm.config = {{"categories", spec.categories}, {"train", n_train},   {"test_normal", n_test_normal},
                   {"test_anomalous", n_test_anom}, {"points", points},   {"jitter", jitter},
                   {"defect", defect.to_json()}};
      for (const auto& e : m.entries) rm.outputs.push_back(e.path);
      rm.outputs.push_back("manifest.json");
      rm.write(out_path);
      out << "wrote " << m.entries.size() << " samples to " << out_path.string() << "\n";
    } else if (inject->parsed()) {
      rm.command = "inject";
      const auto cloud = geom::read_cloud(input);
      ano3d::AnomalyConfig cfg;
      std::uint64_t s = seed;
      if (!replay.empty()) {
        std::tie(cfg, s) = ano3d::config_from_meta(json::parse(geom::detail::read_file(replay)));
        rm.inputs.push_back(replay);
      } else {
        cfg = defect.config();
      }
      const auto r = ano3d::ano3d_augment(cloud, cfg, s);
      const std::string stem = fs::path(input).stem().string();
      const fs::path ply = out_path / (stem + "_defect.ply"), mask = out_path / (stem + "_mask.txt"),
                     meta = out_path / (stem + "_meta.json");
      for (const auto& p : {ply, mask, meta}) ensure_distinct(input, p);
      geom::write_ply(ply, r.cloud);
      std::string mtxt;
      for (auto v : r.mask) mtxt += v ? "1\n" : "0\n";
      geom::detail::write_file(mask, mtxt);
      geom::detail::write_file(meta, ano3d::meta_to_json(r.meta, cfg).dump(2) + "\n");
      rm.seed = s;
      rm.config = {{"defect", defect.to_json()}, {"replay", replay}};
      rm.inputs.push_back(input);
      rm.outputs = {ply.filename().string(), mask.filename().string(), meta.filename().string()};
      rm.write(out_path);
      out << ano3d::to_string(r.meta.type) << " " << r.cloud.size() << " points\n";
    } else if (train_cmd->parsed()) {
      rm.command = "train";
      train::TrainConfig cfg;
      if (!config_file.empty()) cfg = train::read_train_config(config_file);
      // Explicit flags win over the config file.
      auto pick = [&](const char* flag, auto& dst, const auto& src) {
        if (train_cmd->count(flag)) dst = src;
      };
      pick("--epochs", cfg.epochs, tc.epochs);
      pick("--batch", cfg.batch_size, tc.batch_size);
      pick("--lr-adapter", cfg.lr_adapter, tc.lr_adapter);
      pick("--lr-prompts", cfg.lr_prompts_dpcm, tc.lr_prompts_dpcm);
      pick("--anomaly-ratio", cfg.anomaly_ratio, tc.anomaly_ratio);
      pick("--checkpoint-every", cfg.checkpoint_every, tc.checkpoint_every);
      if (train_cmd->count("--loss")) cfg.loss = train::parse_loss_mode(loss);
      if (train_cmd->count("--seed") || config_file.empty()) cfg.seed = seed;
      if (cfg.checkpoint_every) cfg.checkpoint_dir = (out_path / "checkpoints").string();
      cfg.validate();

      const auto splits = dataset::load_manifest(manifest_path, nw);
      if (splits.train.empty()) throw Error("manifest has no train samples: " + manifest_path);
      std::set<std::string> cats;
      for (const auto& s : splits.train) cats.insert(s.category);
      mc.categories.assign(cats.begin(), cats.end());
      mc.point.tap_layers = parse_taps(taps);
      mc.encoder_seed = encoder_seed;
      mc.seed = cfg.seed;
      dp::PlaneModel model(mc);
      if (!encoder_weights.empty()) {
        model.load_encoder_weights(encoder_weights);
        rm.inputs.push_back(encoder_weights);
      }
      const auto ano = defect.config();
      const auto res = train::fit(model, splits.train, cfg, ano, nw);
      fs::create_directories(out_path);
      ad::save_checkpoint(out_path / "model.ckpt", res.checkpoint);
      train::write_loss_csv(out_path / "loss.csv", res.history);
      rm.seed = cfg.seed;
      rm.config = {{"train", train::to_json(cfg)}, {"model", dp::to_json(mc)}, {"defect", defect.to_json()}};
      rm.inputs.push_back(manifest_path);
      rm.outputs = {"model.ckpt", "loss.csv"};
      rm.write(out_path);
      if (!res.history.empty())
        out << "final mean loss " << geom::detail::fmt_double(res.history.back().mean_loss) << "\n";
    } else if (infer->parsed()) {
      rm.command = "infer";
      const auto model = dp::PlaneModel::load(checkpoint);
      const auto cloud = geom::read_cloud(input);
      const auto map = model.infer(cloud, class_of(cloud, cls));
      const fs::path ply = out_path / (fs::path(input).stem().string() + "_scores.ply");
      ensure_distinct(input, ply);
      eval::write_score_ply(ply, cloud, map.point_scores);
      rm.config = {{"class", class_of(cloud, cls)}};
      rm.inputs = {checkpoint, input};
      rm.outputs = {ply.filename().string()};
      rm.write(out_path);
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.6f", map.object_score);
      out << buf << "\n";
    } else if (eval_cmd->parsed()) {
      rm.command = "eval";
      const auto model = dp::PlaneModel::load(checkpoint);
      const auto splits = dataset::load_manifest(manifest_path, nw);
      std::vector<eval::ScoredSample> maps;
      const auto rep = eval::evaluate(model, splits.test, fpr_limit, nw, &maps);
      eval::write_report(out_path, rep);
      rm.outputs = {"report.csv", "report.json"};
      if (save_maps) {
        std::map<std::string, std::size_t> counter;
        for (const auto& s : maps) {
          char name[96];
          std::snprintf(name, sizeof name, "maps/%s_%03zu.ply", s.sample->category.c_str(), counter[s.sample->category]++);
          eval::write_score_ply(out_path / name, s.sample->cloud, s.map.point_scores);
          rm.outputs.push_back(name);
        }
      }
      rm.config = {{"fpr_limit", fpr_limit}, {"save_maps", save_maps}};
      rm.inputs = {checkpoint, manifest_path};
      rm.write(out_path);
      out << eval::report_to_csv(rep);
    } else if (bench->parsed()) {
      rm.command = "bench";
      const auto model = dp::PlaneModel::load(checkpoint);
      const auto cloud = geom::read_cloud(input);
      const auto r = eval::benchmark(model, cloud, class_of(cloud, cls), reps);
      geom::detail::write_file(out_path / "bench.json", eval::bench_to_json(r).dump(2) + "\n");
      rm.config = {{"reps", reps}};
      rm.inputs = {checkpoint, input};
      rm.outputs = {"bench.json"};
      rm.write(out_path);
      out << "median " << r.median_total << " s, " << r.samples_per_second << " samples/s\n";
    } else if (ingest->parsed()) {
      rm.command = "ingest";
      const auto m = dataset::index_real_dataset(root, dataset::parse_layout(layout));
      dataset::Manifest abs = m;
      for (auto& e : abs.entries) {
        e.path = fs::absolute(fs::path(root) / e.path).string();
        if (!e.gt_path.empty()) e.gt_path = fs::absolute(fs::path(root) / e.gt_path).string();
      }
      dataset::write_manifest(out_path / "manifest.json", abs);
      rm.config = {{"layout", layout}};
      rm.inputs = {root};
      rm.outputs = {"manifest.json"};
      rm.write(out_path);
      out << "indexed " << m.entries.size() << " samples\n";
    }
    return 0;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "error: " << msg << "\n";
    return 1;
  }
}

}  // namespace plane::cli
