// routenas command-line front end: dataset generation, feature extraction, architecture search,
// cross-validation, training, prediction and report rendering.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "routenas/errors.hpp"
#include "routenas/pipeline.hpp"
#include "routenas/report.hpp"

namespace fs = std::filesystem;
using namespace routenas;

namespace {

struct GlobalFlags {
  std::optional<std::string> task;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::optional<std::string> preset;
  std::optional<std::string> config_file;
  std::optional<std::string> out;
  std::optional<std::string> dataset;
};

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& path, const nlohmann::json& doc) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw IoError("write failed for " + path.string());
}

/// Preset defaults, then the config file, then explicit flags.
RunConfig resolve(const GlobalFlags& g) {
  nlohmann::json file = nlohmann::json::object();
  if (g.config_file) file = read_json_file(*g.config_file);
  const Preset preset = preset_from_string(g.preset ? *g.preset : file.value("preset", std::string("desk")));
  const Task task = task_from_string(g.task ? *g.task : file.value("task", std::string("netcount")));
  RunConfig c = RunConfig::make(preset, task);
  apply_run_config_json(c, file);
  c.preset = preset;
  c.task = task;
  if (g.seed) c.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  if (g.out) c.out_dir = *g.out;
  if (g.dataset) c.dataset_dir = *g.dataset;
  c.propagate();
  return c;
}

ArchitectureSpec spec_for(const RunConfig& c, const std::optional<std::string>& genome, bool baseline) {
  if (baseline) return resnet18_spec(c.task);
  if (!genome) throw ConfigError("pass --genome or --baseline");
  return decode(Genome::parse(*genome, c.task));
}

int cmd_gen_data(RunConfig c, std::optional<int> designs, std::optional<int> layouts, std::optional<int> grid,
                 std::optional<double> noise) {
  if (designs) c.synth.n_designs = *designs;
  if (layouts) c.synth.layouts_per_design = *layouts;
  if (grid) c.synth.grid = {*grid, *grid};
  if (noise) c.synth.noise = *noise;
  const auto data = generate(c.synth, c.workers);
  save_dataset(data, c.synth, c.out_dir);
  std::cout << "wrote " << data.size() << " layouts of " << c.synth.n_designs << " designs to " << c.out_dir.string()
            << "\n";
  return 0;
}

int cmd_extract(const RunConfig& c, std::optional<int> threshold) {
  const int t = threshold ? *threshold : c.fanout_threshold;
  const auto n = extract_dataset(c.dataset_dir, t, c.workers);
  std::cout << "extracted " << n << " feature tensors into " << (c.dataset_dir / "features").string() << "\n";
  return 0;
}

int cmd_search(const RunConfig& c) {
  const Dataset data = load_dataset(c.dataset_dir, c.fanout_threshold, c.workers);
  const auto report = run_search(data, c);
  write_json_file(c.out_dir / "search.json", report);
  std::cout << "best " << report.at("best").at("genome").get<std::string>() << " " << report.at("metric").get<std::string>()
            << " " << report.at("best").at("objectives").at(0).get<double>() << "\n";
  return 0;
}

int cmd_crossval(const RunConfig& c, std::optional<std::string> genome, std::optional<std::string> from_search,
                 bool with_baseline) {
  if (!genome && from_search) genome = read_json_file(*from_search).at("best").at("genome").get<std::string>();
  std::vector<NamedSpec> models;
  if (genome) models.push_back({"searched", decode(Genome::parse(*genome, c.task))});
  if (with_baseline) models.push_back({"resnet18", resnet18_spec(c.task)});
  if (models.empty()) throw ConfigError("nothing to cross-validate: pass --genome, --from-search or --baseline");
  const Dataset data = load_dataset(c.dataset_dir, c.fanout_threshold, c.workers);
  const auto report = run_crossval(data, c, models);
  write_json_file(c.out_dir / "crossval.json", report);
  for (const auto& m : report.at("models"))
    std::cout << m.at("name").get<std::string>() << " mean " << report.at("metric").get<std::string>() << " "
              << m.at("mean").get<double>() << "\n";
  return 0;
}

int cmd_train(const RunConfig& c, const std::optional<std::string>& genome, bool baseline) {
  const auto spec = spec_for(c, genome, baseline);
  const Dataset data = load_dataset(c.dataset_dir, c.fanout_threshold, c.workers);
  const auto split = split_by_design(data.layouts, c.train_fraction, c.seed);
  TrainingSet ts;
  ts.task = c.task;
  for (auto k : split.train) {
    ts.features.push_back(&data.features[k]);
    ts.counts.push_back(static_cast<double>(data.layouts[k].labels.violated_net_count));
    ts.hotspots.push_back(&data.layouts[k].labels.hotspot_map);
  }
  nn::BuildOptions opt;
  opt.grid = data.layouts.front().grid;
  opt.seed = c.seed;
  opt.width_divisor = c.width_divisor;
  auto model = train_model<float>(spec, opt, ts, c.train);
  fs::create_directories(c.out_dir);
  save_checkpoint(model, c.out_dir / "model.rnm");
  write_json_file(c.out_dir / "train.json", {{"architecture", spec_to_json(spec)},
                                             {"train_designs", split.train_designs},
                                             {"validation_designs", split.validation_designs},
                                             {"loss_curve", model.loss_curve},
                                             {"parameters", model.net->parameter_count()}});
  std::cout << "trained " << model.net->parameter_count() << " parameters, final loss " << model.loss_curve.back()
            << "; checkpoint " << (c.out_dir / "model.rnm").string() << "\n";
  return 0;
}

int cmd_predict(const RunConfig& c, const std::string& model_path, bool heatmaps) {
  auto model = load_checkpoint(model_path);
  const Dataset data = load_dataset(c.dataset_dir, c.fanout_threshold, c.workers);
  std::vector<const FeatureTensor*> feats;
  for (const auto& f : data.features) feats.push_back(&f);
  nlohmann::json rows = nlohmann::json::array();
  fs::create_directories(c.out_dir);
  if (model.net->task() == Task::NetCount) {
    const auto pred = predict_net_counts(model, feats);
    std::vector<EvalPair> pairs;
    for (std::size_t k = 0; k < pred.size(); ++k) {
      const auto& l = data.layouts[k].labels;
      rows.push_back({{"layout_id", l.layout_id}, {"design", l.design_name}, {"prediction", pred[k]},
                      {"label", l.violated_net_count}});
      pairs.push_back({pred[k], static_cast<double>(l.violated_net_count), l.design_name, l.layout_id});
    }
    nlohmann::json summary = {{"predictions", rows}, {"mean_rank_of_best", rank_of_best(pairs).mean}};
    try {
      summary["kendall_tau"] = kendall_tau(pairs);
    } catch (const DegenerateInput&) {
      summary["kendall_tau"] = nullptr;
    }
    write_json_file(c.out_dir / "predictions.json", summary);
  } else {
    const auto maps = predict_hotspot_maps(model, feats);
    if (heatmaps) fs::create_directories(c.out_dir / "heatmaps");
    for (std::size_t k = 0; k < maps.size(); ++k) {
      const auto& l = data.layouts[k];
      nlohmann::json auc = nullptr;
      try {
        std::vector<std::uint8_t> lab(l.labels.hotspot_map.begin(), l.labels.hotspot_map.end());
        auc = roc_auc(maps[k], lab);
      } catch (const SingleClass&) {
      }
      rows.push_back({{"layout_id", l.labels.layout_id}, {"design", l.labels.design_name}, {"auc", auc}});
      if (heatmaps) write_pgm(c.out_dir / "heatmaps" / (l.labels.layout_id + "_pred.pgm"), maps[k], l.grid);
    }
    write_json_file(c.out_dir / "predictions.json", {{"predictions", rows}});
  }
  std::cout << "wrote predictions for " << data.layouts.size() << " layouts to "
            << (c.out_dir / "predictions.json").string() << "\n";
  return 0;
}

int cmd_report(const RunConfig& c, const std::optional<std::string>& artifacts, bool heatmaps) {
  const fs::path src = artifacts ? fs::path(*artifacts) : c.out_dir;
  const auto files = render_report(src, c.out_dir / "report", heatmaps);
  std::cout << files.summary;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Routability-driven architecture search over synthetic placement datasets"};
  app.require_subcommand(1);
  app.fallthrough();

  GlobalFlags g;
  app.add_option("--task", g.task, "netcount or hotspot")->check(CLI::IsMember({"netcount", "hotspot"}));
  app.add_option("--seed", g.seed, "Seed for data, splits, search and training");
  app.add_option("--workers", g.workers, "Parallel evaluation jobs (1 = bit-reproducible)")->check(CLI::PositiveNumber);
  app.add_option("--preset", g.preset, "desk or paper")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--config", g.config_file, "JSON run configuration; flags override its values");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--dataset", g.dataset, "Dataset directory (manifest.json + layouts/)");

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-design dataset into --out");
  std::optional<int> designs, layouts, grid;
  std::optional<double> noise;
  gen->add_option("--designs", designs, "Number of designs")->check(CLI::PositiveNumber);
  gen->add_option("--layouts", layouts, "Layouts per design")->check(CLI::PositiveNumber);
  gen->add_option("--grid", grid, "Grid side in tiles (multiple of 16)");
  gen->add_option("--noise", noise, "Label noise level in [0,1)");

  auto* extract = app.add_subcommand("extract", "Write RNF1 feature tensors for every layout of --dataset");
  std::optional<int> threshold;
  extract->add_option("--threshold", threshold, "Fanout threshold separating small and large nets");

  auto* search = app.add_subcommand("search", "Run the evolutionary architecture search; writes search.json");

  auto* crossval = app.add_subcommand("crossval", "Design-wise k-fold cross-validation; writes crossval.json");
  std::optional<std::string> cv_genome, from_search;
  bool cv_baseline = true;
  crossval->add_option("--genome", cv_genome, "Genome bit string to evaluate");
  crossval->add_option("--from-search", from_search, "Take the best genome of a search.json");
  crossval->add_flag("--baseline,!--no-baseline", cv_baseline, "Also evaluate the ResNet-18 baseline");

  auto* train = app.add_subcommand("train", "Train one architecture on the training designs; writes model.rnm");
  std::optional<std::string> tr_genome;
  bool tr_baseline = false;
  train->add_option("--genome", tr_genome, "Genome bit string");
  train->add_flag("--baseline", tr_baseline, "Train the ResNet-18 baseline instead");

  auto* predict = app.add_subcommand("predict", "Predict every layout of --dataset with a checkpoint");
  std::string model_path;
  bool pred_heatmaps = false;
  predict->add_option("--model", model_path, "RNM1 checkpoint")->required();
  predict->add_flag("--heatmaps", pred_heatmaps, "Write PGM probability maps (hotspot task)");

  auto* report = app.add_subcommand("report", "Render tables and figures from search.json / crossval.json");
  std::optional<std::string> artifacts;
  bool no_heatmaps = false;
  report->add_option("--artifacts", artifacts, "Directory holding search.json and/or crossval.json (default --out)");
  report->add_flag("--no-heatmaps", no_heatmaps, "Skip PGM heatmaps");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig c = resolve(g);
    if (gen->parsed()) {
      if (!g.out) c.out_dir = c.dataset_dir;
      return cmd_gen_data(c, designs, layouts, grid, noise);
    }
    c.validate();
    if (extract->parsed()) return cmd_extract(c, threshold);
    if (search->parsed()) return cmd_search(c);
    if (crossval->parsed()) return cmd_crossval(c, cv_genome, from_search, cv_baseline);
    if (train->parsed()) return cmd_train(c, tr_genome, tr_baseline);
    if (predict->parsed()) return cmd_predict(c, model_path, pred_heatmaps);
    if (report->parsed()) return cmd_report(c, artifacts, !no_heatmaps);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
