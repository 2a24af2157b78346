#include "routenas/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "routenas/errors.hpp"

namespace routenas {

namespace fs = std::filesystem;

std::string_view to_string(Preset p) { return p == Preset::Desk ? "desk" : "paper"; }

Preset preset_from_string(std::string_view s) {
  if (s == "desk") return Preset::Desk;
  if (s == "paper") return Preset::Paper;
  throw ConfigError("unknown preset '" + std::string(s) + "' (expected desk or paper)");
}

// ------------------------------------------------------------- RunConfig

RunConfig RunConfig::make(Preset preset, Task task) {
  RunConfig c;
  c.task = task;
  c.preset = preset;
  if (preset == Preset::Desk) {
    c.search = SearchConfig::desk(task);
    c.train = TrainConfig::desk(task);
    c.width_divisor = 8;
  } else {
    c.search = SearchConfig::paper(task);
    c.train = TrainConfig::paper(task);
    c.width_divisor = 1;
    c.synth.grid = {224, 224};
  }
  c.propagate();
  return c;
}

void RunConfig::propagate() {
  synth.seed = seed;
  search.seed = seed;
  search.task = task;
  search.workers = workers;
  train.seed = seed;
  train.loss = default_loss(task);
}

void RunConfig::validate() const {
  if (workers < 1) throw ConfigError("workers must be >= 1");
  if (width_divisor < 1) throw ConfigError("width divisor must be >= 1");
  if (fanout_threshold < 1) throw ConfigError("fanout threshold must be >= 1");
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0,1)");
  if (random_baseline < 0) throw ConfigError("random baseline count must be >= 0");
  synth.validate();
  search.validate();
  train.validate();
}

nlohmann::json search_config_fields_to_json(const SearchConfig& c) {
  auto j = search_config_to_json(c);
  j.erase("task");
  j.erase("seed");
  return j;
}

void apply_search_config_json(SearchConfig& c, const nlohmann::json& doc) {
  try {
    c.population_size = doc.value("population_size", c.population_size);
    c.offspring_size = doc.value("offspring_size", c.offspring_size);
    c.generations = doc.value("generations", c.generations);
    c.crossover_probability = doc.value("crossover_probability", c.crossover_probability);
    c.mutation_eta = doc.value("mutation_eta", c.mutation_eta);
    c.mutation_probability = doc.value("mutation_probability", c.mutation_probability);
    c.tournament_size = doc.value("tournament_size", c.tournament_size);
    c.minimize_parameters = doc.value("minimize_parameters", c.minimize_parameters);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("search config: ") + e.what());
  }
}

nlohmann::json run_config_to_json(const RunConfig& c) {
  auto train = train_config_to_json(c.train);
  train.erase("seed");
  auto synth = synth_config_to_json(c.synth);
  synth.erase("seed");
  return {{"task", to_string(c.task)},
          {"preset", to_string(c.preset)},
          {"seed", c.seed},
          {"search", search_config_fields_to_json(c.search)},
          {"train", train},
          {"synth", synth},
          {"width_divisor", c.width_divisor},
          {"fanout_threshold", c.fanout_threshold},
          {"folds", c.folds},
          {"train_fraction", c.train_fraction},
          {"random_baseline", c.random_baseline}};
}

void apply_run_config_json(RunConfig& c, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config file must contain a JSON object");
  try {
    if (doc.contains("task")) c.task = task_from_string(doc.at("task").get<std::string>());
    if (doc.contains("preset")) c.preset = preset_from_string(doc.at("preset").get<std::string>());
    c.seed = doc.value("seed", c.seed);
    c.workers = doc.value("workers", c.workers);
    if (doc.contains("dataset")) c.dataset_dir = doc.at("dataset").get<std::string>();
    if (doc.contains("out")) c.out_dir = doc.at("out").get<std::string>();
    if (doc.contains("search")) apply_search_config_json(c.search, doc.at("search"));
    if (doc.contains("train")) {
      auto t = train_config_to_json(c.train);
      t.update(doc.at("train"));
      c.train = train_config_from_json(t);
    }
    if (doc.contains("synth")) {
      auto s = synth_config_to_json(c.synth);
      s.update(doc.at("synth"));
      c.synth = synth_config_from_json(s);
    }
    c.width_divisor = doc.value("width_divisor", c.width_divisor);
    c.fanout_threshold = doc.value("fanout_threshold", c.fanout_threshold);
    c.folds = doc.value("folds", c.folds);
    c.train_fraction = doc.value("train_fraction", c.train_fraction);
    c.random_baseline = doc.value("random_baseline", c.random_baseline);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config file: ") + e.what());
  }
}

// --------------------------------------------------------------- dataset

std::vector<std::string> Dataset::sample_designs() const {
  std::vector<std::string> out;
  out.reserve(layouts.size());
  for (const auto& l : layouts) out.push_back(l.labels.design_name);
  return out;
}

fs::path feature_path(const fs::path& dir, const std::string& layout_id) {
  return dir / "features" / (layout_id + ".rnf");
}

namespace {

struct ManifestEntry {
  std::string layout_id;
  std::string file;
};

std::vector<ManifestEntry> read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  std::vector<ManifestEntry> out;
  try {
    for (const auto& e : doc.at("layouts"))
      out.push_back({e.at("layout_id").get<std::string>(), e.at("file").get<std::string>()});
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  if (out.empty()) throw SchemaError(path.string() + ": no layouts listed");
  return out;
}

template <typename F>
void parallel_for(std::size_t n, int workers, F&& job) {
  if (workers <= 1 || n < 2) {
    for (std::size_t k = 0; k < n; ++k) job(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < n; k = next++) {
          try {
            job(k);
          } catch (...) {
            errors[k] = std::current_exception();
          }
        }
      });
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

void round_to_float(FeatureTensor& t) {
  for (auto& v : t.data) v = static_cast<double>(static_cast<float>(v));
}

}  // namespace

std::size_t extract_dataset(const fs::path& dir, int threshold, int workers) {
  const auto entries = read_manifest(dir);
  std::error_code ec;
  fs::create_directories(dir / "features", ec);
  if (ec) throw IoError("cannot create " + (dir / "features").string() + ": " + ec.message());
  parallel_for(entries.size(), workers, [&](std::size_t k) {
    const Layout layout = load_layout(dir / entries[k].file);
    const FeatureTensor t = extract_features(layout, threshold);
    const fs::path path = feature_path(dir, layout.labels.layout_id);
    save_feature_tensor(t, path);
    std::ofstream side(fs::path(path).replace_extension(".json"), std::ios::trunc);
    if (!side) throw IoError("cannot write sidecar for " + layout.labels.layout_id);
    side << feature_sidecar(layout, threshold).dump(2) << "\n";
  });
  return entries.size();
}

Dataset load_dataset(const fs::path& dir, int threshold, int workers) {
  const auto entries = read_manifest(dir);
  Dataset d;
  d.dir = dir;
  d.fanout_threshold = threshold;
  d.layouts.resize(entries.size());
  d.features.resize(entries.size());
  parallel_for(entries.size(), workers, [&](std::size_t k) {
    d.layouts[k] = load_layout(dir / entries[k].file);
    const fs::path fp = feature_path(dir, d.layouts[k].labels.layout_id);
    const fs::path sidecar = fs::path(fp).replace_extension(".json");
    bool stored = false;
    if (fs::exists(fp) && fs::exists(sidecar)) {
      std::ifstream in(sidecar);
      const auto side = nlohmann::json::parse(in, nullptr, false);
      stored = !side.is_discarded() && side.value("fanout_threshold", -1) == threshold;
    }
    if (stored) {
      d.features[k] = load_feature_tensor(fp);
      if (!(d.features[k].grid == d.layouts[k].grid))
        throw IntegrityError(fp.string() + ": feature grid does not match the layout");
    } else {
      d.features[k] = extract_features(d.layouts[k], threshold);
      round_to_float(d.features[k]);
    }
  });
  return d;
}

// ------------------------------------------------------------ evaluation

double failure_metric(Task task) { return task == Task::NetCount ? -1.0 : 0.0; }

namespace {

TrainingSet make_training_set(const Dataset& data, Task task, std::span<const std::size_t> idx) {
  TrainingSet ts;
  ts.task = task;
  for (auto k : idx) {
    ts.features.push_back(&data.features[k]);
    ts.counts.push_back(static_cast<double>(data.layouts[k].labels.violated_net_count));
    ts.hotspots.push_back(&data.layouts[k].labels.hotspot_map);
  }
  return ts;
}

double pooled_auc(const Dataset& data, std::span<const std::size_t> idx, const std::vector<Map2D>& maps) {
  std::vector<double> scores;
  std::vector<std::uint8_t> labels;
  for (std::size_t v = 0; v < idx.size(); ++v) {
    scores.insert(scores.end(), maps[v].begin(), maps[v].end());
    const auto& hm = data.layouts[idx[v]].labels.hotspot_map;
    labels.insert(labels.end(), hm.begin(), hm.end());
  }
  try {
    return roc_auc(scores, labels);
  } catch (const SingleClass&) {
    return 0.5;
  }
}

}  // namespace

Evaluation evaluate_spec(const Dataset& data, const ArchitectureSpec& spec, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> validation_idx, const EvalOptions& options) {
  if (train_idx.empty() || validation_idx.empty()) throw ConfigError("train and validation splits must be nonempty");
  const Task task = spec.task;
  Evaluation ev;
  TrainedModel<float> model;
  try {
    model = train_model<float>(spec, options.build, make_training_set(data, task, train_idx), options.train);
  } catch (const NonFiniteLoss&) {
    ev.failed = true;
    ev.metric = failure_metric(task);
    return ev;
  }
  ev.loss_curve = model.loss_curve;
  std::vector<const FeatureTensor*> vf;
  for (auto k : validation_idx) vf.push_back(&data.features[k]);
  if (task == Task::NetCount) {
    const auto pred = predict_net_counts(model, vf);
    for (std::size_t v = 0; v < validation_idx.size(); ++v) {
      const auto& l = data.layouts[validation_idx[v]].labels;
      ev.pairs.push_back({pred[v], static_cast<double>(l.violated_net_count), l.design_name, l.layout_id});
    }
    bool finite = true;
    for (double p : pred) finite = finite && std::isfinite(p);
    if (!finite) {
      ev.failed = true;
      ev.metric = failure_metric(task);
    } else {
      try {
        ev.metric = kendall_tau(ev.pairs);
      } catch (const DegenerateInput&) {
        ev.metric = 0.0;  // constant predictions carry no ranking information
      }
    }
    if (!options.keep_predictions) ev.pairs.clear();
  } else {
    ev.maps = predict_hotspot_maps(model, vf);
    ev.metric = pooled_auc(data, validation_idx, ev.maps);
    if (!options.keep_predictions) ev.maps.clear();
  }
  return ev;
}

namespace {

EvalOptions eval_options(const RunConfig& config, std::uint64_t seed, const Grid& grid) {
  EvalOptions o;
  o.train = config.train;
  o.train.seed = seed;
  o.train.loss = default_loss(config.task);
  o.build.grid = grid;
  o.build.seed = seed;
  o.build.width_divisor = config.width_divisor;
  return o;
}

std::uint64_t genome_seed(std::uint64_t seed, const std::string& key) { return derive_seed(seed, {hash_string(key)}); }

}  // namespace

Evaluator make_evaluator(const Dataset& data, const DesignSplit& split, const RunConfig& config) {
  if (data.layouts.empty()) throw ConfigError("dataset is empty");
  const Grid grid = data.layouts.front().grid;
  return [&data, split, config, grid](const Genome& g) -> std::vector<double> {
    if (g.task != config.task) throw TaskMismatch("genome task does not match the run");
    const auto spec = decode(g);
    const auto opts = eval_options(config, genome_seed(config.seed, g.str()), grid);
    const auto ev = evaluate_spec(data, spec, split.train, split.validation, opts);
    std::vector<double> obj{ev.metric};
    if (config.search.minimize_parameters) {
      nn::Network<float> net(spec, opts.build);
      obj.push_back(-static_cast<double>(net.parameter_count()));
    }
    return obj;
  };
}

nlohmann::json run_search(const Dataset& data, const RunConfig& config) {
  config.validate();
  const auto split = split_by_design(data.layouts, config.train_fraction, config.seed);
  const Evaluator evaluator = make_evaluator(data, split, config);
  SearchConfig sc = config.search;
  sc.task = config.task;
  sc.seed = config.seed;
  sc.workers = config.workers;
  const SearchResult result = evolve(sc, evaluator);

  nlohmann::json top = nlohmann::json::array();
  for (std::size_t k = 0; k < std::min<std::size_t>(5, result.archive.size()); ++k) {
    auto j = individual_to_json(result.archive[k]);
    j["architecture"] = spec_to_json(decode(result.archive[k].genome));
    top.push_back(std::move(j));
  }
  nlohmann::json report = {{"kind", "search"},
                           {"task", to_string(config.task)},
                           {"config", run_config_to_json(config)},
                           {"split",
                            {{"train_designs", split.train_designs},
                             {"validation_designs", split.validation_designs},
                             {"train_layouts", split.train.size()},
                             {"validation_layouts", split.validation.size()}}},
                           {"metric", config.task == Task::NetCount ? "kendall_tau" : "roc_auc"},
                           {"history", history_to_json(result.history)},
                           {"best", individual_to_json(result.best)},
                           {"best_architecture", spec_to_json(decode(result.best.genome))},
                           {"top5", top},
                           {"evaluations", result.archive.size()}};

  if (config.random_baseline > 0) {
    std::vector<Genome> genomes;
    for (int k = 0; k < config.random_baseline; ++k)
      genomes.push_back(random_genome(config.task, derive_seed(config.seed, {0x52414e44ULL, static_cast<std::uint64_t>(k)})));
    std::vector<std::vector<double>> objs(genomes.size());
    parallel_for(genomes.size(), config.workers, [&](std::size_t k) { objs[k] = evaluator(genomes[k]); });
    nlohmann::json entries = nlohmann::json::array();
    double sum = 0.0;
    for (std::size_t k = 0; k < genomes.size(); ++k) {
      entries.push_back({{"genome", genomes[k].str()}, {"objectives", objs[k]}});
      sum += objs[k].front();
    }
    report["random_baseline"] = {{"genomes", entries}, {"mean", sum / static_cast<double>(genomes.size())}};
  }
  return report;
}

// -------------------------------------------------------- cross-validation

namespace {

nlohmann::json per_design_netcount(const std::vector<EvalPair>& pairs) {
  const auto rob = rank_of_best(pairs);
  std::map<std::string, int> counts;
  for (const auto& p : pairs) ++counts[p.design];
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& [design, rank] : rob.per_design)
    rows.push_back({{"design", design}, {"layouts", counts[design]}, {"rank_of_best", rank}});
  return {{"rows", rows}, {"mean_rank_of_best", rob.mean}};
}

nlohmann::json optional_metric(const std::function<double()>& f) {
  try {
    return f();
  } catch (const SingleClass&) {
    return nullptr;
  }
}

}  // namespace

nlohmann::json run_crossval(const Dataset& data, const RunConfig& config, const std::vector<NamedSpec>& models) {
  config.validate();
  if (models.empty()) throw ConfigError("nothing to cross-validate");
  const auto designs = data.sample_designs();
  const FoldPlan plan = make_design_folds(designs, config.folds, config.seed);
  const Grid grid = data.layouts.front().grid;

  // Fold design sets must be pairwise disjoint and cover every design.
  std::set<std::string> seen;
  bool disjoint = true;
  for (const auto& fd : plan.fold_designs)
    for (const auto& d : fd) disjoint = seen.insert(d).second && disjoint;

  nlohmann::json out_models = nlohmann::json::array();
  for (const auto& model : models) {
    if (model.spec.task != config.task) throw TaskMismatch("model '" + model.name + "' targets a different task");
    std::vector<Evaluation> folds(static_cast<std::size_t>(config.folds));
    std::vector<std::vector<std::size_t>> val_idx(folds.size());
    parallel_for(folds.size(), config.workers, [&](std::size_t f) {
      const int fi = static_cast<int>(f);
      auto opts = eval_options(config, derive_seed(config.seed, {hash_string(model.name), f}), grid);
      opts.keep_predictions = true;
      val_idx[f] = plan.validation_indices(fi);
      folds[f] = evaluate_spec(data, model.spec, plan.train_indices(fi), val_idx[f], opts);
    });

    nlohmann::json fold_metrics = nlohmann::json::array();
    double sum = 0.0;
    for (const auto& ev : folds) {
      fold_metrics.push_back(ev.metric);
      sum += ev.metric;
    }
    nlohmann::json genome = nullptr;
    try {
      genome = encode(model.spec).str();
    } catch (const IllegalValue&) {
    }
    nlohmann::json m = {{"name", model.name},
                        {"genome", genome},
                        {"architecture", spec_to_json(model.spec)},
                        {"fold_metrics", fold_metrics},
                        {"mean", sum / static_cast<double>(folds.size())},
                        {"failed_folds", std::count_if(folds.begin(), folds.end(), [](const Evaluation& e) { return e.failed; })}};

    if (config.task == Task::NetCount) {
      std::vector<EvalPair> pairs;
      for (const auto& ev : folds) pairs.insert(pairs.end(), ev.pairs.begin(), ev.pairs.end());
      std::sort(pairs.begin(), pairs.end(), [](const EvalPair& a, const EvalPair& b) { return a.layout_id < b.layout_id; });
      m["per_design"] = per_design_netcount(pairs);
      nlohmann::json preds = nlohmann::json::array();
      for (const auto& p : pairs)
        preds.push_back({{"layout_id", p.layout_id}, {"design", p.design}, {"prediction", p.prediction}, {"label", p.label}});
      m["predictions"] = preds;
    } else {
      // Per-design TPR at 10% FPR and AUC over the tiles of that design's held-out layouts.
      std::map<std::string, std::pair<std::vector<double>, std::vector<std::uint8_t>>> by_design;
      std::map<std::string, nlohmann::json> heatmap;
      for (std::size_t f = 0; f < folds.size(); ++f)
        for (std::size_t v = 0; v < val_idx[f].size(); ++v) {
          const auto& l = data.layouts[val_idx[f][v]];
          auto& [scores, labels] = by_design[l.labels.design_name];
          const auto& map = folds[f].maps[v];
          scores.insert(scores.end(), map.begin(), map.end());
          labels.insert(labels.end(), l.labels.hotspot_map.begin(), l.labels.hotspot_map.end());
          auto& hm = heatmap[l.labels.design_name];
          if (hm.is_null() || l.labels.layout_id < hm.at("layout_id").get<std::string>()) {
            std::vector<double> rounded(map.size());
            std::transform(map.begin(), map.end(), rounded.begin(),
                           [](double p) { return std::round(p * 1e4) / 1e4; });
            hm = {{"layout_id", l.labels.layout_id},
                  {"design", l.labels.design_name},
                  {"grid", {{"w", l.grid.w}, {"h", l.grid.h}}},
                  {"predicted", rounded},
                  {"label_rle", encode_rle(l.labels.hotspot_map)}};
          }
        }
      nlohmann::json rows = nlohmann::json::array();
      for (const auto& [design, sl] : by_design) {
        const auto& [scores, labels] = sl;
        rows.push_back({{"design", design},
                        {"tpr_at_10_fpr", optional_metric([&] { return tpr_at_fpr(scores, labels, 0.10); })},
                        {"auc", optional_metric([&] { return roc_auc(scores, labels); })}});
      }
      m["per_design"] = {{"rows", rows}};
      nlohmann::json maps = nlohmann::json::array();
      for (auto& [design, hm] : heatmap) maps.push_back(std::move(hm));
      m["heatmaps"] = maps;
    }
    out_models.push_back(std::move(m));
  }

  return {{"kind", "crossval"},
          {"task", to_string(config.task)},
          {"config", run_config_to_json(config)},
          {"metric", config.task == Task::NetCount ? "kendall_tau" : "roc_auc"},
          {"folds", config.folds},
          {"fold_designs", plan.fold_designs},
          {"design_disjoint", disjoint},
          {"models", out_models}};
}

}  // namespace routenas
