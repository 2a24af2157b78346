#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "routenas/features.hpp"
#include "routenas/metrics.hpp"
#include "routenas/nsga2.hpp"
#include "routenas/synth.hpp"
#include "routenas/train.hpp"

namespace routenas {

enum class Preset { Desk, Paper };

std::string_view to_string(Preset preset);
Preset preset_from_string(std::string_view s);

/// Everything a pipeline command needs. One seed drives data generation, splits, search and training.
struct RunConfig {
  Task task = Task::NetCount;
  Preset preset = Preset::Desk;
  std::uint64_t seed = 0;
  int workers = 1;
  std::filesystem::path dataset_dir = "data";
  std::filesystem::path out_dir = "out";
  SynthConfig synth;
  SearchConfig search;
  TrainConfig train;
  int width_divisor = 8;
  int fanout_threshold = kDefaultFanoutThreshold;
  int folds = 5;
  double train_fraction = 0.7;
  /// Random genomes trained like the searched ones, reported next to the search result.
  int random_baseline = 0;

  static RunConfig make(Preset preset, Task task);
  /// Copies the seed and task into the nested configs.
  void propagate();
  void validate() const;
};

nlohmann::json run_config_to_json(const RunConfig& config);
/// Overrides the fields present in doc.
void apply_run_config_json(RunConfig& config, const nlohmann::json& doc);

nlohmann::json search_config_fields_to_json(const SearchConfig& config);
void apply_search_config_json(SearchConfig& config, const nlohmann::json& doc);

/// Layouts in manifest order with their feature tensors.
struct Dataset {
  std::filesystem::path dir;
  std::vector<Layout> layouts;
  std::vector<FeatureTensor> features;
  int fanout_threshold = kDefaultFanoutThreshold;

  std::vector<std::string> sample_designs() const;
};

/// Feature files live at features/<layout_id>.rnf with a .json sidecar.
std::filesystem::path feature_path(const std::filesystem::path& dataset_dir, const std::string& layout_id);

/// Extracts and writes every feature file; returns the number written.
std::size_t extract_dataset(const std::filesystem::path& dir, int fanout_threshold, int workers = 1);

/// Loads the manifest and layouts; reads stored features when present, otherwise extracts them in memory.
/// In-memory features are rounded to float32 so both paths feed identical values to training.
Dataset load_dataset(const std::filesystem::path& dir, int fanout_threshold, int workers = 1);

/// Metric and held-out predictions of one trained architecture.
struct Evaluation {
  double metric = 0.0;
  bool failed = false;  // non-finite training loss
  std::vector<double> loss_curve;
  std::vector<EvalPair> pairs;  // NetCount: predicted vs labeled count per validation layout
  std::vector<Map2D> maps;      // Hotspot: probability map per validation layout
};

struct EvalOptions {
  TrainConfig train;
  nn::BuildOptions build;
  bool keep_predictions = false;
};

/// Worst value of the task metric, assigned when training diverges.
double failure_metric(Task task);

/// Trains on train_idx and scores validation_idx: Kendall tau of counts, or ROC-AUC pooled over all tiles.
Evaluation evaluate_spec(const Dataset& data, const ArchitectureSpec& spec, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> validation_idx, const EvalOptions& options);

/// Per-genome seeds derive from the run seed and the genome string, so results do not depend on evaluation order.
Evaluator make_evaluator(const Dataset& data, const DesignSplit& split, const RunConfig& config);

/// Search report: config echo, split, per-generation history, best and top-5 genomes, optional random baseline.
nlohmann::json run_search(const Dataset& data, const RunConfig& config);

struct NamedSpec {
  std::string name;
  ArchitectureSpec spec;
};

/// Design-wise k-fold cross-validation of each model on identical folds.
nlohmann::json run_crossval(const Dataset& data, const RunConfig& config, const std::vector<NamedSpec>& models);

}  // namespace routenas
