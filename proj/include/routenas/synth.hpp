#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <json.hpp>

#include "routenas/layout.hpp"

namespace routenas {

/// Parameters of the synthetic multi-design dataset. Each design has a fixed netlist; its layouts differ in
/// placement quality, which drives both the features and the planted labels.
struct SynthConfig {
  int n_designs = 12;
  int layouts_per_design = 20;
  Grid grid{64, 64};
  int min_cells = 400;
  int max_cells = 800;
  int min_nets = 450;
  int max_nets = 900;
  /// Sink count of an ordinary net is 1 + Geometric(mean extra sinks).
  double mean_extra_sinks = 1.0;
  /// Fraction of nets drawn as high-fanout nets with a uniform sink count in [6, max_fanout].
  double high_fanout_fraction = 0.05;
  int max_fanout = 24;
  double dff_fraction = 0.10;
  double clk_fraction = 0.03;
  /// Fraction of the die area covered by a design's placement region.
  double min_utilization = 0.45;
  double max_utilization = 0.80;
  /// Per-layout placement scatter relative to the region side.
  double min_jitter = 0.01;
  double max_jitter = 0.08;
  // Hidden congestion rule: smooth(rudy_weight * RUDY + pin_weight * pins) + noise * threshold * N(0,1) > threshold
  double rudy_weight = 1.0;
  double pin_weight = 0.15;
  double threshold = 4.0;
  int smoothing_radius = 1;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json synth_config_to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const nlohmann::json& doc);

/// Layouts ordered by design then layout index. workers > 1 generates layouts concurrently with identical output.
std::vector<Layout> generate(const SynthConfig& config, int workers = 1);

/// Planted per-tile congestion score before noise and thresholding.
std::vector<double> congestion_score(const Layout& layout, const SynthConfig& config);

/// Nets whose bounding-box tile range contains at least one hotspot tile.
std::int64_t count_violated_nets(const Layout& layout, const HotspotMap& hotspots);

struct DesignSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::string> train_designs;
  std::vector<std::string> validation_designs;
};

/// Whole designs go to one side; round(fraction * designs) train designs, at least one on each side.
DesignSplit split_by_design(const std::vector<Layout>& layouts, double train_fraction, std::uint64_t seed);

/// Writes layouts/<layout_id>.json plus manifest.json.
void save_dataset(const std::vector<Layout>& layouts, const SynthConfig& config, const std::filesystem::path& dir);

}  // namespace routenas
