#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include <json.hpp>

#include "routenas/features.hpp"
#include "routenas/network.hpp"

namespace routenas {

enum class LossKind { MSE, BCE };
enum class Precision { Float32, Float64 };

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 1e-9;
  LossKind loss = LossKind::MSE;
  std::uint64_t seed = 0;
  Precision precision = Precision::Float32;

  static TrainConfig desk(Task task);
  static TrainConfig paper(Task task);
  void validate() const;
};

LossKind default_loss(Task task);

nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);

/// Per-channel input standardization fitted on a training split (constant channels keep unit scale), plus the
/// affine scale of the log1p regression target.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  double target_mean = 0.0;
  double target_stddev = 1.0;

  static ChannelStats fit(std::span<const FeatureTensor* const> samples, std::span<const double> counts = {});
  double count_to_target(double count) const;
  double target_to_count(double target) const;
  /// Writes the standardized C x H x W sample into out.
  template <typename T>
  void apply(const FeatureTensor& features, T* out) const;
};

nlohmann::json channel_stats_to_json(const ChannelStats& stats);
ChannelStats channel_stats_from_json(const nlohmann::json& doc);

/// Training samples by reference; counts are raw violated-net counts, maps are hotspot labels.
struct TrainingSet {
  Task task = Task::NetCount;
  std::vector<const FeatureTensor*> features;
  std::vector<double> counts;
  std::vector<const HotspotMap*> hotspots;

  std::size_t size() const { return features.size(); }
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

/// One Adam update with L2 decay folded into the gradient; increments state.t.
template <typename T>
void adam_step(std::span<nn::Parameter<T>* const> params, AdamState<T>& state, double learning_rate,
               double weight_decay);

template <typename T>
struct TrainedModel {
  std::unique_ptr<nn::Network<T>> net;
  ChannelStats stats;
  TrainConfig config;
  std::vector<double> loss_curve;
};

/// Standardized batch of the given sample indices.
template <typename T>
nn::Tensor<T> make_batch(std::span<const FeatureTensor* const> samples, const ChannelStats& stats,
                         std::span<const std::size_t> indices);

/// Seeded mini-batch training; returns the mean training loss of every epoch. Throws NonFiniteLoss.
template <typename T>
std::vector<double> train(nn::Network<T>& net, const ChannelStats& stats, const TrainingSet& data,
                          const TrainConfig& config);

/// Fits channel statistics, builds the network and trains it.
template <typename T>
TrainedModel<T> train_model(const ArchitectureSpec& spec, const nn::BuildOptions& options, const TrainingSet& data,
                            const TrainConfig& config);

/// Violated-net-count estimates (inverse of the log1p training target).
std::vector<double> predict_net_counts(TrainedModel<float>& model, std::span<const FeatureTensor* const> samples);
double predict_net_count(TrainedModel<float>& model, const FeatureTensor& features);

/// Per-tile hotspot probabilities, row-major W x H.
std::vector<Map2D> predict_hotspot_maps(TrainedModel<float>& model, std::span<const FeatureTensor* const> samples);
Map2D predict_hotspots(TrainedModel<float>& model, const FeatureTensor& features);

void save_checkpoint(TrainedModel<float>& model, const std::filesystem::path& path);
TrainedModel<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace routenas
