#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "routenas/layers.hpp"
#include "routenas/layout.hpp"
#include "routenas/search_space.hpp"

namespace routenas::nn {

struct BuildOptions {
  int input_channels = 16;
  Grid grid{64, 64};
  std::uint64_t seed = 0;
  /// Every stem/stage filter count f becomes max(1, f / width_divisor).
  int width_divisor = 1;
};

/// Output shape of one named stage recorded by the last forward pass.
struct StageShape {
  std::string name;
  int c = 0;
  int h = 0;
  int w = 0;
};

/// Encoder (stem + CONV1..4) with either a regression head or a transposed-conv decoder.
template <typename T>
class Network {
 public:
  Network(const ArchitectureSpec& spec, const BuildOptions& options);

  Task task() const { return spec_.task; }
  const ArchitectureSpec& spec() const { return spec_; }
  const BuildOptions& options() const { return options_; }

  /// Raw outputs: N x 1 x 1 x 1 regression values, or N x 1 x H x W hotspot logits.
  Tensor<T> forward(const Tensor<T>& x, bool training);
  /// Gradient of the loss w.r.t. the input, given the gradient w.r.t. the raw outputs.
  Tensor<T> backward(const Tensor<T>& dy);

  /// Inference-mode outputs (regression values, or sigmoid probabilities). Serialized internally, so a
  /// trained network can be shared across threads.
  Tensor<T> predict(const Tensor<T>& x);

  std::vector<Parameter<T>*> parameters();
  /// Batch-norm running statistics.
  std::vector<Parameter<T>*> buffers();
  std::size_t parameter_count();
  void zero_grad();

  const std::vector<StageShape>& stage_shapes() const { return shapes_; }

 private:
  int width(int filters) const;

  ArchitectureSpec spec_;
  BuildOptions options_;
  Sequential<T> stem_;
  std::array<Sequential<T>, 4> conv_;
  // NetCount head
  GlobalMeanPool<T> pool_;
  std::unique_ptr<Linear<T>> linear_;
  // Hotspot decoder
  std::vector<Sequential<T>> trans_;
  std::vector<std::unique_ptr<Sequential<T>>> shortcut_;  // null when the shortcut is disabled
  std::unique_ptr<ConvTranspose2d<T>> head_;

  std::vector<StageShape> shapes_;
  std::mutex predict_mutex_;
};

std::vector<StageShape> trace_shapes(const ArchitectureSpec& spec, const BuildOptions& options, int batch = 1);

}  // namespace routenas::nn
