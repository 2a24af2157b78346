#pragma once

#include <memory>
#include <string>
#include <vector>

#include "routenas/random.hpp"
#include "routenas/tensor.hpp"

namespace routenas::nn {

/// Named learnable array with its gradient accumulator.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<T> value;
  std::vector<T> grad;

  Parameter() = default;
  Parameter(std::string n, std::size_t size) : name(std::move(n)), value(size, T(0)), grad(size, T(0)) {}
};

/// Layers cache what they need during forward() and consume it in backward().
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  /// Accumulates parameter gradients and returns the gradient w.r.t. the last forward input.
  virtual Tensor<T> backward(const Tensor<T>& dy) = 0;
  virtual void collect_parameters(std::vector<Parameter<T>*>& /*out*/) {}
  /// Non-learned state that must travel with a checkpoint (batch-norm running statistics).
  virtual void collect_buffers(std::vector<Parameter<T>*>& /*out*/) {}
};

/// Kernel geometry shared by convolution and its transpose.
struct ConvGeometry {
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  int out_size(int in) const { return (in + 2 * pad - kernel) / stride + 1; }
};

template <typename T>
class Conv2d : public Module<T> {
 public:
  Conv2d(std::string name, int in_channels, int out_channels, ConvGeometry geom, bool bias);
  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  const ConvGeometry& geometry() const { return geom_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return has_bias_ ? &bias_ : nullptr; }

 private:
  int cin_, cout_;
  ConvGeometry geom_;
  bool has_bias_;
  Parameter<T> weight_;  // cout x cin x k x k
  Parameter<T> bias_;
  Tensor<T> input_;
};

/// Adjoint of Conv2d with the same geometry; weight layout cin x cout x k x k.
template <typename T>
class ConvTranspose2d : public Module<T> {
 public:
  ConvTranspose2d(std::string name, int in_channels, int out_channels, ConvGeometry geom, int output_padding,
                  bool bias);
  void init(Rng& rng, double gain = 2.0);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;

  int out_size(int in) const { return (in - 1) * geom_.stride - 2 * geom_.pad + geom_.kernel + output_padding_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>* bias() { return has_bias_ ? &bias_ : nullptr; }

 private:
  int cin_, cout_;
  ConvGeometry geom_;
  int output_padding_;
  bool has_bias_;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Tensor<T> input_;
  int out_h_ = 0, out_w_ = 0;
};

template <typename T>
class BatchNorm2d : public Module<T> {
 public:
  static constexpr double kMomentum = 0.9;
  static constexpr double kEps = 1e-5;

  BatchNorm2d(std::string name, int channels);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_buffers(std::vector<Parameter<T>*>& out) override;

  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }

 private:
  int channels_;
  Parameter<T> gamma_, beta_;
  Parameter<T> running_mean_, running_var_;
  Tensor<T> xhat_;
  std::vector<T> inv_std_;
  bool last_training_ = false;
};

/// x * sigmoid(x).
template <typename T>
class Swish : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  Tensor<T> input_;
};

/// N x C x H x W -> N x C x 1 x 1.
template <typename T>
class GlobalMeanPool : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;

 private:
  int h_ = 0, w_ = 0;
};

/// Fully connected layer on N x C x 1 x 1 tensors.
template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::string name, int in_features, int out_features);
  void init(Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;

  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter<T> weight_;  // out x in
  Parameter<T> bias_;
  Tensor<T> input_;
};

template <typename T>
class Sequential : public Module<T> {
 public:
  void add(std::unique_ptr<Module<T>> m) { layers_.push_back(std::move(m)); }
  bool empty() const { return layers_.empty(); }

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_buffers(std::vector<Parameter<T>*>& out) override;

 private:
  std::vector<std::unique_ptr<Module<T>>> layers_;
};

/// Basic residual unit: conv-BN-swish-conv-BN plus identity or 1x1 projection skip, then swish.
template <typename T>
class ResidualUnit : public Module<T> {
 public:
  ResidualUnit(const std::string& name, int in_channels, int out_channels, int kernel, int stride, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  Tensor<T> backward(const Tensor<T>& dy) override;
  void collect_parameters(std::vector<Parameter<T>*>& out) override;
  void collect_buffers(std::vector<Parameter<T>*>& out) override;

 private:
  Sequential<T> main_;
  Sequential<T> skip_;  // empty for identity
  Swish<T> out_act_;
};

// Loss functions return the mean loss and write d(loss)/d(input) into grad.

/// Mean over all elements of (pred - target)^2.
template <typename T>
double mse_loss(const Tensor<T>& pred, std::span<const T> target, Tensor<T>& grad);

/// Mean binary cross-entropy of sigmoid(logits) against {0, 1} targets, computed stably from logits.
template <typename T>
double bce_with_logits_loss(const Tensor<T>& logits, std::span<const T> target, Tensor<T>& grad);

template <typename T>
T sigmoid(T x);

}  // namespace routenas::nn
