#include "routenas/network.hpp"

#include <algorithm>

namespace routenas::nn {

template <typename T>
Network<T>::Network(const ArchitectureSpec& spec, const BuildOptions& options) : spec_(spec), options_(options) {
  if (options.grid.w <= 0 || options.grid.h <= 0 || options.grid.w % 16 != 0 || options.grid.h % 16 != 0)
    throw ShapeError("grid " + std::to_string(options.grid.w) + "x" + std::to_string(options.grid.h) +
                     " is not divisible by 16");
  if (options.width_divisor < 1) throw ConfigError("width divisor must be >= 1");
  if (options.input_channels < 1) throw ConfigError("input channel count must be >= 1");
  const bool hotspot = spec.task == Task::Hotspot;
  if (hotspot && (spec.trans.size() != 3 || spec.shortcuts.size() != 3))
    throw ShapeError("hotspot architecture needs 3 transposed-conv stages and 3 shortcut flags");

  Rng rng(options.seed);

  const int stem_out = width(spec.stem.n_filters);
  auto stem_conv = std::make_unique<Conv2d<T>>(
      "stem.conv", options.input_channels, stem_out,
      ConvGeometry{spec.stem.kernel, spec.stem.stride, (spec.stem.kernel - 1) / 2}, false);
  stem_conv->init(rng);
  stem_.add(std::move(stem_conv));
  stem_.add(std::make_unique<BatchNorm2d<T>>("stem.bn", stem_out));
  stem_.add(std::make_unique<Swish<T>>());

  std::array<int, 4> enc_channels{};
  int channels = stem_out;
  for (int s = 0; s < 4; ++s) {
    const auto& block = spec.conv[static_cast<std::size_t>(s)];
    const int out = width(block.n_filters);
    for (int u = 0; u < block.n_blocks; ++u) {
      const int stride = (u == 0 && s > 0) ? 2 : 1;
      conv_[static_cast<std::size_t>(s)].add(std::make_unique<ResidualUnit<T>>(
          "conv" + std::to_string(s + 1) + "." + std::to_string(u), channels, out, block.kernel, stride, rng));
      channels = out;
    }
    enc_channels[static_cast<std::size_t>(s)] = out;
  }

  if (!hotspot) {
    linear_ = std::make_unique<Linear<T>>("head.linear", channels, 1);
    linear_->init(rng);
    return;
  }

  trans_.resize(3);
  for (int t = 0; t < 3; ++t) {
    const auto& block = spec.trans[static_cast<std::size_t>(t)];
    const int out = width(block.n_filters);
    const int pad = (block.kernel - 1) / 2;
    for (int u = 0; u < block.n_blocks; ++u) {
      const std::string name = "trans" + std::to_string(t + 1) + "." + std::to_string(u);
      const int stride = u == 0 ? 2 : 1;
      auto conv = std::make_unique<ConvTranspose2d<T>>(name + ".conv", channels, out,
                                                       ConvGeometry{block.kernel, stride, pad}, stride - 1, false);
      conv->init(rng);
      auto& seq = trans_[static_cast<std::size_t>(t)];
      seq.add(std::move(conv));
      seq.add(std::make_unique<BatchNorm2d<T>>(name + ".bn", out));
      seq.add(std::make_unique<Swish<T>>());
      channels = out;
    }
    std::unique_ptr<Sequential<T>> sc;
    if (spec.shortcuts[static_cast<std::size_t>(t)]) {
      sc = std::make_unique<Sequential<T>>();
      const int src = enc_channels[static_cast<std::size_t>(2 - t)];
      if (src != out) {
        const std::string name = "shortcut" + std::to_string(t + 1);
        auto proj = std::make_unique<Conv2d<T>>(name + ".proj", src, out, ConvGeometry{1, 1, 0}, false);
        proj->init(rng);
        sc->add(std::move(proj));
        sc->add(std::make_unique<BatchNorm2d<T>>(name + ".bn", out));
      }
    }
    shortcut_.push_back(std::move(sc));
  }
  const int k = spec.head.kernel;
  head_ = std::make_unique<ConvTranspose2d<T>>("head.conv", channels, 1, ConvGeometry{k, 2, (k - 1) / 2}, 1, true);
  head_->init(rng, 1.0);
}

template <typename T>
int Network<T>::width(int filters) const {
  return std::max(1, filters / options_.width_divisor);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, bool training) {
  if (x.c != options_.input_channels)
    throw ShapeError("network expects " + std::to_string(options_.input_channels) + " input channels, got " +
                     std::to_string(x.c));
  if (x.h % 16 != 0 || x.w % 16 != 0 || x.h == 0 || x.w == 0)
    throw ShapeError("input " + x.shape_str() + " is not divisible by 16");
  shapes_.clear();
  auto record = [this](const std::string& name, const Tensor<T>& t) { shapes_.push_back({name, t.c, t.h, t.w}); };

  Tensor<T> h = stem_.forward(x, training);
  record("stem", h);
  std::array<Tensor<T>, 3> skips;
  for (std::size_t s = 0; s < 4; ++s) {
    h = conv_[s].forward(h, training);
    record("conv" + std::to_string(s + 1), h);
    if (head_ && s < 3) skips[s] = h;
  }
  if (linear_) {
    Tensor<T> out = linear_->forward(pool_.forward(h, training), training);
    record("head", out);
    return out;
  }
  for (std::size_t t = 0; t < 3; ++t) {
    h = trans_[t].forward(h, training);
    if (shortcut_[t]) {
      const Tensor<T> s = shortcut_[t]->forward(skips[2 - t], training);
      require_shape(h, s, "shortcut addition");
      for (std::size_t k = 0; k < h.size(); ++k) h.data[k] += s.data[k];
    }
    record("trans" + std::to_string(t + 1), h);
  }
  Tensor<T> out = head_->forward(h, training);
  record("head", out);
  return out;
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& dy) {
  Tensor<T> g;
  std::array<Tensor<T>, 3> extra;
  if (linear_) {
    g = pool_.backward(linear_->backward(dy));
  } else {
    g = head_->backward(dy);
    for (std::size_t t = 3; t-- > 0;) {
      if (shortcut_[t]) extra[2 - t] = shortcut_[t]->backward(g);
      g = trans_[t].backward(g);
    }
  }
  for (std::size_t s = 4; s-- > 0;) {
    if (s < 3 && !extra[s].data.empty()) {
      require_shape(g, extra[s], "shortcut gradient");
      for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += extra[s].data[k];
    }
    g = conv_[s].backward(g);
  }
  return stem_.backward(g);
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& x) {
  std::lock_guard lock(predict_mutex_);
  Tensor<T> out = forward(x, false);
  if (head_)
    for (auto& v : out.data) v = sigmoid(v);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
  std::vector<Parameter<T>*> out;
  stem_.collect_parameters(out);
  for (auto& s : conv_) s.collect_parameters(out);
  if (linear_) linear_->collect_parameters(out);
  for (auto& s : trans_) s.collect_parameters(out);
  for (auto& s : shortcut_)
    if (s) s->collect_parameters(out);
  if (head_) head_->collect_parameters(out);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::buffers() {
  std::vector<Parameter<T>*> out;
  stem_.collect_buffers(out);
  for (auto& s : conv_) s.collect_buffers(out);
  for (auto& s : trans_) s.collect_buffers(out);
  for (auto& s : shortcut_)
    if (s) s->collect_buffers(out);
  return out;
}

template <typename T>
std::size_t Network<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
void Network<T>::zero_grad() {
  for (auto* p : parameters()) std::fill(p->grad.begin(), p->grad.end(), T(0));
}

std::vector<StageShape> trace_shapes(const ArchitectureSpec& spec, const BuildOptions& options, int batch) {
  Network<float> net(spec, options);
  net.forward(Tensor<float>(batch, options.input_channels, options.grid.h, options.grid.w), false);
  return net.stage_shapes();
}

template class Network<float>;
template class Network<double>;

}  // namespace routenas::nn
