#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "routenas/errors.hpp"

namespace routenas::nn {

/// Dense N x C x H x W array.
template <typename T>
struct Tensor {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * static_cast<std::size_t>(w); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * plane(); }

  T& at(int ni, int ci, int y, int x) {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
  }
  T at(int ni, int ci, int y, int x) const {
    return data[((static_cast<std::size_t>(ni) * c + ci) * h + y) * w + x];
  }

  std::span<T> sample(int ni) { return {data.data() + static_cast<std::size_t>(ni) * sample_size(), sample_size()}; }
  std::span<const T> sample(int ni) const {
    return {data.data() + static_cast<std::size_t>(ni) * sample_size(), sample_size()};
  }

  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }
};

template <typename T>
void require_shape(const Tensor<T>& a, const Tensor<T>& b, const char* where) {
  if (!a.same_shape(b)) throw ShapeError(std::string(where) + ": shape " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace routenas::nn
