#include "routenas/layers.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>

namespace routenas::nn {

namespace {

// Upper bound on im2col buffer elements; larger batches are processed in sample chunks.
constexpr std::size_t kMaxColElements = std::size_t{1} << 25;

void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b, int ldb,
          float beta, float* c, int ldc) {
  cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
              b, ldb, beta, c, ldc);
}

void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b, int ldb,
          double beta, double* c, int ldc) {
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda,
              b, ldb, beta, c, ldc);
}

// Output columns [lo, hi) whose input column ox * stride - pad + offset falls inside [0, size).
struct ValidRange {
  int lo = 0;
  int hi = 0;
};

ValidRange valid_range(int offset, int stride, int pad, int size, int out) {
  // ox * stride >= pad - offset  and  ox * stride <= size - 1 + pad - offset
  const int a = pad - offset;
  const int b = size - 1 + pad - offset;
  int lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  int hi = b < 0 ? 0 : b / stride + 1;
  lo = std::min(lo, out);
  hi = std::clamp(hi, lo, out);
  return {lo, hi};
}

// Unfolds one C x H x W image into rows (c, ki, kj) of a column matrix with leading dimension ld,
// writing output positions (oy, ox) at column offset off.
template <typename T>
void im2col(const T* img, int channels, int height, int width, const ConvGeometry& g, int out_h, int out_w, T* col,
            std::size_t ld, std::size_t off) {
  const int k = g.kernel, s = g.stride;
  for (int c = 0; c < channels; ++c) {
    const T* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      const ValidRange ry = valid_range(ki, s, g.pad, height, out_h);
      for (int kj = 0; kj < k; ++kj) {
        const ValidRange rx = valid_range(kj, s, g.pad, width, out_w);
        T* dst = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * ld + off;
        std::fill(dst, dst + static_cast<std::size_t>(ry.lo) * out_w, T(0));
        for (int oy = ry.lo; oy < ry.hi; ++oy) {
          T* row = dst + static_cast<std::size_t>(oy) * out_w;
          const T* src = plane + static_cast<std::size_t>(oy * s - g.pad + ki) * width + (kj - g.pad);
          std::fill(row, row + rx.lo, T(0));
          if (s == 1) {
            std::copy(src + rx.lo, src + rx.hi, row + rx.lo);
          } else {
            for (int ox = rx.lo; ox < rx.hi; ++ox) row[ox] = src[ox * s];
          }
          std::fill(row + rx.hi, row + out_w, T(0));
        }
        std::fill(dst + static_cast<std::size_t>(ry.hi) * out_w, dst + static_cast<std::size_t>(out_h) * out_w, T(0));
      }
    }
  }
}

// Adjoint of im2col: accumulates column entries back into the image.
template <typename T>
void col2im(const T* col, int channels, int height, int width, const ConvGeometry& g, int out_h, int out_w, T* img,
            std::size_t ld, std::size_t off) {
  const int k = g.kernel, s = g.stride;
  for (int c = 0; c < channels; ++c) {
    T* plane = img + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      const ValidRange ry = valid_range(ki, s, g.pad, height, out_h);
      for (int kj = 0; kj < k; ++kj) {
        const ValidRange rx = valid_range(kj, s, g.pad, width, out_w);
        const T* srcbase = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * ld + off;
        for (int oy = ry.lo; oy < ry.hi; ++oy) {
          const T* row = srcbase + static_cast<std::size_t>(oy) * out_w;
          T* dst = plane + static_cast<std::size_t>(oy * s - g.pad + ki) * width + (kj - g.pad);
          if (s == 1) {
            for (int ox = rx.lo; ox < rx.hi; ++ox) dst[ox] += row[ox];
          } else {
            for (int ox = rx.lo; ox < rx.hi; ++ox) dst[ox * s] += row[ox];
          }
        }
      }
    }
  }
}

// Copies samples [n0, n0 + m) of x into a C x (m * H * W) matrix.
template <typename T>
void gather_channels(const Tensor<T>& x, int n0, int m, std::vector<T>& mat) {
  const std::size_t hw = x.plane();
  const std::size_t cols = static_cast<std::size_t>(m) * hw;
  mat.resize(static_cast<std::size_t>(x.c) * cols);
  for (int s = 0; s < m; ++s)
    for (int c = 0; c < x.c; ++c) {
      const T* src = x.data.data() + (static_cast<std::size_t>(n0 + s) * x.c + c) * hw;
      std::copy(src, src + hw, mat.data() + static_cast<std::size_t>(c) * cols + static_cast<std::size_t>(s) * hw);
    }
}

template <typename T>
void scatter_channels(const std::vector<T>& mat, int n0, int m, Tensor<T>& x) {
  const std::size_t hw = x.plane();
  const std::size_t cols = static_cast<std::size_t>(m) * hw;
  for (int s = 0; s < m; ++s)
    for (int c = 0; c < x.c; ++c) {
      const T* src = mat.data() + static_cast<std::size_t>(c) * cols + static_cast<std::size_t>(s) * hw;
      std::copy(src, src + hw, x.data.data() + (static_cast<std::size_t>(n0 + s) * x.c + c) * hw);
    }
}

int chunk_size(int n, std::size_t per_sample) {
  const auto fit = std::max<std::size_t>(1, kMaxColElements / std::max<std::size_t>(per_sample, 1));
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), fit));
}

template <typename T>
void fill_normal(std::vector<T>& v, Rng& rng, double stddev) {
  for (auto& x : v) x = static_cast<T>(normal01(rng) * stddev);
}

}  // namespace

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
Conv2d<T>::Conv2d(std::string name, int in_channels, int out_channels, ConvGeometry geom, bool bias)
    : cin_(in_channels),
      cout_(out_channels),
      geom_(geom),
      has_bias_(bias),
      weight_(name + ".weight", static_cast<std::size_t>(out_channels) * in_channels * geom.kernel * geom.kernel),
      bias_(name + ".bias", bias ? static_cast<std::size_t>(out_channels) : 0) {}

template <typename T>
void Conv2d<T>::init(Rng& rng) {
  const double fan_in = static_cast<double>(cin_) * geom_.kernel * geom_.kernel;
  fill_normal(weight_.value, rng, std::sqrt(2.0 / fan_in));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Tensor<T> Conv2d<T>::forward(const Tensor<T>& x, bool /*training*/) {
  if (x.c != cin_) throw ShapeError("conv " + weight_.name + ": expected " + std::to_string(cin_) + " channels, got " +
                                    std::to_string(x.c));
  const int oh = geom_.out_size(x.h), ow = geom_.out_size(x.w);
  if (oh <= 0 || ow <= 0) throw ShapeError("conv " + weight_.name + ": input too small");
  input_ = x;
  Tensor<T> y(x.n, cout_, oh, ow);
  const int ckk = cin_ * geom_.kernel * geom_.kernel;
  const std::size_t hw_out = static_cast<std::size_t>(oh) * ow;
  const int nb = chunk_size(x.n, static_cast<std::size_t>(ckk) * hw_out);
  std::vector<T> col, out;
  for (int n0 = 0; n0 < x.n; n0 += nb) {
    const int m = std::min(nb, x.n - n0);
    const std::size_t cols = static_cast<std::size_t>(m) * hw_out;
    col.resize(static_cast<std::size_t>(ckk) * cols);
    for (int s = 0; s < m; ++s)
      im2col(x.sample(n0 + s).data(), cin_, x.h, x.w, geom_, oh, ow, col.data(), cols, static_cast<std::size_t>(s) * hw_out);
    out.resize(static_cast<std::size_t>(cout_) * cols);
    gemm(false, false, cout_, static_cast<int>(cols), ckk, T(1), weight_.value.data(), ckk, col.data(),
         static_cast<int>(cols), T(0), out.data(), static_cast<int>(cols));
    if (has_bias_)
      for (int c = 0; c < cout_; ++c)
        for (std::size_t k = 0; k < cols; ++k) out[static_cast<std::size_t>(c) * cols + k] += bias_.value[c];
    scatter_channels(out, n0, m, y);
  }
  return y;
}

template <typename T>
Tensor<T> Conv2d<T>::backward(const Tensor<T>& dy) {
  const Tensor<T>& x = input_;
  const int oh = dy.h, ow = dy.w;
  Tensor<T> dx(x.n, x.c, x.h, x.w);
  const int ckk = cin_ * geom_.kernel * geom_.kernel;
  const std::size_t hw_out = static_cast<std::size_t>(oh) * ow;
  const int nb = chunk_size(x.n, static_cast<std::size_t>(ckk) * hw_out);
  std::vector<T> col, dmat, dcol;
  for (int n0 = 0; n0 < x.n; n0 += nb) {
    const int m = std::min(nb, x.n - n0);
    const std::size_t cols = static_cast<std::size_t>(m) * hw_out;
    const int icols = static_cast<int>(cols);
    col.resize(static_cast<std::size_t>(ckk) * cols);
    for (int s = 0; s < m; ++s)
      im2col(x.sample(n0 + s).data(), cin_, x.h, x.w, geom_, oh, ow, col.data(), cols, static_cast<std::size_t>(s) * hw_out);
    gather_channels(dy, n0, m, dmat);
    gemm(false, true, cout_, ckk, icols, T(1), dmat.data(), icols, col.data(), icols, T(1), weight_.grad.data(), ckk);
    if (has_bias_)
      for (int c = 0; c < cout_; ++c) {
        T acc = 0;
        for (std::size_t k = 0; k < cols; ++k) acc += dmat[static_cast<std::size_t>(c) * cols + k];
        bias_.grad[c] += acc;
      }
    dcol.resize(static_cast<std::size_t>(ckk) * cols);
    gemm(true, false, ckk, icols, cout_, T(1), weight_.value.data(), ckk, dmat.data(), icols, T(0), dcol.data(), icols);
    for (int s = 0; s < m; ++s)
      col2im(dcol.data(), cin_, x.h, x.w, geom_, oh, ow, dx.sample(n0 + s).data(), cols,
             static_cast<std::size_t>(s) * hw_out);
  }
  return dx;
}

template <typename T>
void Conv2d<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ------------------------------------------------------- ConvTranspose2d

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::string name, int in_channels, int out_channels, ConvGeometry geom,
                                    int output_padding, bool bias)
    : cin_(in_channels),
      cout_(out_channels),
      geom_(geom),
      output_padding_(output_padding),
      has_bias_(bias),
      weight_(name + ".weight", static_cast<std::size_t>(in_channels) * out_channels * geom.kernel * geom.kernel),
      bias_(name + ".bias", bias ? static_cast<std::size_t>(out_channels) : 0) {}

template <typename T>
void ConvTranspose2d<T>::init(Rng& rng, double gain) {
  const double fan_in = static_cast<double>(cin_) * geom_.kernel * geom_.kernel / (geom_.stride * geom_.stride);
  fill_normal(weight_.value, rng, std::sqrt(gain / fan_in));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::forward(const Tensor<T>& x, bool /*training*/) {
  if (x.c != cin_) throw ShapeError("transposed conv " + weight_.name + ": expected " + std::to_string(cin_) +
                                    " channels, got " + std::to_string(x.c));
  const int oh = out_size(x.h), ow = out_size(x.w);
  if (geom_.out_size(oh) != x.h || geom_.out_size(ow) != x.w)
    throw ShapeError("transposed conv " + weight_.name + ": inconsistent geometry");
  input_ = x;
  out_h_ = oh;
  out_w_ = ow;
  Tensor<T> y(x.n, cout_, oh, ow);
  const int ckk = cout_ * geom_.kernel * geom_.kernel;
  const std::size_t hw_in = x.plane();
  const int nb = chunk_size(x.n, static_cast<std::size_t>(ckk) * hw_in);
  std::vector<T> xmat, col;
  for (int n0 = 0; n0 < x.n; n0 += nb) {
    const int m = std::min(nb, x.n - n0);
    const std::size_t cols = static_cast<std::size_t>(m) * hw_in;
    const int icols = static_cast<int>(cols);
    gather_channels(x, n0, m, xmat);
    col.resize(static_cast<std::size_t>(ckk) * cols);
    gemm(true, false, ckk, icols, cin_, T(1), weight_.value.data(), ckk, xmat.data(), icols, T(0), col.data(), icols);
    for (int s = 0; s < m; ++s)
      col2im(col.data(), cout_, oh, ow, geom_, x.h, x.w, y.sample(n0 + s).data(), cols,
             static_cast<std::size_t>(s) * hw_in);
  }
  if (has_bias_)
    for (int ni = 0; ni < y.n; ++ni)
      for (int c = 0; c < cout_; ++c) {
        T* p = y.data.data() + (static_cast<std::size_t>(ni) * cout_ + c) * y.plane();
        for (std::size_t k = 0; k < y.plane(); ++k) p[k] += bias_.value[c];
      }
  return y;
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::backward(const Tensor<T>& dy) {
  const Tensor<T>& x = input_;
  Tensor<T> dx(x.n, x.c, x.h, x.w);
  const int ckk = cout_ * geom_.kernel * geom_.kernel;
  const std::size_t hw_in = x.plane();
  const int nb = chunk_size(x.n, static_cast<std::size_t>(ckk) * hw_in);
  std::vector<T> xmat, dcol, dxmat;
  for (int n0 = 0; n0 < x.n; n0 += nb) {
    const int m = std::min(nb, x.n - n0);
    const std::size_t cols = static_cast<std::size_t>(m) * hw_in;
    const int icols = static_cast<int>(cols);
    dcol.resize(static_cast<std::size_t>(ckk) * cols);
    for (int s = 0; s < m; ++s)
      im2col(dy.sample(n0 + s).data(), cout_, dy.h, dy.w, geom_, x.h, x.w, dcol.data(), cols,
             static_cast<std::size_t>(s) * hw_in);
    gather_channels(x, n0, m, xmat);
    gemm(false, true, cin_, ckk, icols, T(1), xmat.data(), icols, dcol.data(), icols, T(1), weight_.grad.data(), ckk);
    dxmat.resize(static_cast<std::size_t>(cin_) * cols);
    gemm(false, false, cin_, icols, ckk, T(1), weight_.value.data(), ckk, dcol.data(), icols, T(0), dxmat.data(), icols);
    scatter_channels(dxmat, n0, m, dx);
  }
  if (has_bias_)
    for (int ni = 0; ni < dy.n; ++ni)
      for (int c = 0; c < cout_; ++c) {
        const T* p = dy.data.data() + (static_cast<std::size_t>(ni) * cout_ + c) * dy.plane();
        T acc = 0;
        for (std::size_t k = 0; k < dy.plane(); ++k) acc += p[k];
        bias_.grad[c] += acc;
      }
  return dx;
}

template <typename T>
void ConvTranspose2d<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

// ----------------------------------------------------------- BatchNorm2d

template <typename T>
BatchNorm2d<T>::BatchNorm2d(std::string name, int channels)
    : channels_(channels),
      gamma_(name + ".gamma", static_cast<std::size_t>(channels)),
      beta_(name + ".beta", static_cast<std::size_t>(channels)),
      running_mean_(name + ".running_mean", static_cast<std::size_t>(channels)),
      running_var_(name + ".running_var", static_cast<std::size_t>(channels)) {
  std::fill(gamma_.value.begin(), gamma_.value.end(), T(1));
  std::fill(running_var_.value.begin(), running_var_.value.end(), T(1));
}

template <typename T>
Tensor<T> BatchNorm2d<T>::forward(const Tensor<T>& x, bool training) {
  if (x.c != channels_) throw ShapeError("batch norm " + gamma_.name + ": channel mismatch");
  const std::size_t hw = x.plane();
  const std::size_t count = static_cast<std::size_t>(x.n) * hw;
  Tensor<T> y(x.n, x.c, x.h, x.w);
  xhat_ = Tensor<T>(x.n, x.c, x.h, x.w);
  inv_std_.assign(static_cast<std::size_t>(channels_), T(0));
  last_training_ = training;
  for (int c = 0; c < channels_; ++c) {
    double mean, var;
    if (training) {
      double sum = 0.0;
      for (int ni = 0; ni < x.n; ++ni) {
        const T* p = x.data.data() + (static_cast<std::size_t>(ni) * x.c + c) * hw;
        for (std::size_t k = 0; k < hw; ++k) sum += p[k];
      }
      mean = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int ni = 0; ni < x.n; ++ni) {
        const T* p = x.data.data() + (static_cast<std::size_t>(ni) * x.c + c) * hw;
        for (std::size_t k = 0; k < hw; ++k) sq += (p[k] - mean) * (p[k] - mean);
      }
      var = sq / static_cast<double>(count);
      const double unbiased = count > 1 ? var * static_cast<double>(count) / static_cast<double>(count - 1) : var;
      running_mean_.value[c] = static_cast<T>(kMomentum * running_mean_.value[c] + (1.0 - kMomentum) * mean);
      running_var_.value[c] = static_cast<T>(kMomentum * running_var_.value[c] + (1.0 - kMomentum) * unbiased);
    } else {
      mean = running_mean_.value[c];
      var = running_var_.value[c];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + kEps));
    inv_std_[c] = inv;
    const T m = static_cast<T>(mean);
    for (int ni = 0; ni < x.n; ++ni) {
      const std::size_t base = (static_cast<std::size_t>(ni) * x.c + c) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        const T xh = (x.data[base + k] - m) * inv;
        xhat_.data[base + k] = xh;
        y.data[base + k] = gamma_.value[c] * xh + beta_.value[c];
      }
    }
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm2d<T>::backward(const Tensor<T>& dy) {
  const std::size_t hw = dy.plane();
  const auto count = static_cast<double>(static_cast<std::size_t>(dy.n) * hw);
  Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int ni = 0; ni < dy.n; ++ni) {
      const std::size_t base = (static_cast<std::size_t>(ni) * dy.c + c) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        sum_dy += dy.data[base + k];
        sum_dy_xhat += static_cast<double>(dy.data[base + k]) * xhat_.data[base + k];
      }
    }
    gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
    beta_.grad[c] += static_cast<T>(sum_dy);
    const double g = gamma_.value[c];
    const double inv = inv_std_[c];
    for (int ni = 0; ni < dy.n; ++ni) {
      const std::size_t base = (static_cast<std::size_t>(ni) * dy.c + c) * hw;
      for (std::size_t k = 0; k < hw; ++k) {
        if (last_training_) {
          dx.data[base + k] = static_cast<T>(g * inv / count *
                                             (count * dy.data[base + k] - sum_dy - xhat_.data[base + k] * sum_dy_xhat));
        } else {
          dx.data[base + k] = static_cast<T>(g * inv * dy.data[base + k]);
        }
      }
    }
  }
  return dx;
}

template <typename T>
void BatchNorm2d<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
}

template <typename T>
void BatchNorm2d<T>::collect_buffers(std::vector<Parameter<T>*>& out) {
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

// ----------------------------------------------------------------- Swish

template <typename T>
Tensor<T> Swish<T>::forward(const Tensor<T>& x, bool /*training*/) {
  input_ = x;
  Tensor<T> y(x.n, x.c, x.h, x.w);
  for (std::size_t k = 0; k < x.size(); ++k) y.data[k] = x.data[k] * sigmoid(x.data[k]);
  return y;
}

template <typename T>
Tensor<T> Swish<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n, dy.c, dy.h, dy.w);
  for (std::size_t k = 0; k < dy.size(); ++k) {
    const T x = input_.data[k];
    const T s = sigmoid(x);
    dx.data[k] = dy.data[k] * (s + x * s * (T(1) - s));
  }
  return dx;
}

// -------------------------------------------------------- GlobalMeanPool

template <typename T>
Tensor<T> GlobalMeanPool<T>::forward(const Tensor<T>& x, bool /*training*/) {
  h_ = x.h;
  w_ = x.w;
  Tensor<T> y(x.n, x.c, 1, 1);
  const std::size_t hw = x.plane();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(x.n) * x.c; ++nc) {
    double acc = 0.0;
    for (std::size_t k = 0; k < hw; ++k) acc += x.data[nc * hw + k];
    y.data[nc] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return y;
}

template <typename T>
Tensor<T> GlobalMeanPool<T>::backward(const Tensor<T>& dy) {
  Tensor<T> dx(dy.n, dy.c, h_, w_);
  const std::size_t hw = dx.plane();
  const T scale = T(1) / static_cast<T>(hw);
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(dy.n) * dy.c; ++nc)
    std::fill(dx.data.begin() + static_cast<std::ptrdiff_t>(nc * hw),
              dx.data.begin() + static_cast<std::ptrdiff_t>((nc + 1) * hw), dy.data[nc] * scale);
  return dx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features)
    : in_(in_features),
      out_(out_features),
      weight_(name + ".weight", static_cast<std::size_t>(in_features) * out_features),
      bias_(name + ".bias", static_cast<std::size_t>(out_features)) {}

template <typename T>
void Linear<T>::init(Rng& rng) {
  fill_normal(weight_.value, rng, std::sqrt(1.0 / in_));
  std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool /*training*/) {
  if (static_cast<int>(x.sample_size()) != in_) throw ShapeError("linear " + weight_.name + ": feature mismatch");
  input_ = x;
  Tensor<T> y(x.n, out_, 1, 1);
  for (int ni = 0; ni < x.n; ++ni)
    for (int o = 0; o < out_; ++o) {
      T acc = bias_.value[o];
      for (int i = 0; i < in_; ++i)
        acc += weight_.value[static_cast<std::size_t>(o) * in_ + i] * x.data[static_cast<std::size_t>(ni) * in_ + i];
      y.data[static_cast<std::size_t>(ni) * out_ + o] = acc;
    }
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& dy) {
  const Tensor<T>& x = input_;
  Tensor<T> dx(x.n, x.c, x.h, x.w);
  for (int ni = 0; ni < x.n; ++ni)
    for (int o = 0; o < out_; ++o) {
      const T g = dy.data[static_cast<std::size_t>(ni) * out_ + o];
      bias_.grad[o] += g;
      for (int i = 0; i < in_; ++i) {
        weight_.grad[static_cast<std::size_t>(o) * in_ + i] += g * x.data[static_cast<std::size_t>(ni) * in_ + i];
        dx.data[static_cast<std::size_t>(ni) * in_ + i] += g * weight_.value[static_cast<std::size_t>(o) * in_ + i];
      }
    }
  return dx;
}

template <typename T>
void Linear<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  out.push_back(&bias_);
}

// ------------------------------------------------------------ Sequential

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, bool training) {
  if (layers_.empty()) return x;
  Tensor<T> h = layers_.front()->forward(x, training);
  for (std::size_t k = 1; k < layers_.size(); ++k) h = layers_[k]->forward(h, training);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& dy) {
  if (layers_.empty()) return dy;
  Tensor<T> g = layers_.back()->backward(dy);
  for (std::size_t k = layers_.size() - 1; k-- > 0;) g = layers_[k]->backward(g);
  return g;
}

template <typename T>
void Sequential<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  for (auto& l : layers_) l->collect_parameters(out);
}

template <typename T>
void Sequential<T>::collect_buffers(std::vector<Parameter<T>*>& out) {
  for (auto& l : layers_) l->collect_buffers(out);
}

// ---------------------------------------------------------- ResidualUnit

template <typename T>
ResidualUnit<T>::ResidualUnit(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
                              Rng& rng) {
  const int pad = (kernel - 1) / 2;
  auto conv1 = std::make_unique<Conv2d<T>>(name + ".conv1", in_channels, out_channels, ConvGeometry{kernel, stride, pad}, false);
  auto conv2 = std::make_unique<Conv2d<T>>(name + ".conv2", out_channels, out_channels, ConvGeometry{kernel, 1, pad}, false);
  conv1->init(rng);
  conv2->init(rng);
  main_.add(std::move(conv1));
  main_.add(std::make_unique<BatchNorm2d<T>>(name + ".bn1", out_channels));
  main_.add(std::make_unique<Swish<T>>());
  main_.add(std::move(conv2));
  main_.add(std::make_unique<BatchNorm2d<T>>(name + ".bn2", out_channels));
  if (stride != 1 || in_channels != out_channels) {
    auto proj = std::make_unique<Conv2d<T>>(name + ".proj", in_channels, out_channels, ConvGeometry{1, stride, 0}, false);
    proj->init(rng);
    skip_.add(std::move(proj));
    skip_.add(std::make_unique<BatchNorm2d<T>>(name + ".proj_bn", out_channels));
  }
}

template <typename T>
Tensor<T> ResidualUnit<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> a = main_.forward(x, training);
  Tensor<T> b = skip_.forward(x, training);
  require_shape(a, b, "residual sum");
  for (std::size_t k = 0; k < a.size(); ++k) a.data[k] += b.data[k];
  return out_act_.forward(a, training);
}

template <typename T>
Tensor<T> ResidualUnit<T>::backward(const Tensor<T>& dy) {
  const Tensor<T> g = out_act_.backward(dy);
  Tensor<T> dx = main_.backward(g);
  const Tensor<T> ds = skip_.backward(g);
  for (std::size_t k = 0; k < dx.size(); ++k) dx.data[k] += ds.data[k];
  return dx;
}

template <typename T>
void ResidualUnit<T>::collect_parameters(std::vector<Parameter<T>*>& out) {
  main_.collect_parameters(out);
  skip_.collect_parameters(out);
}

template <typename T>
void ResidualUnit<T>::collect_buffers(std::vector<Parameter<T>*>& out) {
  main_.collect_buffers(out);
  skip_.collect_buffers(out);
}

// ---------------------------------------------------------------- losses

template <typename T>
double mse_loss(const Tensor<T>& pred, std::span<const T> target, Tensor<T>& grad) {
  if (target.size() != pred.size()) throw ShapeError("mse: target size mismatch");
  grad = Tensor<T>(pred.n, pred.c, pred.h, pred.w);
  const auto count = static_cast<double>(pred.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    const double d = static_cast<double>(pred.data[k]) - static_cast<double>(target[k]);
    loss += d * d;
    grad.data[k] = static_cast<T>(2.0 * d / count);
  }
  return loss / count;
}

template <typename T>
double bce_with_logits_loss(const Tensor<T>& logits, std::span<const T> target, Tensor<T>& grad) {
  if (target.size() != logits.size()) throw ShapeError("bce: target size mismatch");
  grad = Tensor<T>(logits.n, logits.c, logits.h, logits.w);
  const auto count = static_cast<double>(logits.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const double z = logits.data[k];
    const double y = target[k];
    // max(z, 0) - z*y + log(1 + exp(-|z|))
    loss += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
    grad.data[k] = static_cast<T>((static_cast<double>(sigmoid(logits.data[k])) - y) / count);
  }
  return loss / count;
}

#define ROUTENAS_INSTANTIATE(T)                                                               \
  template T sigmoid<T>(T);                                                                   \
  template class Conv2d<T>;                                                                   \
  template class ConvTranspose2d<T>;                                                          \
  template class BatchNorm2d<T>;                                                              \
  template class Swish<T>;                                                                    \
  template class GlobalMeanPool<T>;                                                           \
  template class Linear<T>;                                                                   \
  template class Sequential<T>;                                                               \
  template class ResidualUnit<T>;                                                             \
  template double mse_loss<T>(const Tensor<T>&, std::span<const T>, Tensor<T>&);              \
  template double bce_with_logits_loss<T>(const Tensor<T>&, std::span<const T>, Tensor<T>&);

ROUTENAS_INSTANTIATE(float)
ROUTENAS_INSTANTIATE(double)

#undef ROUTENAS_INSTANTIATE

}  // namespace routenas::nn
