#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "routenas/layers.hpp"
#include "support.hpp"

using namespace routenas;
using namespace routenas::nn;
using testing::check_module_gradients;
using testing::random_tensor;

namespace {

constexpr double kTol = 1e-4;

template <typename M>
void randomize(M& m, std::uint64_t seed) {
  std::vector<Parameter<double>*> ps;
  m.collect_parameters(ps);
  Rng rng(seed);
  for (auto* p : ps)
    for (auto& v : p->value) v = 0.5 * normal01(rng);
}

/// Direct convolution, cross-correlation convention, zero padding.
Tensor<double> naive_conv(const Tensor<double>& x, const std::vector<double>& w, const std::vector<double>* bias,
                          int cout, ConvGeometry g) {
  const int oh = g.out_size(x.h), ow = g.out_size(x.w);
  Tensor<double> y(x.n, cout, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int o = 0; o < cout; ++o)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx) {
          double s = bias ? (*bias)[static_cast<std::size_t>(o)] : 0.0;
          for (int c = 0; c < x.c; ++c)
            for (int ky = 0; ky < g.kernel; ++ky)
              for (int kx = 0; kx < g.kernel; ++kx) {
                const int iy = yy * g.stride - g.pad + ky, ix = xx * g.stride - g.pad + kx;
                if (iy < 0 || ix < 0 || iy >= x.h || ix >= x.w) continue;
                s += w[((static_cast<std::size_t>(o) * x.c + c) * g.kernel + ky) * g.kernel + kx] * x.at(n, c, iy, ix);
              }
          y.at(n, o, yy, xx) = s;
        }
  return y;
}

}  // namespace

TEST_CASE("conv forward matches direct convolution") {
  for (auto g : {ConvGeometry{3, 1, 1}, ConvGeometry{5, 2, 2}, ConvGeometry{1, 2, 0}, ConvGeometry{3, 2, 1}}) {
    Conv2d<double> conv("c", 3, 4, g, true);
    randomize(conv, 1);
    const auto x = random_tensor(2, 3, 8, 8, 2);
    const auto y = conv.forward(x, true);
    const auto ref = naive_conv(x, conv.weight().value, &conv.bias()->value, 4, g);
    REQUIRE(y.same_shape(ref));
    CHECK(testing::max_abs_diff(y.data, ref.data) < 1e-12);
  }
}

TEST_CASE("conv and transposed conv are adjoint") {
  for (auto g : {ConvGeometry{3, 1, 1}, ConvGeometry{3, 2, 1}, ConvGeometry{5, 2, 2}, ConvGeometry{1, 2, 0}}) {
    const int cin = 3, cout = 5, hw = 8;
    Conv2d<double> conv("c", cin, cout, g, false);
    randomize(conv, 3);
    const int oh = g.out_size(hw);
    const int op = hw - ((oh - 1) * g.stride - 2 * g.pad + g.kernel);
    ConvTranspose2d<double> tconv("t", cout, cin, g, op, false);
    tconv.weight().value = conv.weight().value;
    const auto x = random_tensor(2, cin, hw, hw, 4);
    const auto y = random_tensor(2, cout, oh, oh, 5);
    const double lhs = testing::dot(conv.forward(x, true).data, y.data);
    const auto ty = tconv.forward(y, true);
    REQUIRE(ty.same_shape(x));
    const double rhs = testing::dot(x.data, ty.data);
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("gradient checks for every layer type") {
  SUBCASE("conv") {
    for (auto g : {ConvGeometry{3, 1, 1}, ConvGeometry{5, 2, 2}, ConvGeometry{1, 1, 0}}) {
      Conv2d<double> m("c", 3, 4, g, true);
      randomize(m, 7);
      CHECK(check_module_gradients(m, random_tensor(2, 3, 6, 6, 8), true, 20, 9).max_rel_error <= kTol);
    }
  }
  SUBCASE("transposed conv") {
    for (int k : {3, 5}) {
      ConvTranspose2d<double> m("t", 3, 2, ConvGeometry{k, 2, (k - 1) / 2}, 1, true);
      randomize(m, 10);
      CHECK(check_module_gradients(m, random_tensor(2, 3, 4, 4, 11), true, 20, 12).max_rel_error <= kTol);
    }
  }
  SUBCASE("batch norm, training and inference") {
    BatchNorm2d<double> m("bn", 3);
    randomize(m, 13);
    const auto x = random_tensor(4, 3, 3, 3, 14);
    CHECK(check_module_gradients(m, x, true, 20, 15).max_rel_error <= kTol);
    CHECK(check_module_gradients(m, x, false, 20, 16).max_rel_error <= kTol);
  }
  SUBCASE("swish") {
    Swish<double> m;
    CHECK(check_module_gradients(m, random_tensor(2, 2, 4, 4, 17), true, 20, 18).max_rel_error <= kTol);
  }
  SUBCASE("global mean pool and linear") {
    GlobalMeanPool<double> pool;
    CHECK(check_module_gradients(pool, random_tensor(2, 3, 4, 4, 19), true, 20, 20).max_rel_error <= kTol);
    Linear<double> lin("l", 5, 3);
    randomize(lin, 21);
    CHECK(check_module_gradients(lin, random_tensor(3, 5, 1, 1, 22), true, 20, 23).max_rel_error <= kTol);
  }
  SUBCASE("residual units with identity and projection skips") {
    Rng rng(24);
    ResidualUnit<double> same("r", 3, 3, 3, 1, rng);
    CHECK(check_module_gradients(same, random_tensor(2, 3, 6, 6, 25), true, 20, 26).max_rel_error <= kTol);
    ResidualUnit<double> down("d", 3, 4, 5, 2, rng);
    CHECK(check_module_gradients(down, random_tensor(2, 3, 6, 6, 27), true, 20, 28).max_rel_error <= kTol);
  }
}

TEST_CASE("loss gradients") {
  Rng rng(30);
  Tensor<double> pred = random_tensor(3, 1, 2, 2, 31), grad;
  std::vector<double> target(pred.size()), bin(pred.size());
  for (std::size_t k = 0; k < target.size(); ++k) {
    target[k] = normal01(rng);
    bin[k] = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  }
  const double h = 1e-6;
  for (int which = 0; which < 2; ++which) {
    auto loss = [&](const Tensor<double>& p, Tensor<double>& g) {
      return which == 0 ? mse_loss<double>(p, target, g) : bce_with_logits_loss<double>(p, bin, g);
    };
    loss(pred, grad);
    for (std::size_t k = 0; k < pred.size(); ++k) {
      auto up = pred, dn = pred;
      up.data[k] += h;
      dn.data[k] -= h;
      Tensor<double> scratch;
      const double numeric = (loss(up, scratch) - loss(dn, scratch)) / (2 * h);
      CHECK(testing::relative_error(grad.data[k], numeric) <= 1e-6);
    }
  }
  // Closed forms at simple points.
  Tensor<double> zero(1, 1, 1, 2), g2;
  const std::vector<double> one_zero{1.0, 0.0};
  CHECK(bce_with_logits_loss<double>(zero, one_zero, g2) == doctest::Approx(std::log(2.0)));
  Tensor<double> big(1, 1, 1, 1, 800.0), g3;
  const std::vector<double> neg{0.0};
  CHECK(bce_with_logits_loss<double>(big, neg, g3) == doctest::Approx(800.0));
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(0.0) == 0.5);
}

TEST_CASE("batch norm statistics") {
  BatchNorm2d<double> bn("bn", 2);
  const auto x = random_tensor(8, 2, 4, 4, 40);
  const auto y = bn.forward(x, true);
  for (int c = 0; c < 2; ++c) {
    double s = 0, s2 = 0, n = 0;
    for (int i = 0; i < 8; ++i)
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          s += y.at(i, c, a, b);
          s2 += y.at(i, c, a, b) * y.at(i, c, a, b);
          n += 1;
        }
    CHECK(std::abs(s / n) < 1e-12);
    CHECK(s2 / n == doctest::Approx(1.0).epsilon(1e-4));
  }
  std::vector<Parameter<double>*> buffers;
  bn.collect_buffers(buffers);
  REQUIRE(buffers.size() == 2);
  // Running statistics move 10% toward the batch statistics.
  double mean0 = 0;
  for (int i = 0; i < 8; ++i)
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) mean0 += x.at(i, 0, a, b);
  mean0 /= 128;
  CHECK(buffers[0]->value[0] == doctest::Approx(0.1 * mean0));
}
