#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "routenas/errors.hpp"
#include "routenas/network.hpp"
#include "routenas/train.hpp"
#include "support.hpp"

using namespace routenas;
using namespace routenas::nn;
namespace fs = std::filesystem;

namespace {

std::size_t conv_params(std::size_t cin, std::size_t cout, std::size_t k) { return cin * cout * k * k; }

/// Parameter count from the architecture description alone.
std::size_t expected_parameters(const ArchitectureSpec& s, int divisor, int input_channels = 16) {
  auto w = [&](int f) { return static_cast<std::size_t>(std::max(1, f / divisor)); };
  std::size_t total = 0;
  std::size_t c = w(s.stem.n_filters);
  total += conv_params(static_cast<std::size_t>(input_channels), c, static_cast<std::size_t>(s.stem.kernel)) + 2 * c;
  std::array<std::size_t, 4> enc{};
  for (int st = 0; st < 4; ++st) {
    const auto& b = s.conv[static_cast<std::size_t>(st)];
    const std::size_t out = w(b.n_filters), k = static_cast<std::size_t>(b.kernel);
    for (int u = 0; u < b.n_blocks; ++u) {
      total += conv_params(c, out, k) + 2 * out + conv_params(out, out, k) + 2 * out;
      const bool downsample = u == 0 && st > 0;
      if (downsample || c != out) total += c * out + 2 * out;
      c = out;
    }
    enc[static_cast<std::size_t>(st)] = out;
  }
  if (s.task == Task::NetCount) return total + c + 1;
  for (int t = 0; t < 3; ++t) {
    const auto& b = s.trans[static_cast<std::size_t>(t)];
    const std::size_t out = w(b.n_filters), k = static_cast<std::size_t>(b.kernel);
    for (int u = 0; u < b.n_blocks; ++u) {
      total += conv_params(c, out, k) + 2 * out;
      c = out;
    }
    const std::size_t src = enc[static_cast<std::size_t>(2 - t)];
    if (s.shortcuts[static_cast<std::size_t>(t)] && src != out) total += src * out + 2 * out;
  }
  return total + conv_params(c, 1, static_cast<std::size_t>(s.head.kernel)) + 1;
}

std::vector<FeatureTensor> random_features(int count, Grid g, std::uint64_t seed) {
  std::vector<FeatureTensor> out;
  for (int k = 0; k < count; ++k) out.push_back(extract_features(testing::random_layout(g, seed + k, 40, 50)));
  return out;
}

}  // namespace

TEST_CASE("stage shapes on a 64x64 grid") {
  const auto spec = decode(Genome::ones(Task::Hotspot));
  BuildOptions opt;
  opt.width_divisor = 8;
  const auto shapes = trace_shapes(spec, opt, 2);
  std::map<std::string, std::array<int, 3>> expect = {
      {"stem", {4, 32, 32}},    {"conv1", {6, 32, 32}},  {"conv2", {8, 16, 16}},  {"conv3", {16, 8, 8}},
      {"conv4", {32, 4, 4}},    {"trans1", {20, 8, 8}},  {"trans2", {16, 16, 16}}, {"trans3", {8, 32, 32}},
      {"head", {1, 64, 64}}};
  REQUIRE(shapes.size() == expect.size());
  for (const auto& s : shapes) {
    INFO(s.name);
    CHECK(expect.at(s.name) == std::array<int, 3>{s.c, s.h, s.w});
  }
  const auto nc = trace_shapes(decode(Genome::zeros(Task::NetCount)), opt, 3);
  CHECK(nc.back().name == "head");
  CHECK(nc.back().c == 1);
  CHECK(nc.back().h == 1);
}

TEST_CASE("parameter count matches the closed form") {
  BuildOptions opt;
  opt.grid = {32, 32};
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    for (auto task : {Task::NetCount, Task::Hotspot}) {
      const auto spec = decode(random_genome(task, seed));
      for (int div : {1, 8}) {
        opt.width_divisor = div;
        Network<float> net(spec, opt);
        CHECK(net.parameter_count() == expected_parameters(spec, div));
      }
    }
  }
  opt.width_divisor = 8;
  for (auto task : {Task::NetCount, Task::Hotspot}) {
    Network<float> base(resnet18_spec(task), opt);
    CHECK(base.parameter_count() == expected_parameters(resnet18_spec(task), 8));
  }
}

TEST_CASE("invalid builds are rejected") {
  BuildOptions opt;
  opt.grid = {40, 40};
  CHECK_THROWS_AS(Network<float>(decode(Genome::zeros(Task::NetCount)), opt), ShapeError);
  opt.grid = {32, 32};
  opt.width_divisor = 0;
  CHECK_THROWS_AS(Network<float>(decode(Genome::zeros(Task::NetCount)), opt), ConfigError);
  opt.width_divisor = 8;
  Network<float> net(decode(Genome::zeros(Task::NetCount)), opt);
  CHECK_THROWS_AS(net.forward(Tensor<float>(1, 3, 32, 32), false), ShapeError);
  CHECK_THROWS_AS(net.forward(Tensor<float>(1, 16, 24, 24), false), ShapeError);
}

TEST_CASE("whole-network gradients in float64") {
  BuildOptions opt;
  opt.grid = {16, 16};
  opt.width_divisor = 32;
  opt.input_channels = 2;
  for (const char* g : {"101010101010", "010101010101010101010111", "110011001100110011001100"}) {
    const auto spec = decode(Genome::parse(g));
    Network<double> net(spec, opt);
    const auto x = testing::random_tensor(2, 2, 16, 16, 3);
    Rng rng(4);
    auto y = net.forward(x, true);
    std::vector<double> r(y.size());
    for (auto& v : r) v = normal01(rng);
    auto loss = [&](const Tensor<double>& in) {
      const auto out = net.forward(in, true);
      return testing::dot(out.data, r);
    };
    net.zero_grad();
    net.forward(x, true);
    Tensor<double> dy(y.n, y.c, y.h, y.w);
    dy.data = r;
    const auto dx = net.backward(dy);
    double worst = 0;
    const double h = 1e-5;
    for (int k = 0; k < 10; ++k) {
      const auto idx = uniform_index(rng, x.size());
      auto xp = x, xm = x;
      xp.data[idx] += h;
      xm.data[idx] -= h;
      worst = std::max(worst, testing::relative_error(dx.data[idx], (loss(xp) - loss(xm)) / (2 * h)));
    }
    auto params = net.parameters();
    for (int k = 0; k < 20; ++k) {
      auto* p = params[uniform_index(rng, params.size())];
      const auto idx = uniform_index(rng, p->value.size());
      const double analytic = p->grad[idx], saved = p->value[idx];
      p->value[idx] = saved + h;
      const double lp = loss(x);
      p->value[idx] = saved - h;
      const double lm = loss(x);
      p->value[idx] = saved;
      worst = std::max(worst, testing::relative_error(analytic, (lp - lm) / (2 * h)));
    }
    INFO(g);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("adam's first step moves each weight by the learning rate") {
  Parameter<double> p("w", 4);
  p.value = {1.0, -2.0, 0.5, 0.0};
  p.grad = {0.3, -10.0, 1e-3, -2.0};
  AdamState<double> state;
  std::vector<Parameter<double>*> ps{&p};
  adam_step<double>(ps, state, 0.01, 0.0);
  CHECK(state.t == 1);
  CHECK(p.value[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p.value[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p.value[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));
  CHECK(p.value[3] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("channel statistics standardize the training split") {
  const auto feats = random_features(4, {32, 32}, 50);
  std::vector<const FeatureTensor*> ptrs;
  for (const auto& f : feats) ptrs.push_back(&f);
  const std::vector<double> counts{3, 10, 0, 40};
  const auto s = ChannelStats::fit(ptrs, counts);
  for (double c : counts) CHECK(s.target_to_count(s.count_to_target(c)) == doctest::Approx(c));
  double m = 0;
  for (double c : counts) m += s.count_to_target(c);
  CHECK(std::abs(m) < 1e-12);
  std::vector<float> out(feats[0].data.size());
  double total = 0;
  for (const auto* f : ptrs) {
    s.apply(*f, out.data());
    for (int k = 0; k < 32 * 32; ++k) total += out[static_cast<std::size_t>(4 * 32 * 32 + k)];
  }
  CHECK(std::abs(total / (4 * 32 * 32)) < 1e-4);
  CHECK(channel_stats_from_json(channel_stats_to_json(s)).mean == s.mean);
}

TEST_CASE("training overfits a tiny set") {
  const auto feats = random_features(8, {32, 32}, 100);
  TrainingSet data;
  data.task = Task::NetCount;
  for (int k = 0; k < 8; ++k) {
    data.features.push_back(&feats[static_cast<std::size_t>(k)]);
    data.counts.push_back(5.0 * k + 1);
  }
  BuildOptions opt;
  opt.grid = {32, 32};
  opt.width_divisor = 8;
  opt.seed = 1;
  TrainConfig cfg = TrainConfig::desk(Task::NetCount);
  cfg.epochs = 200;
  cfg.batch_size = 8;
  cfg.learning_rate = 3e-3;
  auto model = train_model<float>(decode(Genome::zeros(Task::NetCount)), opt, data, cfg);
  REQUIRE(model.loss_curve.size() == 200);
  CHECK(model.loss_curve.back() < 0.01 * model.loss_curve.front());
}

TEST_CASE("hotspot training lowers the loss and checkpoints round trip") {
  const auto feats = random_features(6, {32, 32}, 200);
  std::vector<HotspotMap> maps;
  for (const auto& f : feats) {
    HotspotMap m(f.grid.tiles());
    const auto rudy = f.channel(4);
    for (std::size_t k = 0; k < m.size(); ++k) m[k] = rudy[k] > 1.0;
    maps.push_back(m);
  }
  TrainingSet data;
  data.task = Task::Hotspot;
  for (std::size_t k = 0; k < feats.size(); ++k) {
    data.features.push_back(&feats[k]);
    data.hotspots.push_back(&maps[k]);
  }
  BuildOptions opt;
  opt.grid = {32, 32};
  opt.width_divisor = 16;
  opt.seed = 3;
  TrainConfig cfg = TrainConfig::desk(Task::Hotspot);
  cfg.epochs = 30;
  cfg.batch_size = 3;
  cfg.learning_rate = 3e-3;
  auto model = train_model<float>(decode(Genome::parse("000000000000000000000111")), opt, data, cfg);
  CHECK(model.loss_curve.back() < model.loss_curve.front());

  const auto path = fs::temp_directory_path() / "routenas_test_model.rnm";
  save_checkpoint(model, path);
  auto loaded = load_checkpoint(path);
  const auto a = predict_hotspot_maps(model, data.features);
  const auto b = predict_hotspot_maps(loaded, data.features);
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(testing::max_abs_diff(a[k], b[k]) == 0.0);
  for (double v : a[0]) CHECK((v >= 0.0 && v <= 1.0));
  CHECK(loaded.loss_curve == model.loss_curve);
  CHECK_THROWS_AS(predict_net_counts(loaded, data.features), TaskMismatch);
}

TEST_CASE("same seed trains identical weights") {
  const auto feats = random_features(4, {32, 32}, 300);
  TrainingSet data;
  for (std::size_t k = 0; k < feats.size(); ++k) {
    data.features.push_back(&feats[k]);
    data.counts.push_back(static_cast<double>(k * k));
  }
  BuildOptions opt;
  opt.grid = {32, 32};
  opt.width_divisor = 16;
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;
  const auto spec = decode(Genome::ones(Task::NetCount));
  auto a = train_model<float>(spec, opt, data, cfg);
  auto b = train_model<float>(spec, opt, data, cfg);
  CHECK(a.loss_curve == b.loss_curve);
  CHECK(predict_net_counts(a, data.features) == predict_net_counts(b, data.features));
}

TEST_CASE("divergent training raises NonFiniteLoss") {
  const auto feats = random_features(2, {32, 32}, 400);
  TrainingSet data;
  for (const auto& f : feats) data.features.push_back(&f);
  data.counts = {1.0, 2.0};
  BuildOptions opt;
  opt.grid = {32, 32};
  opt.width_divisor = 16;
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.learning_rate = 1e30;
  CHECK_THROWS_AS(train_model<float>(decode(Genome::zeros(Task::NetCount)), opt, data, cfg), NonFiniteLoss);
}
