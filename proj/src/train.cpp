#include "routenas/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "binary_io.hpp"

namespace routenas {

namespace {

constexpr int kPredictBatch = 32;

std::string_view to_string(LossKind k) { return k == LossKind::MSE ? "mse" : "bce"; }

LossKind loss_from_string(std::string_view s) {
  if (s == "mse") return LossKind::MSE;
  if (s == "bce") return LossKind::BCE;
  throw ConfigError("unknown loss '" + std::string(s) + "'");
}

std::string_view to_string(Precision p) { return p == Precision::Float32 ? "float32" : "float64"; }

Precision precision_from_string(std::string_view s) {
  if (s == "float32") return Precision::Float32;
  if (s == "float64") return Precision::Float64;
  throw ConfigError("unknown precision '" + std::string(s) + "'");
}

}  // namespace

TrainConfig TrainConfig::desk(Task task) {
  TrainConfig c;
  c.loss = default_loss(task);
  return c;
}

TrainConfig TrainConfig::paper(Task task) {
  TrainConfig c;
  c.epochs = 45;
  c.batch_size = 128;
  c.loss = default_loss(task);
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("weight decay must be >= 0");
}

LossKind default_loss(Task task) { return task == Task::NetCount ? LossKind::MSE : LossKind::BCE; }

nlohmann::json train_config_to_json(const TrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"loss", to_string(c.loss)},
          {"seed", c.seed},
          {"precision", to_string(c.precision)}};
}

TrainConfig train_config_from_json(const nlohmann::json& doc) {
  TrainConfig c;
  try {
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.weight_decay = doc.value("weight_decay", c.weight_decay);
    if (doc.contains("loss")) c.loss = loss_from_string(doc.at("loss").get<std::string>());
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("precision")) c.precision = precision_from_string(doc.at("precision").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------- ChannelStats

ChannelStats ChannelStats::fit(std::span<const FeatureTensor* const> samples, std::span<const double> counts) {
  if (samples.empty()) throw ConfigError("cannot fit channel statistics on an empty split");
  ChannelStats s;
  s.mean.assign(kFeatureChannels, 0.0);
  s.stddev.assign(kFeatureChannels, 1.0);
  for (int c = 0; c < kFeatureChannels; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t count = 0;
    for (const auto* f : samples) {
      for (double v : f->channel(c)) sum += v;
      count += f->grid.tiles();
    }
    const double mean = sum / static_cast<double>(count);
    for (const auto* f : samples)
      for (double v : f->channel(c)) sq += (v - mean) * (v - mean);
    const double sd = std::sqrt(sq / static_cast<double>(count));
    s.mean[static_cast<std::size_t>(c)] = mean;
    s.stddev[static_cast<std::size_t>(c)] = sd > 1e-12 ? sd : 1.0;
  }
  if (!counts.empty()) {
    double sum = 0.0, sq = 0.0;
    for (double c : counts) sum += std::log1p(c);
    const double mean = sum / static_cast<double>(counts.size());
    for (double c : counts) sq += (std::log1p(c) - mean) * (std::log1p(c) - mean);
    const double sd = std::sqrt(sq / static_cast<double>(counts.size()));
    s.target_mean = mean;
    s.target_stddev = sd > 1e-12 ? sd : 1.0;
  }
  return s;
}

double ChannelStats::count_to_target(double count) const { return (std::log1p(count) - target_mean) / target_stddev; }

double ChannelStats::target_to_count(double target) const { return std::expm1(target * target_stddev + target_mean); }

template <typename T>
void ChannelStats::apply(const FeatureTensor& features, T* out) const {
  const std::size_t tiles = features.grid.tiles();
  for (int c = 0; c < kFeatureChannels; ++c) {
    const auto ch = features.channel(c);
    const double m = mean[static_cast<std::size_t>(c)];
    const double inv = 1.0 / stddev[static_cast<std::size_t>(c)];
    T* dst = out + static_cast<std::size_t>(c) * tiles;
    for (std::size_t k = 0; k < tiles; ++k) dst[k] = static_cast<T>((ch[k] - m) * inv);
  }
}

nlohmann::json channel_stats_to_json(const ChannelStats& s) {
  return {{"mean", s.mean}, {"stddev", s.stddev}, {"target_mean", s.target_mean}, {"target_stddev", s.target_stddev}};
}

ChannelStats channel_stats_from_json(const nlohmann::json& doc) {
  ChannelStats s;
  s.mean = doc.at("mean").get<std::vector<double>>();
  s.stddev = doc.at("stddev").get<std::vector<double>>();
  s.target_mean = doc.value("target_mean", 0.0);
  s.target_stddev = doc.value("target_stddev", 1.0);
  if (s.mean.size() != kFeatureChannels || s.stddev.size() != kFeatureChannels)
    throw SchemaError("channel statistics must have 16 entries");
  return s;
}

// ------------------------------------------------------------------ Adam

template <typename T>
void adam_step(std::span<nn::Parameter<T>* const> params, AdamState<T>& state, double lr, double weight_decay) {
  if (state.m.empty()) {
    for (const auto* p : params) {
      state.m.emplace_back(p->value.size(), T(0));
      state.v.emplace_back(p->value.size(), T(0));
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  ++state.t;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.value.size()) throw ShapeError("optimizer state does not match parameter " + p.name);
    for (std::size_t e = 0; e < p.value.size(); ++e) {
      const double g = static_cast<double>(p.grad[e]) + weight_decay * static_cast<double>(p.value[e]);
      const double mk = kAdamBeta1 * m[e] + (1.0 - kAdamBeta1) * g;
      const double vk = kAdamBeta2 * v[e] + (1.0 - kAdamBeta2) * g * g;
      m[e] = static_cast<T>(mk);
      v[e] = static_cast<T>(vk);
      const double step = lr * (mk / bc1) / (std::sqrt(vk / bc2) + kAdamEps);
      p.value[e] = static_cast<T>(p.value[e] - step);
    }
  }
}

// -------------------------------------------------------------- training

template <typename T>
nn::Tensor<T> make_batch(std::span<const FeatureTensor* const> samples, const ChannelStats& stats,
                         std::span<const std::size_t> indices) {
  if (indices.empty()) throw ConfigError("empty batch");
  const Grid g = samples[indices.front()]->grid;
  nn::Tensor<T> x(static_cast<int>(indices.size()), kFeatureChannels, g.h, g.w);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto* f = samples[indices[b]];
    if (f->grid.w != g.w || f->grid.h != g.h) throw ShapeError("batch mixes grid sizes");
    stats.apply(*f, x.sample(static_cast<int>(b)).data());
  }
  return x;
}

template <typename T>
std::vector<double> train(nn::Network<T>& net, const ChannelStats& stats, const TrainingSet& data,
                          const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw ConfigError("training split is empty");
  if (net.task() != data.task) throw TaskMismatch("network and training data target different tasks");
  if (config.loss != default_loss(data.task)) throw ConfigError("loss does not match the task");
  const bool regression = data.task == Task::NetCount;
  if (regression ? data.counts.size() != data.size() : data.hotspots.size() != data.size())
    throw LengthMismatch("training labels do not match the sample count");

  const std::size_t n = data.size();
  const Grid grid = data.features.front()->grid;
  const std::size_t sample_size = static_cast<std::size_t>(kFeatureChannels) * grid.tiles();
  const std::size_t target_size = regression ? 1 : grid.tiles();

  std::vector<T> inputs(n * sample_size);
  std::vector<T> targets(n * target_size);
  for (std::size_t s = 0; s < n; ++s) {
    const auto* f = data.features[s];
    if (f->grid.w != grid.w || f->grid.h != grid.h) throw ShapeError("training samples mix grid sizes");
    stats.apply(*f, inputs.data() + s * sample_size);
    if (regression) {
      if (data.counts[s] < 0.0) throw IllegalValue("violated net count must be >= 0");
      targets[s] = static_cast<T>(stats.count_to_target(data.counts[s]));
    } else {
      const auto& map = *data.hotspots[s];
      if (map.size() != grid.tiles()) throw LengthMismatch("hotspot map does not match the grid");
      for (std::size_t k = 0; k < target_size; ++k) targets[s * target_size + k] = map[k] ? T(1) : T(0);
    }
  }

  auto params = net.parameters();
  AdamState<T> adam;
  Rng rng(derive_seed(config.seed, {0x5452414eULL}));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  std::vector<double> curve;
  curve.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b0 = 0; b0 < n; b0 += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t m = std::min(n - b0, static_cast<std::size_t>(config.batch_size));
      nn::Tensor<T> x(static_cast<int>(m), kFeatureChannels, grid.h, grid.w);
      std::vector<T> y(m * target_size);
      for (std::size_t b = 0; b < m; ++b) {
        const std::size_t s = order[b0 + b];
        std::copy_n(inputs.data() + s * sample_size, sample_size, x.data.data() + b * sample_size);
        std::copy_n(targets.data() + s * target_size, target_size, y.data() + b * target_size);
      }
      net.zero_grad();
      const nn::Tensor<T> out = net.forward(x, true);
      nn::Tensor<T> grad;
      const double loss = regression ? nn::mse_loss<T>(out, y, grad) : nn::bce_with_logits_loss<T>(out, y, grad);
      if (!std::isfinite(loss)) throw NonFiniteLoss("training loss became non-finite", epoch);
      net.backward(grad);
      adam_step<T>(params, adam, config.learning_rate, config.weight_decay);
      total += loss * static_cast<double>(m);
    }
    curve.push_back(total / static_cast<double>(n));
  }
  return curve;
}

template <typename T>
TrainedModel<T> train_model(const ArchitectureSpec& spec, const nn::BuildOptions& options, const TrainingSet& data,
                            const TrainConfig& config) {
  TrainedModel<T> model;
  model.net = std::make_unique<nn::Network<T>>(spec, options);
  model.stats = ChannelStats::fit(data.features, data.task == Task::NetCount ? std::span<const double>(data.counts)
                                                                            : std::span<const double>());
  model.config = config;
  model.loss_curve = train(*model.net, model.stats, data, config);
  return model;
}

// ------------------------------------------------------------ prediction

namespace {

template <typename F>
void predict_batches(TrainedModel<float>& model, std::span<const FeatureTensor* const> samples, F&& consume) {
  std::vector<std::size_t> idx;
  for (std::size_t b0 = 0; b0 < samples.size(); b0 += kPredictBatch) {
    const std::size_t m = std::min<std::size_t>(kPredictBatch, samples.size() - b0);
    idx.resize(m);
    std::iota(idx.begin(), idx.end(), b0);
    const auto out = model.net->predict(make_batch<float>(samples, model.stats, idx));
    consume(b0, out);
  }
}

}  // namespace

std::vector<double> predict_net_counts(TrainedModel<float>& model, std::span<const FeatureTensor* const> samples) {
  if (model.net->task() != Task::NetCount) throw TaskMismatch("model was not trained for net-count regression");
  std::vector<double> out(samples.size());
  predict_batches(model, samples, [&](std::size_t b0, const nn::Tensor<float>& y) {
    for (int b = 0; b < y.n; ++b) out[b0 + static_cast<std::size_t>(b)] = model.stats.target_to_count(static_cast<double>(y.data[b]));
  });
  return out;
}

double predict_net_count(TrainedModel<float>& model, const FeatureTensor& features) {
  const FeatureTensor* one[] = {&features};
  return predict_net_counts(model, one).front();
}

std::vector<Map2D> predict_hotspot_maps(TrainedModel<float>& model, std::span<const FeatureTensor* const> samples) {
  if (model.net->task() != Task::Hotspot) throw TaskMismatch("model was not trained for hotspot detection");
  std::vector<Map2D> out(samples.size());
  predict_batches(model, samples, [&](std::size_t b0, const nn::Tensor<float>& y) {
    for (int b = 0; b < y.n; ++b) {
      const auto s = y.sample(b);
      out[b0 + static_cast<std::size_t>(b)].assign(s.begin(), s.end());
    }
  });
  return out;
}

Map2D predict_hotspots(TrainedModel<float>& model, const FeatureTensor& features) {
  const FeatureTensor* one[] = {&features};
  return predict_hotspot_maps(model, one).front();
}

// ------------------------------------------------------------ checkpoint

void save_checkpoint(TrainedModel<float>& model, const std::filesystem::path& path) {
  auto& net = *model.net;
  const auto& opt = net.options();
  nlohmann::json genome = nullptr;
  try {
    genome = encode(net.spec()).str();
  } catch (const IllegalValue&) {
    // hand-designed baselines lie outside the search space
  }
  nlohmann::json header = {{"genome", genome},
                           {"architecture", spec_to_json(net.spec())},
                           {"grid", {{"w", opt.grid.w}, {"h", opt.grid.h}}},
                           {"input_channels", opt.input_channels},
                           {"width_divisor", opt.width_divisor},
                           {"seed", opt.seed},
                           {"train_config", train_config_to_json(model.config)},
                           {"channel_stats", channel_stats_to_json(model.stats)},
                           {"loss_curve", model.loss_curve}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write("RNM1", 4);
  detail::write_string(out, header.dump());
  auto blobs = net.parameters();
  for (auto* b : net.buffers()) blobs.push_back(b);
  detail::write_u32(out, static_cast<std::uint32_t>(blobs.size()));
  for (const auto* b : blobs) {
    detail::write_string(out, b->name);
    detail::write_u32(out, static_cast<std::uint32_t>(b->value.size()));
    detail::write_floats(out, b->value);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

TrainedModel<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  detail::expect_magic(in, "RNM1", path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(detail::read_string(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": corrupt header: " + e.what());
  }
  TrainedModel<float> model;
  nn::BuildOptions opt;
  try {
    opt.grid = Grid{header.at("grid").at("w").get<int>(), header.at("grid").at("h").get<int>()};
    opt.input_channels = header.at("input_channels").get<int>();
    opt.width_divisor = header.at("width_divisor").get<int>();
    opt.seed = header.at("seed").get<std::uint64_t>();
    model.config = train_config_from_json(header.at("train_config"));
    model.stats = channel_stats_from_json(header.at("channel_stats"));
    model.loss_curve = header.at("loss_curve").get<std::vector<double>>();
    model.net = std::make_unique<nn::Network<float>>(spec_from_json(header.at("architecture")), opt);
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(path.string() + ": " + e.what());
  }
  auto blobs = model.net->parameters();
  for (auto* b : model.net->buffers()) blobs.push_back(b);
  const auto count = detail::read_u32(in);
  if (count != blobs.size()) throw IntegrityError(path.string() + ": blob count does not match the architecture");
  for (auto* b : blobs) {
    const auto name = detail::read_string(in);
    const auto size = detail::read_u32(in);
    if (name != b->name || size != b->value.size())
      throw IntegrityError(path.string() + ": unexpected blob '" + name + "', wanted '" + b->name + "'");
    detail::read_floats(in, b->value);
  }
  return model;
}

template void ChannelStats::apply<float>(const FeatureTensor&, float*) const;
template void ChannelStats::apply<double>(const FeatureTensor&, double*) const;

#define ROUTENAS_INSTANTIATE(T)                                                                                    \
  template void adam_step<T>(std::span<nn::Parameter<T>* const>, AdamState<T>&, double, double);                 \
  template nn::Tensor<T> make_batch<T>(std::span<const FeatureTensor* const>, const ChannelStats&,               \
                                       std::span<const std::size_t>);                                            \
  template std::vector<double> train<T>(nn::Network<T>&, const ChannelStats&, const TrainingSet&,                \
                                        const TrainConfig&);                                                     \
  template TrainedModel<T> train_model<T>(const ArchitectureSpec&, const nn::BuildOptions&, const TrainingSet&, \
                                          const TrainConfig&);

ROUTENAS_INSTANTIATE(float)
ROUTENAS_INSTANTIATE(double)

#undef ROUTENAS_INSTANTIATE

}  // namespace routenas
