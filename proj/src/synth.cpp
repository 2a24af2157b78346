#include "routenas/synth.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <thread>

#include "routenas/errors.hpp"
#include "routenas/features.hpp"
#include "routenas/random.hpp"

namespace routenas {

namespace {

std::string two_digit(int v) {
  std::string s = std::to_string(v);
  return s.size() < 2 ? "0" + s : s;
}

std::string three_digit(int v) {
  std::string s = std::to_string(v);
  while (s.size() < 3) s = "0" + s;
  return s;
}

std::string design_name(int d) { return "design_" + two_digit(d); }

int uniform_int(Rng& rng, int lo, int hi) {
  return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

double uniform_real(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

/// Netlist shared by all layouts of one design.
struct Topology {
  std::vector<Point> latent;  // cell positions in the unit square
  std::vector<CellKind> kinds;
  std::vector<std::vector<std::size_t>> nets;  // cell indices, source first
  std::vector<Point> pin_offsets;              // per pin, in net order
  double utilization = 0.5;
};

Topology make_topology(const SynthConfig& cfg, Rng& rng) {
  Topology t;
  const int n_cells = uniform_int(rng, cfg.min_cells, cfg.max_cells);
  const int n_nets = uniform_int(rng, cfg.min_nets, cfg.max_nets);
  t.utilization = uniform_real(rng, cfg.min_utilization, cfg.max_utilization);
  t.latent.resize(static_cast<std::size_t>(n_cells));
  t.kinds.resize(static_cast<std::size_t>(n_cells));
  for (int c = 0; c < n_cells; ++c) {
    t.latent[static_cast<std::size_t>(c)] = {uniform01(rng), uniform01(rng)};
    const double r = uniform01(rng);
    t.kinds[static_cast<std::size_t>(c)] = r < cfg.clk_fraction                      ? CellKind::ClockTree
                                           : r < cfg.clk_fraction + cfg.dff_fraction ? CellKind::DFlipFlop
                                                                                     : CellKind::Standard;
  }

  const int max_sinks = std::min(cfg.max_fanout, n_cells - 1);
  std::vector<std::size_t> order(static_cast<std::size_t>(n_cells));
  std::vector<double> dist(static_cast<std::size_t>(n_cells));
  std::vector<int> used(static_cast<std::size_t>(n_cells), 0);
  for (int n = 0; n < n_nets; ++n) {
    int sinks;
    if (uniform01(rng) < cfg.high_fanout_fraction) {
      sinks = uniform_int(rng, std::min(6, max_sinks), max_sinks);
    } else {
      sinks = 1;
      const double p_stop = 1.0 / (1.0 + cfg.mean_extra_sinks);
      while (sinks < max_sinks && uniform01(rng) >= p_stop) ++sinks;
    }
    // Sources cycle through cells in index order first, so every cell ends up with a pin when nets >= cells.
    const std::size_t src = n < n_cells ? static_cast<std::size_t>(n) : uniform_index(rng, static_cast<std::uint64_t>(n_cells));
    const Point s = t.latent[src];
    for (std::size_t c = 0; c < order.size(); ++c) {
      order[c] = c;
      dist[c] = std::abs(t.latent[c].x - s.x) + std::abs(t.latent[c].y - s.y);
    }
    // Sinks come from the local neighbourhood of the source.
    const std::size_t pool = std::min(order.size(), static_cast<std::size_t>(3 * sinks + 6));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(pool), order.end(),
                      [&](std::size_t a, std::size_t b) { return dist[a] != dist[b] ? dist[a] < dist[b] : a < b; });
    std::vector<std::size_t> candidates;
    for (std::size_t k = 0; k < pool; ++k)
      if (order[k] != src) candidates.push_back(order[k]);
    shuffle(candidates.begin(), candidates.end(), rng);
    candidates.resize(std::min(candidates.size(), static_cast<std::size_t>(sinks)));
    std::vector<std::size_t> net{src};
    net.insert(net.end(), candidates.begin(), candidates.end());
    for (auto c : net) ++used[c];
    t.nets.push_back(std::move(net));
  }
  // Cells left without a pin join the net sourced nearest to them as an extra sink.
  for (std::size_t c = 0; c < used.size(); ++c) {
    if (used[c]) continue;
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t n = 0; n < t.nets.size(); ++n) {
      const Point s = t.latent[t.nets[n].front()];
      const double d = std::abs(s.x - t.latent[c].x) + std::abs(s.y - t.latent[c].y);
      if (d < best_d) {
        best_d = d;
        best = n;
      }
    }
    t.nets[best].push_back(c);
    used[c] = 1;
  }
  for (const auto& net : t.nets)
    for (std::size_t k = 0; k < net.size(); ++k) t.pin_offsets.push_back({uniform_real(rng, -0.4, 0.4), uniform_real(rng, -0.4, 0.4)});
  return t;
}

double clamp_coord(double v, int limit) { return std::clamp(v, 0.0, std::nextafter(static_cast<double>(limit), 0.0)); }

Layout place(const Topology& t, const SynthConfig& cfg, int design, int index, Rng& rng) {
  Layout l;
  l.grid = cfg.grid;
  const double jitter = uniform_real(rng, cfg.min_jitter, cfg.max_jitter);
  const double side_x = cfg.grid.w * std::sqrt(t.utilization);
  const double side_y = cfg.grid.h * std::sqrt(t.utilization);
  const double x0 = 0.5 * (cfg.grid.w - side_x), y0 = 0.5 * (cfg.grid.h - side_y);

  l.cells.resize(t.latent.size());
  for (std::size_t c = 0; c < t.latent.size(); ++c) {
    auto& cell = l.cells[c];
    cell.id = "c" + std::to_string(c);
    cell.kind = t.kinds[c];
    const double u = t.latent[c].x + jitter * normal01(rng);
    const double v = t.latent[c].y + jitter * normal01(rng);
    cell.x = clamp_coord(x0 + u * side_x, cfg.grid.w);
    cell.y = clamp_coord(y0 + v * side_y, cfg.grid.h);
  }
  std::size_t pin_index = 0;
  for (std::size_t n = 0; n < t.nets.size(); ++n) {
    Net net;
    net.id = "n" + std::to_string(n);
    for (auto c : t.nets[n]) {
      Pin p;
      p.id = "p" + std::to_string(pin_index);
      p.cell_id = l.cells[c].id;
      p.net_id = net.id;
      p.x = clamp_coord(l.cells[c].x + t.pin_offsets[pin_index].x, cfg.grid.w);
      p.y = clamp_coord(l.cells[c].y + t.pin_offsets[pin_index].y, cfg.grid.h);
      l.cells[c].pin_ids.push_back(p.id);
      net.pin_ids.push_back(p.id);
      l.pins.push_back(std::move(p));
      ++pin_index;
    }
    l.nets.push_back(std::move(net));
  }
  l.labels.design_name = design_name(design);
  l.labels.layout_id = design_name(design) + "_L" + three_digit(index);

  const auto score = congestion_score(l, cfg);
  l.labels.hotspot_map.assign(cfg.grid.tiles(), 0);
  for (std::size_t k = 0; k < score.size(); ++k) {
    const double noisy = score[k] + cfg.noise * cfg.threshold * normal01(rng);
    l.labels.hotspot_map[k] = noisy > cfg.threshold ? 1 : 0;
  }
  l.labels.violated_net_count = count_violated_nets(l, l.labels.hotspot_map);
  return l;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_designs < 1 || layouts_per_design < 1) throw ConfigError("design and layout counts must be positive");
  if (!grid.valid()) throw ConfigError("grid must be at least 16x16 and divisible by 16");
  if (min_cells < 2 || max_cells < min_cells) throw ConfigError("invalid cell-count range");
  if (min_nets < 1 || max_nets < min_nets) throw ConfigError("invalid net-count range");
  if (!(mean_extra_sinks >= 0.0)) throw ConfigError("mean extra sinks must be >= 0");
  if (!(high_fanout_fraction >= 0.0 && high_fanout_fraction <= 1.0)) throw ConfigError("high-fanout fraction must be in [0,1]");
  if (max_fanout < 1) throw ConfigError("max fanout must be positive");
  if (!(dff_fraction >= 0.0 && clk_fraction >= 0.0 && dff_fraction + clk_fraction <= 1.0))
    throw ConfigError("cell-kind fractions must be non-negative and sum to at most 1");
  if (!(min_utilization > 0.0 && max_utilization <= 1.0 && min_utilization <= max_utilization))
    throw ConfigError("utilization range must lie in (0,1]");
  if (!(min_jitter >= 0.0 && max_jitter >= min_jitter)) throw ConfigError("invalid jitter range");
  if (!(rudy_weight >= 0.0 && pin_weight >= 0.0)) throw ConfigError("congestion weights must be >= 0");
  if (!(threshold > 0.0)) throw ConfigError("congestion threshold must be positive");
  if (smoothing_radius < 0) throw ConfigError("smoothing radius must be >= 0");
  if (!(noise >= 0.0 && noise < 1.0)) throw ConfigError("noise must be in [0,1)");
}

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return {{"n_designs", c.n_designs},
          {"layouts_per_design", c.layouts_per_design},
          {"grid", {{"w", c.grid.w}, {"h", c.grid.h}}},
          {"min_cells", c.min_cells},
          {"max_cells", c.max_cells},
          {"min_nets", c.min_nets},
          {"max_nets", c.max_nets},
          {"mean_extra_sinks", c.mean_extra_sinks},
          {"high_fanout_fraction", c.high_fanout_fraction},
          {"max_fanout", c.max_fanout},
          {"dff_fraction", c.dff_fraction},
          {"clk_fraction", c.clk_fraction},
          {"min_utilization", c.min_utilization},
          {"max_utilization", c.max_utilization},
          {"min_jitter", c.min_jitter},
          {"max_jitter", c.max_jitter},
          {"rudy_weight", c.rudy_weight},
          {"pin_weight", c.pin_weight},
          {"threshold", c.threshold},
          {"smoothing_radius", c.smoothing_radius},
          {"noise", c.noise},
          {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& doc) {
  SynthConfig c;
  try {
    c.n_designs = doc.value("n_designs", c.n_designs);
    c.layouts_per_design = doc.value("layouts_per_design", c.layouts_per_design);
    if (doc.contains("grid")) c.grid = {doc.at("grid").at("w").get<int>(), doc.at("grid").at("h").get<int>()};
    c.min_cells = doc.value("min_cells", c.min_cells);
    c.max_cells = doc.value("max_cells", c.max_cells);
    c.min_nets = doc.value("min_nets", c.min_nets);
    c.max_nets = doc.value("max_nets", c.max_nets);
    c.mean_extra_sinks = doc.value("mean_extra_sinks", c.mean_extra_sinks);
    c.high_fanout_fraction = doc.value("high_fanout_fraction", c.high_fanout_fraction);
    c.max_fanout = doc.value("max_fanout", c.max_fanout);
    c.dff_fraction = doc.value("dff_fraction", c.dff_fraction);
    c.clk_fraction = doc.value("clk_fraction", c.clk_fraction);
    c.min_utilization = doc.value("min_utilization", c.min_utilization);
    c.max_utilization = doc.value("max_utilization", c.max_utilization);
    c.min_jitter = doc.value("min_jitter", c.min_jitter);
    c.max_jitter = doc.value("max_jitter", c.max_jitter);
    c.rudy_weight = doc.value("rudy_weight", c.rudy_weight);
    c.pin_weight = doc.value("pin_weight", c.pin_weight);
    c.threshold = doc.value("threshold", c.threshold);
    c.smoothing_radius = doc.value("smoothing_radius", c.smoothing_radius);
    c.noise = doc.value("noise", c.noise);
    c.seed = doc.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  return c;
}

std::vector<double> congestion_score(const Layout& layout, const SynthConfig& cfg) {
  const Grid g = layout.grid;
  const auto nets = net_points(layout);
  const Map2D rudy = rudy_map(nets, g);
  const auto density = cell_density_maps(layout);
  const Map2D& pins = density[3];
  std::vector<double> raw(g.tiles());
  for (std::size_t k = 0; k < raw.size(); ++k) raw[k] = cfg.rudy_weight * rudy[k] + cfg.pin_weight * pins[k];
  if (cfg.smoothing_radius == 0) return raw;
  // Box mean over the in-grid neighbourhood.
  std::vector<double> out(g.tiles());
  const int r = cfg.smoothing_radius;
  for (int j = 0; j < g.h; ++j)
    for (int i = 0; i < g.w; ++i) {
      double sum = 0.0;
      int count = 0;
      for (int dj = -r; dj <= r; ++dj)
        for (int di = -r; di <= r; ++di) {
          const int ii = i + di, jj = j + dj;
          if (ii < 0 || jj < 0 || ii >= g.w || jj >= g.h) continue;
          sum += raw[g.index(ii, jj)];
          ++count;
        }
      out[g.index(i, j)] = sum / count;
    }
  return out;
}

std::int64_t count_violated_nets(const Layout& layout, const HotspotMap& hotspots) {
  const Grid g = layout.grid;
  if (hotspots.size() != g.tiles()) throw LengthMismatch("hotspot map does not match the grid");
  // prefix[(j+1)*(w+1) + (i+1)] = hotspots in tiles [0..i] x [0..j]
  std::vector<std::int64_t> prefix(static_cast<std::size_t>(g.w + 1) * (g.h + 1), 0);
  auto at = [&](int i, int j) -> std::int64_t& { return prefix[static_cast<std::size_t>(j) * (g.w + 1) + i]; };
  for (int j = 0; j < g.h; ++j)
    for (int i = 0; i < g.w; ++i) at(i + 1, j + 1) = hotspots[g.index(i, j)] + at(i, j + 1) + at(i + 1, j) - at(i, j);
  std::int64_t violated = 0;
  for (const auto& pts : net_points(layout)) {
    double xmin = pts.front().x, xmax = xmin, ymin = pts.front().y, ymax = ymin;
    for (const auto& p : pts) {
      xmin = std::min(xmin, p.x);
      xmax = std::max(xmax, p.x);
      ymin = std::min(ymin, p.y);
      ymax = std::max(ymax, p.y);
    }
    const int i0 = std::clamp(static_cast<int>(std::floor(xmin)), 0, g.w - 1);
    const int i1 = std::clamp(static_cast<int>(std::floor(xmax)), 0, g.w - 1);
    const int j0 = std::clamp(static_cast<int>(std::floor(ymin)), 0, g.h - 1);
    const int j1 = std::clamp(static_cast<int>(std::floor(ymax)), 0, g.h - 1);
    const auto hits = at(i1 + 1, j1 + 1) - at(i0, j1 + 1) - at(i1 + 1, j0) + at(i0, j0);
    if (hits > 0) ++violated;
  }
  return violated;
}

std::vector<Layout> generate(const SynthConfig& cfg, int workers) {
  cfg.validate();
  std::vector<Topology> topologies;
  topologies.reserve(static_cast<std::size_t>(cfg.n_designs));
  for (int d = 0; d < cfg.n_designs; ++d) {
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(d)}));
    topologies.push_back(make_topology(cfg, rng));
  }
  const std::size_t total = static_cast<std::size_t>(cfg.n_designs) * static_cast<std::size_t>(cfg.layouts_per_design);
  std::vector<Layout> out(total);
  auto job = [&](std::size_t k) {
    const int d = static_cast<int>(k / static_cast<std::size_t>(cfg.layouts_per_design));
    const int l = static_cast<int>(k % static_cast<std::size_t>(cfg.layouts_per_design));
    Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(d), static_cast<std::uint64_t>(l) + 1}));
    out[k] = place(topologies[static_cast<std::size_t>(d)], cfg, d, l, rng);
  };
  if (workers <= 1) {
    for (std::size_t k = 0; k < total; ++k) job(k);
    return out;
  }
  std::atomic<std::size_t> next{0};
  {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < total; k = next++) job(k);
      });
  }
  return out;
}

DesignSplit split_by_design(const std::vector<Layout>& layouts, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train fraction must be in (0,1)");
  std::set<std::string> unique;
  for (const auto& l : layouts) unique.insert(l.labels.design_name);
  if (unique.size() < 2) throw TooFewDesigns("a design-level split needs at least 2 designs");
  std::vector<std::string> designs(unique.begin(), unique.end());
  Rng rng(seed);
  shuffle(designs.begin(), designs.end(), rng);
  const auto d = static_cast<long>(designs.size());
  const long n_train = std::clamp(std::lround(train_fraction * static_cast<double>(d)), 1L, d - 1);
  DesignSplit s;
  s.train_designs.assign(designs.begin(), designs.begin() + n_train);
  s.validation_designs.assign(designs.begin() + n_train, designs.end());
  std::sort(s.train_designs.begin(), s.train_designs.end());
  std::sort(s.validation_designs.begin(), s.validation_designs.end());
  const std::set<std::string> train_set(s.train_designs.begin(), s.train_designs.end());
  for (std::size_t k = 0; k < layouts.size(); ++k)
    (train_set.count(layouts[k].labels.design_name) ? s.train : s.validation).push_back(k);
  return s;
}

void save_dataset(const std::vector<Layout>& layouts, const SynthConfig& cfg, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir / "layouts", ec);
  if (ec) throw IoError("cannot create " + (dir / "layouts").string() + ": " + ec.message());
  nlohmann::json entries = nlohmann::json::array();
  std::set<std::string> designs;
  for (const auto& l : layouts) {
    const std::string file = "layouts/" + l.labels.layout_id + ".json";
    save_layout(l, dir / file);
    entries.push_back({{"layout_id", l.labels.layout_id}, {"design", l.labels.design_name}, {"file", file}});
    designs.insert(l.labels.design_name);
  }
  const nlohmann::json manifest = {{"designs", std::vector<std::string>(designs.begin(), designs.end())},
                                   {"layouts", entries},
                                   {"config", synth_config_to_json(cfg)}};
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << "\n";
  if (!out) throw IoError("write failed for manifest.json");
}

}  // namespace routenas
