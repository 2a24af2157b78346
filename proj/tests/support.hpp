#pragma once

// Brute-force oracles and fixtures shared by the unit tests and the acceptance runner.
// Every oracle here is written independently of the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "routenas/features.hpp"
#include "routenas/layers.hpp"
#include "routenas/layout.hpp"
#include "routenas/metrics.hpp"
#include "routenas/nsga2.hpp"
#include "routenas/random.hpp"

namespace routenas::testing {

// ---------------------------------------------------------------- layouts

/// Random valid layout: cells uniform over the die, each pin placed within half a tile of its cell.
inline Layout random_layout(Grid grid, std::uint64_t seed, int n_cells = 60, int n_nets = 80, int max_pins = 12) {
  Rng rng(seed);
  Layout l;
  l.grid = grid;
  auto coord = [&](int extent) { return uniform01(rng) * extent; };
  for (int c = 0; c < n_cells; ++c) {
    Cell cell;
    cell.id = "c" + std::to_string(c);
    cell.x = coord(grid.w);
    cell.y = coord(grid.h);
    const auto r = uniform01(rng);
    cell.kind = r < 0.15 ? CellKind::DFlipFlop : (r < 0.22 ? CellKind::ClockTree : CellKind::Standard);
    l.cells.push_back(cell);
  }
  int pin_counter = 0;
  auto add_pin = [&](std::size_t cell_idx, const std::string& net_id) {
    Cell& cell = l.cells[cell_idx];
    Pin p;
    p.id = "p" + std::to_string(pin_counter++);
    p.cell_id = cell.id;
    p.x = std::clamp(cell.x + uniform01(rng) - 0.5, 0.0, std::nextafter(static_cast<double>(grid.w), 0.0));
    p.y = std::clamp(cell.y + uniform01(rng) - 0.5, 0.0, std::nextafter(static_cast<double>(grid.h), 0.0));
    p.net_id = net_id;
    cell.pin_ids.push_back(p.id);
    l.pins.push_back(p);
    return p.id;
  };
  for (int n = 0; n < n_nets; ++n) {
    Net net;
    net.id = "n" + std::to_string(n);
    // Mostly small nets with some large ones so both fanout groups are populated.
    const int pins = uniform01(rng) < 0.8 ? 2 + static_cast<int>(uniform_index(rng, 4))
                                          : 2 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_pins - 1)));
    for (int k = 0; k < pins; ++k) net.pin_ids.push_back(add_pin(uniform_index(rng, l.cells.size()), net.id));
    l.nets.push_back(net);
  }
  // Cells without pins are invalid; give each a pin on a dedicated two-pin net.
  for (std::size_t c = 0; c < l.cells.size(); ++c) {
    if (!l.cells[c].pin_ids.empty()) continue;
    Net net;
    net.id = "n" + std::to_string(l.nets.size());
    net.pin_ids.push_back(add_pin(c, net.id));
    net.pin_ids.push_back(add_pin(uniform_index(rng, l.cells.size()), net.id));
    l.nets.push_back(net);
  }
  l.labels.hotspot_map.assign(grid.tiles(), 0);
  l.labels.design_name = "design_rand";
  l.labels.layout_id = "design_rand_L" + std::to_string(seed);
  return l;
}

// ---------------------------------------------------------------- geometry oracles

/// Closed segment vs closed axis-aligned box by parametric clipping.
inline bool segment_touches_box(Point a, Point b, double x0, double x1, double y0, double y1) {
  double t0 = 0.0, t1 = 1.0;
  auto clip = [&](double p, double d, double lo, double hi) {
    if (d == 0.0) return p >= lo && p <= hi;
    double ta = (lo - p) / d, tb = (hi - p) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return t0 <= t1;
  };
  return clip(a.x, b.x - a.x, x0, x1) && clip(a.y, b.y - a.y, y0, y1);
}

/// Every tile of the grid whose closed unit square the closed segment meets, in (j, i) order.
inline std::vector<Tile> oracle_supercover(Point a, Point b, Grid grid) {
  std::vector<Tile> out;
  for (int j = 0; j < grid.h; ++j)
    for (int i = 0; i < grid.w; ++i)
      if (segment_touches_box(a, b, i, i + 1, j, j + 1)) out.push_back({i, j});
  return out;
}

inline double oracle_l1(Point a, Point b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

/// Minimum spanning-tree weight by enumerating every labelled tree through its Pruefer sequence.
inline double exhaustive_mst_weight(const std::vector<Point>& pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 2) return 0.0;
  if (n == 2) return oracle_l1(pts[0], pts[1]);
  std::vector<int> seq(static_cast<std::size_t>(n - 2), 0);
  double best = std::numeric_limits<double>::infinity();
  for (;;) {
    std::vector<int> degree(static_cast<std::size_t>(n), 1);
    for (int v : seq) ++degree[static_cast<std::size_t>(v)];
    double w = 0.0;
    for (int v : seq) {
      int leaf = 0;
      while (degree[static_cast<std::size_t>(leaf)] != 1) ++leaf;
      w += oracle_l1(pts[static_cast<std::size_t>(leaf)], pts[static_cast<std::size_t>(v)]);
      --degree[static_cast<std::size_t>(leaf)];
      --degree[static_cast<std::size_t>(v)];
    }
    int u = -1, v = -1;
    for (int k = 0; k < n; ++k)
      if (degree[static_cast<std::size_t>(k)] == 1) (u < 0 ? u : v) = k;
    w += oracle_l1(pts[static_cast<std::size_t>(u)], pts[static_cast<std::size_t>(v)]);
    best = std::min(best, w);
    std::size_t pos = 0;
    while (pos < seq.size() && ++seq[pos] == n) seq[pos++] = 0;
    if (pos == seq.size()) break;
  }
  return best;
}

/// Prim's algorithm on the complete L1 graph; returns edges as index pairs.
inline std::vector<std::pair<std::size_t, std::size_t>> prim_mst(const std::vector<Point>& pts) {
  const std::size_t n = pts.size();
  std::vector<bool> in(n, false);
  std::vector<double> dist(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  if (n == 0) return edges;
  dist[0] = 0.0;
  for (std::size_t step = 0; step < n; ++step) {
    std::size_t u = n;
    for (std::size_t k = 0; k < n; ++k)
      if (!in[k] && (u == n || dist[k] < dist[u])) u = k;
    in[u] = true;
    if (step) edges.emplace_back(from[u], u);
    for (std::size_t k = 0; k < n; ++k)
      if (!in[k] && oracle_l1(pts[u], pts[k]) < dist[k]) {
        dist[k] = oracle_l1(pts[u], pts[k]);
        from[k] = u;
      }
  }
  return edges;
}

struct FeatureOracle {
  Grid grid;
  std::vector<std::vector<Point>> nets;

  Map2D rudy() const {
    Map2D m(grid.tiles(), 0.0);
    for (const auto& net : nets) {
      double x0 = net[0].x, x1 = net[0].x, y0 = net[0].y, y1 = net[0].y;
      for (const auto& p : net) {
        x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
      }
      if (x1 - x0 < 1.0) {
        const double c = (x0 + x1) / 2;
        x0 = c - 0.5, x1 = c + 0.5;
      }
      if (y1 - y0 < 1.0) {
        const double c = (y0 + y1) / 2;
        y0 = c - 0.5, y1 = c + 0.5;
      }
      const double w = x1 - x0, h = y1 - y0;
      for (int j = 0; j < grid.h; ++j)
        for (int i = 0; i < grid.w; ++i) {
          const double cx = i + 0.5, cy = j + 0.5;
          if (cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1) m[grid.index(i, j)] += (w + h) / (w * h);
        }
    }
    return m;
  }

  Map2D bbox() const {
    Map2D m(grid.tiles(), 0.0);
    for (const auto& net : nets) {
      double x0 = net[0].x, x1 = net[0].x, y0 = net[0].y, y1 = net[0].y;
      for (const auto& p : net) {
        x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
        y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
      }
      const Point c00{x0, y0}, c10{x1, y0}, c11{x1, y1}, c01{x0, y1};
      for (int j = 0; j < grid.h; ++j)
        for (int i = 0; i < grid.w; ++i) {
          auto hit = [&](Point a, Point b) { return segment_touches_box(a, b, i, i + 1, j, j + 1); };
          if (hit(c00, c10) || hit(c10, c11) || hit(c01, c11) || hit(c00, c01)) m[grid.index(i, j)] += 1.0;
        }
    }
    return m;
  }

  Map2D lines(FlightLineKind kind) const {
    Map2D m(grid.tiles(), 0.0);
    auto draw = [&](Point a, Point b) {
      for (const auto& t : oracle_supercover(a, b, grid)) m[grid.index(t.i, t.j)] += 1.0;
    };
    for (const auto& net : nets) {
      const std::size_t n = net.size();
      switch (kind) {
        case FlightLineKind::PairWise:
          for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b) draw(net[a], net[b]);
          break;
        case FlightLineKind::Star: {
          double sx = 0, sy = 0;
          for (const auto& p : net) sx += p.x, sy += p.y;
          const Point c{sx / static_cast<double>(n), sy / static_cast<double>(n)};
          for (const auto& p : net) draw(p, c);
          break;
        }
        case FlightLineKind::SourceSink:
          for (std::size_t b = 1; b < n; ++b) draw(net[0], net[b]);
          break;
        case FlightLineKind::MST:
          for (auto [a, b] : prim_mst(net)) draw(net[a], net[b]);
          break;
      }
    }
    return m;
  }
};

/// Oracle cell/pin counts by scanning every tile against every object.
inline std::array<Map2D, 4> oracle_density(const Layout& l) {
  std::array<Map2D, 4> maps;
  for (auto& m : maps) m.assign(l.grid.tiles(), 0.0);
  for (int j = 0; j < l.grid.h; ++j)
    for (int i = 0; i < l.grid.w; ++i) {
      auto inside = [&](double x, double y) { return x >= i && x < i + 1 && y >= j && y < j + 1; };
      const auto idx = l.grid.index(i, j);
      for (const auto& c : l.cells)
        if (inside(c.x, c.y)) {
          maps[0][idx] += 1;
          if (c.kind == CellKind::DFlipFlop) maps[1][idx] += 1;
          if (c.kind == CellKind::ClockTree) maps[2][idx] += 1;
        }
      for (const auto& p : l.pins)
        if (inside(p.x, p.y)) maps[3][idx] += 1;
    }
  return maps;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double d = a.size() == b.size() ? 0.0 : std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < std::min(a.size(), b.size()); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

// ---------------------------------------------------------------- NSGA-II oracles

/// Front index of every point by repeatedly peeling the set of points no remaining point dominates.
inline std::vector<int> oracle_ranks(const std::vector<std::vector<double>>& objs) {
  const std::size_t n = objs.size();
  auto dom = [&](std::size_t a, std::size_t b) {
    bool strictly = false;
    for (std::size_t m = 0; m < objs[a].size(); ++m) {
      if (objs[a][m] < objs[b][m]) return false;
      if (objs[a][m] > objs[b][m]) strictly = true;
    }
    return strictly;
  };
  std::vector<int> rank(n, -1);
  std::size_t assigned = 0;
  for (int front = 0; assigned < n; ++front) {
    std::vector<std::size_t> current;
    for (std::size_t a = 0; a < n; ++a) {
      if (rank[a] >= 0) continue;
      bool dominated = false;
      for (std::size_t b = 0; b < n && !dominated; ++b) dominated = rank[b] < 0 && dom(b, a);
      if (!dominated) current.push_back(a);
    }
    for (auto a : current) rank[a] = front;
    assigned += current.size();
  }
  return rank;
}

// ---------------------------------------------------------------- metric oracles

/// Kendall tau-b from the raw pair counts.
inline double oracle_kendall(const std::vector<double>& x, const std::vector<double>& y) {
  double concordant = 0, discordant = 0, tx = 0, ty = 0;
  for (std::size_t a = 0; a < x.size(); ++a)
    for (std::size_t b = a + 1; b < x.size(); ++b) {
      const double dx = x[a] - x[b], dy = y[a] - y[b];
      if (dx == 0 && dy == 0) continue;
      if (dx == 0) {
        tx += 1;
      } else if (dy == 0) {
        ty += 1;
      } else if ((dx > 0) == (dy > 0)) {
        concordant += 1;
      } else {
        discordant += 1;
      }
    }
  return (concordant - discordant) / std::sqrt((concordant + discordant + tx) * (concordant + discordant + ty));
}

inline double oracle_auc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t a = 0; a < s.size(); ++a)
    for (std::size_t b = 0; b < s.size(); ++b)
      if (y[a] == 1 && y[b] == 0) {
        pairs += 1;
        wins += s[a] > s[b] ? 1.0 : (s[a] == s[b] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

/// Tries every distinct score plus +inf as the decision threshold.
inline double oracle_tpr_at_fpr(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double cap) {
  std::vector<double> thresholds = s;
  thresholds.push_back(std::numeric_limits<double>::infinity());
  double pos = 0, neg = 0;
  for (auto v : y) (v ? pos : neg) += 1;
  double best = 0.0;
  for (double t : thresholds) {
    double tp = 0, fp = 0;
    for (std::size_t k = 0; k < s.size(); ++k)
      if (s[k] >= t) (y[k] ? tp : fp) += 1;
    if (fp / neg <= cap) best = std::max(best, tp / pos);
  }
  return best;
}

/// Per design: 1 + number of other layouts whose prediction is <= that of the best-labelled layout,
/// minimized over layouts tied for the best label.
inline std::map<std::string, int> oracle_rank_of_best(const std::vector<EvalPair>& pairs) {
  std::map<std::string, std::vector<const EvalPair*>> by_design;
  for (const auto& p : pairs) by_design[p.design].push_back(&p);
  std::map<std::string, int> out;
  for (const auto& [design, members] : by_design) {
    double best_label = std::numeric_limits<double>::infinity();
    for (auto* p : members) best_label = std::min(best_label, p->label);
    int best_rank = std::numeric_limits<int>::max();
    for (auto* cand : members) {
      if (cand->label != best_label) continue;
      int r = 1;
      for (auto* other : members)
        if (other != cand && other->prediction <= cand->prediction) ++r;
      best_rank = std::min(best_rank, r);
    }
    out[design] = best_rank;
  }
  return out;
}

// ---------------------------------------------------------------- gradient checking

struct GradCheck {
  double max_rel_error = 0.0;
  int probes = 0;
};

inline double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

/// Central differences of L = sum(r * f(x)) against backward(), at random input and parameter entries.
inline GradCheck check_module_gradients(nn::Module<double>& m, nn::Tensor<double> x, bool training, int probes,
                                        std::uint64_t seed, double h = 1e-4) {
  Rng rng(seed);
  nn::Tensor<double> y = m.forward(x, training);
  std::vector<double> r(y.size());
  for (auto& v : r) v = normal01(rng);
  auto loss = [&](const nn::Tensor<double>& in) {
    const auto out = m.forward(in, training);
    double s = 0;
    for (std::size_t k = 0; k < out.size(); ++k) s += r[k] * out.data[k];
    return s;
  };

  std::vector<nn::Parameter<double>*> params;
  m.collect_parameters(params);
  for (auto* p : params) std::fill(p->grad.begin(), p->grad.end(), 0.0);
  m.forward(x, training);
  nn::Tensor<double> dy(y.n, y.c, y.h, y.w);
  dy.data = r;
  const auto dx = m.backward(dy);

  GradCheck out;
  for (int k = 0; k < probes; ++k) {
    const auto idx = uniform_index(rng, x.size());
    auto xp = x, xm = x;
    xp.data[idx] += h;
    xm.data[idx] -= h;
    const double numeric = (loss(xp) - loss(xm)) / (2 * h);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(dx.data[idx], numeric));
    ++out.probes;
  }
  for (auto* p : params) {
    const auto analytic = p->grad;
    for (int k = 0; k < probes; ++k) {
      const auto idx = uniform_index(rng, p->value.size());
      const double saved = p->value[idx];
      p->value[idx] = saved + h;
      const double lp = loss(x);
      p->value[idx] = saved - h;
      const double lm = loss(x);
      p->value[idx] = saved;
      out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[idx], (lp - lm) / (2 * h)));
      ++out.probes;
    }
  }
  return out;
}

inline nn::Tensor<double> random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  nn::Tensor<double> t(n, c, h, w);
  for (auto& v : t.data) v = normal01(rng);
  return t;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace routenas::testing
