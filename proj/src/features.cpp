#include "routenas/features.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <tuple>

#include "binary_io.hpp"
#include "routenas/errors.hpp"

namespace routenas {

namespace {

int tile_of(double v) { return static_cast<int>(std::floor(v)); }

// Smallest integer j with j + 1 >= v, i.e. the lowest closed unit interval touching v.
int lowest_touching(double v) { return static_cast<int>(std::ceil(v)) - 1; }

bool lex_less(const Point& a, const Point& b) { return std::tie(a.x, a.y) < std::tie(b.x, b.y); }

void add_rows(std::vector<Tile>& out, int i, double ylo, double yhi, Grid grid) {
  if (i < 0 || i >= grid.w) return;
  const int j0 = std::max(lowest_touching(ylo), 0);
  const int j1 = std::min(tile_of(yhi), grid.h - 1);
  for (int j = j0; j <= j1; ++j) out.push_back({i, j});
}

}  // namespace

std::vector<Tile> rasterize_segment(const Segment& seg, Grid grid) {
  Point a = seg.p;
  Point b = seg.q;
  if (lex_less(b, a)) std::swap(a, b);

  std::vector<Tile> out;
  if (a.x == b.x) {
    const double ylo = std::min(a.y, b.y);
    const double yhi = std::max(a.y, b.y);
    for (int i = lowest_touching(a.x); i <= tile_of(a.x); ++i) add_rows(out, i, ylo, yhi, grid);
  } else {
    const double slope = (b.y - a.y) / (b.x - a.x);
    auto y_at = [&](double x) {
      if (x == a.x) return a.y;
      if (x == b.x) return b.y;
      return a.y + (x - a.x) * slope;
    };
    const int i_first = std::max(lowest_touching(a.x), 0);
    const int i_last = std::min(tile_of(b.x), grid.w - 1);
    for (int i = i_first; i <= i_last; ++i) {
      const double xl = std::max(static_cast<double>(i), a.x);
      const double xr = std::min(static_cast<double>(i + 1), b.x);
      const double y0 = y_at(xl);
      const double y1 = y_at(xr);
      add_rows(out, i, std::min(y0, y1), std::max(y0, y1), grid);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

double l1_distance(const Point& a, const Point& b) { return std::abs(a.x - b.x) + std::abs(a.y - b.y); }

std::vector<Edge> mst_edges(std::span<const Point> points) {
  const std::size_t n = points.size();
  struct Candidate {
    double w;
    std::size_t a, b;
  };
  std::vector<Candidate> cands;
  cands.reserve(n * (n - 1) / 2);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + 1; b < n; ++b) cands.push_back({l1_distance(points[a], points[b]), a, b});
  std::sort(cands.begin(), cands.end(),
            [](const Candidate& x, const Candidate& y) { return std::tie(x.w, x.a, x.b) < std::tie(y.w, y.a, y.b); });

  std::vector<std::size_t> parent(n);
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  auto find = [&](std::size_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };

  std::vector<Edge> out;
  out.reserve(n ? n - 1 : 0);
  for (const auto& c : cands) {
    const auto ra = find(c.a);
    const auto rb = find(c.b);
    if (ra == rb) continue;
    parent[std::max(ra, rb)] = std::min(ra, rb);
    out.push_back({c.a, c.b});
    if (out.size() + 1 == n) break;
  }
  return out;
}

std::vector<Segment> flight_lines(std::span<const Point> net, FlightLineKind kind) {
  std::vector<Segment> out;
  const std::size_t n = net.size();
  switch (kind) {
    case FlightLineKind::PairWise:
      out.reserve(n * (n - 1) / 2);
      for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) out.push_back({net[a], net[b]});
      break;
    case FlightLineKind::Star: {
      Point centre{};
      for (const auto& p : net) {
        centre.x += p.x;
        centre.y += p.y;
      }
      centre.x /= static_cast<double>(n);
      centre.y /= static_cast<double>(n);
      out.reserve(n);
      for (const auto& p : net) out.push_back({p, centre});
      break;
    }
    case FlightLineKind::SourceSink:
      out.reserve(n - 1);
      for (std::size_t b = 1; b < n; ++b) out.push_back({net[0], net[b]});
      break;
    case FlightLineKind::MST:
      for (const auto& e : mst_edges(net)) out.push_back({net[e.a], net[e.b]});
      break;
  }
  return out;
}

std::array<Map2D, 4> cell_density_maps(const Layout& layout) {
  const Grid g = layout.grid;
  std::array<Map2D, 4> maps;
  for (auto& m : maps) m.assign(g.tiles(), 0.0);
  for (const auto& c : layout.cells) {
    const auto idx = g.index(tile_of(c.x), tile_of(c.y));
    maps[0][idx] += 1.0;
    if (c.kind == CellKind::DFlipFlop) maps[1][idx] += 1.0;
    if (c.kind == CellKind::ClockTree) maps[2][idx] += 1.0;
  }
  for (const auto& p : layout.pins) maps[3][g.index(tile_of(p.x), tile_of(p.y))] += 1.0;
  return maps;
}

FanoutGroups split_by_fanout(const Layout& layout, int threshold) {
  if (threshold < 1) throw ConfigError("fanout threshold must be at least 1");
  FanoutGroups groups;
  groups.threshold = threshold;
  for (std::size_t k = 0; k < layout.nets.size(); ++k)
    (layout.nets[k].fanout() > threshold ? groups.large : groups.small).push_back(k);
  return groups;
}

namespace {

struct Box {
  double xmin, xmax, ymin, ymax;
};

Box bounding_box(const NetPins& net) {
  Box b{net[0].x, net[0].x, net[0].y, net[0].y};
  for (const auto& p : net) {
    b.xmin = std::min(b.xmin, p.x);
    b.xmax = std::max(b.xmax, p.x);
    b.ymin = std::min(b.ymin, p.y);
    b.ymax = std::max(b.ymax, p.y);
  }
  return b;
}

// Widens [lo, hi] about its midpoint to at least one tile; returns the clamped extent.
double clamp_extent(double& lo, double& hi) {
  const double extent = hi - lo;
  if (extent >= 1.0) return extent;
  const double mid = 0.5 * (lo + hi);
  lo = mid - 0.5;
  hi = mid + 0.5;
  return 1.0;
}

}  // namespace

Map2D rudy_map(std::span<const NetPins> nets, Grid grid) {
  Map2D map(grid.tiles(), 0.0);
  for (const auto& net : nets) {
    Box b = bounding_box(net);
    const double w = clamp_extent(b.xmin, b.xmax);
    const double h = clamp_extent(b.ymin, b.ymax);
    const double density = (w + h) / (w * h);
    // centre i + 0.5 inside [lo, hi]  <=>  ceil(lo - 0.5) <= i <= floor(hi - 0.5)
    const int i0 = std::max(static_cast<int>(std::ceil(b.xmin - 0.5)), 0);
    const int i1 = std::min(static_cast<int>(std::floor(b.xmax - 0.5)), grid.w - 1);
    const int j0 = std::max(static_cast<int>(std::ceil(b.ymin - 0.5)), 0);
    const int j1 = std::min(static_cast<int>(std::floor(b.ymax - 0.5)), grid.h - 1);
    for (int j = j0; j <= j1; ++j)
      for (int i = i0; i <= i1; ++i) map[grid.index(i, j)] += density;
  }
  return map;
}

Map2D bbox_outline_map(std::span<const NetPins> nets, Grid grid) {
  Map2D map(grid.tiles(), 0.0);
  std::vector<Tile> tiles;
  for (const auto& net : nets) {
    const Box b = bounding_box(net);
    const Point c00{b.xmin, b.ymin}, c10{b.xmax, b.ymin}, c11{b.xmax, b.ymax}, c01{b.xmin, b.ymax};
    tiles.clear();
    for (const Segment& s : {Segment{c00, c10}, Segment{c10, c11}, Segment{c01, c11}, Segment{c00, c01}}) {
      auto t = rasterize_segment(s, grid);
      tiles.insert(tiles.end(), t.begin(), t.end());
    }
    std::sort(tiles.begin(), tiles.end());
    tiles.erase(std::unique(tiles.begin(), tiles.end()), tiles.end());
    for (const auto& t : tiles) map[grid.index(t.i, t.j)] += 1.0;
  }
  return map;
}

Map2D flight_line_map(std::span<const NetPins> nets, FlightLineKind kind, Grid grid) {
  Map2D map(grid.tiles(), 0.0);
  for (const auto& net : nets)
    for (const auto& seg : flight_lines(net, kind))
      for (const auto& t : rasterize_segment(seg, grid)) map[grid.index(t.i, t.j)] += 1.0;
  return map;
}

FeatureTensor extract_features(const Layout& layout, int threshold) {
  const Grid g = layout.grid;
  FeatureTensor out(g);
  auto put = [&](int c, const Map2D& m) { std::copy(m.begin(), m.end(), out.channel(c).begin()); };

  const auto cells = cell_density_maps(layout);
  for (int c = 0; c < 4; ++c) put(c, cells[static_cast<std::size_t>(c)]);

  const auto points = net_points(layout);
  const auto groups = split_by_fanout(layout, threshold);
  std::array<std::vector<NetPins>, 2> by_group;
  for (auto k : groups.small) by_group[0].push_back(points[k]);
  for (auto k : groups.large) by_group[1].push_back(points[k]);

  for (int s = 0; s < 2; ++s) {
    const auto& nets = by_group[static_cast<std::size_t>(s)];
    put(4 + s, rudy_map(nets, g));
    put(6 + s, bbox_outline_map(nets, g));
    put(8 + s, flight_line_map(nets, FlightLineKind::PairWise, g));
    put(10 + s, flight_line_map(nets, FlightLineKind::Star, g));
    put(12 + s, flight_line_map(nets, FlightLineKind::SourceSink, g));
    put(14 + s, flight_line_map(nets, FlightLineKind::MST, g));
  }
  return out;
}

void save_feature_tensor(const FeatureTensor& tensor, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write feature file " + path.string());
  out.write("RNF1", 4);
  detail::write_u32(out, static_cast<std::uint32_t>(tensor.grid.w));
  detail::write_u32(out, static_cast<std::uint32_t>(tensor.grid.h));
  detail::write_u32(out, kFeatureChannels);
  std::vector<float> values(tensor.data.begin(), tensor.data.end());
  detail::write_floats(out, values);
  if (!out) throw IoError("write failed for " + path.string());
}

FeatureTensor load_feature_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open feature file " + path.string());
  detail::expect_magic(in, "RNF1", path.string());
  Grid g;
  g.w = static_cast<int>(detail::read_u32(in));
  g.h = static_cast<int>(detail::read_u32(in));
  const auto c = detail::read_u32(in);
  if (c != kFeatureChannels) throw IoError(path.string() + ": expected 16 channels");
  if (!g.valid()) throw IoError(path.string() + ": invalid grid size");
  std::vector<float> values(static_cast<std::size_t>(c) * g.tiles());
  detail::read_floats(in, values);
  FeatureTensor t(g);
  std::copy(values.begin(), values.end(), t.data.begin());
  return t;
}

nlohmann::json feature_sidecar(const Layout& layout, int threshold) {
  nlohmann::json names = nlohmann::json::array();
  for (auto n : kChannelNames) names.push_back(std::string(n));
  return {{"channels", std::move(names)},
          {"design", layout.labels.design_name},
          {"layout_id", layout.labels.layout_id},
          {"fanout_threshold", threshold},
          {"grid", {{"w", layout.grid.w}, {"h", layout.grid.h}}}};
}

}  // namespace routenas
