#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "routenas/layout.hpp"

namespace routenas {

inline constexpr int kFeatureChannels = 16;
inline constexpr int kDefaultFanoutThreshold = 5;

/// Channel order of every feature tensor: 4 cell-density maps, then each wire feature as (small, large) fanout group.
inline constexpr std::array<std::string_view, kFeatureChannels> kChannelNames = {
    "cell_all", "cell_dff", "cell_clk", "pin_all", "rudy_s",     "rudy_l",     "bbox_s", "bbox_l",
    "pair_s",   "pair_l",   "star_s",   "star_l",  "srcsink_s", "srcsink_l", "mst_s",  "mst_l"};

/// Row-major W x H map, index = j * w + i.
using Map2D = std::vector<double>;

struct Segment {
  Point p;
  Point q;
};

struct Tile {
  int i = 0;
  int j = 0;

  friend bool operator==(const Tile&, const Tile&) = default;
  friend auto operator<=>(const Tile& a, const Tile& b) {
    if (auto c = a.j <=> b.j; c != 0) return c;
    return a.i <=> b.i;
  }
};

struct Edge {
  std::size_t a = 0;
  std::size_t b = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

enum class FlightLineKind { PairWise, Star, SourceSink, MST };

/// Nets split by fanout; holds indices into Layout::nets.
struct FanoutGroups {
  int threshold = kDefaultFanoutThreshold;
  std::vector<std::size_t> small;  // fanout <= threshold
  std::vector<std::size_t> large;  // fanout > threshold
};

/// W x H x 16 input tensor, stored channel-major and row-major within a channel.
struct FeatureTensor {
  Grid grid;
  std::vector<double> data;

  FeatureTensor() = default;
  explicit FeatureTensor(Grid g) : grid(g), data(static_cast<std::size_t>(kFeatureChannels) * g.tiles(), 0.0) {}

  std::span<double> channel(int c) { return {data.data() + static_cast<std::size_t>(c) * grid.tiles(), grid.tiles()}; }
  std::span<const double> channel(int c) const {
    return {data.data() + static_cast<std::size_t>(c) * grid.tiles(), grid.tiles()};
  }
  double at(int c, int i, int j) const { return channel(c)[grid.index(i, j)]; }
};

/// Tiles whose closed unit square the segment touches, sorted by (j, i) and clipped to the grid.
std::vector<Tile> rasterize_segment(const Segment& seg, Grid grid);

/// Minimum spanning tree under L1 distance. Ties resolve toward the lexicographically lower index pair.
std::vector<Edge> mst_edges(std::span<const Point> points);

double l1_distance(const Point& a, const Point& b);

std::vector<Segment> flight_lines(std::span<const Point> net, FlightLineKind kind);

/// Channels 0..3: all cells, D flip-flops, clock-tree cells, pins; binned by containing tile.
std::array<Map2D, 4> cell_density_maps(const Layout& layout);

FanoutGroups split_by_fanout(const Layout& layout, int threshold);

using NetPins = std::vector<Point>;

/// Sum over nets of (w + h) / (w * h) on tiles whose centre lies in the net's bounding box.
/// Extents below one tile are widened about their midpoint to exactly one tile.
Map2D rudy_map(std::span<const NetPins> nets, Grid grid);

/// Per net, +1 on every tile touched by its bounding-box outline.
Map2D bbox_outline_map(std::span<const NetPins> nets, Grid grid);

/// Tile hit counts of every rasterized flight line of the given kind.
Map2D flight_line_map(std::span<const NetPins> nets, FlightLineKind kind, Grid grid);

FeatureTensor extract_features(const Layout& layout, int threshold = kDefaultFanoutThreshold);

/// RNF1 binary: magic, u32 W, u32 H, u32 C, then C*W*H little-endian float32.
void save_feature_tensor(const FeatureTensor& tensor, const std::filesystem::path& path);
FeatureTensor load_feature_tensor(const std::filesystem::path& path);

/// Sidecar listing channel names in order.
nlohmann::json feature_sidecar(const Layout& layout, int threshold);

}  // namespace routenas
