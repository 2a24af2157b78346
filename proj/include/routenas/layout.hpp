#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace routenas {

/// Tile tessellation of the placement area. Tile (i, j) covers [i, i+1) x [j, j+1).
struct Grid {
  int w = 0;
  int h = 0;

  std::size_t tiles() const { return static_cast<std::size_t>(w) * static_cast<std::size_t>(h); }
  std::size_t index(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(w) + static_cast<std::size_t>(i);
  }
  bool contains(double x, double y) const { return x >= 0.0 && y >= 0.0 && x < w && y < h; }
  /// Both sides at least 16 and divisible by 16.
  bool valid() const { return w >= 16 && h >= 16 && w % 16 == 0 && h % 16 == 0; }

  friend bool operator==(const Grid&, const Grid&) = default;
};

enum class CellKind { Standard, DFlipFlop, ClockTree };

std::string_view to_string(CellKind kind);
CellKind cell_kind_from_string(std::string_view s);

struct Cell {
  std::string id;
  double x = 0.0;
  double y = 0.0;
  CellKind kind = CellKind::Standard;
  std::vector<std::string> pin_ids;

  friend bool operator==(const Cell&, const Cell&) = default;
};

struct Pin {
  std::string id;
  std::string cell_id;
  double x = 0.0;
  double y = 0.0;
  std::string net_id;

  friend bool operator==(const Pin&, const Pin&) = default;
};

struct Net {
  std::string id;
  std::vector<std::string> pin_ids;  // first entry is the source pin

  int fanout() const { return static_cast<int>(pin_ids.size()) - 1; }

  friend bool operator==(const Net&, const Net&) = default;
};

/// Row-major binary map, index = j * w + i.
using HotspotMap = std::vector<std::uint8_t>;

struct Labels {
  std::int64_t violated_net_count = 0;
  HotspotMap hotspot_map;
  std::string design_name;
  std::string layout_id;

  friend bool operator==(const Labels&, const Labels&) = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// One placement solution together with its routing ground truth.
struct Layout {
  Grid grid;
  std::vector<Cell> cells;
  std::vector<Pin> pins;
  std::vector<Net> nets;
  Labels labels;

  friend bool operator==(const Layout&, const Layout&) = default;
};

/// Checks every layout invariant and throws IntegrityError on the first violation.
void validate(const Layout& layout);

/// Pin coordinates of each net in net order; the source pin comes first.
std::vector<std::vector<Point>> net_points(const Layout& layout);

std::vector<std::int64_t> encode_rle(const HotspotMap& map);
HotspotMap decode_rle(const std::vector<std::int64_t>& runs, std::size_t total);

nlohmann::json layout_to_json(const Layout& layout);
Layout layout_from_json(const nlohmann::json& doc);

/// Canonical text form: sorted keys, shortest round-trip float formatting.
std::string dump_canonical(const nlohmann::json& doc);

Layout load_layout(const std::filesystem::path& path);
void save_layout(const Layout& layout, const std::filesystem::path& path);

}  // namespace routenas
