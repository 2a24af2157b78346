#include "routenas/layout.hpp"

#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "routenas/errors.hpp"

namespace routenas {

using nlohmann::json;

std::string_view to_string(CellKind kind) {
  switch (kind) {
    case CellKind::Standard:
      return "std";
    case CellKind::DFlipFlop:
      return "dff";
    case CellKind::ClockTree:
      return "clk";
  }
  return "std";
}

CellKind cell_kind_from_string(std::string_view s) {
  if (s == "std") return CellKind::Standard;
  if (s == "dff") return CellKind::DFlipFlop;
  if (s == "clk") return CellKind::ClockTree;
  throw SchemaError("unknown cell kind '" + std::string(s) + "'");
}

namespace {

[[noreturn]] void integrity(const std::string& msg) { throw IntegrityError(msg); }

}  // namespace

void validate(const Layout& layout) {
  const Grid& g = layout.grid;
  if (!g.valid())
    integrity("grid " + std::to_string(g.w) + "x" + std::to_string(g.h) +
              " must be at least 16x16 with both sides divisible by 16");

  std::unordered_map<std::string_view, const Cell*> cells;
  std::unordered_map<std::string_view, const Pin*> pins;
  std::unordered_map<std::string_view, const Net*> nets;
  for (const auto& c : layout.cells) {
    if (!cells.emplace(c.id, &c).second) integrity("duplicate cell id '" + c.id + "'");
    if (!g.contains(c.x, c.y)) integrity("cell '" + c.id + "' lies outside the grid");
    if (c.pin_ids.empty()) integrity("cell '" + c.id + "' has no pins");
  }
  for (const auto& p : layout.pins) {
    if (!pins.emplace(p.id, &p).second) integrity("duplicate pin id '" + p.id + "'");
    if (!g.contains(p.x, p.y)) integrity("pin '" + p.id + "' lies outside the grid");
  }
  for (const auto& n : layout.nets) {
    if (!nets.emplace(n.id, &n).second) integrity("duplicate net id '" + n.id + "'");
    if (n.pin_ids.size() < 2) integrity("net '" + n.id + "' has fewer than 2 pins");
  }

  for (const auto& p : layout.pins) {
    if (!cells.contains(p.cell_id)) integrity("pin '" + p.id + "' references missing cell '" + p.cell_id + "'");
    if (!nets.contains(p.net_id)) integrity("pin '" + p.id + "' references missing net '" + p.net_id + "'");
  }

  // Every pin is listed by exactly one cell and exactly one net, and those agree with the pin record.
  std::unordered_set<std::string_view> seen_in_cell;
  for (const auto& c : layout.cells) {
    for (const auto& pid : c.pin_ids) {
      auto it = pins.find(pid);
      if (it == pins.end()) integrity("cell '" + c.id + "' references missing pin '" + pid + "'");
      if (it->second->cell_id != c.id) integrity("pin '" + pid + "' is listed by cell '" + c.id + "' but belongs elsewhere");
      if (!seen_in_cell.insert(pid).second) integrity("pin '" + pid + "' is listed by more than one cell");
    }
  }
  std::unordered_set<std::string_view> seen_in_net;
  for (const auto& n : layout.nets) {
    for (const auto& pid : n.pin_ids) {
      auto it = pins.find(pid);
      if (it == pins.end()) integrity("net '" + n.id + "' references missing pin '" + pid + "'");
      if (it->second->net_id != n.id) integrity("pin '" + pid + "' is listed by net '" + n.id + "' but belongs elsewhere");
      if (!seen_in_net.insert(pid).second) integrity("pin '" + pid + "' is listed by more than one net");
    }
  }
  if (seen_in_cell.size() != layout.pins.size()) integrity("some pins are not listed by any cell");
  if (seen_in_net.size() != layout.pins.size()) integrity("some pins are not listed by any net");

  const Labels& l = layout.labels;
  if (l.violated_net_count < 0) integrity("violated_net_count must be nonnegative");
  if (l.hotspot_map.size() != g.tiles()) integrity("hotspot map size does not match the grid");
  for (auto v : l.hotspot_map)
    if (v > 1) integrity("hotspot map entries must be 0 or 1");
}

std::vector<std::vector<Point>> net_points(const Layout& layout) {
  std::unordered_map<std::string_view, const Pin*> pins;
  pins.reserve(layout.pins.size());
  for (const auto& p : layout.pins) pins.emplace(p.id, &p);
  std::vector<std::vector<Point>> out;
  out.reserve(layout.nets.size());
  for (const auto& n : layout.nets) {
    auto& pts = out.emplace_back();
    pts.reserve(n.pin_ids.size());
    for (const auto& pid : n.pin_ids) {
      auto it = pins.find(pid);
      if (it == pins.end()) integrity("net '" + n.id + "' references missing pin '" + pid + "'");
      pts.push_back({it->second->x, it->second->y});
    }
  }
  return out;
}

std::vector<std::int64_t> encode_rle(const HotspotMap& map) {
  std::vector<std::int64_t> runs;
  std::uint8_t current = 0;
  std::int64_t length = 0;
  for (auto v : map) {
    const std::uint8_t bit = v ? 1 : 0;
    if (bit == current) {
      ++length;
    } else {
      runs.push_back(length);
      current = bit;
      length = 1;
    }
  }
  runs.push_back(length);
  return runs;
}

HotspotMap decode_rle(const std::vector<std::int64_t>& runs, std::size_t total) {
  HotspotMap map;
  map.reserve(total);
  std::uint8_t bit = 0;
  for (auto r : runs) {
    if (r < 0) integrity("negative run length in hotspot_map_rle");
    if (map.size() + static_cast<std::size_t>(r) > total) integrity("hotspot_map_rle covers more tiles than the grid");
    map.insert(map.end(), static_cast<std::size_t>(r), bit);
    bit ^= 1;
  }
  if (map.size() != total) integrity("hotspot_map_rle covers fewer tiles than the grid");
  return map;
}

json layout_to_json(const Layout& layout) {
  json cells = json::array();
  for (const auto& c : layout.cells)
    cells.push_back({{"id", c.id}, {"x", c.x}, {"y", c.y}, {"kind", to_string(c.kind)}, {"pins", c.pin_ids}});
  json pins = json::array();
  for (const auto& p : layout.pins)
    pins.push_back({{"id", p.id}, {"cell", p.cell_id}, {"x", p.x}, {"y", p.y}, {"net", p.net_id}});
  json nets = json::array();
  for (const auto& n : layout.nets) nets.push_back({{"id", n.id}, {"pins", n.pin_ids}});
  return {
      {"design", layout.labels.design_name},
      {"layout_id", layout.labels.layout_id},
      {"grid", {{"w", layout.grid.w}, {"h", layout.grid.h}}},
      {"cells", std::move(cells)},
      {"pins", std::move(pins)},
      {"nets", std::move(nets)},
      {"labels",
       {{"violated_net_count", layout.labels.violated_net_count},
        {"hotspot_map_rle", encode_rle(layout.labels.hotspot_map)}}},
  };
}

namespace {

const json& field(const json& obj, const char* key, const char* where) {
  if (!obj.is_object()) throw SchemaError(std::string(where) + " must be an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(std::string("missing field '") + key + "' in " + where);
  return *it;
}

template <typename T>
T get_as(const json& obj, const char* key, const char* where) {
  const json& v = field(obj, key, where);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(std::string("field '") + key + "' in " + where + " has the wrong type: " + e.what());
  }
}

double get_number(const json& obj, const char* key, const char* where) {
  const json& v = field(obj, key, where);
  if (!v.is_number()) throw SchemaError(std::string("field '") + key + "' in " + where + " must be a number");
  return v.get<double>();
}

const json& get_array(const json& obj, const char* key, const char* where) {
  const json& v = field(obj, key, where);
  if (!v.is_array()) throw SchemaError(std::string("field '") + key + "' in " + where + " must be an array");
  return v;
}

}  // namespace

Layout layout_from_json(const json& doc) {
  Layout out;
  out.labels.design_name = get_as<std::string>(doc, "design", "layout");
  out.labels.layout_id = get_as<std::string>(doc, "layout_id", "layout");
  const json& grid = field(doc, "grid", "layout");
  out.grid.w = get_as<int>(grid, "w", "grid");
  out.grid.h = get_as<int>(grid, "h", "grid");

  for (const auto& c : get_array(doc, "cells", "layout")) {
    Cell cell;
    cell.id = get_as<std::string>(c, "id", "cell");
    cell.x = get_number(c, "x", "cell");
    cell.y = get_number(c, "y", "cell");
    cell.kind = cell_kind_from_string(get_as<std::string>(c, "kind", "cell"));
    cell.pin_ids = get_as<std::vector<std::string>>(c, "pins", "cell");
    out.cells.push_back(std::move(cell));
  }
  for (const auto& p : get_array(doc, "pins", "layout")) {
    Pin pin;
    pin.id = get_as<std::string>(p, "id", "pin");
    pin.cell_id = get_as<std::string>(p, "cell", "pin");
    pin.x = get_number(p, "x", "pin");
    pin.y = get_number(p, "y", "pin");
    pin.net_id = get_as<std::string>(p, "net", "pin");
    out.pins.push_back(std::move(pin));
  }
  for (const auto& n : get_array(doc, "nets", "layout")) {
    Net net;
    net.id = get_as<std::string>(n, "id", "net");
    net.pin_ids = get_as<std::vector<std::string>>(n, "pins", "net");
    out.nets.push_back(std::move(net));
  }
  if (out.nets.empty()) throw SchemaError("layout has no nets");

  const json& labels = field(doc, "labels", "layout");
  out.labels.violated_net_count = get_as<std::int64_t>(labels, "violated_net_count", "labels");
  const auto runs = get_as<std::vector<std::int64_t>>(labels, "hotspot_map_rle", "labels");
  if (!out.grid.valid())
    integrity("grid " + std::to_string(out.grid.w) + "x" + std::to_string(out.grid.h) +
              " must be at least 16x16 with both sides divisible by 16");
  out.labels.hotspot_map = decode_rle(runs, out.grid.tiles());

  validate(out);
  return out;
}

std::string dump_canonical(const json& doc) { return doc.dump() + "\n"; }

Layout load_layout(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open layout file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return layout_from_json(doc);
}

void save_layout(const Layout& layout, const std::filesystem::path& path) {
  if (layout.nets.empty()) throw SchemaError("refusing to save a layout with no nets");
  validate(layout);
  const std::string text = dump_canonical(layout_to_json(layout));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write layout file " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace routenas
