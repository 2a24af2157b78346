#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "routenas/errors.hpp"
#include "routenas/features.hpp"
#include "support.hpp"

using namespace routenas;
using testing::FeatureOracle;
namespace fs = std::filesystem;

namespace {

std::vector<Tile> raster(Point a, Point b, Grid g = {16, 16}) { return rasterize_segment({a, b}, g); }

}  // namespace

TEST_CASE("supercover of hand cases") {
  // Interior horizontal segment stays in one row.
  CHECK(raster({0.5, 0.5}, {2.5, 0.5}) == std::vector<Tile>{{0, 0}, {1, 0}, {2, 0}});
  // A segment on the line y = 1 touches the rows on both sides.
  CHECK(raster({0.5, 1.0}, {1.5, 1.0}) == std::vector<Tile>{{0, 0}, {1, 0}, {0, 1}, {1, 1}});
  // Through a lattice corner the diagonal touches all four tiles around it.
  CHECK(raster({0.5, 0.5}, {1.5, 1.5}) == std::vector<Tile>{{0, 0}, {1, 0}, {0, 1}, {1, 1}});
  // Point segment in a tile interior.
  CHECK(raster({3.2, 4.7}, {3.2, 4.7}) == std::vector<Tile>{{3, 4}});
  // Clipped at the grid edge.
  CHECK(raster({0.0, 0.5}, {0.5, 0.5}) == std::vector<Tile>{{0, 0}});
  // Shallow diagonal crossing y = 1 inside column 2.
  CHECK(raster({0.5, 0.5}, {3.5, 1.4}) == std::vector<Tile>{{0, 0}, {1, 0}, {2, 0}, {2, 1}, {3, 1}});
}

TEST_CASE("supercover is symmetric and matches the brute-force oracle") {
  Rng rng(5);
  const Grid g{16, 16};
  for (int t = 0; t < 2000; ++t) {
    Point a{uniform01(rng) * 16, uniform01(rng) * 16};
    Point b{uniform01(rng) * 16, uniform01(rng) * 16};
    if (t % 4 == 1) b.x = a.x;  // vertical
    if (t % 4 == 2) b.y = a.y;  // horizontal
    if (t % 8 == 3) a = {std::floor(a.x), std::floor(a.y)}, b = {std::floor(b.x), std::floor(b.y)};  // lattice
    const auto got = raster(a, b, g);
    CHECK(got == raster(b, a, g));
    CHECK(got == testing::oracle_supercover(a, b, g));
  }
}

TEST_CASE("mst weight equals exhaustive minimum") {
  Rng rng(17);
  for (int t = 0; t < 300; ++t) {
    const int n = 2 + static_cast<int>(uniform_index(rng, 6));
    std::vector<Point> pts;
    for (int k = 0; k < n; ++k) {
      // Integer coordinates provoke equal-weight edges.
      if (t % 2)
        pts.push_back({static_cast<double>(uniform_index(rng, 5)), static_cast<double>(uniform_index(rng, 5))});
      else
        pts.push_back({uniform01(rng) * 10, uniform01(rng) * 10});
    }
    const auto edges = mst_edges(pts);
    REQUIRE(edges.size() == static_cast<std::size_t>(n - 1));
    double w = 0;
    for (const auto& e : edges) w += l1_distance(pts[e.a], pts[e.b]);
    CHECK(w == doctest::Approx(testing::exhaustive_mst_weight(pts)).epsilon(1e-12));
  }
}

TEST_CASE("flight line segment counts") {
  const std::vector<Point> net = {{0.5, 0.5}, {3.5, 0.5}, {0.5, 3.5}, {3.5, 3.5}};
  CHECK(flight_lines(net, FlightLineKind::PairWise).size() == 6);
  CHECK(flight_lines(net, FlightLineKind::Star).size() == 4);
  CHECK(flight_lines(net, FlightLineKind::SourceSink).size() == 3);
  CHECK(flight_lines(net, FlightLineKind::MST).size() == 3);
  const auto star = flight_lines(net, FlightLineKind::Star);
  CHECK(star[0].q == Point{2.0, 2.0});
}

TEST_CASE("rudy of a single net") {
  const Grid g{16, 16};
  // 4 x 2 box from (1,1) to (5,3): centres 1.5..4.5 by 1.5..2.5 -> 4 x 2 tiles of density 6/8.
  const std::vector<NetPins> nets = {{{1.0, 1.0}, {5.0, 3.0}}};
  const auto m = rudy_map(nets, g);
  double total = 0;
  for (auto v : m) total += v;
  CHECK(total == doctest::Approx(8 * 0.75));
  CHECK(m[g.index(1, 1)] == doctest::Approx(0.75));
  CHECK(m[g.index(0, 1)] == 0.0);
  // Degenerate box inside one tile is widened to exactly that tile with density 2.
  const std::vector<NetPins> point = {{{7.5, 7.5}, {7.5, 7.5}}};
  const auto p = rudy_map(point, g);
  CHECK(p[g.index(7, 7)] == doctest::Approx(2.0));
  double sum = 0;
  for (auto v : p) sum += v;
  CHECK(sum == doctest::Approx(2.0));
}

TEST_CASE("bbox outline of degenerate nets") {
  const Grid g{16, 16};
  const std::vector<NetPins> one_tile = {{{3.2, 3.3}, {3.7, 3.9}}};
  const auto m = bbox_outline_map(one_tile, g);
  CHECK(m[g.index(3, 3)] == 1.0);
  double total = 0;
  for (auto v : m) total += v;
  CHECK(total == 1.0);
  // A horizontal net reduces to a segment.
  const std::vector<NetPins> flat = {{{1.5, 4.5}, {5.5, 4.5}}};
  const auto f = bbox_outline_map(flat, g);
  total = 0;
  for (auto v : f) total += v;
  CHECK(total == 5.0);
}

TEST_CASE("every channel matches its oracle on random layouts") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const auto l = testing::random_layout({32, 32}, seed, 50, 40);
    const auto x = extract_features(l);
    const auto dens = testing::oracle_density(l);
    for (int c = 0; c < 4; ++c) CHECK(testing::max_abs_diff(x.channel(c), dens[static_cast<std::size_t>(c)]) == 0.0);

    const auto pts = net_points(l);
    const auto groups = split_by_fanout(l, kDefaultFanoutThreshold);
    for (int s = 0; s < 2; ++s) {
      FeatureOracle o{l.grid, {}};
      for (auto k : s ? groups.large : groups.small) o.nets.push_back(pts[k]);
      CHECK(testing::max_abs_diff(x.channel(4 + s), o.rudy()) <= 1e-9);
      CHECK(testing::max_abs_diff(x.channel(6 + s), o.bbox()) == 0.0);
      CHECK(testing::max_abs_diff(x.channel(8 + s), o.lines(FlightLineKind::PairWise)) == 0.0);
      CHECK(testing::max_abs_diff(x.channel(10 + s), o.lines(FlightLineKind::Star)) == 0.0);
      CHECK(testing::max_abs_diff(x.channel(12 + s), o.lines(FlightLineKind::SourceSink)) == 0.0);
      CHECK(testing::max_abs_diff(x.channel(14 + s), o.lines(FlightLineKind::MST)) == 0.0);
    }
  }
}

TEST_CASE("wire channels are additive over disjoint net sets") {
  const auto l = testing::random_layout({32, 32}, 99, 50, 60);
  const auto pts = net_points(l);
  std::vector<NetPins> a(pts.begin(), pts.begin() + 25), b(pts.begin() + 25, pts.end());
  const Grid g = l.grid;
  auto check = [&](auto fn, double tol) {
    const Map2D all = fn(std::span<const NetPins>(pts));
    const Map2D ma = fn(std::span<const NetPins>(a));
    const Map2D mb = fn(std::span<const NetPins>(b));
    for (std::size_t k = 0; k < all.size(); ++k) CHECK(std::abs(all[k] - ma[k] - mb[k]) <= tol);
  };
  check([&](std::span<const NetPins> n) { return rudy_map(n, g); }, 1e-9);
  check([&](std::span<const NetPins> n) { return bbox_outline_map(n, g); }, 0.0);
  for (auto kind : {FlightLineKind::PairWise, FlightLineKind::Star, FlightLineKind::SourceSink, FlightLineKind::MST})
    check([&](std::span<const NetPins> n) { return flight_line_map(n, kind, g); }, 0.0);
}

TEST_CASE("fanout grouping respects the threshold") {
  const auto l = testing::random_layout({32, 32}, 3, 40, 60);
  for (int t : {1, 3, 5, 8}) {
    const auto gr = split_by_fanout(l, t);
    CHECK(gr.small.size() + gr.large.size() == l.nets.size());
    for (auto k : gr.small) CHECK(l.nets[k].fanout() <= t);
    for (auto k : gr.large) CHECK(l.nets[k].fanout() > t);
  }
  CHECK_THROWS_AS(split_by_fanout(l, 0), ConfigError);
}

TEST_CASE("feature file round trip is exact at float precision") {
  const auto l = testing::random_layout({32, 32}, 7);
  const auto x = extract_features(l);
  const auto path = fs::temp_directory_path() / "routenas_test_features.rnf";
  save_feature_tensor(x, path);
  const auto y = load_feature_tensor(path);
  CHECK(y.grid == x.grid);
  REQUIRE(y.data.size() == x.data.size());
  for (std::size_t k = 0; k < x.data.size(); ++k) CHECK(y.data[k] == static_cast<double>(static_cast<float>(x.data[k])));
  const auto side = feature_sidecar(l, 5);
  CHECK(side.at("channels").size() == 16);
  CHECK(side.at("channels")[4] == "rudy_s");
  CHECK(side.at("fanout_threshold") == 5);
  CHECK_THROWS_AS(load_feature_tensor(path.string() + ".missing"), IoError);
}
