#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "routenas/errors.hpp"
#include "routenas/pipeline.hpp"
#include "routenas/report.hpp"

using namespace routenas;
namespace fs = std::filesystem;

namespace {

// Five small designs on a 32x32 die; shared by every case below.
const fs::path& dataset_dir() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "routenas_test_pipeline_data";
    fs::remove_all(d);
    SynthConfig cfg;
    cfg.n_designs = 5;
    cfg.layouts_per_design = 4;
    cfg.grid = {32, 32};
    cfg.min_cells = 150;
    cfg.max_cells = 250;
    cfg.min_nets = 160;
    cfg.max_nets = 280;
    cfg.threshold = 3.0;
    cfg.seed = 8;
    save_dataset(generate(cfg), cfg, d);
    return d;
  }();
  return dir;
}

RunConfig tiny(Task task) {
  RunConfig c = RunConfig::make(Preset::Desk, task);
  c.seed = 5;
  c.dataset_dir = dataset_dir();
  c.width_divisor = 16;
  c.search.population_size = 2;
  c.search.offspring_size = 2;
  c.search.generations = 1;
  c.train.epochs = 1;
  c.train.batch_size = 4;
  c.random_baseline = 1;
  c.propagate();
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("run config presets, json and validation") {
  const auto desk = RunConfig::make(Preset::Desk, Task::Hotspot);
  CHECK(desk.search.population_size == 8);
  CHECK(desk.search.generations == 5);
  CHECK(desk.synth.grid == Grid{64, 64});
  CHECK(desk.train.loss == LossKind::BCE);
  const auto paper = RunConfig::make(Preset::Paper, Task::NetCount);
  CHECK(paper.search.population_size == 20);
  CHECK(paper.train.epochs == 45);
  CHECK(paper.width_divisor == 1);

  RunConfig c = desk;
  apply_run_config_json(c, {{"seed", 9}, {"search", {{"generations", 2}}}, {"train", {{"epochs", 3}}}, {"folds", 4}});
  c.propagate();
  CHECK(c.search.generations == 2);
  CHECK(c.search.population_size == 8);
  CHECK(c.train.epochs == 3);
  CHECK(c.train.seed == 9);
  CHECK(c.search.seed == 9);
  CHECK(c.synth.seed == 9);
  CHECK(c.folds == 4);

  RunConfig d = RunConfig::make(Preset::Desk, Task::Hotspot);
  apply_run_config_json(d, run_config_to_json(c));
  d.propagate();
  CHECK(run_config_to_json(d) == run_config_to_json(c));

  CHECK_THROWS_AS(apply_run_config_json(c, {{"folds", "many"}}), ConfigError);
  CHECK_THROWS_AS(apply_run_config_json(c, nlohmann::json::array()), ConfigError);
  c.folds = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(preset_from_string("laptop"), ConfigError);
}

TEST_CASE("stored and in-memory features agree") {
  const auto in_memory = load_dataset(dataset_dir(), 5);
  CHECK(extract_dataset(dataset_dir(), 5) == 20);
  CHECK(fs::exists(feature_path(dataset_dir(), "design_00_L000")));
  const auto stored = load_dataset(dataset_dir(), 5);
  REQUIRE(stored.features.size() == in_memory.features.size());
  for (std::size_t k = 0; k < stored.features.size(); ++k) CHECK(stored.features[k].data == in_memory.features[k].data);
  // A different threshold ignores the stored files.
  const auto other = load_dataset(dataset_dir(), 2);
  CHECK(other.features[0].data != stored.features[0].data);
  CHECK_THROWS_AS(load_dataset(dataset_dir() / "missing", 5), IoError);
}

TEST_CASE("evaluation metrics stay in range and are seeded") {
  const auto data = load_dataset(dataset_dir(), 5);
  const auto split = split_by_design(data.layouts, 0.6, 1);
  for (auto task : {Task::NetCount, Task::Hotspot}) {
    const auto cfg = tiny(task);
    const auto eval = make_evaluator(data, split, cfg);
    const auto g = random_genome(task, 3);
    const auto a = eval(g);
    const auto b = eval(g);
    REQUIRE(a.size() == 1);
    CHECK(a == b);
    if (task == Task::NetCount) {
      CHECK(a[0] >= -1.0);
      CHECK(a[0] <= 1.0);
    } else {
      CHECK(a[0] >= 0.0);
      CHECK(a[0] <= 1.0);
    }
  }
  CHECK(failure_metric(Task::NetCount) == -1.0);
  CHECK(failure_metric(Task::Hotspot) == 0.0);

  auto cfg = tiny(Task::NetCount);
  cfg.search.minimize_parameters = true;
  const auto two = make_evaluator(data, split, cfg)(Genome::zeros(Task::NetCount));
  REQUIRE(two.size() == 2);
  CHECK(two[1] < 0.0);
}

TEST_CASE("search report layout and determinism") {
  const auto data = load_dataset(dataset_dir(), 5);
  const auto cfg = tiny(Task::NetCount);
  const auto a = run_search(data, cfg);
  CHECK(a.at("kind") == "search");
  CHECK(a.at("history").size() == 2);
  CHECK(a.at("random_baseline").at("genomes").size() == 1);
  CHECK(a.contains("best_architecture"));
  CHECK(a.at("top5").size() >= 1);
  CHECK(run_search(data, cfg).dump() == a.dump());
}

TEST_CASE("cross-validation and report rendering") {
  const auto data = load_dataset(dataset_dir(), 5);
  auto cfg = tiny(Task::Hotspot);
  const auto out = fs::temp_directory_path() / "routenas_test_pipeline_out";
  fs::remove_all(out);
  fs::create_directories(out);
  const std::vector<NamedSpec> models = {{"searched", decode(Genome::ones(Task::Hotspot))},
                                         {"resnet18", resnet18_spec(Task::Hotspot)}};
  const auto cv = run_crossval(data, cfg, models);
  CHECK(cv.at("design_disjoint") == true);
  CHECK(cv.at("models").size() == 2);
  CHECK(cv.at("models")[0].at("fold_metrics").size() == 5);
  {
    std::ofstream(out / "crossval.json") << cv.dump(2);
  }
  const auto files = render_report(out, out / "report");
  CHECK(fs::exists(out / "report" / "crossval.csv"));
  CHECK(fs::exists(out / "report" / "per_design.csv"));
  CHECK(fs::exists(out / "report" / "architecture_diff.txt"));
  CHECK(fs::exists(out / "report" / "heatmaps"));
  CHECK(slurp(out / "report" / "per_design.csv").find("Avg") != std::string::npos);
  CHECK_FALSE(files.summary.empty());

  const std::vector<NamedSpec> wrong = {{"x", decode(Genome::zeros(Task::NetCount))}};
  CHECK_THROWS_AS(run_crossval(data, cfg, wrong), TaskMismatch);
  CHECK_THROWS_AS(render_report(out / "nothing", out / "r2"), IoError);
}

TEST_CASE("report helpers") {
  const auto rows = architecture_diff(decode(Genome::zeros(Task::NetCount)), resnet18_spec(Task::NetCount));
  CHECK(rows.size() == 5);
  CHECK(rows[0].stage == "STEM");
  CHECK(rows[1].searched == "3/2/32");
  CHECK(rows[1].differs);
  CHECK(render_csv({"a", "b"}, {{"1", "x,y"}}) == "a,b\n1,\"x,y\"\n");
  const auto t = render_table({"name", "v"}, {{"longer", "1"}});
  CHECK(t.find("longer  1") != std::string::npos);
  const auto pgm = fs::temp_directory_path() / "routenas_test.pgm";
  write_pgm(pgm, Map2D(256, 0.5), {16, 16});
  CHECK(fs::file_size(pgm) == std::string("P5\n16 16\n255\n").size() + 256);
}

TEST_CASE("command line front end") {
  const fs::path dir = fs::temp_directory_path() / "routenas_test_cli";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = ROUTENAS_CLI_PATH;
  auto run = [&](const std::string& args) {
    return std::system((cli + " " + args + " > " + (dir / "log.txt").string() + " 2>&1").c_str());
  };
  {
    std::ofstream(dir / "cfg.json")
        << R"({"width_divisor": 16, "search": {"population_size": 2, "offspring_size": 2, "generations": 1},
              "train": {"epochs": 1, "batch_size": 4}})";
  }
  const std::string data = (dir / "data").string();
  CHECK(run("gen-data --seed 2 --designs 5 --layouts 2 --grid 32 --out " + data) == 0);
  CHECK(fs::exists(dir / "data" / "manifest.json"));
  CHECK(run("extract --dataset " + data) == 0);
  const std::string common = " --seed 2 --config " + (dir / "cfg.json").string() + " --dataset " + data;
  CHECK(run("search" + common + " --out " + (dir / "a").string()) == 0);
  CHECK(run("search" + common + " --out " + (dir / "b").string()) == 0);
  CHECK(slurp(dir / "a" / "search.json") == slurp(dir / "b" / "search.json"));
  CHECK(run("train" + common + " --genome 000000000000 --out " + (dir / "m").string()) == 0);
  CHECK(run("predict" + common + " --model " + (dir / "m" / "model.rnm").string() + " --out " + (dir / "m").string()) == 0);
  CHECK(fs::exists(dir / "m" / "predictions.json"));
  CHECK(run("report --out " + (dir / "a").string()) == 0);
  CHECK(fs::exists(dir / "a" / "report" / "search_history.csv"));
  CHECK(run("train" + common + " --genome 0101 --out " + (dir / "m").string()) != 0);
  CHECK(slurp(dir / "log.txt").rfind("error: ", 0) == 0);
  CHECK(run("bogus") != 0);
}
