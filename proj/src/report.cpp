#include "routenas/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "routenas/errors.hpp"

namespace routenas {

namespace fs = std::filesystem;

namespace {

std::string block_str(int k, int b, int f) {
  return std::to_string(k) + "/" + std::to_string(b) + "/" + std::to_string(f);
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string num_or_dash(const nlohmann::json& v, int digits = 4) {
  return v.is_number() ? fixed(v.get<double>(), digits) : "-";
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text, ReportFiles& files) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
  files.written.push_back(path);
}

}  // namespace

std::vector<StageDiff> architecture_diff(const ArchitectureSpec& a, const ArchitectureSpec& b) {
  std::vector<StageDiff> rows;
  auto add = [&](std::string stage, std::string x, std::string y) {
    const bool d = x != y;
    rows.push_back({std::move(stage), std::move(x), std::move(y), d});
  };
  add("STEM", block_str(a.stem.kernel, 1, a.stem.n_filters), block_str(b.stem.kernel, 1, b.stem.n_filters));
  for (std::size_t s = 0; s < 4; ++s)
    add("CONV" + std::to_string(s + 1), block_str(a.conv[s].kernel, a.conv[s].n_blocks, a.conv[s].n_filters),
        block_str(b.conv[s].kernel, b.conv[s].n_blocks, b.conv[s].n_filters));
  const std::size_t n_trans = std::max(a.trans.size(), b.trans.size());
  for (std::size_t t = 0; t < n_trans; ++t) {
    auto str = [t](const ArchitectureSpec& s) {
      return t < s.trans.size() ? block_str(s.trans[t].kernel, s.trans[t].n_blocks, s.trans[t].n_filters)
                                : std::string("-");
    };
    add("TransCONV" + std::to_string(t + 1), str(a), str(b));
  }
  const std::size_t n_sc = std::max(a.shortcuts.size(), b.shortcuts.size());
  for (std::size_t k = 0; k < n_sc; ++k) {
    auto str = [k](const ArchitectureSpec& s) {
      return k < s.shortcuts.size() ? std::string(s.shortcuts[k] ? "on" : "off") : std::string("-");
    };
    add("S" + std::to_string(k + 1), str(a), str(b));
  }
  return rows;
}

std::string render_architecture_diff(const std::vector<StageDiff>& rows, const std::string& searched_name,
                                     const std::string& baseline_name) {
  std::vector<std::vector<std::string>> body;
  for (const auto& r : rows) body.push_back({r.stage, r.searched, r.baseline, r.differs ? "*" : ""});
  return "kernel/blocks/filters per stage; * marks a difference\n" +
         render_table({"stage", searched_name, baseline_name, "diff"}, body);
}

void write_pgm(const fs::path& path, const Map2D& values, Grid grid, double lo, double hi) {
  if (values.size() != grid.tiles()) throw LengthMismatch("heatmap values do not match the grid");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << grid.w << " " << grid.h << "\n255\n";
  const double span = hi > lo ? hi - lo : 1.0;
  std::vector<unsigned char> row(static_cast<std::size_t>(grid.w));
  for (int j = 0; j < grid.h; ++j) {
    for (int i = 0; i < grid.w; ++i) {
      const double v = std::clamp((values[grid.index(i, j)] - lo) / span, 0.0, 1.0);
      row[static_cast<std::size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

std::string render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows)
    for (std::size_t c = 0; c < r.size() && c < width.size(); ++c) width[c] = std::max(width[c], r[c].size());
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      if (c) out << "  ";
      if (c == 0)
        out << cell << std::string(width[c] - cell.size(), ' ');
      else
        out << std::string(width[c] - cell.size(), ' ') << cell;
    }
    out << "\n";
  };
  line(header);
  std::size_t total = 0;
  for (auto w : width) total += w;
  out << std::string(total + 2 * (width.size() - 1), '-') << "\n";
  for (const auto& r : rows) line(r);
  return out.str();
}

std::string render_csv(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
  std::ostringstream out;
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out << ",";
      const std::string& cell = cells[c];
      if (cell.find_first_of(",\"\n") == std::string::npos) {
        out << cell;
        continue;
      }
      out << '"';
      for (char ch : cell) out << (ch == '"' ? "\"\"" : std::string(1, ch));
      out << '"';
    }
    out << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  return out.str();
}

namespace {

void render_search(const nlohmann::json& search, ReportFiles& files, const fs::path& out_dir, std::ostringstream& text) {
  const std::string metric = search.value("metric", "objective");
  text << "== Search (" << search.value("task", "?") << ", metric " << metric << ") ==\n";
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : search.at("history"))
    rows.push_back({std::to_string(r.at("generation").get<int>()), fixed(r.at("best_objectives").at(0).get<double>()),
                    fixed(r.at("mean_objectives").at(0).get<double>()), fixed(r.at("best_so_far").get<double>()),
                    r.at("best_genome").get<std::string>(), std::to_string(r.at("evaluations").get<int>())});
  const std::vector<std::string> header = {"generation", "best", "mean", "best_so_far", "best_genome", "evaluations"};
  text << render_table(header, rows) << "\n";
  write_text(out_dir / "search_history.csv", render_csv(header, rows), files);

  std::vector<std::vector<std::string>> top;
  int rank = 1;
  for (const auto& t : search.at("top5"))
    top.push_back({std::to_string(rank++), t.at("genome").get<std::string>(), fixed(t.at("objectives").at(0).get<double>())});
  text << "Top genomes\n" << render_table({"rank", "genome", metric}, top);
  if (search.contains("random_baseline"))
    text << "Random-genome baseline mean " << metric << ": " << fixed(search.at("random_baseline").at("mean").get<double>())
         << "\n";
  text << "\n";
}

void render_crossval(const nlohmann::json& cv, ReportFiles& files, const fs::path& out_dir, std::ostringstream& text,
                     bool heatmaps) {
  const std::string task = cv.value("task", "netcount");
  const std::string metric = cv.value("metric", "metric");
  const auto& models = cv.at("models");
  const int folds = cv.at("folds").get<int>();

  text << "== Cross-validation (" << metric << ", " << folds << " design-wise folds, disjoint: "
       << (cv.value("design_disjoint", false) ? "yes" : "NO") << ") ==\n";
  std::vector<std::string> header = {"fold"};
  for (const auto& m : models) header.push_back(m.at("name").get<std::string>());
  std::vector<std::vector<std::string>> rows;
  for (int f = 0; f < folds; ++f) {
    std::vector<std::string> r = {std::to_string(f + 1)};
    for (const auto& m : models) r.push_back(fixed(m.at("fold_metrics").at(static_cast<std::size_t>(f)).get<double>()));
    rows.push_back(r);
  }
  std::vector<std::string> mean = {"mean"};
  for (const auto& m : models) mean.push_back(fixed(m.at("mean").get<double>()));
  rows.push_back(mean);
  text << render_table(header, rows) << "\n";
  write_text(out_dir / "crossval.csv", render_csv(header, rows), files);

  // Per-design table: union of designs over models, average row last.
  std::map<std::string, std::vector<nlohmann::json>> by_design;
  for (std::size_t mi = 0; mi < models.size(); ++mi)
    for (const auto& r : models[mi].at("per_design").at("rows")) {
      auto& cells = by_design[r.at("design").get<std::string>()];
      cells.resize(models.size());
      cells[mi] = r;
    }
  std::vector<std::string> dh = {"design"};
  std::vector<std::vector<std::string>> drows;
  if (task == "netcount") {
    dh.push_back("layouts");
    for (const auto& m : models) dh.push_back("rank_of_best(" + m.at("name").get<std::string>() + ")");
    std::vector<double> sums(models.size(), 0.0);
    int n_layouts = 0;
    for (const auto& [design, cells] : by_design) {
      std::vector<std::string> r = {design};
      int layouts = 0;
      for (const auto& c : cells)
        if (c.is_object()) layouts = c.at("layouts").get<int>();
      n_layouts += layouts;
      r.push_back(std::to_string(layouts));
      for (std::size_t mi = 0; mi < cells.size(); ++mi) {
        r.push_back(cells[mi].is_object() ? std::to_string(cells[mi].at("rank_of_best").get<int>()) : "-");
        if (cells[mi].is_object()) sums[mi] += cells[mi].at("rank_of_best").get<int>();
      }
      drows.push_back(r);
    }
    std::vector<std::string> avg = {"Avg", std::to_string(n_layouts)};
    for (double s : sums) avg.push_back(fixed(s / std::max<std::size_t>(1, by_design.size()), 2));
    drows.push_back(avg);
    text << "Rank of the best layout in prediction (1 = best layout predicted first)\n";
  } else {
    for (const auto& m : models) {
      const std::string n = m.at("name").get<std::string>();
      dh.push_back("TPR@10%FPR(" + n + ")");
      dh.push_back("AUC(" + n + ")");
    }
    std::vector<double> tpr_sum(models.size(), 0.0), auc_sum(models.size(), 0.0);
    std::vector<int> tpr_n(models.size(), 0), auc_n(models.size(), 0);
    for (const auto& [design, cells] : by_design) {
      std::vector<std::string> r = {design};
      for (std::size_t mi = 0; mi < cells.size(); ++mi) {
        const nlohmann::json tpr = cells[mi].is_object() ? cells[mi].at("tpr_at_10_fpr") : nlohmann::json();
        const nlohmann::json auc = cells[mi].is_object() ? cells[mi].at("auc") : nlohmann::json();
        r.push_back(num_or_dash(tpr));
        r.push_back(num_or_dash(auc));
        if (tpr.is_number()) tpr_sum[mi] += tpr.get<double>(), ++tpr_n[mi];
        if (auc.is_number()) auc_sum[mi] += auc.get<double>(), ++auc_n[mi];
      }
      drows.push_back(r);
    }
    std::vector<std::string> avg = {"Avg"};
    for (std::size_t mi = 0; mi < models.size(); ++mi) {
      avg.push_back(tpr_n[mi] ? fixed(tpr_sum[mi] / tpr_n[mi]) : "-");
      avg.push_back(auc_n[mi] ? fixed(auc_sum[mi] / auc_n[mi]) : "-");
    }
    drows.push_back(avg);
    text << "Hotspot detection accuracy per design\n";
  }
  text << render_table(dh, drows) << "\n";
  write_text(out_dir / "per_design.csv", render_csv(dh, drows), files);

  if (!heatmaps || task != "hotspot") return;
  const fs::path hdir = out_dir / "heatmaps";
  fs::create_directories(hdir);
  for (const auto& m : models) {
    if (!m.contains("heatmaps")) continue;
    const std::string name = m.at("name").get<std::string>();
    for (const auto& h : m.at("heatmaps")) {
      const Grid g{h.at("grid").at("w").get<int>(), h.at("grid").at("h").get<int>()};
      const std::string id = h.at("layout_id").get<std::string>();
      const Map2D pred = h.at("predicted").get<std::vector<double>>();
      const auto label = decode_rle(h.at("label_rle").get<std::vector<std::int64_t>>(), g.tiles());
      const Map2D lab(label.begin(), label.end());
      const fs::path p1 = hdir / (id + "_" + name + "_pred.pgm");
      const fs::path p2 = hdir / (id + "_label.pgm");
      write_pgm(p1, pred, g);
      write_pgm(p2, lab, g);
      files.written.push_back(p1);
      if (std::find(files.written.begin(), files.written.end(), p2) == files.written.end()) files.written.push_back(p2);
    }
  }
}

}  // namespace

ReportFiles render_report(const fs::path& artifacts_dir, const fs::path& out_dir, bool heatmaps) {
  const fs::path search_path = artifacts_dir / "search.json";
  const fs::path cv_path = artifacts_dir / "crossval.json";
  const bool has_search = fs::exists(search_path), has_cv = fs::exists(cv_path);
  if (!has_search && !has_cv) throw IoError("no search.json or crossval.json in " + artifacts_dir.string());
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());

  ReportFiles files;
  std::ostringstream text;
  nlohmann::json search, cv;
  if (has_search) {
    search = read_json(search_path);
    render_search(search, files, out_dir, text);
  }
  if (has_cv) {
    cv = read_json(cv_path);
    render_crossval(cv, files, out_dir, text, heatmaps);
  }

  // Architecture comparison: searched model against the hand-designed baseline.
  const std::string task_name = has_search ? search.value("task", "netcount") : cv.value("task", "netcount");
  const Task task = task_from_string(task_name);
  std::optional<ArchitectureSpec> searched;
  ArchitectureSpec baseline = resnet18_spec(task);
  std::string searched_name = "searched", baseline_name = "resnet18";
  if (has_cv)
    for (const auto& m : cv.at("models")) {
      const auto spec = spec_from_json(m.at("architecture"));
      if (m.at("genome").is_string() && !searched) {
        searched = spec;
        searched_name = m.at("name").get<std::string>();
      } else if (m.at("genome").is_null()) {
        baseline = spec;
        baseline_name = m.at("name").get<std::string>();
      }
    }
  if (!searched && has_search) searched = spec_from_json(search.at("best_architecture"));
  if (searched) {
    const std::string diff = render_architecture_diff(architecture_diff(*searched, baseline), searched_name, baseline_name);
    text << "== Architecture ==\n" << diff;
    write_text(out_dir / "architecture_diff.txt", diff, files);
  }
  files.summary = text.str();
  write_text(out_dir / "report.txt", files.summary, files);
  return files;
}

}  // namespace routenas
