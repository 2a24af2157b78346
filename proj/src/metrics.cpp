#include "routenas/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace routenas {

namespace {

// Inversions (strictly greater earlier) of v, counted by merge sort; v ends sorted.
std::int64_t count_inversions(std::vector<double>& v, std::vector<double>& scratch, std::size_t lo, std::size_t hi) {
  if (hi - lo < 2) return 0;
  const std::size_t mid = lo + (hi - lo) / 2;
  std::int64_t inv = count_inversions(v, scratch, lo, mid) + count_inversions(v, scratch, mid, hi);
  std::size_t a = lo, b = mid, k = lo;
  while (a < mid && b < hi) {
    if (v[b] < v[a]) {
      inv += static_cast<std::int64_t>(mid - a);
      scratch[k++] = v[b++];
    } else {
      scratch[k++] = v[a++];
    }
  }
  while (a < mid) scratch[k++] = v[a++];
  while (b < hi) scratch[k++] = v[b++];
  std::copy(scratch.begin() + static_cast<std::ptrdiff_t>(lo), scratch.begin() + static_cast<std::ptrdiff_t>(hi),
            v.begin() + static_cast<std::ptrdiff_t>(lo));
  return inv;
}

std::int64_t tied_pairs_in_sorted(const std::vector<double>& v) {
  std::int64_t ties = 0;
  for (std::size_t s = 0; s < v.size();) {
    std::size_t e = s;
    while (e < v.size() && v[e] == v[s]) ++e;
    const auto t = static_cast<std::int64_t>(e - s);
    ties += t * (t - 1) / 2;
    s = e;
  }
  return ties;
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw DegenerateInput(std::string(what) + " contain non-finite values");
}

}  // namespace

double kendall_tau(std::span<const double> pred, std::span<const double> label) {
  const std::size_t n = pred.size();
  if (label.size() != n) throw DegenerateInput("prediction and label counts differ");
  if (n < 2) throw DegenerateInput("Kendall tau needs at least 2 pairs");
  check_finite(pred, "predictions");
  check_finite(label, "labels");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pred[a] != pred[b]) return pred[a] < pred[b];
    return label[a] < label[b];
  });

  const auto n0 = static_cast<std::int64_t>(n) * static_cast<std::int64_t>(n - 1) / 2;
  std::int64_t n1 = 0, n3 = 0;
  for (std::size_t s = 0; s < n;) {
    std::size_t e = s;
    while (e < n && pred[order[e]] == pred[order[s]]) ++e;
    const auto t = static_cast<std::int64_t>(e - s);
    n1 += t * (t - 1) / 2;
    for (std::size_t a = s; a < e;) {
      std::size_t b = a;
      while (b < e && label[order[b]] == label[order[a]]) ++b;
      const auto u = static_cast<std::int64_t>(b - a);
      n3 += u * (u - 1) / 2;
      a = b;
    }
    s = e;
  }

  std::vector<double> ys(n), scratch(n);
  for (std::size_t k = 0; k < n; ++k) ys[k] = label[order[k]];
  const std::int64_t swaps = count_inversions(ys, scratch, 0, n);
  const std::int64_t n2 = tied_pairs_in_sorted(ys);

  const std::int64_t concordant_minus_discordant = n0 - n1 - n2 + n3 - 2 * swaps;
  const std::int64_t dp = n0 - n1;  // pairs not tied in prediction
  const std::int64_t dl = n0 - n2;  // pairs not tied in label
  if (dp == 0 || dl == 0) throw DegenerateInput("Kendall tau is undefined when all predictions or all labels tie");
  return static_cast<double>(concordant_minus_discordant) /
         std::sqrt(static_cast<double>(dl) * static_cast<double>(dp));
}

double kendall_tau(std::span<const EvalPair> pairs) {
  std::vector<double> p, l;
  p.reserve(pairs.size());
  l.reserve(pairs.size());
  for (const auto& e : pairs) {
    p.push_back(e.prediction);
    l.push_back(e.label);
  }
  return kendall_tau(p, l);
}

namespace {

struct ClassCounts {
  std::int64_t pos = 0;
  std::int64_t neg = 0;
};

ClassCounts count_classes(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  if (scores.size() != labels.size()) throw SingleClass("score and label counts differ");
  ClassCounts c;
  for (auto l : labels) (l ? c.pos : c.neg)++;
  if (c.pos == 0 || c.neg == 0) throw SingleClass("both classes must be present");
  for (double s : scores)
    if (std::isnan(s)) throw DegenerateInput("scores contain NaN");
  return c;
}

std::vector<std::size_t> sorted_order(std::span<const double> scores, bool descending) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return descending ? scores[a] > scores[b] : scores[a] < scores[b];
  });
  return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  const auto counts = count_classes(scores, labels);
  const auto order = sorted_order(scores, false);
  // Twice the Mann-Whitney U: each (pos, neg) pair scores 2 if pos is higher, 1 if tied.
  std::int64_t twice_u = 0;
  std::int64_t neg_below = 0;
  for (std::size_t s = 0; s < order.size();) {
    std::size_t e = s;
    std::int64_t gp = 0, gn = 0;
    while (e < order.size() && scores[order[e]] == scores[order[s]]) {
      (labels[order[e]] ? gp : gn)++;
      ++e;
    }
    twice_u += 2 * gp * neg_below + gp * gn;
    neg_below += gn;
    s = e;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(counts.pos) * static_cast<double>(counts.neg));
}

double tpr_at_fpr(std::span<const double> scores, std::span<const std::uint8_t> labels, double fpr_cap) {
  const auto counts = count_classes(scores, labels);
  const auto order = sorted_order(scores, true);
  double best = 0.0;
  std::int64_t tp = 0, fp = 0;
  for (std::size_t s = 0; s < order.size();) {
    std::size_t e = s;
    while (e < order.size() && scores[order[e]] == scores[order[s]]) {
      (labels[order[e]] ? tp : fp)++;
      ++e;
    }
    const double fpr = static_cast<double>(fp) / static_cast<double>(counts.neg);
    if (fpr <= fpr_cap) best = std::max(best, static_cast<double>(tp) / static_cast<double>(counts.pos));
    s = e;
  }
  return best;
}

RankOfBest rank_of_best(std::span<const EvalPair> pairs) {
  std::map<std::string, std::vector<const EvalPair*>> by_design;
  for (const auto& p : pairs) by_design[p.design].push_back(&p);
  RankOfBest out;
  for (const auto& [design, items] : by_design) {
    double best_label = items.front()->label;
    for (const auto* p : items) best_label = std::min(best_label, p->label);
    std::vector<double> preds;
    preds.reserve(items.size());
    for (const auto* p : items) preds.push_back(p->prediction);
    std::sort(preds.begin(), preds.end());
    int rank = static_cast<int>(items.size());
    for (const auto* p : items) {
      if (p->label != best_label) continue;
      // Every layout predicted at or below this one is ranked ahead of it.
      const auto pos = std::upper_bound(preds.begin(), preds.end(), p->prediction) - preds.begin();
      rank = std::min(rank, static_cast<int>(pos));
    }
    out.per_design[design] = rank;
    out.mean += rank;
  }
  if (!by_design.empty()) out.mean /= static_cast<double>(by_design.size());
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < sample_fold.size(); ++k)
    if (sample_fold[k] != fold) out.push_back(k);
  return out;
}

std::vector<std::size_t> FoldPlan::validation_indices(int fold) const {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < sample_fold.size(); ++k)
    if (sample_fold[k] == fold) out.push_back(k);
  return out;
}

FoldPlan make_design_folds(std::span<const std::string> sample_designs, int folds, std::uint64_t seed) {
  if (folds < 2) throw ConfigError("cross-validation needs at least 2 folds");
  std::set<std::string> unique(sample_designs.begin(), sample_designs.end());
  if (unique.size() < static_cast<std::size_t>(folds))
    throw TooFewDesigns("need at least " + std::to_string(folds) + " designs, found " + std::to_string(unique.size()));
  std::vector<std::string> designs(unique.begin(), unique.end());
  Rng rng(seed);
  shuffle(designs.begin(), designs.end(), rng);

  FoldPlan plan;
  plan.folds = folds;
  plan.fold_designs.resize(static_cast<std::size_t>(folds));
  std::map<std::string, int> fold_of;
  for (std::size_t k = 0; k < designs.size(); ++k) {
    const int f = static_cast<int>(k % static_cast<std::size_t>(folds));
    fold_of[designs[k]] = f;
    plan.fold_designs[static_cast<std::size_t>(f)].push_back(designs[k]);
  }
  for (auto& fd : plan.fold_designs) std::sort(fd.begin(), fd.end());
  plan.sample_fold.reserve(sample_designs.size());
  for (const auto& d : sample_designs) plan.sample_fold.push_back(fold_of.at(d));
  return plan;
}

}  // namespace routenas
