#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "routenas/errors.hpp"
#include "routenas/random.hpp"

namespace routenas {

struct EvalPair {
  double prediction = 0.0;
  double label = 0.0;
  std::string design;
  std::string layout_id;
};

/// Tie-corrected Kendall tau-b. Throws DegenerateInput when every prediction or every label is tied.
double kendall_tau(std::span<const EvalPair> pairs);
double kendall_tau(std::span<const double> predictions, std::span<const double> labels);

/// Mann-Whitney estimate of P(score_pos > score_neg) + 0.5 P(tie).
double roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

/// Largest TPR over score thresholds (predict positive when score >= threshold) whose FPR <= fpr_cap.
double tpr_at_fpr(std::span<const double> scores, std::span<const std::uint8_t> labels, double fpr_cap = 0.10);

struct RankOfBest {
  std::map<std::string, int> per_design;
  double mean = 0.0;
};

/// 1-based position of the best layout (minimum label) when each design's layouts are sorted by ascending
/// prediction. Prediction ties count against the layout; label ties take the best of the tied layouts.
RankOfBest rank_of_best(std::span<const EvalPair> pairs);

struct FoldPlan {
  int folds = 0;
  std::vector<std::vector<std::string>> fold_designs;
  std::vector<int> sample_fold;  // fold index of every sample

  std::vector<std::size_t> train_indices(int fold) const;
  std::vector<std::size_t> validation_indices(int fold) const;
};

/// Assigns whole designs to folds after a seeded shuffle of the sorted design names.
FoldPlan make_design_folds(std::span<const std::string> sample_designs, int folds, std::uint64_t seed);

struct CrossValResult {
  FoldPlan plan;
  std::vector<double> fold_metrics;
  double mean = 0.0;
};

/// Trains on all folds but one and scores the held-out fold, for every fold.
/// train(train_indices) -> model; score(model, validation_indices) -> metric.
template <typename Train, typename Score>
CrossValResult cross_validate(std::span<const std::string> sample_designs, int folds, std::uint64_t seed, Train&& train,
                              Score&& score) {
  CrossValResult out;
  out.plan = make_design_folds(sample_designs, folds, seed);
  for (int f = 0; f < folds; ++f) {
    const auto tr = out.plan.train_indices(f);
    const auto va = out.plan.validation_indices(f);
    auto model = train(tr);
    out.fold_metrics.push_back(score(model, va));
  }
  double sum = 0.0;
  for (double m : out.fold_metrics) sum += m;
  out.mean = sum / static_cast<double>(folds);
  return out;
}

}  // namespace routenas
