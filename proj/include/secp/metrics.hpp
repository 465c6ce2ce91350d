#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "secp/tensor.hpp"

namespace secp {

/// Overlap score for one organ label. `defined` is false when the organ is
/// absent from both prediction and ground truth; such scores are excluded
/// from aggregation rather than counted as perfect.
struct OrganScore {
  int organ = 0;
  double dice = 0;
  double jaccard = 0;
  bool defined = false;
};

/// Accumulates TP/FP/FN pixel counts per organ over a fold's test set
/// (micro-averaged within the fold).
class OverlapTally {
 public:
  OverlapTally();

  void add(const Mask& pred, const Mask& gt);
  OrganScore score(int organ) const;
  std::vector<OrganScore> scores() const;  // organs 1..13

 private:
  struct Counts {
    std::uint64_t tp = 0, fp = 0, fn = 0;
  };
  std::vector<Counts> counts_;
};

/// 2|A∩B| / (|A|+|B|) over pixels of class `organ`; nullopt when the organ is
/// absent from both masks.
std::optional<double> dice(const Mask& pred, const Mask& gt, int organ);

/// |A∩B| / |A∪B|, same emptiness rule.
std::optional<double> jaccard(const Mask& pred, const Mask& gt, int organ);

/// Per-fold scores for the 13 organs.
struct FoldScores {
  std::vector<OrganScore> organs;
};

/// Mean and sample standard deviation (n-1) across folds, in percent.
/// `folds` counts the folds where the organ was defined.
struct OrganStats {
  std::string organ;
  double dice_mean = 0, dice_std = 0;
  double jac_mean = 0, jac_std = 0;
  int folds = 0;
};

struct MetricsReport {
  std::vector<OrganStats> organs;  // 13 rows, label order
  OrganStats ave;                  // unweighted mean over the organ rows
};

MetricsReport aggregate_folds(const std::vector<FoldScores>& per_fold);

enum class TableFormat { Csv, Json, Text };

std::string emit_table(const MetricsReport& report, TableFormat format);

/// Tables with one column per run (e.g. the six ablation variants), rows for
/// each organ plus Ave; `use_dice` false emits the Jaccard table.
std::string emit_comparison_table(const std::vector<std::pair<std::string, MetricsReport>>& runs,
                                  bool use_dice, TableFormat format);

/// Fixed two-decimal JSON of one fold's organ scores; used both by training
/// validation output and `eval` so the two reproduce each other bitwise.
std::string fold_scores_json(const FoldScores& scores, int fold);

}  // namespace secp
