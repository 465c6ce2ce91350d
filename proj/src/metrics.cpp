#include "secp/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "secp/data.hpp"

namespace secp {

namespace {

std::string fmt2(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

OrganScore score_from_counts(int organ, std::uint64_t tp, std::uint64_t fp, std::uint64_t fn) {
  OrganScore s;
  s.organ = organ;
  if (tp + fp + fn == 0) return s;  // absent from both sets
  s.defined = true;
  s.dice = 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
  s.jaccard = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
  return s;
}

}  // namespace

OverlapTally::OverlapTally() : counts_(kNumLabels) {}

void OverlapTally::add(const Mask& pred, const Mask& gt) {
  if (pred.shape != gt.shape) {
    throw UsageError("overlap tally: mask shapes differ, " + shape_str(pred.shape) + " vs " +
                     shape_str(gt.shape));
  }
  for (std::size_t i = 0; i < pred.v.size(); ++i) {
    const std::uint8_t p = pred.v[i];
    const std::uint8_t g = gt.v[i];
    if (p == g) {
      ++counts_[p].tp;
    } else {
      ++counts_[p].fp;
      ++counts_[g].fn;
    }
  }
}

OrganScore OverlapTally::score(int organ) const {
  if (organ < 1 || organ >= kNumLabels) throw UsageError("organ index must be 1..13");
  const Counts& c = counts_[static_cast<std::size_t>(organ)];
  return score_from_counts(organ, c.tp, c.fp, c.fn);
}

std::vector<OrganScore> OverlapTally::scores() const {
  std::vector<OrganScore> out;
  for (int organ = 1; organ < kNumLabels; ++organ) out.push_back(score(organ));
  return out;
}

std::optional<double> dice(const Mask& pred, const Mask& gt, int organ) {
  OverlapTally tally;
  tally.add(pred, gt);
  const OrganScore s = tally.score(organ);
  if (!s.defined) return std::nullopt;
  return s.dice;
}

std::optional<double> jaccard(const Mask& pred, const Mask& gt, int organ) {
  OverlapTally tally;
  tally.add(pred, gt);
  const OrganScore s = tally.score(organ);
  if (!s.defined) return std::nullopt;
  return s.jaccard;
}

MetricsReport aggregate_folds(const std::vector<FoldScores>& per_fold) {
  if (per_fold.size() < 2) throw UsageError("aggregate_folds needs at least 2 folds");
  for (const FoldScores& f : per_fold) {
    if (f.organs.size() != kNumLabels - 1) {
      throw UsageError("fold scores must cover the 13 organs");
    }
  }

  MetricsReport report;
  auto mean_std = [](const std::vector<double>& xs) {
    double mean = 0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0;
    if (xs.size() > 1) {
      for (double x : xs) var += (x - mean) * (x - mean);
      var /= static_cast<double>(xs.size() - 1);
    }
    return std::pair<double, double>(mean, std::sqrt(var));
  };

  for (int organ = 1; organ < kNumLabels; ++organ) {
    std::vector<double> dices, jacs;
    for (const FoldScores& f : per_fold) {
      const OrganScore& s = f.organs[static_cast<std::size_t>(organ - 1)];
      if (!s.defined) continue;
      dices.push_back(100.0 * s.dice);
      jacs.push_back(100.0 * s.jaccard);
    }
    OrganStats stats;
    stats.organ = label_names()[static_cast<std::size_t>(organ)];
    stats.folds = static_cast<int>(dices.size());
    if (!dices.empty()) {
      std::tie(stats.dice_mean, stats.dice_std) = mean_std(dices);
      std::tie(stats.jac_mean, stats.jac_std) = mean_std(jacs);
    }
    report.organs.push_back(stats);
  }

  report.ave.organ = "Ave";
  int defined_rows = 0;
  for (const OrganStats& s : report.organs) {
    if (s.folds == 0) continue;
    report.ave.dice_mean += s.dice_mean;
    report.ave.dice_std += s.dice_std;
    report.ave.jac_mean += s.jac_mean;
    report.ave.jac_std += s.jac_std;
    ++defined_rows;
  }
  if (defined_rows > 0) {
    report.ave.dice_mean /= defined_rows;
    report.ave.dice_std /= defined_rows;
    report.ave.jac_mean /= defined_rows;
    report.ave.jac_std /= defined_rows;
  }
  report.ave.folds = defined_rows;
  return report;
}

std::string emit_table(const MetricsReport& report, TableFormat format) {
  switch (format) {
    case TableFormat::Csv: {
      std::ostringstream os;
      os << "organ,dice_mean,dice_std,jac_mean,jac_std\n";
      auto row = [&](const OrganStats& s) {
        os << s.organ << "," << fmt2(s.dice_mean) << "," << fmt2(s.dice_std) << ","
           << fmt2(s.jac_mean) << "," << fmt2(s.jac_std) << "\n";
      };
      for (const OrganStats& s : report.organs) row(s);
      row(report.ave);
      return os.str();
    }
    case TableFormat::Json: {
      nlohmann::json j;
      auto row = [](const OrganStats& s) {
        return nlohmann::json{{"organ", s.organ},
                              {"dice_mean", s.dice_mean},
                              {"dice_std", s.dice_std},
                              {"jac_mean", s.jac_mean},
                              {"jac_std", s.jac_std},
                              {"folds", s.folds}};
      };
      j["organs"] = nlohmann::json::array();
      for (const OrganStats& s : report.organs) j["organs"].push_back(row(s));
      j["ave"] = row(report.ave);
      return j.dump(2) + "\n";
    }
    case TableFormat::Text: {
      std::ostringstream os;
      os << "organ                 dice                 jac\n";
      auto row = [&](const OrganStats& s) {
        char line[128];
        if (s.folds == 0) {
          std::snprintf(line, sizeof line, "%-18s %20s %19s\n", s.organ.c_str(), "n/a", "n/a");
        } else {
          std::snprintf(line, sizeof line, "%-18s %9s\xc2\xb1%-9s %9s\xc2\xb1%-9s\n",
                        s.organ.c_str(), fmt2(s.dice_mean).c_str(), fmt2(s.dice_std).c_str(),
                        fmt2(s.jac_mean).c_str(), fmt2(s.jac_std).c_str());
        }
        os << line;
      };
      for (const OrganStats& s : report.organs) row(s);
      row(report.ave);
      return os.str();
    }
  }
  throw InternalError("unknown table format");
}

std::string emit_comparison_table(const std::vector<std::pair<std::string, MetricsReport>>& runs,
                                  bool use_dice, TableFormat format) {
  if (runs.empty()) throw UsageError("comparison table needs at least one run");
  auto cell = [&](const MetricsReport& r, int row) -> const OrganStats& {
    return row < kNumLabels - 1 ? r.organs[static_cast<std::size_t>(row)] : r.ave;
  };
  auto value = [&](const OrganStats& s) { return use_dice ? s.dice_mean : s.jac_mean; };
  auto spread = [&](const OrganStats& s) { return use_dice ? s.dice_std : s.jac_std; };

  if (format == TableFormat::Csv) {
    std::ostringstream os;
    os << "organ";
    for (const auto& [name, _] : runs) os << "," << name << "_mean," << name << "_std";
    os << "\n";
    for (int row = 0; row < kNumLabels; ++row) {
      os << cell(runs[0].second, row).organ;
      for (const auto& [_, r] : runs) {
        const OrganStats& s = cell(r, row);
        os << "," << fmt2(value(s)) << "," << fmt2(spread(s));
      }
      os << "\n";
    }
    return os.str();
  }
  if (format == TableFormat::Json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& [name, r] : runs) {
      nlohmann::json run{{"name", name}, {"rows", nlohmann::json::array()}};
      for (int row = 0; row < kNumLabels; ++row) {
        const OrganStats& s = cell(r, row);
        run["rows"].push_back(
            {{"organ", s.organ}, {"mean", value(s)}, {"std", spread(s)}, {"folds", s.folds}});
      }
      j.push_back(std::move(run));
    }
    return j.dump(2) + "\n";
  }

  std::ostringstream os;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-18s", use_dice ? "organ (dice %)" : "organ (jac %)");
  os << buf;
  for (const auto& [name, _] : runs) {
    std::snprintf(buf, sizeof buf, " %22s", name.c_str());
    os << buf;
  }
  os << "\n";
  for (int row = 0; row < kNumLabels; ++row) {
    std::snprintf(buf, sizeof buf, "%-18s", cell(runs[0].second, row).organ.c_str());
    os << buf;
    for (const auto& [_, r] : runs) {
      const OrganStats& s = cell(r, row);
      if (s.folds == 0) {
        std::snprintf(buf, sizeof buf, " %22s", "n/a");
      } else {
        const std::string v = fmt2(value(s)) + "\xc2\xb1" + fmt2(spread(s));
        std::snprintf(buf, sizeof buf, " %23s", v.c_str());  // +1 for the 2-byte sign
      }
      os << buf;
    }
    os << "\n";
  }
  return os.str();
}

std::string fold_scores_json(const FoldScores& scores, int fold) {
  nlohmann::json j;
  j["fold"] = fold;
  j["organs"] = nlohmann::json::array();
  for (const OrganScore& s : scores.organs) {
    nlohmann::json row{{"organ", label_names()[static_cast<std::size_t>(s.organ)]},
                       {"defined", s.defined}};
    if (s.defined) {
      row["dice"] = s.dice;
      row["jaccard"] = s.jaccard;
    }
    j["organs"].push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

}  // namespace secp
