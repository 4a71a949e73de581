// Block-level recognition metrics: confusion matrices split by
// (perceiver group, target group), Macro-F1, calibration error and the
// relative degradation table.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fersim/agents.hpp"
#include "fersim/errors.hpp"
#include "fersim/expression.hpp"

namespace fersim {

/// 7x7 counts, rows = true label, columns = predicted label.
class ConfusionMatrix {
 public:
  void add(Expression truth, Expression predicted, std::uint64_t n = 1) {
    counts_[index_of(truth)][index_of(predicted)] += n;
    total_ += n;
  }

  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth][predicted]; }
  std::uint64_t total() const noexcept { return total_; }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    for (std::size_t r = 0; r < kExpressionCount; ++r) {
      for (std::size_t c = 0; c < kExpressionCount; ++c) counts_[r][c] += o.counts_[r][c];
    }
    total_ += o.total_;
    return *this;
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::array<std::array<std::uint64_t, kExpressionCount>, kExpressionCount> counts_{};
  std::uint64_t total_ = 0;
};

/// Unweighted mean of per-class F1. Classes with neither true nor predicted
/// instances are left out; absent for an empty matrix.
inline std::optional<double> macro_f1(const ConfusionMatrix& cm) {
  if (cm.total() == 0) return std::nullopt;
  double sum = 0;
  int active = 0;
  for (std::size_t k = 0; k < kExpressionCount; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < kExpressionCount; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    if (row == 0 && col == 0) continue;
    ++active;
    const auto tp = static_cast<double>(cm.at(k, k));
    // F1 = 2tp / (2tp + fp + fn) = 2tp / (row + col); 0 when tp = 0.
    sum += 2.0 * tp / static_cast<double>(row + col);
  }
  return sum / active;
}

struct ConfidenceOutcome {
  double confidence = 0;
  bool correct = false;

  auto operator<=>(const ConfidenceOutcome&) const = default;
};

/// Equal-width-bin expected calibration error on [0, 1].
/// Inputs are sorted first so the result does not depend on their order.
inline std::optional<double> ece(std::span<const ConfidenceOutcome> outcomes, std::size_t n_bins = 10) {
  if (n_bins == 0) throw ContractError("ece needs at least one bin");
  if (outcomes.empty()) return std::nullopt;
  std::vector<ConfidenceOutcome> sorted(outcomes.begin(), outcomes.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> conf_sum(n_bins, 0.0);
  std::vector<std::size_t> hits(n_bins, 0), count(n_bins, 0);
  for (const auto& o : sorted) {
    auto b = static_cast<std::size_t>(o.confidence * static_cast<double>(n_bins));
    b = std::min(b, n_bins - 1);
    conf_sum[b] += o.confidence;
    hits[b] += o.correct ? 1 : 0;
    ++count[b];
  }
  const auto n = static_cast<double>(sorted.size());
  double total = 0;
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (count[b] == 0) continue;
    const auto c = static_cast<double>(count[b]);
    total += (c / n) * std::abs(static_cast<double>(hits[b]) / c - conf_sum[b] / c);
  }
  return total;
}

inline std::optional<double> mean_confidence(std::span<const ConfidenceOutcome> outcomes) {
  if (outcomes.empty()) return std::nullopt;
  std::vector<double> c;
  c.reserve(outcomes.size());
  for (const auto& o : outcomes) c.push_back(o.confidence);
  std::sort(c.begin(), c.end());
  double s = 0;
  for (double v : c) s += v;
  return s / static_cast<double>(c.size());
}

struct ViewSummary {
  std::string view;  // intra | cross | global | pair:<g1>-><g2>
  std::uint64_t n_events = 0;
  std::optional<double> macro_f1;
  std::optional<double> mean_confidence;
  std::optional<double> ece;
};

/// Accumulates the perception events of one reporting window.
class BlockMetrics {
 public:
  using GroupPair = std::pair<std::size_t, std::size_t>;  // (perceiver, target)

  BlockMetrics(int block, int sigma, int start, int end) : block_(block), sigma_(sigma), start_(start), end_(end) {}

  int block() const noexcept { return block_; }
  int sigma() const noexcept { return sigma_; }
  int start() const noexcept { return start_; }
  int end() const noexcept { return end_; }

  void accumulate(const PerceptionEvent& e) {
    if (e.tick < start_ || e.tick >= end_) {
      throw ContractError("event at tick " + std::to_string(e.tick) + " does not belong to block " +
                          std::to_string(block_));
    }
    auto& pair = pairs_[{e.perceiver_group, e.target_group}];
    pair.confusion.add(e.truth, e.predicted);
    pair.outcomes.push_back({e.confidence, e.correct()});
  }

  std::vector<GroupPair> pairs() const {
    std::vector<GroupPair> out;
    for (const auto& [k, v] : pairs_) out.push_back(k);
    return out;
  }

  ConfusionMatrix confusion(GroupPair pair) const {
    auto it = pairs_.find(pair);
    return it == pairs_.end() ? ConfusionMatrix{} : it->second.confusion;
  }

  ConfusionMatrix intra() const {
    return merged([](const GroupPair& p) { return p.first == p.second; }).confusion;
  }
  ConfusionMatrix cross() const {
    return merged([](const GroupPair& p) { return p.first != p.second; }).confusion;
  }
  ConfusionMatrix global() const {
    return merged([](const GroupPair&) { return true; }).confusion;
  }

  /// Views in fixed order: intra, cross, global, then every observed pair.
  std::vector<ViewSummary> summarize(const std::vector<std::string>& group_names, std::size_t ece_bins = 10) const {
    std::vector<ViewSummary> out;
    out.push_back(summary("intra", merged([](const GroupPair& p) { return p.first == p.second; }), ece_bins));
    out.push_back(summary("cross", merged([](const GroupPair& p) { return p.first != p.second; }), ece_bins));
    out.push_back(summary("global", merged([](const GroupPair&) { return true; }), ece_bins));
    for (const auto& [key, acc] : pairs_) {
      const std::string view = "pair:" + group_names.at(key.first) + "->" + group_names.at(key.second);
      out.push_back(summary(view, acc, ece_bins));
    }
    return out;
  }

 private:
  struct Accumulator {
    ConfusionMatrix confusion;
    std::vector<ConfidenceOutcome> outcomes;
  };

  template <class Pred>
  Accumulator merged(Pred keep) const {
    Accumulator acc;
    for (const auto& [key, a] : pairs_) {
      if (!keep(key)) continue;
      acc.confusion += a.confusion;
      acc.outcomes.insert(acc.outcomes.end(), a.outcomes.begin(), a.outcomes.end());
    }
    return acc;
  }

  static ViewSummary summary(std::string view, const Accumulator& acc, std::size_t ece_bins) {
    return {std::move(view), acc.confusion.total(), macro_f1(acc.confusion), mean_confidence(acc.outcomes),
            ece(acc.outcomes, ece_bins)};
  }

  int block_;
  int sigma_;
  int start_;
  int end_;
  std::map<GroupPair, Accumulator> pairs_;
};

enum class DeltaForm { kRelative, kAbsolute };

struct DegradationRow {
  int sigma = 0;
  double delta = 0;
};

/// Degradation of each evaluation block against the sigma-0 block:
/// relative (F1_0 - F1_s) / F1_0, or absolute F1_0 - F1_s.
inline std::vector<DegradationRow> degradation_table(std::span<const std::pair<int, std::optional<double>>> f1_by_sigma,
                                                     DeltaForm form = DeltaForm::kRelative) {
  std::optional<double> base;
  bool has_base = false;
  for (const auto& [sigma, f1] : f1_by_sigma) {
    if (sigma == 0) {
      base = f1;
      has_base = true;
    }
  }
  if (!has_base) throw ContractError("degradation table needs a sigma-0 evaluation block");
  if (!base || *base <= 0) throw DegenerateBaselineError("sigma-0 Macro-F1 is zero or undefined");
  std::vector<DegradationRow> rows;
  for (const auto& [sigma, f1] : f1_by_sigma) {
    if (!f1) throw DegenerateBaselineError("Macro-F1 undefined at sigma " + std::to_string(sigma));
    double d = *base - *f1;
    if (form == DeltaForm::kRelative) d /= *base;
    if (sigma == 0) d = 0.0;
    rows.push_back({sigma, d});
  }
  return rows;
}

}  // namespace fersim
