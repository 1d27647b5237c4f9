#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <span>
#include <vector>

#include "stabsel/error.hpp"

namespace stabsel {

/// Closed real interval [lo, hi]; endpoints may be infinite.
struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double length() const { return hi - lo; }
  bool contains(double y) const { return lo <= y && y <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// A finite union of closed intervals over the real line.
///
/// Intervals are kept sorted by lower endpoint and pairwise disjoint;
/// overlapping or touching pieces are merged on construction. Degenerate
/// intervals [y, y] (isolated points) are kept and have measure zero.
class PredictionSet {
 public:
  PredictionSet() = default;

  explicit PredictionSet(std::vector<Interval> pieces) {
    for (const auto& iv : pieces) {
      detail::require(!std::isnan(iv.lo) && !std::isnan(iv.hi), "interval endpoint is NaN");
      detail::require(iv.lo <= iv.hi, "interval has lo > hi");
    }
    std::sort(pieces.begin(), pieces.end(),
              [](const Interval& a, const Interval& b) { return a.lo < b.lo || (a.lo == b.lo && a.hi < b.hi); });
    for (const auto& iv : pieces) {
      if (!intervals_.empty() && iv.lo <= intervals_.back().hi) {
        intervals_.back().hi = std::max(intervals_.back().hi, iv.hi);
      } else {
        intervals_.push_back(iv);
      }
    }
  }

  static PredictionSet empty() { return {}; }
  static PredictionSet interval(double lo, double hi) { return PredictionSet({Interval{lo, hi}}); }
  static PredictionSet real_line() {
    constexpr double inf = std::numeric_limits<double>::infinity();
    return interval(-inf, inf);
  }

  std::span<const Interval> intervals() const { return intervals_; }
  bool is_empty() const { return intervals_.empty(); }

  /// Lebesgue measure: the exact sum of interval lengths (may be +inf).
  double measure() const {
    double total = 0.0;
    for (const auto& iv : intervals_) total += iv.length();
    return total;
  }

  bool is_bounded() const { return std::isfinite(measure()) || intervals_.empty(); }

  bool contains(double y) const {
    auto it = std::upper_bound(intervals_.begin(), intervals_.end(), y,
                               [](double v, const Interval& iv) { return v < iv.lo; });
    if (it == intervals_.begin()) return false;
    return std::prev(it)->contains(y);
  }

  /// True when every point of *this lies in `other`.
  bool subset_of(const PredictionSet& other) const {
    for (const auto& iv : intervals_) {
      bool covered = false;
      for (const auto& ov : other.intervals_) {
        if (ov.lo <= iv.lo && iv.hi <= ov.hi) {
          covered = true;
          break;
        }
      }
      if (!covered) return false;
    }
    return true;
  }

  friend bool operator==(const PredictionSet&, const PredictionSet&) = default;

  friend std::ostream& operator<<(std::ostream& os, const PredictionSet& s) {
    if (s.intervals_.empty()) return os << "{}";
    for (std::size_t i = 0; i < s.intervals_.size(); ++i) {
      if (i) os << " U ";
      os << '[' << s.intervals_[i].lo << ", " << s.intervals_[i].hi << ']';
    }
    return os;
  }

 private:
  std::vector<Interval> intervals_;
};

/// Weighted-majority set { y : sum_i weights_i * 1{y in sets_i} >= 1/2 }.
///
/// The membership weight is piecewise constant between the sorted endpoints
/// of all input intervals, so it is evaluated exactly at every endpoint and on
/// every open gap between consecutive endpoints. Closed inputs guarantee the
/// weight at an endpoint is at least the weight on an adjacent gap, hence the
/// result is again a union of closed intervals. A slack of 1e-12 on the 1/2
/// threshold absorbs rounding in weights that sum to exactly one half.
inline PredictionSet weighted_majority(std::span<const double> weights, std::span<const PredictionSet> sets) {
  detail::require(weights.size() == sets.size(), "weights and sets differ in length");
  constexpr double kThreshold = 0.5 - 1e-12;

  std::vector<double> points;
  for (const auto& s : sets) {
    for (const auto& iv : s.intervals()) {
      points.push_back(iv.lo);
      points.push_back(iv.hi);
    }
  }
  std::sort(points.begin(), points.end());
  points.erase(std::unique(points.begin(), points.end()), points.end());
  if (points.empty()) return PredictionSet::empty();

  auto weight_at = [&](double y) {
    double w = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (weights[i] > 0.0 && sets[i].contains(y)) w += weights[i];
    }
    return w;
  };
  // No endpoint lies strictly inside (a, b), so a set covers the open gap
  // iff one of its intervals contains [a, b].
  auto gap_weight = [&](double a, double b) {
    double w = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      for (const auto& iv : sets[i].intervals()) {
        if (iv.lo <= a && b <= iv.hi) {
          w += weights[i];
          break;
        }
      }
    }
    return w;
  };

  std::vector<Interval> out;
  auto add = [&](double lo, double hi) {
    if (!out.empty() && lo <= out.back().hi) {
      out.back().hi = std::max(out.back().hi, hi);
    } else {
      out.push_back({lo, hi});
    }
  };
  for (std::size_t k = 0; k < points.size(); ++k) {
    const double x = points[k];
    if (std::isfinite(x) && weight_at(x) >= kThreshold) add(x, x);
    if (k + 1 < points.size() && gap_weight(x, points[k + 1]) >= kThreshold) add(x, points[k + 1]);
  }
  return PredictionSet(std::move(out));
}

}  // namespace stabsel
