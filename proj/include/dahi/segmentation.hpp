#pragma once

#include "dahi/signal.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace dahi {

struct StageSegmentation {
    Domain domain = Domain::Target;
    std::vector<std::size_t> boundaries; // 0 = tau_0 < ... < tau_M = N
    double total_cost = 0.0;
    /// Cost plus penalty for penalized selection; equals total_cost otherwise.
    double objective = 0.0;

    std::size_t stages() const { return boundaries.empty() ? 0 : boundaries.size() - 1; }
    std::size_t windows() const { return boundaries.empty() ? 0 : boundaries.back(); }
    void validate() const;
};

struct PenaltyConfig {
    double c1 = 10.0;
    double c2 = 10.0;
    std::size_t max_stages = 10;

    void validate() const;
};

/// Within-segment kernel cost with O(1) queries after O(N^2) prefix sums.
class KernelCost {
public:
    explicit KernelCost(const Matrix& k);

    std::size_t size() const { return n_; }
    /// J(a, b) over 1-based inclusive window indices.
    double operator()(std::size_t a, std::size_t b) const;

private:
    std::size_t n_;
    std::vector<double> diag_;  // diag_[i] = sum_{u<i} K(u,u)
    std::vector<double> block_; // (n+1)^2 2-D prefix sums
};

double segment_cost(const Matrix& k, std::size_t a, std::size_t b);

using SegmentCostFn = std::function<double(std::size_t, std::size_t)>;

/// Exact minimum-cost split of windows 1..N into M segments; the lexicographically
/// smallest boundary vector wins among (near-)ties.
StageSegmentation segment_fixed_m(const SegmentCostFn& cost, std::size_t n, std::size_t m);
StageSegmentation segment_fixed_m(const KernelCost& cost, std::size_t m);
StageSegmentation segment_fixed_m(const Matrix& k, std::size_t m);

struct TargetSegmentation {
    StageSegmentation best;
    std::vector<double> cost_by_m;      // index m-1
    std::vector<double> objective_by_m; // index m-1
};

double segmentation_penalty(std::size_t n, std::size_t m, const PenaltyConfig& penalty);

TargetSegmentation segment_target(const KernelCost& cost, const PenaltyConfig& penalty = {});
TargetSegmentation segment_target(const Matrix& k, const PenaltyConfig& penalty = {});

struct TimeRange {
    std::size_t first = 0; // 1-based, inclusive
    std::size_t last = 0;
};

std::vector<TimeRange> map_to_time(const StageSegmentation& seg, std::size_t window);

enum class BaselineAlgo { BinarySeg, BottomUp, DynProg };

BaselineAlgo baseline_from_string(const std::string& s);
std::string to_string(BaselineAlgo a);

/// Sum of squared deviations from the segment mean (mean-shift cost).
class L2Cost {
public:
    explicit L2Cost(const std::vector<std::vector<double>>& rows);
    double operator()(std::size_t a, std::size_t b) const;

private:
    std::size_t dims_;
    std::vector<double> sum_;    // (n+1) x dims
    std::vector<double> sumsq_;  // n+1
};

StageSegmentation binary_segmentation(const SegmentCostFn& cost, std::size_t n, std::size_t m);
StageSegmentation bottom_up_segmentation(const SegmentCostFn& cost, std::size_t n, std::size_t m);

StageSegmentation segment_baseline(const RmsSequence& seq, BaselineAlgo algo, std::size_t m,
                                   Bandwidth bandwidth = Bandwidth::median(), Warnings* warnings = nullptr);

} // namespace dahi
