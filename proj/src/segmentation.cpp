#include "dahi/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dahi {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double tie_tolerance(double value) { return 1e-12 * (1.0 + std::abs(value)); }

void check_m(std::size_t n, std::size_t m) {
    if (m == 0) {
        throw ConfigError("segment count M must be >= 1");
    }
    if (n == 0) {
        throw DimensionError("cannot segment an empty sequence");
    }
    if (m > n) {
        throw InfeasibleError("cannot split " + std::to_string(n) + " windows into " + std::to_string(m) +
                              " non-empty segments");
    }
}

double sum_cost(const SegmentCostFn& cost, const std::vector<std::size_t>& b) {
    double total = 0.0;
    for (std::size_t i = 1; i < b.size(); ++i) {
        total += cost(b[i - 1] + 1, b[i]);
    }
    return total;
}

// suffix[r][i]: cheapest split of windows i+1..n into r segments
class SuffixTable {
public:
    SuffixTable(const SegmentCostFn& cost, std::size_t n, std::size_t max_m) : cost_(cost), n_(n) {
        table_.assign(max_m + 1, std::vector<double>(n + 1, kInf));
        table_[0][n] = 0.0;
        for (std::size_t r = 1; r <= max_m; ++r) {
            for (std::size_t i = 0; i + r <= n; ++i) {
                double best = kInf;
                for (std::size_t j = i + 1; j + r - 1 <= n; ++j) {
                    const double rest = table_[r - 1][j];
                    if (rest == kInf) {
                        continue;
                    }
                    best = std::min(best, cost_(i + 1, j) + rest);
                }
                table_[r][i] = best;
            }
        }
    }

    std::vector<std::size_t> boundaries(std::size_t m) const {
        std::vector<std::size_t> b{0};
        std::size_t i = 0;
        for (std::size_t r = m; r >= 1; --r) {
            const double target = table_[r][i];
            const double tol = tie_tolerance(target);
            std::size_t pick = n_;
            for (std::size_t j = i + 1; j + r - 1 <= n_; ++j) {
                const double rest = table_[r - 1][j];
                if (rest == kInf) {
                    continue;
                }
                if (cost_(i + 1, j) + rest <= target + tol) {
                    pick = j;
                    break;
                }
            }
            b.push_back(pick);
            i = pick;
        }
        return b;
    }

private:
    const SegmentCostFn& cost_;
    std::size_t n_;
    std::vector<std::vector<double>> table_;
};

} // namespace

void StageSegmentation::validate() const {
    if (boundaries.size() < 2 || boundaries.front() != 0) {
        throw DimensionError("segmentation boundaries must start at 0 and contain at least one segment");
    }
    for (std::size_t i = 1; i < boundaries.size(); ++i) {
        if (boundaries[i] <= boundaries[i - 1]) {
            throw DimensionError("segmentation boundaries must be strictly increasing");
        }
    }
}

void PenaltyConfig::validate() const {
    if (!(c1 > 0.0) || !(c2 > 0.0)) {
        throw ConfigError("penalty coefficients c1 and c2 must be positive");
    }
    if (max_stages < 1) {
        throw ConfigError("max_stages must be >= 1");
    }
}

KernelCost::KernelCost(const Matrix& k) : n_(k.rows) {
    if (k.rows != k.cols) {
        throw DimensionError("kernel matrix must be square, got " + std::to_string(k.rows) + "x" +
                             std::to_string(k.cols));
    }
    const std::size_t w = n_ + 1;
    diag_.assign(w, 0.0);
    block_.assign(w * w, 0.0);
    for (std::size_t u = 0; u < n_; ++u) {
        diag_[u + 1] = diag_[u] + k(u, u);
        for (std::size_t v = 0; v < n_; ++v) {
            block_[(u + 1) * w + v + 1] = k(u, v) + block_[u * w + v + 1] + block_[(u + 1) * w + v] - block_[u * w + v];
        }
    }
}

double KernelCost::operator()(std::size_t a, std::size_t b) const {
    if (a < 1 || a > b || b > n_) {
        throw IndexError("segment cost: need 1 <= a <= b <= N, got a=" + std::to_string(a) + " b=" + std::to_string(b) +
                         " N=" + std::to_string(n_));
    }
    const std::size_t w = n_ + 1;
    const std::size_t lo = a - 1;
    const double len = static_cast<double>(b - lo);
    const double d = diag_[b] - diag_[lo];
    const double blk = block_[b * w + b] - block_[lo * w + b] - block_[b * w + lo] + block_[lo * w + lo];
    return d / len - blk / (len * len);
}

double segment_cost(const Matrix& k, std::size_t a, std::size_t b) { return KernelCost(k)(a, b); }

StageSegmentation segment_fixed_m(const SegmentCostFn& cost, std::size_t n, std::size_t m) {
    check_m(n, m);
    SuffixTable table(cost, n, m);
    StageSegmentation seg;
    seg.boundaries = table.boundaries(m);
    seg.total_cost = sum_cost(cost, seg.boundaries);
    seg.objective = seg.total_cost;
    return seg;
}

StageSegmentation segment_fixed_m(const KernelCost& cost, std::size_t m) {
    return segment_fixed_m([&cost](std::size_t a, std::size_t b) { return cost(a, b); }, cost.size(), m);
}

StageSegmentation segment_fixed_m(const Matrix& k, std::size_t m) { return segment_fixed_m(KernelCost(k), m); }

double segmentation_penalty(std::size_t n, std::size_t m, const PenaltyConfig& penalty) {
    return (penalty.c1 * std::log(static_cast<double>(n) - 1.0) + penalty.c2 * static_cast<double>(m)) /
           static_cast<double>(n);
}

TargetSegmentation segment_target(const KernelCost& cost, const PenaltyConfig& penalty) {
    penalty.validate();
    const std::size_t n = cost.size();
    if (n < 2) {
        throw DimensionError("segment_target needs N >= 2 windows, got " + std::to_string(n));
    }
    const std::size_t max_m = std::min(penalty.max_stages, n);
    const SegmentCostFn fn = [&cost](std::size_t a, std::size_t b) { return cost(a, b); };
    SuffixTable table(fn, n, max_m);
    TargetSegmentation out;
    double best_objective = kInf;
    for (std::size_t m = 1; m <= max_m; ++m) {
        StageSegmentation seg;
        seg.boundaries = table.boundaries(m);
        seg.total_cost = sum_cost(fn, seg.boundaries);
        seg.objective = seg.total_cost + segmentation_penalty(n, m, penalty);
        out.cost_by_m.push_back(seg.total_cost);
        out.objective_by_m.push_back(seg.objective);
        if (seg.objective < best_objective) {
            best_objective = seg.objective;
            out.best = std::move(seg);
        }
    }
    return out;
}

TargetSegmentation segment_target(const Matrix& k, const PenaltyConfig& penalty) {
    return segment_target(KernelCost(k), penalty);
}

std::vector<TimeRange> map_to_time(const StageSegmentation& seg, std::size_t window) {
    seg.validate();
    if (window == 0) {
        throw ConfigError("window length must be >= 1");
    }
    std::vector<TimeRange> out;
    for (std::size_t m = 1; m < seg.boundaries.size(); ++m) {
        out.push_back({seg.boundaries[m - 1] * window + 1, seg.boundaries[m] * window});
    }
    return out;
}

BaselineAlgo baseline_from_string(const std::string& s) {
    if (s == "binseg" || s == "binary") {
        return BaselineAlgo::BinarySeg;
    }
    if (s == "bottomup" || s == "bottom-up") {
        return BaselineAlgo::BottomUp;
    }
    if (s == "dynp" || s == "dynprog") {
        return BaselineAlgo::DynProg;
    }
    throw ConfigError("unknown baseline algorithm '" + s + "' (expected binseg, bottomup or dynp)");
}

std::string to_string(BaselineAlgo a) {
    switch (a) {
    case BaselineAlgo::BinarySeg:
        return "binseg";
    case BaselineAlgo::BottomUp:
        return "bottomup";
    case BaselineAlgo::DynProg:
        return "dynp";
    }
    return "?";
}

L2Cost::L2Cost(const std::vector<std::vector<double>>& rows) : dims_(rows.empty() ? 0 : rows.front().size()) {
    const std::size_t n = rows.size();
    sum_.assign((n + 1) * dims_, 0.0);
    sumsq_.assign(n + 1, 0.0);
    for (std::size_t u = 0; u < n; ++u) {
        double sq = 0.0;
        for (std::size_t c = 0; c < dims_; ++c) {
            sum_[(u + 1) * dims_ + c] = sum_[u * dims_ + c] + rows[u][c];
            sq += rows[u][c] * rows[u][c];
        }
        sumsq_[u + 1] = sumsq_[u] + sq;
    }
}

double L2Cost::operator()(std::size_t a, std::size_t b) const {
    const std::size_t n = sumsq_.size() - 1;
    if (a < 1 || a > b || b > n) {
        throw IndexError("L2 cost: need 1 <= a <= b <= N");
    }
    const std::size_t lo = a - 1;
    const double len = static_cast<double>(b - lo);
    double norm = 0.0;
    for (std::size_t c = 0; c < dims_; ++c) {
        const double s = sum_[b * dims_ + c] - sum_[lo * dims_ + c];
        norm += s * s;
    }
    return (sumsq_[b] - sumsq_[lo]) - norm / len;
}

StageSegmentation binary_segmentation(const SegmentCostFn& cost, std::size_t n, std::size_t m) {
    check_m(n, m);
    std::vector<std::size_t> b{0, n};
    while (b.size() - 1 < m) {
        double best_gain = -kInf;
        std::size_t best_cut = 0;
        for (std::size_t s = 1; s < b.size(); ++s) {
            const std::size_t a = b[s - 1] + 1;
            const std::size_t e = b[s];
            if (a == e) {
                continue;
            }
            const double whole = cost(a, e);
            for (std::size_t t = a; t < e; ++t) {
                const double gain = whole - cost(a, t) - cost(t + 1, e);
                if (gain > best_gain + tie_tolerance(best_gain == -kInf ? 0.0 : best_gain)) {
                    best_gain = gain;
                    best_cut = t;
                }
            }
        }
        b.insert(std::upper_bound(b.begin(), b.end(), best_cut), best_cut);
    }
    StageSegmentation seg;
    seg.boundaries = std::move(b);
    seg.total_cost = sum_cost(cost, seg.boundaries);
    seg.objective = seg.total_cost;
    return seg;
}

StageSegmentation bottom_up_segmentation(const SegmentCostFn& cost, std::size_t n, std::size_t m) {
    check_m(n, m);
    std::vector<std::size_t> b(n + 1);
    for (std::size_t i = 0; i <= n; ++i) {
        b[i] = i;
    }
    while (b.size() - 1 > m) {
        double best = kInf;
        std::size_t drop = 0;
        for (std::size_t s = 1; s + 1 < b.size(); ++s) {
            const double inc = cost(b[s - 1] + 1, b[s + 1]) - cost(b[s - 1] + 1, b[s]) - cost(b[s] + 1, b[s + 1]);
            if (inc < best - tie_tolerance(best == kInf ? 0.0 : best)) {
                best = inc;
                drop = s;
            }
        }
        b.erase(b.begin() + static_cast<std::ptrdiff_t>(drop));
    }
    StageSegmentation seg;
    seg.boundaries = std::move(b);
    seg.total_cost = sum_cost(cost, seg.boundaries);
    seg.objective = seg.total_cost;
    return seg;
}

StageSegmentation segment_baseline(const RmsSequence& seq, BaselineAlgo algo, std::size_t m, Bandwidth bandwidth,
                                   Warnings* warnings) {
    check_m(seq.size(), m);
    if (algo == BaselineAlgo::DynProg) {
        L2Cost l2(seq.vectors);
        return segment_fixed_m([&l2](std::size_t a, std::size_t b) { return l2(a, b); }, seq.size(), m);
    }
    if (seq.size() < 2) {
        StageSegmentation seg;
        seg.boundaries = {0, seq.size()};
        return seg;
    }
    const KernelCost kc(rbf_kernel_matrix(seq, bandwidth, warnings).k);
    const SegmentCostFn fn = [&kc](std::size_t a, std::size_t b) { return kc(a, b); };
    return algo == BaselineAlgo::BinarySeg ? binary_segmentation(fn, seq.size(), m)
                                           : bottom_up_segmentation(fn, seq.size(), m);
}

} // namespace dahi
