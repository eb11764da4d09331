#include "dahi/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace dahi {

HiSeries moving_average(const std::vector<double>& hi, std::size_t window) {
    const std::size_t n = hi.size();
    if (window == 0 || window > n) {
        throw ConfigError("moving average window " + std::to_string(window) + " must lie in [1, " +
                          std::to_string(n) + "]");
    }
    HiSeries s;
    s.values = hi;
    s.ma_window = window;
    s.trend.resize(n);
    s.residual.resize(n);
    const std::size_t left_need = (window - 1) / 2;
    const std::size_t right_need = window / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t room_left = i;
        const std::size_t room_right = n - 1 - i;
        std::size_t shrink = 0;
        if (left_need > room_left) {
            shrink = std::max(shrink, left_need - room_left);
        }
        if (right_need > room_right) {
            shrink = std::max(shrink, right_need - room_right);
        }
        const std::size_t left = left_need > shrink ? left_need - shrink : 0;
        const std::size_t right = right_need > shrink ? right_need - shrink : 0;
        double sum = 0.0;
        for (std::size_t j = i - left; j <= i + right; ++j) {
            sum += hi[j];
        }
        s.trend[i] = sum / static_cast<double>(left + right + 1);
        s.residual[i] = hi[i] - s.trend[i];
    }
    return s;
}

double monotonicity(const HiSeries& s) {
    const std::size_t n = s.trend.size();
    if (n < 4) {
        throw DimensionError("monotonicity needs at least 4 points, got " + std::to_string(n));
    }
    double total = 0.0;
    for (std::size_t g = 1; g <= 3; ++g) {
        double acc = 0.0;
        for (std::size_t t = 0; t + g < n; ++t) {
            const double d = s.trend[t + g] - s.trend[t];
            acc += static_cast<double>((d > 0.0) - (d < 0.0));
        }
        total += std::abs(acc) / static_cast<double>(n - g);
    }
    return total / 3.0;
}

double correlation(const HiSeries& s, Warnings* warnings) {
    const std::size_t n = s.trend.size();
    if (n < 2) {
        throw DimensionError("correlation needs at least 2 points");
    }
    const double tm = (static_cast<double>(n) + 1.0) / 2.0;
    const double hm = std::accumulate(s.trend.begin(), s.trend.end(), 0.0) / static_cast<double>(n);
    double cov = 0.0;
    double vt = 0.0;
    double vh = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dt = static_cast<double>(i + 1) - tm;
        const double dh = s.trend[i] - hm;
        cov += dt * dh;
        vt += dt * dt;
        vh += dh * dh;
    }
    if (!(vh > 0.0)) {
        warn(warnings, "correlation: HI trend is constant; correlation reported as 0");
        return 0.0;
    }
    return std::min(1.0, std::abs(cov) / std::sqrt(vt * vh));
}

double robustness(const HiSeries& s, double xi) {
    const std::size_t n = s.trend.size();
    if (n == 0) {
        throw DimensionError("robustness of an empty series");
    }
    const auto [lo, hi] = std::minmax_element(s.trend.begin(), s.trend.end());
    const double range = *hi - *lo;
    double acc = 0.0;
    for (auto r : s.residual) {
        acc += std::abs(r);
    }
    if (!(range > 0.0)) {
        if (acc == 0.0) {
            return 1.0;
        }
        throw NumericalError("robustness: flat HI trend with non-zero residuals");
    }
    return std::exp(-(xi / static_cast<double>(n)) * acc / range);
}

double comprehensive_index(double mon, double cor, double rob) { return 0.4 * mon + 0.3 * cor + 0.3 * rob; }

MetricsReport evaluate_hi(const std::vector<double>& hi, std::size_t window, double xi, Warnings* warnings) {
    auto s = moving_average(hi, window);
    MetricsReport r;
    r.mon = monotonicity(s);
    r.cor = correlation(s, warnings);
    r.rob = robustness(s, xi);
    r.ci = comprehensive_index(r.mon, r.cor, r.rob);
    r.xi = xi;
    r.ma_window = window;
    return r;
}

double pi_control(const std::vector<double>& losses, std::size_t horizon) {
    if (horizon < 2) {
        throw ConfigError("pi-control horizon must be >= 2");
    }
    if (horizon > losses.size()) {
        throw ConfigError("pi-control horizon " + std::to_string(horizon) + " exceeds the " +
                          std::to_string(losses.size()) + " recorded epochs");
    }
    const auto first = losses.end() - static_cast<std::ptrdiff_t>(horizon);
    // shifted by the first value so constant windows give exactly 0
    const double x0 = *first;
    double mean = 0.0;
    for (auto it = first; it != losses.end(); ++it) {
        mean += *it - x0;
    }
    mean /= static_cast<double>(horizon);
    double ss = 0.0;
    for (auto it = first; it != losses.end(); ++it) {
        ss += (*it - x0 - mean) * (*it - x0 - mean);
    }
    return std::sqrt(ss / static_cast<double>(horizon - 1));
}

double erf_breadth(const std::vector<double>& map) {
    if (map.empty()) {
        return 0.0;
    }
    const double peak = *std::max_element(map.begin(), map.end());
    if (!(peak > 0.0)) {
        return 0.0;
    }
    const auto count = std::count_if(map.begin(), map.end(), [peak](double v) { return v >= 0.01 * peak; });
    return static_cast<double>(count) / static_cast<double>(map.size());
}

ErfResult erf_map(CaflaeModel& model, const RtFSeries& series, std::size_t n_batches, std::size_t batch_size,
                  std::uint64_t seed) {
    if (n_batches == 0 || batch_size == 0) {
        throw ConfigError("erf needs at least one batch of at least one snapshot");
    }
    const std::size_t t = series.snapshots();
    if (t == 0) {
        throw EmptyResultError("erf: series has no snapshots");
    }
    const std::size_t c = series.channels;
    const std::size_t l = series.snapshot_len;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> all(t);
    std::iota(all.begin(), all.end(), 0);
    ErfResult out;
    out.map.assign(l, 0.0);
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::shuffle(all.begin(), all.end(), rng);
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < batch_size; ++i) {
            idx.push_back(all[i % t]);
        }
        auto raw = series.batch(idx);
        Tensor x(raw.shape(), {raw.values().begin(), raw.values().end()}, true);
        ForwardContext ctx;
        auto q = ops::mean(model.encoder_features(x, series.domain, ctx));
        backward(q);
        auto g = x.grad();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                for (std::size_t j = 0; j < l; ++j) {
                    out.map[j] += std::abs(g[(i * c + ch) * l + j]);
                }
            }
        }
    }
    for (auto& v : out.map) {
        v /= static_cast<double>(n_batches * batch_size * c);
    }
    for (auto& p : model.parameters()) {
        p.tensor.zero_grad();
    }
    out.breadth = erf_breadth(out.map);
    return out;
}

} // namespace dahi
