#include "dahi/metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace dahi;

namespace {

// centred window of half-width min(k, i, n-1-i) on both sides, k = (w-1)/2 for odd w
std::vector<double> naive_ma_odd(const std::vector<double>& x, std::size_t w) {
    const std::size_t n = x.size();
    const std::size_t k = (w - 1) / 2;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t h = std::min({k, i, n - 1 - i});
        double s = 0.0;
        for (std::size_t j = i - h; j <= i + h; ++j) {
            s += x[j];
        }
        out[i] = s / static_cast<double>(2 * h + 1);
    }
    return out;
}

double naive_pearson(const std::vector<double>& y) {
    const double n = static_cast<double>(y.size());
    double mt = 0.0, my = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        mt += static_cast<double>(i + 1);
        my += y[i];
    }
    mt /= n;
    my /= n;
    double c = 0.0, vt = 0.0, vy = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        c += (static_cast<double>(i + 1) - mt) * (y[i] - my);
        vt += (static_cast<double>(i + 1) - mt) * (static_cast<double>(i + 1) - mt);
        vy += (y[i] - my) * (y[i] - my);
    }
    return std::abs(c / std::sqrt(vt * vy));
}

double naive_std(const std::vector<double>& v) {
    double m = 0.0;
    for (auto x : v) {
        m += x;
    }
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (auto x : v) {
        s += (x - m) * (x - m);
    }
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

HiSeries raw_series(std::vector<double> trend, std::vector<double> residual) {
    HiSeries s;
    s.trend = std::move(trend);
    s.residual = std::move(residual);
    s.values.resize(s.trend.size());
    for (std::size_t i = 0; i < s.trend.size(); ++i) {
        s.values[i] = s.trend[i] + s.residual[i];
    }
    return s;
}

std::vector<double> noisy_ramp(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> e(0.0, 0.05);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) {
        v[i] = 0.01 * static_cast<double>(i) + e(rng);
    }
    return v;
}

} // namespace

TEST_SUITE("metrics") {

TEST_CASE("moving average") {
    auto v = noisy_ramp(30, 1);
    auto s1 = moving_average(v, 1);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(s1.trend[i] == v[i]);
        CHECK(s1.residual[i] == 0.0);
    }
    for (std::size_t w : {3, 5, 7, 29}) {
        auto s = moving_average(v, w);
        auto oracle = naive_ma_odd(v, w);
        for (std::size_t i = 0; i < v.size(); ++i) {
            CHECK(std::abs(s.trend[i] - oracle[i]) < 1e-12);
            CHECK(std::abs(s.trend[i] + s.residual[i] - v[i]) < 1e-12);
        }
    }
    auto c = moving_average(std::vector<double>(8, 0.3), 5);
    for (std::size_t i = 0; i < 8; ++i) {
        CHECK(c.trend[i] == doctest::Approx(0.3));
        CHECK(std::abs(c.residual[i]) < 1e-15);
    }
    CHECK_THROWS_AS(moving_average(v, 31), ConfigError);
    CHECK_THROWS_AS(moving_average(v, 0), ConfigError);
}

TEST_CASE("monotonicity") {
    std::vector<double> up{0.1, 0.2, 0.35, 0.4, 0.8, 0.81, 0.9};
    CHECK(monotonicity(raw_series(up, std::vector<double>(7, 0.0))) == doctest::Approx(1.0));
    std::vector<double> down(up.rbegin(), up.rend());
    CHECK(monotonicity(raw_series(down, std::vector<double>(7, 0.0))) == doctest::Approx(1.0));
    // 0 1 0 1 0 1: lag 1 + - + - + -> 1/5; lag 2 flat; lag 3 + - + -> 1/3
    std::vector<double> alt{0, 1, 0, 1, 0, 1};
    const double expected = (1.0 / 5.0 + 0.0 + 1.0 / 3.0) / 3.0;
    CHECK(monotonicity(raw_series(alt, std::vector<double>(6, 0.0))) == doctest::Approx(expected));
    std::vector<double> alt4{0, 1, 0, 1, 0};
    // every lag cancels
    CHECK(monotonicity(raw_series(alt4, std::vector<double>(5, 0.0))) == 0.0);
    CHECK_THROWS_AS(monotonicity(raw_series({1, 2, 3}, {0, 0, 0})), DimensionError);
}

TEST_CASE("correlation") {
    std::vector<double> lin;
    for (int i = 0; i < 20; ++i) {
        lin.push_back(-3.0 * i + 2.0);
    }
    CHECK(correlation(raw_series(lin, std::vector<double>(20, 0.0))) == doctest::Approx(1.0));
    // orthogonal to t after centring
    std::vector<double> y{1, -2, 3, 0, -1, 5, -4, 2};
    double mt = 4.5, my = 0.0, c = 0.0, vt = 0.0;
    for (auto v : y) {
        my += v;
    }
    my /= 8.0;
    for (std::size_t i = 0; i < 8; ++i) {
        c += (i + 1.0 - mt) * (y[i] - my);
        vt += (i + 1.0 - mt) * (i + 1.0 - mt);
    }
    for (std::size_t i = 0; i < 8; ++i) {
        y[i] = y[i] - my - c / vt * (i + 1.0 - mt);
    }
    CHECK(correlation(raw_series(y, std::vector<double>(8, 0.0))) < 1e-10);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto v = noisy_ramp(25, seed);
        CHECK(std::abs(correlation(raw_series(v, std::vector<double>(25, 0.0))) - naive_pearson(v)) < 1e-12);
    }
    Warnings w;
    CHECK(correlation(raw_series(std::vector<double>(6, 0.5), std::vector<double>(6, 0.0)), &w) == 0.0);
    CHECK(w.size() == 1);
}

TEST_CASE("robustness") {
    CHECK(robustness(raw_series({0.0, 1.0, 2.0}, {0.0, 0.0, 0.0})) == doctest::Approx(1.0));
    CHECK(robustness(raw_series({0.0, 1.0}, {0.1, 0.1}), 2.0) == doctest::Approx(std::exp(-0.2)).epsilon(1e-12));
    CHECK(robustness(raw_series({0.5, 0.5}, {0.0, 0.0})) == 1.0);
    CHECK_THROWS_AS(robustness(raw_series({0.5, 0.5}, {0.1, -0.1})), NumericalError);
    // constant shift leaves it unchanged
    auto v = noisy_ramp(30, 4);
    auto shifted = v;
    for (auto& x : shifted) {
        x += 7.0;
    }
    CHECK(robustness(moving_average(v, 5)) == doctest::Approx(robustness(moving_average(shifted, 5))).epsilon(1e-9));
}

TEST_CASE("comprehensive index") {
    CHECK(comprehensive_index(1, 1, 1) == doctest::Approx(1.0));
    CHECK(comprehensive_index(0, 0, 0) == 0.0);
    CHECK(std::abs(comprehensive_index(0.5055, 0.8719, 0.9226) - 0.74055) < 1e-12);
    auto r = evaluate_hi(noisy_ramp(40, 2), 5, 2.0);
    CHECK(std::abs(r.ci - (0.4 * r.mon + 0.3 * r.cor + 0.3 * r.rob)) < 1e-12);
    for (double m : {r.mon, r.cor, r.rob, r.ci}) {
        CHECK(m >= 0.0);
        CHECK(m <= 1.0);
    }
    CHECK(r.ma_window == 5);
    CHECK(r.xi == 2.0);
}

TEST_CASE("affine invariance") {
    auto v = noisy_ramp(40, 9);
    auto base = evaluate_hi(v);
    std::vector<double> a, f;
    for (auto x : v) {
        a.push_back(3.0 * x + 1.0);
        f.push_back(-x);
    }
    auto ra = evaluate_hi(a);
    auto rf = evaluate_hi(f);
    CHECK(ra.mon == doctest::Approx(base.mon));
    CHECK(ra.cor == doctest::Approx(base.cor));
    CHECK(rf.mon == doctest::Approx(base.mon));
}

TEST_CASE("pi control") {
    CHECK(pi_control(std::vector<double>(12, 0.4)) == 0.0);
    CHECK(pi_control({1.0, 3.0}, 2) == doctest::Approx(std::sqrt(2.0)));
    auto v = noisy_ramp(30, 5);
    std::vector<double> tail(v.end() - 10, v.end());
    CHECK(std::abs(pi_control(v, 10) - naive_std(tail)) < 1e-12);
    CHECK_THROWS_AS(pi_control(v, 31), ConfigError);
    CHECK_THROWS_AS(pi_control(v, 1), ConfigError);
}

TEST_CASE("erf breadth") {
    CHECK(erf_breadth({}) == 0.0);
    CHECK(erf_breadth({0.0, 0.0}) == 0.0);
    CHECK(erf_breadth({1.0, 0.5, 0.011, 0.009}) == doctest::Approx(0.75));
    CHECK(erf_breadth({2.0, 2.0}) == doctest::Approx(1.0));
}

TEST_CASE("erf map on a small model") {
    CaflaeConfig cfg;
    cfg.channels = 1;
    cfg.snapshot_len = 16;
    cfg.patch_len = 4;
    cfg.patch_stride = 2;
    cfg.kernels = {3, 5, 7};
    cfg.width = 4;
    cfg.attn_width = 4;
    cfg.head_hidden = 4;
    CaflaeModel model(cfg, 3);
    RtFSeries s;
    s.channels = 1;
    s.snapshot_len = 16;
    s.failure_index = 6;
    std::mt19937_64 rng(2);
    std::normal_distribution<double> e;
    for (int i = 0; i < 6 * 16; ++i) {
        s.data.push_back(e(rng));
    }
    auto r = erf_map(model, s, 2, 3, 1);
    REQUIRE(r.map.size() == 16);
    for (auto v : r.map) {
        CHECK(v >= 0.0);
    }
    CHECK(r.breadth > 0.0);
    CHECK(r.breadth == erf_breadth(r.map));
    for (const auto& p : model.parameters()) {
        for (auto g : p.tensor.grad()) {
            CHECK(g == 0.0);
        }
    }
    auto again = erf_map(model, s, 2, 3, 1);
    CHECK(again.map == r.map);
    CHECK_THROWS_AS(erf_map(model, s, 0, 3, 1), ConfigError);
}

}
