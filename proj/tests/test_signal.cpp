#include "dahi/signal.hpp"

#include <Eigen/Dense>
#include <doctest.h>

#include <cmath>
#include <random>

using namespace dahi;

namespace {

RtFSeries make_series(std::size_t t, std::size_t c, std::size_t l, std::uint64_t seed) {
    RtFSeries s;
    s.channels = c;
    s.snapshot_len = l;
    s.failure_index = t;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    s.data.resize(t * c * l);
    for (auto& v : s.data) {
        v = n(rng);
    }
    return s;
}

} // namespace

TEST_SUITE("signal") {

TEST_CASE("stream layout concatenates snapshots per channel") {
    RtFSeries s;
    s.channels = 2;
    s.snapshot_len = 2;
    s.failure_index = 2;
    // t0: c0 = [1,2] c1 = [10,20]; t1: c0 = [3,4] c1 = [30,40]
    s.data = {1, 2, 10, 20, 3, 4, 30, 40};
    CHECK(s.snapshots() == 2);
    CHECK(s.stream(0, 2) == 3);
    CHECK(s.stream(1, 3) == 40);
    auto b = s.batch(std::vector<std::size_t>{1, 0});
    CHECK(b.shape() == Shape{2, 2, 2});
    CHECK(b.at(0) == 3);
    CHECK(b.at(4) == 1);
    CHECK_THROWS_AS(s.snapshot(2), IndexError);
}

TEST_CASE("min-max scaling") {
    RtFSeries s;
    s.channels = 2;
    s.snapshot_len = 2;
    s.failure_index = 1;
    s.data = {2, 4, 5, 5};
    Warnings w;
    auto out = min_max_scale(s, &w);
    CHECK(out.data == std::vector<double>{0, 1, 0, 0});
    REQUIRE(w.size() == 1);
    CHECK(w[0].find("channel 1") != std::string::npos);

    auto big = make_series(5, 3, 7, 1);
    auto scaled = min_max_scale(big);
    auto r = channel_range(scaled);
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(r.min[c] == doctest::Approx(0.0));
        CHECK(r.max[c] == doctest::Approx(1.0));
    }

    ChannelRange ext{{0.0, 0.0}, {8.0, 10.0}};
    auto e = min_max_scale(s, nullptr, ext);
    CHECK(e.data == std::vector<double>{0.25, 0.5, 0.5, 0.5});
    CHECK_THROWS_AS(min_max_scale(s, nullptr, ChannelRange{{0}, {1}}), DimensionError);
}

TEST_CASE("windowed RMS") {
    RtFSeries s;
    s.channels = 1;
    s.snapshot_len = 3;
    s.failure_index = 1;
    s.data = {3, 4, 7};
    auto seq = windowed_rms(s, 2);
    REQUIRE(seq.size() == 1);
    CHECK(seq.vectors[0][0] == doctest::Approx(std::sqrt(12.5)));

    RtFSeries c;
    c.channels = 1;
    c.snapshot_len = 4;
    c.failure_index = 1;
    c.data = {-2, 2, -2, 2};
    CHECK(windowed_rms(c, 4).vectors[0][0] == doctest::Approx(2.0));
    CHECK(windowed_rms(c, 1).size() == 4);
    CHECK_THROWS_AS(windowed_rms(c, 5), EmptyResultError);
    CHECK_THROWS_AS(windowed_rms(c, 0), ConfigError);
}

TEST_CASE("RBF kernel is symmetric PSD with unit diagonal") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto s = make_series(20, 3, 8, seed);
        auto seq = windowed_rms(s, 4);
        auto km = rbf_kernel_matrix(seq);
        const std::size_t n = seq.size();
        Eigen::MatrixXd m(n, n);
        for (std::size_t u = 0; u < n; ++u) {
            CHECK(km.k(u, u) == 1.0);
            for (std::size_t v = 0; v < n; ++v) {
                CHECK(km.k(u, v) == km.k(v, u));
                m(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) = km.k(u, v);
            }
        }
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
        CHECK(es.eigenvalues().minCoeff() > -1e-10);
    }
}

TEST_CASE("median heuristic and bandwidth errors") {
    RmsSequence seq;
    seq.vectors = {{0.0}, {1.0}, {3.0}};
    // distances 1, 3, 2 -> median 2
    CHECK(median_pairwise_distance(seq.vectors) == 2.0);
    auto km = rbf_kernel_matrix(seq);
    CHECK(km.sigma == 2.0);
    CHECK(km.k(0, 1) == doctest::Approx(std::exp(-1.0 / 8.0)));

    RmsSequence flat;
    flat.vectors = {{1.0, 1.0}, {1.0, 1.0}, {1.0, 1.0}};
    Warnings w;
    auto kf = rbf_kernel_matrix(flat, Bandwidth::median(), &w);
    CHECK(kf.sigma == 1.0);
    CHECK(w.size() == 1);
    CHECK(kf.k(0, 2) == 1.0);

    CHECK_THROWS_AS(rbf_kernel_matrix(seq, Bandwidth::value(0.0)), ConfigError);
    CHECK_THROWS_AS(rbf_kernel_matrix(seq, Bandwidth::value(-1.0)), ConfigError);
    RmsSequence one;
    one.vectors = {{1.0}};
    CHECK_THROWS_AS(rbf_kernel_matrix(one), DimensionError);
}

TEST_CASE("series validation") {
    auto s = make_series(4, 2, 3, 3);
    CHECK_NOTHROW(s.validate());
    s.failure_index = 5;
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.failure_index = 4;
    s.data.pop_back();
    CHECK_THROWS_AS(s.validate(), DimensionError);
    CHECK(domain_from_string("target") == Domain::Target);
    CHECK_THROWS_AS(domain_from_string("x"), ConfigError);
}

}
