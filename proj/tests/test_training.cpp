#include "dahi/pipeline.hpp"
#include "dahi/training.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>

using namespace dahi;
using dahi::testing::grad_check;
using dahi::testing::random_tensor;

namespace {

// mean over all (i, j) of exp(-|a_i - b_j|^2 / (2 sigma^2))
double kernel_mean(const std::vector<std::vector<double>>& a, const std::vector<std::vector<double>>& b, double sigma) {
    double s = 0.0;
    for (const auto& x : a) {
        for (const auto& y : b) {
            double d = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) {
                d += (x[k] - y[k]) * (x[k] - y[k]);
            }
            s += std::exp(-d / (2.0 * sigma * sigma));
        }
    }
    return s / static_cast<double>(a.size() * b.size());
}

std::vector<std::vector<double>> rows(const Tensor& t) {
    std::vector<std::vector<double>> out(t.dim(0));
    const std::size_t f = t.dim(1);
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i].assign(t.values().begin() + static_cast<std::ptrdiff_t>(i * f),
                      t.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
    }
    return out;
}

CaflaeConfig tiny_model() {
    CaflaeConfig c;
    c.channels = 2;
    c.snapshot_len = 32;
    c.patch_len = 8;
    c.patch_stride = 4;
    c.width = 8;
    c.attn_width = 8;
    c.heads = 2;
    return c;
}

struct Pair {
    PreparedStages prep;
};

Pair synthetic_pair(std::uint64_t seed) {
    auto specs = default_synth_specs(seed);
    PenaltyConfig pen;
    pen.c1 = pen.c2 = 3.0;
    return {prepare_stages(generate_synth(specs[0]).series, generate_synth(specs[1]).series, 32,
                           Bandwidth::median(), pen, ScfConfig{})};
}

} // namespace

TEST_SUITE("losses") {

TEST_CASE("scf labels") {
    ScfConfig c;
    c.failure_index = 10;
    CHECK(scf_value(0, c) == 0.0);
    CHECK(scf_value(10, c) == 1.0);
    c.alpha = 2.0;
    CHECK(scf_value(5, c) == doctest::Approx(0.25));
    c.form = ScfForm::Literal;
    for (double a : {0.5, 1.0, 3.0}) {
        c.alpha = a;
        CHECK(scf_value(10, c) == doctest::Approx(2.0));
    }
    CHECK_THROWS_AS(scf_value(11, c), IndexError);
    CHECK(scf_form_from_string("literal") == ScfForm::Literal);
    CHECK_THROWS_AS(scf_form_from_string("cubic"), ConfigError);
}

TEST_CASE("mmd fixtures") {
    std::mt19937_64 rng(1);
    auto a = random_tensor({5, 3}, rng, false);
    CHECK(std::abs(mmd_loss(a, a).item()) < 1e-12);
    CHECK(std::abs(mmd_loss(a, a, 0.7).item()) < 1e-12);
    // |x - y|^2 = 2 sigma^2
    Tensor x({1, 2}, {0.0, 0.0});
    Tensor y({1, 2}, {1.0, 1.0});
    CHECK(mmd_loss(x, y, 1.0).item() == doctest::Approx(2.0 - 2.0 * std::exp(-1.0)).epsilon(1e-12));
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        std::mt19937_64 r(seed);
        auto fs = random_tensor({4, 3}, r, false);
        auto ft = random_tensor({6, 3}, r, false, -0.5, 1.5);
        const double sigma = 0.4 + 0.1 * static_cast<double>(seed);
        const auto ps = rows(fs);
        const auto pt = rows(ft);
        const double oracle = kernel_mean(ps, ps, sigma) + kernel_mean(pt, pt, sigma) - 2.0 * kernel_mean(ps, pt, sigma);
        CHECK(std::abs(mmd_loss(fs, ft, sigma).item() - oracle) < 1e-10);
        double used = 0.0;
        const double med = mmd_loss(fs, ft, std::nullopt, &used).item();
        CHECK(used > 0.0);
        const double oracle_med =
            kernel_mean(ps, ps, used) + kernel_mean(pt, pt, used) - 2.0 * kernel_mean(ps, pt, used);
        CHECK(std::abs(med - oracle_med) < 1e-10);
    }
}

TEST_CASE("mmd gradient") {
    std::mt19937_64 rng(2);
    auto fs = random_tensor({3, 4}, rng);
    auto ft = random_tensor({5, 4}, rng);
    auto r = grad_check([&] { return mmd_loss(fs, ft, 0.9); }, {{"fs", fs}, {"ft", ft}});
    CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("scf loss") {
    Tensor hi({4}, {0.1, 0.4, 0.6, 0.9}, true);
    std::vector<std::optional<double>> same{0.1, 0.4, 0.6, 0.9};
    CHECK(scf_loss(hi, same).item() == 0.0);
    std::vector<std::optional<double>> off{0.0, 0.3, 0.5, 0.8};
    CHECK(scf_loss(hi, off).item() == doctest::Approx(0.01));
    auto l = scf_loss(hi, off);
    backward(l);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(hi.grad()[i] == doctest::Approx(2.0 * 0.1 / 4.0));
    }
    auto r = grad_check([&] { return scf_loss(hi, off); }, {{"hi", hi}});
    CHECK(r.max_rel_err < 1e-6);
    std::vector<std::optional<double>> partial{0.0, std::nullopt, std::nullopt, 0.5};
    CHECK(scf_loss(hi, partial).item() == doctest::Approx((0.01 + 0.16) / 2.0));
    Warnings w;
    std::vector<std::optional<double>> none(4);
    CHECK(scf_loss(hi, none, &w).item() == 0.0);
    CHECK(w.size() == 1);
    std::vector<std::optional<double>> short_labels{0.1};
    CHECK_THROWS_AS(scf_loss(hi, short_labels), DimensionError);
}

TEST_CASE("reconstruction loss") {
    std::mt19937_64 rng(3);
    auto xs = random_tensor({2, 3, 5}, rng);
    auto xt = random_tensor({2, 3, 5}, rng);
    CHECK(reconstruction_loss(xs, xs, xt, xt).item() == 0.0);
    auto xs1 = ops::add_scalar(xs, 1.0);
    auto xt1 = ops::add_scalar(xt, 1.0);
    CHECK(reconstruction_loss(xs, xs1, xt, xt1).item() == doctest::Approx(2.0));
    auto hs = random_tensor({2, 3, 5}, rng);
    auto ht = random_tensor({2, 3, 5}, rng);
    auto r = grad_check([&] { return reconstruction_loss(xs, hs, xt, ht); }, {{"hs", hs}, {"ht", ht}});
    CHECK(r.max_rel_err < 1e-6);
    auto bad = random_tensor({2, 3, 4}, rng);
    CHECK_THROWS_AS(reconstruction_loss(xs, bad, xt, ht), DimensionError);
}

TEST_CASE("dwa weights") {
    DwaState s;
    CHECK(s.weights == LossTriple{1.0, 1.0, 1.0});
    CHECK(dwa_update(s, {0.5, 0.2, 0.1}) == LossTriple{1.0, 1.0, 1.0});
    // equal ratios
    auto w = dwa_update(s, {0.25, 0.1, 0.05});
    for (auto v : w) {
        CHECK(v == doctest::Approx(1.0));
    }
    // epoch 3 weights from r = L2 / L1 = (1, 0.5, 2) -> 3 softmax(r / 2)
    DwaState u;
    dwa_update(u, {1.0, 1.0, 1.0});
    auto w2 = dwa_update(u, {1.0, 0.5, 2.0});
    const double e0 = std::exp(0.5), e1 = std::exp(0.25), e2 = std::exp(1.0);
    const double z = e0 + e1 + e2;
    CHECK(w2[0] == doctest::Approx(3.0 * e0 / z));
    CHECK(w2[1] == doctest::Approx(3.0 * e1 / z));
    CHECK(w2[2] == doctest::Approx(3.0 * e2 / z));
    CHECK(w2[0] + w2[1] + w2[2] == doctest::Approx(3.0));
    DwaState hot;
    hot.temperature = 1e9;
    dwa_update(hot, {1.0, 2.0, 3.0});
    dwa_update(hot, {0.1, 5.0, 0.2});
    for (auto v : dwa_update(hot, {1.0, 1.0, 1.0})) {
        CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
    }
    DwaState flat;
    for (int e = 0; e < 20; ++e) {
        for (auto v : dwa_update(flat, {0.4, 0.4, 0.4})) {
            CHECK(v == doctest::Approx(1.0));
        }
    }
    DwaState z0;
    Warnings warn_log;
    dwa_update(z0, {0.0, 1.0, 1.0}, &warn_log);
    dwa_update(z0, {0.0, 1.0, 1.0}, &warn_log);
    auto w3 = dwa_update(z0, {0.0, 1.0, 1.0}, &warn_log);
    CHECK(warn_log.size() >= 1);
    for (auto v : w3) {
        CHECK(std::isfinite(v));
    }
    DwaState lit;
    lit.form = DwaForm::Literal;
    dwa_update(lit, {1.0, 1.0, 1.0});
    dwa_update(lit, {1.0, 1.0, 1.0});
    auto wl = dwa_update(lit, {1.0, 1.0, 1.0});
    CHECK(wl[0] == doctest::Approx(wl[1]));
}

TEST_CASE("adam first step") {
    Tensor p({3}, {1.0, -2.0, 0.5}, true);
    AdamConfig cfg;
    cfg.lr = 0.1;
    Adam opt({p}, cfg);
    opt.zero_grad();
    backward(ops::sum(ops::square(p)));
    opt.step();
    // bias-corrected first step moves each coordinate by lr * g / (|g| + eps')
    CHECK(p.values()[0] == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(p.values()[1] == doctest::Approx(-1.9).epsilon(1e-6));
    CHECK(p.values()[2] == doctest::Approx(0.4).epsilon(1e-6));
    CHECK(opt.steps() == 1);
    AdamConfig bad;
    bad.lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

}

TEST_SUITE("training") {

TEST_CASE("config validation") {
    TrainConfig c;
    c.epochs = 2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.weighting = WeightingMode::Fixed;
    CHECK_NOTHROW(c.validate());
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    TrainConfig z;
    z.epochs = 0;
    CHECK_NOTHROW(z.validate());
}

TEST_CASE("zero epochs leave the model untouched") {
    auto pair = synthetic_pair(1);
    TrainConfig cfg;
    cfg.epochs = 0;
    cfg.seed = 5;
    auto r = train(pair.prep.source, pair.prep.target, pair.prep.plan, tiny_model(), cfg);
    CaflaeModel fresh(tiny_model(), 5);
    auto a = r.model.parameters();
    auto b = fresh.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(std::equal(a[i].tensor.values().begin(), a[i].tensor.values().end(), b[i].tensor.values().begin()));
    }
    CHECK(r.diagnostics.epochs.empty());
    CHECK(r.diagnostics.steps.empty());
}

TEST_CASE("shape mismatch is rejected") {
    auto pair = synthetic_pair(1);
    auto m = tiny_model();
    m.channels = 3;
    TrainConfig cfg;
    cfg.epochs = 3;
    CHECK_THROWS_AS(train(pair.prep.source, pair.prep.target, pair.prep.plan, m, cfg), DimensionError);
}

TEST_CASE("non-finite loss reports epoch and batch") {
    auto pair = synthetic_pair(1);
    auto src = pair.prep.source;
    for (std::size_t i = 0; i < src.data.size(); i += 5) {
        src.data[i] = std::numeric_limits<double>::infinity();
    }
    TrainConfig cfg;
    cfg.epochs = 3;
    try {
        train(src, pair.prep.target, pair.prep.plan, tiny_model(), cfg);
        FAIL("expected a numerical error");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).rfind("epoch 1 batch ", 0) == 0);
    }
}

TEST_CASE("seeded run is deterministic and learns") {
    auto pair = synthetic_pair(2);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 11;
    cfg.mmd_sigma = 1.0;
    auto a = train(pair.prep.source, pair.prep.target, pair.prep.plan, tiny_model(), cfg);
    auto b = train(pair.prep.source, pair.prep.target, pair.prep.plan, tiny_model(), cfg);
    const auto& ea = a.diagnostics.epochs;
    REQUIRE(ea.size() == 50);
    CHECK(ea.back().total < ea[2].total);
    for (const auto& e : ea) {
        CHECK(e.weights[0] + e.weights[1] + e.weights[2] == doctest::Approx(3.0));
    }
    CHECK(ea[0].weights == LossTriple{1.0, 1.0, 1.0});
    CHECK(ea[1].weights == LossTriple{1.0, 1.0, 1.0});
    auto pa = a.model.parameters();
    auto pb = b.model.parameters();
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(), pb[i].tensor.values().begin()));
    }
    CHECK(a.rng_state == b.rng_state);
    std::size_t steps = 0;
    for (const auto& e : ea) {
        steps += e.batches;
    }
    CHECK(a.diagnostics.steps.size() == steps);
    CHECK(a.diagnostics.wall_seconds.size() == 50);
}

TEST_CASE("fixed weights hold") {
    auto pair = synthetic_pair(3);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.weighting = WeightingMode::Fixed;
    cfg.fixed_weights = {1.0, 0.25, 0.5};
    cfg.sampling = SamplingMode::Random;
    auto r = train(pair.prep.source, pair.prep.target, pair.prep.plan, tiny_model(), cfg);
    for (const auto& e : r.diagnostics.epochs) {
        CHECK(e.weights == cfg.fixed_weights);
    }
    for (const auto& s : r.diagnostics.steps) {
        CHECK_FALSE(s.stage.has_value());
        CHECK(s.total == doctest::Approx(s.losses[0] + 0.25 * s.losses[1] + 0.5 * s.losses[2]));
    }
}

}
