#include "dahi/caflae.hpp"
#include "dahi/losses.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace dahi;
using dahi::testing::grad_check;
using dahi::testing::random_tensor;
using dahi::testing::weighted_sum;

namespace {

CaflaeConfig small_config() {
    CaflaeConfig cfg;
    cfg.channels = 2;
    cfg.snapshot_len = 16;
    cfg.patch_len = 4;
    cfg.patch_stride = 2;
    cfg.kernels = {3, 5, 7};
    cfg.width = 4;
    cfg.attn_width = 4;
    cfg.heads = 2;
    cfg.ffn_ratio = 2;
    cfg.head_hidden = 6;
    return cfg;
}

std::vector<std::pair<std::string, Tensor>> as_pairs(const std::vector<NamedTensor>& ps) {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& p : ps) {
        out.emplace_back(p.name, p.tensor);
    }
    return out;
}

void set_all(const Tensor& t, double v) {
    Tensor m = t;
    for (auto& x : m.values_mut()) {
        x = v;
    }
}

} // namespace

TEST_SUITE("caflae") {

TEST_CASE("RevIN round trip and fixtures") {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        auto x = random_tensor({2, 3, 9}, rng, false, -5.0, 5.0);
        auto xv = x.values_mut();
        for (std::size_t l = 0; l < 9; ++l) {
            xv[9 + l] = 2.5; // batch 0, channel 1 constant
        }
        RevInParams p{random_tensor({3}, rng, false, 0.5, 1.5), random_tensor({3}, rng, false)};
        auto out = revin_normalize(x, p);
        auto back = revin_denormalize(out.normalized, p, out.state);
        for (std::size_t i = 0; i < x.numel(); ++i) {
            REQUIRE(std::abs(back.at(i) - x.at(i)) < 1e-10);
        }
        CHECK_THROWS_AS(revin_denormalize(out.normalized, p, out.state), UsageError);
    }

    Tensor c = Tensor::full({1, 2, 5}, 3.0);
    RevInParams p{Tensor::full({2}, 1.0), Tensor({2}, {0.25, -0.5})};
    auto n = revin_normalize(c, p);
    for (std::size_t l = 0; l < 5; ++l) {
        CHECK(n.normalized.at(l) == doctest::Approx(0.25));
        CHECK(n.normalized.at(5 + l) == doctest::Approx(-0.5));
    }
    RevInState empty;
    CHECK_THROWS_AS(revin_denormalize(c, p, empty), UsageError);
}

TEST_CASE("patch embedding shapes") {
    Tensor x({1, 2, 6}, {1, 2, 3, 4, 5, 6, 6, 5, 4, 3, 2, 1});
    auto one = ops::patch_embed(x, Tensor::full({3, 6}, 1.0), Tensor::zeros({3}), 6);
    CHECK(one.shape() == Shape{1, 6, 1});
    CHECK(one.at(0) == 21.0);
    auto copy = ops::patch_embed(x, Tensor::full({1, 1}, 1.0), Tensor::zeros({1}), 1);
    CHECK(copy.shape() == Shape{1, 2, 6});
    for (std::size_t i = 0; i < 12; ++i) {
        CHECK(copy.at(i) == x.at(i));
    }
    auto cfg = small_config();
    CHECK(cfg.patches() == 7);
    cfg.patch_len = 17;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("PMTC block: residual degeneracy, shape and gradient") {
    auto cfg = small_config();
    CaflaeModel model(cfg, 1);
    auto& block = model.params().encoder[0];
    const BlockShape shape{cfg.channels, cfg.width, 0.0};
    std::mt19937_64 rng(2);
    auto x = random_tensor({3, 8, 7}, rng);
    ForwardContext ctx{ops::Mode::Train, nullptr};

    auto y = pmtc_block(x, block, shape, ctx);
    CHECK(y.shape() == x.shape());

    auto r = grad_check([&] { return weighted_sum(pmtc_block(x, block, shape, ctx)); },
                        {{"x", x}, {"proj", block.proj}, {"dw", block.branches[1].dw}, {"ffn2", block.ffn2.up},
                         {"bn", block.branches[0].bn_gamma}, {"ln", block.ln_beta}});
    INFO(r.worst);
    CHECK(r.max_rel_err < 1e-4);

    set_all(block.proj, 0.0);
    set_all(block.ffn2.down, 0.0);
    auto z = pmtc_block(x, block, shape, ctx);
    for (std::size_t i = 0; i < x.numel(); ++i) {
        CHECK(z.at(i) == x.at(i));
    }
}

TEST_CASE("cross attention: symmetry, ablation, gradient") {
    auto cfg = small_config();
    CaflaeModel model(cfg, 3);
    auto& ps = model.params().attn_s;
    auto& pt = model.params().attn_t;
    std::mt19937_64 rng(4);
    auto y = random_tensor({2, 8, 5}, rng);

    AttentionParams same = ps;
    auto f = cross_attention_fuse(y, y, ps, same, cfg.channels, cfg.heads, false);
    for (std::size_t i = 0; i < y.numel(); ++i) {
        CHECK(f.source.at(i) == f.target.at(i));
    }

    auto ablated = cross_attention_fuse(y, y, ps, pt, cfg.channels, cfg.heads, true);
    auto ln = ops::reshape(ops::layer_norm(ops::reshape(y, {4, 4, 5}), ps.ln_gamma, ps.ln_beta), y.shape());
    for (std::size_t i = 0; i < y.numel(); ++i) {
        CHECK(ablated.source.at(i) == ln.at(i));
    }

    auto yt = random_tensor({2, 8, 5}, rng);
    auto r = grad_check(
        [&] {
            auto o = cross_attention_fuse(y, yt, ps, pt, cfg.channels, cfg.heads, false);
            return ops::add(weighted_sum(o.source, 1), weighted_sum(o.target, 2));
        },
        {{"ys", y}, {"yt", yt}, {"wq_s", ps.wq}, {"wk_t", pt.wk}, {"wv_s", ps.wv}, {"wo_t", pt.wo}});
    INFO(r.worst);
    CHECK(r.max_rel_err < 1e-4);

    CHECK_THROWS_AS(cross_attention_fuse(y, y, ps, pt, cfg.channels, 3, false), ConfigError);
}

TEST_CASE("encode pair contract") {
    auto cfg = small_config();
    CaflaeModel model(cfg, 9);
    std::mt19937_64 rng(6);
    auto xs = random_tensor({4, 2, 16}, rng, false, -3.0, 3.0);
    auto xt = random_tensor({4, 2, 16}, rng, false, -3.0, 3.0);
    ForwardContext ctx;
    auto r = model.encode_pair(xs, xt, ctx);
    CHECK(r.hi.shape() == Shape{4});
    for (auto h : r.hi.values()) {
        CHECK(h > 0.0);
        CHECK(h < 1.0);
    }
    CHECK(r.features_s.shape() == Shape{4, 8});
    CHECK(r.joint.shape() == Shape{4, 16, 7});

    auto again = model.encode_pair(xs, xt, ctx);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(again.hi.at(i) == r.hi.at(i));
    }

    const std::vector<std::size_t> perm{2, 0, 3, 1};
    auto pick = [&](const Tensor& x) {
        std::vector<Tensor> rows;
        for (auto p : perm) {
            rows.push_back(ops::narrow(x, 0, p, 1));
        }
        return ops::concat(rows, 0);
    };
    auto permuted = model.encode_pair(pick(xs), pick(xt), ctx);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(permuted.hi.at(i) == doctest::Approx(r.hi.at(perm[i])).epsilon(1e-12));
    }

    auto single = model.encode_single(xt, ctx);
    auto pair = model.encode_pair(xt, xt, ctx);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(single.at(i) == pair.hi.at(i));
    }

    auto one = model.encode_single(ops::reshape(ops::narrow(xs, 0, 0, 1), {2, 16}), ctx);
    CHECK(one.shape() == Shape{1});
    CHECK_THROWS_AS(model.encode_pair(xs, ops::narrow(xt, 0, 0, 2), ctx), DimensionError);
}

TEST_CASE("decoder shapes and state handling") {
    for (auto from : {DecodeFrom::FusedLatent, DecodeFrom::HiScalar}) {
        auto cfg = small_config();
        cfg.decode_from = from;
        CaflaeModel model(cfg, 10);
        std::mt19937_64 rng(8);
        auto xs = random_tensor({3, 2, 16}, rng, false);
        auto xt = random_tensor({3, 2, 16}, rng, false);
        ForwardContext ctx{ops::Mode::Train, nullptr};
        auto enc = model.encode_pair(xs, xt, ctx);
        auto rs = model.decode(enc, Domain::Source, ctx);
        auto rt = model.decode(enc, Domain::Target, ctx);
        CHECK(rs.shape() == xs.shape());
        CHECK(rt.shape() == xt.shape());
        CHECK_THROWS_AS(model.decode(enc, Domain::Source, ctx), UsageError);
        EncodeResult blank;
        CHECK_THROWS_AS(model.decode(blank, Domain::Target, ctx), UsageError);
    }
}

TEST_CASE("shape contract over a spread of configurations") {
    struct Case {
        std::size_t c, l, p, s, d, h;
        std::vector<std::size_t> k;
    };
    const std::vector<Case> cases{{1, 32, 8, 4, 8, 2, {13, 23, 31}},
                                  {3, 30, 6, 3, 4, 1, {3, 5, 7}},
                                  {2, 20, 20, 20, 6, 3, {13}},
                                  {2, 25, 5, 2, 4, 2, {5, 9, 11}}};
    for (const auto& cs : cases) {
        CaflaeConfig cfg;
        cfg.channels = cs.c;
        cfg.snapshot_len = cs.l;
        cfg.patch_len = cs.p;
        cfg.patch_stride = cs.s;
        cfg.width = cs.d;
        cfg.attn_width = cs.d;
        cfg.heads = cs.h;
        cfg.kernels = cs.k;
        cfg.ffn_ratio = 2;
        CaflaeModel model(cfg, 1);
        std::mt19937_64 rng(1);
        auto x = random_tensor({2, cs.c, cs.l}, rng, false);
        ForwardContext ctx;
        auto enc = model.encode_pair(x, x, ctx);
        CHECK(model.decode(enc, Domain::Target, ctx).shape() == x.shape());
    }
}

TEST_CASE("encoder weights are stored once and drive both domains") {
    auto cfg = small_config();
    CaflaeModel model(cfg, 12);
    auto params = model.parameters();
    std::set<std::string> names;
    std::size_t encoder_entries = 0;
    for (const auto& p : params) {
        CHECK(names.insert(p.name).second);
        if (p.name.rfind("encoder.", 0) == 0) {
            ++encoder_entries;
        }
        for (const auto& q : params) {
            if (&p != &q) {
                CHECK_FALSE(p.tensor.same_storage(q.tensor));
            }
        }
    }
    CHECK(encoder_entries > 0);
    CHECK(model.parameters().front().tensor.same_storage(params.front().tensor));

    std::mt19937_64 rng(13);
    auto x = random_tensor({2, 2, 16}, rng, false);
    ForwardContext ctx;
    auto before = model.encode_pair(x, x, ctx);
    Tensor w = model.params().encoder[0].proj;
    w.values_mut()[0] += 0.5;
    auto after = model.encode_pair(x, x, ctx);
    CHECK(after.features_s.at(0) != before.features_s.at(0));
    CHECK(after.features_t.at(0) != before.features_t.at(0));
}

TEST_CASE("end-to-end gradient on a reduced model") {
    auto cfg = small_config();
    cfg.channels = 1;
    cfg.kernels = {3, 5, 7};
    CaflaeModel model(cfg, 21);
    std::mt19937_64 rng(22);
    auto xs = random_tensor({2, 1, 16}, rng, false, -2.0, 2.0);
    auto xt = random_tensor({2, 1, 16}, rng, false, -2.0, 2.0);
    const std::vector<std::optional<double>> labels{0.2, 0.7};
    auto loss = [&] {
        ForwardContext ctx{ops::Mode::Train, nullptr};
        auto enc = model.encode_pair(xs, xt, ctx);
        auto rs = model.decode(enc, Domain::Source, ctx);
        auto rt = model.decode(enc, Domain::Target, ctx);
        auto scf = scf_loss(enc.hi, labels);
        auto mmd = mmd_loss(enc.features_s, enc.features_t, 1.0);
        return ops::add(ops::add(scf, mmd), reconstruction_loss(xs, rs, xt, rt));
    };
    auto r = grad_check(loss, as_pairs(model.parameters()));
    INFO(r.worst);
    CHECK(r.max_rel_err < 1e-4);
}

TEST_CASE("config validation") {
    auto cfg = small_config();
    cfg.kernels = {3, 5};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.kernels = {4};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.heads = 3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = small_config();
    cfg.single_kernel = true;
    CHECK(cfg.active_kernels() == std::vector<std::size_t>{3});
    CHECK(decode_from_from_string("hi_scalar") == DecodeFrom::HiScalar);
}

}
