#include "dahi/caflae.hpp"

#include <cmath>

namespace dahi {

namespace {

class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    Tensor uniform(Shape shape, std::size_t fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        std::vector<double> v(shape_numel(shape));
        for (auto& x : v) {
            x = u(rng_);
        }
        return Tensor(std::move(shape), std::move(v), true);
    }

    static Tensor zeros(Shape shape) { return Tensor::zeros(std::move(shape), true); }
    static Tensor ones(Shape shape) { return Tensor::full(std::move(shape), 1.0, true); }

private:
    std::mt19937_64 rng_;
};

ConvFfnParams make_ffn(Initializer& init, std::size_t width, std::size_t ratio, std::size_t groups) {
    ConvFfnParams p;
    const std::size_t hidden = width * ratio;
    p.up = init.uniform({hidden, width / groups}, width / groups);
    p.up_bias = Initializer::zeros({hidden});
    p.down = init.uniform({width, hidden / groups}, hidden / groups);
    p.down_bias = Initializer::zeros({width});
    return p;
}

PmtcBlockParams make_block(Initializer& init, const CaflaeConfig& cfg) {
    const std::size_t r = cfg.block_width();
    const std::size_t per_group = cfg.width;
    PmtcBlockParams p;
    for (auto k : cfg.active_kernels()) {
        BranchParams b;
        b.kernel = k;
        b.dw = init.uniform({r, k}, k);
        b.dw_bias = Initializer::zeros({r});
        b.pw = init.uniform({r, per_group}, per_group);
        b.pw_bias = Initializer::zeros({r});
        b.bn_gamma = Initializer::ones({r});
        b.bn_beta = Initializer::zeros({r});
        b.bn = ops::BatchNormState(r);
        p.branches.push_back(std::move(b));
    }
    const std::size_t cat = r * p.branches.size();
    p.ln_gamma = Initializer::ones({cat});
    p.ln_beta = Initializer::zeros({cat});
    p.proj = init.uniform({r, cat}, cat);
    p.proj_bias = Initializer::zeros({r});
    p.ffn1 = make_ffn(init, r, cfg.ffn_ratio, cfg.channels);
    p.ffn2 = make_ffn(init, r, cfg.ffn_ratio, cfg.width);
    return p;
}

AttentionParams make_attention(Initializer& init, const CaflaeConfig& cfg) {
    const std::size_t d = cfg.width;
    const std::size_t c = cfg.attn_width;
    AttentionParams p;
    p.wq = init.uniform({c, d}, d);
    p.bq = Initializer::zeros({c});
    p.wk = init.uniform({c, d}, d);
    p.bk = Initializer::zeros({c});
    p.wv = init.uniform({c, d}, d);
    p.bv = Initializer::zeros({c});
    p.wo = init.uniform({d, c}, c);
    p.bo = Initializer::zeros({d});
    p.ln_gamma = Initializer::ones({d});
    p.ln_beta = Initializer::zeros({d});
    return p;
}

DecoderParams make_decoder(Initializer& init, const CaflaeConfig& cfg) {
    const std::size_t r = cfg.block_width();
    DecoderParams p;
    const std::size_t in = cfg.decode_from == DecodeFrom::FusedLatent ? 2 * r : 1;
    p.in_proj = init.uniform({r, in}, in);
    p.in_bias = Initializer::zeros({r});
    for (std::size_t i = 0; i < cfg.decoder_blocks; ++i) {
        p.blocks.push_back(make_block(init, cfg));
    }
    p.ffn1 = make_ffn(init, r, cfg.ffn_ratio, cfg.channels);
    p.ffn2 = make_ffn(init, r, cfg.ffn_ratio, cfg.width);
    p.ln_gamma = Initializer::ones({r});
    p.ln_beta = Initializer::zeros({r});
    for (auto k : cfg.active_kernels()) {
        UpBranchParams u;
        u.kernel = k;
        u.tdw = init.uniform({r, k}, k);
        u.pw = init.uniform({r, cfg.width}, cfg.width);
        u.pw_bias = Initializer::zeros({r});
        u.bn_gamma = Initializer::ones({r});
        u.bn_beta = Initializer::zeros({r});
        u.bn = ops::BatchNormState(r);
        p.up.push_back(std::move(u));
    }
    p.head = init.uniform({cfg.channels, cfg.width}, cfg.width);
    p.head_bias = Initializer::zeros({cfg.channels});
    return p;
}

void list_ffn(std::vector<NamedTensor>& out, const std::string& prefix, const ConvFfnParams& f) {
    out.push_back({prefix + ".up", f.up});
    out.push_back({prefix + ".up_bias", f.up_bias});
    out.push_back({prefix + ".down", f.down});
    out.push_back({prefix + ".down_bias", f.down_bias});
}

void list_block(std::vector<NamedTensor>& out, const std::string& prefix, const PmtcBlockParams& b) {
    for (const auto& br : b.branches) {
        const std::string p = prefix + ".k" + std::to_string(br.kernel);
        out.push_back({p + ".dw", br.dw});
        out.push_back({p + ".dw_bias", br.dw_bias});
        out.push_back({p + ".pw", br.pw});
        out.push_back({p + ".pw_bias", br.pw_bias});
        out.push_back({p + ".bn_gamma", br.bn_gamma});
        out.push_back({p + ".bn_beta", br.bn_beta});
    }
    out.push_back({prefix + ".ln_gamma", b.ln_gamma});
    out.push_back({prefix + ".ln_beta", b.ln_beta});
    out.push_back({prefix + ".proj", b.proj});
    out.push_back({prefix + ".proj_bias", b.proj_bias});
    list_ffn(out, prefix + ".ffn1", b.ffn1);
    list_ffn(out, prefix + ".ffn2", b.ffn2);
}

void list_attention(std::vector<NamedTensor>& out, const std::string& prefix, const AttentionParams& a) {
    out.push_back({prefix + ".wq", a.wq});
    out.push_back({prefix + ".bq", a.bq});
    out.push_back({prefix + ".wk", a.wk});
    out.push_back({prefix + ".bk", a.bk});
    out.push_back({prefix + ".wv", a.wv});
    out.push_back({prefix + ".bv", a.bv});
    out.push_back({prefix + ".wo", a.wo});
    out.push_back({prefix + ".bo", a.bo});
    out.push_back({prefix + ".ln_gamma", a.ln_gamma});
    out.push_back({prefix + ".ln_beta", a.ln_beta});
}

void list_decoder(std::vector<NamedTensor>& out, const std::string& prefix, const DecoderParams& d) {
    out.push_back({prefix + ".in_proj", d.in_proj});
    out.push_back({prefix + ".in_bias", d.in_bias});
    for (std::size_t i = 0; i < d.blocks.size(); ++i) {
        list_block(out, prefix + ".block" + std::to_string(i), d.blocks[i]);
    }
    list_ffn(out, prefix + ".ffn1", d.ffn1);
    list_ffn(out, prefix + ".ffn2", d.ffn2);
    out.push_back({prefix + ".ln_gamma", d.ln_gamma});
    out.push_back({prefix + ".ln_beta", d.ln_beta});
    for (const auto& u : d.up) {
        const std::string p = prefix + ".up_k" + std::to_string(u.kernel);
        out.push_back({p + ".tdw", u.tdw});
        out.push_back({p + ".pw", u.pw});
        out.push_back({p + ".pw_bias", u.pw_bias});
        out.push_back({p + ".bn_gamma", u.bn_gamma});
        out.push_back({p + ".bn_beta", u.bn_beta});
    }
    out.push_back({prefix + ".head", d.head});
    out.push_back({prefix + ".head_bias", d.head_bias});
}

void block_buffers(std::vector<NamedBuffer>& out, const std::string& prefix, PmtcBlockParams& b) {
    for (auto& br : b.branches) {
        const std::string p = prefix + ".k" + std::to_string(br.kernel);
        out.push_back({p + ".bn_mean", &br.bn.running_mean});
        out.push_back({p + ".bn_var", &br.bn.running_var});
    }
}

void decoder_buffers(std::vector<NamedBuffer>& out, const std::string& prefix, DecoderParams& d) {
    for (std::size_t i = 0; i < d.blocks.size(); ++i) {
        block_buffers(out, prefix + ".block" + std::to_string(i), d.blocks[i]);
    }
    for (auto& u : d.up) {
        const std::string p = prefix + ".up_k" + std::to_string(u.kernel);
        out.push_back({p + ".bn_mean", &u.bn.running_mean});
        out.push_back({p + ".bn_var", &u.bn.running_var});
    }
}

Tensor maybe_dropout(const Tensor& x, double rate, ForwardContext& ctx) {
    if (rate == 0.0 || ctx.mode == ops::Mode::Eval) {
        return x;
    }
    if (!ctx.rng) {
        throw UsageError("dropout in train mode needs a random generator in the forward context");
    }
    return ops::dropout(x, rate, ctx.mode, *ctx.rng);
}

} // namespace

DecodeFrom decode_from_from_string(const std::string& s) {
    if (s == "fused_latent") {
        return DecodeFrom::FusedLatent;
    }
    if (s == "hi_scalar") {
        return DecodeFrom::HiScalar;
    }
    throw ConfigError("unknown decode_from '" + s + "' (expected fused_latent or hi_scalar)");
}

std::string to_string(DecodeFrom d) { return d == DecodeFrom::HiScalar ? "hi_scalar" : "fused_latent"; }

void CaflaeConfig::validate() const {
    if (channels == 0 || snapshot_len == 0 || patch_len == 0 || patch_stride == 0 || width == 0 ||
        attn_width == 0 || heads == 0 || ffn_ratio == 0 || head_hidden == 0) {
        throw ConfigError("model dimensions must all be positive");
    }
    if (patch_len > snapshot_len) {
        throw ConfigError("patch length " + std::to_string(patch_len) + " exceeds snapshot length " +
                          std::to_string(snapshot_len));
    }
    if (kernels.size() != 1 && kernels.size() != 3) {
        throw ConfigError("kernel set must hold 1 or 3 kernels, got " + std::to_string(kernels.size()));
    }
    for (auto k : kernels) {
        if (k == 0 || k % 2 == 0) {
            throw ConfigError("kernel sizes must be odd and positive, got " + std::to_string(k));
        }
    }
    if (attn_width % heads != 0) {
        throw ConfigError("attention width " + std::to_string(attn_width) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("dropout must lie in [0, 1)");
    }
}

std::vector<std::size_t> CaflaeConfig::active_kernels() const {
    if (single_kernel) {
        return {kernels.front()};
    }
    return kernels;
}

RevInOutput revin_normalize(const Tensor& x, const RevInParams& p) {
    if (x.rank() != 3) {
        throw DimensionError("revin_normalize expects [B, C, L], got " + shape_str(x.shape()));
    }
    RevInOutput out;
    out.state.mean = ops::mean_last(x);
    auto centered = ops::sub_last(x, out.state.mean);
    auto var = ops::mean_last(ops::square(centered));
    out.state.stdev = ops::sqrt(ops::add_scalar(var, ops::kNormEps));
    out.state.consumed = std::make_shared<bool>(false);
    out.normalized = ops::affine_channels(ops::div_last(centered, out.state.stdev), p.gamma, p.beta);
    return out;
}

Tensor revin_denormalize(const Tensor& y, const RevInParams& p, RevInState& state) {
    if (!state.mean.defined() || !state.stdev.defined() || !state.consumed) {
        throw UsageError("revin_denormalize: no stored statistics from a matching normalize call");
    }
    if (*state.consumed) {
        throw UsageError("revin_denormalize: statistics were already consumed");
    }
    *state.consumed = true;
    auto base = ops::affine_channels_inverse(y, p.gamma, p.beta);
    return ops::add_last(ops::mul_last(base, state.stdev), state.mean);
}

Tensor conv_ffn(const Tensor& x, const ConvFfnParams& p, std::size_t groups, double dropout, ForwardContext& ctx) {
    auto h = ops::gelu(ops::conv1d_pointwise(x, p.up, groups, p.up_bias));
    h = maybe_dropout(h, dropout, ctx);
    return ops::conv1d_pointwise(h, p.down, groups, p.down_bias);
}

Tensor dual_conv_ffn(const Tensor& x, const ConvFfnParams& f1, const ConvFfnParams& f2, const BlockShape& shape,
                     ForwardContext& ctx) {
    auto h = conv_ffn(x, f1, shape.channels, shape.dropout, ctx);
    h = ops::permute_groups(h, shape.channels, shape.width);
    h = conv_ffn(h, f2, shape.width, shape.dropout, ctx);
    return ops::permute_groups(h, shape.width, shape.channels);
}

Tensor pmtc_block(const Tensor& x, PmtcBlockParams& p, const BlockShape& shape, ForwardContext& ctx) {
    if (x.rank() != 3 || x.dim(1) != shape.channels * shape.width) {
        throw DimensionError("pmtc_block expects [B, C*d, N], got " + shape_str(x.shape()));
    }
    std::vector<Tensor> parts;
    for (auto& br : p.branches) {
        auto h = ops::conv1d_depthwise(x, br.dw, 1, (br.kernel - 1) / 2, br.dw_bias);
        h = ops::conv1d_pointwise(h, br.pw, shape.channels, br.pw_bias);
        h = ops::batch_norm(h, br.bn_gamma, br.bn_beta, br.bn, ctx.mode);
        h = maybe_dropout(ops::gelu(h), shape.dropout, ctx);
        parts.push_back(h);
    }
    auto cat = parts.size() == 1 ? parts.front() : ops::concat(parts, 1);
    auto u = ops::conv1d_pointwise(ops::layer_norm(cat, p.ln_gamma, p.ln_beta), p.proj, 1, p.proj_bias);
    return ops::add(x, dual_conv_ffn(u, p.ffn1, p.ffn2, shape, ctx));
}

FusedPair cross_attention_fuse(const Tensor& ys, const Tensor& yt, const AttentionParams& ps,
                               const AttentionParams& pt, std::size_t channels, std::size_t heads,
                               bool no_cross_attention) {
    if (ys.shape() != yt.shape() || ys.rank() != 3) {
        throw DimensionError("cross_attention_fuse: shapes " + shape_str(ys.shape()) + " and " +
                             shape_str(yt.shape()) + " must match and be [B, C*d, N]");
    }
    const std::size_t b = ys.dim(0);
    const std::size_t r = ys.dim(1);
    const std::size_t n = ys.dim(2);
    if (r % channels != 0) {
        throw DimensionError("cross_attention_fuse: width " + std::to_string(r) + " not a multiple of " +
                             std::to_string(channels) + " channels");
    }
    const std::size_t d = r / channels;
    if (ps.wq.dim(0) % heads != 0) {
        throw ConfigError("attention width " + std::to_string(ps.wq.dim(0)) + " is not divisible by " +
                          std::to_string(heads) + " heads");
    }
    const Shape folded{b * channels, d, n};
    auto fs = ops::reshape(ys, folded);
    auto ft = ops::reshape(yt, folded);
    FusedPair out;
    if (no_cross_attention) {
        out.source = ops::reshape(ops::layer_norm(fs, ps.ln_gamma, ps.ln_beta), ys.shape());
        out.target = ops::reshape(ops::layer_norm(ft, pt.ln_gamma, pt.ln_beta), yt.shape());
        return out;
    }
    auto qs = ops::conv1d_pointwise(fs, ps.wq, 1, ps.bq);
    auto ks = ops::conv1d_pointwise(fs, ps.wk, 1, ps.bk);
    auto vs = ops::conv1d_pointwise(fs, ps.wv, 1, ps.bv);
    auto qt = ops::conv1d_pointwise(ft, pt.wq, 1, pt.bq);
    auto kt = ops::conv1d_pointwise(ft, pt.wk, 1, pt.bk);
    auto vt = ops::conv1d_pointwise(ft, pt.wv, 1, pt.bv);
    auto as = ops::conv1d_pointwise(ops::multihead_attention(qs, kt, vt, heads), ps.wo, 1, ps.bo);
    auto at = ops::conv1d_pointwise(ops::multihead_attention(qt, ks, vs, heads), pt.wo, 1, pt.bo);
    out.source = ops::reshape(ops::layer_norm(ops::add(fs, as), ps.ln_gamma, ps.ln_beta), ys.shape());
    out.target = ops::reshape(ops::layer_norm(ops::add(ft, at), pt.ln_gamma, pt.ln_beta), yt.shape());
    return out;
}

CaflaeModel::CaflaeModel(CaflaeConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Initializer init(seed);
    const std::size_t c = cfg_.channels;
    params_.revin_s = {Initializer::ones({c}), Initializer::zeros({c})};
    params_.revin_t = {Initializer::ones({c}), Initializer::zeros({c})};
    params_.patch_w = init.uniform({cfg_.width, cfg_.patch_len}, cfg_.patch_len);
    params_.patch_b = Initializer::zeros({cfg_.width});
    for (std::size_t i = 0; i < cfg_.encoder_blocks; ++i) {
        params_.encoder.push_back(make_block(init, cfg_));
    }
    params_.attn_s = make_attention(init, cfg_);
    params_.attn_t = make_attention(init, cfg_);
    const std::size_t joint = 2 * cfg_.block_width();
    params_.head.w1 = init.uniform({cfg_.head_hidden, joint}, joint);
    params_.head.b1 = Initializer::zeros({cfg_.head_hidden});
    params_.head.w2 = init.uniform({1, cfg_.head_hidden}, cfg_.head_hidden);
    params_.head.b2 = Initializer::zeros({1});
    params_.decoder_s = make_decoder(init, cfg_);
    params_.decoder_t = make_decoder(init, cfg_);
}

std::vector<NamedTensor> CaflaeModel::parameters() const {
    std::vector<NamedTensor> out;
    out.push_back({"revin_s.gamma", params_.revin_s.gamma});
    out.push_back({"revin_s.beta", params_.revin_s.beta});
    out.push_back({"revin_t.gamma", params_.revin_t.gamma});
    out.push_back({"revin_t.beta", params_.revin_t.beta});
    out.push_back({"patch.w", params_.patch_w});
    out.push_back({"patch.b", params_.patch_b});
    for (std::size_t i = 0; i < params_.encoder.size(); ++i) {
        list_block(out, "encoder.block" + std::to_string(i), params_.encoder[i]);
    }
    list_attention(out, "attn_s", params_.attn_s);
    list_attention(out, "attn_t", params_.attn_t);
    out.push_back({"head.w1", params_.head.w1});
    out.push_back({"head.b1", params_.head.b1});
    out.push_back({"head.w2", params_.head.w2});
    out.push_back({"head.b2", params_.head.b2});
    list_decoder(out, "decoder_s", params_.decoder_s);
    list_decoder(out, "decoder_t", params_.decoder_t);
    return out;
}

std::vector<NamedBuffer> CaflaeModel::buffers() {
    std::vector<NamedBuffer> out;
    for (std::size_t i = 0; i < params_.encoder.size(); ++i) {
        block_buffers(out, "encoder.block" + std::to_string(i), params_.encoder[i]);
    }
    decoder_buffers(out, "decoder_s", params_.decoder_s);
    decoder_buffers(out, "decoder_t", params_.decoder_t);
    return out;
}

Tensor CaflaeModel::as_batch(const Tensor& x) const {
    if (x.rank() == 2) {
        return as_batch(ops::reshape(x, {1, x.dim(0), x.dim(1)}));
    }
    if (x.rank() != 3 || x.dim(1) != cfg_.channels || x.dim(2) != cfg_.snapshot_len) {
        throw DimensionError("model input must be [B, " + std::to_string(cfg_.channels) + ", " +
                             std::to_string(cfg_.snapshot_len) + "], got " + shape_str(x.shape()));
    }
    return x;
}

Tensor CaflaeModel::run_encoder(const Tensor& embedded, ForwardContext& ctx) {
    const BlockShape shape{cfg_.channels, cfg_.width, cfg_.dropout};
    Tensor h = embedded;
    for (auto& block : params_.encoder) {
        h = pmtc_block(h, block, shape, ctx);
    }
    return h;
}

Tensor CaflaeModel::encoder_features(const Tensor& x, Domain domain, ForwardContext& ctx) {
    const auto& rp = domain == Domain::Source ? params_.revin_s : params_.revin_t;
    auto norm = revin_normalize(as_batch(x), rp);
    return run_encoder(ops::patch_embed(norm.normalized, params_.patch_w, params_.patch_b, cfg_.patch_stride), ctx);
}

EncodeResult CaflaeModel::encode_pair(const Tensor& xs_in, const Tensor& xt_in, ForwardContext& ctx) {
    const Tensor xs = as_batch(xs_in);
    const Tensor xt = as_batch(xt_in);
    if (xs.dim(0) != xt.dim(0)) {
        throw DimensionError("encode_pair: batch sizes differ (" + std::to_string(xs.dim(0)) + " vs " +
                             std::to_string(xt.dim(0)) + ")");
    }
    const std::size_t b = xs.dim(0);
    EncodeResult out;
    auto ns = revin_normalize(xs, params_.revin_s);
    auto nt = revin_normalize(xt, params_.revin_t);
    out.revin_s = ns.state;
    out.revin_t = nt.state;
    // shared encoder over the joint batch
    auto both = ops::concat({ns.normalized, nt.normalized}, 0);
    auto enc = run_encoder(ops::patch_embed(both, params_.patch_w, params_.patch_b, cfg_.patch_stride), ctx);
    out.encoded_s = ops::narrow(enc, 0, 0, b);
    out.encoded_t = ops::narrow(enc, 0, b, b);
    out.features_s = ops::mean_last(out.encoded_s);
    out.features_t = ops::mean_last(out.encoded_t);
    auto fused = cross_attention_fuse(out.encoded_s, out.encoded_t, params_.attn_s, params_.attn_t, cfg_.channels,
                                      cfg_.heads, cfg_.no_cross_attention);
    out.fused_s = fused.source;
    out.fused_t = fused.target;
    out.joint = ops::concat({fused.source, fused.target}, 1);
    auto pooled = ops::mean_last(out.joint);
    auto h = ops::gelu(ops::linear(pooled, params_.head.w1, params_.head.b1));
    auto logit = ops::linear(h, params_.head.w2, params_.head.b2);
    out.hi = ops::reshape(ops::sigmoid(logit), {b});
    return out;
}

Tensor CaflaeModel::encode_single(const Tensor& x, ForwardContext& ctx) { return encode_pair(x, x, ctx).hi; }

Tensor CaflaeModel::decode(EncodeResult& enc, Domain domain, ForwardContext& ctx) {
    auto& dp = domain == Domain::Source ? params_.decoder_s : params_.decoder_t;
    auto& state = domain == Domain::Source ? enc.revin_s : enc.revin_t;
    const auto& rp = domain == Domain::Source ? params_.revin_s : params_.revin_t;
    if (!state.mean.defined()) {
        throw UsageError("decode: missing RevIN statistics for the " + to_string(domain) + " domain");
    }
    const BlockShape shape{cfg_.channels, cfg_.width, cfg_.dropout};
    Tensor h;
    if (cfg_.decode_from == DecodeFrom::FusedLatent) {
        if (!enc.joint.defined()) {
            throw UsageError("decode: missing fused latent");
        }
        h = ops::conv1d_pointwise(enc.joint, dp.in_proj, 1, dp.in_bias);
    } else {
        const std::size_t b = enc.hi.dim(0);
        auto hi = ops::reshape(enc.hi, {b, 1});
        auto lifted = ops::add_last(Tensor::zeros({b, 1, cfg_.patches()}), hi);
        h = ops::conv1d_pointwise(lifted, dp.in_proj, 1, dp.in_bias);
    }
    for (auto& block : dp.blocks) {
        h = pmtc_block(h, block, shape, ctx);
    }
    h = ops::layer_norm(ops::add(h, dual_conv_ffn(h, dp.ffn1, dp.ffn2, shape, ctx)), dp.ln_gamma, dp.ln_beta);
    Tensor sum;
    for (auto& u : dp.up) {
        auto g = ops::conv1d_transposed_depthwise(h, u.tdw, cfg_.patch_stride);
        const auto offset = (static_cast<std::ptrdiff_t>(u.kernel) - static_cast<std::ptrdiff_t>(cfg_.patch_len)) / 2;
        g = ops::window_last(g, cfg_.snapshot_len, offset);
        g = ops::conv1d_pointwise(g, u.pw, cfg_.channels, u.pw_bias);
        g = ops::batch_norm(g, u.bn_gamma, u.bn_beta, u.bn, ctx.mode);
        g = maybe_dropout(ops::gelu(g), cfg_.dropout, ctx);
        sum = sum.defined() ? ops::add(sum, g) : g;
    }
    auto y = ops::conv1d_pointwise(sum, dp.head, cfg_.channels, dp.head_bias);
    return revin_denormalize(y, rp, state);
}

} // namespace dahi
