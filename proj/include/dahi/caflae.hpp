#pragma once

#include "dahi/ops.hpp"
#include "dahi/signal.hpp"
#include "dahi/tensor.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace dahi {

enum class DecodeFrom { FusedLatent, HiScalar };

DecodeFrom decode_from_from_string(const std::string& s);
std::string to_string(DecodeFrom d);

struct CaflaeConfig {
    std::size_t channels = 2;
    std::size_t snapshot_len = 32;
    std::size_t patch_len = 8;
    std::size_t patch_stride = 4;
    std::vector<std::size_t> kernels{13, 23, 31};
    std::size_t width = 8;      // d
    std::size_t attn_width = 8; // c
    std::size_t heads = 2;
    std::size_t ffn_ratio = 4;  // r
    std::size_t encoder_blocks = 1;
    std::size_t decoder_blocks = 1;
    std::size_t head_hidden = 16;
    double dropout = 0.0;
    bool single_kernel = false;
    bool no_cross_attention = false;
    DecodeFrom decode_from = DecodeFrom::FusedLatent;

    void validate() const;
    std::vector<std::size_t> active_kernels() const;
    std::size_t patches() const { return (snapshot_len - patch_len) / patch_stride + 1; }
    std::size_t block_width() const { return channels * width; }
};

struct ForwardContext {
    ops::Mode mode = ops::Mode::Eval;
    std::mt19937_64* rng = nullptr;
};

struct RevInParams {
    Tensor gamma;
    Tensor beta;
};

struct RevInState {
    Tensor mean;  // [B, C]
    Tensor stdev; // [B, C]
    std::shared_ptr<bool> consumed;
};

struct RevInOutput {
    Tensor normalized;
    RevInState state;
};

RevInOutput revin_normalize(const Tensor& x, const RevInParams& p);
/// Inverse transform with the statistics stored by the matching normalize call.
Tensor revin_denormalize(const Tensor& y, const RevInParams& p, RevInState& state);

struct ConvFfnParams {
    Tensor up, up_bias, down, down_bias;
};

struct BranchParams {
    std::size_t kernel = 0;
    Tensor dw, dw_bias, pw, pw_bias, bn_gamma, bn_beta;
    ops::BatchNormState bn;
};

struct PmtcBlockParams {
    std::vector<BranchParams> branches;
    Tensor ln_gamma, ln_beta, proj, proj_bias;
    ConvFfnParams ffn1; // groups = channels
    ConvFfnParams ffn2; // groups = width, feature-major layout
};

struct BlockShape {
    std::size_t channels = 0;
    std::size_t width = 0;
    double dropout = 0.0;
};

/// Expand, GELU, dropout, contract with grouped pointwise convolutions.
Tensor conv_ffn(const Tensor& x, const ConvFfnParams& p, std::size_t groups, double dropout, ForwardContext& ctx);
/// Channel-grouped FFN followed by the feature-grouped FFN.
Tensor dual_conv_ffn(const Tensor& x, const ConvFfnParams& f1, const ConvFfnParams& f2, const BlockShape& shape,
                     ForwardContext& ctx);
/// Multi-kernel depthwise branches, LayerNorm, projection, dual ConvFFN and residual on [B, C*d, N].
Tensor pmtc_block(const Tensor& x, PmtcBlockParams& p, const BlockShape& shape, ForwardContext& ctx);

struct AttentionParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo, ln_gamma, ln_beta;
};

struct FusedPair {
    Tensor source;
    Tensor target;
};

FusedPair cross_attention_fuse(const Tensor& ys, const Tensor& yt, const AttentionParams& ps,
                               const AttentionParams& pt, std::size_t channels, std::size_t heads,
                               bool no_cross_attention);

struct UpBranchParams {
    std::size_t kernel = 0;
    Tensor tdw, pw, pw_bias, bn_gamma, bn_beta;
    ops::BatchNormState bn;
};

struct DecoderParams {
    Tensor in_proj, in_bias;
    std::vector<PmtcBlockParams> blocks;
    ConvFfnParams ffn1, ffn2;
    Tensor ln_gamma, ln_beta;
    std::vector<UpBranchParams> up;
    Tensor head, head_bias;
};

struct HeadParams {
    Tensor w1, b1, w2, b2;
};

struct CaflaeParams {
    RevInParams revin_s, revin_t;
    Tensor patch_w, patch_b;
    std::vector<PmtcBlockParams> encoder;
    AttentionParams attn_s, attn_t;
    HeadParams head;
    DecoderParams decoder_s, decoder_t;
};

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct NamedBuffer {
    std::string name;
    std::vector<double>* values;
};

struct EncodeResult {
    Tensor hi;          // [B]
    Tensor joint;       // [B, 2*C*d, Np]
    Tensor encoded_s;   // final encoder block output, [B, C*d, Np]
    Tensor encoded_t;
    Tensor features_s;  // GAP of encoded_s, [B, C*d]
    Tensor features_t;
    Tensor fused_s;
    Tensor fused_t;
    RevInState revin_s;
    RevInState revin_t;
};

class CaflaeModel {
public:
    explicit CaflaeModel(CaflaeConfig cfg, std::uint64_t seed = 0);
    CaflaeModel(const CaflaeModel&) = delete;
    CaflaeModel& operator=(const CaflaeModel&) = delete;
    CaflaeModel(CaflaeModel&&) = default;
    CaflaeModel& operator=(CaflaeModel&&) = default;

    const CaflaeConfig& config() const { return cfg_; }
    CaflaeParams& params() { return params_; }
    const CaflaeParams& params() const { return params_; }

    /// Learnable tensors in a fixed order with stable names.
    std::vector<NamedTensor> parameters() const;
    /// Batch-norm running statistics.
    std::vector<NamedBuffer> buffers();

    /// Inputs are [B, C, L] batches (or single [C, L] snapshots).
    EncodeResult encode_pair(const Tensor& xs, const Tensor& xt, ForwardContext& ctx);
    Tensor encode_single(const Tensor& x, ForwardContext& ctx);
    Tensor decode(EncodeResult& enc, Domain domain, ForwardContext& ctx);
    /// RevIN, patch embedding and encoder blocks for one domain.
    Tensor encoder_features(const Tensor& x, Domain domain, ForwardContext& ctx);

private:
    Tensor run_encoder(const Tensor& embedded, ForwardContext& ctx);
    Tensor as_batch(const Tensor& x) const;

    CaflaeConfig cfg_;
    CaflaeParams params_;
};

} // namespace dahi
