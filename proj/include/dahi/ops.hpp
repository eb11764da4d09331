#pragma once

#include "dahi/tensor.hpp"

#include <cstddef>
#include <random>
#include <vector>

// Differentiable operators. Sequence ops accept [C, L] or batched [B, C, L]
// inputs and return the same rank they were given.
namespace dahi::ops {

inline constexpr double kNormEps = 1e-5;

enum class Mode { Train, Eval };

// Elementwise and reductions.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor square(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor sigmoid(const Tensor& a);
/// Exact form x * Phi(x) with the Gaussian CDF.
Tensor gelu(const Tensor& a);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Softmax over the last axis.
Tensor softmax(const Tensor& a);
/// Mean squared error averaged over every element.
Tensor mse(const Tensor& a, const Tensor& b);

// Shape manipulation.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
/// Slice [start, start+len) of one axis.
Tensor narrow(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len);
/// Output[..., j] = a[..., j + offset], zero where the source index is out of range.
Tensor window_last(const Tensor& a, std::size_t out_len, std::ptrdiff_t offset);
/// [B, outer*inner, L] -> [B, inner*outer, L], swapping the two grouped channel axes.
Tensor permute_groups(const Tensor& a, std::size_t outer, std::size_t inner);

// Last-axis reductions and broadcasts: `m` has the shape of `x` without its last axis.
Tensor mean_last(const Tensor& x);
Tensor add_last(const Tensor& x, const Tensor& m);
Tensor sub_last(const Tensor& x, const Tensor& m);
Tensor mul_last(const Tensor& x, const Tensor& m);
Tensor div_last(const Tensor& x, const Tensor& m);

/// y = gamma[c] * x + beta[c] over the channel axis.
Tensor affine_channels(const Tensor& x, const Tensor& gamma, const Tensor& beta);
/// Exact inverse of affine_channels: (y - beta[c]) / gamma[c].
Tensor affine_channels_inverse(const Tensor& y, const Tensor& gamma, const Tensor& beta);

/// x: [in] or [B, in]; weight: [out, in]; bias optional [out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Convolutions.
Tensor conv1d_depthwise(const Tensor& x, const Tensor& kernel, std::size_t stride, std::size_t padding,
                        const Tensor& bias = {});
Tensor conv1d_pointwise(const Tensor& x, const Tensor& weight, std::size_t groups, const Tensor& bias = {});
/// Adjoint of conv1d_depthwise (zero padding) with the same kernel and stride.
Tensor conv1d_transposed_depthwise(const Tensor& x, const Tensor& kernel, std::size_t stride);
/// Strided conv stem applied to every channel with one shared [d, P] filter bank.
/// x: [B, C, L] -> [B, C*d, Np], rows ordered channel-major.
Tensor patch_embed(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride);

// Normalization and regularization.
/// Normalizes over axis 1 of a rank-3 tensor, or over the last axis otherwise.
Tensor layer_norm(const Tensor& x, const Tensor& gamma = {}, const Tensor& beta = {}, double eps = kNormEps);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;

    explicit BatchNormState(std::size_t channels = 0, double momentum_ = 0.1)
        : running_mean(channels, 0.0), running_var(channels, 1.0), momentum(momentum_) {}
};

/// Per-channel normalization over (batch, length). Train mode uses and updates batch
/// statistics; Eval mode uses the running statistics.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, Mode mode,
                  double eps = kNormEps);

/// Inverted dropout with a mask drawn from `rng`. Identity in Eval mode or at rate 0.
Tensor dropout(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng);

// Attention and kernels.
/// Scaled dot-product attention over the last (token) axis. q, k, v: [B, E, N];
/// E is split into `heads` contiguous slices.
Tensor multihead_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads);
/// Attention probabilities [B, heads, N_q, N_k] for inspection; not differentiable.
std::vector<double> attention_probabilities(const Tensor& q, const Tensor& k, std::size_t heads);

/// Gaussian Gram matrix exp(-|x_i - y_j|^2 / (2 sigma^2)); x: [n, f], y: [m, f] -> [n, m].
Tensor rbf_gram(const Tensor& x, const Tensor& y, double sigma);

} // namespace dahi::ops
