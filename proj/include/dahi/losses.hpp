#pragma once

#include "dahi/error.hpp"
#include "dahi/tensor.hpp"

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dahi {

enum class ScfForm { NormalizedIncreasing, Literal };

ScfForm scf_form_from_string(const std::string& s);
std::string to_string(ScfForm f);

struct ScfConfig {
    double alpha = 1.0;
    std::size_t failure_index = 1;
    ScfForm form = ScfForm::NormalizedIncreasing;

    void validate() const;
};

/// Stage-curve label for time index t in [0, failure_index].
double scf_value(std::size_t t, const ScfConfig& cfg);

/// Squared MMD (biased V-statistic) between feature rows fs [n, f] and ft [m, f].
/// Without a fixed sigma the bandwidth is the median pairwise distance of the pooled
/// rows (treated as a constant), falling back to 1 when that median is zero.
Tensor mmd_loss(const Tensor& fs, const Tensor& ft, std::optional<double> sigma = std::nullopt,
                double* sigma_used = nullptr);

/// Mean squared error over the items that carry a label.
Tensor scf_loss(const Tensor& hi, std::span<const std::optional<double>> labels, Warnings* warnings = nullptr);

/// Per-element mean squared error of each domain, summed over the two domains.
Tensor reconstruction_loss(const Tensor& xs, const Tensor& xs_hat, const Tensor& xt, const Tensor& xt_hat);

using LossTriple = std::array<double, 3>; // scf, mmd, rec

enum class DwaForm { Normalized, Literal };

struct DwaState {
    double temperature = 2.0;
    DwaForm form = DwaForm::Normalized;
    std::vector<LossTriple> history;
    LossTriple weights{1.0, 1.0, 1.0};
};

/// Records one finished epoch's mean losses and returns the weights for the next epoch.
LossTriple dwa_update(DwaState& state, const LossTriple& epoch_losses, Warnings* warnings = nullptr);

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const;
};

class Adam {
public:
    Adam(std::vector<Tensor> params, AdamConfig cfg);

    void zero_grad();
    void step();
    std::size_t steps() const { return t_; }

private:
    std::vector<Tensor> params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t t_ = 0;
};

} // namespace dahi
