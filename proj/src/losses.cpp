#include "dahi/losses.hpp"

#include "dahi/ops.hpp"
#include "dahi/signal.hpp"

#include <algorithm>
#include <cmath>

namespace dahi {

ScfForm scf_form_from_string(const std::string& s) {
    if (s == "normalized") {
        return ScfForm::NormalizedIncreasing;
    }
    if (s == "literal") {
        return ScfForm::Literal;
    }
    throw ConfigError("unknown scf form '" + s + "' (expected normalized or literal)");
}

std::string to_string(ScfForm f) { return f == ScfForm::Literal ? "literal" : "normalized"; }

void ScfConfig::validate() const {
    if (!(alpha > 0.0)) {
        throw ConfigError("scf alpha must be positive");
    }
    if (failure_index < 1) {
        throw ConfigError("scf failure index must be >= 1");
    }
}

double scf_value(std::size_t t, const ScfConfig& cfg) {
    cfg.validate();
    if (t > cfg.failure_index) {
        throw IndexError("scf_value: t=" + std::to_string(t) + " beyond failure index " +
                         std::to_string(cfg.failure_index));
    }
    const double tn = static_cast<double>(cfg.failure_index);
    const double td = static_cast<double>(t);
    if (cfg.form == ScfForm::Literal) {
        return std::pow(td, cfg.alpha) / std::pow(tn, cfg.alpha) + 1.0;
    }
    return std::pow(td / tn, cfg.alpha);
}

Tensor mmd_loss(const Tensor& fs, const Tensor& ft, std::optional<double> sigma, double* sigma_used) {
    if (fs.rank() != 2 || ft.rank() != 2 || fs.dim(1) != ft.dim(1)) {
        throw DimensionError("mmd_loss: expected [n, f] and [m, f], got " + shape_str(fs.shape()) + " and " +
                             shape_str(ft.shape()));
    }
    if (fs.dim(0) == 0 || ft.dim(0) == 0) {
        throw DimensionError("mmd_loss: empty feature batch");
    }
    double s = 1.0;
    if (sigma) {
        if (!(*sigma > 0.0)) {
            throw ConfigError("mmd_loss: sigma must be positive");
        }
        s = *sigma;
    } else {
        const std::size_t f = fs.dim(1);
        std::vector<std::vector<double>> rows;
        for (const Tensor* t : {&fs, &ft}) {
            auto v = t->values();
            for (std::size_t i = 0; i < t->dim(0); ++i) {
                rows.emplace_back(v.begin() + static_cast<std::ptrdiff_t>(i * f),
                                  v.begin() + static_cast<std::ptrdiff_t>((i + 1) * f));
            }
        }
        s = median_pairwise_distance(rows);
        if (!(s > 0.0)) {
            s = 1.0;
        }
    }
    if (sigma_used) {
        *sigma_used = s;
    }
    auto kss = ops::mean(ops::rbf_gram(fs, fs, s));
    auto ktt = ops::mean(ops::rbf_gram(ft, ft, s));
    auto kst = ops::mean(ops::rbf_gram(fs, ft, s));
    return ops::sub(ops::add(kss, ktt), ops::scale(kst, 2.0));
}

Tensor scf_loss(const Tensor& hi, std::span<const std::optional<double>> labels, Warnings* warnings) {
    if (hi.rank() != 1 || hi.dim(0) != labels.size()) {
        throw DimensionError("scf_loss: hi " + shape_str(hi.shape()) + " vs " + std::to_string(labels.size()) +
                             " labels");
    }
    std::vector<double> mask(labels.size(), 0.0);
    std::vector<double> target(labels.size(), 0.0);
    std::size_t count = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i]) {
            mask[i] = 1.0;
            target[i] = *labels[i];
            ++count;
        }
    }
    if (count == 0) {
        warn(warnings, "scf_loss: no labelled items in batch; loss is zero");
        return Tensor::scalar(0.0);
    }
    const Shape s{labels.size()};
    auto diff = ops::sub(hi, Tensor(s, std::move(target)));
    auto masked = ops::mul(ops::square(diff), Tensor(s, std::move(mask)));
    return ops::scale(ops::sum(masked), 1.0 / static_cast<double>(count));
}

Tensor reconstruction_loss(const Tensor& xs, const Tensor& xs_hat, const Tensor& xt, const Tensor& xt_hat) {
    return ops::add(ops::mse(xs_hat, xs), ops::mse(xt_hat, xt));
}

LossTriple dwa_update(DwaState& state, const LossTriple& epoch_losses, Warnings* warnings) {
    if (!(state.temperature > 0.0)) {
        throw ConfigError("dwa temperature must be positive");
    }
    state.history.push_back(epoch_losses);
    const std::size_t n = state.history.size();
    if (n < 2) {
        state.weights = {1.0, 1.0, 1.0};
        return state.weights;
    }
    const auto& last = state.history[n - 1];
    const auto& prev = state.history[n - 2];
    LossTriple r{};
    for (std::size_t p = 0; p < 3; ++p) {
        if (prev[p] == 0.0) {
            warn(warnings, "dwa: previous loss of term " + std::to_string(p) + " is zero; rate clamped to 1");
            r[p] = 1.0;
        } else {
            r[p] = last[p] / prev[p];
        }
    }
    LossTriple e{};
    double total = 0.0;
    const double top = std::max({r[0], r[1], r[2]}) / state.temperature;
    for (std::size_t p = 0; p < 3; ++p) {
        e[p] = std::exp(r[p] / state.temperature - top);
        total += e[p];
    }
    for (std::size_t p = 0; p < 3; ++p) {
        if (state.form == DwaForm::Normalized) {
            state.weights[p] = 3.0 * e[p] / total;
        } else {
            double denom = 0.0;
            for (std::size_t a = 0; a < 3; ++a) {
                denom += std::exp(r[a] / state.temperature);
            }
            state.weights[p] = std::exp((r[p] / state.temperature) / denom);
        }
    }
    return state.weights;
}

void AdamConfig::validate() const {
    if (!(lr > 0.0)) {
        throw ConfigError("learning rate must be positive");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) {
        throw ConfigError("adam eps must be positive");
    }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) {
            continue;
        }
        auto g = p.grad();
        auto w = p.values_mut();
        auto& m = m_[i];
        auto& v = v_[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            w[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        }
    }
}

} // namespace dahi
