#include "dahi/training.hpp"

#include <chrono>
#include <sstream>

namespace dahi {

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw ConfigError("batch size must be >= 1");
    }
    if (weighting == WeightingMode::Dwa && epochs > 0 && epochs < 3) {
        throw ConfigError("dynamic weight averaging needs at least 3 epochs, got " + std::to_string(epochs));
    }
    if (!(dwa_temperature > 0.0)) {
        throw ConfigError("dwa temperature must be positive");
    }
    for (auto w : fixed_weights) {
        if (!(w >= 0.0)) {
            throw ConfigError("fixed loss weights must be non-negative");
        }
    }
    if (mmd_sigma && !(*mmd_sigma > 0.0)) {
        throw ConfigError("mmd sigma must be positive");
    }
    adam.validate();
}

std::vector<double> RunDiagnostics::series(std::size_t term) const {
    std::vector<double> out;
    for (const auto& e : epochs) {
        out.push_back(term < 3 ? e.losses[term] : e.total);
    }
    return out;
}

TrainResult train(const RtFSeries& src, const RtFSeries& tgt, const StagePlan& plan, const CaflaeConfig& model_cfg,
                  const TrainConfig& cfg) {
    cfg.validate();
    model_cfg.validate();
    if (src.channels != model_cfg.channels || tgt.channels != model_cfg.channels ||
        src.snapshot_len != model_cfg.snapshot_len || tgt.snapshot_len != model_cfg.snapshot_len) {
        throw DimensionError("series shape does not match the model configuration");
    }
    TrainResult result{CaflaeModel(model_cfg, cfg.seed), {}, {}};
    auto& model = result.model;
    auto& diag = result.diagnostics;

    std::vector<Tensor> params;
    for (auto& p : model.parameters()) {
        params.push_back(p.tensor);
    }
    Adam opt(params, cfg.adam);
    std::seed_seq dropout_seed{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 7u};
    std::mt19937_64 rng(dropout_seed);
    const std::uint64_t sampling_seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;

    DwaState dwa;
    dwa.temperature = cfg.dwa_temperature;
    dwa.form = cfg.dwa_form;
    LossTriple weights = cfg.weighting == WeightingMode::Dwa ? LossTriple{1.0, 1.0, 1.0} : cfg.fixed_weights;

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        auto batches = sample_epoch(plan, cfg.batch_size, sampling_seed, cfg.sampling, epoch, &diag.warnings);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.weights = weights;
        for (const auto& mb : batches) {
            StepRecord step;
            step.epoch = epoch;
            step.batch = mb.ordinal;
            step.stage = mb.stage;
            step.weights = weights;
            try {
                ForwardContext ctx{ops::Mode::Train, &rng};
                auto xs = src.batch(mb.source);
                auto xt = tgt.batch(mb.target);
                std::vector<std::optional<double>> labels;
                for (auto i : mb.source) {
                    labels.emplace_back(plan.source_labels.at(i));
                }
                auto enc = model.encode_pair(xs, xt, ctx);
                auto rs = model.decode(enc, Domain::Source, ctx);
                auto rt = model.decode(enc, Domain::Target, ctx);
                auto l_scf = scf_loss(enc.hi, labels, &diag.warnings);
                auto l_mmd = mmd_loss(enc.features_s, enc.features_t, cfg.mmd_sigma);
                auto l_rec = reconstruction_loss(xs, rs, xt, rt);
                auto total = ops::add(ops::add(ops::scale(l_scf, weights[0]), ops::scale(l_mmd, weights[1])),
                                      ops::scale(l_rec, weights[2]));
                step.losses = {l_scf.item(), l_mmd.item(), l_rec.item()};
                step.total = total.item();
                opt.zero_grad();
                if (total.requires_grad()) {
                    backward(total);
                }
                opt.step();
            } catch (const NumericalError& e) {
                throw NumericalError("epoch " + std::to_string(epoch) + " batch " + std::to_string(mb.ordinal) +
                                     ": " + e.what());
            }
            for (std::size_t p = 0; p < 3; ++p) {
                rec.losses[p] += step.losses[p];
            }
            rec.total += step.total;
            diag.steps.push_back(step);
        }
        rec.batches = batches.size();
        const double n = static_cast<double>(rec.batches);
        for (auto& l : rec.losses) {
            l /= n;
        }
        rec.total /= n;
        diag.epochs.push_back(rec);
        if (cfg.weighting == WeightingMode::Dwa) {
            weights = dwa_update(dwa, rec.losses, &diag.warnings);
        }
        diag.wall_seconds.push_back(
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    std::ostringstream os;
    os << rng;
    result.rng_state = os.str();
    return result;
}

} // namespace dahi
