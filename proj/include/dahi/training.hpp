#pragma once

#include "dahi/caflae.hpp"
#include "dahi/dssbs.hpp"
#include "dahi/losses.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dahi {

enum class WeightingMode { Dwa, Fixed };

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 8;
    AdamConfig adam;
    std::uint64_t seed = 0;
    WeightingMode weighting = WeightingMode::Dwa;
    LossTriple fixed_weights{1.0, 0.5, 0.5};
    SamplingMode sampling = SamplingMode::Synchronized;
    double dwa_temperature = 2.0;
    DwaForm dwa_form = DwaForm::Normalized;
    std::optional<double> mmd_sigma;

    void validate() const;
};

struct StepRecord {
    std::size_t epoch = 0; // 1-based
    std::size_t batch = 0;
    std::optional<std::size_t> stage;
    LossTriple losses{};
    LossTriple weights{};
    double total = 0.0;
};

struct EpochRecord {
    std::size_t epoch = 0; // 1-based
    LossTriple losses{};   // means over the epoch's batches
    LossTriple weights{};  // weights applied during the epoch
    double total = 0.0;    // mean of the per-step totals
    std::size_t batches = 0;
};

struct RunDiagnostics {
    std::vector<EpochRecord> epochs;
    std::vector<StepRecord> steps;
    std::vector<double> wall_seconds; // per epoch, kept apart from the loss records
    Warnings warnings;

    std::vector<double> series(std::size_t term) const; // 0 scf, 1 mmd, 2 rec, 3 total
};

struct TrainResult {
    CaflaeModel model;
    RunDiagnostics diagnostics;
    std::string rng_state;
};

/// Seeded optimisation of a freshly initialised model over the stage plan.
TrainResult train(const RtFSeries& src, const RtFSeries& tgt, const StagePlan& plan, const CaflaeConfig& model_cfg,
                  const TrainConfig& cfg);

} // namespace dahi
