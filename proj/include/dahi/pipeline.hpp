#pragma once

#include "dahi/dssbs.hpp"
#include "dahi/io.hpp"
#include "dahi/metrics.hpp"
#include "dahi/training.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dahi {

struct PreparedStages {
    RtFSeries source; // min-max scaled
    RtFSeries target;
    double sigma_source = 1.0;
    double sigma_target = 1.0;
    TargetSegmentation target_search;
    StageSegmentation source_seg;
    StageSegmentation target_seg;
    StagePlan plan;
};

/// Scale, window, segment the target with the penalized search and the source with the
/// same stage count, then pool snapshots per stage.
PreparedStages prepare_stages(const RtFSeries& src, const RtFSeries& tgt, std::size_t omega,
                              const Bandwidth& bandwidth, const PenaltyConfig& penalty, const ScfConfig& scf,
                              Warnings* warnings = nullptr);

struct ExperimentData {
    RtFSeries source;
    RtFSeries target;
    std::optional<RtFSeries> target_test;
    std::vector<SynthOutput> synth; // ground truth when generated
};

/// Synthetic specs are matched by name: "source", "target" and optionally "target_test".
ExperimentData load_experiment_data(const ExperimentConfig& cfg);

/// Three-stage source/target pair plus a held-out target run with its own seed.
std::vector<SynthSpec> default_synth_specs(std::uint64_t seed, std::size_t channels = 2,
                                           std::size_t snapshot_len = 32);

/// Config JSON with data files replaced by content digests and without the output
/// directory, so moving inputs or outputs keeps the hash.
Json canonical_config(const ExperimentConfig& cfg);

struct ExperimentRun {
    std::string hash;
    fs::path dir;
    Provenance provenance;
    PreparedStages stages;
    TrainResult result;
};

/// Full pipeline. Writes checkpoint.bin, diagnostics.csv, steps.csv, timing.csv,
/// segmentation.json and run.json under output_dir/<hash prefix>/ when `write` is set.
ExperimentRun run_experiment(const ExperimentConfig& cfg, bool write = true);

/// Per-snapshot HI in eval mode over a scaled series.
std::vector<double> hi_series(CaflaeModel& model, const RtFSeries& scaled, std::size_t batch_size = 32);

/// GAP-pooled encoder features per snapshot, one row per snapshot.
Matrix encoder_gap_features(CaflaeModel& model, const RtFSeries& scaled, std::size_t batch_size = 32);

} // namespace dahi
