#pragma once

#include "dahi/losses.hpp"
#include "dahi/segmentation.hpp"
#include "dahi/signal.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace dahi {

struct StagePlan {
    std::size_t stages = 0;
    std::vector<std::vector<std::size_t>> source_pools; // 0-based snapshot indices per stage
    std::vector<std::vector<std::size_t>> target_pools;
    std::vector<double> source_labels; // indexed by source snapshot
    /// Stages whose pool was empty in one domain; they borrow the nearest non-empty stage's pool.
    std::vector<std::size_t> flagged_stages;

    const std::vector<std::size_t>& pool(Domain d, std::size_t stage) const {
        return d == Domain::Source ? source_pools[stage] : target_pools[stage];
    }
};

/// Stage of the snapshot whose center sample falls in the window range of that stage;
/// snapshots past the last full window belong to the last stage.
std::size_t snapshot_stage(const StageSegmentation& seg, std::size_t window, std::size_t snapshot,
                           std::size_t snapshot_len);

StagePlan build_stage_plan(const StageSegmentation& src_seg, const StageSegmentation& tgt_seg, const RtFSeries& src,
                           const RtFSeries& tgt, std::size_t window, const ScfConfig& scf, Warnings* warnings = nullptr);

/// Single-stage plan holding every snapshot of each domain.
StagePlan merged_plan(const StagePlan& plan);

enum class SamplingMode { Synchronized, Random };

SamplingMode sampling_mode_from_string(const std::string& s);
std::string to_string(SamplingMode m);

struct MiniBatch {
    std::optional<std::size_t> stage;
    std::vector<std::size_t> source;
    std::vector<std::size_t> target;
    std::size_t epoch = 0;
    std::size_t ordinal = 0;
};

std::vector<MiniBatch> sample_epoch(const StagePlan& plan, std::size_t batch_size, std::uint64_t seed,
                                    SamplingMode mode, std::size_t epoch = 0, Warnings* warnings = nullptr);

} // namespace dahi
