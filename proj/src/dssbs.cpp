#include "dahi/dssbs.hpp"

#include <algorithm>
#include <random>

namespace dahi {

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, std::size_t epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(e), static_cast<std::uint32_t>(e >> 32), 0x5eedu};
    return std::mt19937_64(seq);
}

const std::vector<std::size_t>& resolve_pool(const std::vector<std::vector<std::size_t>>& pools, std::size_t stage) {
    if (!pools[stage].empty()) {
        return pools[stage];
    }
    for (std::size_t d = 1; d < pools.size(); ++d) {
        if (stage >= d && !pools[stage - d].empty()) {
            return pools[stage - d];
        }
        if (stage + d < pools.size() && !pools[stage + d].empty()) {
            return pools[stage + d];
        }
    }
    return pools[stage];
}

std::vector<std::size_t> draw_with_replacement(const std::vector<std::size_t>& pool, std::size_t count,
                                               std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    std::vector<std::size_t> out(count);
    for (auto& v : out) {
        v = pool[pick(rng)];
    }
    return out;
}

std::vector<std::size_t> shuffled_then_padded(const std::vector<std::size_t>& pool, std::size_t count,
                                              std::mt19937_64& rng) {
    std::vector<std::size_t> out = pool;
    std::shuffle(out.begin(), out.end(), rng);
    if (out.size() < count) {
        auto pad = draw_with_replacement(pool, count - out.size(), rng);
        out.insert(out.end(), pad.begin(), pad.end());
    }
    return out;
}

} // namespace

std::size_t snapshot_stage(const StageSegmentation& seg, std::size_t window, std::size_t snapshot,
                           std::size_t snapshot_len) {
    const std::size_t center = snapshot * snapshot_len + (snapshot_len + 1) / 2;
    const std::size_t w = (center + window - 1) / window;
    for (std::size_t m = 1; m < seg.boundaries.size(); ++m) {
        if (w <= seg.boundaries[m]) {
            return m - 1;
        }
    }
    return seg.stages() - 1;
}

StagePlan build_stage_plan(const StageSegmentation& src_seg, const StageSegmentation& tgt_seg, const RtFSeries& src,
                           const RtFSeries& tgt, std::size_t window, const ScfConfig& scf, Warnings* warnings) {
    src_seg.validate();
    tgt_seg.validate();
    if (src_seg.stages() != tgt_seg.stages()) {
        throw ConfigError("source and target segmentations must share the stage count (" +
                          std::to_string(src_seg.stages()) + " vs " + std::to_string(tgt_seg.stages()) + ")");
    }
    if (window == 0) {
        throw ConfigError("window length must be >= 1");
    }
    StagePlan plan;
    plan.stages = tgt_seg.stages();
    plan.source_pools.assign(plan.stages, {});
    plan.target_pools.assign(plan.stages, {});
    for (std::size_t t = 0; t < src.snapshots(); ++t) {
        plan.source_pools[snapshot_stage(src_seg, window, t, src.snapshot_len)].push_back(t);
    }
    for (std::size_t t = 0; t < tgt.snapshots(); ++t) {
        plan.target_pools[snapshot_stage(tgt_seg, window, t, tgt.snapshot_len)].push_back(t);
    }
    ScfConfig cfg = scf;
    cfg.failure_index = src.failure_index;
    for (std::size_t t = 0; t < src.snapshots(); ++t) {
        plan.source_labels.push_back(scf_value(std::min(t + 1, cfg.failure_index), cfg));
    }
    for (std::size_t m = 0; m < plan.stages; ++m) {
        const bool s_empty = plan.source_pools[m].empty();
        const bool t_empty = plan.target_pools[m].empty();
        if (s_empty && t_empty) {
            throw InfeasibleError("stage " + std::to_string(m + 1) + " has no snapshots in either domain");
        }
        if (s_empty || t_empty) {
            plan.flagged_stages.push_back(m);
            warn(warnings, "stage " + std::to_string(m + 1) + " has an empty " + (s_empty ? "source" : "target") +
                               " pool; sampling borrows the nearest stage");
        }
    }
    return plan;
}

StagePlan merged_plan(const StagePlan& plan) {
    StagePlan out;
    out.stages = 1;
    out.source_pools.assign(1, {});
    out.target_pools.assign(1, {});
    for (const auto& p : plan.source_pools) {
        out.source_pools[0].insert(out.source_pools[0].end(), p.begin(), p.end());
    }
    for (const auto& p : plan.target_pools) {
        out.target_pools[0].insert(out.target_pools[0].end(), p.begin(), p.end());
    }
    std::sort(out.source_pools[0].begin(), out.source_pools[0].end());
    std::sort(out.target_pools[0].begin(), out.target_pools[0].end());
    out.source_labels = plan.source_labels;
    return out;
}

SamplingMode sampling_mode_from_string(const std::string& s) {
    if (s == "synchronized" || s == "sync") {
        return SamplingMode::Synchronized;
    }
    if (s == "random") {
        return SamplingMode::Random;
    }
    throw ConfigError("unknown sampling mode '" + s + "' (expected synchronized or random)");
}

std::string to_string(SamplingMode m) { return m == SamplingMode::Random ? "random" : "synchronized"; }

std::vector<MiniBatch> sample_epoch(const StagePlan& plan, std::size_t batch_size, std::uint64_t seed,
                                    SamplingMode mode, std::size_t epoch, Warnings* warnings) {
    if (batch_size == 0) {
        throw ConfigError("batch size must be >= 1");
    }
    if (plan.stages == 0) {
        throw ConfigError("stage plan has no stages");
    }
    const StagePlan active = mode == SamplingMode::Random ? merged_plan(plan) : plan;
    auto rng = epoch_rng(seed, epoch);
    std::vector<MiniBatch> batches;
    for (std::size_t m = 0; m < active.stages; ++m) {
        const auto& ps = resolve_pool(active.source_pools, m);
        const auto& pt = resolve_pool(active.target_pools, m);
        if (ps.empty() || pt.empty()) {
            throw InfeasibleError("no snapshots available for stage " + std::to_string(m + 1));
        }
        const std::size_t larger = std::max(ps.size(), pt.size());
        const std::size_t count = (larger + batch_size - 1) / batch_size;
        const std::size_t slots = count * batch_size;
        if (batch_size > ps.size() && batch_size > pt.size()) {
            warn(warnings, "batch size " + std::to_string(batch_size) + " exceeds both pools of stage " +
                               std::to_string(m + 1) + "; batch padded by resampling");
        }
        std::vector<std::size_t> src_order;
        std::vector<std::size_t> tgt_order;
        if (ps.size() >= pt.size()) {
            src_order = shuffled_then_padded(ps, slots, rng);
            tgt_order = ps.size() == pt.size() ? shuffled_then_padded(pt, slots, rng)
                                               : draw_with_replacement(pt, slots, rng);
        } else {
            tgt_order = shuffled_then_padded(pt, slots, rng);
            src_order = draw_with_replacement(ps, slots, rng);
        }
        for (std::size_t b = 0; b < count; ++b) {
            MiniBatch mb;
            if (mode == SamplingMode::Synchronized) {
                mb.stage = m;
            }
            const auto lo = static_cast<std::ptrdiff_t>(b * batch_size);
            const auto hi = static_cast<std::ptrdiff_t>((b + 1) * batch_size);
            mb.source.assign(src_order.begin() + lo, src_order.begin() + hi);
            mb.target.assign(tgt_order.begin() + lo, tgt_order.begin() + hi);
            mb.epoch = epoch;
            batches.push_back(std::move(mb));
        }
    }
    std::shuffle(batches.begin(), batches.end(), rng);
    for (std::size_t i = 0; i < batches.size(); ++i) {
        batches[i].ordinal = i;
    }
    return batches;
}

} // namespace dahi
