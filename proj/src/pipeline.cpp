#include "dahi/pipeline.hpp"

#include <algorithm>
#include <numeric>

namespace dahi {

PreparedStages prepare_stages(const RtFSeries& src, const RtFSeries& tgt, std::size_t omega,
                              const Bandwidth& bandwidth, const PenaltyConfig& penalty, const ScfConfig& scf,
                              Warnings* warnings) {
    PreparedStages out;
    out.source = min_max_scale(src, warnings);
    out.target = min_max_scale(tgt, warnings);
    const auto rms_s = windowed_rms(out.source, omega);
    const auto rms_t = windowed_rms(out.target, omega);
    const auto ks = rbf_kernel_matrix(rms_s, bandwidth, warnings);
    const auto kt = rbf_kernel_matrix(rms_t, bandwidth, warnings);
    out.sigma_source = ks.sigma;
    out.sigma_target = kt.sigma;
    out.target_search = segment_target(kt.k, penalty);
    out.target_seg = out.target_search.best;
    out.target_seg.domain = Domain::Target;
    out.source_seg = segment_fixed_m(ks.k, out.target_seg.stages());
    out.source_seg.domain = Domain::Source;
    out.plan = build_stage_plan(out.source_seg, out.target_seg, out.source, out.target, omega, scf, warnings);
    return out;
}

ExperimentData load_experiment_data(const ExperimentConfig& cfg) {
    ExperimentData d;
    if (cfg.data.source) {
        d.source = load_rtf_csv(*cfg.data.source);
        d.target = load_rtf_csv(*cfg.data.target);
        if (cfg.data.target_test) {
            d.target_test = load_rtf_csv(*cfg.data.target_test);
        }
        return d;
    }
    auto find = [&](const std::string& name) -> const SynthSpec* {
        for (const auto& s : cfg.data.synth) {
            if (s.name == name) {
                return &s;
            }
        }
        return nullptr;
    };
    const SynthSpec* s = find("source");
    const SynthSpec* t = find("target");
    if (!s || !t) {
        throw ConfigError("synth data needs series named 'source' and 'target'");
    }
    d.synth.push_back(generate_synth(*s));
    d.synth.push_back(generate_synth(*t));
    d.source = d.synth[0].series;
    d.target = d.synth[1].series;
    if (const SynthSpec* h = find("target_test")) {
        d.synth.push_back(generate_synth(*h));
        d.target_test = d.synth.back().series;
    }
    return d;
}

std::vector<SynthSpec> default_synth_specs(std::uint64_t seed, std::size_t channels, std::size_t snapshot_len) {
    // amplitude steps between stages; harmonic content grows steadily through life
    auto make = [&](std::string name, Domain d, std::vector<SynthStage> stages, std::uint64_t s) {
        SynthSpec spec;
        spec.name = std::move(name);
        spec.domain = d;
        spec.stages = std::move(stages);
        spec.channels = channels;
        spec.snapshot_len = snapshot_len;
        spec.seed = s;
        return spec;
    };
    const double h = 0.008;
    return {
        make("source", Domain::Source,
             {{24, 0.45, 0.01, 0.0, 0.0, h}, {24, 0.75, 0.015, 0.0, 0.2, h}, {24, 1.0, 0.02, 0.0, 0.4, h}},
             seed * 3 + 1),
        make("target", Domain::Target,
             {{20, 0.6, 0.015, 0.0, 0.02, h}, {26, 1.0, 0.02, 0.0, 0.2, h}, {22, 1.35, 0.03, 0.0, 0.42, h}},
             seed * 3 + 2),
        make("target_test", Domain::Target,
             {{22, 0.6, 0.015, 0.0, 0.02, h}, {24, 1.0, 0.02, 0.0, 0.2, h}, {20, 1.35, 0.03, 0.0, 0.4, h}},
             seed * 3 + 3),
    };
}

Json canonical_config(const ExperimentConfig& cfg) {
    Json j = to_json(cfg);
    if (cfg.data.source) {
        Json d{{"source_sha256", sha256_hex(read_file(*cfg.data.source))},
               {"target_sha256", sha256_hex(read_file(*cfg.data.target))}};
        if (cfg.data.target_test) {
            d["target_test_sha256"] = sha256_hex(read_file(*cfg.data.target_test));
        }
        j["data"] = d;
    }
    return j;
}

std::vector<double> hi_series(CaflaeModel& model, const RtFSeries& scaled, std::size_t batch_size) {
    if (batch_size == 0) {
        throw ConfigError("batch size must be >= 1");
    }
    std::vector<double> out;
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < scaled.snapshots(); t += batch_size) {
        idx.resize(std::min(batch_size, scaled.snapshots() - t));
        std::iota(idx.begin(), idx.end(), t);
        ForwardContext ctx;
        auto hi = model.encode_single(scaled.batch(idx), ctx);
        out.insert(out.end(), hi.values().begin(), hi.values().end());
    }
    return out;
}

Matrix encoder_gap_features(CaflaeModel& model, const RtFSeries& scaled, std::size_t batch_size) {
    if (batch_size == 0) {
        throw ConfigError("batch size must be >= 1");
    }
    const std::size_t f = model.config().block_width();
    Matrix out(scaled.snapshots(), f);
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < scaled.snapshots(); t += batch_size) {
        idx.resize(std::min(batch_size, scaled.snapshots() - t));
        std::iota(idx.begin(), idx.end(), t);
        ForwardContext ctx;
        auto g = ops::mean_last(model.encoder_features(scaled.batch(idx), scaled.domain, ctx));
        std::copy(g.values().begin(), g.values().end(), out.data.begin() + static_cast<std::ptrdiff_t>(t * f));
    }
    return out;
}

ExperimentRun run_experiment(const ExperimentConfig& cfg, bool write) {
    const auto data = load_experiment_data(cfg);
    Warnings prep;
    auto stages = prepare_stages(data.source, data.target, cfg.omega, cfg.bandwidth, cfg.penalty, cfg.scf, &prep);
    auto result = train(stages.source, stages.target, stages.plan, cfg.model, cfg.train);
    result.diagnostics.warnings.insert(result.diagnostics.warnings.begin(), prep.begin(), prep.end());

    ExperimentRun run{config_hash(canonical_config(cfg)), {}, {}, std::move(stages), std::move(result)};
    run.provenance.config_hash = run.hash;
    run.provenance.seed = cfg.seed;
    run.dir = cfg.output_dir / run.hash.substr(0, 16);
    if (!write) {
        return run;
    }
    const auto& diag = run.result.diagnostics;
    save_checkpoint(run.dir / "checkpoint.bin", run.result.model, run.result.rng_state, run.provenance);
    write_file_atomic(run.dir / "diagnostics.csv", diagnostics_csv(diag, run.provenance));
    write_file_atomic(run.dir / "steps.csv", steps_csv(diag, run.provenance));
    write_file_atomic(run.dir / "timing.csv", timing_csv(diag, run.provenance));

    Json seg{{"provenance", to_json(run.provenance)},
             {"source", to_json(run.stages.source_seg, cfg.omega)},
             {"target", to_json(run.stages.target_seg, cfg.omega)},
             {"sigma_source", run.stages.sigma_source},
             {"sigma_target", run.stages.sigma_target},
             {"target_cost_by_m", run.stages.target_search.cost_by_m},
             {"target_objective_by_m", run.stages.target_search.objective_by_m},
             {"flagged_stages", run.stages.plan.flagged_stages}};
    write_file_atomic(run.dir / "segmentation.json", seg.dump(2) + "\n");

    Json summary{{"provenance", to_json(run.provenance)},
                 {"config", canonical_config(cfg)},
                 {"epochs", diag.epochs.size()},
                 {"steps", diag.steps.size()},
                 {"warnings", diag.warnings}};
    if (diag.epochs.size() >= cfg.metrics.horizon && cfg.metrics.horizon >= 2) {
        summary["pi_control"] = {{"horizon", cfg.metrics.horizon},
                                 {"l_scf", pi_control(diag.series(0), cfg.metrics.horizon)},
                                 {"l_mmd", pi_control(diag.series(1), cfg.metrics.horizon)},
                                 {"l_rec", pi_control(diag.series(2), cfg.metrics.horizon)},
                                 {"total", pi_control(diag.series(3), cfg.metrics.horizon)}};
    }
    if (data.target_test) {
        Warnings w;
        const auto scaled = min_max_scale(*data.target_test, &w);
        const auto hi = hi_series(run.result.model, scaled);
        std::string csv = provenance_comment(run.provenance) + "t,hi\n";
        for (std::size_t i = 0; i < hi.size(); ++i) {
            csv += std::to_string(i + 1) + "," + format_double(hi[i]) + "\n";
        }
        write_file_atomic(run.dir / "hi_target_test.csv", csv);
        if (hi.size() >= std::max<std::size_t>(4, cfg.metrics.ma_window)) {
            summary["target_test_metrics"] = to_json(evaluate_hi(hi, cfg.metrics.ma_window, cfg.metrics.xi, &w));
        }
        summary["target_test_warnings"] = w;
    }
    write_file_atomic(run.dir / "run.json", summary.dump(2) + "\n");
    return run;
}

} // namespace dahi
