#include "dahi/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace dahi;

namespace {

void emit_warnings(const Warnings& w) {
    for (const auto& m : w) {
        std::cerr << "warning: " << m << "\n";
    }
}

void emit(const std::string& text, const std::string& out) {
    if (out.empty() || out == "-") {
        std::cout << text;
    } else {
        write_file_atomic(out, text);
    }
}

// provenance for commands driven by flags rather than a config file
Provenance flags_provenance(const Json& args, std::uint64_t seed = 0) {
    Provenance p;
    p.config_hash = config_hash(args);
    p.seed = seed;
    return p;
}

void check_shape(const CaflaeModel& m, const RtFSeries& s) {
    if (m.config().channels != s.channels || m.config().snapshot_len != s.snapshot_len) {
        throw DimensionError("input has " + std::to_string(s.channels) + " channels of length " +
                             std::to_string(s.snapshot_len) + ", checkpoint expects " +
                             std::to_string(m.config().channels) + " of length " +
                             std::to_string(m.config().snapshot_len));
    }
}

int run_synth(const std::string& spec_path, const std::string& out_dir) {
    Json j;
    try {
        j = Json::parse(read_file(spec_path));
    } catch (const Json::exception& e) {
        throw ConfigError(spec_path + ": " + e.what());
    }
    const auto specs = synth_specs_from_json(j);
    for (const auto& spec : specs) {
        Provenance prov;
        prov.config_hash = config_hash(to_json(spec));
        prov.seed = spec.seed;
        const auto out = generate_synth(spec);
        const fs::path base = fs::path(out_dir) / spec.name;
        write_rtf_csv(out.series, fs::path(base).concat(".csv"), prov);
        Json truth = to_json(out.truth, 1);
        truth["unit"] = "snapshot";
        truth["labels"] = out.labels;
        truth["failure_index"] = out.series.failure_index;
        truth["provenance"] = to_json(prov);
        write_file_atomic(fs::path(base).concat(".truth.json"), truth.dump(2) + "\n");
        std::cout << base.string() << ".csv\n";
    }
    return 0;
}

struct SegmentArgs {
    std::string input;
    std::size_t omega = 32;
    std::string algo = "kcp";
    std::optional<double> penalty;
    std::optional<std::size_t> stages;
    std::optional<double> sigma;
    std::size_t max_stages = 10;
    std::string out;
};

int run_segment(const SegmentArgs& a) {
    if (a.penalty && a.stages) {
        throw UsageError("--penalty and --stages are mutually exclusive");
    }
    Warnings w;
    const auto series = load_rtf_csv(a.input);
    const auto rms = windowed_rms(min_max_scale(series, &w), a.omega);
    const Bandwidth bw = a.sigma ? Bandwidth::value(*a.sigma) : Bandwidth::median();
    Json args{{"command", "segment"},
              {"input_sha256", sha256_hex(read_file(a.input))},
              {"omega", a.omega},
              {"algo", a.algo},
              {"sigma", a.sigma ? Json(*a.sigma) : Json("median")}};
    StageSegmentation seg;
    Json extra = Json::object();
    if (a.algo == "kcp") {
        const auto k = rbf_kernel_matrix(rms, bw, &w);
        extra["sigma_used"] = k.sigma;
        if (a.stages) {
            seg = segment_fixed_m(k.k, *a.stages);
            args["stages"] = *a.stages;
        } else {
            PenaltyConfig pen;
            pen.max_stages = a.max_stages;
            if (a.penalty) {
                pen.c1 = pen.c2 = *a.penalty;
            }
            args["penalty"] = to_json(pen);
            const auto search = segment_target(k.k, pen);
            seg = search.best;
            extra["cost_by_m"] = search.cost_by_m;
            extra["objective_by_m"] = search.objective_by_m;
        }
    } else {
        const auto algo = baseline_from_string(a.algo);
        if (!a.stages) {
            throw UsageError("--algo " + a.algo + " needs --stages");
        }
        seg = segment_baseline(rms, algo, *a.stages, bw, &w);
        args["stages"] = *a.stages;
    }
    seg.domain = series.domain;
    Json j = to_json(seg, a.omega);
    j["algo"] = a.algo;
    j["input"] = series.id;
    j.update(extra);
    j["provenance"] = to_json(flags_provenance(args));
    emit_warnings(w);
    emit(j.dump(2) + "\n", a.out);
    return 0;
}

struct PlanArgs {
    std::string source;
    std::string target;
    std::size_t omega = 32;
    std::string mode = "sync";
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    std::size_t epoch = 1;
    std::optional<double> penalty;
    std::string out;
};

int run_sample_plan(const PlanArgs& a) {
    Warnings w;
    const auto src = load_rtf_csv(a.source);
    const auto tgt = load_rtf_csv(a.target);
    PenaltyConfig pen;
    if (a.penalty) {
        pen.c1 = pen.c2 = *a.penalty;
    }
    const auto mode = sampling_mode_from_string(a.mode);
    const auto prep = prepare_stages(src, tgt, a.omega, Bandwidth::median(), pen, ScfConfig{}, &w);
    const auto batches = sample_epoch(prep.plan, a.batch_size, a.seed, mode, a.epoch, &w);
    Json args{{"command", "sample-plan"},
              {"source_sha256", sha256_hex(read_file(a.source))},
              {"target_sha256", sha256_hex(read_file(a.target))},
              {"omega", a.omega},
              {"mode", to_string(mode)},
              {"batch_size", a.batch_size},
              {"epoch", a.epoch},
              {"penalty", to_json(pen)}};
    Json jb = Json::array();
    for (const auto& b : batches) {
        jb.push_back({{"ordinal", b.ordinal},
                      {"stage", b.stage ? Json(*b.stage + 1) : Json(nullptr)},
                      {"source", b.source},
                      {"target", b.target}});
    }
    Json j{{"mode", to_string(mode)},
           {"epoch", a.epoch},
           {"stages", prep.plan.stages},
           {"source_pools", prep.plan.source_pools},
           {"target_pools", prep.plan.target_pools},
           {"flagged_stages", prep.plan.flagged_stages},
           {"source_segmentation", to_json(prep.source_seg, a.omega)},
           {"target_segmentation", to_json(prep.target_seg, a.omega)},
           {"batches", jb},
           {"provenance", to_json(flags_provenance(args, a.seed))}};
    emit_warnings(w);
    emit(j.dump(2) + "\n", a.out);
    return 0;
}

int run_train(const std::string& config, const std::string& output_dir) {
    auto cfg = load_experiment_config(config);
    if (!output_dir.empty()) {
        cfg.output_dir = output_dir;
    }
    const auto run = run_experiment(cfg);
    emit_warnings(run.result.diagnostics.warnings);
    const auto& e = run.result.diagnostics.epochs;
    std::cout << run.dir.string() << "\n";
    if (!e.empty()) {
        std::cout << "stages " << run.stages.plan.stages << ", epochs " << e.size() << ", final total "
                  << format_double(e.back().total) << "\n";
    }
    return 0;
}

int run_eval_hi(const std::string& ckpt, const std::string& input, std::size_t window, double xi,
                const std::string& out) {
    CheckpointInfo info;
    auto model = load_checkpoint(ckpt, &info);
    Warnings w;
    const auto series = load_rtf_csv(input);
    check_shape(model, series);
    const auto hi = hi_series(model, min_max_scale(series, &w));
    const auto report = evaluate_hi(hi, window, xi, &w);
    const auto s = moving_average(hi, window);
    std::string csv = provenance_comment(info.provenance) + "t,hi,hi_ma\n";
    for (std::size_t i = 0; i < hi.size(); ++i) {
        csv += std::to_string(i + 1) + "," + format_double(hi[i]) + "," + format_double(s.trend[i]) + "\n";
    }
    Json j = to_json(report);
    j["input"] = series.id;
    j["snapshots"] = hi.size();
    j["warnings"] = w;
    j["provenance"] = to_json(info.provenance);
    emit_warnings(w);
    if (out.empty() || out == "-") {
        std::cout << csv;
        std::cerr << j.dump(2) << "\n";
    } else {
        fs::path report_path(out);
        report_path.replace_extension(".report.json");
        write_file_atomic(out, csv);
        write_file_atomic(report_path, j.dump(2) + "\n");
        std::cout << j.dump(2) << "\n";
    }
    return 0;
}

int run_pi_control(const std::string& losses, std::size_t horizon, const std::string& column) {
    const auto v = load_loss_column(losses, column);
    Json j{{"horizon", horizon},
           {"column", column.empty() ? "total" : column},
           {"epochs", v.size()},
           {"pi_control", pi_control(v, horizon)},
           {"input_sha256", sha256_hex(read_file(losses))},
           {"tool_version", version_string()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int run_erf(const std::string& ckpt, const std::string& input, std::size_t batches, std::size_t batch_size,
            std::uint64_t seed, const std::string& out) {
    CheckpointInfo info;
    auto model = load_checkpoint(ckpt, &info);
    Warnings w;
    const auto series = load_rtf_csv(input);
    check_shape(model, series);
    const auto r = erf_map(model, min_max_scale(series, &w), batches, batch_size, seed);
    std::string csv = provenance_comment(info.provenance) + "# breadth=" + format_double(r.breadth) + "\nt,erf\n";
    for (std::size_t i = 0; i < r.map.size(); ++i) {
        csv += std::to_string(i + 1) + "," + format_double(r.map[i]) + "\n";
    }
    emit_warnings(w);
    emit(csv, out);
    if (!out.empty() && out != "-") {
        std::cout << Json{{"breadth", r.breadth}, {"batches", batches}, {"kernels", model.config().active_kernels()}}
                         .dump()
                  << "\n";
    }
    return 0;
}

int run_features(const std::string& ckpt, const std::vector<std::string>& inputs, const std::string& out) {
    CheckpointInfo info;
    auto model = load_checkpoint(ckpt, &info);
    Warnings w;
    std::string csv = provenance_comment(info.provenance) + "series,domain,t";
    for (std::size_t f = 0; f < model.config().block_width(); ++f) {
        csv += ",f" + std::to_string(f);
    }
    csv += "\n";
    for (const auto& input : inputs) {
        const auto series = load_rtf_csv(input);
        check_shape(model, series);
        const auto m = encoder_gap_features(model, min_max_scale(series, &w));
        for (std::size_t r = 0; r < m.rows; ++r) {
            csv += series.id + "," + to_string(series.domain) + "," + std::to_string(r + 1);
            for (std::size_t c = 0; c < m.cols; ++c) {
                csv += "," + format_double(m(r, c));
            }
            csv += "\n";
        }
    }
    emit_warnings(w);
    emit(csv, out);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"degradation-aware health indicator toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", version_string());

    std::string spec, out_dir = ".";
    auto* synth = app.add_subcommand("synth", "generate synthetic run-to-failure series");
    synth->add_option("--spec", spec, "synthetic spec JSON")->required();
    synth->add_option("--out", out_dir, "output directory");

    SegmentArgs seg;
    auto* segment = app.add_subcommand("segment", "stage segmentation of one series");
    segment->add_option("--input", seg.input)->required();
    segment->add_option("--omega", seg.omega, "RMS window length in samples");
    segment->add_option("--algo", seg.algo)->check(CLI::IsMember({"kcp", "binseg", "bottomup", "dynp"}));
    segment->add_option("--penalty", seg.penalty, "c1 = c2 for the penalized stage search");
    segment->add_option("--stages", seg.stages, "fixed stage count");
    segment->add_option("--sigma", seg.sigma, "fixed RBF bandwidth (default: median heuristic)");
    segment->add_option("--max-stages", seg.max_stages);
    segment->add_option("--out", seg.out, "output JSON (default stdout)");

    PlanArgs plan;
    auto* sample = app.add_subcommand("sample-plan", "one epoch of stage-synchronized batches");
    sample->add_option("--source", plan.source)->required();
    sample->add_option("--target", plan.target)->required();
    sample->add_option("--omega", plan.omega);
    sample->add_option("--mode", plan.mode)->check(CLI::IsMember({"sync", "synchronized", "random"}));
    sample->add_option("--batch-size", plan.batch_size);
    sample->add_option("--seed", plan.seed);
    sample->add_option("--epoch", plan.epoch);
    sample->add_option("--penalty", plan.penalty);
    sample->add_option("--out", plan.out);

    std::string config, train_out;
    auto* train_cmd = app.add_subcommand("train", "full pipeline from a config file");
    train_cmd->add_option("--config", config)->required();
    train_cmd->add_option("--output-dir", train_out, "overrides output_dir from the config");

    std::string ckpt, input, out;
    std::size_t window = 5;
    double xi = 2.0;
    auto* eval = app.add_subcommand("eval-hi", "HI series and metrics for one series");
    eval->add_option("--checkpoint", ckpt)->required();
    eval->add_option("--input", input)->required();
    eval->add_option("--ma-window", window);
    eval->add_option("--xi", xi);
    eval->add_option("--out", out, "HI CSV; the report goes next to it");

    std::string losses, column;
    std::size_t horizon = 10;
    auto* pic = app.add_subcommand("pi-control", "loss stability over the final epochs");
    pic->add_option("--losses", losses)->required();
    pic->add_option("--horizon", horizon);
    pic->add_option("--column", column);

    std::size_t batches = 5, erf_batch = 8;
    std::uint64_t erf_seed = 0;
    auto* erf = app.add_subcommand("erf", "effective receptive field map");
    erf->add_option("--checkpoint", ckpt)->required();
    erf->add_option("--input", input)->required();
    erf->add_option("--batches", batches);
    erf->add_option("--batch-size", erf_batch);
    erf->add_option("--seed", erf_seed);
    erf->add_option("--out", out);

    std::vector<std::string> inputs;
    auto* feats = app.add_subcommand("features", "pooled encoder features per snapshot");
    feats->add_option("--checkpoint", ckpt)->required();
    feats->add_option("--input", inputs)->required();
    feats->add_option("--out", out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) {
            return run_synth(spec, out_dir);
        }
        if (*segment) {
            return run_segment(seg);
        }
        if (*sample) {
            return run_sample_plan(plan);
        }
        if (*train_cmd) {
            return run_train(config, train_out);
        }
        if (*eval) {
            return run_eval_hi(ckpt, input, window, xi, out);
        }
        if (*pic) {
            return run_pi_control(losses, horizon, column);
        }
        if (*erf) {
            return run_erf(ckpt, input, batches, erf_batch, erf_seed, out);
        }
        if (*feats) {
            return run_features(ckpt, inputs, out);
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 3;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 1;
}
