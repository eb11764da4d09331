#include "dahi/io.hpp"
#include "dahi/pipeline.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>
#include <random>

using namespace dahi;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("dahi_io_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void put(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    os << text;
}

void put_meta(const fs::path& csv, std::size_t len, const std::string& extra = "") {
    put(sidecar_path(csv), "{\"domain\": \"target\", \"sampling_interval_seconds\": 0.5, \"snapshot_len\": " +
                               std::to_string(len) + extra + "}");
}

std::string rows(std::size_t n) {
    std::string s = "t,ch0,ch1\n";
    for (std::size_t i = 0; i < n; ++i) {
        s += std::to_string(i + 1) + "," + std::to_string(i) + "," + std::to_string(10 + i) + "\n";
    }
    return s;
}

template <class E>
std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const E& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_SUITE("io") {

TEST_CASE("number formatting round trips") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1e6, 1e6);
    for (int i = 0; i < 1000; ++i) {
        const double v = u(rng) * std::pow(10.0, static_cast<double>(i % 40) - 20.0);
        CHECK(parse_double(format_double(v)) == v);
    }
    CHECK(parse_double(" 2.5 ") == 2.5);
    CHECK_THROWS_AS(parse_double("abc"), ParseError);
    CHECK_THROWS_AS(parse_double("1.5x"), ParseError);
    CHECK_THROWS_AS(parse_double(""), ParseError);
}

TEST_CASE("csv grouping into snapshots") {
    TempDir d("group");
    const auto csv = d.path / "a.csv";
    put(csv, "# comment\n" + rows(8));
    put_meta(csv, 4, ", \"failure_index\": 2");
    auto s = load_rtf_csv(csv);
    CHECK(s.snapshots() == 2);
    CHECK(s.channels == 2);
    CHECK(s.snapshot_len == 4);
    CHECK(s.domain == Domain::Target);
    CHECK(s.sampling_interval_seconds == 0.5);
    CHECK(s.sample(1, 0, 0) == 4.0);
    CHECK(s.sample(1, 1, 3) == 17.0);
    CHECK(s.id == "a");
}

TEST_CASE("csv errors") {
    TempDir d("err");
    const auto csv = d.path / "b.csv";
    put(csv, rows(7));
    put_meta(csv, 4);
    CHECK(error_of<ParseError>([&] { load_rtf_csv(csv); }).find("partial snapshot") != std::string::npos);

    put(csv, "t,ch0,ch1\n1,0,1\n2,0\n3,1,1\n4,2,2\n");
    auto msg = error_of<ParseError>([&] { load_rtf_csv(csv); });
    CHECK(msg.find(":3:") != std::string::npos);

    put(csv, "t,ch0,ch1\n1,0,1\n2,0,x\n3,1,1\n4,2,2\n");
    msg = error_of<ParseError>([&] { load_rtf_csv(csv); });
    CHECK(msg.find(":3:") != std::string::npos);
    CHECK(msg.find("'x'") != std::string::npos);

    put(csv, "time,ch0\n1,0\n");
    CHECK_THROWS_AS(load_rtf_csv(csv), ParseError);

    const auto lone = d.path / "lone.csv";
    put(lone, rows(4));
    CHECK(error_of<ParseError>([&] { load_rtf_csv(lone); }).find("sidecar") != std::string::npos);
    CHECK_THROWS_AS(load_rtf_csv(d.path / "missing.csv"), UsageError);
}

TEST_CASE("csv round trip is value identical") {
    TempDir d("rt");
    SynthSpec spec;
    spec.name = "rt";
    spec.stages = {{3, 0.7, 0.3, 0.01}, {2, 1.2, 0.5, 0.0}};
    spec.channels = 3;
    spec.snapshot_len = 8;
    spec.seed = 17;
    auto s = generate_synth(spec).series;
    Provenance prov{"abc", 17};
    write_rtf_csv(s, d.path / "rt.csv", prov);
    auto back = load_rtf_csv(d.path / "rt.csv");
    CHECK(back.data == s.data);
    CHECK(back.channels == 3);
    CHECK(back.failure_index == s.failure_index);
    CHECK(back.domain == s.domain);
    auto text = read_file(d.path / "rt.csv");
    CHECK(text.rfind("# config_hash=abc\n# seed=17\n# tool_version=", 0) == 0);
    auto meta = Json::parse(read_file(d.path / "rt.meta.json"));
    CHECK(meta["provenance"]["config_hash"] == "abc");
}

TEST_CASE("synthetic generator") {
    SynthSpec flat;
    flat.stages = {{6, 0.8, 0.0, 0.0}};
    flat.snapshot_len = 16;
    flat.period = 4;
    auto out = generate_synth(flat);
    for (std::size_t c = 0; c < 2; ++c) {
        double ref = 0.0;
        for (std::size_t t = 0; t < 6; ++t) {
            double ss = 0.0;
            for (std::size_t l = 0; l < 16; ++l) {
                ss += out.series.sample(t, c, l) * out.series.sample(t, c, l);
            }
            if (t == 0) {
                ref = ss;
            }
            CHECK(ss == doctest::Approx(ref).epsilon(1e-12));
        }
    }
    CHECK(out.truth.boundaries == std::vector<std::size_t>{0, 6});
    CHECK(out.labels.back() == 1.0);

    SynthSpec spec;
    spec.stages = {{40, 0.1, 0.02, 0.0}, {40, 0.5, 0.02, 0.0}, {40, 1.0, 0.02, 0.0}};
    spec.seed = 4;
    auto a = generate_synth(spec);
    auto b = generate_synth(spec);
    CHECK(a.series.data == b.series.data);
    CHECK(a.truth.boundaries == std::vector<std::size_t>{0, 40, 80, 120});
    spec.seed = 5;
    CHECK(generate_synth(spec).series.data != a.series.data);

    // window = snapshot length, so truth boundaries are in window units
    auto rms = windowed_rms(min_max_scale(a.series), spec.snapshot_len);
    auto found = segment_target(rbf_kernel_matrix(rms).k, PenaltyConfig{});
    REQUIRE(found.best.stages() == 3);
    for (std::size_t i = 0; i < 4; ++i) {
        const auto diff = static_cast<long>(found.best.boundaries[i]) - static_cast<long>(a.truth.boundaries[i]);
        CHECK(std::abs(diff) <= 1);
    }
    SynthSpec bad;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("synthetic files are byte identical") {
    TempDir d("bytes");
    auto spec = default_synth_specs(3)[0];
    Provenance p{config_hash(to_json(spec)), spec.seed};
    write_rtf_csv(generate_synth(spec).series, d.path / "x.csv", p);
    write_rtf_csv(generate_synth(spec).series, d.path / "y.csv", p);
    CHECK(read_file(d.path / "x.csv") == read_file(d.path / "y.csv"));
}

TEST_CASE("synth spec json") {
    auto spec = default_synth_specs(2)[1];
    auto back = synth_spec_from_json(to_json(spec));
    CHECK(to_json(back) == to_json(spec));
    Json j = to_json(spec);
    j["bogus"] = 1;
    CHECK_THROWS_AS(synth_spec_from_json(j), ConfigError);
    Json no_seed = to_json(spec);
    no_seed.erase("seed");
    CHECK_THROWS_AS(synth_spec_from_json(no_seed), ConfigError);
    Json wrong_total = to_json(spec);
    wrong_total["snapshots"] = 3;
    CHECK_THROWS_AS(synth_spec_from_json(wrong_total), ConfigError);
    Json many{{"series", {to_json(spec), to_json(spec)}}};
    CHECK_THROWS_AS(synth_specs_from_json(many), ConfigError);
}

TEST_CASE("experiment config") {
    TempDir d("cfg");
    put(d.path / "s.csv", rows(8));
    put_meta(d.path / "s.csv", 4);
    put(d.path / "t.csv", rows(8));
    put_meta(d.path / "t.csv", 4);
    Json j = Json::parse(R"({
        "seed": 7,
        "data": {"source": "s.csv", "target": "t.csv"},
        "omega": 4,
        "sigma": 0.5,
        "penalty": 3,
        "model": {"channels": 2, "snapshot_len": 4, "patch_len": 2, "patch_stride": 1, "kernels": [3, 5, 7],
                  "width": 4, "attn_width": 4},
        "train": {"epochs": 5, "batch_size": 2, "lr": 0.01, "weighting": "fixed", "mmd_sigma": 1.0},
        "metrics": {"ma_window": 3},
        "output_dir": "out"
    })");
    auto c = experiment_config_from_json(j, d.path);
    CHECK(c.seed == 7);
    CHECK(c.train.seed == 7);
    CHECK(c.data.source == d.path / "s.csv");
    CHECK(c.penalty.c1 == 3.0);
    CHECK(c.penalty.c2 == 3.0);
    CHECK(*c.bandwidth.fixed == 0.5);
    CHECK(c.train.weighting == WeightingMode::Fixed);
    CHECK(*c.train.mmd_sigma == 1.0);
    CHECK(c.metrics.ma_window == 3);
    CHECK(c.output_dir == d.path / "out");
    auto again = experiment_config_from_json(to_json(c), {});
    CHECK(to_json(again) == to_json(c));
    CHECK(config_hash(canonical_config(again)) == config_hash(canonical_config(c)));

    // moving the data keeps the hash; changing it does not
    fs::create_directories(d.path / "moved");
    fs::copy_file(d.path / "s.csv", d.path / "moved" / "s.csv");
    fs::copy_file(d.path / "s.meta.json", d.path / "moved" / "s.meta.json");
    auto moved = c;
    moved.data.source = d.path / "moved" / "s.csv";
    CHECK(config_hash(canonical_config(moved)) == config_hash(canonical_config(c)));
    auto reseeded = c;
    reseeded.seed = 8;
    CHECK(config_hash(canonical_config(reseeded)) != config_hash(canonical_config(c)));

    auto missing_seed = j;
    missing_seed.erase("seed");
    CHECK_THROWS_AS(experiment_config_from_json(missing_seed, d.path), ConfigError);
    auto unknown = j;
    unknown["model"]["depth"] = 3;
    CHECK_THROWS_AS(experiment_config_from_json(unknown, d.path), ConfigError);
    auto absent = j;
    absent["data"]["target"] = "nope.csv";
    CHECK_THROWS_AS(experiment_config_from_json(absent, d.path), ConfigError);
    auto wrong_type = j;
    wrong_type["train"]["epochs"] = "many";
    CHECK_THROWS_AS(experiment_config_from_json(wrong_type, d.path), ConfigError);
    auto dwa_short = j;
    dwa_short["train"]["weighting"] = "dwa";
    dwa_short["train"]["epochs"] = 2;
    CHECK_THROWS_AS(experiment_config_from_json(dwa_short, d.path), ConfigError);
    CHECK_THROWS_AS(load_experiment_config(d.path / "none.json"), UsageError);
}

TEST_CASE("sha256") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("checkpoint round trip") {
    TempDir d("ckpt");
    CaflaeConfig cfg;
    cfg.channels = 2;
    cfg.snapshot_len = 16;
    cfg.patch_len = 4;
    cfg.patch_stride = 2;
    cfg.kernels = {3, 5, 7};
    cfg.width = 4;
    cfg.attn_width = 4;
    CaflaeModel m(cfg, 21);
    for (auto& b : m.buffers()) {
        for (std::size_t i = 0; i < b.values->size(); ++i) {
            (*b.values)[i] += 0.01 * static_cast<double>(i + 1);
        }
    }
    Provenance prov{"feed", 21};
    save_checkpoint(d.path / "m.bin", m, "rng-state", prov);
    CheckpointInfo info;
    auto back = load_checkpoint(d.path / "m.bin", &info);
    CHECK(info.rng_state == "rng-state");
    CHECK(info.provenance.config_hash == "feed");
    CHECK(info.provenance.seed == 21);
    auto pa = m.parameters();
    auto pb = back.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(std::equal(pa[i].tensor.values().begin(), pa[i].tensor.values().end(), pb[i].tensor.values().begin()));
    }
    auto ba = m.buffers();
    auto bb = back.buffers();
    for (std::size_t i = 0; i < ba.size(); ++i) {
        CHECK(*ba[i].values == *bb[i].values);
    }
    save_checkpoint(d.path / "m2.bin", back, "rng-state", prov);
    CHECK(read_file(d.path / "m.bin") == read_file(d.path / "m2.bin"));

    auto bytes = read_file(d.path / "m.bin");
    put(d.path / "cut.bin", bytes.substr(0, bytes.size() - 8));
    CHECK_THROWS_AS(load_checkpoint(d.path / "cut.bin"), ParseError);
    put(d.path / "junk.bin", "not a checkpoint at all");
    CHECK_THROWS_AS(load_checkpoint(d.path / "junk.bin"), ParseError);
    CHECK_THROWS_AS(load_checkpoint(d.path / "absent.bin"), UsageError);
}

TEST_CASE("diagnostics csv and loss columns") {
    TempDir d("diag");
    RunDiagnostics diag;
    for (std::size_t e = 1; e <= 4; ++e) {
        EpochRecord r;
        r.epoch = e;
        r.losses = {0.1 * e, 0.2, 1.0 / 3.0};
        r.weights = {1.0, 1.0, 1.0};
        r.total = r.losses[0] + r.losses[1] + r.losses[2];
        r.batches = 2;
        diag.epochs.push_back(r);
    }
    diag.wall_seconds = {0.1, 0.2, 0.3, 0.4};
    Provenance prov{"h", 1};
    const auto csv = diagnostics_csv(diag, prov);
    CHECK(csv.find("wall") == std::string::npos);
    write_file_atomic(d.path / "diag.csv", csv);
    auto total = load_loss_column(d.path / "diag.csv");
    REQUIRE(total.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(total[i] == diag.epochs[i].total);
    }
    auto rec = load_loss_column(d.path / "diag.csv", "l_rec");
    CHECK(rec[2] == 1.0 / 3.0);
    CHECK_THROWS_AS(load_loss_column(d.path / "diag.csv", "nope"), ParseError);
    CHECK(timing_csv(diag, prov).find("wall_seconds") != std::string::npos);
    put(d.path / "plain.csv", "loss\n1\n2\n4\n");
    CHECK(load_loss_column(d.path / "plain.csv") == std::vector<double>{1, 2, 4});
}

}
