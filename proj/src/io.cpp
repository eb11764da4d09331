#include "dahi/io.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#ifndef DAHI_VERSION
#define DAHI_VERSION "0.0.0"
#endif

namespace dahi {

namespace {

constexpr char kMagic[8] = {'D', 'A', 'H', 'I', 'C', 'K', 'P', '1'};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream is(line);
    while (std::getline(is, cur, ',')) {
        out.push_back(trim(cur));
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

void check_keys(const Json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) {
        throw ConfigError(where + ": expected a JSON object");
    }
    for (const auto& [k, v] : j.items()) {
        if (!allowed.count(k)) {
            throw ConfigError(where + ": unknown key '" + k + "'");
        }
    }
}

template <class T>
T field(const Json& j, const std::string& key, T fallback, const std::string& where) {
    if (!j.contains(key)) {
        return fallback;
    }
    try {
        return j.at(key).get<T>();
    } catch (const Json::exception& e) {
        throw ConfigError(where + "." + key + ": " + e.what());
    }
}

std::size_t count_field(const Json& j, const std::string& key, std::size_t fallback, const std::string& where) {
    if (!j.contains(key)) {
        return fallback;
    }
    const auto& v = j.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0) {
        throw ConfigError(where + "." + key + ": expected a non-negative integer");
    }
    return v.get<std::size_t>();
}

} // namespace

std::string version_string() { return DAHI_VERSION; }

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& text) {
    const std::string t = trim(text);
    double v = 0.0;
    const char* first = t.data();
    const char* last = t.data() + t.size();
    if (!t.empty() && *first == '+') {
        ++first;
    }
    auto res = std::from_chars(first, last, v);
    if (t.empty() || res.ec != std::errc() || res.ptr != last) {
        throw ParseError("not a number: '" + text + "'");
    }
    return v;
}

Json to_json(const Provenance& p) {
    return Json{{"config_hash", p.config_hash}, {"seed", p.seed}, {"tool_version", p.version}};
}

std::string provenance_comment(const Provenance& p) {
    return "# config_hash=" + p.config_hash + "\n# seed=" + std::to_string(p.seed) + "\n# tool_version=" +
           p.version + "\n";
}

void write_file_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) {
            throw UsageError("cannot write " + tmp.string());
        }
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!os) {
            throw UsageError("write failed for " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw UsageError("cannot open " + path.string());
    }
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

fs::path sidecar_path(const fs::path& csv) {
    fs::path p = csv;
    p.replace_extension(".meta.json");
    return p;
}

RtFSeries load_rtf_csv(const fs::path& csv) {
    if (!fs::exists(csv)) {
        throw UsageError("input file not found: " + csv.string());
    }
    const fs::path meta_path = sidecar_path(csv);
    if (!fs::exists(meta_path)) {
        throw ParseError(csv.string() + ": missing metadata sidecar " + meta_path.string());
    }
    Json meta;
    try {
        meta = Json::parse(read_file(meta_path));
    } catch (const Json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }
    RtFSeries s;
    try {
        s.domain = domain_from_string(meta.at("domain").get<std::string>());
        s.sampling_interval_seconds = meta.at("sampling_interval_seconds").get<double>();
        s.snapshot_len = meta.at("snapshot_len").get<std::size_t>();
        s.id = meta.value("id", csv.stem().string());
    } catch (const Json::exception& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    } catch (const ConfigError& e) {
        throw ParseError(meta_path.string() + ": " + e.what());
    }
    if (s.snapshot_len == 0) {
        throw ParseError(meta_path.string() + ": snapshot_len must be positive");
    }

    std::ifstream is(csv);
    std::string line;
    std::size_t line_no = 0;
    std::size_t cols = 0;
    std::vector<std::vector<double>> streams;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        auto cells = split_csv(t);
        if (cols == 0) {
            if (cells.size() < 2 || cells[0] != "t") {
                throw ParseError(csv.string() + ":" + std::to_string(line_no) + ": header must be t,ch0,...");
            }
            for (std::size_t c = 1; c < cells.size(); ++c) {
                if (cells[c] != "ch" + std::to_string(c - 1)) {
                    throw ParseError(csv.string() + ":" + std::to_string(line_no) + ": expected column ch" +
                                     std::to_string(c - 1) + ", got '" + cells[c] + "'");
                }
            }
            cols = cells.size();
            streams.assign(cols - 1, {});
            continue;
        }
        if (cells.size() != cols) {
            throw ParseError(csv.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(cols) +
                             " fields, got " + std::to_string(cells.size()));
        }
        try {
            parse_double(cells[0]);
            for (std::size_t c = 1; c < cols; ++c) {
                streams[c - 1].push_back(parse_double(cells[c]));
            }
        } catch (const ParseError& e) {
            throw ParseError(csv.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (cols == 0) {
        throw ParseError(csv.string() + ": no header row");
    }
    const std::size_t rows = streams.front().size();
    if (rows == 0) {
        throw ParseError(csv.string() + ": no data rows");
    }
    if (rows % s.snapshot_len != 0) {
        throw ParseError(csv.string() + ": partial snapshot (" + std::to_string(rows) +
                         " rows is not a multiple of snapshot_len " + std::to_string(s.snapshot_len) + ")");
    }
    s.channels = cols - 1;
    const std::size_t snaps = rows / s.snapshot_len;
    s.data.resize(rows * s.channels);
    for (std::size_t t = 0; t < snaps; ++t) {
        for (std::size_t c = 0; c < s.channels; ++c) {
            for (std::size_t l = 0; l < s.snapshot_len; ++l) {
                s.data[(t * s.channels + c) * s.snapshot_len + l] = streams[c][t * s.snapshot_len + l];
            }
        }
    }
    s.failure_index = meta.contains("failure_index") ? meta.at("failure_index").get<std::size_t>() : snaps;
    try {
        s.validate();
    } catch (const Error& e) {
        throw ParseError(csv.string() + ": " + e.what());
    }
    return s;
}

void write_rtf_csv(const RtFSeries& series, const fs::path& csv, const Provenance& prov) {
    series.validate();
    std::string out = provenance_comment(prov);
    out += "t";
    for (std::size_t c = 0; c < series.channels; ++c) {
        out += ",ch" + std::to_string(c);
    }
    out += "\n";
    for (std::size_t i = 0; i < series.stream_length(); ++i) {
        out += std::to_string(i + 1);
        for (std::size_t c = 0; c < series.channels; ++c) {
            out += "," + format_double(series.stream(c, i));
        }
        out += "\n";
    }
    Json meta{{"domain", to_string(series.domain)},
              {"sampling_interval_seconds", series.sampling_interval_seconds},
              {"snapshot_len", series.snapshot_len},
              {"failure_index", series.failure_index},
              {"id", series.id},
              {"provenance", to_json(prov)}};
    write_file_atomic(csv, out);
    write_file_atomic(sidecar_path(csv), meta.dump(2) + "\n");
}

std::size_t SynthSpec::snapshots() const {
    std::size_t t = 0;
    for (const auto& s : stages) {
        t += s.duration;
    }
    return t;
}

void SynthSpec::validate() const {
    if (stages.empty()) {
        throw ConfigError("synth spec '" + name + "' needs at least one stage");
    }
    for (const auto& s : stages) {
        if (s.duration == 0) {
            throw ConfigError("synth spec '" + name + "': stage durations must be positive");
        }
        if (!(s.noise >= 0.0)) {
            throw ConfigError("synth spec '" + name + "': noise scale must be non-negative");
        }
    }
    if (channels == 0 || snapshot_len == 0) {
        throw ConfigError("synth spec '" + name + "': channels and snapshot_len must be positive");
    }
    if (!(sampling_interval_seconds > 0.0)) {
        throw ConfigError("synth spec '" + name + "': sampling interval must be positive");
    }
}

SynthOutput generate_synth(const SynthSpec& spec) {
    spec.validate();
    const std::size_t t_total = spec.snapshots();
    const std::size_t l = spec.snapshot_len;
    const double period = static_cast<double>(spec.period ? spec.period : std::max<std::size_t>(1, l / 4));
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> eps(0.0, 1.0);
    SynthOutput out;
    auto& s = out.series;
    s.domain = spec.domain;
    s.channels = spec.channels;
    s.snapshot_len = l;
    s.failure_index = t_total;
    s.sampling_interval_seconds = spec.sampling_interval_seconds;
    s.id = spec.name;
    s.data.resize(t_total * spec.channels * l);
    out.truth.domain = spec.domain;
    out.truth.boundaries.push_back(0);
    std::size_t t = 0;
    for (const auto& stage : spec.stages) {
        for (std::size_t k = 0; k < stage.duration; ++k, ++t) {
            const double scale = std::max(0.0, stage.noise + stage.slope * static_cast<double>(k));
            const double eta = stage.harmonic + stage.harmonic_slope * static_cast<double>(k);
            for (std::size_t c = 0; c < spec.channels; ++c) {
                const double gain = 1.0 + 0.5 * static_cast<double>(c);
                const double phase = static_cast<double>(c) * std::numbers::pi / 3.0;
                for (std::size_t j = 0; j < l; ++j) {
                    const double i = static_cast<double>(t * l + j);
                    const double arg = 2.0 * std::numbers::pi * i / period + phase;
                    const double wave = stage.amplitude * (std::sin(arg) + eta * std::sin(2.0 * arg));
                    s.data[(t * spec.channels + c) * l + j] = gain * (wave + scale * eps(rng));
                }
            }
            out.labels.push_back(static_cast<double>(t + 1) / static_cast<double>(t_total));
        }
        out.truth.boundaries.push_back(t);
    }
    return out;
}

Json to_json(const SynthSpec& s) {
    Json stages = Json::array();
    for (const auto& st : s.stages) {
        stages.push_back({{"duration", st.duration},
                          {"amplitude", st.amplitude},
                          {"noise", st.noise},
                          {"slope", st.slope},
                          {"harmonic", st.harmonic},
                          {"harmonic_slope", st.harmonic_slope}});
    }
    return Json{{"name", s.name},
                {"domain", to_string(s.domain)},
                {"stages", stages},
                {"channels", s.channels},
                {"snapshot_len", s.snapshot_len},
                {"period", s.period},
                {"sampling_interval_seconds", s.sampling_interval_seconds},
                {"seed", s.seed}};
}

SynthSpec synth_spec_from_json(const Json& j) {
    const std::string where = "synth";
    check_keys(j,
               {"name", "domain", "stages", "channels", "snapshot_len", "period", "sampling_interval_seconds", "seed",
                "snapshots"},
               where);
    SynthSpec s;
    s.name = field<std::string>(j, "name", s.name, where);
    s.domain = domain_from_string(field<std::string>(j, "domain", "source", where));
    s.channels = count_field(j, "channels", s.channels, where);
    s.snapshot_len = count_field(j, "snapshot_len", s.snapshot_len, where);
    s.period = count_field(j, "period", s.period, where);
    s.sampling_interval_seconds = field<double>(j, "sampling_interval_seconds", 1.0, where);
    if (!j.contains("seed")) {
        throw ConfigError(where + " '" + s.name + "': seed is required");
    }
    s.seed = count_field(j, "seed", 0, where);
    if (!j.contains("stages") || !j.at("stages").is_array()) {
        throw ConfigError(where + " '" + s.name + "': stages array is required");
    }
    for (const auto& st : j.at("stages")) {
        check_keys(st, {"duration", "amplitude", "noise", "slope", "harmonic", "harmonic_slope"}, where + ".stages");
        SynthStage stage;
        stage.duration = count_field(st, "duration", 0, where + ".stages");
        stage.amplitude = field<double>(st, "amplitude", 1.0, where + ".stages");
        stage.noise = field<double>(st, "noise", 0.0, where + ".stages");
        stage.slope = field<double>(st, "slope", 0.0, where + ".stages");
        stage.harmonic = field<double>(st, "harmonic", 0.0, where + ".stages");
        stage.harmonic_slope = field<double>(st, "harmonic_slope", 0.0, where + ".stages");
        s.stages.push_back(stage);
    }
    if (j.contains("snapshots") && count_field(j, "snapshots", 0, where) != s.snapshots()) {
        throw ConfigError(where + " '" + s.name + "': stage durations do not sum to snapshots");
    }
    s.validate();
    return s;
}

std::vector<SynthSpec> synth_specs_from_json(const Json& j) {
    std::vector<SynthSpec> out;
    if (j.is_object() && j.contains("series")) {
        check_keys(j, {"series"}, "synth");
        for (const auto& s : j.at("series")) {
            out.push_back(synth_spec_from_json(s));
        }
    } else {
        out.push_back(synth_spec_from_json(j));
    }
    std::set<std::string> names;
    for (const auto& s : out) {
        if (!names.insert(s.name).second) {
            throw ConfigError("synth: duplicate series name '" + s.name + "'");
        }
    }
    return out;
}

Json to_json(const CaflaeConfig& c) {
    return Json{{"channels", c.channels},
                {"snapshot_len", c.snapshot_len},
                {"patch_len", c.patch_len},
                {"patch_stride", c.patch_stride},
                {"kernels", c.kernels},
                {"width", c.width},
                {"attn_width", c.attn_width},
                {"heads", c.heads},
                {"ffn_ratio", c.ffn_ratio},
                {"encoder_blocks", c.encoder_blocks},
                {"decoder_blocks", c.decoder_blocks},
                {"head_hidden", c.head_hidden},
                {"dropout", c.dropout},
                {"single_kernel", c.single_kernel},
                {"no_cross_attention", c.no_cross_attention},
                {"decode_from", to_string(c.decode_from)}};
}

CaflaeConfig caflae_config_from_json(const Json& j) {
    const std::string w = "model";
    check_keys(j,
               {"channels", "snapshot_len", "patch_len", "patch_stride", "kernels", "width", "attn_width", "heads",
                "ffn_ratio", "encoder_blocks", "decoder_blocks", "head_hidden", "dropout", "single_kernel",
                "no_cross_attention", "decode_from"},
               w);
    CaflaeConfig c;
    c.channels = count_field(j, "channels", c.channels, w);
    c.snapshot_len = count_field(j, "snapshot_len", c.snapshot_len, w);
    c.patch_len = count_field(j, "patch_len", c.patch_len, w);
    c.patch_stride = count_field(j, "patch_stride", c.patch_stride, w);
    c.kernels = field<std::vector<std::size_t>>(j, "kernels", c.kernels, w);
    c.width = count_field(j, "width", c.width, w);
    c.attn_width = count_field(j, "attn_width", c.width, w);
    c.heads = count_field(j, "heads", c.heads, w);
    c.ffn_ratio = count_field(j, "ffn_ratio", c.ffn_ratio, w);
    c.encoder_blocks = count_field(j, "encoder_blocks", c.encoder_blocks, w);
    c.decoder_blocks = count_field(j, "decoder_blocks", c.decoder_blocks, w);
    c.head_hidden = count_field(j, "head_hidden", c.head_hidden, w);
    c.dropout = field<double>(j, "dropout", c.dropout, w);
    c.single_kernel = field<bool>(j, "single_kernel", c.single_kernel, w);
    c.no_cross_attention = field<bool>(j, "no_cross_attention", c.no_cross_attention, w);
    c.decode_from = decode_from_from_string(field<std::string>(j, "decode_from", "fused_latent", w));
    c.validate();
    return c;
}

Json to_json(const TrainConfig& c) {
    Json j{{"epochs", c.epochs},
           {"batch_size", c.batch_size},
           {"lr", c.adam.lr},
           {"beta1", c.adam.beta1},
           {"beta2", c.adam.beta2},
           {"adam_eps", c.adam.eps},
           {"weighting", c.weighting == WeightingMode::Dwa ? "dwa" : "fixed"},
           {"fixed_weights", c.fixed_weights},
           {"sampling", to_string(c.sampling)},
           {"dwa_temperature", c.dwa_temperature},
           {"dwa_form", c.dwa_form == DwaForm::Literal ? "literal" : "normalized"}};
    j["mmd_sigma"] = c.mmd_sigma ? Json(*c.mmd_sigma) : Json("median");
    return j;
}

TrainConfig train_config_from_json(const Json& j) {
    const std::string w = "train";
    check_keys(j,
               {"epochs", "batch_size", "lr", "beta1", "beta2", "adam_eps", "weighting", "fixed_weights", "sampling",
                "dwa_temperature", "dwa_form", "mmd_sigma"},
               w);
    TrainConfig c;
    c.epochs = count_field(j, "epochs", c.epochs, w);
    c.batch_size = count_field(j, "batch_size", c.batch_size, w);
    c.adam.lr = field<double>(j, "lr", c.adam.lr, w);
    c.adam.beta1 = field<double>(j, "beta1", c.adam.beta1, w);
    c.adam.beta2 = field<double>(j, "beta2", c.adam.beta2, w);
    c.adam.eps = field<double>(j, "adam_eps", c.adam.eps, w);
    const auto weighting = field<std::string>(j, "weighting", "dwa", w);
    if (weighting == "dwa") {
        c.weighting = WeightingMode::Dwa;
    } else if (weighting == "fixed") {
        c.weighting = WeightingMode::Fixed;
    } else {
        throw ConfigError("train.weighting: expected dwa or fixed, got '" + weighting + "'");
    }
    c.fixed_weights = field<LossTriple>(j, "fixed_weights", c.fixed_weights, w);
    c.sampling = sampling_mode_from_string(field<std::string>(j, "sampling", "synchronized", w));
    c.dwa_temperature = field<double>(j, "dwa_temperature", c.dwa_temperature, w);
    const auto form = field<std::string>(j, "dwa_form", "normalized", w);
    if (form != "normalized" && form != "literal") {
        throw ConfigError("train.dwa_form: expected normalized or literal");
    }
    c.dwa_form = form == "literal" ? DwaForm::Literal : DwaForm::Normalized;
    if (j.contains("mmd_sigma") && j.at("mmd_sigma").is_number()) {
        c.mmd_sigma = j.at("mmd_sigma").get<double>();
    } else if (j.contains("mmd_sigma") && j.at("mmd_sigma") != "median") {
        throw ConfigError("train.mmd_sigma: expected a number or \"median\"");
    }
    c.validate();
    return c;
}

Json to_json(const PenaltyConfig& p) { return Json{{"c1", p.c1}, {"c2", p.c2}, {"max_stages", p.max_stages}}; }

PenaltyConfig penalty_config_from_json(const Json& j) {
    PenaltyConfig p;
    if (j.is_number()) {
        p.c1 = p.c2 = j.get<double>();
    } else {
        check_keys(j, {"c1", "c2", "max_stages"}, "penalty");
        p.c1 = field<double>(j, "c1", p.c1, "penalty");
        p.c2 = field<double>(j, "c2", p.c2, "penalty");
        p.max_stages = count_field(j, "max_stages", p.max_stages, "penalty");
    }
    p.validate();
    return p;
}

Json to_json(const ScfConfig& s) { return Json{{"alpha", s.alpha}, {"form", to_string(s.form)}}; }

ScfConfig scf_config_from_json(const Json& j) {
    check_keys(j, {"alpha", "form"}, "scf");
    ScfConfig s;
    s.alpha = field<double>(j, "alpha", s.alpha, "scf");
    s.form = scf_form_from_string(field<std::string>(j, "form", "normalized", "scf"));
    s.validate();
    return s;
}

Json to_json(const MetricsReport& r) {
    return Json{{"mon", r.mon},       {"cor", r.cor}, {"rob", r.rob},
                {"ci", r.ci},         {"xi", r.xi},   {"ma_window", r.ma_window},
                {"ci_weights", r.ci_weights}};
}

Json to_json(const StageSegmentation& seg, std::size_t window) {
    Json ranges = Json::array();
    for (const auto& r : map_to_time(seg, window)) {
        ranges.push_back({r.first, r.last});
    }
    return Json{{"domain", to_string(seg.domain)},
                {"omega", window},
                {"M", seg.stages()},
                {"boundaries", seg.boundaries},
                {"stage_time_ranges", ranges},
                {"cost", seg.total_cost},
                {"objective", seg.objective}};
}

ExperimentConfig experiment_config_from_json(const Json& j, const fs::path& base_dir) {
    check_keys(j,
               {"seed", "data", "synth", "omega", "sigma", "penalty", "scf", "model", "train", "metrics",
                "output_dir"},
               "config");
    ExperimentConfig c;
    if (!j.contains("seed")) {
        throw ConfigError("config: seed is required");
    }
    c.seed = count_field(j, "seed", 0, "config");
    auto resolve = [&](const std::string& p) {
        fs::path path(p);
        if (path.is_relative() && !base_dir.empty()) {
            path = base_dir / path;
        }
        if (!fs::exists(path)) {
            throw ConfigError("config: data file not found: " + path.string());
        }
        return path;
    };
    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"source", "target", "target_test"}, "config.data");
        if (!d.contains("source") || !d.contains("target")) {
            throw ConfigError("config.data: source and target are required");
        }
        c.data.source = resolve(d.at("source").get<std::string>());
        c.data.target = resolve(d.at("target").get<std::string>());
        if (d.contains("target_test")) {
            c.data.target_test = resolve(d.at("target_test").get<std::string>());
        }
    } else if (j.contains("synth")) {
        c.data.synth = synth_specs_from_json(j.at("synth"));
    } else {
        throw ConfigError("config: either data or synth is required");
    }
    c.omega = count_field(j, "omega", c.omega, "config");
    if (c.omega == 0) {
        throw ConfigError("config.omega must be >= 1");
    }
    if (j.contains("sigma")) {
        const auto& s = j.at("sigma");
        if (s.is_number()) {
            c.bandwidth = Bandwidth::value(s.get<double>());
            if (!(*c.bandwidth.fixed > 0.0)) {
                throw ConfigError("config.sigma must be positive");
            }
        } else if (s != "median") {
            throw ConfigError("config.sigma: expected a number or \"median\"");
        }
    }
    if (j.contains("penalty")) {
        c.penalty = penalty_config_from_json(j.at("penalty"));
    }
    if (j.contains("scf")) {
        c.scf = scf_config_from_json(j.at("scf"));
    }
    if (j.contains("model")) {
        c.model = caflae_config_from_json(j.at("model"));
    }
    if (j.contains("train")) {
        c.train = train_config_from_json(j.at("train"));
    }
    c.train.seed = c.seed;
    if (j.contains("metrics")) {
        const auto& m = j.at("metrics");
        check_keys(m, {"ma_window", "xi", "horizon"}, "config.metrics");
        c.metrics.ma_window = count_field(m, "ma_window", c.metrics.ma_window, "config.metrics");
        c.metrics.xi = field<double>(m, "xi", c.metrics.xi, "config.metrics");
        c.metrics.horizon = count_field(m, "horizon", c.metrics.horizon, "config.metrics");
    }
    if (j.contains("output_dir")) {
        fs::path out(j.at("output_dir").get<std::string>());
        c.output_dir = out.is_relative() && !base_dir.empty() ? base_dir / out : out;
    }
    return c;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    if (!fs::exists(path)) {
        throw UsageError("config file not found: " + path.string());
    }
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return experiment_config_from_json(j, path.parent_path());
}

Json to_json(const ExperimentConfig& c) {
    Json j{{"seed", c.seed},
           {"omega", c.omega},
           {"sigma", c.bandwidth.fixed ? Json(*c.bandwidth.fixed) : Json("median")},
           {"penalty", to_json(c.penalty)},
           {"scf", to_json(c.scf)},
           {"model", to_json(c.model)},
           {"train", to_json(c.train)},
           {"metrics", {{"ma_window", c.metrics.ma_window}, {"xi", c.metrics.xi}, {"horizon", c.metrics.horizon}}}};
    if (c.data.source) {
        Json d{{"source", c.data.source->string()}, {"target", c.data.target->string()}};
        if (c.data.target_test) {
            d["target_test"] = c.data.target_test->string();
        }
        j["data"] = d;
    } else {
        Json series = Json::array();
        for (const auto& s : c.data.synth) {
            series.push_back(to_json(s));
        }
        j["synth"] = {{"series", series}};
    }
    return j;
}

std::string sha256_hex(const std::string& data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 digest failed");
    }
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xf];
    }
    return out;
}

std::string config_hash(const Json& canonical) { return sha256_hex(canonical.dump()); }

void save_checkpoint(const fs::path& path, CaflaeModel& model, const std::string& rng_state, const Provenance& prov) {
    Json tensors = Json::array();
    Json buffers = Json::array();
    std::vector<double> payload;
    for (const auto& p : model.parameters()) {
        tensors.push_back({{"name", p.name}, {"shape", p.tensor.shape()}, {"offset", payload.size()}});
        payload.insert(payload.end(), p.tensor.values().begin(), p.tensor.values().end());
    }
    for (const auto& b : model.buffers()) {
        buffers.push_back({{"name", b.name}, {"size", b.values->size()}, {"offset", payload.size()}});
        payload.insert(payload.end(), b.values->begin(), b.values->end());
    }
    Json header{{"format", "dahi-checkpoint"},
                {"format_version", 1},
                {"byte_order", "little"},
                {"model", to_json(model.config())},
                {"tensors", tensors},
                {"buffers", buffers},
                {"values", payload.size()},
                {"rng_state", rng_state},
                {"provenance", to_json(prov)}};
    const std::string h = header.dump();
    std::string out(kMagic, sizeof(kMagic));
    const std::uint64_t hl = h.size();
    out.append(reinterpret_cast<const char*>(&hl), sizeof(hl));
    out += h;
    out.append(reinterpret_cast<const char*>(payload.data()), payload.size() * sizeof(double));
    write_file_atomic(path, out);
}

CaflaeModel load_checkpoint(const fs::path& path, CheckpointInfo* info) {
    if (!fs::exists(path)) {
        throw UsageError("checkpoint not found: " + path.string());
    }
    const std::string raw = read_file(path);
    if (raw.size() < sizeof(kMagic) + 8 || std::memcmp(raw.data(), kMagic, sizeof(kMagic)) != 0) {
        throw ParseError(path.string() + ": not a checkpoint file");
    }
    std::uint64_t hl = 0;
    std::memcpy(&hl, raw.data() + sizeof(kMagic), sizeof(hl));
    const std::size_t body = sizeof(kMagic) + sizeof(hl);
    if (raw.size() < body + hl) {
        throw ParseError(path.string() + ": truncated header");
    }
    Json header;
    try {
        header = Json::parse(raw.substr(body, hl));
    } catch (const Json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    const std::size_t count = header.at("values").get<std::size_t>();
    if (raw.size() != body + hl + count * sizeof(double)) {
        throw ParseError(path.string() + ": payload size mismatch");
    }
    std::vector<double> payload(count);
    std::memcpy(payload.data(), raw.data() + body + hl, count * sizeof(double));

    CaflaeModel model(caflae_config_from_json(header.at("model")), 0);
    std::map<std::string, Json> entries;
    for (const auto& t : header.at("tensors")) {
        entries[t.at("name").get<std::string>()] = t;
    }
    for (auto& p : model.parameters()) {
        auto it = entries.find(p.name);
        if (it == entries.end()) {
            throw ParseError(path.string() + ": missing tensor " + p.name);
        }
        if (it->second.at("shape").get<Shape>() != p.tensor.shape()) {
            throw ParseError(path.string() + ": shape mismatch for " + p.name);
        }
        const std::size_t off = it->second.at("offset").get<std::size_t>();
        if (off + p.tensor.numel() > payload.size()) {
            throw ParseError(path.string() + ": tensor " + p.name + " out of range");
        }
        auto dst = p.tensor.values_mut();
        std::copy(payload.begin() + static_cast<std::ptrdiff_t>(off),
                  payload.begin() + static_cast<std::ptrdiff_t>(off + dst.size()), dst.begin());
    }
    std::map<std::string, Json> buf_entries;
    for (const auto& b : header.at("buffers")) {
        buf_entries[b.at("name").get<std::string>()] = b;
    }
    for (auto& b : model.buffers()) {
        auto it = buf_entries.find(b.name);
        if (it == buf_entries.end() || it->second.at("size").get<std::size_t>() != b.values->size()) {
            throw ParseError(path.string() + ": missing or mismatched buffer " + b.name);
        }
        const std::size_t off = it->second.at("offset").get<std::size_t>();
        if (off + b.values->size() > payload.size()) {
            throw ParseError(path.string() + ": buffer " + b.name + " out of range");
        }
        std::copy(payload.begin() + static_cast<std::ptrdiff_t>(off),
                  payload.begin() + static_cast<std::ptrdiff_t>(off + b.values->size()), b.values->begin());
    }
    if (info) {
        info->header = header;
        info->rng_state = header.value("rng_state", "");
        const auto& p = header.at("provenance");
        info->provenance.config_hash = p.value("config_hash", "");
        info->provenance.seed = p.value("seed", std::uint64_t{0});
        info->provenance.version = p.value("tool_version", "");
    }
    return model;
}

std::string diagnostics_csv(const RunDiagnostics& d, const Provenance& prov) {
    std::string out = provenance_comment(prov);
    out += "epoch,l_scf,l_mmd,l_rec,lambda_scf,lambda_mmd,lambda_rec,total,batches\n";
    for (const auto& e : d.epochs) {
        out += std::to_string(e.epoch);
        for (auto v : e.losses) {
            out += "," + format_double(v);
        }
        for (auto v : e.weights) {
            out += "," + format_double(v);
        }
        out += "," + format_double(e.total) + "," + std::to_string(e.batches) + "\n";
    }
    return out;
}

std::string steps_csv(const RunDiagnostics& d, const Provenance& prov) {
    std::string out = provenance_comment(prov);
    out += "epoch,batch,stage,l_scf,l_mmd,l_rec,lambda_scf,lambda_mmd,lambda_rec,total\n";
    for (const auto& s : d.steps) {
        out += std::to_string(s.epoch) + "," + std::to_string(s.batch) + "," +
               (s.stage ? std::to_string(*s.stage + 1) : std::string("-"));
        for (auto v : s.losses) {
            out += "," + format_double(v);
        }
        for (auto v : s.weights) {
            out += "," + format_double(v);
        }
        out += "," + format_double(s.total) + "\n";
    }
    return out;
}

std::string timing_csv(const RunDiagnostics& d, const Provenance& prov) {
    std::string out = provenance_comment(prov);
    out += "epoch,wall_seconds\n";
    for (std::size_t i = 0; i < d.wall_seconds.size(); ++i) {
        out += std::to_string(i + 1) + "," + format_double(d.wall_seconds[i]) + "\n";
    }
    return out;
}

std::vector<double> load_loss_column(const fs::path& csv, const std::string& column) {
    if (!fs::exists(csv)) {
        throw UsageError("loss file not found: " + csv.string());
    }
    std::ifstream is(csv);
    std::string line;
    std::size_t line_no = 0;
    std::optional<std::size_t> col;
    std::size_t width = 0;
    std::vector<double> out;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t.front() == '#') {
            continue;
        }
        auto cells = split_csv(t);
        if (!col) {
            width = cells.size();
            const std::string want = column.empty() ? "total" : column;
            for (std::size_t i = 0; i < cells.size(); ++i) {
                if (cells[i] == want) {
                    col = i;
                }
            }
            if (!col) {
                if (!column.empty()) {
                    throw ParseError(csv.string() + ": no column named '" + column + "'");
                }
                col = cells.size() - 1;
            }
            continue;
        }
        if (cells.size() != width) {
            throw ParseError(csv.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                             " fields, got " + std::to_string(cells.size()));
        }
        try {
            out.push_back(parse_double(cells[*col]));
        } catch (const ParseError& e) {
            throw ParseError(csv.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace dahi
