#pragma once

#include "dahi/caflae.hpp"
#include "dahi/losses.hpp"
#include "dahi/metrics.hpp"
#include "dahi/segmentation.hpp"
#include "dahi/signal.hpp"
#include "dahi/training.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dahi {

using Json = nlohmann::json;
namespace fs = std::filesystem;

std::string version_string();

/// Shortest text that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text);

struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::string version = version_string();
};

Json to_json(const Provenance& p);
/// "# key=value" comment lines for CSV outputs.
std::string provenance_comment(const Provenance& p);

void write_file_atomic(const fs::path& path, const std::string& content);
std::string read_file(const fs::path& path);

fs::path sidecar_path(const fs::path& csv);

/// Reads "t,ch0,...,chC-1" rows plus the `<name>.meta.json` sidecar.
RtFSeries load_rtf_csv(const fs::path& csv);
void write_rtf_csv(const RtFSeries& series, const fs::path& csv, const Provenance& prov);

struct SynthStage {
    std::size_t duration = 1;
    double amplitude = 1.0;
    double noise = 0.0;
    double slope = 0.0;
    double harmonic = 0.0;       // second-harmonic ratio at stage start
    double harmonic_slope = 0.0; // growth per snapshot
};

/// Piecewise run-to-failure generator. Per stage: a sinusoid of level `amplitude` with a
/// second harmonic of relative size `harmonic` (+ `harmonic_slope` per snapshot), plus
/// Gaussian noise whose scale starts at `noise` and grows by `slope` per snapshot.
/// Channel c is scaled by 1 + c/2 and phase-shifted by c*pi/3.
struct SynthSpec {
    std::string name = "series";
    Domain domain = Domain::Source;
    std::vector<SynthStage> stages;
    std::size_t channels = 2;
    std::size_t snapshot_len = 32;
    std::size_t period = 0; // 0 -> snapshot_len / 4
    double sampling_interval_seconds = 1.0;
    std::uint64_t seed = 0;

    std::size_t snapshots() const;
    void validate() const;
};

struct SynthOutput {
    RtFSeries series;
    StageSegmentation truth; // boundaries in snapshot units
    std::vector<double> labels;
};

SynthOutput generate_synth(const SynthSpec& spec);

Json to_json(const SynthSpec& s);
SynthSpec synth_spec_from_json(const Json& j);
/// Accepts one spec object or {"series": [spec, ...]}.
std::vector<SynthSpec> synth_specs_from_json(const Json& j);

Json to_json(const CaflaeConfig& c);
CaflaeConfig caflae_config_from_json(const Json& j);
Json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const Json& j);
Json to_json(const PenaltyConfig& p);
PenaltyConfig penalty_config_from_json(const Json& j);
Json to_json(const ScfConfig& s);
ScfConfig scf_config_from_json(const Json& j);
Json to_json(const MetricsReport& r);
Json to_json(const StageSegmentation& seg, std::size_t window);

struct MetricOptions {
    std::size_t ma_window = 5;
    double xi = 2.0;
    std::size_t horizon = 10;
};

struct DataSources {
    std::optional<fs::path> source;
    std::optional<fs::path> target;
    std::optional<fs::path> target_test;
    std::vector<SynthSpec> synth; // used when no paths are given
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    DataSources data;
    std::size_t omega = 32;
    Bandwidth bandwidth = Bandwidth::median();
    PenaltyConfig penalty;
    ScfConfig scf;
    CaflaeConfig model;
    TrainConfig train;
    MetricOptions metrics;
    fs::path output_dir = "runs";
};

/// Parses and validates; relative paths resolve against `base_dir`. Missing seed or
/// missing data files are configuration errors.
ExperimentConfig experiment_config_from_json(const Json& j, const fs::path& base_dir = {});
ExperimentConfig load_experiment_config(const fs::path& path);
Json to_json(const ExperimentConfig& c);

/// SHA-256 of the canonical (sorted-key, compact) JSON dump, hex encoded.
std::string sha256_hex(const std::string& data);
std::string config_hash(const Json& canonical);

struct CheckpointInfo {
    Json header;
    std::string rng_state;
    Provenance provenance;
};

void save_checkpoint(const fs::path& path, CaflaeModel& model, const std::string& rng_state, const Provenance& prov);
CaflaeModel load_checkpoint(const fs::path& path, CheckpointInfo* info = nullptr);

std::string diagnostics_csv(const RunDiagnostics& d, const Provenance& prov);
std::string steps_csv(const RunDiagnostics& d, const Provenance& prov);
std::string timing_csv(const RunDiagnostics& d, const Provenance& prov);

/// Reads a loss column from a CSV with a header row; `column` empty picks "total"
/// when present, otherwise the last column.
std::vector<double> load_loss_column(const fs::path& csv, const std::string& column = {});

} // namespace dahi
