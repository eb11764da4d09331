#pragma once

#include "dahi/error.hpp"
#include "dahi/tensor.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dahi {

enum class Domain { Source, Target };

std::string to_string(Domain d);
Domain domain_from_string(const std::string& s);

/// Small dense row-major matrix.
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// One run-to-failure recording: T snapshots of C channels by L samples, stored [t][c][l].
struct RtFSeries {
    Domain domain = Domain::Source;
    std::size_t channels = 0;
    std::size_t snapshot_len = 0;
    std::vector<double> data;
    std::size_t failure_index = 0;
    double sampling_interval_seconds = 1.0;
    std::string id;

    std::size_t snapshots() const;
    /// Per-channel scalar stream length, T * L.
    std::size_t stream_length() const { return snapshots() * snapshot_len; }
    double sample(std::size_t t, std::size_t c, std::size_t l) const;
    /// Channel c of the concatenated scalar stream at 0-based position i.
    double stream(std::size_t c, std::size_t i) const;
    Tensor snapshot(std::size_t t) const;
    /// Stacks the selected snapshots into [B, C, L].
    Tensor batch(std::span<const std::size_t> indices) const;
    void validate() const;
};

struct ChannelRange {
    std::vector<double> min;
    std::vector<double> max;
};

ChannelRange channel_range(const RtFSeries& series);

/// Per-channel Min-Max scaling to [0, 1]. Uses the series' own range unless `range`
/// is supplied. Constant channels scale to zeros and record a warning.
RtFSeries min_max_scale(const RtFSeries& series, Warnings* warnings = nullptr,
                        const std::optional<ChannelRange>& range = std::nullopt);

struct RmsSequence {
    std::vector<std::vector<double>> vectors; // N x C
    std::size_t window_len = 0;
    std::string source_series_id;

    std::size_t size() const { return vectors.size(); }
};

/// Channel-wise RMS over consecutive windows of the scalar stream; a trailing
/// remainder shorter than the window is dropped.
RmsSequence windowed_rms(const RtFSeries& series, std::size_t window);

/// Median of the pairwise Euclidean distances between rows (pairs u < v).
double median_pairwise_distance(const std::vector<std::vector<double>>& rows);

struct Bandwidth {
    std::optional<double> fixed;

    static Bandwidth median() { return {}; }
    static Bandwidth value(double sigma) { return {sigma}; }
};

struct KernelMatrix {
    Matrix k;
    double sigma = 1.0;
};

/// RBF Gram matrix over RMS vectors. The median heuristic falls back to sigma = 1
/// (with a warning) when the median distance is zero.
KernelMatrix rbf_kernel_matrix(const RmsSequence& seq, Bandwidth bandwidth = Bandwidth::median(),
                               Warnings* warnings = nullptr);

} // namespace dahi
