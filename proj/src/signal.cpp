#include "dahi/signal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dahi {

std::string to_string(Domain d) { return d == Domain::Source ? "source" : "target"; }

Domain domain_from_string(const std::string& s) {
    if (s == "source" || s == "S") {
        return Domain::Source;
    }
    if (s == "target" || s == "T") {
        return Domain::Target;
    }
    throw ConfigError("unknown domain '" + s + "' (expected source or target)");
}

std::size_t RtFSeries::snapshots() const {
    const std::size_t per = channels * snapshot_len;
    return per == 0 ? 0 : data.size() / per;
}

double RtFSeries::sample(std::size_t t, std::size_t c, std::size_t l) const {
    return data[(t * channels + c) * snapshot_len + l];
}

double RtFSeries::stream(std::size_t c, std::size_t i) const {
    return sample(i / snapshot_len, c, i % snapshot_len);
}

Tensor RtFSeries::snapshot(std::size_t t) const {
    if (t >= snapshots()) {
        throw IndexError("snapshot index " + std::to_string(t) + " out of range (T=" + std::to_string(snapshots()) +
                         ")");
    }
    const std::size_t per = channels * snapshot_len;
    std::vector<double> v(data.begin() + static_cast<std::ptrdiff_t>(t * per),
                          data.begin() + static_cast<std::ptrdiff_t>((t + 1) * per));
    return Tensor({channels, snapshot_len}, std::move(v));
}

Tensor RtFSeries::batch(std::span<const std::size_t> indices) const {
    const std::size_t per = channels * snapshot_len;
    std::vector<double> v;
    v.reserve(indices.size() * per);
    for (auto t : indices) {
        if (t >= snapshots()) {
            throw IndexError("snapshot index " + std::to_string(t) + " out of range (T=" +
                             std::to_string(snapshots()) + ")");
        }
        v.insert(v.end(), data.begin() + static_cast<std::ptrdiff_t>(t * per),
                 data.begin() + static_cast<std::ptrdiff_t>((t + 1) * per));
    }
    return Tensor({indices.size(), channels, snapshot_len}, std::move(v));
}

void RtFSeries::validate() const {
    if (channels == 0 || snapshot_len == 0) {
        throw DimensionError("series must have at least one channel and a positive snapshot length");
    }
    if (data.size() % (channels * snapshot_len) != 0) {
        throw DimensionError("series data is not a whole number of [C, L] snapshots");
    }
    if (!(sampling_interval_seconds > 0.0)) {
        throw ConfigError("sampling_interval_seconds must be positive");
    }
    if (failure_index == 0 || failure_index > snapshots()) {
        throw ConfigError("failure_index " + std::to_string(failure_index) + " must lie in [1, T=" +
                          std::to_string(snapshots()) + "]");
    }
}

ChannelRange channel_range(const RtFSeries& series) {
    ChannelRange r;
    r.min.assign(series.channels, std::numeric_limits<double>::infinity());
    r.max.assign(series.channels, -std::numeric_limits<double>::infinity());
    for (std::size_t t = 0; t < series.snapshots(); ++t) {
        for (std::size_t c = 0; c < series.channels; ++c) {
            for (std::size_t l = 0; l < series.snapshot_len; ++l) {
                const double v = series.sample(t, c, l);
                r.min[c] = std::min(r.min[c], v);
                r.max[c] = std::max(r.max[c], v);
            }
        }
    }
    return r;
}

RtFSeries min_max_scale(const RtFSeries& series, Warnings* warnings, const std::optional<ChannelRange>& range) {
    const ChannelRange r = range ? *range : channel_range(series);
    if (r.min.size() != series.channels || r.max.size() != series.channels) {
        throw DimensionError("min_max_scale: range has " + std::to_string(r.min.size()) + " channels, series has " +
                             std::to_string(series.channels));
    }
    RtFSeries out = series;
    for (std::size_t c = 0; c < series.channels; ++c) {
        const double span = r.max[c] - r.min[c];
        if (!(span > 0.0)) {
            warn(warnings, "min_max_scale: channel " + std::to_string(c) + " is constant; scaled to zeros");
        }
        for (std::size_t t = 0; t < series.snapshots(); ++t) {
            for (std::size_t l = 0; l < series.snapshot_len; ++l) {
                double& v = out.data[(t * series.channels + c) * series.snapshot_len + l];
                v = span > 0.0 ? (v - r.min[c]) / span : 0.0;
            }
        }
    }
    return out;
}

RmsSequence windowed_rms(const RtFSeries& series, std::size_t window) {
    if (window == 0) {
        throw ConfigError("windowed_rms: window length must be >= 1");
    }
    const std::size_t n = series.stream_length();
    if (window > n) {
        throw EmptyResultError("windowed_rms: window length " + std::to_string(window) +
                               " exceeds per-channel stream length " + std::to_string(n));
    }
    RmsSequence seq;
    seq.window_len = window;
    seq.source_series_id = series.id;
    const std::size_t count = n / window;
    seq.vectors.assign(count, std::vector<double>(series.channels, 0.0));
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t c = 0; c < series.channels; ++c) {
            double s = 0.0;
            for (std::size_t j = i * window; j < (i + 1) * window; ++j) {
                const double v = series.stream(c, j);
                s += v * v;
            }
            seq.vectors[i][c] = std::sqrt(s / static_cast<double>(window));
        }
    }
    return seq;
}

double median_pairwise_distance(const std::vector<std::vector<double>>& rows) {
    std::vector<double> d;
    d.reserve(rows.size() * (rows.size() - (rows.empty() ? 0 : 1)) / 2);
    for (std::size_t u = 0; u < rows.size(); ++u) {
        for (std::size_t v = u + 1; v < rows.size(); ++v) {
            double s = 0.0;
            for (std::size_t c = 0; c < rows[u].size(); ++c) {
                const double diff = rows[u][c] - rows[v][c];
                s += diff * diff;
            }
            d.push_back(std::sqrt(s));
        }
    }
    if (d.empty()) {
        return 0.0;
    }
    std::sort(d.begin(), d.end());
    const std::size_t mid = d.size() / 2;
    return d.size() % 2 == 1 ? d[mid] : 0.5 * (d[mid - 1] + d[mid]);
}

KernelMatrix rbf_kernel_matrix(const RmsSequence& seq, Bandwidth bandwidth, Warnings* warnings) {
    const std::size_t n = seq.size();
    if (n < 2) {
        throw DimensionError("rbf_kernel_matrix: needs at least 2 RMS vectors, got " + std::to_string(n));
    }
    KernelMatrix out;
    if (bandwidth.fixed) {
        if (!(*bandwidth.fixed > 0.0)) {
            throw ConfigError("rbf_kernel_matrix: sigma must be positive");
        }
        out.sigma = *bandwidth.fixed;
    } else {
        out.sigma = median_pairwise_distance(seq.vectors);
        if (!(out.sigma > 0.0)) {
            warn(warnings, "rbf_kernel_matrix: median pairwise distance is zero; falling back to sigma = 1");
            out.sigma = 1.0;
        }
    }
    const double inv = 1.0 / (2.0 * out.sigma * out.sigma);
    out.k = Matrix(n, n);
    for (std::size_t u = 0; u < n; ++u) {
        out.k(u, u) = 1.0;
        for (std::size_t v = u + 1; v < n; ++v) {
            double s = 0.0;
            for (std::size_t c = 0; c < seq.vectors[u].size(); ++c) {
                const double diff = seq.vectors[u][c] - seq.vectors[v][c];
                s += diff * diff;
            }
            const double kv = std::exp(-s * inv);
            out.k(u, v) = kv;
            out.k(v, u) = kv;
        }
    }
    return out;
}

} // namespace dahi
