#pragma once

#include "dahi/caflae.hpp"
#include "dahi/error.hpp"

#include <array>
#include <cstdint>
#include <vector>

namespace dahi {

struct HiSeries {
    std::vector<double> values;
    std::vector<double> trend;    // centred moving average
    std::vector<double> residual; // values - trend
    std::size_t ma_window = 5;
};

/// Centred moving average; near the edges the window shrinks symmetrically.
HiSeries moving_average(const std::vector<double>& hi, std::size_t window = 5);

double monotonicity(const HiSeries& s);
double correlation(const HiSeries& s, Warnings* warnings = nullptr);
double robustness(const HiSeries& s, double xi = 2.0);
double comprehensive_index(double mon, double cor, double rob);

struct MetricsReport {
    double mon = 0.0;
    double cor = 0.0;
    double rob = 0.0;
    double ci = 0.0;
    double xi = 2.0;
    std::size_t ma_window = 5;
    std::array<double, 3> ci_weights{0.4, 0.3, 0.3};
};

MetricsReport evaluate_hi(const std::vector<double>& hi, std::size_t window = 5, double xi = 2.0,
                          Warnings* warnings = nullptr);

/// Sample standard deviation of the last `horizon` values.
double pi_control(const std::vector<double>& losses, std::size_t horizon = 10);

struct ErfResult {
    std::vector<double> map; // per time index of the snapshot
    double breadth = 0.0;    // fraction of positions with ERF >= 1% of the peak
};

/// Mean absolute input gradient of the encoder's mean feature, averaged over channels,
/// batch items and `n_batches` randomly drawn batches of snapshots.
ErfResult erf_map(CaflaeModel& model, const RtFSeries& series, std::size_t n_batches = 5,
                  std::size_t batch_size = 8, std::uint64_t seed = 0);

double erf_breadth(const std::vector<double>& map);

} // namespace dahi
