#pragma once

// Verification scores for interpolated rain maps: MAE plus the categorical
// POD / FAR / CSI computed from pooled hit, false-alarm and miss counts.
//
// Wet/dry rule per cell: truth is wet iff truth > 0; a prediction is wet iff
// it exceeds the threshold (0.0001 mm/h by default) so that tiny non-zero
// network outputs do not count as rain. Correct negatives are not used.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tempsr/dataset.hpp"
#include "tempsr/grid_io.hpp"

namespace tempsr {

inline constexpr double kDefaultThreshold = 1e-4;

struct ContingencyCounts {
    std::uint64_t hits = 0;
    std::uint64_t false_alarms = 0;
    std::uint64_t misses = 0;

    ContingencyCounts& operator+=(const ContingencyCounts& o) {
        hits += o.hits;
        false_alarms += o.false_alarms;
        misses += o.misses;
        return *this;
    }
    friend bool operator==(const ContingencyCounts&, const ContingencyCounts&) = default;
};

ContingencyCounts contingency(const RainMap& pred, const RainMap& truth, double threshold = kDefaultThreshold);

// H / (H + M); no value when H + M = 0.
std::optional<double> pod(const ContingencyCounts& c);
// F / (H + F); 0 when H + F = 0.
double far(const ContingencyCounts& c);
// H / (H + F + M); no value when the denominator is 0.
std::optional<double> csi(const ContingencyCounts& c);

// Mean absolute difference over all cells, accumulated in double.
double mae_map(const RainMap& pred, const RainMap& truth);

struct ScoreReport {
    std::string method;
    double mae = 0.0;
    std::optional<double> pod;
    double far = 0.0;
    std::optional<double> csi;
    ContingencyCounts counts;
    std::size_t sample_count = 0;
    double threshold = kDefaultThreshold;
};

using Interpolator = std::function<RainMap(const TripletSample&)>;

// Scores `method` over all samples. MAE averages over every cell of every
// sample; contingency counts are pooled and scored once. Samples are
// visited in sample-id order, so the result is independent of input order.
ScoreReport evaluate(const std::string& name, const Interpolator& method, const std::vector<TripletSample>& samples,
                     double threshold = kDefaultThreshold);

// Aligned plain-text table: Methodology | MAE(mm/h)↓ | CSI ↑ | POD ↑ | FAR ↓
void write_report_table(const std::vector<ScoreReport>& reports, std::ostream& out);
// "method,mae,csi,pod,far,samples,threshold" with a header line; missing scores print as "nan".
void write_report_csv(const std::vector<ScoreReport>& reports, std::ostream& out);

}  // namespace tempsr
