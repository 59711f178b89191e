#pragma once

// Brute-force reference for the verification scores: enumerates cells one by
// one with the wet/dry rule spelled out, no shared code with the library.

#include <cmath>
#include <cstdint>
#include <vector>

namespace tempsr::testing {

struct OracleScores {
    std::uint64_t h = 0, f = 0, m = 0;
    double abs_sum = 0.0;
    std::size_t cells = 0;

    void add(const std::vector<float>& pred, const std::vector<float>& truth, double threshold) {
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const bool truth_wet = truth[i] > 0.0f;
            const bool pred_wet = double(pred[i]) > threshold;
            if (truth_wet && pred_wet) ++h;
            if (!truth_wet && pred_wet) ++f;
            if (truth_wet && !pred_wet) ++m;
            abs_sum += std::fabs(double(pred[i]) - double(truth[i]));
            ++cells;
        }
    }
    double mae() const { return abs_sum / double(cells); }
    bool has_pod() const { return h + m > 0; }
    double pod() const { return double(h) / double(h + m); }
    double far() const { return h + f == 0 ? 0.0 : double(f) / double(h + f); }
    bool has_csi() const { return h + f + m > 0; }
    double csi() const { return double(h) / double(h + f + m); }
};

}  // namespace tempsr::testing
