#pragma once

// Non-neural interpolators: persistence of the predecessor frame, and
// optical-flow advection (Farneback dense flow + forward bilinear splatting).

#include <cstdint>
#include <vector>

#include "tempsr/dataset.hpp"
#include "tempsr/grid_io.hpp"

namespace tempsr {

// Displacement in cells mapping frame A towards frame B:
// a(row, col) ~ b(row + v, col + u).
struct FlowField {
    std::uint32_t height = 0;
    std::uint32_t width = 0;
    std::vector<float> u;  // along columns (x)
    std::vector<float> v;  // along rows (y)

    FlowField() = default;
    FlowField(std::uint32_t h, std::uint32_t w, float u0 = 0.0f, float v0 = 0.0f)
        : height(h), width(w), u(std::size_t(h) * w, u0), v(std::size_t(h) * w, v0) {}
};

struct FarnebackParams {
    double pyramid_scale = 0.5;
    int levels = 3;
    int window = 15;
    int iterations = 3;
    int poly_n = 5;
    double poly_sigma = 1.1;
    // Pyramid levels whose shorter side would fall below this are skipped.
    int min_level_size = 8;
    // Intensities are clipped at this percentile of the pair, then scaled to [0, 1].
    double clip_percentile = 99.5;

    void validate() const;
};

RainMap nearest_frame(const TripletSample& sample);

FlowField farneback_flow(const RainMap& a, const RainMap& b, const FarnebackParams& params = {});

// Forward-warps every source cell by alpha * flow, splatting its mass
// bilinearly onto the four surrounding cells. Mass leaving the grid is
// dropped; cells that receive nothing stay zero.
RainMap advect(const RainMap& source, const FlowField& flow, double alpha);

// Flow from before to after, then a half-way advection of `before`.
RainMap interpolate_optical_flow(const TripletSample& sample, const FarnebackParams& params = {});

}  // namespace tempsr
