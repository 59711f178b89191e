#include "tempsr/baselines.hpp"

#include <cmath>

#include "tempsr/error.hpp"

namespace tempsr {

RainMap nearest_frame(const TripletSample& sample) {
    RainMap out = sample.before;
    out.timestamp = sample.target.timestamp;
    return out;
}

RainMap advect(const RainMap& source, const FlowField& flow, double alpha) {
    if (flow.height != source.height || flow.width != source.width || flow.u.size() != source.size() ||
        flow.v.size() != source.size())
        throw DataError("flow field shape does not match the source map");
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw UsageError("advection fraction must lie in [0, 1]");

    const int H = int(source.height), W = int(source.width);
    std::vector<double> acc(source.size(), 0.0);
    auto splat = [&](int r, int c, double mass) {
        if (r >= 0 && r < H && c >= 0 && c < W) acc[std::size_t(r) * W + c] += mass;
    };
    for (int r = 0; r < H; ++r) {
        for (int c = 0; c < W; ++c) {
            const std::size_t i = std::size_t(r) * W + c;
            const double mass = source.values[i];
            if (mass == 0.0) continue;
            const double x = c + alpha * flow.u[i];
            const double y = r + alpha * flow.v[i];
            if (!std::isfinite(x) || !std::isfinite(y)) throw NumericError("non-finite flow vector");
            if (x <= -1.0 || y <= -1.0 || x >= W || y >= H) continue;  // lands entirely outside
            const double x0 = std::floor(x), y0 = std::floor(y);
            const double fx = x - x0, fy = y - y0;
            const int ix = int(x0), iy = int(y0);
            splat(iy, ix, mass * (1 - fx) * (1 - fy));
            if (fx > 0) splat(iy, ix + 1, mass * fx * (1 - fy));
            if (fy > 0) splat(iy + 1, ix, mass * (1 - fx) * fy);
            if (fx > 0 && fy > 0) splat(iy + 1, ix + 1, mass * fx * fy);
        }
    }
    RainMap out(source.height, source.width, source.cell_size_m, source.timestamp);
    for (std::size_t i = 0; i < acc.size(); ++i) out.values[i] = static_cast<float>(acc[i]);
    return out;
}

RainMap interpolate_optical_flow(const TripletSample& sample, const FarnebackParams& params) {
    const FlowField flow = farneback_flow(sample.before, sample.after, params);
    RainMap out = advect(sample.before, flow, 0.5);
    out.timestamp = sample.target.timestamp;
    return out;
}

}  // namespace tempsr
