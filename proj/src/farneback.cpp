// Dense optical flow after Farneback: each pyramid level approximates both
// images locally by quadratic polynomials (Gaussian-weighted least squares),
// then refines the displacement field from the change in the linear
// coefficients, pooled over a box window.

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

#include "tempsr/baselines.hpp"
#include "tempsr/error.hpp"

namespace tempsr {

namespace {

struct Grid {
    int h = 0, w = 0;
    std::vector<double> d;

    Grid() = default;
    Grid(int rows, int cols, double fill = 0.0) : h(rows), w(cols), d(std::size_t(rows) * cols, fill) {}
    double& at(int r, int c) { return d[std::size_t(r) * w + c]; }
    double at(int r, int c) const { return d[std::size_t(r) * w + c]; }
};

// Per-pixel expansion f(p + (y, x)) ~ c + bx x + by y + axx x^2 + ayy y^2 + axy x y.
struct PolyCoeffs {
    int h = 0, w = 0;
    std::vector<std::array<double, 5>> r;  // bx, by, axx, ayy, axy
};

constexpr int kBorder = 5;
constexpr std::array<double, kBorder> kBorderWeight = {0.14, 0.14, 0.4472, 0.8186, 1.0};
// The solver regulariser, expressed for intensities scaled to [0, 1]
// (equivalent to 1e-3 on an 8-bit intensity range).
const double kDetEps = 1e-3 / std::pow(255.0, 4);

int reflect101(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) i = i < 0 ? -i : 2 * n - 2 - i;
    return i;
}

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

Grid gaussian_blur(const Grid& src, double sigma) {
    if (sigma <= 0.0) return src;
    const int radius = std::max(3, int(std::lround(sigma * 5.0)) | 1) / 2;
    std::vector<double> k(std::size_t(2 * radius + 1));
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += k[std::size_t(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= total;

    Grid tmp(src.h, src.w), out(src.h, src.w);
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[std::size_t(i + radius)] * src.at(r, reflect101(c + i, src.w));
            tmp.at(r, c) = s;
        }
    for (int r = 0; r < src.h; ++r)
        for (int c = 0; c < src.w; ++c) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[std::size_t(i + radius)] * tmp.at(reflect101(r + i, src.h), c);
            out.at(r, c) = s;
        }
    return out;
}

// Bilinear resize with pixel-centre alignment and edge clamping.
Grid resize_linear(const Grid& src, int h, int w) {
    if (src.h == h && src.w == w) return src;
    Grid out(h, w);
    const double sy = double(src.h) / h, sx = double(src.w) / w;
    for (int r = 0; r < h; ++r) {
        const double fy = std::max(0.0, (r + 0.5) * sy - 0.5);
        const int y0 = std::min(int(fy), src.h - 1), y1 = std::min(y0 + 1, src.h - 1);
        const double ty = fy - y0;
        for (int c = 0; c < w; ++c) {
            const double fx = std::max(0.0, (c + 0.5) * sx - 0.5);
            const int x0 = std::min(int(fx), src.w - 1), x1 = std::min(x0 + 1, src.w - 1);
            const double tx = fx - x0;
            out.at(r, c) = (1 - ty) * ((1 - tx) * src.at(y0, x0) + tx * src.at(y0, x1)) +
                           ty * ((1 - tx) * src.at(y1, x0) + tx * src.at(y1, x1));
        }
    }
    return out;
}

PolyCoeffs poly_expand(const Grid& img, int n, double sigma) {
    const int len = 2 * n + 1;
    std::vector<double> g(static_cast<std::size_t>(len));
    double total = 0.0;
    for (int i = -n; i <= n; ++i) total += g[std::size_t(i + n)] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : g) v /= total;

    // Normal equations of the weighted fit, basis (1, x, y, x^2, y^2, xy).
    Eigen::Matrix<double, 6, 6> G = Eigen::Matrix<double, 6, 6>::Zero();
    for (int y = -n; y <= n; ++y)
        for (int x = -n; x <= n; ++x) {
            const Eigen::Matrix<double, 6, 1> b(1.0, x, y, double(x) * x, double(y) * y, double(x) * y);
            G += g[std::size_t(x + n)] * g[std::size_t(y + n)] * b * b.transpose();
        }
    const Eigen::Matrix<double, 6, 6> Ginv = G.inverse();

    // Vertical pass: moments of order 0..2 along rows, border replicated.
    const int H = img.h, W = img.w;
    std::vector<std::array<double, 3>> col(std::size_t(H) * W);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            std::array<double, 3> m{0, 0, 0};
            for (int y = -n; y <= n; ++y) {
                const double v = g[std::size_t(y + n)] * img.at(clamp_index(r + y, H), c);
                m[0] += v;
                m[1] += y * v;
                m[2] += double(y) * y * v;
            }
            col[std::size_t(r) * W + c] = m;
        }

    PolyCoeffs out{H, W, std::vector<std::array<double, 5>>(std::size_t(H) * W)};
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            Eigen::Matrix<double, 6, 1> h = Eigen::Matrix<double, 6, 1>::Zero();
            for (int x = -n; x <= n; ++x) {
                const auto& m = col[std::size_t(r) * W + clamp_index(c + x, W)];
                const double gx = g[std::size_t(x + n)];
                h[0] += gx * m[0];
                h[1] += gx * x * m[0];
                h[2] += gx * m[1];
                h[3] += gx * double(x) * x * m[0];
                h[4] += gx * m[2];
                h[5] += gx * x * m[1];
            }
            const Eigen::Matrix<double, 6, 1> p = Ginv * h;
            out.r[std::size_t(r) * W + c] = {p[1], p[2], p[3], p[4], p[5]};
        }
    return out;
}

using Matrices = std::vector<std::array<double, 5>>;  // g11, g12, g22, h1, h2

Matrices update_matrices(const PolyCoeffs& R0, const PolyCoeffs& R1, const Grid& fu, const Grid& fv) {
    const int H = R0.h, W = R0.w;
    Matrices M(std::size_t(H) * W);
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            const std::size_t idx = std::size_t(y) * W + x;
            const double dx = fu.at(y, x), dy = fv.at(y, x);
            double fx = x + dx, fy = y + dy;
            const int x1 = int(std::floor(fx)), y1 = int(std::floor(fy));
            fx -= x1;
            fy -= y1;
            const auto& r0 = R0.r[idx];
            double r2, r3, r4, r5, r6;
            if (x1 >= 0 && x1 < W - 1 && y1 >= 0 && y1 < H - 1) {
                const auto& p00 = R1.r[std::size_t(y1) * W + x1];
                const auto& p01 = R1.r[std::size_t(y1) * W + x1 + 1];
                const auto& p10 = R1.r[std::size_t(y1 + 1) * W + x1];
                const auto& p11 = R1.r[std::size_t(y1 + 1) * W + x1 + 1];
                const double a00 = (1 - fx) * (1 - fy), a01 = fx * (1 - fy), a10 = (1 - fx) * fy, a11 = fx * fy;
                std::array<double, 5> r1;
                for (int k = 0; k < 5; ++k) r1[std::size_t(k)] = a00 * p00[std::size_t(k)] + a01 * p01[std::size_t(k)] + a10 * p10[std::size_t(k)] + a11 * p11[std::size_t(k)];
                r2 = r1[0];
                r3 = r1[1];
                r4 = (r0[2] + r1[2]) * 0.5;
                r5 = (r0[3] + r1[3]) * 0.5;
                r6 = (r0[4] + r1[4]) * 0.25;
            } else {
                r2 = r3 = 0.0;
                r4 = r0[2];
                r5 = r0[3];
                r6 = r0[4] * 0.5;
            }
            // A = [[r4, r6], [r6, r5]], delta_b = (b0 - b1) / 2 + A d
            r2 = (r0[0] - r2) * 0.5 + r4 * dx + r6 * dy;
            r3 = (r0[1] - r3) * 0.5 + r6 * dx + r5 * dy;

            if (x < kBorder || x >= W - kBorder || y < kBorder || y >= H - kBorder) {
                const double s = (x < kBorder ? kBorderWeight[std::size_t(x)] : 1.0) *
                                 (x >= W - kBorder ? kBorderWeight[std::size_t(W - x - 1)] : 1.0) *
                                 (y < kBorder ? kBorderWeight[std::size_t(y)] : 1.0) *
                                 (y >= H - kBorder ? kBorderWeight[std::size_t(H - y - 1)] : 1.0);
                r2 *= s;
                r3 *= s;
                r4 *= s;
                r5 *= s;
                r6 *= s;
            }
            M[idx] = {r4 * r4 + r6 * r6, (r4 + r5) * r6, r5 * r5 + r6 * r6, r4 * r2 + r6 * r3, r6 * r2 + r5 * r3};
        }
    return M;
}

// Normalised box filter with replicated borders, separable.
Matrices box_blur(const Matrices& M, int H, int W, int window) {
    const int rad = window / 2;
    const double inv = 1.0 / window;
    Matrices tmp(M.size()), out(M.size());
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            std::array<double, 5> s{};
            for (int i = -rad; i <= rad; ++i) {
                const auto& m = M[std::size_t(r) * W + clamp_index(c + i, W)];
                for (int k = 0; k < 5; ++k) s[std::size_t(k)] += m[std::size_t(k)];
            }
            for (auto& v : s) v *= inv;
            tmp[std::size_t(r) * W + c] = s;
        }
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            std::array<double, 5> s{};
            for (int i = -rad; i <= rad; ++i) {
                const auto& m = tmp[std::size_t(clamp_index(r + i, H)) * W + c];
                for (int k = 0; k < 5; ++k) s[std::size_t(k)] += m[std::size_t(k)];
            }
            for (auto& v : s) v *= inv;
            out[std::size_t(r) * W + c] = s;
        }
    return out;
}

double percentile(std::vector<double> values, double pct) {
    if (values.empty()) return 0.0;
    const double pos = pct / 100.0 * double(values.size() - 1);
    const auto lo = std::size_t(std::floor(pos));
    std::nth_element(values.begin(), values.begin() + std::ptrdiff_t(lo), values.end());
    const double a = values[lo];
    if (lo + 1 >= values.size()) return a;
    const double b = *std::min_element(values.begin() + std::ptrdiff_t(lo) + 1, values.end());
    return a + (pos - double(lo)) * (b - a);
}

}  // namespace

void FarnebackParams::validate() const {
    if (!(pyramid_scale > 0.0 && pyramid_scale < 1.0)) throw UsageError("pyramid_scale must lie in (0, 1)");
    if (levels < 1) throw UsageError("levels must be >= 1");
    if (window < 1 || window % 2 == 0) throw UsageError("window must be odd and positive");
    if (iterations < 1) throw UsageError("iterations must be >= 1");
    if (poly_n < 1 || poly_n % 2 == 0) throw UsageError("poly_n must be odd and positive");
    if (!(poly_sigma > 0.0)) throw UsageError("poly_sigma must be > 0");
    if (min_level_size < 1) throw UsageError("min_level_size must be >= 1");
    if (!(clip_percentile > 0.0 && clip_percentile <= 100.0)) throw UsageError("clip_percentile must lie in (0, 100]");
}

FlowField farneback_flow(const RainMap& a, const RainMap& b, const FarnebackParams& params) {
    params.validate();
    if (a.height != b.height || a.width != b.width) throw DataError("flow inputs differ in shape");
    const int H = int(a.height), W = int(a.width);
    FlowField flow(a.height, a.width);

    std::vector<double> pooled;
    pooled.reserve(a.size() * 2);
    for (float v : a.values) pooled.push_back(v);
    for (float v : b.values) pooled.push_back(v);
    double clip = percentile(pooled, params.clip_percentile);
    if (!(clip > 0.0)) clip = *std::max_element(pooled.begin(), pooled.end());
    if (!(clip > 0.0)) return flow;  // both maps dry

    Grid img[2] = {Grid(H, W), Grid(H, W)};
    for (std::size_t i = 0; i < a.size(); ++i) {
        img[0].d[i] = std::min(double(a.values[i]), clip) / clip;
        img[1].d[i] = std::min(double(b.values[i]), clip) / clip;
    }

    int levels = 0;
    for (double s = 1.0; levels < params.levels; ++levels, s *= params.pyramid_scale)
        if (std::lround(H * s) < params.min_level_size || std::lround(W * s) < params.min_level_size) break;
    levels = std::max(levels, 1);

    Grid fu, fv;
    for (int k = levels - 1; k >= 0; --k) {
        const double s = std::pow(params.pyramid_scale, k);
        const int h = k == 0 ? H : int(std::lround(H * s));
        const int w = k == 0 ? W : int(std::lround(W * s));
        if (fu.d.empty()) {
            fu = Grid(h, w);
            fv = Grid(h, w);
        } else {
            const double ru = double(w) / fu.w, rv = double(h) / fu.h;
            fu = resize_linear(fu, h, w);
            fv = resize_linear(fv, h, w);
            for (auto& v : fu.d) v *= ru;
            for (auto& v : fv.d) v *= rv;
        }

        const double sigma = (1.0 / s - 1.0) * 0.5;
        PolyCoeffs R[2];
        for (int i = 0; i < 2; ++i)
            R[i] = poly_expand(resize_linear(gaussian_blur(img[i], sigma), h, w), params.poly_n, params.poly_sigma);

        Matrices M = update_matrices(R[0], R[1], fu, fv);
        for (int it = 0; it < params.iterations; ++it) {
            const Matrices B = box_blur(M, h, w, params.window);
            for (std::size_t i = 0; i < B.size(); ++i) {
                const auto& m = B[i];
                const double idet = 1.0 / (m[0] * m[2] - m[1] * m[1] + kDetEps);
                fu.d[i] = (m[2] * m[3] - m[1] * m[4]) * idet;
                fv.d[i] = (m[0] * m[4] - m[1] * m[3]) * idet;
            }
            if (it + 1 < params.iterations) M = update_matrices(R[0], R[1], fu, fv);
        }
    }

    for (std::size_t i = 0; i < flow.u.size(); ++i) {
        flow.u[i] = static_cast<float>(fu.d[i]);
        flow.v[i] = static_cast<float>(fv.d[i]);
    }
    return flow;
}

}  // namespace tempsr
