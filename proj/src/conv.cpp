// Convolution kernels: im2col + GEMM (Eigen) and a direct reference path,
// plus the depthwise variant used inside MBConv blocks.

#include <Eigen/Core>
#include <algorithm>
#include <stdexcept>
#include <type_traits>

#include "tempsr/tensor.hpp"

namespace tempsr::nn {

using detail::Node;

namespace {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

thread_local ConvAlgo g_conv_algo = ConvAlgo::Gemm;

struct ConvGeometry {
    std::int64_t N, C_in, C_out, H, W, k, pad;
    std::int64_t HW() const { return H * W; }
    std::int64_t K() const { return C_in * k * k; }
};

ConvGeometry check_conv(const Tensor& x, const ConvParams& p) {
    if (x.rank() != 4) throw std::invalid_argument("conv2d: expected NCHW input, got " + shape_str(x.shape()));
    const Shape& ws = p.weight.shape();
    if (ws.size() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0)
        throw std::invalid_argument("conv2d: weight must be (C_out, C_in, k, k) with odd k, got " + shape_str(ws));
    if (ws[1] != x.dim(1))
        throw std::invalid_argument("conv2d: channel mismatch, input has " + std::to_string(x.dim(1)) +
                                    " channels, weight expects " + std::to_string(ws[1]));
    if (p.bias.shape() != Shape{ws[0]})
        throw std::invalid_argument("conv2d: bias shape " + shape_str(p.bias.shape()) + " does not match C_out");
    if (x.dim(2) < 1 || x.dim(3) < 1) throw std::invalid_argument("conv2d: empty spatial extent");
    return {x.dim(0), ws[1], ws[0], x.dim(2), x.dim(3), ws[2], (ws[2] - 1) / 2};
}

// col[(ci*k + kh)*k + kw][h*W + w] = x[ci][h + kh - pad][w + kw - pad] (zero outside)
void im2col(const float* x, const ConvGeometry& g, float* col) {
    const auto H = g.H, W = g.W, k = g.k, pad = g.pad;
    for (std::int64_t ci = 0; ci < g.C_in; ++ci) {
        const float* plane = x + ci * H * W;
        for (std::int64_t kh = 0; kh < k; ++kh) {
            for (std::int64_t kw = 0; kw < k; ++kw) {
                float* row = col + ((ci * k + kh) * k + kw) * H * W;
                const std::int64_t dx = kw - pad;
                const std::int64_t w_lo = std::max<std::int64_t>(0, -dx);
                const std::int64_t w_hi = std::min<std::int64_t>(W, W - dx);
                for (std::int64_t h = 0; h < H; ++h) {
                    float* dst = row + h * W;
                    const std::int64_t sh = h + kh - pad;
                    if (sh < 0 || sh >= H || w_lo >= w_hi) {
                        std::fill_n(dst, W, 0.0f);
                        continue;
                    }
                    const float* src = plane + sh * W;
                    std::fill_n(dst, w_lo, 0.0f);
                    std::copy(src + w_lo + dx, src + w_hi + dx, dst + w_lo);
                    std::fill(dst + w_hi, dst + W, 0.0f);
                }
            }
        }
    }
}

void col2im_add(const float* col, const ConvGeometry& g, float* x) {
    const auto H = g.H, W = g.W, k = g.k, pad = g.pad;
    for (std::int64_t ci = 0; ci < g.C_in; ++ci) {
        float* plane = x + ci * H * W;
        for (std::int64_t kh = 0; kh < k; ++kh) {
            for (std::int64_t kw = 0; kw < k; ++kw) {
                const float* row = col + ((ci * k + kh) * k + kw) * H * W;
                const std::int64_t dx = kw - pad;
                const std::int64_t w_lo = std::max<std::int64_t>(0, -dx);
                const std::int64_t w_hi = std::min<std::int64_t>(W, W - dx);
                for (std::int64_t h = 0; h < H; ++h) {
                    const std::int64_t sh = h + kh - pad;
                    if (sh < 0 || sh >= H) continue;
                    float* dst = plane + sh * W + dx;
                    const float* src = row + h * W;
                    for (std::int64_t w = w_lo; w < w_hi; ++w) dst[w] += src[w];
                }
            }
        }
    }
}

template <typename Acc>
std::vector<float> conv_forward_gemm(const float* x, const float* wt, const float* bias, const ConvGeometry& g) {
    const auto HW = g.HW(), K = g.K();
    std::vector<float> out(std::size_t(g.N * g.C_out * HW));
    std::vector<float> col(g.k == 1 ? 0 : std::size_t(K * HW));
    CMapRM Wm(wt, g.C_out, K);
    Eigen::Map<const Eigen::VectorXf> b(bias, g.C_out);
    for (std::int64_t n = 0; n < g.N; ++n) {
        const float* xn = x + n * g.C_in * HW;
        if (g.k != 1) im2col(xn, g, col.data());
        CMapRM X(g.k == 1 ? xn : col.data(), K, HW);
        MapRM Y(out.data() + n * g.C_out * HW, g.C_out, HW);
        if constexpr (std::is_same_v<Acc, float>) {
            Y.noalias() = Wm * X;
            Y.colwise() += b;
        } else {
            Eigen::Matrix<Acc, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> Yd = Wm.cast<Acc>() * X.cast<Acc>();
            Yd.colwise() += b.cast<Acc>();
            Y = Yd.template cast<float>();
        }
    }
    return out;
}

template <typename Acc>
void conv_backward_gemm(Node& self, const ConvGeometry& g) {
    Node& xin = *self.inputs[0];
    Node& win = *self.inputs[1];
    Node& bin = *self.inputs[2];
    const auto HW = g.HW(), K = g.K();
    std::vector<float> col(g.k == 1 ? 0 : std::size_t(K * HW));
    CMapRM Wm(win.value.data(), g.C_out, K);

    if (bin.requires_grad) {
        auto& gb = grad_buffer(bin);
        for (std::int64_t co = 0; co < g.C_out; ++co) {
            double s = 0.0;
            for (std::int64_t n = 0; n < g.N; ++n) {
                const float* dy = self.grad.data() + (n * g.C_out + co) * HW;
                for (std::int64_t i = 0; i < HW; ++i) s += dy[i];
            }
            gb[std::size_t(co)] += static_cast<float>(s);
        }
    }
    if (win.requires_grad) {
        MapRM dW(grad_buffer(win).data(), g.C_out, K);
        for (std::int64_t n = 0; n < g.N; ++n) {
            const float* xn = xin.value.data() + n * g.C_in * HW;
            if (g.k != 1) im2col(xn, g, col.data());
            CMapRM X(g.k == 1 ? xn : col.data(), K, HW);
            CMapRM dY(self.grad.data() + n * g.C_out * HW, g.C_out, HW);
            if constexpr (std::is_same_v<Acc, float>)
                dW.noalias() += dY * X.transpose();
            else
                dW += (dY.cast<Acc>() * X.cast<Acc>().transpose()).template cast<float>();
        }
    }
    if (xin.requires_grad) {
        auto& gx = grad_buffer(xin);
        for (std::int64_t n = 0; n < g.N; ++n) {
            CMapRM dY(self.grad.data() + n * g.C_out * HW, g.C_out, HW);
            float* dxn = gx.data() + n * g.C_in * HW;
            if (g.k == 1) {
                MapRM dX(dxn, g.C_in, HW);
                if constexpr (std::is_same_v<Acc, float>)
                    dX.noalias() += Wm.transpose() * dY;
                else
                    dX += (Wm.cast<Acc>().transpose() * dY.cast<Acc>()).template cast<float>();
            } else {
                MapRM dcol(col.data(), K, HW);
                if constexpr (std::is_same_v<Acc, float>)
                    dcol.noalias() = Wm.transpose() * dY;
                else
                    dcol = (Wm.cast<Acc>().transpose() * dY.cast<Acc>()).template cast<float>();
                col2im_add(col.data(), g, dxn);
            }
        }
    }
}

std::vector<float> conv_forward_direct(const float* x, const float* wt, const float* bias, const ConvGeometry& g) {
    const auto H = g.H, W = g.W, k = g.k, pad = g.pad;
    std::vector<float> out(std::size_t(g.N * g.C_out * H * W));
    for (std::int64_t n = 0; n < g.N; ++n)
        for (std::int64_t co = 0; co < g.C_out; ++co)
            for (std::int64_t h = 0; h < H; ++h)
                for (std::int64_t w = 0; w < W; ++w) {
                    double s = bias[co];
                    for (std::int64_t ci = 0; ci < g.C_in; ++ci)
                        for (std::int64_t kh = 0; kh < k; ++kh) {
                            const std::int64_t sh = h + kh - pad;
                            if (sh < 0 || sh >= H) continue;
                            for (std::int64_t kw = 0; kw < k; ++kw) {
                                const std::int64_t sw = w + kw - pad;
                                if (sw < 0 || sw >= W) continue;
                                s += double(wt[((co * g.C_in + ci) * k + kh) * k + kw]) *
                                     double(x[((n * g.C_in + ci) * H + sh) * W + sw]);
                            }
                        }
                    out[std::size_t(((n * g.C_out + co) * H + h) * W + w)] = static_cast<float>(s);
                }
    return out;
}

void conv_backward_direct(Node& self, const ConvGeometry& g) {
    Node& xin = *self.inputs[0];
    Node& win = *self.inputs[1];
    Node& bin = *self.inputs[2];
    const auto H = g.H, W = g.W, k = g.k, pad = g.pad;
    const float* dy = self.grad.data();
    const float* x = xin.value.data();
    const float* wt = win.value.data();

    if (bin.requires_grad) {
        auto& gb = grad_buffer(bin);
        for (std::int64_t co = 0; co < g.C_out; ++co) {
            double s = 0.0;
            for (std::int64_t n = 0; n < g.N; ++n)
                for (std::int64_t i = 0; i < H * W; ++i) s += dy[(n * g.C_out + co) * H * W + i];
            gb[std::size_t(co)] += static_cast<float>(s);
        }
    }
    if (win.requires_grad) {
        auto& gw = grad_buffer(win);
        for (std::int64_t co = 0; co < g.C_out; ++co)
            for (std::int64_t ci = 0; ci < g.C_in; ++ci)
                for (std::int64_t kh = 0; kh < k; ++kh)
                    for (std::int64_t kw = 0; kw < k; ++kw) {
                        double s = 0.0;
                        for (std::int64_t n = 0; n < g.N; ++n)
                            for (std::int64_t h = 0; h < H; ++h) {
                                const std::int64_t sh = h + kh - pad;
                                if (sh < 0 || sh >= H) continue;
                                for (std::int64_t w = 0; w < W; ++w) {
                                    const std::int64_t sw = w + kw - pad;
                                    if (sw < 0 || sw >= W) continue;
                                    s += double(dy[((n * g.C_out + co) * H + h) * W + w]) *
                                         double(x[((n * g.C_in + ci) * H + sh) * W + sw]);
                                }
                            }
                        gw[std::size_t(((co * g.C_in + ci) * k + kh) * k + kw)] += static_cast<float>(s);
                    }
    }
    if (xin.requires_grad) {
        auto& gx = grad_buffer(xin);
        for (std::int64_t n = 0; n < g.N; ++n)
            for (std::int64_t ci = 0; ci < g.C_in; ++ci)
                for (std::int64_t sh = 0; sh < H; ++sh)
                    for (std::int64_t sw = 0; sw < W; ++sw) {
                        double s = 0.0;
                        for (std::int64_t co = 0; co < g.C_out; ++co)
                            for (std::int64_t kh = 0; kh < k; ++kh) {
                                const std::int64_t h = sh - kh + pad;
                                if (h < 0 || h >= H) continue;
                                for (std::int64_t kw = 0; kw < k; ++kw) {
                                    const std::int64_t w = sw - kw + pad;
                                    if (w < 0 || w >= W) continue;
                                    s += double(dy[((n * g.C_out + co) * H + h) * W + w]) *
                                         double(wt[((co * g.C_in + ci) * k + kh) * k + kw]);
                                }
                            }
                        gx[std::size_t(((n * g.C_in + ci) * H + sh) * W + sw)] += static_cast<float>(s);
                    }
    }
}

}  // namespace

void set_default_conv_algo(ConvAlgo algo) { g_conv_algo = algo; }
ConvAlgo default_conv_algo() { return g_conv_algo; }

Tensor conv2d(const Tensor& x, const ConvParams& p) { return conv2d(x, p, g_conv_algo); }

Tensor conv2d(const Tensor& x, const ConvParams& p, ConvAlgo algo) {
    const ConvGeometry g = check_conv(x, p);
    const float* xs = x.values().data();
    const float* ws = p.weight.values().data();
    const float* bs = p.bias.values().data();
    auto out = algo == ConvAlgo::Gemm      ? conv_forward_gemm<float>(xs, ws, bs, g)
               : algo == ConvAlgo::GemmF64 ? conv_forward_gemm<double>(xs, ws, bs, g)
                                           : conv_forward_direct(xs, ws, bs, g);
    return make_result({g.N, g.C_out, g.H, g.W}, std::move(out), {x, p.weight, p.bias}, [g, algo](Node& self) {
        if (algo == ConvAlgo::Gemm)
            conv_backward_gemm<float>(self, g);
        else if (algo == ConvAlgo::GemmF64)
            conv_backward_gemm<double>(self, g);
        else
            conv_backward_direct(self, g);
    });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 4) throw std::invalid_argument("depthwise_conv2d: expected NCHW input");
    const Shape& ws = weight.shape();
    if (ws.size() != 4 || ws[1] != 1 || ws[2] != ws[3] || ws[2] % 2 == 0)
        throw std::invalid_argument("depthwise_conv2d: weight must be (C, 1, k, k) with odd k, got " + shape_str(ws));
    if (ws[0] != x.dim(1))
        throw std::invalid_argument("depthwise_conv2d: channel mismatch, input has " + std::to_string(x.dim(1)) +
                                    " channels, weight has " + std::to_string(ws[0]));
    if (bias.shape() != Shape{ws[0]}) throw std::invalid_argument("depthwise_conv2d: bias shape mismatch");

    const auto N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), k = ws[2], pad = (k - 1) / 2;
    const float* xs = x.values().data();
    const float* wt = weight.values().data();
    const float* bs = bias.values().data();
    std::vector<float> out(std::size_t(N * C * H * W));

    // Shifted-plane accumulation; the per-element summation order is fixed
    // (bias, then taps in row-major kernel order).
    for (std::int64_t n = 0; n < N; ++n)
        for (std::int64_t c = 0; c < C; ++c) {
            const float* xp = xs + (n * C + c) * H * W;
            float* yp = out.data() + (n * C + c) * H * W;
            std::fill_n(yp, H * W, bs[c]);
            for (std::int64_t kh = 0; kh < k; ++kh)
                for (std::int64_t kw = 0; kw < k; ++kw) {
                    const float wv = wt[(c * k + kh) * k + kw];
                    const std::int64_t dy = kh - pad, dx = kw - pad;
                    const std::int64_t h_lo = std::max<std::int64_t>(0, -dy), h_hi = std::min(H, H - dy);
                    const std::int64_t w_lo = std::max<std::int64_t>(0, -dx), w_hi = std::min(W, W - dx);
                    for (std::int64_t h = h_lo; h < h_hi; ++h) {
                        float* yrow = yp + h * W;
                        const float* xrow = xp + (h + dy) * W + dx;
                        for (std::int64_t w = w_lo; w < w_hi; ++w) yrow[w] += wv * xrow[w];
                    }
                }
        }

    return make_result(x.shape(), std::move(out), {x, weight, bias}, [N, C, H, W, k, pad](Node& self) {
        Node& xin = *self.inputs[0];
        Node& win = *self.inputs[1];
        Node& bin = *self.inputs[2];
        const float* g = self.grad.data();
        if (bin.requires_grad) {
            auto& gb = grad_buffer(bin);
            for (std::int64_t c = 0; c < C; ++c) {
                double s = 0.0;
                for (std::int64_t n = 0; n < N; ++n)
                    for (std::int64_t i = 0; i < H * W; ++i) s += g[(n * C + c) * H * W + i];
                gb[std::size_t(c)] += static_cast<float>(s);
            }
        }
        for (std::int64_t kh = 0; kh < k; ++kh)
            for (std::int64_t kw = 0; kw < k; ++kw) {
                const std::int64_t dy = kh - pad, dx = kw - pad;
                const std::int64_t h_lo = std::max<std::int64_t>(0, -dy), h_hi = std::min(H, H - dy);
                const std::int64_t w_lo = std::max<std::int64_t>(0, -dx), w_hi = std::min(W, W - dx);
                for (std::int64_t c = 0; c < C; ++c) {
                    double s = 0.0;
                    const float wv = win.value[std::size_t((c * k + kh) * k + kw)];
                    for (std::int64_t n = 0; n < N; ++n) {
                        const float* gp = g + (n * C + c) * H * W;
                        const float* xp = xin.value.data() + (n * C + c) * H * W;
                        float* gxp = xin.requires_grad ? grad_buffer(xin).data() + (n * C + c) * H * W : nullptr;
                        for (std::int64_t h = h_lo; h < h_hi; ++h) {
                            const float* grow = gp + h * W;
                            const float* xrow = xp + (h + dy) * W + dx;
                            float acc = 0.0f;
                            for (std::int64_t w = w_lo; w < w_hi; ++w) acc += grow[w] * xrow[w];
                            s += acc;
                            if (gxp) {
                                float* gxrow = gxp + (h + dy) * W + dx;
                                for (std::int64_t w = w_lo; w < w_hi; ++w) gxrow[w] += wv * grow[w];
                            }
                        }
                    }
                    if (win.requires_grad) grad_buffer(win)[std::size_t((c * k + kh) * k + kw)] += static_cast<float>(s);
                }
            }
    });
}

}  // namespace tempsr::nn
