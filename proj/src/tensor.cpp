#include "tempsr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "tempsr/error.hpp"

namespace tempsr::nn {

using detail::Node;

std::int64_t numel_of(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw std::invalid_argument("negative dimension");
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<Node> make_leaf(Shape shape, std::vector<float> values, bool requires_grad) {
    if (numel_of(shape) != static_cast<std::int64_t>(values.size()))
        throw std::invalid_argument("tensor shape " + shape_str(shape) + " does not match " +
                                    std::to_string(values.size()) + " values");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return node;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
}

void require_rank4(const Tensor& x, const char* op) {
    if (x.rank() != 4) throw std::invalid_argument(std::string(op) + ": expected NCHW, got " + shape_str(x.shape()));
}

}  // namespace

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
    const auto n = numel_of(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<float>(std::size_t(n), value), requires_grad));
}

Tensor Tensor::from_values(Shape shape, std::vector<float> values, bool requires_grad) {
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->value.size(); }
std::span<const float> Tensor::values() const { return node_->value; }
std::span<float> Tensor::mutable_values() { return node_->value; }

float Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() on tensor with " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
std::span<const float> Tensor::grad() const { return node_->grad; }
std::span<float> Tensor::mutable_grad() { return grad_buffer(*node_); }

void Tensor::zero_grad() {
    std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::clone(bool requires_grad) const {
    return Tensor(make_leaf(node_->shape, node_->value, requires_grad));
}

std::vector<float>& grad_buffer(Node& t) {
    if (t.grad.size() != t.value.size()) t.grad.assign(t.value.size(), 0.0f);
    return t.grad;
}

Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   std::function<void(Node& self)> backward_fn) {
    auto node = make_leaf(std::move(shape), std::move(values), false);
    const bool track = GradMode::enabled() &&
                       std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
    if (track) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
        node->backward = std::move(backward_fn);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw std::invalid_argument("backward() requires a scalar loss");
    if (!loss.requires_grad()) throw std::invalid_argument("backward(): loss does not depend on any parameter");

    // Iterative post-order DFS; the reversed order is a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
    seen.insert(loss.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order)
        if (n->backward) n->grad.assign(n->value.size(), 0.0f);
    grad_buffer(*loss.node())[0] += 1.0f;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backward) continue;
        n->backward(*n);
        // Interior gradients are only needed while propagating.
        std::vector<float>().swap(n->grad);
    }
}

Tensor leaky_relu(const Tensor& x, float slope) {
    const auto xs = x.values();
    std::vector<float> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] >= 0.0f ? xs[i] : slope * xs[i];
    return make_result(x.shape(), std::move(out), {x}, [slope](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = grad_buffer(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += in.value[i] >= 0.0f ? self.grad[i] : slope * self.grad[i];
    });
}

Tensor sigmoid(const Tensor& x) {
    const auto xs = x.values();
    std::vector<float> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double v = xs[i];
        if (v >= 0) {
            out[i] = static_cast<float>(1.0 / (1.0 + std::exp(-v)));
        } else {
            const double e = std::exp(v);
            out[i] = static_cast<float>(e / (1.0 + e));
        }
    }
    return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = grad_buffer(in);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const float y = self.value[i];
            g[i] += self.grad[i] * y * (1.0f - y);
        }
    });
}

Tensor global_avg_pool(const Tensor& x) {
    require_rank4(x, "global_avg_pool");
    const auto N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (HW == 0) throw std::invalid_argument("global_avg_pool: empty spatial extent");
    const auto xs = x.values();
    std::vector<float> out(std::size_t(N * C));
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        double s = 0.0;
        const float* p = xs.data() + nc * HW;
        for (std::int64_t i = 0; i < HW; ++i) s += p[i];
        out[std::size_t(nc)] = static_cast<float>(s / double(HW));
    }
    return make_result({N, C, 1, 1}, std::move(out), {x}, [HW](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = grad_buffer(in);
        const float inv = static_cast<float>(1.0 / double(HW));
        for (std::size_t nc = 0; nc < self.grad.size(); ++nc) {
            const float d = self.grad[nc] * inv;
            float* p = g.data() + nc * HW;
            for (std::int64_t i = 0; i < HW; ++i) p[i] += d;
        }
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto as = a.values(), bs = b.values();
    std::vector<float> out(as.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] + bs[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs) {
            if (!in->requires_grad) continue;
            auto& g = grad_buffer(*in);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto as = a.values(), bs = b.values();
    std::vector<float> out(as.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = as[i] * bs[i];
    return make_result(a.shape(), std::move(out), {a, b}, [](Node& self) {
        Node& a_in = *self.inputs[0];
        Node& b_in = *self.inputs[1];
        if (a_in.requires_grad) {
            auto& g = grad_buffer(a_in);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * b_in.value[i];
        }
        if (b_in.requires_grad) {
            auto& g = grad_buffer(b_in);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * a_in.value[i];
        }
    });
}

Tensor mul_broadcast(const Tensor& x, const Tensor& gate) {
    require_rank4(x, "mul_broadcast");
    const auto N = x.dim(0), C = x.dim(1), HW = x.dim(2) * x.dim(3);
    if (gate.shape() != Shape{N, C, 1, 1})
        throw std::invalid_argument("mul_broadcast: gate shape " + shape_str(gate.shape()) + " incompatible with " +
                                    shape_str(x.shape()));
    const auto xs = x.values(), gs = gate.values();
    std::vector<float> out(xs.size());
    for (std::int64_t nc = 0; nc < N * C; ++nc) {
        const float g = gs[std::size_t(nc)];
        for (std::int64_t i = 0; i < HW; ++i) out[std::size_t(nc * HW + i)] = xs[std::size_t(nc * HW + i)] * g;
    }
    return make_result(x.shape(), std::move(out), {x, gate}, [HW](Node& self) {
        Node& x_in = *self.inputs[0];
        Node& g_in = *self.inputs[1];
        const std::size_t NC = g_in.value.size();
        if (x_in.requires_grad) {
            auto& g = grad_buffer(x_in);
            for (std::size_t nc = 0; nc < NC; ++nc) {
                const float gv = g_in.value[nc];
                for (std::int64_t i = 0; i < HW; ++i) g[nc * HW + i] += self.grad[nc * HW + i] * gv;
            }
        }
        if (g_in.requires_grad) {
            auto& g = grad_buffer(g_in);
            for (std::size_t nc = 0; nc < NC; ++nc) {
                double s = 0.0;
                for (std::int64_t i = 0; i < HW; ++i)
                    s += double(self.grad[nc * HW + i]) * double(x_in.value[nc * HW + i]);
                g[nc] += static_cast<float>(s);
            }
        }
    });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require_rank4(a, "concat_channels");
    require_rank4(b, "concat_channels");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
        throw std::invalid_argument("concat_channels: shape mismatch " + shape_str(a.shape()) + " vs " +
                                    shape_str(b.shape()));
    const auto N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1), HW = a.dim(2) * a.dim(3);
    const auto as = a.values(), bs = b.values();
    std::vector<float> out(std::size_t(N * (Ca + Cb) * HW));
    for (std::int64_t n = 0; n < N; ++n) {
        std::copy_n(as.begin() + n * Ca * HW, Ca * HW, out.begin() + n * (Ca + Cb) * HW);
        std::copy_n(bs.begin() + n * Cb * HW, Cb * HW, out.begin() + (n * (Ca + Cb) + Ca) * HW);
    }
    return make_result({N, Ca + Cb, a.dim(2), a.dim(3)}, std::move(out), {a, b}, [N, Ca, Cb, HW](Node& self) {
        const std::int64_t offsets[2] = {0, Ca};
        const std::int64_t counts[2] = {Ca, Cb};
        for (int k = 0; k < 2; ++k) {
            Node& in = *self.inputs[std::size_t(k)];
            if (!in.requires_grad) continue;
            auto& g = grad_buffer(in);
            for (std::int64_t n = 0; n < N; ++n) {
                const float* src = self.grad.data() + (n * (Ca + Cb) + offsets[k]) * HW;
                float* dst = g.data() + n * counts[k] * HW;
                for (std::int64_t i = 0; i < counts[k] * HW; ++i) dst[i] += src[i];
            }
        }
    });
}

Tensor scale(const Tensor& x, float factor) {
    const auto xs = x.values();
    std::vector<float> out(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) out[i] = xs[i] * factor;
    return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = grad_buffer(in);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
    });
}

Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (float v : x.values()) s += v;
    return make_result({1}, {static_cast<float>(s)}, {x}, [](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = grad_buffer(in);
        for (auto& v : g) v += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.numel() == 0) throw std::invalid_argument("mean of empty tensor");
    double s = 0.0;
    for (float v : x.values()) s += v;
    const double n = double(x.numel());
    return make_result({1}, {static_cast<float>(s / n)}, {x}, [n](Node& self) {
        Node& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = grad_buffer(in);
        const float d = static_cast<float>(double(self.grad[0]) / n);
        for (auto& v : g) v += d;
    });
}

}  // namespace tempsr::nn
