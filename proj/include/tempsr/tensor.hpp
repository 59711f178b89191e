#pragma once

// Dense float32 tensors with reverse-mode automatic differentiation over the
// small operator set used by the interpolation network.
//
// A Tensor is a shared handle: copies alias the same storage. Every op that
// receives at least one input requiring gradients (while GradMode is on)
// records its inputs and a backward closure on its output; `backward(loss)`
// walks that graph in reverse topological order. The graph is confined to
// the thread that built it.
//
// Convolutions use the cross-correlation convention (no kernel flip), stride
// 1 and zero "same" padding of (k-1)/2, so spatial size never changes.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tempsr::nn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    // Reads self.grad and accumulates into inputs[i]->grad.
    std::function<void(Node& self)> backward;
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, float value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<float> values, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(std::size_t i) const { return shape().at(i); }
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const float> values() const;
    // Direct write access, for parameter updates and test fixtures only.
    std::span<float> mutable_values();
    float item() const;

    bool requires_grad() const;
    // Empty span until a backward pass reaches this tensor.
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    // Deep copy detached from any graph.
    Tensor clone(bool requires_grad = false) const;
    // Shares storage semantics of a fresh leaf: same values, no history.
    Tensor detach() const { return clone(false); }

    detail::Node* node() const { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

// Thread-local switch; when off, ops record no history.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Accumulates d(loss)/d(t) into every reachable tensor with requires_grad.
// Leaf gradients accumulate across calls; call zero_grad between steps.
void backward(const Tensor& loss);

// Builds an op output. `backward_fn` is attached only when some input
// requires gradients and GradMode is on.
Tensor make_result(Shape shape, std::vector<float> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node& self)> backward_fn);

// Returns the grad buffer of `t`, allocating zeros on first use.
std::vector<float>& grad_buffer(detail::Node& t);

enum class ConvAlgo {
    Gemm,     // im2col + blocked matrix multiply (default)
    GemmF64,  // same, with the matrix products carried out in double
    Direct,   // plain nested loops with double accumulation; reference path
};

struct ConvParams {
    Tensor weight;  // (C_out, C_in, k, k), k odd
    Tensor bias;    // (C_out)
};

void set_default_conv_algo(ConvAlgo algo);  // thread-local
ConvAlgo default_conv_algo();

Tensor conv2d(const Tensor& x, const ConvParams& p);
Tensor conv2d(const Tensor& x, const ConvParams& p, ConvAlgo algo);
// weight (C, 1, k, k), bias (C)
Tensor depthwise_conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor leaky_relu(const Tensor& x, float slope);
Tensor sigmoid(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // (N,C,H,W) -> (N,C,1,1)

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);               // same shape
Tensor mul_broadcast(const Tensor& x, const Tensor& gate);  // gate (N,C,1,1)
Tensor concat_channels(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float factor);

Tensor sum(const Tensor& x);   // scalar, shape {1}
Tensor mean(const Tensor& x);  // scalar, shape {1}

}  // namespace tempsr::nn
