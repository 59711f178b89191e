#pragma once

// EfficientTempNet: stem convolution, three SimpleConv stages and two MBConv
// stages (batch-norm free, LeakyReLU activations), then a two-layer head.
// Spatial size is preserved end to end.

#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tempsr/grid_io.hpp"
#include "tempsr/tensor.hpp"

namespace tempsr {

enum class BlockKind { SimpleConv, MBConv };

struct StageSpec {
    BlockKind kind = BlockKind::SimpleConv;
    int channels = 0;
    int expansion = 1;
    int layers = 1;

    friend bool operator==(const StageSpec&, const StageSpec&) = default;
};

struct ModelConfig {
    std::vector<StageSpec> stages;
    int input_channels = 2;
    int output_channels = 1;
    int stem_channels = 24;
    int head_channels = 64;
    double se_ratio = 0.25;  // of the expanded width
    float leaky_slope = 0.01f;
    // Optional input scaling: inputs are divided by norm_scale and the output
    // multiplied back. Off by default.
    bool normalize_inputs = false;
    float norm_scale = 10.0f;

    // The five-stage table: channels 24/48/64/128/256, expansion 1/4/4/4/6,
    // layers 2/4/3/4/8.
    static ModelConfig paper_default();

    void validate() const;

    // Stable key=value form ("model.*" keys) and its FNV-1a hash.
    std::map<std::string, std::string> to_key_values() const;
    static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);
    std::uint64_t hash() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// "simple:24:1:2,mbconv:128:4:4" <-> stage list
std::string format_stages(const std::vector<StageSpec>& stages);
std::vector<StageSpec> parse_stages(const std::string& text);

struct SimpleConvBlock {
    nn::ConvParams conv3;  // c_in -> expansion * c_out, 3x3
    nn::ConvParams conv1;  // expansion * c_out -> c_out, 1x1
    bool residual = false;
};

struct MBConvBlock {
    nn::ConvParams expand;  // c_in -> expansion * c_in, 1x1
    nn::ConvParams depthwise;  // (hidden, 1, 3, 3)
    nn::ConvParams se_reduce;  // hidden -> ceil(se_ratio * hidden), 1x1
    nn::ConvParams se_expand;  // back to hidden, 1x1
    nn::ConvParams project;    // hidden -> c_out, 1x1, linear
    bool residual = false;
};

// Deterministic weight init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases.
class ParamInit {
public:
    // He-uniform: weights ~ U(+-gain * sqrt(3 / fan_in)), biases zero.
    explicit ParamInit(std::uint64_t seed, double gain = std::sqrt(2.0));
    nn::ConvParams conv(int c_out, int c_in, int k);
    nn::ConvParams conv(int c_out, int c_in, int k, double gain);
    nn::ConvParams depthwise(int channels, int k);

private:
    nn::Tensor uniform(nn::Shape shape, double bound);
    std::uint64_t state_;
    double gain_;
};

SimpleConvBlock make_simpleconv(int c_in, int c_out, int expansion, ParamInit& init, double out_gain = 1.0);
MBConvBlock make_mbconv(int c_in, int c_out, int expansion, double se_ratio, ParamInit& init,
                        double out_gain = 1.0);

nn::Tensor simpleconv_block(const nn::Tensor& x, const SimpleConvBlock& block, float slope);
nn::Tensor mbconv_block(const nn::Tensor& x, const MBConvBlock& block, float slope);

// Called with (stage index, output) after the stem (index -1), each stage
// (0..S-1) and the head (index S).
using StageObserver = std::function<void(int stage, const nn::Tensor& output)>;

class Model {
public:
    static Model build(const ModelConfig& config, std::uint64_t seed);

    Model(Model&&) noexcept = default;
    Model& operator=(Model&&) noexcept = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;

    // Deep copy with independent parameter storage.
    Model clone() const;

    const ModelConfig& config() const { return config_; }

    // x: (N, input_channels, H, W) -> (N, output_channels, H, W)
    nn::Tensor forward(const nn::Tensor& x, const StageObserver& observer = {}) const;
    // Estimate of the frame half-way between `before` and `after`.
    RainMap forward(const RainMap& before, const RainMap& after) const;

    // Parameters in a fixed order with unique, stable names.
    const std::vector<std::pair<std::string, nn::Tensor>>& named_parameters() const { return params_; }
    std::vector<nn::Tensor> parameters() const;
    std::size_t parameter_count() const;
    void zero_grad();

    CheckpointBundle save() const;
    // Rejects missing, extra and mis-shaped tensors, naming the offender.
    static Model load(const CheckpointBundle& bundle, const ModelConfig& config);

    const nn::ConvParams& stem() const { return stem_; }
    const std::vector<std::vector<SimpleConvBlock>>& simple_stages() const { return simple_; }
    const std::vector<std::vector<MBConvBlock>>& mb_stages() const { return mb_; }

private:
    Model() = default;
    void register_params();

    ModelConfig config_;
    nn::ConvParams stem_;
    // Indexed by stage position; the entry of the other kind is left empty.
    std::vector<std::vector<SimpleConvBlock>> simple_;
    std::vector<std::vector<MBConvBlock>> mb_;
    nn::ConvParams head0_;
    nn::ConvParams head1_;
    std::vector<std::pair<std::string, nn::Tensor>> params_;
};

// Stacks maps into an (N, 1, H, W)-per-map tensor; all maps must share shape.
nn::Tensor stack_maps(const std::vector<const RainMap*>& maps);
// (N, 2, H, W) input batch: channel 0 = before, channel 1 = after.
nn::Tensor pack_inputs(const std::vector<const RainMap*>& before, const std::vector<const RainMap*>& after);

}  // namespace tempsr
