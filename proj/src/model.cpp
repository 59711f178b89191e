#include "tempsr/model.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "tempsr/error.hpp"

namespace tempsr {

using nn::ConvParams;
using nn::Shape;
using nn::Tensor;

ModelConfig ModelConfig::paper_default() {
    ModelConfig c;
    c.stages = {
        {BlockKind::SimpleConv, 24, 1, 2}, {BlockKind::SimpleConv, 48, 4, 4}, {BlockKind::SimpleConv, 64, 4, 3},
        {BlockKind::MBConv, 128, 4, 4},    {BlockKind::MBConv, 256, 6, 8},
    };
    return c;
}

void ModelConfig::validate() const {
    if (stages.empty()) throw UsageError("model needs at least one stage");
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        const std::string where = "stage " + std::to_string(i) + ": ";
        if (s.channels < 1) throw UsageError(where + "channels must be >= 1");
        if (s.expansion < 1) throw UsageError(where + "expansion ratio must be >= 1");
        if (s.layers < 1) throw UsageError(where + "layer count must be >= 1");
    }
    if (input_channels < 1 || output_channels < 1 || stem_channels < 1 || head_channels < 1)
        throw UsageError("model channel counts must be >= 1");
    if (!(se_ratio > 0.0 && se_ratio <= 1.0)) throw UsageError("se_ratio must lie in (0, 1]");
    if (!(leaky_slope >= 0.0f && leaky_slope <= 1.0f)) throw UsageError("leaky_slope must lie in [0, 1]");
    if (normalize_inputs && !(norm_scale > 0.0f)) throw UsageError("norm_scale must be > 0");
}

std::string format_stages(const std::vector<StageSpec>& stages) {
    std::ostringstream os;
    for (std::size_t i = 0; i < stages.size(); ++i) {
        const auto& s = stages[i];
        os << (i ? "," : "") << (s.kind == BlockKind::SimpleConv ? "simple" : "mbconv") << ':' << s.channels << ':'
           << s.expansion << ':' << s.layers;
    }
    return os.str();
}

std::vector<StageSpec> parse_stages(const std::string& text) {
    std::vector<StageSpec> stages;
    std::istringstream items(text);
    std::string item;
    while (std::getline(items, item, ',')) {
        std::istringstream fields(item);
        std::string kind;
        StageSpec s;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!std::getline(fields, kind, ':') || !(fields >> s.channels >> c1 >> s.expansion >> c2 >> s.layers) ||
            c1 != ':' || c2 != ':' || (fields >> c3))
            throw UsageError("malformed stage '" + item + "', expected kind:channels:expansion:layers");
        if (kind == "simple")
            s.kind = BlockKind::SimpleConv;
        else if (kind == "mbconv")
            s.kind = BlockKind::MBConv;
        else
            throw UsageError("unknown block kind '" + kind + "'");
        stages.push_back(s);
    }
    if (stages.empty()) throw UsageError("empty stage list");
    return stages;
}

namespace {

// Shortest text that round-trips to the same value.
template <typename T>
std::string fmt_number(T v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_key_values() const {
    return {
        {"model.stages", format_stages(stages)},
        {"model.input_channels", std::to_string(input_channels)},
        {"model.output_channels", std::to_string(output_channels)},
        {"model.stem_channels", std::to_string(stem_channels)},
        {"model.head_channels", std::to_string(head_channels)},
        {"model.se_ratio", fmt_number(se_ratio)},
        {"model.leaky_slope", fmt_number(leaky_slope)},
        {"model.normalize", normalize_inputs ? "true" : "false"},
        {"model.norm_scale", fmt_number(norm_scale)},
    };
}

ModelConfig ModelConfig::from_key_values(const std::map<std::string, std::string>& kv) {
    ModelConfig c = paper_default();
    auto get = [&](const char* key) -> const std::string* {
        auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };
    try {
        if (auto v = get("model.stages")) c.stages = parse_stages(*v);
        if (auto v = get("model.input_channels")) c.input_channels = std::stoi(*v);
        if (auto v = get("model.output_channels")) c.output_channels = std::stoi(*v);
        if (auto v = get("model.stem_channels")) c.stem_channels = std::stoi(*v);
        if (auto v = get("model.head_channels")) c.head_channels = std::stoi(*v);
        if (auto v = get("model.se_ratio")) c.se_ratio = std::stod(*v);
        if (auto v = get("model.leaky_slope")) c.leaky_slope = std::stof(*v);
        if (auto v = get("model.normalize")) {
            if (*v != "true" && *v != "false") throw UsageError("model.normalize must be true or false");
            c.normalize_inputs = *v == "true";
        }
        if (auto v = get("model.norm_scale")) c.norm_scale = std::stof(*v);
    } catch (const std::logic_error& e) {
        throw UsageError(std::string("bad model configuration value: ") + e.what());
    }
    c.validate();
    return c;
}

std::uint64_t ModelConfig::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& [k, v] : to_key_values()) {
        for (char ch : k + "=" + v + "\n") {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ull;
        }
    }
    return h;
}

ParamInit::ParamInit(std::uint64_t seed, double gain) : state_(seed), gain_(gain) {}

Tensor ParamInit::uniform(Shape shape, double bound) {
    std::vector<float> values(std::size_t(nn::numel_of(shape)));
    for (auto& v : values) {
        // splitmix64
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        z ^= z >> 31;
        const double u = double(z >> 11) * 0x1.0p-53;
        v = static_cast<float>((2.0 * u - 1.0) * bound);
    }
    return Tensor::from_values(std::move(shape), std::move(values), true);
}

ConvParams ParamInit::conv(int c_out, int c_in, int k) { return conv(c_out, c_in, k, gain_); }

ConvParams ParamInit::conv(int c_out, int c_in, int k, double gain) {
    const double bound = gain * std::sqrt(3.0 / (double(c_in) * k * k));
    return {uniform({c_out, c_in, k, k}, bound), Tensor::zeros({c_out}, true)};
}

ConvParams ParamInit::depthwise(int channels, int k) {
    const double bound = gain_ * std::sqrt(3.0 / (double(k) * k));
    return {uniform({channels, 1, k, k}, bound), Tensor::zeros({channels}, true)};
}

SimpleConvBlock make_simpleconv(int c_in, int c_out, int expansion, ParamInit& init, double out_gain) {
    const int hidden = expansion * c_out;
    SimpleConvBlock b;
    b.conv3 = init.conv(hidden, c_in, 3);
    b.residual = c_in == c_out;
    b.conv1 = init.conv(c_out, hidden, 1, b.residual ? out_gain : 1.0);
    b.residual = c_in == c_out;
    return b;
}

MBConvBlock make_mbconv(int c_in, int c_out, int expansion, double se_ratio, ParamInit& init, double out_gain) {
    const int hidden = expansion * c_in;
    const int se_hidden = std::max(1, static_cast<int>(std::ceil(se_ratio * hidden - 1e-9)));
    MBConvBlock b;
    b.expand = init.conv(hidden, c_in, 1);
    b.depthwise = init.depthwise(hidden, 3);
    b.se_reduce = init.conv(se_hidden, hidden, 1);
    b.se_expand = init.conv(hidden, se_hidden, 1, 1.0);
    b.residual = c_in == c_out;
    b.project = init.conv(c_out, hidden, 1, b.residual ? out_gain : 1.0);
    return b;
}

Tensor simpleconv_block(const Tensor& x, const SimpleConvBlock& block, float slope) {
    Tensor h = nn::leaky_relu(nn::conv2d(x, block.conv3), slope);
    Tensor y = nn::conv2d(h, block.conv1);
    return block.residual ? nn::add(y, x) : y;
}

Tensor mbconv_block(const Tensor& x, const MBConvBlock& block, float slope) {
    Tensor h = nn::leaky_relu(nn::conv2d(x, block.expand), slope);
    h = nn::leaky_relu(nn::depthwise_conv2d(h, block.depthwise.weight, block.depthwise.bias), slope);
    Tensor s = nn::global_avg_pool(h);
    s = nn::leaky_relu(nn::conv2d(s, block.se_reduce), slope);
    s = nn::sigmoid(nn::conv2d(s, block.se_expand));
    h = nn::mul_broadcast(h, s);
    Tensor y = nn::conv2d(h, block.project);
    return block.residual ? nn::add(y, x) : y;
}

Model Model::build(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Model m;
    m.config_ = config;
    ParamInit init(seed, std::sqrt(2.0 / (1.0 + double(config.leaky_slope) * config.leaky_slope)));
    m.stem_ = init.conv(config.stem_channels, config.input_channels, 3);
    // Residual branches end in a damped linear conv so the skip path dominates
    // at initialization; there is no normalization layer to rein in the sum.
    int residual_blocks = 0, c = config.stem_channels;
    for (const StageSpec& spec : config.stages) {
        residual_blocks += spec.layers - (spec.channels != c ? 1 : 0);
        c = spec.channels;
    }
    const double branch_gain = 1.0 / std::sqrt(double(std::max(1, residual_blocks)));
    int channels = config.stem_channels;
    m.simple_.resize(config.stages.size());
    m.mb_.resize(config.stages.size());
    for (std::size_t s = 0; s < config.stages.size(); ++s) {
        const StageSpec& spec = config.stages[s];
        for (int l = 0; l < spec.layers; ++l) {
            // The first block of a stage performs the channel change.
            const int c_in = l == 0 ? channels : spec.channels;
            if (spec.kind == BlockKind::SimpleConv)
                m.simple_[s].push_back(make_simpleconv(c_in, spec.channels, spec.expansion, init, branch_gain));
            else
                m.mb_[s].push_back(make_mbconv(c_in, spec.channels, spec.expansion, config.se_ratio, init, branch_gain));
        }
        channels = spec.channels;
    }
    m.head0_ = init.conv(config.head_channels, channels, 3);
    m.head1_ = init.conv(config.output_channels, config.head_channels, 1, 1.0);
    m.register_params();
    return m;
}

void Model::register_params() {
    params_.clear();
    auto add = [&](const std::string& prefix, const ConvParams& p) {
        params_.emplace_back(prefix + ".w", p.weight);
        params_.emplace_back(prefix + ".b", p.bias);
    };
    add("stem", stem_);
    for (std::size_t s = 0; s < config_.stages.size(); ++s) {
        for (std::size_t l = 0; l < simple_[s].size(); ++l) {
            const std::string p = "stage" + std::to_string(s) + "." + std::to_string(l);
            add(p + ".conv3", simple_[s][l].conv3);
            add(p + ".conv1", simple_[s][l].conv1);
        }
        for (std::size_t l = 0; l < mb_[s].size(); ++l) {
            const std::string p = "stage" + std::to_string(s) + "." + std::to_string(l);
            const auto& b = mb_[s][l];
            add(p + ".expand", b.expand);
            add(p + ".dw", b.depthwise);
            add(p + ".se_reduce", b.se_reduce);
            add(p + ".se_expand", b.se_expand);
            add(p + ".project", b.project);
        }
    }
    add("head.0", head0_);
    add("head.1", head1_);
}

Model Model::clone() const { return load(save(), config_); }

Tensor Model::forward(const Tensor& x, const StageObserver& observer) const {
    if (x.rank() != 4 || x.dim(1) != config_.input_channels)
        throw DataError("model input must be (N, " + std::to_string(config_.input_channels) + ", H, W), got " +
                        nn::shape_str(x.shape()));
    const float slope = config_.leaky_slope;
    Tensor h = config_.normalize_inputs ? nn::scale(x, 1.0f / config_.norm_scale) : x;
    h = nn::leaky_relu(nn::conv2d(h, stem_), slope);
    if (observer) observer(-1, h);
    for (std::size_t s = 0; s < config_.stages.size(); ++s) {
        for (const auto& b : simple_[s]) h = simpleconv_block(h, b, slope);
        for (const auto& b : mb_[s]) h = mbconv_block(h, b, slope);
        if (observer) observer(int(s), h);
    }
    h = nn::leaky_relu(nn::conv2d(h, head0_), slope);
    h = nn::conv2d(h, head1_);
    if (config_.normalize_inputs) h = nn::scale(h, config_.norm_scale);
    if (observer) observer(int(config_.stages.size()), h);
    return h;
}

RainMap Model::forward(const RainMap& before, const RainMap& after) const {
    if (!before.same_shape(after)) throw DataError("before/after maps differ in shape");
    nn::NoGradGuard no_grad;
    Tensor y = forward(pack_inputs({&before}, {&after}));
    RainMap out(before.height, before.width, before.cell_size_m, (before.timestamp + after.timestamp) / 2);
    const auto v = y.values();
    std::copy(v.begin(), v.begin() + std::ptrdiff_t(out.size()), out.values.begin());
    return out;
}

std::vector<Tensor> Model::parameters() const {
    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.push_back(t);
    return out;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

void Model::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

CheckpointBundle Model::save() const {
    CheckpointBundle b;
    for (const auto& [name, t] : params_) {
        NamedTensor nt;
        nt.name = name;
        for (auto d : t.shape()) nt.dims.push_back(static_cast<std::uint32_t>(d));
        nt.values.assign(t.values().begin(), t.values().end());
        b.tensors.push_back(std::move(nt));
    }
    b.metadata = config_.to_key_values();
    b.metadata["model.config_hash"] = std::to_string(config_.hash());
    return b;
}

Model Model::load(const CheckpointBundle& bundle, const ModelConfig& config) {
    Model m = build(config, 0);
    std::size_t matched = 0;
    for (auto& [name, t] : m.params_) {
        const NamedTensor* src = bundle.find(name);
        if (!src) throw DataError("checkpoint is missing tensor '" + name + "'");
        Shape dims(src->dims.begin(), src->dims.end());
        if (dims != t.shape())
            throw DataError("tensor '" + name + "' has shape " + nn::shape_str(dims) + ", model expects " +
                            nn::shape_str(t.shape()));
        if (src->values.size() != t.numel()) throw DataError("tensor '" + name + "' has wrong value count");
        for (float v : src->values)
            if (!std::isfinite(v)) throw DataError("tensor '" + name + "' contains non-finite values");
        std::copy(src->values.begin(), src->values.end(), t.mutable_values().begin());
        ++matched;
    }
    if (matched != bundle.tensors.size()) {
        for (const auto& nt : bundle.tensors) {
            bool known = false;
            for (const auto& [name, t] : m.params_) known = known || name == nt.name;
            if (!known) throw DataError("checkpoint has unexpected tensor '" + nt.name + "'");
        }
    }
    return m;
}

Tensor stack_maps(const std::vector<const RainMap*>& maps) {
    if (maps.empty()) throw DataError("cannot stack an empty list of maps");
    const RainMap& first = *maps.front();
    std::vector<float> values;
    values.reserve(maps.size() * first.size());
    for (const RainMap* m : maps) {
        if (m->height != first.height || m->width != first.width) throw DataError("maps differ in shape");
        values.insert(values.end(), m->values.begin(), m->values.end());
    }
    return Tensor::from_values({std::int64_t(maps.size()), 1, first.height, first.width}, std::move(values));
}

Tensor pack_inputs(const std::vector<const RainMap*>& before, const std::vector<const RainMap*>& after) {
    if (before.size() != after.size()) throw DataError("before/after batch sizes differ");
    Tensor b = stack_maps(before);
    Tensor a = stack_maps(after);
    if (b.shape() != a.shape()) throw DataError("before/after maps differ in shape");
    return nn::concat_channels(b, a);
}

}  // namespace tempsr
