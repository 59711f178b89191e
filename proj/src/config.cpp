#include "tempsr/config.hpp"

#include <fstream>
#include <ostream>

#include "tempsr/error.hpp"
#include "tempsr/metrics.hpp"

namespace tempsr {

RunConfig::RunConfig() {
    values_ = {
        {"run.seed", "0"},
        {"synth.height", "64"},
        {"synth.width", "64"},
        {"synth.cell_size_m", "3000"},
        {"synth.cells", "4"},
        {"synth.vx", "1"},
        {"synth.vy", "0"},
        {"synth.velocity_jitter", "0.5"},
        {"synth.sigma", "4"},
        {"synth.peak", "20"},
        {"synth.growth", "0"},
        {"synth.floor", "0.1"},
        {"synth.frames", "12"},
        {"synth.events", "20"},
        {"synth.test_fraction", "0.3"},
        {"train.batch", "8"},
        {"train.micro_batch", "0"},
        {"train.epochs", "30"},
        {"train.lr", "0.001"},
        {"train.beta1", "0.9"},
        {"train.beta2", "0.999"},
        {"train.eps", "1e-08"},
        {"train.patience", "3"},
        {"train.factor", "0.1"},
        {"train.min_lr", "1e-06"},
        {"train.plateau_threshold", "1e-05"},
        {"train.valid_fraction", "0.1"},
        {"train.shuffle", "true"},
        {"train.early_stop", "0"},
        {"flow.pyr_scale", "0.5"},
        {"flow.levels", "3"},
        {"flow.window", "15"},
        {"flow.iterations", "3"},
        {"flow.poly_n", "5"},
        {"flow.poly_sigma", "1.1"},
        {"flow.min_level_size", "8"},
        {"flow.clip_percentile", "99.5"},
        {"split.cutoff", "1546300800"},  // 2019-01-01T00:00Z
        {"eval.threshold", "0.0001"},
    };
    for (const auto& [k, v] : ModelConfig::paper_default().to_key_values()) values_[k] = v;
}

void RunConfig::apply(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("expected key=value, got '" + assignment + "'");
    set(assignment.substr(0, eq), assignment.substr(eq + 1));
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown configuration key '" + key + "'");
    it->second = value;
}

void RunConfig::load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read config file " + path.string());
    std::string line;
    while (std::getline(in, line)) {
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto last = line.find_last_not_of(" \t\r");
        apply(line.substr(first, last - first + 1));
    }
}

const std::string& RunConfig::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown configuration key '" + key + "'");
    return it->second;
}

double RunConfig::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used == v.size()) return d;
    } catch (const std::logic_error&) {
    }
    throw UsageError("configuration key '" + key + "' expects a number, got '" + v + "'");
}

std::int64_t RunConfig::get_int(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const long long d = std::stoll(v, &used);
        if (used == v.size()) return d;
    } catch (const std::logic_error&) {
    }
    throw UsageError("configuration key '" + key + "' expects an integer, got '" + v + "'");
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
    const std::int64_t v = get_int(key);
    if (v < 0) throw UsageError("configuration key '" + key + "' must be >= 0");
    return std::uint64_t(v);
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw UsageError("configuration key '" + key + "' expects true/false, got '" + v + "'");
}

void RunConfig::print(std::ostream& out) const {
    for (const auto& [k, v] : values_) out << k << '=' << v << '\n';
}

SynthConfig RunConfig::synth() const {
    SynthConfig c;
    c.height = std::uint32_t(get_uint("synth.height"));
    c.width = std::uint32_t(get_uint("synth.width"));
    c.cell_size_m = std::uint32_t(get_uint("synth.cell_size_m"));
    c.n_cells = get_uint("synth.cells");
    c.velocity_x = get_double("synth.vx");
    c.velocity_y = get_double("synth.vy");
    c.cell_sigma = get_double("synth.sigma");
    c.peak_rate = get_double("synth.peak");
    c.growth_rate = get_double("synth.growth");
    c.rain_floor = get_double("synth.floor");
    c.frames = get_uint("synth.frames");
    c.validate();
    return c;
}

ModelConfig RunConfig::model() const {
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : values_)
        if (k.rfind("model.", 0) == 0) kv[k] = v;
    return ModelConfig::from_key_values(kv);
}

TrainConfig RunConfig::train() const {
    TrainConfig c;
    c.batch_size = get_uint("train.batch");
    c.micro_batch = get_uint("train.micro_batch");
    c.max_epochs = get_uint("train.epochs");
    c.seed = get_uint("run.seed");
    c.shuffle = get_bool("train.shuffle");
    if (const auto es = get_uint("train.early_stop"); es > 0) c.early_stop_patience = es;
    c.lr = get_double("train.lr");
    c.beta1 = get_double("train.beta1");
    c.beta2 = get_double("train.beta2");
    c.eps = get_double("train.eps");
    c.plateau_patience = int(get_int("train.patience"));
    c.plateau_factor = get_double("train.factor");
    c.min_lr = get_double("train.min_lr");
    c.plateau_threshold = get_double("train.plateau_threshold");
    c.validate();
    return c;
}

FarnebackParams RunConfig::flow() const {
    FarnebackParams p;
    p.pyramid_scale = get_double("flow.pyr_scale");
    p.levels = int(get_int("flow.levels"));
    p.window = int(get_int("flow.window"));
    p.iterations = int(get_int("flow.iterations"));
    p.poly_n = int(get_int("flow.poly_n"));
    p.poly_sigma = get_double("flow.poly_sigma");
    p.min_level_size = int(get_int("flow.min_level_size"));
    p.clip_percentile = get_double("flow.clip_percentile");
    p.validate();
    return p;
}

}  // namespace tempsr
