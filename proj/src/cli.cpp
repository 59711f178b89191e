#include "tempsr/cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>

#include "tempsr/baselines.hpp"
#include "tempsr/error.hpp"
#include "tempsr/metrics.hpp"
#include "tempsr/training.hpp"

namespace tempsr {

namespace fs = std::filesystem;

namespace {

constexpr std::int64_t kTrainEpoch = 1514764800;  // 2018-01-01T00:00Z
constexpr std::int64_t kTestEpoch = 1546300800;   // 2019-01-01T00:00Z
constexpr std::int64_t kDay = 86400;

struct Options {
    std::string data;
    std::string out;
    std::string checkpoint;
    std::string method;
    std::optional<double> threshold;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> config;
    bool print_config = false;
    std::optional<std::size_t> events;
    std::optional<std::size_t> frames;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> index;
    std::string render;
};

RunConfig resolve(const Options& o) {
    RunConfig cfg;
    for (const auto& c : o.config) {
        if (c.find('=') != std::string::npos)
            cfg.apply(c);
        else
            cfg.load_file(c);
    }
    if (o.seed) cfg.set("run.seed", std::to_string(*o.seed));
    if (o.threshold) {
        std::ostringstream os;
        os.precision(17);
        os << *o.threshold;
        cfg.set("eval.threshold", os.str());
    }
    if (o.events) cfg.set("synth.events", std::to_string(*o.events));
    if (o.frames) cfg.set("synth.frames", std::to_string(*o.frames));
    if (o.epochs) cfg.set("train.epochs", std::to_string(*o.epochs));
    return cfg;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed * 0x9e3779b97f4a7c15ull + index + 0x632be59bd9b4e019ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

void require_dir(const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string(flag) + " is required");
    if (!fs::is_directory(path)) throw DataError(std::string(flag) + " directory does not exist: " + path);
}

void prepare_out_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create output directory " + dir.string());
    const fs::path probe = dir / ".tempsr_write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw DataError("output directory is not writable: " + dir.string());
    }
    fs::remove(probe, ec);
}

Model model_from_checkpoint(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw DataError("checkpoint not found: " + path.string());
    const CheckpointBundle bundle = load_checkpoint(path);
    std::map<std::string, std::string> kv;
    for (const auto& [k, v] : bundle.metadata)
        if (k.rfind("model.", 0) == 0 && k != "model.config_hash") kv[k] = v;
    const ModelConfig config = ModelConfig::from_key_values(kv);
    auto hash = bundle.metadata.find("model.config_hash");
    if (hash != bundle.metadata.end() && hash->second != std::to_string(config.hash()))
        throw DataError("checkpoint config hash does not match its recorded configuration");
    return Model::load(bundle, config);
}

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::istringstream is(text);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) items.push_back(item);
    return items;
}

int cmd_synth(const Options& o, const RunConfig& cfg, std::ostream& out) {
    const SynthConfig base = cfg.synth();  // validates before anything is written
    (void)base;
    if (o.out.empty()) throw UsageError("--out is required");
    prepare_out_dir(o.out);
    const std::size_t n = cfg.get_uint("synth.events");
    const auto events = synth_dataset(cfg, n, cfg.get_uint("run.seed"));
    save_dataset(events, o.out);
    out << "wrote " << events.size() << " events to " << o.out << '\n';
    return 0;
}

int cmd_train(const Options& o, const RunConfig& cfg, std::ostream& out) {
    require_dir(o.data, "--data");
    if (o.out.empty()) throw UsageError("--out is required");
    TrainConfig tc = cfg.train();
    std::optional<Model> resumed;
    std::optional<CheckpointBundle> resume_bundle;
    if (!o.checkpoint.empty()) {
        resumed.emplace(model_from_checkpoint(o.checkpoint));
        resume_bundle = load_checkpoint(o.checkpoint);
    }
    const ModelConfig mc = resumed ? resumed->config() : cfg.model();
    prepare_out_dir(o.out);

    const auto all = load_dataset(o.data);
    auto [train_events, test_events] = split_by_cutoff(all, cfg.get_int("split.cutoff"));
    (void)test_events;
    std::vector<RainEvent> usable;
    for (auto& e : train_events)
        if (e.frames.size() >= 3) usable.push_back(std::move(e));
    if (usable.empty()) throw DataError("no events");
    auto [fit_events, valid_events] = hold_out_events(usable, cfg.get_double("train.valid_fraction"));
    const auto train = make_triplets(fit_events);
    const auto valid = make_triplets(valid_events);
    if (train.empty()) throw DataError("no events");

    Model model = resumed ? std::move(*resumed) : Model::build(mc, cfg.get_uint("run.seed"));
    if (resume_bundle) {
        const auto& md = resume_bundle->metadata;
        auto find = [&](const char* k) -> std::optional<std::string> {
            auto it = md.find(k);
            return it == md.end() ? std::nullopt : std::optional<std::string>(it->second);
        };
        if (auto v = find("train.epoch")) tc.start_epoch = std::stoull(*v);
        if (auto v = find("train.step")) tc.start_step = std::stoll(*v);
        if (auto v = find("train.lr")) tc.lr = std::stod(*v);
        const double recomputed = evaluate_mae(model, valid.empty() ? train : valid, tc.batch_size);
        out.precision(17);
        out << "resumed from " << o.checkpoint << " at epoch " << tc.start_epoch
            << ": valid_mae=" << recomputed;
        if (auto v = find("train.valid_mae")) out << " (recorded " << *v << ")";
        out << '\n';
    }

    const fs::path ckpt = fs::path(o.out) / "model.ckpt";
    tc.checkpoint_path = ckpt;
    {
        std::ofstream cfg_out(fs::path(o.out) / "config.txt");
        cfg.print(cfg_out);
    }
    out << "training on " << train.size() << " samples (" << valid.size() << " validation), "
        << model.parameter_count() << " parameters\n";
    out.precision(6);
    const TrainingLog log = fit(model, train, valid, tc, [&](const EpochRecord& r) {
        out << "epoch " << r.epoch << " train_mae " << r.train_mae << " valid_mae " << r.valid_mae << " lr " << r.lr
            << '\n';
        out.flush();
    });
    std::ofstream log_out(fs::path(o.out) / "train_log.csv");
    write_training_log_csv(log, log_out);
    if (!log_out) throw DataError("cannot write training log");
    out << "best valid_mae " << log.best_valid_mae << " at epoch " << log.best_epoch << "; checkpoint " << ckpt.string()
        << '\n';
    return 0;
}

int cmd_eval(const Options& o, const RunConfig& cfg, std::ostream& out) {
    require_dir(o.data, "--data");
    const std::string methods_text = o.method.empty() ? "nearest,optflow" : o.method;
    const auto methods = split_list(methods_text);
    if (methods.empty()) throw UsageError("--method lists no methods");
    std::optional<Model> model;
    for (const auto& m : methods) {
        if (m != "nearest" && m != "optflow" && m != "model") throw UsageError("unknown method '" + m + "'");
        if (m == "model" && o.checkpoint.empty()) throw UsageError("--method model requires --checkpoint");
    }
    if (!o.out.empty() && fs::path(o.out).has_parent_path()) prepare_out_dir(fs::path(o.out).parent_path());
    const FarnebackParams flow = cfg.flow();
    const double threshold = cfg.get_double("eval.threshold");
    if (!(threshold > 0.0)) throw UsageError("threshold must be > 0");
    for (const auto& m : methods)
        if (m == "model") model.emplace(model_from_checkpoint(o.checkpoint));

    const auto all = load_dataset(o.data);
    const auto test_events = split_by_cutoff(all, cfg.get_int("split.cutoff")).second;
    const auto samples = make_triplets(test_events);
    if (samples.empty()) throw DataError("no test samples at or after split.cutoff");

    std::vector<ScoreReport> reports;
    for (const auto& m : methods) {
        Interpolator fn;
        if (m == "nearest") {
            fn = nearest_frame;
            reports.push_back(evaluate("Nearest Frame", fn, samples, threshold));
        } else if (m == "optflow") {
            fn = [&flow](const TripletSample& s) { return interpolate_optical_flow(s, flow); };
            reports.push_back(evaluate("Optical Flow", fn, samples, threshold));
        } else {
            fn = [&model](const TripletSample& s) { return model->forward(s.before, s.after); };
            reports.push_back(evaluate("EfficientTempNet", fn, samples, threshold));
        }
    }
    write_report_table(reports, out);
    if (!o.out.empty()) {
        std::ofstream csv(o.out);
        if (!csv) throw DataError("cannot write " + o.out);
        write_report_csv(reports, csv);
    }
    return 0;
}

int cmd_interp(const Options& o, const RunConfig& cfg, std::ostream& out) {
    if (o.data.empty()) throw UsageError("--data (an event file) is required");
    if (o.out.empty()) throw UsageError("--out is required");
    if (!o.index) throw UsageError("--index is required");
    std::string method = o.method.empty() ? (o.checkpoint.empty() ? "optflow" : "model") : o.method;
    if (method != "nearest" && method != "optflow" && method != "model") throw UsageError("unknown method '" + method + "'");
    if (method == "model" && o.checkpoint.empty()) throw UsageError("--method model requires --checkpoint");
    const RainEvent event = load_event(o.data);
    const std::size_t k = *o.index;
    if (k == 0) throw DataError("no predecessor");
    if (k >= event.frames.size()) throw DataError("index out of range");
    if (k + 1 >= event.frames.size()) throw DataError("no successor");

    TripletSample s{event.event_id, k - 1, event.frames[k - 1], event.frames[k + 1], event.frames[k]};
    RainMap est;
    if (method == "nearest") {
        est = nearest_frame(s);
    } else if (method == "optflow") {
        est = interpolate_optical_flow(s, cfg.flow());
    } else {
        est = model_from_checkpoint(o.checkpoint).forward(s.before, s.after);
        est.timestamp = s.target.timestamp;
    }
    // Network outputs may dip below zero; stored maps must be non-negative.
    for (float& v : est.values) v = std::max(v, 0.0f);
    save_event(RainEvent{event.event_id, {est}}, o.out);
    if (!o.render.empty()) render_pgm(est, o.render);
    out << "wrote frame " << k << " estimate (" << method << ") to " << o.out << '\n';
    return 0;
}

}  // namespace

std::vector<RainEvent> synth_dataset(const RunConfig& cfg, std::size_t events, std::uint64_t seed) {
    const SynthConfig base = cfg.synth();
    const double jitter = cfg.get_double("synth.velocity_jitter");
    const double test_fraction = cfg.get_double("synth.test_fraction");
    if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw UsageError("synth.test_fraction must lie in [0, 1]");
    const auto n_test = std::size_t(std::llround(double(events) * test_fraction));
    const std::size_t n_train = events - n_test;

    std::vector<RainEvent> out;
    out.reserve(events);
    for (std::size_t i = 0; i < events; ++i) {
        SynthConfig c = base;
        c.seed = mix_seed(seed, i);
        std::mt19937_64 rng(mix_seed(c.seed, 0xfeed));
        const auto u = [&] { return double(rng() >> 11) * 0x1.0p-53 * 2.0 - 1.0; };
        c.velocity_x += jitter * u();
        c.velocity_y += jitter * u();
        c.start_timestamp = i < n_train ? kTrainEpoch + std::int64_t(i) * kDay
                                        : kTestEpoch + std::int64_t(i - n_train) * kDay;
        RainEvent e = synth_event(c);
        char id[32];
        std::snprintf(id, sizeof id, "evt_%04zu", i);
        e.event_id = id;
        out.push_back(std::move(e));
    }
    return out;
}

std::pair<std::vector<RainEvent>, std::vector<RainEvent>> hold_out_events(const std::vector<RainEvent>& events,
                                                                          double fraction) {
    if (!(fraction >= 0.0 && fraction < 1.0)) throw UsageError("validation fraction must lie in [0, 1)");
    std::size_t n_valid = events.size() < 2 ? 0 : std::size_t(std::ceil(fraction * double(events.size())));
    n_valid = std::min(n_valid, events.size() - 1);
    std::pair<std::vector<RainEvent>, std::vector<RainEvent>> out;
    out.first.assign(events.begin(), events.end() - std::ptrdiff_t(n_valid));
    out.second.assign(events.end() - std::ptrdiff_t(n_valid), events.end());
    return out;
}

void render_pgm(const RainMap& map, const fs::path& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot write image " + path.string());
    f << "P5\n" << map.width << ' ' << map.height << "\n255\n";
    std::vector<unsigned char> px(map.size());
    for (std::size_t i = 0; i < px.size(); ++i) {
        const double v = std::clamp(double(map.values[i]), 0.0, kRenderMaxRate);
        px[i] = static_cast<unsigned char>(std::lround(255.0 * v / kRenderMaxRate));
    }
    f.write(reinterpret_cast<const char*>(px.data()), std::streamsize(px.size()));
    if (!f) throw DataError("cannot write image " + path.string());
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Temporal super-resolution for radar rainfall maps", "tempsr"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--data", o.data, "Dataset directory (manifest.txt) or, for interp, an event file");
    app.add_option("--out", o.out, "Output directory or file");
    app.add_option("--checkpoint", o.checkpoint, "Model checkpoint (CKPT)");
    app.add_option("--method", o.method, "Comma list of methods: nearest, optflow, model");
    app.add_option("--threshold", o.threshold, "Prediction wet threshold in mm/h (default 0.0001)");
    app.add_option("--seed", o.seed, "Random seed");
    app.add_option("--config", o.config, "key=value override or a key=value file (repeatable)");
    app.add_flag("--print-config", o.print_config, "Print the resolved configuration");

    auto* synth = app.add_subcommand("synth", "Generate synthetic rain events");
    synth->add_option("--events", o.events, "Number of events");
    synth->add_option("--frames", o.frames, "Frames per event");
    auto* train = app.add_subcommand("train", "Train the network");
    train->add_option("--epochs", o.epochs, "Epoch count");
    app.add_subcommand("eval", "Score interpolation methods on the test split");
    auto* interp = app.add_subcommand("interp", "Estimate one intermediate frame");
    interp->add_option("--index", o.index, "Index of the frame to estimate");
    interp->add_option("--render", o.render, "Also write an 8-bit PGM rendering");

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return int(ErrorKind::Usage);
    }

    try {
        const RunConfig cfg = resolve(o);
        if (o.print_config) cfg.print(out);
        if (synth->parsed()) return cmd_synth(o, cfg, out);
        if (train->parsed()) return cmd_train(o, cfg, out);
        if (interp->parsed()) return cmd_interp(o, cfg, out);
        return cmd_eval(o, cfg, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return int(e.kind());
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << '\n';
        return int(ErrorKind::Data);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return int(ErrorKind::Data);
    }
}

}  // namespace tempsr
