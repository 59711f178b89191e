#include "tempsr/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "tempsr/error.hpp"

namespace tempsr {

using nn::Tensor;

Tensor mae_loss(const Tensor& pred, const Tensor& target) {
    if (pred.shape() != target.shape())
        throw std::invalid_argument("mae_loss: shape mismatch " + nn::shape_str(pred.shape()) + " vs " +
                                    nn::shape_str(target.shape()));
    if (pred.numel() == 0) throw std::invalid_argument("mae_loss: empty tensors");
    const auto p = pred.values(), t = target.values();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += std::fabs(double(p[i]) - double(t[i]));
    const double n = double(p.size());
    return nn::make_result({1}, {static_cast<float>(s / n)}, {pred, target}, [n](nn::detail::Node& self) {
        nn::detail::Node& pn = *self.inputs[0];
        nn::detail::Node& tn = *self.inputs[1];
        const float d = static_cast<float>(double(self.grad[0]) / n);
        auto sign = [](float a, float b) { return a > b ? 1.0f : (a < b ? -1.0f : 0.0f); };
        if (pn.requires_grad) {
            auto& g = nn::grad_buffer(pn);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * sign(pn.value[i], tn.value[i]);
        }
        if (tn.requires_grad) {
            auto& g = nn::grad_buffer(tn);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= d * sign(pn.value[i], tn.value[i]);
        }
    });
}

double radam_rho(std::int64_t t, double beta2) {
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double b2t = std::pow(beta2, double(t));
    return rho_inf - 2.0 * double(t) * b2t / (1.0 - b2t);
}

double radam_rectifier(std::int64_t t, double beta2) {
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double rho = radam_rho(t, beta2);
    return std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
}

void radam_step(std::span<Tensor> params, OptimizerState& state) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto g = params[i].grad();
        if (g.empty()) continue;
        for (float x : g)
            if (!std::isfinite(x)) throw NumericError("non-finite gradient in parameter " + std::to_string(i));
    }
    if (state.m.size() != params.size()) {
        state.m.assign(params.size(), {});
        state.v.assign(params.size(), {});
    }

    const std::int64_t t = ++state.step;
    const double b1 = state.beta1, b2 = state.beta2;
    const double bias1 = 1.0 - std::pow(b1, double(t));
    const double bias2 = 1.0 - std::pow(b2, double(t));
    const bool adaptive = radam_rho(t, b2) > 4.0;
    const double r = adaptive ? radam_rectifier(t, b2) : 0.0;

    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i];
        auto& m = state.m[i];
        auto& v = state.v[i];
        if (m.size() != p.numel()) {
            m.assign(p.numel(), 0.0f);
            v.assign(p.numel(), 0.0f);
        }
        const auto g = p.grad();
        auto w = p.mutable_values();
        for (std::size_t k = 0; k < w.size(); ++k) {
            const double gk = g.empty() ? 0.0 : double(g[k]);
            const double mk = b1 * m[k] + (1.0 - b1) * gk;
            const double vk = b2 * v[k] + (1.0 - b2) * gk * gk;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double m_hat = mk / bias1;
            double update;
            if (adaptive) {
                const double v_hat = std::sqrt(vk / bias2);
                update = state.lr * r * m_hat / (v_hat + state.eps);
            } else {
                update = state.lr * m_hat;
            }
            w[k] = static_cast<float>(double(w[k]) - update);
        }
    }
}

void SchedulerState::validate() const {
    if (!(factor > 0.0 && factor < 1.0)) throw UsageError("plateau factor must lie in (0, 1)");
    if (patience < 1) throw UsageError("plateau patience must be >= 1");
    if (!(min_lr >= 0.0)) throw UsageError("min_lr must be >= 0");
    if (!(threshold >= 0.0)) throw UsageError("plateau threshold must be >= 0");
}

double plateau_step(SchedulerState& sched, double epoch_loss, double lr) {
    if (epoch_loss < sched.best_loss - sched.threshold) {
        sched.best_loss = epoch_loss;
        sched.epochs_since_improvement = 0;
        return lr;
    }
    if (++sched.epochs_since_improvement >= sched.patience) {
        sched.epochs_since_improvement = 0;
        return std::max(lr * sched.factor, std::min(lr, sched.min_lr));
    }
    return lr;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (max_epochs < 1) throw UsageError("max_epochs must be >= 1");
    if (!(lr > 0.0)) throw UsageError("learning rate must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw UsageError("betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw UsageError("eps must be > 0");
    SchedulerState{std::numeric_limits<double>::infinity(), 0, plateau_patience, plateau_factor, min_lr,
                   plateau_threshold}
        .validate();
}

void write_training_log_csv(const TrainingLog& log, std::ostream& out) {
    out << "epoch,train_mae,valid_mae,lr\n";
    out.precision(9);
    for (const auto& r : log.epochs) out << r.epoch << ',' << r.train_mae << ',' << r.valid_mae << ',' << r.lr << '\n';
}

std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(seed);
    for (std::size_t i = n; i > 1; --i) {
        // Rejection sampling keeps the draw unbiased and library-independent.
        const std::uint64_t bound = i;
        const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
        std::uint64_t x;
        do x = rng();
        while (x >= limit);
        std::swap(idx[i - 1], idx[std::size_t(x % bound)]);
    }
    return idx;
}

namespace {

struct Batch {
    Tensor inputs;
    Tensor targets;
};

Batch make_batch(const std::vector<TripletSample>& samples, std::span<const std::size_t> idx) {
    std::vector<const RainMap*> before, after, target;
    for (std::size_t i : idx) {
        before.push_back(&samples[i].before);
        after.push_back(&samples[i].after);
        target.push_back(&samples[i].target);
    }
    return {pack_inputs(before, after), stack_maps(target)};
}

void check_samples(const std::vector<TripletSample>& samples, const RainMap& ref) {
    for (const auto& s : samples) {
        for (const RainMap* m : {&s.before, &s.after, &s.target})
            if (m->height != ref.height || m->width != ref.width)
                throw DataError("all samples must share one grid shape");
    }
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

double evaluate_mae(const Model& model, const std::vector<TripletSample>& samples, std::size_t batch_size) {
    if (samples.empty()) throw DataError("cannot evaluate on an empty sample list");
    nn::NoGradGuard no_grad;
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    double total = 0.0;
    std::size_t cells = 0;
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
        const std::size_t end = std::min(order.size(), start + batch_size);
        Batch b = make_batch(samples, std::span(order).subspan(start, end - start));
        Tensor y = model.forward(b.inputs);
        const auto p = y.values(), t = b.targets.values();
        for (std::size_t i = 0; i < p.size(); ++i) total += std::fabs(double(p[i]) - double(t[i]));
        cells += p.size();
    }
    return total / double(cells);
}

TrainingLog fit(Model& model, const std::vector<TripletSample>& train, const std::vector<TripletSample>& valid,
                const TrainConfig& cfg, const EpochCallback& on_epoch) {
    cfg.validate();
    if (train.empty()) throw DataError("no training samples");
    check_samples(train, train.front().target);
    check_samples(valid, train.front().target);

    std::vector<Tensor> params = model.parameters();
    OptimizerState opt;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.eps;
    opt.lr = cfg.lr;
    SchedulerState sched{std::numeric_limits<double>::infinity(), 0,       cfg.plateau_patience,
                         cfg.plateau_factor,                      cfg.min_lr, cfg.plateau_threshold};

    TrainingLog log;
    std::vector<std::vector<float>> best;
    std::size_t since_best = 0;
    const std::size_t micro = cfg.micro_batch == 0 ? cfg.batch_size : std::min(cfg.micro_batch, cfg.batch_size);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        std::vector<std::size_t> order;
        if (cfg.shuffle) {
            order = shuffled_indices(train.size(), cfg.seed * 0x9e3779b97f4a7c15ull + cfg.start_epoch + epoch);
        } else {
            order.resize(train.size());
            std::iota(order.begin(), order.end(), 0);
        }

        double abs_sum = 0.0;
        std::size_t cell_count = 0;
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::size_t batch_n = end - start;
            model.zero_grad();
            for (std::size_t ms = start; ms < end; ms += micro) {
                const std::size_t me = std::min(end, ms + micro);
                Batch b = make_batch(train, std::span(order).subspan(ms, me - ms));
                Tensor pred = model.forward(b.inputs);
                Tensor loss = mae_loss(pred, b.targets);
                const double chunk_cells = double(pred.numel());
                abs_sum += double(loss.item()) * chunk_cells;
                cell_count += pred.numel();
                if (!std::isfinite(loss.item()))
                    throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batch_index));
                // Weight each chunk by its share of the batch so the accumulated
                // gradient is that of the whole-batch mean.
                nn::backward(me - ms == batch_n ? loss : nn::scale(loss, float(double(me - ms) / double(batch_n))));
            }
            try {
                radam_step(params, opt);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_index));
            }
        }

        EpochRecord rec;
        rec.epoch = cfg.start_epoch + epoch;
        rec.train_mae = abs_sum / double(cell_count);
        rec.valid_mae = valid.empty() ? rec.train_mae : evaluate_mae(model, valid, cfg.batch_size);
        rec.lr = opt.lr;
        if (!std::isfinite(rec.valid_mae))
            throw NumericError("non-finite validation MAE at epoch " + std::to_string(rec.epoch));
        log.epochs.push_back(rec);

        if (rec.valid_mae < log.best_valid_mae) {
            log.best_valid_mae = rec.valid_mae;
            log.best_epoch = rec.epoch;
            since_best = 0;
            best.clear();
            for (const auto& p : params) best.emplace_back(p.values().begin(), p.values().end());
            if (cfg.checkpoint_path) {
                CheckpointBundle bundle = model.save();
                bundle.metadata["train.epoch"] = std::to_string(rec.epoch);
                bundle.metadata["train.step"] = std::to_string(cfg.start_step + opt.step);
                bundle.metadata["train.lr"] = fmt(opt.lr);
                bundle.metadata["train.train_mae"] = fmt(rec.train_mae);
                bundle.metadata["train.valid_mae"] = fmt(rec.valid_mae);
                save_checkpoint(bundle, *cfg.checkpoint_path);
            }
        } else {
            ++since_best;
        }
        if (on_epoch) on_epoch(rec);

        opt.lr = plateau_step(sched, rec.valid_mae, opt.lr);
        if (cfg.early_stop_patience && since_best >= *cfg.early_stop_patience) {
            log.stopped_early = true;
            break;
        }
    }

    for (std::size_t i = 0; i < params.size(); ++i)
        std::copy(best[i].begin(), best[i].end(), params[i].mutable_values().begin());
    log.steps = opt.step;
    return log;
}

}  // namespace tempsr
