#pragma once

// MAE training with RAdam and a reduce-on-plateau learning-rate schedule.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "tempsr/dataset.hpp"
#include "tempsr/model.hpp"
#include "tempsr/tensor.hpp"

namespace tempsr {

// Mean of |pred - target| over all elements, accumulated in double.
// Subgradient 0 where pred == target.
nn::Tensor mae_loss(const nn::Tensor& pred, const nn::Tensor& target);

struct OptimizerState {
    std::int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double lr = 1e-3;
    double eps = 1e-8;
    std::vector<std::vector<float>> m;  // first moments, one per parameter
    std::vector<std::vector<float>> v;  // second moments
};

// Length of the approximated simple moving average at step t (t >= 1).
double radam_rho(std::int64_t t, double beta2);
// Variance rectification term; only meaningful when radam_rho(t) > 4.
double radam_rectifier(std::int64_t t, double beta2);

// One rectified-Adam update over every parameter, using the gradients stored
// on the tensors. Moments are lazily sized on first use. Throws NumericError
// (leaving parameters and state untouched) when a gradient is not finite.
void radam_step(std::span<nn::Tensor> params, OptimizerState& state);

struct SchedulerState {
    double best_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    int patience = 3;
    double factor = 0.1;
    double min_lr = 1e-6;
    double threshold = 1e-5;  // absolute improvement required

    void validate() const;
};

// Returns the learning rate for the next epoch.
double plateau_step(SchedulerState& sched, double epoch_loss, double lr);

struct TrainConfig {
    std::size_t batch_size = 8;
    // Gradient-accumulation chunk; 0 means the whole batch at once. Bounds
    // memory without changing the optimisation problem.
    std::size_t micro_batch = 0;
    std::size_t max_epochs = 30;
    std::uint64_t seed = 0;
    bool shuffle = true;
    std::optional<std::size_t> early_stop_patience;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int plateau_patience = 3;
    double plateau_factor = 0.1;
    double min_lr = 1e-6;
    double plateau_threshold = 1e-5;
    // Written whenever validation improves (optional).
    std::optional<std::filesystem::path> checkpoint_path;
    // Bookkeeping carried into the checkpoint metadata when resuming.
    std::size_t start_epoch = 0;
    std::int64_t start_step = 0;

    void validate() const;
};

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_mae = 0.0;
    double valid_mae = 0.0;
    double lr = 0.0;  // rate used during the epoch
};

struct TrainingLog {
    std::vector<EpochRecord> epochs;
    double best_valid_mae = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::int64_t steps = 0;
    bool stopped_early = false;
};

void write_training_log_csv(const TrainingLog& log, std::ostream& out);

// Mean absolute error of the model over all cells of all samples.
double evaluate_mae(const Model& model, const std::vector<TripletSample>& samples, std::size_t batch_size = 8);

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains in place. After return the model holds the best-validation
// parameters. With an empty validation set the train MAE drives scheduling
// and model selection.
TrainingLog fit(Model& model, const std::vector<TripletSample>& train, const std::vector<TripletSample>& valid,
                const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Seeded Fisher-Yates permutation of [0, n).
std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed);

}  // namespace tempsr
