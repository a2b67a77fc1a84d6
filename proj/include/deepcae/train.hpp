#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "deepcae/matrix.hpp"
#include "deepcae/model.hpp"
#include "deepcae/random.hpp"

namespace deepcae {

struct TrainConfig {
    double learning_rate = 1e-3;
    double lambda = 0.0;
    std::size_t batch_size = 128;
    std::size_t max_epochs = 200;
    std::size_t early_stop_window = 30;
    double early_stop_min_progress = 0.002;
    std::uint64_t seed = 0;
    Exec exec = Exec::parallel;

    /// Throws ConfigError.
    void validate() const;
};

struct EpochRecord {
    double train_total = 0.0;
    double train_recon = 0.0;
    double train_penalty = 0.0;  // unweighted; 0 when the penalty is disabled
    double val_recon = 0.0;
    double seconds = 0.0;
};

struct TrainResult {
    AutoencoderModel model;  // parameters from the best validation epoch
    std::vector<EpochRecord> history;
    std::size_t stopped_epoch = 0;
    std::size_t best_epoch = 0;  // 1-based; 0 means the initial parameters
    double best_val_recon = 0.0;
    double wall_seconds = 0.0;
};

/// Adam with bias correction.
class Adam {
public:
    Adam(double learning_rate, const std::vector<const Matrix*>& shapes);
    void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads);

    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

private:
    double lr_;
    std::uint64_t t_ = 0;
    std::vector<Matrix> m_, v_;
};

/// True once the best validation loss of the last `window` epochs improved on
/// the best before them by less than `min_progress` (relative).
bool should_stop(const std::vector<double>& val_history, std::size_t window, double min_progress);

/// Resumable training loop. Holds references to the data, which must outlive it.
class Trainer {
public:
    Trainer(AutoencoderModel model, const Matrix& train, const Matrix& val, TrainConfig config);

    /// Runs up to `epochs` more epochs and returns how many ran. Throws
    /// DivergedError on a non-finite loss or parameter.
    std::size_t run(std::size_t epochs);
    std::size_t run_to_completion() { return run(config_.max_epochs); }

    bool finished() const noexcept { return stopped_; }
    std::size_t epochs_run() const noexcept { return history_.size(); }
    double best_val_recon() const noexcept { return best_val_; }
    const std::vector<EpochRecord>& history() const noexcept { return history_; }
    const TrainConfig& config() const noexcept { return config_; }
    TrainResult result() const;

private:
    void epoch();

    AutoencoderModel model_;
    AutoencoderModel best_model_;
    const Matrix* train_;
    const Matrix* val_;
    TrainConfig config_;
    Adam adam_;
    Rng rng_;
    std::vector<EpochRecord> history_;
    std::vector<double> val_history_;
    double best_val_;
    std::size_t best_epoch_ = 0;
    bool stopped_ = false;
    double seconds_ = 0.0;
};

/// Trains `model` (whose lambda is replaced by config.lambda) until early stop
/// or max_epochs.
TrainResult fit(AutoencoderModel model, const Matrix& train, const Matrix& val, const TrainConfig& config);

struct Holdout {
    std::vector<std::size_t> fit;
    std::vector<std::size_t> validation;
};

/// Seeded holdout of round(n * fraction) rows (at least one on each side).
Holdout holdout_split(std::size_t n, double fraction, std::uint64_t seed);

struct SearchSpace {
    std::vector<double> learning_rates;
    std::vector<double> lambdas;
};

struct SearchOptions {
    std::size_t rungs = 2;
    std::size_t epochs_per_rung = 20;
    std::size_t eta = 3;
    int jobs = 1;
};

struct CandidateOutcome {
    TrainConfig config;
    std::vector<double> rung_scores;  // best validation recon after each rung it ran
    std::string failure;              // empty unless it diverged
};

struct SearchResult {
    std::size_t best_index = 0;
    TrainConfig best;
    std::vector<std::size_t> rung_sizes;  // candidates entering each rung, then the winner count
    std::vector<CandidateOutcome> candidates;
    TrainResult best_result;
};

/// Enumerates configs learning-rate-major; `base` supplies everything else.
std::vector<TrainConfig> expand_grid(const SearchSpace& space, const TrainConfig& base);

/// Synchronous successive halving: every survivor trains epochs_per_rung more
/// epochs (resuming), then the best max(1, n / eta) by validation recon move
/// on. Ties go to the lower lambda, then the lower learning rate, then the
/// lower index. Candidates run concurrently on up to `jobs` threads; the
/// outcome does not depend on `jobs`. Throws DivergedError if every
/// candidate diverges.
SearchResult successive_halving(const AutoencoderModel& initial, const Matrix& train, const Matrix& val,
                                const std::vector<TrainConfig>& configs, const SearchOptions& options);

}  // namespace deepcae
