#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deepcae/matrix.hpp"
#include "deepcae/model.hpp"
#include "deepcae/pca.hpp"
#include "deepcae/preprocess.hpp"

namespace deepcae {

/// Test-set round-trip MSE. Throws NumericError if the output is not finite.
double reconstruction_score(const AutoencoderModel& model, const Matrix& x_test);
double reconstruction_score(const PcaBaseline& pca, const Matrix& x_test);

/// exp(mean(log v)). Throws NumericError unless every value is positive and finite.
double geometric_mean(std::span<const double> values);

/// One raw score plus the same-split, same-seed baseline score.
struct ScoreCell {
    std::string dataset;
    std::string model;
    std::uint64_t run = 0;
    double raw = 0.0;
    double baseline = 0.0;

    double normalized() const { return raw / baseline; }
};

struct Aggregate {
    std::string model;
    double geometric_mean = 0.0;  // over datasets of the per-dataset geometric mean over runs
    double ci_low = 0.0;          // 95% percentile bootstrap over datasets
    double ci_high = 0.0;
    std::size_t datasets = 0;
    std::size_t cells = 0;
};

/// Per-model aggregates in first-appearance order. Throws ConfigError on a
/// non-positive baseline.
std::vector<Aggregate> normalize_and_aggregate(const std::vector<ScoreCell>& cells, std::uint64_t seed,
                                               std::size_t resamples = 1000);

struct MetricSet {
    Task task = Task::regression;
    double accuracy = 0.0, f1 = 0.0, precision = 0.0, recall = 0.0;  // classification, support-weighted
    double mae = 0.0, rmse = 0.0;                                     // regression

    /// Metric names and values for the task, in report order.
    std::vector<std::pair<std::string, double>> named() const;
};

struct LinearModel {
    Matrix weights;  // (d + 1) x outputs; last row is the intercept
    std::size_t iterations = 0;
};

inline constexpr double kPredictorL2 = 1e-4;

/// Minimises mean squared error + l2 * |w|^2 (intercept unpenalised) by
/// solving the centred normal equations.
LinearModel fit_ridge(const Matrix& x, std::span<const double> y, double l2 = kPredictorL2);

/// Multinomial logistic regression with mean cross-entropy + (l2 / 2) * |W|^2
/// (intercept included), solved by damped Newton steps until the gradient's
/// max-norm is below `tolerance`. Labels are 0..classes-1. Throws ConfigError
/// when the training labels contain fewer than two classes.
LinearModel fit_logistic(const Matrix& x, std::span<const double> labels, std::size_t classes,
                         double l2 = kPredictorL2, double tolerance = 1e-6);

/// x * W[:d] + intercept.
Matrix linear_scores(const LinearModel& model, const Matrix& x);

MetricSet classification_metrics(std::span<const double> truth, std::span<const double> predicted);
MetricSet regression_metrics(std::span<const double> truth, std::span<const double> predicted);

/// Trains the task's predictor on (x_train, y_train) and scores it on the test rows.
MetricSet evaluate_predictor(const Matrix& x_train, std::span<const double> y_train, const Matrix& x_test,
                             std::span<const double> y_test, Task task);

struct DownstreamReport {
    MetricSet embedded;
    MetricSet raw;
    MetricSet normalized;  // embedded / raw, metric by metric (0 / 0 counts as 1)
};

DownstreamReport downstream_eval(const Matrix& emb_train, std::span<const double> y_train, const Matrix& emb_test,
                                 std::span<const double> y_test, const MetricSet& raw);

/// One trained run of one variant.
struct RunRecord {
    std::string dataset;
    std::uint64_t run = 0;
    double normalized_mse = 0.0;
    double train_seconds = 0.0;
    std::size_t epochs = 0;
};

struct RuntimeSummary {
    double mean_seconds = 0.0;
    double median_seconds = 0.0;
    double mean_epoch_seconds = 0.0;  // total seconds / total epochs
};

struct ComparisonReport {
    std::vector<std::pair<RunRecord, RunRecord>> cells;  // (deep, stacked), sorted by dataset then run
    double deep_geomean = 0.0;
    double stacked_geomean = 0.0;
    double ratio = 0.0;               // deep / stacked
    double deep_win_fraction = 0.0;   // cells with deep <= stacked
    RuntimeSummary deep, stacked;
};

/// Pairs runs by (dataset, run). Throws ConfigError if the two sets of keys differ.
ComparisonReport compare_deep_vs_stacked(const std::vector<RunRecord>& deep, const std::vector<RunRecord>& stacked);

}  // namespace deepcae
