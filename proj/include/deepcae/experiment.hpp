#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deepcae/eval.hpp"
#include "deepcae/preprocess.hpp"
#include "deepcae/train.hpp"

namespace deepcae {

inline constexpr int kExperimentSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

struct DatasetEntry {
    std::string name;
    std::filesystem::path path;
    std::string target;  // empty: unsupervised, no downstream evaluation
    Task task = Task::regression;
    std::vector<std::string> overrides;  // "column=kind[:policy]"
};

struct ExperimentConfig {
    std::vector<DatasetEntry> datasets;
    std::vector<std::string> models{"pca", "standard", "deepcae", "stacked"};
    std::size_t runs = 3;
    std::uint64_t seed = 0;
    double compression_rate = 0.5;
    std::size_t num_layers = 1;
    double test_fraction = 0.2;
    double validation_fraction = 0.1;
    TrainConfig training;
    std::optional<SearchSpace> search;
    SearchOptions search_options;
    bool downstream = true;
    /// Rescale the stacked variant's lambda by deep / stacked penalty at the
    /// shared initial parameters, so both start with the same weighted penalty.
    bool match_penalty_scale = false;
    std::filesystem::path output_dir = "out";

    const DatasetEntry& dataset(const std::string& name) const;
    void validate() const;
};

/// Relative dataset paths and output_dir resolve against `base_dir`. Throws ConfigError.
ExperimentConfig parse_experiment(const std::string& text, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment(const std::filesystem::path& path);

/// Seed for one named stream of one (dataset, run) cell.
std::uint64_t cell_seed(std::uint64_t experiment_seed, std::string_view stream, const std::string& dataset,
                        std::uint64_t run);

/// One dataset split and preprocessed with a plan fitted on the training rows.
struct PreparedData {
    PreprocessPlan plan;
    Matrix train;  // full training split
    Matrix test;
    Matrix fit;    // train minus the validation holdout
    Matrix validation;
    std::vector<double> y_train, y_test;
    bool supervised = false;
    Task task = Task::regression;
    std::size_t raw_columns = 0;
};

/// Columns with the target override applied, from every row of the table.
std::vector<ColumnSchema> dataset_schema(const DatasetEntry& entry, const CsvTable& table);

PreparedData prepare(const DatasetEntry& entry, const CsvTable& table, const ExperimentConfig& config,
                     std::uint64_t run);

/// deep / stacked penalty of `model`'s encoder on x.
double penalty_scale_ratio(const AutoencoderModel& model, const Matrix& x);

struct ReportRow {
    std::string dataset;
    std::string model;
    std::uint64_t run = 0;
    std::uint64_t seed = 0;
    std::size_t input_dim = 0;
    std::size_t embedding_dim = 0;
    std::size_t num_layers = 0;
    double learning_rate = 0.0;
    double lambda = 0.0;
    std::size_t epochs = 0;
    double raw_mse = 0.0;
    double baseline_mse = 0.0;
    double normalized_mse = 0.0;
    bool baseline_degenerate = false;
    std::optional<DownstreamReport> downstream;
    double train_seconds = 0.0;  // wall clock; kept out of the deterministic report
};

struct BenchmarkResult {
    std::vector<ReportRow> rows;
    std::vector<Aggregate> aggregates;
    std::optional<ComparisonReport> comparison;
    std::vector<std::string> notes;
};

/// Runs every (dataset, model, run) cell. Hyperparameters come from a
/// successive-halving search on run 0 when the config has a search space.
/// Up to `jobs` cells train concurrently; results do not depend on `jobs`.
BenchmarkResult run_benchmark(const ExperimentConfig& config, int jobs);

/// Machine-readable, one row per (dataset, model, run). Deterministic.
std::string report_csv(const BenchmarkResult& result);
/// Human-readable aggregates and comparison. Deterministic.
std::string summary_text(const BenchmarkResult& result);
/// Wall-clock training times per row and per variant.
std::string timing_text(const BenchmarkResult& result);

/// Writes report.csv, summary.txt and timing.txt into `dir`.
void write_benchmark(const BenchmarkResult& result, const std::filesystem::path& dir);

}  // namespace deepcae
