#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "deepcae/csv.hpp"
#include "deepcae/matrix.hpp"

namespace deepcae {

enum class ColumnKind { numeric, categorical, date, target, ignored };
enum class MissingPolicy { impute, drop_row };
enum class Task { classification, regression };

std::string_view to_string(ColumnKind k);
std::string_view to_string(MissingPolicy p);
std::string_view to_string(Task t);
ColumnKind parse_column_kind(std::string_view s);
Task parse_task(std::string_view s);

struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::categorical;
    MissingPolicy missing = MissingPolicy::impute;

    bool operator==(const ColumnSchema&) const = default;
};

struct SchemaOverride {
    std::optional<ColumnKind> kind;
    std::optional<MissingPolicy> missing;
};

/// Column name -> override.
using SchemaOverrides = std::map<std::string, SchemaOverride, std::less<>>;

/// Parses "name=kind[:drop_row|:impute]" (kind may be empty: "name=:drop_row").
/// Throws ConfigError.
void add_override(SchemaOverrides& overrides, std::string_view spec);

/// Missing-value markers: empty (after trimming), "NA" and "?".
bool is_missing(std::string_view value);

/// Finite double; rejects trailing garbage, inf and nan.
std::optional<double> parse_number(std::string_view value);

struct CalendarDate {
    int year = 0;
    unsigned month = 0;
    unsigned day = 0;
    unsigned weekday = 0;  // Monday = 0
};

/// Accepts YYYY-MM-DD and YYYY-MM-DD hh:mm:ss; validates the calendar date.
std::optional<CalendarDate> parse_date(std::string_view value);

/// A column is numeric if every non-missing sampled value parses as a number,
/// date if every one parses as a date, categorical otherwise. Overrides win.
/// Throws ConfigError on an empty header, duplicate names, more than one
/// target, or overrides naming unknown columns.
std::vector<ColumnSchema> infer_schema(const std::vector<std::string>& header,
                                       const std::vector<std::vector<std::string>>& sample_rows,
                                       const SchemaOverrides& overrides = {});

/// Fitted, immutable per-column state.
struct ColumnState {
    ColumnSchema schema;
    // numeric: one entry; date: year, month, day, weekday.
    std::vector<double> minimum, maximum, median;
    // categorical: sorted vocabulary and the imputation mode.
    std::vector<std::string> vocabulary;
    std::string mode;

    std::size_t width() const;
    bool operator==(const ColumnState&) const = default;
};

struct TargetState {
    std::string name;
    Task task = Task::regression;
    std::vector<std::string> classes;  // sorted, classification only

    bool operator==(const TargetState&) const = default;
};

class PreprocessPlan {
public:
    const std::vector<ColumnState>& columns() const noexcept { return columns_; }
    const std::optional<TargetState>& target() const noexcept { return target_; }
    const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
    std::size_t feature_dim() const noexcept { return feature_names_.size(); }

    bool operator==(const PreprocessPlan&) const = default;

    friend PreprocessPlan fit_plan(const CsvTable&, const std::vector<ColumnSchema>&, Task);
    friend PreprocessPlan deserialize_plan(const std::string&);

private:
    void finalize();

    std::vector<ColumnState> columns_;
    std::optional<TargetState> target_;
    std::vector<std::string> feature_names_;
};

/// Fits scaling ranges, vocabularies and imputation values on `train`.
/// `task` only matters when the schema has a target column.
PreprocessPlan fit_plan(const CsvTable& train, const std::vector<ColumnSchema>& schema,
                        Task task = Task::regression);

struct Transformed {
    Matrix features;                    // rows x feature_dim, entries in [-1, 1]
    std::vector<std::size_t> row_ids;   // source row index of each output row
    std::vector<double> targets;        // empty when the input lacks the target column
};

/// Columns are matched by name, so the target may be absent (embedding new
/// data). Categorical values outside the vocabulary encode as all zeros;
/// numeric values outside the fitted range are clamped. Unseen target
/// classes map to index classes.size(). Throws ConfigError if a feature
/// column is missing or every row is dropped.
Transformed transform(const PreprocessPlan& plan, const CsvTable& table);

std::string serialize_plan(const PreprocessPlan& plan);
PreprocessPlan deserialize_plan(const std::string& text);
void save_plan(const PreprocessPlan& plan, const std::filesystem::path& path);
PreprocessPlan load_plan(const std::filesystem::path& path);

inline constexpr int kPlanFormatVersion = 1;

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    bool stratified = false;
};

/// Seeded shuffle split of indices 0..n-1; test size is round(n * fraction).
/// With labels, each class contributes proportionally (largest-remainder
/// rounding); falls back to an unstratified split with a warning when a class
/// has fewer than two rows. Both index lists are returned sorted.
Split train_test_split(std::size_t n, double test_fraction, std::uint64_t seed,
                       const std::vector<double>* class_labels = nullptr);

/// Dense ids (in sorted order of the trimmed raw strings) for stratifying a split
/// before any plan exists.
std::vector<double> class_ids(const CsvTable& table, std::string_view column);

/// Rows of a table by index.
CsvTable select_rows(const CsvTable& table, const std::vector<std::size_t>& rows);

}  // namespace deepcae
