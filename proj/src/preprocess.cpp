#include "deepcae/preprocess.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <set>

#include "deepcae/errors.hpp"
#include "deepcae/io.hpp"
#include "deepcae/log.hpp"
#include "deepcae/model.hpp"
#include "deepcae/random.hpp"
#include "json.hpp"

namespace deepcae {

using nlohmann::json;

std::string_view to_string(ColumnKind k) {
    switch (k) {
    case ColumnKind::numeric: return "numeric";
    case ColumnKind::categorical: return "categorical";
    case ColumnKind::date: return "date";
    case ColumnKind::target: return "target";
    case ColumnKind::ignored: return "ignored";
    }
    return "?";
}

std::string_view to_string(MissingPolicy p) { return p == MissingPolicy::impute ? "impute" : "drop_row"; }

std::string_view to_string(Task t) { return t == Task::classification ? "classification" : "regression"; }

ColumnKind parse_column_kind(std::string_view s) {
    for (auto k : {ColumnKind::numeric, ColumnKind::categorical, ColumnKind::date, ColumnKind::target,
                   ColumnKind::ignored})
        if (s == to_string(k)) return k;
    throw ConfigError("unknown column kind '" + std::string(s) + "'");
}

Task parse_task(std::string_view s) {
    if (s == "classification") return Task::classification;
    if (s == "regression") return Task::regression;
    throw ConfigError("unknown task '" + std::string(s) + "'");
}

void add_override(SchemaOverrides& overrides, std::string_view spec) {
    const auto eq = spec.find('=');
    if (eq == std::string_view::npos || eq == 0)
        throw ConfigError("schema override '" + std::string(spec) + "' must look like name=kind[:policy]");
    const std::string name(spec.substr(0, eq));
    std::string_view rest = spec.substr(eq + 1);
    SchemaOverride o;
    const auto colon = rest.find(':');
    const std::string_view kind = rest.substr(0, colon);
    if (!kind.empty()) o.kind = parse_column_kind(kind);
    if (colon != std::string_view::npos) {
        const std::string_view policy = rest.substr(colon + 1);
        if (policy == "drop_row") o.missing = MissingPolicy::drop_row;
        else if (policy == "impute") o.missing = MissingPolicy::impute;
        else throw ConfigError("unknown missing-value policy '" + std::string(policy) + "'");
    }
    overrides[name] = o;
}

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t");
    return s.substr(first, last - first + 1);
}

}  // namespace

bool is_missing(std::string_view value) {
    const auto v = trim(value);
    return v.empty() || v == "NA" || v == "?";
}

std::optional<double> parse_number(std::string_view value) {
    auto v = trim(value);
    if (v.starts_with('+')) v.remove_prefix(1);
    if (v.empty()) return std::nullopt;
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) return std::nullopt;
    return out;
}

std::optional<CalendarDate> parse_date(std::string_view value) {
    const auto v = trim(value);
    if (v.size() != 10 && v.size() != 19) return std::nullopt;
    auto digits = [&](std::size_t pos, std::size_t len) -> std::optional<int> {
        int out = 0;
        for (std::size_t i = pos; i < pos + len; ++i) {
            if (v[i] < '0' || v[i] > '9') return std::nullopt;
            out = out * 10 + (v[i] - '0');
        }
        return out;
    };
    if (v[4] != '-' || v[7] != '-') return std::nullopt;
    const auto y = digits(0, 4), m = digits(5, 2), d = digits(8, 2);
    if (!y || !m || !d) return std::nullopt;
    if (v.size() == 19) {
        if (v[10] != ' ' || v[13] != ':' || v[16] != ':') return std::nullopt;
        const auto hh = digits(11, 2), mm = digits(14, 2), ss = digits(17, 2);
        if (!hh || !mm || !ss || *hh > 23 || *mm > 59 || *ss > 60) return std::nullopt;
    }
    using namespace std::chrono;
    const year_month_day ymd{year{*y}, month{static_cast<unsigned>(*m)}, day{static_cast<unsigned>(*d)}};
    if (!ymd.ok()) return std::nullopt;
    const weekday wd{sys_days{ymd}};
    return CalendarDate{*y, static_cast<unsigned>(*m), static_cast<unsigned>(*d), wd.iso_encoding() - 1};
}

std::vector<ColumnSchema> infer_schema(const std::vector<std::string>& header,
                                       const std::vector<std::vector<std::string>>& sample_rows,
                                       const SchemaOverrides& overrides) {
    if (header.empty()) throw ConfigError("empty header");
    std::set<std::string, std::less<>> seen;
    for (const auto& h : header)
        if (!seen.insert(h).second) throw ConfigError("duplicate column name '" + h + "'");
    for (const auto& [name, o] : overrides)
        if (!seen.contains(name)) throw ConfigError("override names unknown column '" + name + "'");

    std::vector<ColumnSchema> schema;
    for (std::size_t c = 0; c < header.size(); ++c) {
        bool numeric = true, date = true;
        for (const auto& row : sample_rows) {
            if (c >= row.size()) throw ConfigError("sample row shorter than header");
            if (is_missing(row[c])) continue;
            numeric = numeric && parse_number(row[c]).has_value();
            date = date && parse_date(row[c]).has_value();
            if (!numeric && !date) break;
        }
        ColumnSchema s{header[c], ColumnKind::categorical, MissingPolicy::impute};
        // A column with no observed values stays categorical (and encodes to nothing).
        bool any = std::any_of(sample_rows.begin(), sample_rows.end(), [&](const auto& r) { return !is_missing(r[c]); });
        if (any && numeric) s.kind = ColumnKind::numeric;
        else if (any && date) s.kind = ColumnKind::date;
        if (auto it = overrides.find(header[c]); it != overrides.end()) {
            if (it->second.kind) s.kind = *it->second.kind;
            if (it->second.missing) s.missing = *it->second.missing;
        }
        schema.push_back(s);
    }
    if (std::count_if(schema.begin(), schema.end(), [](const auto& s) { return s.kind == ColumnKind::target; }) > 1)
        throw ConfigError("more than one target column");
    return schema;
}

std::size_t ColumnState::width() const {
    switch (schema.kind) {
    case ColumnKind::numeric: return 1;
    case ColumnKind::categorical: return vocabulary.size();
    case ColumnKind::date: return 4;
    default: return 0;
    }
}

void PreprocessPlan::finalize() {
    feature_names_.clear();
    static const char* const kDateParts[] = {"year", "month", "day", "weekday"};
    for (const auto& c : columns_) {
        switch (c.schema.kind) {
        case ColumnKind::numeric: feature_names_.push_back(c.schema.name); break;
        case ColumnKind::categorical:
            for (const auto& v : c.vocabulary) feature_names_.push_back(c.schema.name + "=" + v);
            break;
        case ColumnKind::date:
            for (const char* p : kDateParts) feature_names_.push_back(c.schema.name + "." + p);
            break;
        default: break;
        }
    }
}

namespace {

double median_of(std::vector<double> v) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::vector<double> date_parts(const CalendarDate& d) {
    return {static_cast<double>(d.year), static_cast<double>(d.month), static_cast<double>(d.day),
            static_cast<double>(d.weekday)};
}

double numeric_or_throw(const std::string& raw, const std::string& column) {
    if (auto v = parse_number(raw)) return *v;
    throw ConfigError("column '" + column + "': value '" + raw + "' is not numeric");
}

CalendarDate date_or_throw(const std::string& raw, const std::string& column) {
    if (auto v = parse_date(raw)) return *v;
    throw ConfigError("column '" + column + "': value '" + raw + "' is not a date");
}

// Rows that survive drop_row policies and (when present) a missing target.
std::vector<std::size_t> kept_rows(const CsvTable& t, const std::vector<std::pair<std::size_t, bool>>& drop_cols) {
    std::vector<std::size_t> out;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        bool keep = true;
        for (auto [col, drop] : drop_cols)
            if (drop && is_missing(t.rows[r][col])) keep = false;
        if (keep) out.push_back(r);
    }
    return out;
}

}  // namespace

PreprocessPlan fit_plan(const CsvTable& train, const std::vector<ColumnSchema>& schema, Task task) {
    if (schema.size() != train.header.size()) throw ConfigError("schema does not match table columns");
    if (train.rows.empty()) throw ConfigError("cannot fit a plan on zero rows");

    std::vector<std::pair<std::size_t, bool>> drops;
    for (std::size_t c = 0; c < schema.size(); ++c) {
        if (schema[c].name != train.header[c]) throw ConfigError("schema column order does not match table");
        drops.emplace_back(c, schema[c].kind == ColumnKind::target || schema[c].missing == MissingPolicy::drop_row);
    }
    const auto rows = kept_rows(train, drops);
    if (rows.empty()) throw ConfigError("every row was dropped by missing-value policies");

    PreprocessPlan plan;
    for (std::size_t c = 0; c < schema.size(); ++c) {
        const ColumnSchema& s = schema[c];
        if (s.kind == ColumnKind::target) {
            TargetState t{s.name, task, {}};
            if (task == Task::classification) {
                std::set<std::string> classes;
                for (auto r : rows) classes.insert(std::string(trim(train.rows[r][c])));
                t.classes.assign(classes.begin(), classes.end());
            } else {
                for (auto r : rows) numeric_or_throw(train.rows[r][c], s.name);
            }
            plan.target_ = t;
            continue;
        }
        ColumnState st;
        st.schema = s;
        if (s.kind == ColumnKind::numeric || s.kind == ColumnKind::date) {
            const std::size_t parts = s.kind == ColumnKind::numeric ? 1 : 4;
            std::vector<std::vector<double>> values(parts);
            for (auto r : rows) {
                const std::string& raw = train.rows[r][c];
                if (is_missing(raw)) continue;
                const auto v = s.kind == ColumnKind::numeric ? std::vector<double>{numeric_or_throw(raw, s.name)}
                                                             : date_parts(date_or_throw(raw, s.name));
                for (std::size_t p = 0; p < parts; ++p) values[p].push_back(v[p]);
            }
            for (std::size_t p = 0; p < parts; ++p) {
                const double med = median_of(values[p]);
                st.median.push_back(med);
                st.minimum.push_back(values[p].empty() ? med : *std::min_element(values[p].begin(), values[p].end()));
                st.maximum.push_back(values[p].empty() ? med : *std::max_element(values[p].begin(), values[p].end()));
            }
        } else if (s.kind == ColumnKind::categorical) {
            std::map<std::string, std::size_t> counts;
            for (auto r : rows)
                if (!is_missing(train.rows[r][c])) ++counts[std::string(trim(train.rows[r][c]))];
            std::size_t best = 0;
            for (const auto& [v, n] : counts) {
                st.vocabulary.push_back(v);
                if (n > best) {  // map order: ties keep the smallest value
                    best = n;
                    st.mode = v;
                }
            }
        }
        plan.columns_.push_back(std::move(st));
    }
    plan.finalize();
    if (plan.feature_dim() == 0) throw ConfigError("schema produces no feature columns");
    return plan;
}

Transformed transform(const PreprocessPlan& plan, const CsvTable& table) {
    std::vector<std::size_t> source;
    std::vector<std::pair<std::size_t, bool>> drops;
    for (const auto& c : plan.columns()) {
        source.push_back(table.column(c.schema.name));
        drops.emplace_back(source.back(), c.schema.missing == MissingPolicy::drop_row);
    }
    std::optional<std::size_t> target_col;
    if (plan.target()) {
        for (std::size_t i = 0; i < table.header.size(); ++i)
            if (table.header[i] == plan.target()->name) target_col = i;
        if (target_col) drops.emplace_back(*target_col, true);
    }
    const auto rows = kept_rows(table, drops);
    if (rows.empty()) throw ConfigError("every row was dropped by missing-value policies");

    Transformed out{Matrix(rows.size(), plan.feature_dim()), rows, {}};
    auto scale = [](double v, double lo, double hi) {
        if (hi == lo) return 0.0;
        return std::clamp(2.0 * (v - lo) / (hi - lo) - 1.0, -1.0, 1.0);
    };
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& row = table.rows[rows[i]];
        std::size_t f = 0;
        for (std::size_t k = 0; k < plan.columns().size(); ++k) {
            const ColumnState& c = plan.columns()[k];
            const std::string& raw = row[source[k]];
            switch (c.schema.kind) {
            case ColumnKind::numeric: {
                const double v = is_missing(raw) ? c.median[0] : numeric_or_throw(raw, c.schema.name);
                out.features(i, f++) = scale(v, c.minimum[0], c.maximum[0]);
                break;
            }
            case ColumnKind::date: {
                const auto v = is_missing(raw) ? c.median : date_parts(date_or_throw(raw, c.schema.name));
                for (std::size_t p = 0; p < 4; ++p) out.features(i, f++) = scale(v[p], c.minimum[p], c.maximum[p]);
                break;
            }
            case ColumnKind::categorical: {
                const std::string_view v = is_missing(raw) ? std::string_view(c.mode) : trim(raw);
                const auto it = std::lower_bound(c.vocabulary.begin(), c.vocabulary.end(), v);
                if (it != c.vocabulary.end() && *it == v) out.features(i, f + (it - c.vocabulary.begin())) = 1.0;
                f += c.vocabulary.size();
                break;
            }
            default: break;
            }
        }
        if (target_col) {
            const std::string& raw = row[*target_col];
            const TargetState& t = *plan.target();
            if (t.task == Task::regression) {
                out.targets.push_back(numeric_or_throw(raw, t.name));
            } else {
                const auto v = trim(raw);
                const auto it = std::lower_bound(t.classes.begin(), t.classes.end(), v);
                const bool known = it != t.classes.end() && *it == v;
                out.targets.push_back(static_cast<double>(known ? it - t.classes.begin() : t.classes.size()));
            }
        }
    }
    return out;
}

std::string serialize_plan(const PreprocessPlan& plan) {
    json cols = json::array();
    for (const auto& c : plan.columns()) {
        cols.push_back({{"name", c.schema.name},
                        {"kind", std::string(to_string(c.schema.kind))},
                        {"missing", std::string(to_string(c.schema.missing))},
                        {"minimum", c.minimum},
                        {"maximum", c.maximum},
                        {"median", c.median},
                        {"vocabulary", c.vocabulary},
                        {"mode", c.mode}});
    }
    json j;
    j["format"] = "deepcae-plan";
    j["format_version"] = kPlanFormatVersion;
    j["columns"] = cols;
    if (plan.target()) {
        const auto& t = *plan.target();
        j["target"] = {{"name", t.name}, {"task", std::string(to_string(t.task))}, {"classes", t.classes}};
    } else {
        j["target"] = nullptr;
    }
    j["feature_names"] = plan.feature_names();
    return j.dump(1) + "\n";
}

PreprocessPlan deserialize_plan(const std::string& text) {
    try {
        const json j = json::parse(text);
        if (j.at("format").get<std::string>() != "deepcae-plan") throw ConfigError("not a plan file");
        const int version = j.at("format_version").get<int>();
        if (version != kPlanFormatVersion) throw ConfigError("unsupported plan format version " + std::to_string(version));
        PreprocessPlan p;
        for (const auto& c : j.at("columns")) {
            ColumnState st;
            st.schema.name = c.at("name").get<std::string>();
            st.schema.kind = parse_column_kind(c.at("kind").get<std::string>());
            st.schema.missing = c.at("missing").get<std::string>() == "drop_row" ? MissingPolicy::drop_row
                                                                                 : MissingPolicy::impute;
            st.minimum = c.at("minimum").get<std::vector<double>>();
            st.maximum = c.at("maximum").get<std::vector<double>>();
            st.median = c.at("median").get<std::vector<double>>();
            st.vocabulary = c.at("vocabulary").get<std::vector<std::string>>();
            st.mode = c.at("mode").get<std::string>();
            const std::size_t parts = st.schema.kind == ColumnKind::numeric ? 1 : st.schema.kind == ColumnKind::date ? 4 : 0;
            if (st.minimum.size() != parts || st.maximum.size() != parts || st.median.size() != parts)
                throw ConfigError("plan column '" + st.schema.name + "' has malformed ranges");
            p.columns_.push_back(std::move(st));
        }
        if (!j.at("target").is_null()) {
            const auto& t = j.at("target");
            p.target_ = TargetState{t.at("name").get<std::string>(), parse_task(t.at("task").get<std::string>()),
                                    t.at("classes").get<std::vector<std::string>>()};
        }
        p.finalize();
        if (p.feature_names_ != j.at("feature_names").get<std::vector<std::string>>())
            throw ConfigError("plan feature names are inconsistent with its columns");
        return p;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed plan file: ") + e.what());
    }
}

void save_plan(const PreprocessPlan& plan, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_plan(plan));
}

PreprocessPlan load_plan(const std::filesystem::path& path) { return deserialize_plan(read_file(path)); }

Split train_test_split(std::size_t n, double test_fraction, std::uint64_t seed, const std::vector<double>* class_labels) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must be in (0, 1)");
    const std::size_t n_test = round_half_up(static_cast<double>(n) * test_fraction);
    if (n_test == 0 || n_test >= n)
        throw ConfigError("cannot split " + std::to_string(n) + " rows with test fraction " + format_double(test_fraction));

    Rng rng(seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);

    Split s;
    if (class_labels) {
        if (class_labels->size() != n) throw ConfigError("label count does not match row count");
        std::map<double, std::vector<std::size_t>> members;
        for (std::size_t i : order) members[(*class_labels)[i]].push_back(i);
        const bool feasible = std::all_of(members.begin(), members.end(), [](const auto& m) { return m.second.size() >= 2; });
        if (!feasible) {
            log::warn("a class has fewer than two rows; falling back to an unstratified split");
        } else {
            // Largest remainder: floor every quota, then hand out the rest.
            std::vector<std::pair<double, std::size_t>> remainders;
            std::vector<std::size_t> quota;
            std::size_t assigned = 0, idx = 0;
            for (const auto& [label, rows] : members) {
                const double exact = static_cast<double>(rows.size()) * static_cast<double>(n_test) / static_cast<double>(n);
                quota.push_back(static_cast<std::size_t>(std::floor(exact)));
                assigned += quota.back();
                remainders.emplace_back(exact - std::floor(exact), idx++);
            }
            std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
            for (std::size_t i = 0; assigned < n_test; ++i, ++assigned) ++quota[remainders[i % remainders.size()].second];
            idx = 0;
            for (const auto& [label, rows] : members) {
                const std::size_t q = std::min(quota[idx++], rows.size() - 1);
                s.test.insert(s.test.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(q));
                s.train.insert(s.train.end(), rows.begin() + static_cast<std::ptrdiff_t>(q), rows.end());
            }
            s.stratified = true;
        }
    }
    if (!s.stratified) {
        s.test.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
        s.train.assign(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

std::vector<double> class_ids(const CsvTable& table, std::string_view column) {
    const std::size_t c = table.column(column);
    std::map<std::string_view, double> ids;
    for (const auto& row : table.rows) ids.emplace(trim(row[c]), 0.0);
    double next = 0.0;
    for (auto& [v, id] : ids) id = next++;
    std::vector<double> out;
    out.reserve(table.rows.size());
    for (const auto& row : table.rows) out.push_back(ids.at(trim(row[c])));
    return out;
}

CsvTable select_rows(const CsvTable& table, const std::vector<std::size_t>& rows) {
    CsvTable out;
    out.header = table.header;
    for (std::size_t r : rows) out.rows.push_back(table.rows.at(r));
    return out;
}

}  // namespace deepcae
