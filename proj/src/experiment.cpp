#include "deepcae/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <map>
#include <set>
#include <sstream>

#include "deepcae/errors.hpp"
#include "deepcae/io.hpp"
#include "deepcae/log.hpp"
#include "deepcae/random.hpp"
#include "json.hpp"

namespace deepcae {

using nlohmann::json;

namespace {

const std::set<std::string> kModelNames{"pca", "standard", "deepcae", "stacked"};

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
    for (const auto& [key, value] : j.items())
        if (std::find_if(known.begin(), known.end(), [&](const char* k) { return key == k; }) == known.end())
            throw ConfigError("unknown key '" + key + "' in " + where);
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string fmt(const char* format, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, format, v);
    return buf;
}

std::string pad(std::string s, std::size_t width) {
    if (s.size() < width) s.append(width - s.size(), ' ');
    return s;
}

}  // namespace

const DatasetEntry& ExperimentConfig::dataset(const std::string& name) const {
    for (const auto& d : datasets)
        if (d.name == name) return d;
    throw ConfigError("no dataset named '" + name + "' in the experiment config");
}

void ExperimentConfig::validate() const {
    if (datasets.empty()) throw ConfigError("experiment lists no datasets");
    std::set<std::string> names;
    for (const auto& d : datasets) {
        if (d.name.empty()) throw ConfigError("dataset without a name");
        if (!names.insert(d.name).second) throw ConfigError("duplicate dataset name '" + d.name + "'");
    }
    if (models.empty()) throw ConfigError("experiment lists no models");
    std::set<std::string> seen;
    for (const auto& m : models) {
        if (!kModelNames.contains(m)) throw ConfigError("unknown model '" + m + "' (expected pca, standard, deepcae or stacked)");
        if (!seen.insert(m).second) throw ConfigError("model '" + m + "' listed twice");
    }
    if (runs == 0) throw ConfigError("runs must be positive");
    if (!(compression_rate > 0.0 && compression_rate <= 1.0)) throw ConfigError("compression_rate must be in (0, 1]");
    if (num_layers == 0) throw ConfigError("num_layers must be positive");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("test_fraction must be in (0, 1)");
    if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
        throw ConfigError("validation_fraction must be in (0, 1)");
    training.validate();
    if (search && (search->learning_rates.empty() || search->lambdas.empty()))
        throw ConfigError("search grids must be non-empty");
}

ExperimentConfig parse_experiment(const std::string& text, const std::filesystem::path& base_dir) {
    ExperimentConfig c;
    try {
        const json j = json::parse(text);
        if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
        reject_unknown(j, {"schema_version", "datasets", "models", "runs", "seed", "compression_rate", "num_layers",
                           "test_fraction", "validation_fraction", "training", "search", "downstream", "match_penalty_scale", "output_dir"},
                       "experiment config");
        if (!j.contains("schema_version")) throw ConfigError("experiment config lacks schema_version");
        const int version = j.at("schema_version").get<int>();
        if (version != kExperimentSchemaVersion)
            throw ConfigError("unsupported experiment schema_version " + std::to_string(version));

        for (const auto& d : j.at("datasets")) {
            reject_unknown(d, {"name", "path", "target", "task", "overrides"}, "dataset entry");
            DatasetEntry e;
            e.name = d.at("name").get<std::string>();
            e.path = d.at("path").get<std::string>();
            if (e.path.is_relative()) e.path = (base_dir / e.path).lexically_normal();
            read_opt(d, "target", e.target);
            if (d.contains("task")) e.task = parse_task(d.at("task").get<std::string>());
            read_opt(d, "overrides", e.overrides);
            c.datasets.push_back(std::move(e));
        }
        read_opt(j, "models", c.models);
        read_opt(j, "runs", c.runs);
        read_opt(j, "seed", c.seed);
        read_opt(j, "compression_rate", c.compression_rate);
        read_opt(j, "num_layers", c.num_layers);
        read_opt(j, "test_fraction", c.test_fraction);
        read_opt(j, "validation_fraction", c.validation_fraction);
        read_opt(j, "downstream", c.downstream);
        read_opt(j, "match_penalty_scale", c.match_penalty_scale);
        if (j.contains("output_dir")) {
            c.output_dir = j.at("output_dir").get<std::string>();
            if (c.output_dir.is_relative()) c.output_dir = (base_dir / c.output_dir).lexically_normal();
        } else {
            c.output_dir = (base_dir / "out").lexically_normal();
        }
        if (j.contains("training")) {
            const auto& t = j.at("training");
            reject_unknown(t, {"learning_rate", "lambda", "batch_size", "max_epochs", "early_stop_window",
                               "early_stop_min_progress"},
                           "training");
            read_opt(t, "learning_rate", c.training.learning_rate);
            read_opt(t, "lambda", c.training.lambda);
            read_opt(t, "batch_size", c.training.batch_size);
            read_opt(t, "max_epochs", c.training.max_epochs);
            read_opt(t, "early_stop_window", c.training.early_stop_window);
            read_opt(t, "early_stop_min_progress", c.training.early_stop_min_progress);
        }
        if (j.contains("search") && !j.at("search").is_null()) {
            const auto& s = j.at("search");
            reject_unknown(s, {"learning_rates", "lambdas", "rungs", "epochs_per_rung", "eta"}, "search");
            SearchSpace space;
            space.learning_rates = s.at("learning_rates").get<std::vector<double>>();
            space.lambdas = s.at("lambdas").get<std::vector<double>>();
            c.search = space;
            read_opt(s, "rungs", c.search_options.rungs);
            read_opt(s, "epochs_per_rung", c.search_options.epochs_per_rung);
            read_opt(s, "eta", c.search_options.eta);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed experiment config: ") + e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
    return parse_experiment(read_file(path), path.parent_path());
}

std::uint64_t cell_seed(std::uint64_t experiment_seed, std::string_view stream, const std::string& dataset,
                        std::uint64_t run) {
    return derive_seed(experiment_seed, std::string(stream) + "/" + dataset, run);
}

std::vector<ColumnSchema> dataset_schema(const DatasetEntry& entry, const CsvTable& table) {
    SchemaOverrides overrides;
    for (const auto& o : entry.overrides) add_override(overrides, o);
    if (!entry.target.empty()) add_override(overrides, entry.target + "=target");
    return infer_schema(table.header, table.rows, overrides);
}

PreparedData prepare(const DatasetEntry& entry, const CsvTable& table, const ExperimentConfig& config,
                     std::uint64_t run) {
    const auto schema = dataset_schema(entry, table);
    std::vector<double> labels;
    const bool supervised = !entry.target.empty();
    if (supervised && entry.task == Task::classification) labels = class_ids(table, entry.target);
    const Split split = train_test_split(table.rows.size(), config.test_fraction,
                                         cell_seed(config.seed, "split", entry.name, run),
                                         labels.empty() ? nullptr : &labels);
    const CsvTable train_rows = select_rows(table, split.train);
    const CsvTable test_rows = select_rows(table, split.test);

    PreparedData p;
    p.plan = fit_plan(train_rows, schema, entry.task);
    Transformed tr = transform(p.plan, train_rows);
    Transformed te = transform(p.plan, test_rows);
    p.train = std::move(tr.features);
    p.test = std::move(te.features);
    p.y_train = std::move(tr.targets);
    p.y_test = std::move(te.targets);
    p.supervised = supervised;
    p.task = entry.task;
    p.raw_columns = table.header.size() - (supervised ? 1 : 0);
    const Holdout h =
        holdout_split(p.train.rows(), config.validation_fraction, cell_seed(config.seed, "holdout", entry.name, run));
    p.fit = p.train.gather_rows(h.fit);
    p.validation = p.train.gather_rows(h.validation);
    return p;
}

double penalty_scale_ratio(const AutoencoderModel& model, const Matrix& x) {
    const Encoded enc = encode(model, x);
    const auto weights = model.encoder_weights();
    const double stacked = stacked_penalty(enc.trace, weights).value;
    if (!(stacked > 0.0)) throw NumericError("stacked penalty is zero; cannot match penalty scales");
    return deepcae_penalty(enc.trace, weights).value / stacked;
}

BenchmarkResult run_benchmark(const ExperimentConfig& config, int jobs) {
    config.validate();
    const std::size_t n_data = config.datasets.size();
    BenchmarkResult result;

    struct DatasetState {
        std::vector<PreparedData> runs;
        std::vector<PcaBaseline> pca;
        std::vector<double> baseline;
        std::vector<std::optional<MetricSet>> raw_downstream;
    };
    std::vector<DatasetState> state(n_data);
    for (std::size_t d = 0; d < n_data; ++d) {
        const DatasetEntry& entry = config.datasets[d];
        log::info("loading " + entry.name + " from " + entry.path.string());
        const CsvTable table = read_csv(entry.path);
        for (std::uint64_t r = 0; r < config.runs; ++r) {
            PreparedData p = prepare(entry, table, config, r);
            const auto spec = EncoderSpec::from_rate(p.train.cols(), config.compression_rate, config.num_layers);
            PcaBaseline pca = pca_fit(p.train, spec.embedding_dim);
            const double base = reconstruction_score(pca, p.test);
            if (pca.degenerate)
                result.notes.push_back(entry.name + " run " + std::to_string(r) +
                                       ": PCA baseline kept a zero-variance axis");
            std::optional<MetricSet> raw;
            if (config.downstream && p.supervised) raw = evaluate_predictor(p.train, p.y_train, p.test, p.y_test, p.task);
            if (r == 0)
                log::info(entry.name + ": " + std::to_string(p.raw_columns) + " input columns -> " +
                          std::to_string(p.train.cols()) + " features, " + std::to_string(p.train.rows()) +
                          " train / " + std::to_string(p.test.rows()) + " test rows");
            state[d].runs.push_back(std::move(p));
            state[d].pca.push_back(std::move(pca));
            state[d].baseline.push_back(base);
            state[d].raw_downstream.push_back(std::move(raw));
        }
    }

    std::vector<std::string> ae_models;
    for (const auto& m : config.models)
        if (m != "pca") ae_models.push_back(m);

    // Hyperparameters per (dataset, variant).
    std::map<std::pair<std::size_t, std::string>, TrainConfig> chosen;
    for (std::size_t d = 0; d < n_data; ++d) {
        const std::string& name = config.datasets[d].name;
        for (const auto& m : ae_models) {
            const Variant variant = parse_variant(m);
            TrainConfig base = config.training;
            base.seed = cell_seed(config.seed, "shuffle", name, 0);
            if (variant == Variant::standard) base.lambda = 0.0;
            if (!config.search) {
                chosen[{d, m}] = base;
                continue;
            }
            SearchSpace space = *config.search;
            if (variant == Variant::standard) space.lambdas = {0.0};
            const PreparedData& p = state[d].runs[0];
            const auto spec = EncoderSpec::from_rate(p.train.cols(), config.compression_rate, config.num_layers);
            const auto init = init_model(spec, variant, 0.0, cell_seed(config.seed, "init", name, 0));
            SearchOptions options = config.search_options;
            options.jobs = jobs;
            const SearchResult s = successive_halving(init, p.fit, p.validation, expand_grid(space, base), options);
            chosen[{d, m}] = s.best;
            result.notes.push_back(name + " " + m + ": search picked learning_rate " + format_double(s.best.learning_rate) +
                                   ", lambda " + format_double(s.best.lambda));
        }
    }

    struct Cell {
        std::size_t dataset;
        std::string model;
        std::uint64_t run;
    };
    std::vector<Cell> cells;
    for (std::size_t d = 0; d < n_data; ++d)
        for (const auto& m : ae_models)
            for (std::uint64_t r = 0; r < config.runs; ++r) cells.push_back({d, m, r});

    std::vector<ReportRow> trained(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    const auto count = static_cast<std::ptrdiff_t>(cells.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, jobs))
    for (std::ptrdiff_t i = 0; i < count; ++i) {
        const Cell& cell = cells[static_cast<std::size_t>(i)];
        try {
            const std::string& name = config.datasets[cell.dataset].name;
            const PreparedData& p = state[cell.dataset].runs[cell.run];
            const Variant variant = parse_variant(cell.model);
            TrainConfig tc = chosen.at({cell.dataset, cell.model});
            tc.seed = cell_seed(config.seed, "shuffle", name, cell.run);
            const auto spec = EncoderSpec::from_rate(p.train.cols(), config.compression_rate, config.num_layers);
            const std::uint64_t seed = cell_seed(config.seed, "init", name, cell.run);
            const AutoencoderModel init = init_model(spec, variant, tc.lambda, seed);
            if (variant == Variant::stacked_cae && config.match_penalty_scale)
                tc.lambda *= penalty_scale_ratio(init, p.fit);
            const TrainResult tr = fit(init, p.fit, p.validation, tc);

            ReportRow row;
            row.dataset = name;
            row.model = cell.model;
            row.run = cell.run;
            row.seed = seed;
            row.input_dim = spec.input_dim;
            row.embedding_dim = spec.embedding_dim;
            row.num_layers = spec.num_layers;
            row.learning_rate = tc.learning_rate;
            row.lambda = tr.model.penalty_weight();
            row.epochs = tr.stopped_epoch;
            row.raw_mse = reconstruction_score(tr.model, p.test);
            row.baseline_mse = state[cell.dataset].baseline[cell.run];
            row.normalized_mse = row.raw_mse / row.baseline_mse;
            row.baseline_degenerate = state[cell.dataset].pca[cell.run].degenerate;
            row.train_seconds = tr.wall_seconds;
            if (const auto& raw = state[cell.dataset].raw_downstream[cell.run])
                row.downstream = downstream_eval(encode(tr.model, p.train).embedding, p.y_train,
                                                 encode(tr.model, p.test).embedding, p.y_test, *raw);
            trained[static_cast<std::size_t>(i)] = std::move(row);
        } catch (...) {
            errors[static_cast<std::size_t>(i)] = std::current_exception();
        }
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    std::vector<ScoreCell> scores;
    std::vector<RunRecord> deep, stacked;
    for (std::size_t d = 0; d < n_data; ++d) {
        const std::string& name = config.datasets[d].name;
        for (const auto& m : config.models) {
            for (std::uint64_t r = 0; r < config.runs; ++r) {
                ReportRow row;
                if (m == "pca") {
                    const PreparedData& p = state[d].runs[r];
                    const PcaBaseline& pca = state[d].pca[r];
                    row.dataset = name;
                    row.model = m;
                    row.run = r;
                    row.input_dim = p.train.cols();
                    row.embedding_dim = pca.components();
                    row.raw_mse = row.baseline_mse = state[d].baseline[r];
                    row.normalized_mse = row.raw_mse / row.baseline_mse;
                    row.baseline_degenerate = pca.degenerate;
                    if (const auto& raw = state[d].raw_downstream[r])
                        row.downstream = downstream_eval(pca_project(pca, p.train), p.y_train, pca_project(pca, p.test),
                                                         p.y_test, *raw);
                } else {
                    const auto it = std::find_if(cells.begin(), cells.end(), [&](const Cell& c) {
                        return c.dataset == d && c.model == m && c.run == r;
                    });
                    row = trained[static_cast<std::size_t>(it - cells.begin())];
                    const RunRecord rec{name, r, row.normalized_mse, row.train_seconds, row.epochs};
                    if (m == "deepcae") deep.push_back(rec);
                    if (m == "stacked") stacked.push_back(rec);
                }
                scores.push_back({name, m, r, row.raw_mse, row.baseline_mse});
                result.rows.push_back(std::move(row));
            }
        }
    }
    result.aggregates = normalize_and_aggregate(scores, config.seed);
    if (!deep.empty() && !stacked.empty()) result.comparison = compare_deep_vs_stacked(deep, stacked);
    return result;
}

std::string report_csv(const BenchmarkResult& result) {
    std::ostringstream out;
    out << "schema_version,dataset,model,run,seed,input_dim,embedding_dim,num_layers,learning_rate,lambda,epochs,"
           "raw_mse,baseline,baseline_mse,normalized_mse,baseline_degenerate,task,"
           "accuracy,f1,precision,recall,mae,rmse,"
           "norm_accuracy,norm_f1,norm_precision,norm_recall,norm_mae,norm_rmse\n";
    auto num = [](double v) { return format_double(v); };
    for (const auto& r : result.rows) {
        out << kReportSchemaVersion << ',' << csv_field(r.dataset) << ',' << r.model << ',' << r.run << ',' << r.seed
            << ',' << r.input_dim << ',' << r.embedding_dim << ',' << r.num_layers << ',' << num(r.learning_rate) << ','
            << num(r.lambda) << ',' << r.epochs << ',' << num(r.raw_mse) << ",linear_pca," << num(r.baseline_mse) << ','
            << num(r.normalized_mse) << ',' << (r.baseline_degenerate ? "true" : "false") << ',';
        if (!r.downstream) {
            out << ",,,,,,,,,,,,,\n";
            continue;
        }
        const auto& e = r.downstream->embedded;
        const auto& n = r.downstream->normalized;
        const bool cls = e.task == Task::classification;
        out << to_string(e.task);
        for (const MetricSet* m : {&e, &n}) {
            if (cls) out << ',' << num(m->accuracy) << ',' << num(m->f1) << ',' << num(m->precision) << ',' << num(m->recall) << ",,";
            else out << ",,,,," << num(m->mae) << ',' << num(m->rmse);
        }
        out << '\n';
    }
    return out.str();
}

std::string summary_text(const BenchmarkResult& result) {
    std::ostringstream out;
    out << "Reconstruction MSE on the test split, normalized by a linear PCA baseline\n"
           "(per-run baseline, geometric mean over runs then over datasets; 95% bootstrap CI over datasets)\n\n";
    out << pad("model", 12) << pad("geo-mean", 12) << pad("ci-low", 12) << pad("ci-high", 12) << "datasets  cells\n";
    for (const auto& a : result.aggregates)
        out << pad(a.model, 12) << pad(fmt("%.4f", a.geometric_mean), 12) << pad(fmt("%.4f", a.ci_low), 12)
            << pad(fmt("%.4f", a.ci_high), 12) << pad(std::to_string(a.datasets), 10) << a.cells << '\n';

    out << "\nPer dataset (geometric mean of normalized MSE over runs; mean raw MSE)\n\n";
    out << pad("dataset", 18) << pad("model", 12) << pad("normalized", 14) << pad("raw", 14) << "downstream (normalized)\n";
    std::vector<std::pair<std::string, std::string>> keys;
    for (const auto& r : result.rows)
        if (std::find(keys.begin(), keys.end(), std::pair{r.dataset, r.model}) == keys.end()) keys.emplace_back(r.dataset, r.model);
    for (const auto& [dataset, model] : keys) {
        std::vector<double> norm;
        double raw = 0.0;
        std::vector<std::pair<std::string, double>> down;
        std::size_t n = 0;
        for (const auto& r : result.rows) {
            if (r.dataset != dataset || r.model != model) continue;
            norm.push_back(r.normalized_mse);
            raw += r.raw_mse;
            ++n;
            if (r.downstream) {
                const auto named = r.downstream->normalized.named();
                if (down.empty()) down.assign(named.size(), {"", 0.0});
                for (std::size_t i = 0; i < named.size(); ++i) {
                    down[i].first = named[i].first;
                    down[i].second += named[i].second;
                }
            }
        }
        std::string d;
        for (const auto& [name, v] : down) d += name + " " + fmt("%.3f", v / static_cast<double>(n)) + "  ";
        out << pad(dataset, 18) << pad(model, 12) << pad(fmt("%.4f", geometric_mean(norm)), 14)
            << pad(fmt("%.4g", raw / static_cast<double>(n)), 14) << d << '\n';
    }

    if (result.comparison) {
        const auto& c = *result.comparison;
        out << "\nDeepCAE vs StackedCAE\n\n";
        out << "  geometric mean normalized MSE: deepcae " << fmt("%.4f", c.deep_geomean) << ", stacked "
            << fmt("%.4f", c.stacked_geomean) << " (ratio " << fmt("%.4f", c.ratio) << ")\n";
        out << "  cells where deepcae <= stacked: " << fmt("%.1f", 100.0 * c.deep_win_fraction) << "% of "
            << c.cells.size() << "\n";
        out << "  wall-clock training times are in timing.txt\n";
    }
    if (!result.notes.empty()) {
        out << "\nNotes\n\n";
        for (const auto& n : result.notes) out << "  " << n << '\n';
    }
    return out.str();
}

std::string timing_text(const BenchmarkResult& result) {
    std::ostringstream out;
    out << "Wall-clock training seconds (not reproducible byte for byte)\n\n";
    if (result.comparison) {
        const auto& c = *result.comparison;
        out << pad("variant", 12) << pad("mean s", 12) << pad("median s", 12) << "s/epoch\n";
        for (const auto& [name, r] : {std::pair{"deepcae", c.deep}, std::pair{"stacked", c.stacked}})
            out << pad(name, 12) << pad(fmt("%.4f", r.mean_seconds), 12) << pad(fmt("%.4f", r.median_seconds), 12)
                << fmt("%.6f", r.mean_epoch_seconds) << '\n';
        out << '\n';
    }
    out << pad("dataset", 18) << pad("model", 12) << pad("run", 6) << pad("epochs", 8) << "seconds\n";
    for (const auto& r : result.rows)
        if (r.model != "pca")
            out << pad(r.dataset, 18) << pad(r.model, 12) << pad(std::to_string(r.run), 6)
                << pad(std::to_string(r.epochs), 8) << fmt("%.4f", r.train_seconds) << '\n';
    return out.str();
}

void write_benchmark(const BenchmarkResult& result, const std::filesystem::path& dir) {
    write_file_atomic(dir / "report.csv", report_csv(result));
    write_file_atomic(dir / "summary.txt", summary_text(result));
    write_file_atomic(dir / "timing.txt", timing_text(result));
}

}  // namespace deepcae
