#include <cstdio>
#include <sstream>

#include "CLI11.hpp"
#include "deepcae/errors.hpp"
#include "deepcae/experiment.hpp"
#include "deepcae/gradcheck.hpp"
#include "deepcae/io.hpp"
#include "deepcae/log.hpp"

using namespace deepcae;

namespace {

enum Exit : int { ok = 0, other = 1, io = 2, config = 3, diverged = 4, oracle = 5 };

struct DataFlags {
    std::string config_path;
    std::string dataset;
    std::string data;
    std::string target;
    std::string task = "regression";
    std::vector<std::string> overrides;
};

void add_data_flags(CLI::App* cmd, DataFlags& f, bool with_config) {
    if (with_config) {
        cmd->add_option("--config", f.config_path, "Experiment config (JSON)");
        cmd->add_option("--dataset", f.dataset, "Dataset name within the config");
    }
    cmd->add_option("--data", f.data, "CSV file with a header row");
    cmd->add_option("--target", f.target, "Target column (excluded from features)");
    cmd->add_option("--task", f.task, "classification or regression")->check(CLI::IsMember({"classification", "regression"}));
    cmd->add_option("--override", f.overrides, "Schema override name=kind[:drop_row|:impute]");
}

std::string features_csv(const PreprocessPlan& plan, const Transformed& t) {
    std::ostringstream out;
    out << "row_id";
    for (const auto& n : plan.feature_names()) out << ',' << csv_field(n);
    out << '\n';
    for (std::size_t r = 0; r < t.features.rows(); ++r) {
        out << t.row_ids[r];
        for (double v : t.features.row(r)) out << ',' << format_double(v);
        out << '\n';
    }
    return out.str();
}

int cmd_preprocess(const DataFlags& f, const std::string& plan_out, const std::string& matrix_out) {
    if (f.data.empty()) throw ConfigError("preprocess needs --data");
    const CsvTable table = read_csv(f.data);
    DatasetEntry entry{"data", f.data, f.target, parse_task(f.task), f.overrides};
    const auto plan = fit_plan(table, dataset_schema(entry, table), entry.task);
    const Transformed t = transform(plan, table);
    save_plan(plan, plan_out);
    if (!matrix_out.empty()) write_file_atomic(matrix_out, features_csv(plan, t));
    const std::size_t inputs = table.header.size() - (f.target.empty() ? 0 : 1);
    std::fprintf(stderr, "%s: %zu input columns -> %zu features (%zu of %zu rows kept)\n", f.data.c_str(), inputs,
                 plan.feature_dim(), t.features.rows(), table.rows.size());
    return ok;
}

struct TrainFlags {
    std::string variant;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out;
    std::optional<double> lr, lambda, rate;
    std::optional<std::size_t> layers, epochs, batch;
};

int cmd_train(const DataFlags& f, const TrainFlags& t) {
    ExperimentConfig cfg;
    DatasetEntry entry;
    if (!f.config_path.empty()) {
        cfg = load_experiment(f.config_path);
        if (f.dataset.empty()) throw ConfigError("--config needs --dataset");
        entry = cfg.dataset(f.dataset);
    } else {
        if (f.data.empty()) throw ConfigError("train needs --config and --dataset, or --data");
        entry = {std::filesystem::path(f.data).stem().string(), f.data, f.target, parse_task(f.task), f.overrides};
        cfg.datasets = {entry};
    }
    if (t.seed_set) cfg.seed = t.seed;
    if (t.lr) cfg.training.learning_rate = *t.lr;
    if (t.lambda) cfg.training.lambda = *t.lambda;
    if (t.rate) cfg.compression_rate = *t.rate;
    if (t.layers) cfg.num_layers = *t.layers;
    if (t.epochs) cfg.training.max_epochs = *t.epochs;
    if (t.batch) cfg.training.batch_size = *t.batch;
    const Variant variant = parse_variant(t.variant);
    if (variant == Variant::standard) cfg.training.lambda = 0.0;
    cfg.training.seed = cell_seed(cfg.seed, "shuffle", entry.name, 0);
    cfg.validate();

    const CsvTable table = read_csv(entry.path);
    const PreparedData p = prepare(entry, table, cfg, 0);
    const auto spec = EncoderSpec::from_rate(p.train.cols(), cfg.compression_rate, cfg.num_layers);
    log::info(entry.name + ": " + std::to_string(p.train.cols()) + " features, widths " + [&] {
        std::string w;
        for (auto v : spec.widths()) w += (w.empty() ? "" : "-") + std::to_string(v);
        return w;
    }());
    const TrainResult r = fit(init_model(spec, variant, cfg.training.lambda, cell_seed(cfg.seed, "init", entry.name, 0)),
                              p.fit, p.validation, cfg.training);

    const std::filesystem::path out = t.out;
    save_model(r.model, out / "model.json");
    save_plan(p.plan, out / "plan.json");
    std::ostringstream hist;
    hist << "epoch,train_total,train_recon,train_penalty,val_recon\n";
    for (std::size_t e = 0; e < r.history.size(); ++e) {
        const auto& h = r.history[e];
        hist << e + 1 << ',' << format_double(h.train_total) << ',' << format_double(h.train_recon) << ','
             << format_double(h.train_penalty) << ',' << format_double(h.val_recon) << '\n';
    }
    write_file_atomic(out / "history.csv", hist.str());
    std::ostringstream res;
    res << "{\n  \"variant\": \"" << to_string(variant) << "\",\n  \"lambda\": " << format_double(r.model.penalty_weight())
        << ",\n  \"learning_rate\": " << format_double(cfg.training.learning_rate)
        << ",\n  \"stopped_epoch\": " << r.stopped_epoch << ",\n  \"best_epoch\": " << r.best_epoch
        << ",\n  \"best_val_recon\": " << format_double(r.best_val_recon)
        << ",\n  \"test_recon\": " << format_double(reconstruction_score(r.model, p.test)) << "\n}\n";
    write_file_atomic(out / "result.json", res.str());
    std::fprintf(stderr, "trained %s for %zu epochs in %.2f s; best validation MSE %.6g at epoch %zu\n",
                 std::string(to_string(variant)).c_str(), r.stopped_epoch, r.wall_seconds, r.best_val_recon, r.best_epoch);
    return ok;
}

int cmd_embed(const std::string& model_path, const std::string& plan_path, const std::string& data,
              const std::string& out_path) {
    const AutoencoderModel model = load_model(model_path);
    const PreprocessPlan plan = load_plan(plan_path);
    if (plan.feature_dim() != model.spec.input_dim)
        throw ConfigError("plan yields " + std::to_string(plan.feature_dim()) + " features but the model expects " +
                          std::to_string(model.spec.input_dim));
    const CsvTable table = read_csv(data);
    const Transformed t = transform(plan, table);
    const Matrix z = encode(model, t.features).embedding;

    std::optional<std::size_t> target;
    if (plan.target())
        for (std::size_t i = 0; i < table.header.size(); ++i)
            if (table.header[i] == plan.target()->name) target = i;
    std::ostringstream out;
    out << "row_id";
    for (std::size_t j = 0; j < z.cols(); ++j) out << ",e" << j;
    if (target) out << ',' << csv_field(plan.target()->name);
    out << '\n';
    for (std::size_t r = 0; r < z.rows(); ++r) {
        out << t.row_ids[r];
        for (double v : z.row(r)) out << ',' << format_double(v);
        if (target) out << ',' << csv_field(table.rows[t.row_ids[r]][*target]);
        out << '\n';
    }
    write_file_atomic(out_path, out.str());
    std::fprintf(stderr, "embedded %zu rows into %zu dimensions\n", z.rows(), z.cols());
    return ok;
}

int cmd_benchmark(const std::string& config_path, int jobs, const std::string& out, std::optional<std::uint64_t> seed) {
    ExperimentConfig cfg = load_experiment(config_path);
    if (seed) cfg.seed = *seed;
    if (!out.empty()) cfg.output_dir = out;
    const BenchmarkResult r = run_benchmark(cfg, jobs);
    write_benchmark(r, cfg.output_dir);
    std::fprintf(stderr, "%s", summary_text(r).c_str());
    std::fprintf(stderr, "wrote %zu report rows to %s\n", r.rows.size(), (cfg.output_dir / "report.csv").c_str());
    return ok;
}

int cmd_gradcheck(const GradcheckOptions& options) {
    const GradcheckReport r = run_gradcheck(options);
    for (const auto& l : r.lines) std::printf("%s\n", l.c_str());
    std::fflush(stdout);
    if (!r.passed) throw OracleError("gradient check failed");
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Contractive autoencoders with a full-encoder Jacobian penalty"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "Only print warnings and errors");

    DataFlags pre_flags;
    std::string plan_out, matrix_out;
    auto* pre = app.add_subcommand("preprocess", "Fit a preprocessing plan and write the feature matrix");
    add_data_flags(pre, pre_flags, false);
    pre->add_option("--plan", plan_out, "Output plan file")->required();
    pre->add_option("--matrix", matrix_out, "Output feature matrix (CSV)");

    DataFlags train_flags;
    TrainFlags tf;
    auto* train = app.add_subcommand("train", "Train one autoencoder and write model, plan and history");
    add_data_flags(train, train_flags, true);
    train->add_option("--variant", tf.variant, "standard, deepcae or stacked")->required();
    train->add_option("--seed", tf.seed, "Experiment seed")->each([&](const std::string&) { tf.seed_set = true; });
    train->add_option("--out", tf.out, "Output directory")->required();
    train->add_option("--lr", tf.lr, "Learning rate");
    train->add_option("--lambda", tf.lambda, "Penalty weight");
    train->add_option("--rate", tf.rate, "Compression rate");
    train->add_option("--layers", tf.layers, "Encoder layers");
    train->add_option("--epochs", tf.epochs, "Maximum epochs");
    train->add_option("--batch", tf.batch, "Batch size");

    std::string model_path, plan_path, embed_data, embed_out;
    auto* embed = app.add_subcommand("embed", "Embed a CSV with a trained model and its plan");
    embed->add_option("--model", model_path, "Model file")->required();
    embed->add_option("--plan", plan_path, "Plan file")->required();
    embed->add_option("--data", embed_data, "CSV to embed")->required();
    embed->add_option("--out", embed_out, "Output CSV")->required();

    std::string bench_config, bench_out;
    int jobs = 1;
    std::optional<std::uint64_t> bench_seed;
    auto* bench = app.add_subcommand("benchmark", "Run an experiment config and write the report");
    bench->add_option("--config", bench_config, "Experiment config (JSON)")->required();
    bench->add_option("--jobs", jobs, "Concurrent training jobs")->check(CLI::PositiveNumber);
    bench->add_option("--out", bench_out, "Output directory (overrides the config)");
    bench->add_option("--seed", bench_seed, "Experiment seed (overrides the config)");

    GradcheckOptions gc;
    bool corrupt = false;
    auto* grad = app.add_subcommand("gradcheck", "Check the penalty and its gradients against finite differences");
    grad->add_option("--dims", gc.input_dim, "Input dimension")->check(CLI::PositiveNumber);
    grad->add_option("--layers", gc.num_layers, "Encoder layers")->check(CLI::PositiveNumber);
    grad->add_option("--seed", gc.seed, "Seed");
    grad->add_option("--cases", gc.cases, "Random models to check")->check(CLI::PositiveNumber);
    grad->add_flag("--corrupt-penalty", corrupt, "Perturb the analytic penalty (tests the failure path)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return config;
    }
    log::set_level(quiet ? log::Level::warn : log::Level::info);

    try {
        if (*pre) return cmd_preprocess(pre_flags, plan_out, matrix_out);
        if (*train) return cmd_train(train_flags, tf);
        if (*embed) return cmd_embed(model_path, plan_path, embed_data, embed_out);
        if (*bench) return cmd_benchmark(bench_config, jobs, bench_out, bench_seed);
        if (*grad) {
            if (corrupt) gc.penalty_corruption = 1.001;
            return cmd_gradcheck(gc);
        }
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return io;
    } catch (const DivergedError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return diverged;
    } catch (const OracleError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return oracle;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return config;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return config;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return diverged;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return other;
    }
    return other;
}
