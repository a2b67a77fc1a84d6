// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "deepcae/experiment.hpp"
#include "deepcae/finite_diff.hpp"
#include "deepcae/kernels.hpp"
#include "deepcae/log.hpp"
#include "deepcae/penalty.hpp"
#include "test_util.hpp"

using namespace deepcae;
using deepcae::test::dim;
using deepcae::test::loop_matmul;

namespace {

constexpr double kJacobianTol = 1e-5;
constexpr double kJacobianSeconds = 30.0;
constexpr double kSpecializationTol = 1e-12;
constexpr double kGradientTol = 1e-4;
constexpr double kMonotonicitySeconds = 300.0;
constexpr double kComparisonWinFraction = 0.6;
constexpr double kComparisonSeconds = 1800.0;
constexpr double kPcaTol = 1e-8;
constexpr double kNormalizationTol = 1e-15;
constexpr double kDownstreamTol = 1e-10;

const std::filesystem::path kSource = DEEPCAE_SOURCE_DIR;

struct Outcome {
    bool pass;
    std::string detail;
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// Plain-loop tanh layers; x_0 is the input row.
struct LoopNet {
    std::vector<Matrix> w, b;

    std::vector<Matrix> forward(const Matrix& x) const {
        std::vector<Matrix> outs{x};
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Matrix& in = outs.back();
            Matrix out(in.rows(), w[i].rows());
            for (std::size_t s = 0; s < in.rows(); ++s)
                for (std::size_t r = 0; r < w[i].rows(); ++r) {
                    double z = b[i](0, r);
                    for (std::size_t c = 0; c < in.cols(); ++c) z += w[i](r, c) * in(s, c);
                    out(s, r) = std::tanh(z);
                }
            outs.push_back(out);
        }
        return outs;
    }
};

// Explicit product of diag(1 - x_i^2) W_i for one sample.
double loop_jacobian_sq(const std::vector<Matrix>& outs, const std::vector<Matrix>& w, std::size_t sample) {
    Matrix j = Matrix::identity(w.front().cols());
    for (std::size_t i = 0; i < w.size(); ++i) {
        Matrix layer = w[i];
        for (std::size_t r = 0; r < layer.rows(); ++r) {
            const double h = outs[i + 1](sample, r);
            for (std::size_t c = 0; c < layer.cols(); ++c) layer(r, c) *= 1.0 - h * h;
        }
        j = loop_matmul(layer, j);
    }
    return test::loop_sum_squares(j);
}

Outcome jacobian_oracle() {
    const auto start = std::chrono::steady_clock::now();
    Rng rng(101);
    double worst = 0.0;
    for (int c = 0; c < 200; ++c) {
        const std::size_t k = 1 + static_cast<std::size_t>(c % 4);
        std::vector<std::size_t> widths{dim(rng, 1, 8)};
        for (std::size_t i = 0; i < k; ++i) widths.push_back(dim(rng, 1, widths.back()));
        LoopNet net;
        for (std::size_t i = 0; i < k; ++i) {
            net.w.push_back(Matrix::uniform(widths[i + 1], widths[i], rng, -1.5, 1.5));
            net.b.push_back(Matrix::uniform(1, widths[i + 1], rng, -0.5, 0.5));
        }
        const Matrix x = Matrix::uniform(dim(rng, 1, 6), widths[0], rng, -1.0, 1.0);
        const auto outs = net.forward(x);
        const double analytic = deepcae_penalty(ForwardTrace{outs}, net.w).value;
        double numeric = 0.0;
        for (std::size_t s = 0; s < x.rows(); ++s) {
            const Matrix j = finite_diff_jacobian([&](const Matrix& v) { return net.forward(v).back(); }, x.row_copy(s));
            numeric += test::loop_sum_squares(j);
        }
        numeric /= static_cast<double>(x.rows());
        worst = std::max(worst, relative_error(analytic, numeric));
    }
    const double secs = seconds_since(start);
    return {worst < kJacobianTol && secs < kJacobianSeconds,
            "200 encoders, max rel err " + num(worst) + ", " + num(secs) + " s"};
}

Outcome specialization() {
    Rng rng(202);
    double worst = 0.0;
    for (int c = 0; c < 100; ++c) {
        const std::size_t dx = dim(rng, 1, 12), dh = dim(rng, 1, dx), n = dim(rng, 1, 10);
        LoopNet net{{Matrix::uniform(dh, dx, rng, -2.0, 2.0)}, {Matrix::uniform(1, dh, rng, -1.0, 1.0)}};
        const auto outs = net.forward(Matrix::uniform(n, dx, rng, -1.0, 1.0));
        const ForwardTrace trace{outs};
        const double deep = deepcae_penalty(trace, net.w).value;
        const double stacked = stacked_penalty(trace, net.w).value;
        const double closed = single_layer_penalty_tanh(outs.back(), net.w[0]).value;
        // Independent loop: mean over rows of sum_r (1 - h_r^2)^2 sum_c W_rc^2.
        double loop = 0.0;
        for (std::size_t s = 0; s < n; ++s)
            for (std::size_t r = 0; r < dh; ++r) {
                double row = 0.0;
                for (std::size_t c2 = 0; c2 < dx; ++c2) row += net.w[0](r, c2) * net.w[0](r, c2);
                const double g = 1.0 - outs.back()(s, r) * outs.back()(s, r);
                loop += g * g * row;
            }
        loop /= static_cast<double>(n);
        for (double v : {deep, stacked, closed})
            worst = std::max(worst, std::abs(v - loop) / std::max(1.0, std::abs(loop)));
    }
    return {worst <= kSpecializationTol, "100 cases, max rel diff " + num(worst)};
}

// recon + lambda * deep penalty, evaluated with loops only.
double oracle_total(const AutoencoderModel& m, const Matrix& x) {
    LoopNet enc, dec;
    for (const auto& l : m.encoder) {
        enc.w.push_back(l.weight);
        enc.b.push_back(l.bias);
    }
    for (const auto& l : m.decoder) {
        dec.w.push_back(l.weight);
        dec.b.push_back(l.bias);
    }
    const auto outs = enc.forward(x);
    const Matrix r = dec.forward(outs.back()).back();
    double recon = 0.0;
    for (std::size_t s = 0; s < x.rows(); ++s)
        for (std::size_t c = 0; c < x.cols(); ++c) recon += (r(s, c) - x(s, c)) * (r(s, c) - x(s, c));
    recon /= static_cast<double>(x.size());
    double pen = 0.0;
    for (std::size_t s = 0; s < x.rows(); ++s) pen += loop_jacobian_sq(outs, enc.w, s);
    return recon + m.penalty_weight() * pen / static_cast<double>(x.rows());
}

Outcome gradient_correctness() {
    Rng rng(303);
    double worst = 0.0;
    for (int c = 0; c < 50; ++c) {
        const auto spec = EncoderSpec::from_rate(dim(rng, 2, 7), rng.uniform(0.3, 0.9), dim(rng, 1, 3));
        auto m = init_model(spec, Variant::deepcae, rng.uniform(0.01, 1.0), rng.next());
        for (auto* layers : {&m.encoder, &m.decoder})
            for (auto& l : *layers) l.bias = Matrix::uniform(1, l.bias.cols(), rng, -0.3, 0.3);
        const Matrix x = Matrix::uniform(dim(rng, 1, 5), spec.input_dim, rng, -1.0, 1.0);

        Tape tape;
        const BoundModel bound = bind(tape, m);
        const GradientMap grads = tape.backward(record_loss(tape, m, bound, x).total);
        const auto refs = bound.parameters();
        for (std::size_t p = 0; p < refs.size(); ++p) {
            auto probe = m;
            const Matrix fd = finite_diff_gradient(
                [&](const Matrix& v) {
                    *probe.parameters()[p] = v;
                    return oracle_total(probe, x);
                },
                *m.parameters()[p]);
            worst = std::max(worst, relative_error(grads.at(refs[p].index), fd));
        }
    }
    return {worst < kGradientTol, "50 models, max rel err " + num(worst)};
}

// Rows near a curved 2-D manifold in [-1, 1]^d.
Matrix synthetic(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    const Matrix mix = Matrix::uniform(3, d, rng, -0.5, 0.5);
    Matrix x(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        const double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
        const double feats[3] = {u, v, u * v};
        for (std::size_t c = 0; c < d; ++c) {
            double s = 0.05 * rng.normal();
            for (int f = 0; f < 3; ++f) s += feats[f] * mix(static_cast<std::size_t>(f), c);
            x(r, c) = std::clamp(s, -1.0, 1.0);
        }
    }
    return x;
}

bool same_history(const TrainResult& a, const TrainResult& b) {
    if (a.history.size() != b.history.size()) return false;
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        const auto &p = a.history[i], &q = b.history[i];
        if (p.train_total != q.train_total || p.train_recon != q.train_recon || p.train_penalty != q.train_penalty ||
            p.val_recon != q.val_recon)
            return false;
    }
    return a.model.encoder == b.model.encoder && a.model.decoder == b.model.decoder;
}

Outcome lambda_zero_equivalence() {
    const Matrix data = synthetic(500, 8, 404);
    const Holdout h = holdout_split(500, 0.1, 1);
    const Matrix train = data.gather_rows(h.fit), val = data.gather_rows(h.validation);
    const auto spec = EncoderSpec::from_rate(8, 0.5, 2);
    TrainConfig cfg;
    cfg.learning_rate = 3e-3;
    cfg.lambda = 0.0;
    cfg.batch_size = 32;
    cfg.max_epochs = 40;
    cfg.seed = 17;
    const auto standard = fit(init_model(spec, Variant::standard, 0.0, 5), train, val, cfg);
    const auto deep = fit(init_model(spec, Variant::deepcae, 0.0, 5), train, val, cfg);
    const bool same = same_history(standard, deep);
    return {same, std::to_string(deep.history.size()) + " epochs on 500 rows, histories " +
                      (same ? "bitwise identical" : "differ")};
}

Outcome contraction_monotonicity() {
    const auto start = std::chrono::steady_clock::now();
    const Matrix data = synthetic(600, 8, 505);
    const Split split = train_test_split(600, 0.2, 3);
    const Matrix train_all = data.gather_rows(split.train), test = data.gather_rows(split.test);
    const Holdout h = holdout_split(train_all.rows(), 0.1, 4);
    const Matrix train = train_all.gather_rows(h.fit), val = train_all.gather_rows(h.validation);
    const auto spec = EncoderSpec::from_rate(8, 0.5, 2);

    std::vector<double> means;
    std::string detail;
    for (double lambda : {0.0, 0.01, 0.1, 1.0}) {
        std::vector<double> per_seed;
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            TrainConfig cfg;
            cfg.learning_rate = 3e-3;
            cfg.lambda = lambda;
            cfg.batch_size = 32;
            cfg.max_epochs = 150;
            cfg.seed = 100 + seed;
            const auto r = fit(init_model(spec, Variant::deepcae, lambda, 200 + seed), train, val, cfg);
            const Encoded e = encode(r.model, test);
            per_seed.push_back(deepcae_penalty(e.trace, r.model.encoder_weights()).value);
        }
        means.push_back(geometric_mean(per_seed));
        detail += (detail.empty() ? "" : ", ") + std::string("lambda ") + num(lambda) + ": " + num(means.back());
    }
    bool decreasing = true;
    for (std::size_t i = 1; i < means.size(); ++i) decreasing = decreasing && means[i] < means[i - 1];
    const double secs = seconds_since(start);
    return {decreasing && secs < kMonotonicitySeconds, "test |J|_F^2 " + detail + "; " + num(secs) + " s"};
}

Outcome deep_vs_stacked() {
    const auto start = std::chrono::steady_clock::now();
    const ExperimentConfig cfg = load_experiment(kSource / "configs" / "deepcae_vs_stacked.json");
    const BenchmarkResult r = run_benchmark(cfg, kernels::max_threads());
    const double secs = seconds_since(start);
    if (!r.comparison) return {false, "no comparison produced"};
    const auto& c = *r.comparison;
    const bool shape = cfg.datasets.size() >= 3 && cfg.runs >= 5 && cfg.num_layers == 2;
    const bool pass = shape && c.deep_win_fraction >= kComparisonWinFraction && c.ratio < 1.0 && secs < kComparisonSeconds;
    return {pass, std::to_string(cfg.datasets.size()) + " datasets x " + std::to_string(cfg.runs) +
                      " seeds, deepcae <= stacked in " + num(100.0 * c.deep_win_fraction) + "% of cells, geo-mean " +
                      num(c.deep_geomean) + " vs " + num(c.stacked_geomean) + " (ratio " + num(c.ratio) + "), " +
                      num(secs) + " s"};
}

Outcome pca_identity() {
    Rng rng(606);
    double worst = 0.0;
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 300, d = 10, m = 5;
        const Matrix x = loop_matmul(Matrix::normal(n, d, rng), Matrix::normal(d, d, rng));
        const PcaBaseline pca = pca_fit(x, m);
        Matrix cov(d, d);
        std::vector<double> mean(d);
        for (std::size_t c = 0; c < d; ++c) {
            for (std::size_t r = 0; r < n; ++r) mean[c] += x(r, c);
            mean[c] /= static_cast<double>(n);
        }
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                for (std::size_t r = 0; r < n; ++r) cov(i, j) += (x(r, i) - mean[i]) * (x(r, j) - mean[j]);
                cov(i, j) /= static_cast<double>(n);
            }
        const auto ev = test::jacobi_eigenvalues(cov);
        double discarded = 0.0;
        for (std::size_t i = m; i < d; ++i) discarded += ev[i];
        const Matrix rec = pca_reconstruct(pca, x);
        double mse = 0.0;
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) mse += (rec(r, c) - x(r, c)) * (rec(r, c) - x(r, c));
        mse /= static_cast<double>(n * d);
        worst = std::max(worst, relative_error(mse, discarded / static_cast<double>(d)));
    }
    return {worst < kPcaTol, "5 Gaussian datasets, max rel err " + num(worst)};
}

Outcome normalization() {
    const ExperimentConfig cfg = load_experiment(kSource / "configs" / "pca_only.json");
    const BenchmarkResult r = run_benchmark(cfg, 1);
    bool exact = !r.aggregates.empty();
    for (const auto& a : r.aggregates) exact = exact && a.geometric_mean == 1.0;
    for (const auto& row : r.rows) exact = exact && row.normalized_mse == 1.0;
    const std::vector<ScoreCell> sym{{"a", "m", 0, 0.25, 1.0}, {"b", "m", 0, 4.0, 1.0}};
    const double g = normalize_and_aggregate(sym, 1)[0].geometric_mean;
    const bool pass = exact && std::abs(g - 1.0) <= kNormalizationTol;
    return {pass, "baseline vs itself: " + std::string(exact ? "exactly 1.0" : "not 1.0") + " over " +
                      std::to_string(r.rows.size()) + " rows; {0.25, 4} -> " + num(g)};
}

Outcome downstream() {
    const ExperimentConfig cfg = load_experiment(kSource / "configs" / "smoke.json");
    double worst = 0.0;
    for (const auto& entry : cfg.datasets) {
        const PreparedData p = prepare(entry, read_csv(entry.path), cfg, 0);
        const MetricSet raw = evaluate_predictor(p.train, p.y_train, p.test, p.y_test, p.task);
        const DownstreamReport d = downstream_eval(p.train, p.y_train, p.test, p.y_test, raw);
        for (const auto& [name, v] : d.normalized.named()) worst = std::max(worst, std::abs(v - 1.0));
    }
    const BenchmarkResult r = run_benchmark(cfg, 1);
    std::size_t regression_rows = 0;
    bool ordered = true;
    for (const auto& row : r.rows) {
        if (!row.downstream || row.downstream->embedded.task != Task::regression) continue;
        ++regression_rows;
        ordered = ordered && row.downstream->embedded.rmse >= row.downstream->embedded.mae &&
                  row.downstream->raw.rmse >= row.downstream->raw.mae;
    }
    return {worst <= kDownstreamTol && ordered && regression_rows > 0,
            "raw-as-embedding max |normalized - 1| " + num(worst) + "; RMSE >= MAE on " +
                std::to_string(regression_rows) + " regression rows: " + (ordered ? "yes" : "no")};
}

Outcome training_time() {
    const ExperimentConfig cfg = load_experiment(kSource / "configs" / "timing_digits.json");
    const BenchmarkResult r = run_benchmark(cfg, 1);
    if (!r.comparison) return {false, "no comparison produced"};
    const auto& c = *r.comparison;
    std::size_t dx = 0;
    for (const auto& row : r.rows) dx = std::max(dx, row.input_dim);
    const bool reported = c.deep.mean_seconds > 0 && c.deep.median_seconds > 0 && c.stacked.mean_seconds > 0 &&
                          c.stacked.median_seconds > 0;
    const bool pass = reported && dx >= 64 && c.deep.mean_epoch_seconds > c.stacked.mean_epoch_seconds;
    return {pass, "d_x " + std::to_string(dx) + ": deepcae mean/median " + num(c.deep.mean_seconds) + "/" +
                      num(c.deep.median_seconds) + " s (" + num(c.deep.mean_epoch_seconds) + " s/epoch), stacked " +
                      num(c.stacked.mean_seconds) + "/" + num(c.stacked.median_seconds) + " s (" +
                      num(c.stacked.mean_epoch_seconds) + " s/epoch)"};
}

}  // namespace

int main() {
    deepcae::log::set_level(deepcae::log::Level::warn);
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"jacobian-oracle", jacobian_oracle},
        {"single-layer-specialization", specialization},
        {"gradient-correctness", gradient_correctness},
        {"lambda-zero-equivalence", lambda_zero_equivalence},
        {"contraction-monotonicity", contraction_monotonicity},
        {"deepcae-vs-stacked", deep_vs_stacked},
        {"pca-identity", pca_identity},
        {"normalization-protocol", normalization},
        {"downstream-protocol", downstream},
        {"training-time-accounting", training_time},
    };
    int failures = 0;
    for (const auto& [name, check] : criteria) {
        Outcome o{false, ""};
        try {
            o = check();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        if (!o.pass) ++failures;
        std::printf("%s  %-28s %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
    return failures == 0 ? 0 : 1;
}
