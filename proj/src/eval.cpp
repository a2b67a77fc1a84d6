#include "deepcae/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include "deepcae/errors.hpp"
#include "deepcae/random.hpp"

namespace deepcae {

namespace {

using EMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVector = Eigen::VectorXd;

EMatrix to_eigen(const Matrix& m) { return Eigen::Map<const EMatrix>(m.data().data(), m.rows(), m.cols()); }

Matrix from_eigen(const EMatrix& m) {
    Matrix out(m.rows(), m.cols());
    std::copy(m.data(), m.data() + m.size(), out.data().begin());
    return out;
}

double mse(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "reconstruction score");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        sum += d * d;
    }
    const double out = sum / static_cast<double>(a.size());
    if (!std::isfinite(out)) throw NumericError("reconstruction score is not finite");
    return out;
}

// Type-7 sample quantile of sorted values.
double quantile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

template <class Key, class Value>
Value& ordered_slot(std::vector<std::pair<Key, Value>>& v, const Key& k) {
    for (auto& [key, value] : v)
        if (key == k) return value;
    return v.emplace_back(k, Value{}).second;
}

}  // namespace

double reconstruction_score(const AutoencoderModel& model, const Matrix& x_test) {
    return mse(x_test, reconstruct(model, x_test));
}

double reconstruction_score(const PcaBaseline& pca, const Matrix& x_test) {
    return mse(x_test, pca_reconstruct(pca, x_test));
}

double geometric_mean(std::span<const double> values) {
    if (values.empty()) throw NumericError("geometric mean of no values");
    double log_sum = 0.0;
    for (double v : values) {
        if (!(v > 0.0) || !std::isfinite(v)) throw NumericError("geometric mean needs positive finite values");
        log_sum += std::log(v);
    }
    return std::exp(log_sum / static_cast<double>(values.size()));
}

std::vector<Aggregate> normalize_and_aggregate(const std::vector<ScoreCell>& cells, std::uint64_t seed,
                                               std::size_t resamples) {
    // model -> dataset -> normalized scores, in first-appearance order
    std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::vector<double>>>>> grouped;
    for (const auto& c : cells) {
        if (!(c.baseline > 0.0) || !std::isfinite(c.baseline))
            throw ConfigError("baseline score for dataset '" + c.dataset + "' is not positive");
        ordered_slot(ordered_slot(grouped, c.model), c.dataset).push_back(c.normalized());
    }
    std::vector<Aggregate> out;
    for (const auto& [model, datasets] : grouped) {
        std::vector<double> per_dataset;
        std::size_t count = 0;
        for (const auto& [name, scores] : datasets) {
            per_dataset.push_back(geometric_mean(scores));
            count += scores.size();
        }
        Aggregate a{model, geometric_mean(per_dataset), 0.0, 0.0, per_dataset.size(), count};
        Rng rng(seed);
        std::vector<double> boot(resamples), draw(per_dataset.size());
        for (auto& b : boot) {
            for (auto& d : draw) d = per_dataset[rng.below(per_dataset.size())];
            b = geometric_mean(draw);
        }
        if (boot.empty()) {
            a.ci_low = a.ci_high = a.geometric_mean;
        } else {
            std::sort(boot.begin(), boot.end());
            a.ci_low = quantile(boot, 0.025);
            a.ci_high = quantile(boot, 0.975);
        }
        out.push_back(a);
    }
    return out;
}

std::vector<std::pair<std::string, double>> MetricSet::named() const {
    if (task == Task::classification)
        return {{"accuracy", accuracy}, {"f1", f1}, {"precision", precision}, {"recall", recall}};
    return {{"mae", mae}, {"rmse", rmse}};
}

LinearModel fit_ridge(const Matrix& x, std::span<const double> y, double l2) {
    if (y.size() != x.rows()) throw ShapeError("ridge: label count does not match rows");
    if (!(l2 > 0.0)) throw ConfigError("ridge penalty must be positive");
    const EMatrix a = to_eigen(x);
    const Eigen::RowVectorXd mean = a.colwise().mean();
    const EMatrix centred = a.rowwise() - mean;
    const EVector target = Eigen::Map<const EVector>(y.data(), static_cast<Eigen::Index>(y.size()));
    const double y_mean = target.mean();
    const double n = static_cast<double>(x.rows());
    EMatrix gram = centred.transpose() * centred / n;
    gram.diagonal().array() += l2;
    const EVector w = gram.ldlt().solve(centred.transpose() * (target.array() - y_mean).matrix() / n);

    LinearModel m{Matrix(x.cols() + 1, 1), 1};
    for (std::size_t j = 0; j < x.cols(); ++j) m.weights(j, 0) = w(static_cast<Eigen::Index>(j));
    m.weights(x.cols(), 0) = y_mean - mean.dot(w);
    return m;
}

LinearModel fit_logistic(const Matrix& x, std::span<const double> labels, std::size_t classes, double l2,
                         double tolerance) {
    if (labels.size() != x.rows()) throw ShapeError("logistic: label count does not match rows");
    if (!(l2 > 0.0)) throw ConfigError("logistic penalty must be positive");
    std::set<double> present(labels.begin(), labels.end());
    if (present.size() < 2) throw ConfigError("classification needs at least two classes in the training target");
    for (double l : present)
        if (l < 0 || l >= static_cast<double>(classes) || l != std::floor(l)) throw ConfigError("label out of range");

    const auto n = static_cast<Eigen::Index>(x.rows());
    const auto d = static_cast<Eigen::Index>(x.cols()) + 1;
    const auto c = static_cast<Eigen::Index>(classes);
    EMatrix xa(n, d);
    xa.leftCols(d - 1) = to_eigen(x);
    xa.col(d - 1).setOnes();
    EMatrix onehot = EMatrix::Zero(n, c);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, static_cast<Eigen::Index>(labels[static_cast<std::size_t>(i)])) = 1.0;

    auto probabilities = [&](const EMatrix& w, double* objective) {
        EMatrix z = xa * w;
        double nll = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double top = z.row(i).maxCoeff();
            z.row(i).array() = (z.row(i).array() - top).exp();
            const double total = z.row(i).sum();
            z.row(i) /= total;
            nll -= std::log(std::max(z.row(i).dot(onehot.row(i)), 1e-300));
        }
        if (objective) *objective = nll / static_cast<double>(n) + 0.5 * l2 * w.squaredNorm();
        return z;
    };

    EMatrix w = EMatrix::Zero(d, c);
    double f = 0.0;
    EMatrix p = probabilities(w, &f);
    LinearModel out{Matrix(static_cast<std::size_t>(d), classes), 0};
    for (std::size_t it = 0; it < 100; ++it) {
        const EMatrix grad = xa.transpose() * (p - onehot) / static_cast<double>(n) + l2 * w;
        out.iterations = it;
        if (grad.cwiseAbs().maxCoeff() < tolerance) break;

        // Class-blocked Hessian of the mean cross-entropy.
        Eigen::MatrixXd hess(d * c, d * c);
        for (Eigen::Index a = 0; a < c; ++a) {
            for (Eigen::Index b = a; b < c; ++b) {
                EVector weight = -p.col(a).cwiseProduct(p.col(b));
                if (a == b) weight += p.col(a);
                const EMatrix block =
                    xa.transpose() * (xa.array().colwise() * weight.array()).matrix() / static_cast<double>(n);
                hess.block(a * d, b * d, d, d) = block;
                if (a != b) hess.block(b * d, a * d, d, d) = block.transpose();
            }
        }
        hess.diagonal().array() += l2;
        EVector g(d * c);
        for (Eigen::Index a = 0; a < c; ++a) g.segment(a * d, d) = grad.col(a);
        const EVector step = hess.ldlt().solve(g);
        EMatrix delta(d, c);
        for (Eigen::Index a = 0; a < c; ++a) delta.col(a) = step.segment(a * d, d);

        const double slope = g.dot(step);
        double t = 1.0, f_new = 0.0;
        EMatrix p_new;
        for (int k = 0; k < 50; ++k, t *= 0.5) {
            p_new = probabilities(w - t * delta, &f_new);
            if (f_new <= f - 1e-4 * t * slope) break;
        }
        w -= t * delta;
        p = std::move(p_new);
        f = f_new;
        out.iterations = it + 1;
    }
    out.weights = from_eigen(w);
    return out;
}

Matrix linear_scores(const LinearModel& model, const Matrix& x) {
    if (model.weights.rows() != x.cols() + 1) throw ShapeError("linear model expects " +
                                                               std::to_string(model.weights.rows() - 1) + " features");
    const EMatrix w = to_eigen(model.weights);
    EMatrix s = to_eigen(x) * w.topRows(w.rows() - 1);
    s.rowwise() += w.row(w.rows() - 1);
    return from_eigen(s);
}

MetricSet classification_metrics(std::span<const double> truth, std::span<const double> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) throw ShapeError("metric inputs must be equal, non-empty");
    std::map<double, std::size_t> support, tp, predicted_count;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ++support[truth[i]];
        ++predicted_count[predicted[i]];
        if (truth[i] == predicted[i]) {
            ++correct;
            ++tp[truth[i]];
        }
    }
    MetricSet m;
    m.task = Task::classification;
    const double n = static_cast<double>(truth.size());
    m.accuracy = static_cast<double>(correct) / n;
    for (const auto& [label, count] : support) {
        const double hits = static_cast<double>(tp[label]);
        const double pred = static_cast<double>(predicted_count[label]);
        const double precision = pred > 0 ? hits / pred : 0.0;
        const double recall = hits / static_cast<double>(count);
        const double f1 = precision + recall > 0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        const double weight = static_cast<double>(count) / n;
        m.precision += weight * precision;
        m.recall += weight * recall;
        m.f1 += weight * f1;
    }
    return m;
}

MetricSet regression_metrics(std::span<const double> truth, std::span<const double> predicted) {
    if (truth.size() != predicted.size() || truth.empty()) throw ShapeError("metric inputs must be equal, non-empty");
    MetricSet m;
    m.task = Task::regression;
    double abs_sum = 0.0, sq_sum = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double e = predicted[i] - truth[i];
        abs_sum += std::abs(e);
        sq_sum += e * e;
    }
    const double n = static_cast<double>(truth.size());
    m.mae = abs_sum / n;
    m.rmse = std::sqrt(sq_sum / n);
    return m;
}

MetricSet evaluate_predictor(const Matrix& x_train, std::span<const double> y_train, const Matrix& x_test,
                             std::span<const double> y_test, Task task) {
    if (task == Task::regression) {
        const Matrix s = linear_scores(fit_ridge(x_train, y_train), x_test);
        return regression_metrics(y_test, s.data());
    }
    std::size_t classes = 0;
    for (double y : y_train) classes = std::max(classes, static_cast<std::size_t>(y) + 1);
    const Matrix s = linear_scores(fit_logistic(x_train, y_train, classes), x_test);
    std::vector<double> pred(s.rows());
    for (std::size_t i = 0; i < s.rows(); ++i) {
        const auto row = s.row(i);
        pred[i] = static_cast<double>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return classification_metrics(y_test, pred);
}

DownstreamReport downstream_eval(const Matrix& emb_train, std::span<const double> y_train, const Matrix& emb_test,
                                 std::span<const double> y_test, const MetricSet& raw) {
    DownstreamReport r{evaluate_predictor(emb_train, y_train, emb_test, y_test, raw.task), raw, raw};
    auto ratio = [](double a, double b) { return a == 0.0 && b == 0.0 ? 1.0 : a / b; };
    r.normalized.accuracy = ratio(r.embedded.accuracy, raw.accuracy);
    r.normalized.f1 = ratio(r.embedded.f1, raw.f1);
    r.normalized.precision = ratio(r.embedded.precision, raw.precision);
    r.normalized.recall = ratio(r.embedded.recall, raw.recall);
    r.normalized.mae = ratio(r.embedded.mae, raw.mae);
    r.normalized.rmse = ratio(r.embedded.rmse, raw.rmse);
    return r;
}

namespace {

double dataset_geomean(const std::vector<RunRecord>& runs) {
    std::map<std::string, std::vector<double>> by_dataset;
    for (const auto& r : runs) by_dataset[r.dataset].push_back(r.normalized_mse);
    std::vector<double> per;
    for (const auto& [name, v] : by_dataset) per.push_back(geometric_mean(v));
    return geometric_mean(per);
}

RuntimeSummary runtime(const std::vector<RunRecord>& runs) {
    std::vector<double> secs;
    double total = 0.0;
    std::size_t epochs = 0;
    for (const auto& r : runs) {
        secs.push_back(r.train_seconds);
        total += r.train_seconds;
        epochs += r.epochs;
    }
    std::sort(secs.begin(), secs.end());
    return {total / static_cast<double>(secs.size()), quantile(secs, 0.5),
            epochs ? total / static_cast<double>(epochs) : 0.0};
}

}  // namespace

ComparisonReport compare_deep_vs_stacked(const std::vector<RunRecord>& deep, const std::vector<RunRecord>& stacked) {
    if (deep.empty()) throw ConfigError("comparison needs at least one run");
    using Key = std::pair<std::string, std::uint64_t>;
    auto index = [](const std::vector<RunRecord>& runs, const char* what) {
        std::map<Key, RunRecord> out;
        for (const auto& r : runs)
            if (!out.emplace(Key{r.dataset, r.run}, r).second)
                throw ConfigError(std::string("duplicate ") + what + " run for dataset '" + r.dataset + "'");
        return out;
    };
    const auto d = index(deep, "deepcae"), s = index(stacked, "stacked");
    if (d.size() != s.size() || !std::equal(d.begin(), d.end(), s.begin(), [](const auto& a, const auto& b) { return a.first == b.first; }))
        throw ConfigError("deepcae and stacked runs cover different (dataset, seed) sets");

    ComparisonReport r;
    std::size_t wins = 0;
    for (auto it = d.begin(), jt = s.begin(); it != d.end(); ++it, ++jt) {
        r.cells.emplace_back(it->second, jt->second);
        if (it->second.normalized_mse <= jt->second.normalized_mse) ++wins;
    }
    r.deep_geomean = dataset_geomean(deep);
    r.stacked_geomean = dataset_geomean(stacked);
    r.ratio = r.deep_geomean / r.stacked_geomean;
    r.deep_win_fraction = static_cast<double>(wins) / static_cast<double>(r.cells.size());
    r.deep = runtime(deep);
    r.stacked = runtime(stacked);
    return r;
}

}  // namespace deepcae
