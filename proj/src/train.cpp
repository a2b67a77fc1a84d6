#include "deepcae/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <numeric>
#include <optional>

#include "deepcae/errors.hpp"
#include "deepcae/io.hpp"
#include "deepcae/log.hpp"
#include "deepcae/random.hpp"

namespace deepcae {

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be >= 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("lambda must be >= 0");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (max_epochs == 0) throw ConfigError("max epochs must be positive");
    if (early_stop_window == 0) throw ConfigError("early-stop window must be positive");
    if (!(early_stop_min_progress >= 0.0)) throw ConfigError("early-stop progress must be >= 0");
}

Adam::Adam(double learning_rate, const std::vector<const Matrix*>& shapes) : lr_(learning_rate) {
    for (const Matrix* p : shapes) {
        m_.emplace_back(p->rows(), p->cols());
        v_.emplace_back(p->rows(), p->cols());
    }
}

void Adam::step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads) {
    if (params.size() != m_.size() || grads.size() != m_.size()) throw ShapeError("Adam: parameter count changed");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        require_same_shape(*params[i], *grads[i], "Adam");
        auto p = params[i]->data();
        auto g = grads[i]->data();
        auto m = m_[i].data();
        auto v = v_[i].data();
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            p[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + epsilon);
        }
    }
}

bool should_stop(const std::vector<double>& val_history, std::size_t window, double min_progress) {
    if (val_history.size() <= window) return false;
    const auto split = val_history.end() - static_cast<std::ptrdiff_t>(window);
    const double before = *std::min_element(val_history.begin(), split);
    const double recent = std::min(before, *std::min_element(split, val_history.end()));
    if (before <= 0.0) return true;
    return (before - recent) < min_progress * before;
}

namespace {

std::vector<const Matrix*> const_view(const AutoencoderModel& m) { return m.parameters(); }

AutoencoderModel with_lambda(AutoencoderModel model, const TrainConfig& config) {
    config.validate();
    if (config.lambda > 0.0 && config.lambda < kLambdaFloor && model.variant != Variant::standard)
        log::warn("lambda " + format_double(config.lambda) + " is below the floor; using " + format_double(kLambdaFloor));
    model.lambda = config.lambda;
    return model;
}

}  // namespace

Trainer::Trainer(AutoencoderModel model, const Matrix& train, const Matrix& val, TrainConfig config)
    : model_(with_lambda(std::move(model), config)),
      best_model_(model_),
      train_(&train),
      val_(&val),
      config_(config),
      adam_(config.learning_rate, const_view(model_)),
      rng_(config.seed) {
    if (train.cols() != model_.spec.input_dim || val.cols() != model_.spec.input_dim)
        throw ShapeError("training data has " + std::to_string(train.cols()) + " columns, validation " +
                         std::to_string(val.cols()) + ", model expects " + std::to_string(model_.spec.input_dim));
    best_val_ = reconstruction_mse(model_, val);
    if (!std::isfinite(best_val_)) throw DivergedError(0, 0.0, "initial validation loss is not finite");
}

void Trainer::epoch() {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t epoch_no = history_.size() + 1;
    const std::size_t n = train_->rows();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng_.shuffle(order);

    EpochRecord rec;
    const double lambda = model_.penalty_weight();
    for (std::size_t begin = 0; begin < n; begin += config_.batch_size) {
        const std::size_t end = std::min(n, begin + config_.batch_size);
        const Matrix batch = train_->gather_rows(std::span(order).subspan(begin, end - begin));
        Tape tape;
        const BoundModel bound = bind(tape, model_);
        const LossNodes nodes = record_loss(tape, model_, bound, batch, config_.exec);
        const double total = tape.value(nodes.total).item();
        const double recon = tape.value(nodes.recon).item();
        const double penalty = tape.value(nodes.penalty).item();
        if (!std::isfinite(total))
            throw DivergedError(epoch_no, lambda * penalty,
                                "non-finite loss (recon " + format_double(recon) + ", penalty " + format_double(penalty) + ")");
        const GradientMap grads = tape.backward(nodes.total);
        std::vector<const Matrix*> g;
        for (const VarRef& p : bound.parameters()) g.push_back(&grads.at(p.index));
        adam_.step(model_.parameters(), g);

        const double w = static_cast<double>(end - begin) / static_cast<double>(n);
        rec.train_total += w * total;
        rec.train_recon += w * recon;
        rec.train_penalty += w * penalty;
    }
    for (const Matrix* p : const_view(model_))
        if (!p->all_finite()) throw DivergedError(epoch_no, lambda * rec.train_penalty, "non-finite parameters");

    rec.val_recon = reconstruction_mse(model_, *val_);
    if (!std::isfinite(rec.val_recon)) throw DivergedError(epoch_no, lambda * rec.train_penalty, "non-finite validation loss");
    if (rec.val_recon < best_val_) {
        best_val_ = rec.val_recon;
        best_model_ = model_;
        best_epoch_ = epoch_no;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    seconds_ += rec.seconds;
    history_.push_back(rec);
    val_history_.push_back(rec.val_recon);
    if (history_.size() >= config_.max_epochs ||
        should_stop(val_history_, config_.early_stop_window, config_.early_stop_min_progress))
        stopped_ = true;
}

std::size_t Trainer::run(std::size_t epochs) {
    std::size_t ran = 0;
    while (ran < epochs && !stopped_) {
        epoch();
        ++ran;
    }
    return ran;
}

TrainResult Trainer::result() const {
    return {best_model_, history_, history_.size(), best_epoch_, best_val_, seconds_};
}

TrainResult fit(AutoencoderModel model, const Matrix& train, const Matrix& val, const TrainConfig& config) {
    Trainer t(std::move(model), train, val, config);
    t.run_to_completion();
    return t.result();
}

Holdout holdout_split(std::size_t n, double fraction, std::uint64_t seed) {
    if (n < 2) throw ConfigError("need at least two rows to hold out a validation set");
    if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("validation fraction must be in (0, 1)");
    const std::size_t n_val = std::clamp<std::size_t>(round_half_up(static_cast<double>(n) * fraction), 1, n - 1);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    rng.shuffle(order);
    Holdout h{{order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end()},
              {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val)}};
    std::sort(h.fit.begin(), h.fit.end());
    std::sort(h.validation.begin(), h.validation.end());
    return h;
}

std::vector<TrainConfig> expand_grid(const SearchSpace& space, const TrainConfig& base) {
    if (space.learning_rates.empty() || space.lambdas.empty()) throw ConfigError("search space is empty");
    std::vector<TrainConfig> out;
    for (double lr : space.learning_rates) {
        for (double lambda : space.lambdas) {
            TrainConfig c = base;
            c.learning_rate = lr;
            c.lambda = lambda;
            c.validate();
            out.push_back(c);
        }
    }
    return out;
}

SearchResult successive_halving(const AutoencoderModel& initial, const Matrix& train, const Matrix& val,
                                const std::vector<TrainConfig>& configs, const SearchOptions& options) {
    if (configs.empty()) throw ConfigError("search space is empty");
    if (options.rungs == 0 || options.epochs_per_rung == 0 || options.eta < 2)
        throw ConfigError("successive halving needs rungs >= 1, epochs per rung >= 1 and eta >= 2");

    SearchResult res;
    std::vector<std::unique_ptr<Trainer>> trainers(configs.size());
    for (const auto& c : configs) res.candidates.push_back({c, {}, {}});

    std::vector<std::size_t> alive(configs.size());
    std::iota(alive.begin(), alive.end(), std::size_t{0});
    for (std::size_t rung = 0; rung < options.rungs; ++rung) {
        res.rung_sizes.push_back(alive.size());
        const auto count = static_cast<std::ptrdiff_t>(alive.size());
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, options.jobs))
        for (std::ptrdiff_t j = 0; j < count; ++j) {
            const std::size_t i = alive[static_cast<std::size_t>(j)];
            CandidateOutcome& out = res.candidates[i];
            try {
                if (!trainers[i]) trainers[i] = std::make_unique<Trainer>(initial, train, val, configs[i]);
                trainers[i]->run(options.epochs_per_rung);
                out.rung_scores.push_back(trainers[i]->best_val_recon());
            } catch (const std::exception& e) {
                out.failure = e.what();
                trainers[i].reset();
            }
        }

        std::vector<std::size_t> ok;
        for (std::size_t i : alive)
            if (res.candidates[i].failure.empty()) ok.push_back(i);
        if (ok.empty()) {
            std::string detail;
            for (std::size_t i : alive)
                detail += "\n  config " + std::to_string(i) + " (lr " + format_double(configs[i].learning_rate) +
                          ", lambda " + format_double(configs[i].lambda) + "): " + res.candidates[i].failure;
            throw DivergedError(0, 0.0, "every search candidate failed:" + detail);
        }
        std::sort(ok.begin(), ok.end(), [&](std::size_t a, std::size_t b) {
            const double sa = res.candidates[a].rung_scores.back(), sb = res.candidates[b].rung_scores.back();
            if (sa != sb) return sa < sb;
            if (configs[a].lambda != configs[b].lambda) return configs[a].lambda < configs[b].lambda;
            if (configs[a].learning_rate != configs[b].learning_rate)
                return configs[a].learning_rate < configs[b].learning_rate;
            return a < b;
        });
        const std::size_t keep = rung + 1 == options.rungs ? 1 : std::max<std::size_t>(1, alive.size() / options.eta);
        ok.resize(std::min(keep, ok.size()));
        alive = ok;
        for (std::size_t i = 0; i < trainers.size(); ++i)
            if (std::find(alive.begin(), alive.end(), i) == alive.end()) trainers[i].reset();
    }
    res.rung_sizes.push_back(alive.size());
    res.best_index = alive.front();
    res.best = configs[res.best_index];
    res.best_result = trainers[res.best_index]->result();
    return res;
}

}  // namespace deepcae
