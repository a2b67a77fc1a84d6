#include "deepcae/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "deepcae/errors.hpp"
#include "deepcae/finite_diff.hpp"
#include "deepcae/io.hpp"
#include "deepcae/model.hpp"
#include "deepcae/random.hpp"

namespace deepcae {

namespace {

AutoencoderModel random_model(std::size_t input_dim, std::size_t layers, Variant variant, Rng& rng) {
    const auto spec = EncoderSpec::from_rate(input_dim, 0.5, layers);
    auto m = init_model(spec, variant, 0.1, rng.next());
    for (auto& l : m.encoder) l.bias = Matrix::uniform(1, l.bias.cols(), rng, -0.3, 0.3);
    for (auto& l : m.decoder) l.bias = Matrix::uniform(1, l.bias.cols(), rng, -0.3, 0.3);
    return m;
}

// Mean over rows of the squared Frobenius norm of the numeric encoder Jacobian.
double numeric_penalty(const AutoencoderModel& m, const Matrix& x) {
    double sum = 0.0;
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const Matrix j = finite_diff_jacobian([&](const Matrix& v) { return encode(m, v).embedding; }, x.row_copy(r));
        sum += j.squared_norm();
    }
    return sum / static_cast<double>(x.rows());
}

std::string line(const char* what, double value, double tolerance, bool ok) {
    return std::string(ok ? "ok   " : "FAIL ") + what + ": " + format_double(value) + " (tolerance " +
           format_double(tolerance) + ")";
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckOptions& options) {
    if (options.input_dim == 0 || options.num_layers == 0 || options.cases == 0)
        throw ConfigError("gradcheck needs positive dims, layers and cases");
    Rng rng(options.seed);
    GradcheckReport report;
    for (std::size_t c = 0; c < options.cases; ++c) {
        const auto model = random_model(options.input_dim, options.num_layers, Variant::deepcae, rng);
        const Matrix x = Matrix::uniform(3, options.input_dim, rng, -1.0, 1.0);

        const Encoded enc = encode(model, x);
        const double analytic = deepcae_penalty(enc.trace, model.encoder_weights()).value * options.penalty_corruption;
        report.penalty_max_rel_error =
            std::max(report.penalty_max_rel_error, relative_error(analytic, numeric_penalty(model, x)));

        Tape tape;
        const BoundModel bound = bind(tape, model);
        const LossNodes nodes = record_loss(tape, model, bound, x);
        const GradientMap grads = tape.backward(nodes.total);
        const auto refs = bound.parameters();
        auto probe = model;
        for (std::size_t p = 0; p < refs.size(); ++p) {
            const Matrix at = *probe.parameters()[p];
            const Matrix fd = finite_diff_gradient(
                [&](const Matrix& v) {
                    *probe.parameters()[p] = v;
                    return loss(probe, x).total;
                },
                at);
            *probe.parameters()[p] = at;
            report.gradient_max_rel_error =
                std::max(report.gradient_max_rel_error, relative_error(grads.at(refs[p].index), fd));
        }

        auto single = random_model(options.input_dim, 1, Variant::deepcae, rng);
        const Encoded e1 = encode(single, x);
        const double deep = deepcae_penalty(e1.trace, single.encoder_weights()).value;
        const double stacked = stacked_penalty(e1.trace, single.encoder_weights()).value;
        report.single_layer_max_diff =
            std::max(report.single_layer_max_diff, std::abs(deep - stacked) / std::max(1.0, std::abs(stacked)));
    }
    const bool p_ok = report.penalty_max_rel_error < kPenaltyTolerance;
    const bool g_ok = report.gradient_max_rel_error < kGradientTolerance;
    const bool s_ok = report.single_layer_max_diff <= kSingleLayerTolerance;
    report.passed = p_ok && g_ok && s_ok;
    report.lines = {
        line("penalty vs finite-difference Jacobian, max rel err", report.penalty_max_rel_error, kPenaltyTolerance, p_ok),
        line("loss gradient vs finite differences, max rel err", report.gradient_max_rel_error, kGradientTolerance, g_ok),
        line("one-layer deep == stacked, max rel diff", report.single_layer_max_diff, kSingleLayerTolerance, s_ok),
    };
    return report;
}

}  // namespace deepcae
