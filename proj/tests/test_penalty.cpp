#include <cmath>

#include "deepcae/errors.hpp"
#include "deepcae/finite_diff.hpp"
#include "deepcae/penalty.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace deepcae;
using deepcae::test::dim;

namespace {

// Test-local tanh network, independent of the models module.
struct Net {
    std::vector<Matrix> w;  // out x in
    std::vector<Matrix> b;  // 1 x out

    static Net random(const std::vector<std::size_t>& widths, Rng& rng, double scale = 1.0) {
        Net n;
        for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
            n.w.push_back(Matrix::uniform(widths[i + 1], widths[i], rng, -scale, scale));
            n.b.push_back(Matrix::uniform(1, widths[i + 1], rng, -0.5, 0.5));
        }
        return n;
    }

    ForwardTrace trace(const Matrix& x) const {
        ForwardTrace t{{x}};
        for (std::size_t i = 0; i < w.size(); ++i) {
            const Matrix& in = t.layer_outputs.back();
            Matrix out(in.rows(), w[i].rows());
            for (std::size_t s = 0; s < in.rows(); ++s)
                for (std::size_t r = 0; r < w[i].rows(); ++r) {
                    double z = b[i](0, r);
                    for (std::size_t c = 0; c < in.cols(); ++c) z += w[i](r, c) * in(s, c);
                    out(s, r) = std::tanh(z);
                }
            t.layer_outputs.push_back(out);
        }
        return t;
    }

    Matrix operator()(const Matrix& x) const { return trace(x).embedding(); }
};

std::vector<std::size_t> random_widths(Rng& rng, std::size_t k, std::size_t max_dx) {
    std::vector<std::size_t> w{dim(rng, 1, max_dx)};
    for (std::size_t i = 0; i < k; ++i) w.push_back(dim(rng, 1, w.back()));
    return w;
}

Matrix explicit_scaled(const Matrix& w, const Matrix& h_row, double (*deriv)(double)) {
    Matrix d(w.rows(), w.rows());
    for (std::size_t i = 0; i < w.rows(); ++i) d(i, i) = deriv(h_row(0, i));
    return test::loop_matmul(d, w);
}

double tanh_deriv(double h) { return 1.0 - h * h; }
double sigmoid_deriv(double h) { return h * (1.0 - h); }

std::vector<VarRef> tape_forward(Tape& t, const Matrix& x, const Net& net, std::vector<VarRef>& ws) {
    std::vector<VarRef> acts;
    VarRef h = t.constant(x);
    for (std::size_t i = 0; i < net.w.size(); ++i) {
        ws.push_back(t.parameter(net.w[i]));
        const VarRef bias = t.matmul(t.constant(Matrix(x.rows(), 1, 1.0)), t.constant(net.b[i]));
        h = t.tanh(t.add(t.matmul(h, t.transpose(ws.back())), bias));
        acts.push_back(h);
    }
    return acts;
}

}  // namespace

TEST_SUITE("penalty") {
    TEST_CASE("single-layer tanh closed form") {
        Rng rng(1);
        const Matrix w = Matrix::normal(3, 5, rng);
        CHECK(single_layer_penalty_tanh(Matrix(1, 3), w).value == doctest::Approx(test::loop_sum_squares(w)).epsilon(1e-14));
        CHECK(single_layer_penalty_tanh(Matrix(1, 3, 1.0), w).value == 0.0);
        CHECK(single_layer_penalty_tanh(Matrix(1, 3, 1.0 - 1e-9), w).value < 1e-15);

        const Matrix h = Matrix::uniform(4, 3, rng, -1, 1);
        const PenaltyValue p = single_layer_penalty_tanh(h, w);
        double mean = 0.0;
        for (std::size_t s = 0; s < 4; ++s) {
            const double e = test::loop_sum_squares(explicit_scaled(w, h.row_copy(s), tanh_deriv));
            CHECK(std::abs(p.per_sample[s] - e) < 1e-12 * std::max(1.0, e));
            mean += e / 4.0;
        }
        CHECK(std::abs(p.value - mean) < 1e-12);

        CHECK_THROWS_AS(single_layer_penalty_tanh(Matrix(1, 2), w), ShapeError);
        CHECK_THROWS_AS(single_layer_penalty_tanh(Matrix(1, 3, 1.5), w), std::domain_error);
    }

    TEST_CASE("single-layer sigmoid closed form") {
        CHECK(single_layer_penalty_sigmoid(Matrix{{0.5}}, Matrix{{1, 1}}).value == 0.125);
        Rng rng(2);
        const Matrix w = Matrix::normal(3, 4, rng);
        CHECK(single_layer_penalty_sigmoid(Matrix(1, 3, 0.0), w).value == 0.0);
        CHECK(single_layer_penalty_sigmoid(Matrix(1, 3, 1.0), w).value == 0.0);
        const Matrix h = Matrix::uniform(1, 3, rng, 0, 1);
        const double e = test::loop_sum_squares(explicit_scaled(w, h, sigmoid_deriv));
        CHECK(std::abs(single_layer_penalty_sigmoid(h, w).value - e) < 1e-12 * std::max(1.0, e));
        CHECK_THROWS_AS(single_layer_penalty_sigmoid(Matrix(1, 3, -0.1), w), std::domain_error);
    }

    TEST_CASE("layer_jacobian") {
        Rng rng(3);
        const Matrix w = Matrix::normal(3, 4, rng);
        CHECK(layer_jacobian(Matrix(1, 3), w) == w);
        const Matrix x = Matrix::uniform(1, 3, rng, -1, 1);
        Matrix expected(3, 3);
        for (std::size_t i = 0; i < 3; ++i) expected(i, i) = 1 - x(0, i) * x(0, i);
        CHECK(relative_error(layer_jacobian(x, Matrix::identity(3)), expected) < 1e-15);
        CHECK_THROWS_AS(layer_jacobian(Matrix(1, 2), w), ShapeError);
        CHECK_THROWS_AS(layer_jacobian(Matrix(2, 3), w), ShapeError);

        for (int trial = 0; trial < 20; ++trial) {
            const Net net = Net::random(random_widths(rng, 1, 8), rng);
            const Matrix x0 = Matrix::uniform(1, net.w[0].cols(), rng, -1, 1);
            const Matrix analytic = layer_jacobian(net(x0), net.w[0]);
            CHECK(relative_error(analytic, finite_diff_jacobian(net, x0)) < 1e-6);
        }
    }

    TEST_CASE("encoder_jacobian") {
        Rng rng(4);
        const Net one = Net::random({5, 3}, rng);
        const Matrix x = Matrix::uniform(1, 5, rng, -1, 1);
        const ForwardTrace t1 = one.trace(x);
        CHECK(encoder_jacobian(t1, one.w) == layer_jacobian(t1.embedding(), one.w[0]));

        const ForwardTrace zeros{{Matrix(1, 4), Matrix(1, 4), Matrix(1, 4)}};
        const std::vector<Matrix> ids{Matrix::identity(4), Matrix::identity(4)};
        CHECK(encoder_jacobian(zeros, ids) == Matrix::identity(4));

        for (int trial = 0; trial < 20; ++trial) {
            const Net net = Net::random({6, dim(rng, 3, 6), dim(rng, 2, 3), dim(rng, 1, 2)}, rng);
            const Matrix x0 = Matrix::uniform(1, 6, rng, -1, 1);
            const Matrix analytic = encoder_jacobian(net.trace(x0), net.w);
            CHECK(analytic.rows() == net.w.back().rows());
            CHECK(analytic.cols() == 6);
            CHECK(relative_error(analytic, finite_diff_jacobian(net, x0, 1e-5)) < 1e-6);
            CHECK(relative_error(analytic, finite_diff_jacobian(net, x0, 1e-4)) < 1e-6);
        }

        CHECK_THROWS_AS(encoder_jacobian(t1, std::vector<Matrix>{Matrix(3, 4)}), ShapeError);
        CHECK_THROWS_AS(encoder_jacobian(t1, std::vector<Matrix>{one.w[0], one.w[0]}), ShapeError);
    }

    TEST_CASE("deepcae_penalty special cases") {
        Rng rng(5);
        for (int trial = 0; trial < 10; ++trial) {
            const Net net = Net::random(random_widths(rng, 1, 8), rng);
            const ForwardTrace t = net.trace(Matrix::uniform(4, net.w[0].cols(), rng, -1, 1));
            const double deep = deepcae_penalty(t, net.w).value;
            CHECK(std::abs(deep - single_layer_penalty_tanh(t.embedding(), net.w[0]).value) <= 1e-12 * std::max(1.0, deep));
        }
        const Net net = Net::random({6, 4, 3}, rng);
        const ForwardTrace t = net.trace(Matrix::uniform(3, 6, rng, -1, 1));
        const std::vector<Matrix> zero{Matrix(4, 6), Matrix(3, 4)};
        CHECK(deepcae_penalty(t, zero).value == 0.0);
    }

    TEST_CASE("deepcae_penalty matches the finite-difference Jacobian norm") {
        Rng rng(6);
        const Net net = Net::random({6, 5, 3}, rng);
        const Matrix x = Matrix::uniform(5, 6, rng, -1, 1);
        const PenaltyValue p = deepcae_penalty(net.trace(x), net.w);
        double mean = 0.0;
        for (std::size_t s = 0; s < 5; ++s) {
            const double fd = finite_diff_jacobian(net, x.row_copy(s)).squared_norm();
            CHECK(relative_error(p.per_sample[s], fd) < 1e-5);
            mean += fd / 5.0;
        }
        CHECK(relative_error(p.value, mean) < 1e-5);
    }

    TEST_CASE("stacked_penalty") {
        Rng rng(7);
        const Net one = Net::random({5, 3}, rng);
        const ForwardTrace t1 = one.trace(Matrix::uniform(4, 5, rng, -1, 1));
        CHECK(relative_error(stacked_penalty(t1, one.w).value, deepcae_penalty(t1, one.w).value) < 1e-12);

        const Net two = Net::random({6, 5, 3}, rng);
        const ForwardTrace t2 = two.trace(Matrix::uniform(4, 6, rng, -1, 1));
        const double p1 = single_layer_penalty_tanh(t2.layer_outputs[1], two.w[0]).value;
        const double p2 = single_layer_penalty_tanh(t2.layer_outputs[2], two.w[1]).value;
        const double stacked = stacked_penalty(t2, two.w).value;
        CHECK(std::abs(stacked - (p1 + p2)) < 1e-12 * stacked);
        const double deep = deepcae_penalty(t2, two.w).value;
        MESSAGE("seeded k=2: deep " << deep << " vs stacked " << stacked);
        CHECK(std::abs(deep - stacked) > 1e-8);
    }

    TEST_CASE("contraction ratio") {
        Rng rng(8);
        const Matrix x = Matrix::uniform(1, 5, rng, -1, 1);
        const Matrix xp = Matrix::uniform(1, 5, rng, -1, 1);
        CHECK(contraction_ratio([](const Matrix& v) { return v; }, x, xp) == doctest::Approx(1.0).epsilon(1e-15));
        Net zero = Net::random({5, 3}, rng);
        zero.w[0] = Matrix(3, 5);
        CHECK(contraction_ratio(zero, x, xp) == 0.0);
        CHECK_THROWS_AS(contraction_ratio(zero, x, x), NumericError);

        for (int trial = 0; trial < 10; ++trial) {
            const Net net = Net::random({5, 4, 3}, rng);
            Matrix u = Matrix::normal(1, 5, rng);
            u *= 1.0 / std::sqrt(u.squared_norm());
            const Matrix j = encoder_jacobian(net.trace(x), net.w);
            const double jvp = std::sqrt(test::loop_matmul(j, u.transposed()).squared_norm());
            const double ratio = contraction_ratio(net, x, x + u * 1e-6);
            CHECK(relative_error(ratio, jvp) < 1e-3);
        }
    }

    TEST_CASE("property: oracle equivalence over random encoders") {
        Rng rng(9);
        double worst = 0.0;
        for (int seed = 0; seed < 60; ++seed) {
            const std::size_t k = 1 + seed % 4;
            const Net net = Net::random(random_widths(rng, k, 8), rng);
            const Matrix x = Matrix::uniform(1, net.w[0].cols(), rng, -1, 1);
            const double analytic = deepcae_penalty(net.trace(x), net.w).value;
            const double fd = finite_diff_jacobian(net, x).squared_norm();
            worst = std::max(worst, relative_error(analytic, fd));
        }
        MESSAGE("max relative error " << worst);
        CHECK(worst < 1e-5);
    }

    TEST_CASE("property: submultiplicativity and nonnegativity") {
        Rng rng(10);
        for (int trial = 0; trial < 100; ++trial) {
            const std::size_t k = 1 + trial % 4;
            const Net net = Net::random(random_widths(rng, k, 8), rng, 2.0);
            const ForwardTrace t = net.trace(Matrix::uniform(1, net.w[0].cols(), rng, -1, 1));
            const double full = std::sqrt(encoder_jacobian(t, net.w).squared_norm());
            double product = 1.0;
            for (std::size_t i = 0; i < k; ++i)
                product *= std::sqrt(layer_jacobian(t.layer_outputs[i + 1], net.w[i]).squared_norm());
            CHECK(full <= product * (1 + 1e-12));
            CHECK(deepcae_penalty(t, net.w).value >= 0.0);
            CHECK(stacked_penalty(t, net.w).value >= 0.0);
        }
    }

    TEST_CASE("property: k=1 specialization") {
        Rng rng(11);
        for (int trial = 0; trial < 50; ++trial) {
            const Net net = Net::random(random_widths(rng, 1, 8), rng);
            const ForwardTrace t = net.trace(Matrix::uniform(3, net.w[0].cols(), rng, -1, 1));
            const double closed = single_layer_penalty_tanh(t.embedding(), net.w[0]).value;
            const double tol = 1e-12 * std::max(1.0, closed);
            CHECK(std::abs(deepcae_penalty(t, net.w).value - closed) <= tol);
            CHECK(std::abs(stacked_penalty(t, net.w).value - closed) <= tol);
        }
    }

    TEST_CASE("fused, serial, textbook and primitive-composed routes agree") {
        Rng rng(12);
        for (int trial = 0; trial < 20; ++trial) {
            const std::size_t k = 1 + trial % 4;
            const Net net = Net::random(random_widths(rng, k, 8), rng);
            const Matrix x = Matrix::uniform(dim(rng, 1, 40), net.w[0].cols(), rng, -1, 1);
            const ForwardTrace t = net.trace(x);
            const double par = deepcae_penalty(t, net.w, Exec::parallel).value;
            CHECK(deepcae_penalty(t, net.w, Exec::serial).value == par);
            CHECK(relative_error(reference::deepcae_penalty(t, net.w).value, par) < 1e-12);

            Tape fused, composed;
            std::vector<VarRef> wf, wc;
            const auto af = tape_forward(fused, x, net, wf);
            const auto ac = tape_forward(composed, x, net, wc);
            const VarRef pf = record_deepcae_penalty(fused, af, wf);
            const VarRef pc = reference::record_deepcae_penalty(composed, ac, wc);
            CHECK(relative_error(fused.value(pf).item(), composed.value(pc).item()) < 1e-12);
            const auto gf = fused.backward(pf);
            const auto gc = composed.backward(pc);
            for (std::size_t i = 0; i < k; ++i) CHECK(relative_error(gf.at(wf[i].index), gc.at(wc[i].index)) < 1e-10);

            std::vector<Matrix> acts(t.layer_outputs.begin() + 1, t.layer_outputs.end());
            const auto gs = deepcae_penalty_gradient(acts, net.w, 1.0, Exec::serial);
            const auto gp = deepcae_penalty_gradient(acts, net.w, 1.0, Exec::parallel);
            for (std::size_t i = 0; i < k; ++i) {
                CHECK(relative_error(gs.weights[i], gp.weights[i]) < 1e-12);
                CHECK(gs.layer_outputs[i] == gp.layer_outputs[i]);
            }
        }
    }

    TEST_CASE("property: penalty gradients w.r.t. weights match finite differences") {
        Rng rng(13);
        double worst = 0.0;
        for (int trial = 0; trial < 30; ++trial) {
            const std::size_t k = 1 + trial % 3;
            const Net net = Net::random(random_widths(rng, k, 6), rng);
            const Matrix x = Matrix::uniform(3, net.w[0].cols(), rng, -1, 1);
            Tape t;
            std::vector<VarRef> ws;
            const auto acts = tape_forward(t, x, net, ws);
            const auto g = t.backward(record_deepcae_penalty(t, acts, ws));
            for (std::size_t i = 0; i < k; ++i) {
                auto f = [&](const Matrix& wi) {
                    Net n2 = net;
                    n2.w[i] = wi;
                    return reference::deepcae_penalty(n2.trace(x), n2.w).value;
                };
                worst = std::max(worst, relative_error(g.at(ws[i].index), finite_diff_gradient(f, net.w[i]), 1e-8));
            }
        }
        MESSAGE("max relative error " << worst);
        CHECK(worst < 1e-4);
    }

    TEST_CASE("stacked penalty on tape matches closed form and differentiates correctly") {
        Rng rng(14);
        for (int trial = 0; trial < 10; ++trial) {
            const std::size_t k = 1 + trial % 3;
            const Net net = Net::random(random_widths(rng, k, 6), rng);
            const Matrix x = Matrix::uniform(4, net.w[0].cols(), rng, -1, 1);
            Tape t;
            std::vector<VarRef> ws;
            const auto acts = tape_forward(t, x, net, ws);
            const VarRef p = record_stacked_penalty(t, acts, ws);
            CHECK(relative_error(t.value(p).item(), stacked_penalty(net.trace(x), net.w).value) < 1e-12);
            const auto g = t.backward(p);
            for (std::size_t i = 0; i < k; ++i) {
                auto f = [&](const Matrix& wi) {
                    Net n2 = net;
                    n2.w[i] = wi;
                    return stacked_penalty(n2.trace(x), n2.w).value;
                };
                CHECK(relative_error(g.at(ws[i].index), finite_diff_gradient(f, net.w[i]), 1e-8) < 1e-5);
            }
        }
    }
}
