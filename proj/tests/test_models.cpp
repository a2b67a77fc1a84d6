#include <algorithm>
#include <cmath>
#include <filesystem>

#include "deepcae/errors.hpp"
#include "deepcae/finite_diff.hpp"
#include "deepcae/model.hpp"
#include "deepcae/pca.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace deepcae;
using deepcae::test::dim;

namespace {

Matrix random_input(std::size_t n, std::size_t d, std::uint64_t seed) {
    Rng rng(seed);
    return Matrix::uniform(n, d, rng, -1.0, 1.0);
}

double loop_mse(const Matrix& a, const Matrix& b) {
    double s = 0.0;
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c) s += (a(r, c) - b(r, c)) * (a(r, c) - b(r, c));
    return s / static_cast<double>(a.rows() * a.cols());
}

}  // namespace

TEST_CASE("layer sizing rule") {
    const auto s = EncoderSpec::from_rate(10, 0.5, 2);
    CHECK(s.embedding_dim == 5);
    CHECK(s.widths() == std::vector<std::size_t>{10, 8, 5});
    CHECK(EncoderSpec::from_rate(1, 0.5, 1).embedding_dim == 1);
    CHECK(EncoderSpec::from_rate(7, 0.5, 1).embedding_dim == 4);
    CHECK(EncoderSpec::from_rate(64, 0.5, 3).widths() == std::vector<std::size_t>{64, 53, 43, 32});
    CHECK(round_half_up(2.5) == 3);
    CHECK(round_half_up(2.4999) == 2);
    CHECK_THROWS_AS(EncoderSpec::from_rate(10, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(EncoderSpec::from_rate(10, 1.5, 1), ConfigError);
    CHECK_THROWS_AS(EncoderSpec::from_rate(10, 0.5, 0), ConfigError);
    EncoderSpec expanding{4, 6, 1, 1.0};
    CHECK_THROWS_AS(expanding.validate(), ConfigError);
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const auto w = EncoderSpec::from_rate(dim(rng, 1, 300), rng.uniform(0.01, 1.0), dim(rng, 1, 5)).widths();
        CHECK(std::is_sorted(w.rbegin(), w.rend()));
        CHECK(w.back() >= 1);
    }
}

TEST_CASE("lambda handling per variant") {
    CHECK(effective_lambda(Variant::standard, 5.0) == 0.0);
    CHECK(effective_lambda(Variant::deepcae, 0.0) == 0.0);
    CHECK(effective_lambda(Variant::deepcae, 1e-12) == kLambdaFloor);
    CHECK(effective_lambda(Variant::stacked_cae, 0.3) == 0.3);
    CHECK_THROWS_AS(effective_lambda(Variant::deepcae, -1.0), ConfigError);
    CHECK(parse_variant("stacked") == Variant::stacked_cae);
    CHECK(parse_variant("stacked_cae") == Variant::stacked_cae);
    CHECK(parse_variant("deepcae") == Variant::deepcae);
    CHECK_THROWS_AS(parse_variant("vae"), ConfigError);
}

TEST_CASE("init is deterministic, variant independent and Xavier bounded") {
    const auto spec = EncoderSpec::from_rate(10, 0.5, 2);
    const auto a = init_model(spec, Variant::deepcae, 0.1, 42);
    CHECK(a == init_model(spec, Variant::deepcae, 0.1, 42));
    CHECK(a.encoder[0].weight == init_model(spec, Variant::standard, 0.0, 42).encoder[0].weight);
    CHECK_FALSE(a.encoder[0].weight == init_model(spec, Variant::deepcae, 0.1, 43).encoder[0].weight);
    REQUIRE(a.encoder.size() == 2);
    REQUIRE(a.decoder.size() == 2);
    CHECK(a.encoder[0].weight.rows() == 8);
    CHECK(a.encoder[1].weight.rows() == 5);
    CHECK(a.decoder[0].weight.rows() == 8);
    CHECK(a.decoder[1].weight.rows() == 10);
    for (const auto* layers : {&a.encoder, &a.decoder}) {
        for (const auto& l : *layers) {
            const double bound = std::sqrt(6.0 / static_cast<double>(l.weight.rows() + l.weight.cols()));
            CHECK(l.weight.max_abs() <= bound);
            CHECK(l.bias.max_abs() == 0.0);
        }
    }
}

TEST_CASE("encode and decode contracts") {
    const auto spec = EncoderSpec::from_rate(6, 0.5, 2);
    auto m = init_model(spec, Variant::deepcae, 0.1, 3);
    const Matrix x = random_input(5, 6, 9);
    const auto enc = encode(m, x);
    CHECK(enc.embedding.rows() == 5);
    CHECK(enc.embedding.cols() == 3);
    CHECK(enc.trace.depth() == 2);
    CHECK(enc.trace.layer_outputs.back() == enc.embedding);
    const Matrix r = decode(m, enc.embedding);
    CHECK(r.rows() == 5);
    CHECK(r.cols() == 6);
    CHECK(r.max_abs() <= 1.0);
    CHECK(reconstruct(m, x) == r);

    CHECK_THROWS_AS(encode(m, random_input(5, 5, 1)), ShapeError);
    CHECK_THROWS_AS(decode(m, random_input(5, 4, 1)), ShapeError);
    Matrix bad = x;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(encode(m, bad), NumericError);

    for (auto* p : m.parameters()) *p = Matrix(p->rows(), p->cols(), 0.0);
    CHECK(encode(m, x).embedding.max_abs() == 0.0);
    CHECK(decode(m, Matrix(2, 3, 0.7)).max_abs() == 0.0);

    auto one = init_model(EncoderSpec{4, 4, 1, 1.0}, Variant::standard, 0.0, 1);
    one.encoder[0].weight = Matrix::identity(4);
    const Matrix x4 = random_input(3, 4, 2);
    const Matrix e = encode(one, x4).embedding;
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 4; ++c) CHECK(e(r, c) == std::tanh(x4(r, c)));
}

TEST_CASE("loss terms per variant") {
    const Matrix x = random_input(16, 8, 4);
    const auto spec2 = EncoderSpec::from_rate(8, 0.5, 2);
    for (auto v : {Variant::standard, Variant::deepcae, Variant::stacked_cae}) {
        const auto l0 = loss(init_model(spec2, v, 0.0, 5), x);
        CHECK(l0.total == l0.recon);
        CHECK(l0.penalty == 0.0);
    }
    const auto std_loss = loss(init_model(spec2, Variant::standard, 10.0, 5), x);
    CHECK(std_loss.total == std_loss.recon);

    const auto deep = loss(init_model(spec2, Variant::deepcae, 0.5, 5), x);
    const auto stacked = loss(init_model(spec2, Variant::stacked_cae, 0.5, 5), x);
    CHECK(deep.recon == stacked.recon);
    CHECK(deep.penalty != doctest::Approx(stacked.penalty));
    CHECK(deep.total == doctest::Approx(deep.recon + 0.5 * deep.penalty).epsilon(1e-14));
    CHECK(deep.recon == doctest::Approx(loop_mse(x, reconstruct(init_model(spec2, Variant::deepcae, 0.5, 5), x))).epsilon(1e-14));

    Rng rng(8);
    for (int i = 0; i < 20; ++i) {
        const auto spec1 = EncoderSpec::from_rate(dim(rng, 1, 8), rng.uniform(0.2, 1.0), 1);
        const Matrix xi = random_input(dim(rng, 1, 10), spec1.input_dim, 100 + i);
        const double lam = rng.uniform(0.01, 2.0);
        const auto d = loss(init_model(spec1, Variant::deepcae, lam, i), xi);
        const auto s = loss(init_model(spec1, Variant::stacked_cae, lam, i), xi);
        CHECK(std::abs(d.total - s.total) <= 1e-12 * std::max(1.0, std::abs(s.total)));
    }
}

TEST_CASE("on-tape loss gradient matches finite differences") {
    Rng rng(21);
    for (int trial = 0; trial < 10; ++trial) {
        const auto spec = EncoderSpec::from_rate(dim(rng, 2, 6), 0.5, dim(rng, 1, 3));
        const auto variant = trial % 2 ? Variant::deepcae : Variant::stacked_cae;
        const auto model = init_model(spec, variant, 0.3, trial);
        const Matrix x = random_input(4, spec.input_dim, trial + 50);
        Tape tape;
        const auto bound = bind(tape, model);
        const auto nodes = record_loss(tape, model, bound, x);
        CHECK(tape.value(nodes.total).item() == doctest::Approx(loss(model, x).total).epsilon(1e-13));
        const auto grads = tape.backward(nodes.total);
        const auto params = bound.parameters();
        for (std::size_t p = 0; p < params.size(); ++p) {
            auto perturbed = model;
            const Matrix at = *perturbed.parameters()[p];
            const Matrix fd = finite_diff_gradient(
                [&](const Matrix& v) {
                    *perturbed.parameters()[p] = v;
                    return loss(perturbed, x).total;
                },
                at);
            CHECK(relative_error(grads.at(params[p].index), fd) < 1e-6);
        }
    }
}

TEST_CASE("model serialization round-trips exactly") {
    const auto m = init_model(EncoderSpec::from_rate(9, 0.4, 2), Variant::stacked_cae, 1.0 / 3.0, 17);
    const auto text = serialize_model(m);
    const auto back = deserialize_model(text);
    CHECK(back == m);
    CHECK(serialize_model(back) == text);

    const auto dir = std::filesystem::temp_directory_path() / "deepcae_model_test";
    std::filesystem::remove_all(dir);
    save_model(m, dir / "nested" / "m.json");
    CHECK(load_model(dir / "nested" / "m.json") == m);
    CHECK_THROWS_AS(load_model(dir / "missing.json"), IoError);
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(deserialize_model("[]"), ConfigError);
    auto wrong_shape = text;
    const auto pos = wrong_shape.find("\"rows\"");
    REQUIRE(pos != std::string::npos);
    wrong_shape.replace(wrong_shape.find_first_of("0123456789", pos), 1, "7");
    CHECK_THROWS_AS(deserialize_model(wrong_shape), ConfigError);
}

TEST_CASE("PCA reconstruction error equals discarded variance") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t d = dim(rng, 2, 10), n = dim(rng, 20, 200), m = dim(rng, 1, d);
        Matrix mix = Matrix::normal(d, d, rng);
        const Matrix x = test::loop_matmul(Matrix::normal(n, d, rng), mix);
        const auto pca = pca_fit(x, m);
        CHECK(pca.components() == m);
        CHECK_FALSE(pca.degenerate);

        // Oracle eigenvalues from an independent covariance and Jacobi sweep.
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
        const double mse = loop_mse(x, pca_reconstruct(pca, x));
        CHECK(std::abs(mse - discarded / static_cast<double>(d)) <= 1e-8 * std::max(mse, 1e-12) + 1e-14);

        for (std::size_t i = 0; i < d; ++i) CHECK(pca.eigenvalues[i] == doctest::Approx(ev[i]).epsilon(1e-9));
        for (std::size_t a = 0; a < m; ++a) {
            double biggest = 0.0;
            for (std::size_t b = 0; b < m; ++b) {
                double dot = 0.0;
                for (std::size_t r = 0; r < d; ++r) dot += pca.axes(r, a) * pca.axes(r, b);
                CHECK(std::abs(dot - (a == b ? 1.0 : 0.0)) < 1e-10);
            }
            for (std::size_t r = 0; r < d; ++r)
                if (std::abs(pca.axes(r, a)) > std::abs(biggest)) biggest = pca.axes(r, a);
            CHECK(biggest > 0.0);
        }
        double prev = INFINITY;
        for (std::size_t k = 1; k <= d; ++k) {
            const double e = loop_mse(x, pca_reconstruct(pca_fit(x, k), x));
            CHECK(e <= prev + 1e-12);
            prev = e;
        }
        CHECK(prev < 1e-20 + 1e-12 * mse);
    }
}

TEST_CASE("PCA on exact subspaces and degenerate input") {
    Rng rng(2);
    const Matrix basis = Matrix::normal(2, 6, rng);
    const Matrix x = test::loop_matmul(Matrix::normal(40, 2, rng), basis) + Matrix(40, 6, 0.25);
    CHECK(loop_mse(x, pca_reconstruct(pca_fit(x, 2), x)) < 1e-10);

    const Matrix constant(10, 4, 0.5);
    const auto pca = pca_fit(constant, 2);
    CHECK(pca.degenerate);
    CHECK(loop_mse(constant, pca_reconstruct(pca, constant)) < 1e-20);
    CHECK_THROWS_AS(pca_fit(constant, 5), ShapeError);
}
