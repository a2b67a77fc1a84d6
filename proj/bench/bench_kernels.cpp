// Serial reference vs OpenMP kernels. Prints the median wall time per call
// and the largest disagreement between the two paths.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "deepcae/kernels.hpp"
#include "deepcae/penalty.hpp"
#include "deepcae/random.hpp"

using namespace deepcae;

namespace {

double median_seconds(const std::function<void()>& body, int repeats) {
    std::vector<double> t;
    for (int i = 0; i < repeats; ++i) {
        const auto start = std::chrono::steady_clock::now();
        body();
        t.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    }
    std::nth_element(t.begin(), t.begin() + repeats / 2, t.end());
    return t[static_cast<std::size_t>(repeats / 2)];
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
    return d;
}

void row(const char* name, double serial, double parallel, double diff) {
    std::printf("%-34s %12.3f %12.3f %8.2fx %10.1e\n", name, serial * 1e3, parallel * 1e3, serial / parallel, diff);
}

// Activations of a tanh chain with widths `dims` on a random batch.
std::vector<Matrix> chain_outputs(std::size_t batch, const std::vector<Matrix>& weights, Rng& rng) {
    std::vector<Matrix> outs{Matrix::uniform(batch, weights.front().cols(), rng, -1.0, 1.0)};
    for (const auto& w : weights) {
        Matrix z = kernels::matmul_nt(outs.back(), w);
        for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = std::tanh(z.data()[i]);
        outs.push_back(std::move(z));
    }
    return outs;
}

}  // namespace

int main() {
    Rng rng(1);
    std::setvbuf(stdout, nullptr, _IOLBF, 0);
    std::printf("threads: %d\n", kernels::max_threads());
    std::printf("%-34s %12s %12s %9s %10s\n", "kernel", "serial ms", "parallel ms", "ratio", "max diff");

    for (std::size_t n : {128, 256, 512}) {
        const Matrix a = Matrix::normal(n, n, rng), b = Matrix::normal(n, n, rng);
        Matrix ref, par;
        const double s = median_seconds([&] { ref = kernels::reference::matmul(a, b); }, 5);
        const double p = median_seconds([&] { par = kernels::matmul(a, b); }, 5);
        char name[64];
        std::snprintf(name, sizeof name, "matmul %zux%zu", n, n);
        row(name, s, p, max_abs_diff(ref, par));
    }

    const std::vector<std::vector<std::size_t>> shapes{{16, 12, 8}, {64, 48, 32}, {128, 96, 64, 32}};
    for (const auto& dims : shapes) {
        std::vector<Matrix> weights;
        for (std::size_t i = 0; i + 1 < dims.size(); ++i)
            weights.push_back(Matrix::uniform(dims[i + 1], dims[i], rng, -0.1, 0.1));
        const auto outs = chain_outputs(128, weights, rng);
        const ForwardTrace trace{outs};
        const std::vector<Matrix> layer_outputs(outs.begin() + 1, outs.end());

        PenaltyValue vs, vp;
        const int repeats = dims.front() > 100 ? 3 : 10;
        const double s = median_seconds([&] { vs = deepcae_penalty(trace, weights, Exec::serial); }, repeats);
        const double p = median_seconds([&] { vp = deepcae_penalty(trace, weights, Exec::parallel); }, repeats);
        char name[64];
        std::snprintf(name, sizeof name, "deep penalty k=%zu d=%zu", weights.size(), dims.front());
        row(name, s, p, std::abs(vs.value - vp.value));

        DeepPenaltyGradient gs, gp;
        const double sg =
            median_seconds([&] { gs = deepcae_penalty_gradient(layer_outputs, weights, 1.0, Exec::serial); }, repeats);
        const double pg =
            median_seconds([&] { gp = deepcae_penalty_gradient(layer_outputs, weights, 1.0, Exec::parallel); }, repeats);
        double diff = 0.0;
        for (std::size_t i = 0; i < weights.size(); ++i) diff = std::max(diff, max_abs_diff(gs.weights[i], gp.weights[i]));
        std::snprintf(name, sizeof name, "deep penalty grad k=%zu d=%zu", weights.size(), dims.front());
        row(name, sg, pg, diff);
    }
}
