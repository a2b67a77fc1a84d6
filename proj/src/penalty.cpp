#include "deepcae/penalty.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deepcae/errors.hpp"
#include "deepcae/kernels.hpp"

namespace deepcae {

namespace {

// Samples per accumulation block in the parallel kernel. Fixed, so the
// reduction order (and thus every bit of the result) does not depend on the
// number of threads.
constexpr std::size_t kBlock = 16;

void check_range(const Matrix& h, double lo, double hi, const char* what) {
    for (double v : h.data())
        if (!(v >= lo && v <= hi))
            throw std::domain_error(std::string(what) + ": activation " + std::to_string(v) + " outside [" +
                                    std::to_string(lo) + ", " + std::to_string(hi) + "]");
}

std::vector<double> row_sq_sums(const Matrix& w) {
    std::vector<double> out(w.rows(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
        for (double v : w.row(r)) out[r] += v * v;
    return out;
}

PenaltyValue finish(std::vector<double> per_sample) {
    PenaltyValue p;
    double s = 0.0;
    for (double v : per_sample) s += v;
    p.value = s / static_cast<double>(per_sample.size());
    p.per_sample = std::move(per_sample);
    return p;
}

template <class Deriv>
PenaltyValue single_layer(const Matrix& h, const Matrix& w, Deriv deriv) {
    if (w.rows() != h.cols())
        throw ShapeError("single-layer penalty: activations " + h.shape_string() + " do not match weights " +
                         w.shape_string());
    const std::vector<double> wsq = row_sq_sums(w);
    std::vector<double> per(h.rows(), 0.0);
    for (std::size_t s = 0; s < h.rows(); ++s)
        for (std::size_t i = 0; i < h.cols(); ++i) {
            const double d = deriv(h(s, i));
            per[s] += d * d * wsq[i];
        }
    return finish(std::move(per));
}

// -- fused Jacobian-chain kernel ------------------------------------------

struct Chain {
    std::vector<const Matrix*> xs;  // x_1..x_k, batch x d_i
    std::vector<const Matrix*> ws;  // W_1..W_k, d_i x d_{i-1}
    std::size_t batch = 0;
    std::size_t d_x = 0;

    std::size_t depth() const { return ws.size(); }
    std::size_t width(std::size_t i) const { return i == 0 ? d_x : ws[i - 1]->rows(); }
};

Chain make_chain(std::span<const Matrix* const> xs, std::span<const Matrix* const> ws) {
    if (xs.empty() || xs.size() != ws.size())
        throw ShapeError("penalty: need one activation matrix per weight matrix, got " + std::to_string(xs.size()) +
                         " and " + std::to_string(ws.size()));
    Chain c;
    c.xs.assign(xs.begin(), xs.end());
    c.ws.assign(ws.begin(), ws.end());
    c.batch = xs[0]->rows();
    c.d_x = ws[0]->cols();
    for (std::size_t i = 0; i < ws.size(); ++i) {
        if (xs[i]->rows() != c.batch) throw ShapeError("penalty: activations disagree on batch size");
        if (xs[i]->cols() != ws[i]->rows())
            throw ShapeError("penalty: layer " + std::to_string(i + 1) + " activations " + xs[i]->shape_string() +
                             " do not match weights " + ws[i]->shape_string());
        if (i > 0 && ws[i]->cols() != ws[i - 1]->rows())
            throw ShapeError("penalty: weight chain breaks at layer " + std::to_string(i + 1) + ": " +
                             ws[i - 1]->shape_string() + " then " + ws[i]->shape_string());
    }
    return c;
}

// Per-sample scratch: derivative vectors a_i, scaled layers A_i, prefix
// products P_i = A_i ... A_1 and the backward workspace.
struct Scratch {
    std::vector<std::vector<double>> a, layer, prefix;
    std::vector<double> g, g_next, d_layer;

    explicit Scratch(const Chain& c) {
        const std::size_t k = c.depth();
        a.resize(k);
        layer.resize(k);
        prefix.resize(k);
        std::size_t widest = 0;
        for (std::size_t i = 0; i < k; ++i) {
            a[i].resize(c.width(i + 1));
            layer[i].resize(c.width(i + 1) * c.width(i));
            prefix[i].resize(c.width(i + 1) * c.d_x);
            widest = std::max(widest, c.width(i + 1) * std::max(c.width(i), c.d_x));
        }
        g.resize(widest);
        g_next.resize(widest);
        d_layer.resize(widest);
    }
};

// Fills the scratch for sample s and returns ||P_k||_F^2.
double chain_forward(const Chain& c, std::size_t s, Scratch& sc) {
    const std::size_t k = c.depth();
    const std::size_t dx = c.d_x;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t rows = c.width(i + 1), cols = c.width(i);
        const double* x = c.xs[i]->row(s).data();
        const double* w = c.ws[i]->data().data();
        double* A = sc.layer[i].data();
        for (std::size_t r = 0; r < rows; ++r) {
            const double ar = 1.0 - x[r] * x[r];
            sc.a[i][r] = ar;
            for (std::size_t q = 0; q < cols; ++q) A[r * cols + q] = ar * w[r * cols + q];
        }
        double* P = sc.prefix[i].data();
        if (i == 0) {
            std::copy_n(A, rows * cols, P);
            continue;
        }
        const double* prev = sc.prefix[i - 1].data();
        std::fill_n(P, rows * dx, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t q = 0; q < cols; ++q) {
                const double arq = A[r * cols + q];
                const double* prow = prev + q * dx;
                double* out = P + r * dx;
                for (std::size_t j = 0; j < dx; ++j) out[j] += arq * prow[j];
            }
    }
    double total = 0.0;
    for (double v : sc.prefix[k - 1]) total += v * v;
    return total;
}

// Adds scale * d||P_k||^2 for sample s into dx (row s of each) and dw.
void chain_backward(const Chain& c, std::size_t s, double scale, Scratch& sc, std::vector<Matrix>* dx,
                    std::vector<Matrix>* dw) {
    const std::size_t k = c.depth();
    const std::size_t dxw = c.d_x;
    {
        const auto& J = sc.prefix[k - 1];
        for (std::size_t t = 0; t < J.size(); ++t) sc.g[t] = 2.0 * scale * J[t];
    }
    for (std::size_t i = k; i-- > 0;) {
        const std::size_t rows = c.width(i + 1), cols = c.width(i);
        // dA_i = G_i * P_{i-1}^T, with P_0 = I.
        double* dA = sc.d_layer.data();
        if (i == 0) {
            std::copy_n(sc.g.data(), rows * cols, dA);
        } else {
            const double* prev = sc.prefix[i - 1].data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t q = 0; q < cols; ++q) {
                    double acc = 0.0;
                    const double* grow = sc.g.data() + r * dxw;
                    const double* prow = prev + q * dxw;
                    for (std::size_t j = 0; j < dxw; ++j) acc += grow[j] * prow[j];
                    dA[r * cols + q] = acc;
                }
        }
        const double* w = c.ws[i]->data().data();
        const double* x = c.xs[i]->row(s).data();
        if (dw) {
            double* out = (*dw)[i].data().data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t q = 0; q < cols; ++q) out[r * cols + q] += sc.a[i][r] * dA[r * cols + q];
        }
        if (dx) {
            double* out = (*dx)[i].row(s).data();
            for (std::size_t r = 0; r < rows; ++r) {
                double da = 0.0;
                for (std::size_t q = 0; q < cols; ++q) da += dA[r * cols + q] * w[r * cols + q];
                out[r] += -2.0 * x[r] * da;
            }
        }
        if (i == 0) break;
        // G_{i-1} = A_i^T G_i
        const double* A = sc.layer[i].data();
        std::fill_n(sc.g_next.data(), cols * dxw, 0.0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t q = 0; q < cols; ++q) {
                const double arq = A[r * cols + q];
                const double* grow = sc.g.data() + r * dxw;
                double* out = sc.g_next.data() + q * dxw;
                for (std::size_t j = 0; j < dxw; ++j) out[j] += arq * grow[j];
            }
        std::swap(sc.g, sc.g_next);
    }
}

std::vector<double> chain_values(const Chain& c, Exec exec) {
    std::vector<double> per(c.batch);
    if (exec == Exec::serial) {
        Scratch sc(c);
        for (std::size_t s = 0; s < c.batch; ++s) per[s] = chain_forward(c, s, sc);
        return per;
    }
#pragma omp parallel
    {
        Scratch sc(c);
#pragma omp for schedule(static)
        for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(c.batch); ++s)
            per[s] = chain_forward(c, static_cast<std::size_t>(s), sc);
    }
    return per;
}

std::vector<Matrix> zeros_like(const std::vector<const Matrix*>& ms) {
    std::vector<Matrix> out;
    out.reserve(ms.size());
    for (const Matrix* m : ms) out.emplace_back(m->rows(), m->cols());
    return out;
}

// Gradient of scale * sum_s penalty_s.
void chain_gradient(const Chain& c, double scale, Exec exec, std::vector<Matrix>& dx, std::vector<Matrix>& dw) {
    if (exec == Exec::serial) {
        Scratch sc(c);
        for (std::size_t s = 0; s < c.batch; ++s) {
            chain_forward(c, s, sc);
            chain_backward(c, s, scale, sc, &dx, &dw);
        }
        return;
    }
    // Rows of dx are disjoint per sample; dw is reduced per fixed-size block
    // and the blocks are then summed in index order.
    const std::size_t blocks = (c.batch + kBlock - 1) / kBlock;
    std::vector<std::vector<Matrix>> partial(blocks);
#pragma omp parallel
    {
        Scratch sc(c);
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < static_cast<std::ptrdiff_t>(blocks); ++b) {
            auto& local = partial[b];
            local = zeros_like(c.ws);
            const std::size_t end = std::min(c.batch, (b + 1) * kBlock);
            for (std::size_t s = b * kBlock; s < end; ++s) {
                chain_forward(c, s, sc);
                chain_backward(c, s, scale, sc, &dx, &local);
            }
        }
    }
    for (const auto& local : partial)
        for (std::size_t i = 0; i < dw.size(); ++i) dw[i] += local[i];
}

std::vector<const Matrix*> pointers(std::span<const Matrix> ms) {
    std::vector<const Matrix*> out;
    for (const Matrix& m : ms) out.push_back(&m);
    return out;
}

Chain chain_from_trace(const ForwardTrace& trace, std::span<const Matrix> weights) {
    validate_chain(trace, weights);
    std::vector<const Matrix*> xs;
    for (std::size_t i = 1; i < trace.layer_outputs.size(); ++i) xs.push_back(&trace.layer_outputs[i]);
    return make_chain(xs, pointers(weights));
}

}  // namespace

PenaltyValue single_layer_penalty_tanh(const Matrix& h, const Matrix& weight) {
    check_range(h, -1.0, 1.0, "single_layer_penalty_tanh");
    return single_layer(h, weight, [](double v) { return 1.0 - v * v; });
}

PenaltyValue single_layer_penalty_sigmoid(const Matrix& h, const Matrix& weight) {
    check_range(h, 0.0, 1.0, "single_layer_penalty_sigmoid");
    return single_layer(h, weight, [](double v) { return v * (1.0 - v); });
}

Matrix layer_jacobian(const Matrix& x_out, const Matrix& weight) {
    if (x_out.rows() != 1 || x_out.cols() != weight.rows())
        throw ShapeError("layer_jacobian: output row " + x_out.shape_string() + " does not match weights " +
                         weight.shape_string());
    Matrix j = weight;
    for (std::size_t r = 0; r < j.rows(); ++r) {
        const double d = 1.0 - x_out(0, r) * x_out(0, r);
        for (double& v : j.row(r)) v *= d;
    }
    return j;
}

void validate_chain(const ForwardTrace& trace, std::span<const Matrix> weights) {
    if (weights.empty()) throw ShapeError("encoder needs at least one layer");
    if (trace.layer_outputs.size() != weights.size() + 1)
        throw ShapeError("trace has " + std::to_string(trace.layer_outputs.size()) + " entries for " +
                         std::to_string(weights.size()) + " layers");
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const Matrix& in = trace.layer_outputs[i];
        const Matrix& out = trace.layer_outputs[i + 1];
        if (in.cols() != weights[i].cols() || out.cols() != weights[i].rows() || in.rows() != out.rows())
            throw ShapeError("layer " + std::to_string(i + 1) + ": weights " + weights[i].shape_string() +
                             " do not map " + in.shape_string() + " to " + out.shape_string());
    }
}

Matrix encoder_jacobian(const ForwardTrace& trace, std::span<const Matrix> weights, std::size_t sample) {
    validate_chain(trace, weights);
    if (sample >= trace.batch()) throw ShapeError("encoder_jacobian: sample index out of range");
    Matrix j = layer_jacobian(trace.layer_outputs[1].row_copy(sample), weights[0]);
    for (std::size_t i = 1; i < weights.size(); ++i)
        j = kernels::matmul(layer_jacobian(trace.layer_outputs[i + 1].row_copy(sample), weights[i]), j);
    return j;
}

PenaltyValue deepcae_penalty(const ForwardTrace& trace, std::span<const Matrix> weights, Exec exec) {
    return finish(chain_values(chain_from_trace(trace, weights), exec));
}

PenaltyValue stacked_penalty(const ForwardTrace& trace, std::span<const Matrix> weights) {
    validate_chain(trace, weights);
    std::vector<double> per(trace.batch(), 0.0);
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const PenaltyValue layer = single_layer_penalty_tanh(trace.layer_outputs[i + 1], weights[i]);
        for (std::size_t s = 0; s < per.size(); ++s) per[s] += layer.per_sample[s];
    }
    return finish(std::move(per));
}

double contraction_ratio(const VectorFunction& encoder, const Matrix& x, const Matrix& x_prime) {
    require_same_shape(x, x_prime, "contraction_ratio");
    const double in = std::sqrt((x - x_prime).squared_norm());
    if (in == 0.0) throw NumericError("contraction_ratio: the two inputs coincide");
    const Matrix fx = encoder(x);
    const Matrix fxp = encoder(x_prime);
    require_same_shape(fx, fxp, "contraction_ratio");
    return std::sqrt((fx - fxp).squared_norm()) / in;
}

DeepPenaltyGradient deepcae_penalty_gradient(std::span<const Matrix> layer_outputs, std::span<const Matrix> weights,
                                             double upstream, Exec exec) {
    const Chain c = make_chain(pointers(layer_outputs), pointers(weights));
    DeepPenaltyGradient g{zeros_like(c.xs), zeros_like(c.ws)};
    chain_gradient(c, upstream / static_cast<double>(c.batch), exec, g.layer_outputs, g.weights);
    return g;
}

VarRef record_deepcae_penalty(Tape& tape, std::span<const VarRef> layer_outputs, std::span<const VarRef> weights,
                              Exec exec) {
    std::vector<const Matrix*> xs, ws;
    for (VarRef v : layer_outputs) xs.push_back(&tape.value(v));
    for (VarRef v : weights) ws.push_back(&tape.value(v));
    const Chain c = make_chain(xs, ws);
    const double value = finish(chain_values(c, exec)).value;

    std::vector<VarRef> inputs(layer_outputs.begin(), layer_outputs.end());
    inputs.insert(inputs.end(), weights.begin(), weights.end());
    const std::size_t k = weights.size();
    auto rule = [k, exec](const Tape::BackwardArgs& args) {
        std::vector<const Matrix*> x(args.inputs.begin(), args.inputs.begin() + k);
        std::vector<const Matrix*> w(args.inputs.begin() + k, args.inputs.end());
        const Chain chain = make_chain(x, w);
        std::vector<Matrix> dx = zeros_like(chain.xs);
        std::vector<Matrix> dw = zeros_like(chain.ws);
        chain_gradient(chain, args.output_adjoint.item() / static_cast<double>(chain.batch), exec, dx, dw);
        for (std::size_t i = 0; i < k; ++i) {
            if (args.input_adjoints[i]) *args.input_adjoints[i] += dx[i];
            if (args.input_adjoints[k + i]) *args.input_adjoints[k + i] += dw[i];
        }
    };
    return tape.custom(std::move(inputs), Matrix::scalar(value), std::move(rule));
}

VarRef record_stacked_penalty(Tape& tape, std::span<const VarRef> layer_outputs, std::span<const VarRef> weights) {
    if (layer_outputs.empty() || layer_outputs.size() != weights.size())
        throw ShapeError("stacked penalty: need one activation matrix per weight matrix");
    const std::size_t batch = layer_outputs[0].rows;
    std::optional<VarRef> total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        const VarRef x = layer_outputs[i];
        const VarRef w = weights[i];
        if (x.cols != w.rows || x.rows != batch)
            throw ShapeError("stacked penalty: layer " + std::to_string(i + 1) + " shapes do not line up");
        // (1 - x^2)^2 (batch x d_i) times row sums of W^2 (d_i x 1).
        const VarRef slope = tape.add(tape.constant(Matrix(x.rows, x.cols, 1.0)), tape.scale(tape.square(x), -1.0));
        const VarRef row_norms = tape.matmul(tape.square(w), tape.constant(Matrix(w.cols, 1, 1.0)));
        const VarRef layer = tape.sum(tape.matmul(tape.square(slope), row_norms));
        total = total ? tape.add(*total, layer) : layer;
    }
    return tape.scale(*total, 1.0 / static_cast<double>(batch));
}

namespace reference {

PenaltyValue deepcae_penalty(const ForwardTrace& trace, std::span<const Matrix> weights) {
    validate_chain(trace, weights);
    std::vector<double> per(trace.batch());
    for (std::size_t s = 0; s < per.size(); ++s) per[s] = encoder_jacobian(trace, weights, s).squared_norm();
    return finish(std::move(per));
}

VarRef record_deepcae_penalty(Tape& tape, std::span<const VarRef> layer_outputs, std::span<const VarRef> weights) {
    if (layer_outputs.empty() || layer_outputs.size() != weights.size())
        throw ShapeError("deep penalty: need one activation matrix per weight matrix");
    const std::size_t batch = layer_outputs[0].rows;
    std::optional<VarRef> total;
    for (std::size_t s = 0; s < batch; ++s) {
        std::optional<VarRef> jac;
        for (std::size_t i = 0; i < weights.size(); ++i) {
            const VarRef x = tape.row(layer_outputs[i], s);
            const VarRef slope = tape.add(tape.constant(Matrix(1, x.cols, 1.0)), tape.scale(tape.square(x), -1.0));
            const VarRef layer = tape.diag_left_multiply(slope, weights[i]);
            jac = jac ? tape.matmul(layer, *jac) : layer;
        }
        const VarRef sq = tape.frobenius_sq(*jac);
        total = total ? tape.add(*total, sq) : sq;
    }
    return tape.scale(*total, 1.0 / static_cast<double>(batch));
}

}  // namespace reference

}  // namespace deepcae
