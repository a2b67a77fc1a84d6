#pragma once

#include <span>
#include <vector>

#include "deepcae/finite_diff.hpp"
#include "deepcae/matrix.hpp"
#include "deepcae/tape.hpp"

namespace deepcae {

/// Post-activation outputs of every encoder layer for one batch:
/// layer_outputs[0] is the input (batch x d_x), layer_outputs[i] the tanh
/// output of layer i, the last entry is the embedding.
struct ForwardTrace {
    std::vector<Matrix> layer_outputs;

    std::size_t depth() const noexcept { return layer_outputs.empty() ? 0 : layer_outputs.size() - 1; }
    std::size_t batch() const noexcept { return layer_outputs.empty() ? 0 : layer_outputs.front().rows(); }
    const Matrix& input() const { return layer_outputs.front(); }
    const Matrix& embedding() const { return layer_outputs.back(); }
};

/// Batch-mean penalty plus the per-row values it averages.
struct PenaltyValue {
    double value = 0.0;
    std::vector<double> per_sample;
};

enum class Exec { serial, parallel };

// ---------------------------------------------------------------------------
// Closed forms. Weights are (out x in); h and trace rows are samples.

/// Per row: sum_i (1 - h_i^2)^2 * sum_j W_ij^2. h must lie in [-1, 1].
PenaltyValue single_layer_penalty_tanh(const Matrix& h, const Matrix& weight);

/// Per row: sum_i (h_i (1 - h_i))^2 * sum_j W_ij^2. h must lie in [0, 1].
/// Kept as a reference for the sigmoid formulation; training uses tanh.
PenaltyValue single_layer_penalty_sigmoid(const Matrix& h, const Matrix& weight);

/// diag(1 - x_out^2) * W for one sample row `x_out` (1 x d_out).
Matrix layer_jacobian(const Matrix& x_out, const Matrix& weight);

/// Full encoder Jacobian d(embedding)/d(input) for one sample, the product of
/// layer Jacobians from the last layer down to the first. Shape d_h x d_x.
Matrix encoder_jacobian(const ForwardTrace& trace, std::span<const Matrix> weights, std::size_t sample = 0);

/// Squared Frobenius norm of the full encoder Jacobian, per sample, averaged.
PenaltyValue deepcae_penalty(const ForwardTrace& trace, std::span<const Matrix> weights,
                             Exec exec = Exec::parallel);

/// Sum over layers of the isolated single-layer penalty, per sample, averaged.
PenaltyValue stacked_penalty(const ForwardTrace& trace, std::span<const Matrix> weights);

/// ||f(x) - f(x')|| / ||x - x'||. Throws NumericError when x == x'.
double contraction_ratio(const VectorFunction& encoder, const Matrix& x, const Matrix& x_prime);

/// Throws ShapeError unless the trace and weight chain line up.
void validate_chain(const ForwardTrace& trace, std::span<const Matrix> weights);

// ---------------------------------------------------------------------------
// On-tape versions. `layer_outputs` are x_1..x_k (the input x_0 never enters
// the penalty); `weights` are W_1..W_k. Both return a 1x1 batch-mean node and
// differentiate through the weights and the activations.

/// Fused node: one pass over the batch with a hand-derived backward rule.
VarRef record_deepcae_penalty(Tape& tape, std::span<const VarRef> layer_outputs,
                              std::span<const VarRef> weights, Exec exec = Exec::parallel);

/// Composed from tape primitives; no custom backward.
VarRef record_stacked_penalty(Tape& tape, std::span<const VarRef> layer_outputs, std::span<const VarRef> weights);

/// Gradient of the batch-mean deep penalty w.r.t. each activation x_1..x_k and
/// each weight W_1..W_k, scaled by `upstream`.
struct DeepPenaltyGradient {
    std::vector<Matrix> layer_outputs;
    std::vector<Matrix> weights;
};

DeepPenaltyGradient deepcae_penalty_gradient(std::span<const Matrix> layer_outputs, std::span<const Matrix> weights,
                                             double upstream = 1.0, Exec exec = Exec::parallel);

namespace reference {

/// Deep penalty via explicit per-sample encoder_jacobian products.
PenaltyValue deepcae_penalty(const ForwardTrace& trace, std::span<const Matrix> weights);

/// The deep penalty built one sample at a time out of generic tape
/// primitives (row, square, diag_left_multiply, matmul, frobenius_sq).
VarRef record_deepcae_penalty(Tape& tape, std::span<const VarRef> layer_outputs, std::span<const VarRef> weights);

}  // namespace reference

}  // namespace deepcae
