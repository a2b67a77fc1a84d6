#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "deepcae/matrix.hpp"

namespace deepcae {

/// Handle to a node on a Tape.
struct VarRef {
    std::size_t index = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    bool operator==(const VarRef&) const = default;
};

/// Parameter node index -> d(loss)/d(parameter).
using GradientMap = std::map<std::size_t, Matrix>;

/// Define-by-run reverse-mode differentiation over dense matrices.
///
/// Nodes are appended in evaluation order, so the node list is already
/// topologically sorted. No broadcasting: every binary op requires the exact
/// shapes it documents. A tape is used from one thread; the kernels it calls
/// may fan out internally.
class Tape {
public:
    /// Arguments handed to a custom node's backward rule. `input_adjoints[i]`
    /// is null when input i does not lead to any parameter; otherwise the rule
    /// must *add* its contribution.
    struct BackwardArgs {
        std::span<const Matrix* const> inputs;
        const Matrix& output;
        const Matrix& output_adjoint;
        std::span<Matrix* const> input_adjoints;
    };
    using BackwardRule = std::function<void(const BackwardArgs&)>;

    VarRef constant(Matrix value);
    /// A leaf whose gradient backward() reports.
    VarRef parameter(Matrix value);

    VarRef matmul(VarRef a, VarRef b);
    VarRef transpose(VarRef a);
    VarRef add(VarRef a, VarRef b);
    VarRef scale(VarRef a, double factor);
    VarRef tanh(VarRef a);
    VarRef square(VarRef a);
    /// diag(v) * a, where v is 1xn or nx1 and a has n rows.
    VarRef diag_left_multiply(VarRef v, VarRef a);
    /// Sum of squared entries, as a 1x1 node.
    VarRef frobenius_sq(VarRef a);
    /// Mean over all entries of (a-b)^2, as a 1x1 node.
    VarRef mse(VarRef a, VarRef b);
    VarRef sum(VarRef a);
    /// Row r of a, as a 1 x a.cols node.
    VarRef row(VarRef a, std::size_t r);

    /// Records a node whose value was computed by the caller and whose
    /// derivative is given by `rule`.
    VarRef custom(std::vector<VarRef> inputs, Matrix value, BackwardRule rule);

    const Matrix& value(VarRef v) const;
    bool is_parameter(VarRef v) const;
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Back-propagates from a 1x1 node. Earlier adjoints are discarded.
    GradientMap backward(VarRef loss);

    /// Adjoint of any node from the last backward(); zeros if unreached.
    Matrix gradient(VarRef v) const;

private:
    enum class Op {
        leaf,
        matmul,
        transpose,
        add,
        scale,
        tanh,
        square,
        diag_left_multiply,
        frobenius_sq,
        mse,
        sum,
        row,
        custom
    };

    struct Node {
        Op op = Op::leaf;
        std::vector<std::size_t> inputs;
        Matrix value;
        bool is_parameter = false;
        bool needs_grad = false;
        double factor = 0.0;      // scale
        std::size_t offset = 0;   // row
        BackwardRule rule;        // custom
        std::optional<Matrix> adjoint;
    };

    VarRef push(Op op, std::vector<std::size_t> inputs, Matrix value);
    const Node& node(VarRef v) const;
    void propagate(std::size_t index);
    Matrix& adjoint_slot(std::size_t index);

    std::vector<Node> nodes_;
};

}  // namespace deepcae
