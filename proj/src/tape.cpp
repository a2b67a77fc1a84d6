#include "deepcae/tape.hpp"

#include <cmath>
#include <string>

#include "deepcae/errors.hpp"
#include "deepcae/kernels.hpp"

namespace deepcae {

VarRef Tape::push(Op op, std::vector<std::size_t> inputs, Matrix value) {
    Node n;
    n.op = op;
    n.inputs = std::move(inputs);
    for (std::size_t i : n.inputs) n.needs_grad = n.needs_grad || nodes_[i].needs_grad;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    const Matrix& v = nodes_.back().value;
    return {nodes_.size() - 1, v.rows(), v.cols()};
}

const Tape::Node& Tape::node(VarRef v) const {
    if (v.index >= nodes_.size()) throw ShapeError("VarRef index out of range");
    const Node& n = nodes_[v.index];
    if (n.value.rows() != v.rows || n.value.cols() != v.cols)
        throw ShapeError("VarRef shape does not match its node");
    return n;
}

VarRef Tape::constant(Matrix value) { return push(Op::leaf, {}, std::move(value)); }

VarRef Tape::parameter(Matrix value) {
    VarRef r = push(Op::leaf, {}, std::move(value));
    nodes_[r.index].is_parameter = true;
    nodes_[r.index].needs_grad = true;
    return r;
}

VarRef Tape::matmul(VarRef a, VarRef b) {
    Matrix v = kernels::matmul(node(a).value, node(b).value);
    return push(Op::matmul, {a.index, b.index}, std::move(v));
}

VarRef Tape::transpose(VarRef a) { return push(Op::transpose, {a.index}, node(a).value.transposed()); }

VarRef Tape::add(VarRef a, VarRef b) {
    Matrix v = node(a).value;
    v += node(b).value;
    return push(Op::add, {a.index, b.index}, std::move(v));
}

VarRef Tape::scale(VarRef a, double factor) {
    VarRef r = push(Op::scale, {a.index}, node(a).value * factor);
    nodes_[r.index].factor = factor;
    return r;
}

VarRef Tape::tanh(VarRef a) {
    Matrix v = node(a).value;
    for (double& x : v.data()) x = std::tanh(x);
    return push(Op::tanh, {a.index}, std::move(v));
}

VarRef Tape::square(VarRef a) {
    Matrix v = node(a).value;
    for (double& x : v.data()) x *= x;
    return push(Op::square, {a.index}, std::move(v));
}

VarRef Tape::diag_left_multiply(VarRef d, VarRef a) {
    const Matrix& dv = node(d).value;
    const Matrix& av = node(a).value;
    if (std::min(dv.rows(), dv.cols()) != 1 || dv.size() != av.rows())
        throw ShapeError("diag_left_multiply: diagonal " + dv.shape_string() + " does not match " +
                         av.shape_string());
    Matrix v = av;
    for (std::size_t r = 0; r < v.rows(); ++r)
        for (double& x : v.row(r)) x *= dv.data()[r];
    return push(Op::diag_left_multiply, {d.index, a.index}, std::move(v));
}

VarRef Tape::frobenius_sq(VarRef a) {
    return push(Op::frobenius_sq, {a.index}, Matrix::scalar(node(a).value.squared_norm()));
}

VarRef Tape::mse(VarRef a, VarRef b) {
    const Matrix& av = node(a).value;
    const Matrix& bv = node(b).value;
    require_same_shape(av, bv, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const double d = av.data()[i] - bv.data()[i];
        s += d * d;
    }
    return push(Op::mse, {a.index, b.index}, Matrix::scalar(s / static_cast<double>(av.size())));
}

VarRef Tape::sum(VarRef a) { return push(Op::sum, {a.index}, Matrix::scalar(node(a).value.sum())); }

VarRef Tape::row(VarRef a, std::size_t r) {
    VarRef out = push(Op::row, {a.index}, node(a).value.row_copy(r));
    nodes_[out.index].offset = r;
    return out;
}

VarRef Tape::custom(std::vector<VarRef> inputs, Matrix value, BackwardRule rule) {
    std::vector<std::size_t> idx;
    idx.reserve(inputs.size());
    for (VarRef in : inputs) {
        node(in);
        idx.push_back(in.index);
    }
    VarRef out = push(Op::custom, std::move(idx), std::move(value));
    nodes_[out.index].rule = std::move(rule);
    return out;
}

const Matrix& Tape::value(VarRef v) const { return node(v).value; }

bool Tape::is_parameter(VarRef v) const { return node(v).is_parameter; }

Matrix& Tape::adjoint_slot(std::size_t index) {
    Node& n = nodes_[index];
    if (!n.adjoint) n.adjoint.emplace(n.value.rows(), n.value.cols());
    return *n.adjoint;
}

GradientMap Tape::backward(VarRef loss) {
    const Node& l = node(loss);
    if (l.value.rows() != 1 || l.value.cols() != 1)
        throw ShapeError("backward: loss must be 1x1, got " + l.value.shape_string());
    for (Node& n : nodes_) n.adjoint.reset();
    adjoint_slot(loss.index)(0, 0) = 1.0;

    for (std::size_t i = loss.index + 1; i-- > 0;) {
        if (nodes_[i].adjoint && nodes_[i].needs_grad && nodes_[i].op != Op::leaf) propagate(i);
    }

    GradientMap grads;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].is_parameter) continue;
        const Node& n = nodes_[i];
        grads.emplace(i, n.adjoint ? *n.adjoint : Matrix(n.value.rows(), n.value.cols()));
    }
    return grads;
}

Matrix Tape::gradient(VarRef v) const {
    const Node& n = node(v);
    return n.adjoint ? *n.adjoint : Matrix(n.value.rows(), n.value.cols());
}

void Tape::propagate(std::size_t index) {
    const Node& n = nodes_[index];
    const Matrix& g = *n.adjoint;
    auto wants = [&](std::size_t k) { return nodes_[n.inputs[k]].needs_grad; };
    auto in = [&](std::size_t k) -> const Matrix& { return nodes_[n.inputs[k]].value; };

    switch (n.op) {
    case Op::leaf:
        break;
    case Op::matmul:
        if (wants(0)) adjoint_slot(n.inputs[0]) += kernels::matmul_nt(g, in(1));
        if (wants(1)) adjoint_slot(n.inputs[1]) += kernels::matmul_tn(in(0), g);
        break;
    case Op::transpose:
        adjoint_slot(n.inputs[0]) += g.transposed();
        break;
    case Op::add:
        if (wants(0)) adjoint_slot(n.inputs[0]) += g;
        if (wants(1)) adjoint_slot(n.inputs[1]) += g;
        break;
    case Op::scale:
        adjoint_slot(n.inputs[0]) += g * n.factor;
        break;
    case Op::tanh: {
        Matrix d = g;
        auto out = n.value.data();
        auto dd = d.data();
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] *= 1.0 - out[i] * out[i];
        adjoint_slot(n.inputs[0]) += d;
        break;
    }
    case Op::square: {
        Matrix d = g;
        auto x = in(0).data();
        auto dd = d.data();
        for (std::size_t i = 0; i < dd.size(); ++i) dd[i] *= 2.0 * x[i];
        adjoint_slot(n.inputs[0]) += d;
        break;
    }
    case Op::diag_left_multiply: {
        const Matrix& dv = in(0);
        const Matrix& av = in(1);
        if (wants(0)) {
            Matrix& slot = adjoint_slot(n.inputs[0]);
            for (std::size_t r = 0; r < av.rows(); ++r) {
                double s = 0.0;
                for (std::size_t c = 0; c < av.cols(); ++c) s += g(r, c) * av(r, c);
                slot.data()[r] += s;
            }
        }
        if (wants(1)) {
            Matrix& slot = adjoint_slot(n.inputs[1]);
            for (std::size_t r = 0; r < av.rows(); ++r)
                for (std::size_t c = 0; c < av.cols(); ++c) slot(r, c) += dv.data()[r] * g(r, c);
        }
        break;
    }
    case Op::frobenius_sq:
        adjoint_slot(n.inputs[0]) += in(0) * (2.0 * g.item());
        break;
    case Op::mse: {
        const double k = 2.0 * g.item() / static_cast<double>(in(0).size());
        Matrix diff = in(0) - in(1);
        if (wants(0)) adjoint_slot(n.inputs[0]) += diff * k;
        if (wants(1)) adjoint_slot(n.inputs[1]) += diff * -k;
        break;
    }
    case Op::sum: {
        const Matrix& a = in(0);
        adjoint_slot(n.inputs[0]) += Matrix(a.rows(), a.cols(), g.item());
        break;
    }
    case Op::row: {
        Matrix& slot = adjoint_slot(n.inputs[0]);
        auto dst = slot.row(n.offset);
        for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += g.data()[c];
        break;
    }
    case Op::custom: {
        std::vector<const Matrix*> inputs;
        std::vector<Matrix*> adjoints;
        for (std::size_t k = 0; k < n.inputs.size(); ++k) {
            inputs.push_back(&in(k));
            adjoints.push_back(wants(k) ? &adjoint_slot(n.inputs[k]) : nullptr);
        }
        n.rule(BackwardArgs{inputs, n.value, g, adjoints});
        break;
    }
    }
}

}  // namespace deepcae
