#pragma once

// Dense tensors on a recording tape with reverse-mode differentiation.
//
// Values are stored as row-major Eigen matrices. A tensor of shape
// [n0, n1, ..., nk] is stored as n0 x (n1*...*nk); rank-1 tensors are
// n x 1 columns and scalars are 1 x 1. The flat row-major buffer is the
// same for every storage split, so reshape never moves data.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "kbgsat/errors.hpp"

namespace kbgsat {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

inline Index numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

inline std::pair<Index, Index> storage_dims(const Shape& shape) {
    if (shape.empty()) return {1, 1};
    if (shape.size() == 1) return {shape[0], 1};
    return {shape[0], numel(Shape(shape.begin() + 1, shape.end()))};
}

/// A named learnable array. Gradients from every tape that reads it
/// accumulate into grad() until zero_grad().
template <typename Scalar>
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Matrix<Scalar> value)
        : name_(std::move(name)), value_(std::move(value)),
          grad_(Matrix<Scalar>::Zero(value_.rows(), value_.cols())) {}

    const std::string& name() const { return name_; }
    Matrix<Scalar>& value() { return value_; }
    const Matrix<Scalar>& value() const { return value_; }
    Matrix<Scalar>& grad() { return grad_; }
    const Matrix<Scalar>& grad() const { return grad_; }
    void zero_grad() { grad_.setZero(value_.rows(), value_.cols()); }

private:
    std::string name_;
    Matrix<Scalar> value_;
    Matrix<Scalar> grad_;
};

template <typename Scalar>
class Tape;

/// Handle to a tensor recorded on a Tape.
template <typename Scalar>
class Var {
public:
    Var() = default;
    Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

    Tape<Scalar>* tape() const { return tape_; }
    int id() const { return id_; }

    const Matrix<Scalar>& value() const { return tape_->node(id_).value; }
    const Matrix<Scalar>& grad() const { return tape_->node(id_).grad; }
    const Shape& shape() const { return tape_->node(id_).shape; }
    bool requires_grad() const { return tape_->node(id_).requires_grad; }
    Index rows() const { return value().rows(); }
    Index cols() const { return value().cols(); }
    Scalar item() const { return value()(0, 0); }

private:
    Tape<Scalar>* tape_ = nullptr;
    int id_ = -1;
};

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so reverse iteration is a valid topological order for backward.
template <typename Scalar>
class Tape {
public:
    using Mat = Matrix<Scalar>;
    using BackwardFn = std::function<void(Tape&, const Mat&)>;

    struct Node {
        Mat value;
        Mat grad;
        Shape shape;
        bool requires_grad = false;
        BackwardFn backward;
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }
    std::size_t size() const { return nodes_.size(); }
    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    Var<Scalar> constant(Mat value) {
        Shape shape{value.rows(), value.cols()};
        return constant(std::move(value), std::move(shape));
    }
    Var<Scalar> constant(Mat value, Shape shape) { return push(std::move(value), std::move(shape), false, {}); }

    /// Leaf whose gradient stays on the tape node.
    Var<Scalar> variable(Mat value) {
        Shape shape{value.rows(), value.cols()};
        return variable(std::move(value), std::move(shape));
    }
    Var<Scalar> variable(Mat value, Shape shape) {
        return push(std::move(value), std::move(shape), grad_enabled_, {});
    }

    /// Leaf bound to a Parameter; backward adds into parameter.grad().
    Var<Scalar> parameter(Parameter<Scalar>& param) {
        Shape shape{param.value().rows(), param.value().cols()};
        BackwardFn fn;
        if (grad_enabled_) {
            Parameter<Scalar>* target = &param;
            fn = [target](Tape&, const Mat& g) { target->grad() += g; };
        }
        return push(param.value(), std::move(shape), grad_enabled_, std::move(fn));
    }

    /// Read-only parameter: recorded as a constant.
    Var<Scalar> parameter(const Parameter<Scalar>& param) {
        return constant(param.value(), Shape{param.value().rows(), param.value().cols()});
    }

    /// Records an operation result. The backward function is kept only if
    /// some input participates in differentiation.
    Var<Scalar> record(Mat value, Shape shape, std::initializer_list<Var<Scalar>> inputs, BackwardFn fn) {
        bool needs = false;
        for (const auto& in : inputs) {
            if (in.tape() != this) throw ContractError("operation mixes tensors from different tapes");
            needs = needs || in.requires_grad();
        }
        needs = needs && grad_enabled_;
        return push(std::move(value), std::move(shape), needs, needs ? std::move(fn) : BackwardFn{});
    }

    Var<Scalar> record(Mat value, Shape shape, const std::vector<Var<Scalar>>& inputs, BackwardFn fn) {
        bool needs = false;
        for (const auto& in : inputs) {
            if (in.tape() != this) throw ContractError("operation mixes tensors from different tapes");
            needs = needs || in.requires_grad();
        }
        needs = needs && grad_enabled_;
        return push(std::move(value), std::move(shape), needs, needs ? std::move(fn) : BackwardFn{});
    }

    /// Adds g into the gradient of node id when that node is differentiable.
    template <typename Derived>
    void accumulate(int id, const Eigen::MatrixBase<Derived>& g) {
        Node& n = node(id);
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
        n.grad += g;
    }

    bool wants_grad(int id) const { return node(id).requires_grad; }

    void backward(const Var<Scalar>& loss) {
        if (loss.tape() != this) throw ContractError("backward called on a tensor from another tape");
        Node& root = node(loss.id());
        if (root.value.size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + to_string(root.shape));
        if (!root.requires_grad) return;
        root.grad = Mat::Constant(1, 1, Scalar(1));
        for (int id = loss.id(); id >= 0; --id) {
            Node& n = node(id);
            if (!n.requires_grad) continue;
            if (n.grad.size() == 0) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
            if (n.backward) n.backward(*this, n.grad);
        }
    }

private:
    Var<Scalar> push(Mat value, Shape shape, bool requires_grad, BackwardFn fn) {
        auto [r, c] = storage_dims(shape);
        if (numel(shape) != value.size())
            throw DimensionError("value size " + std::to_string(value.size()) + " does not match shape " +
                                 to_string(shape));
        if (value.rows() != r || value.cols() != c) {
            Mat reshaped = Eigen::Map<const Mat>(value.data(), r, c);
            value = std::move(reshaped);
        }
        nodes_.push_back(Node{std::move(value), Mat{}, std::move(shape), requires_grad, std::move(fn)});
        return Var<Scalar>(this, static_cast<int>(nodes_.size() - 1));
    }

    bool grad_enabled_;
    std::vector<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Structural operations
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
void require_same_shape(const Var<Scalar>& a, const Var<Scalar>& b, const char* op) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) +
                             " differ");
}

template <typename Scalar>
void require_matrix(const Var<Scalar>& a, const char* op) {
    if (a.shape().size() > 2)
        throw DimensionError(std::string(op) + ": expected a matrix, got " + to_string(a.shape()));
}

}  // namespace detail

template <typename Scalar>
Var<Scalar> matmul(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    if (a.cols() != b.rows())
        throw DimensionError("matmul: inner extents differ for " + to_string(a.shape()) + " and " +
                             to_string(b.shape()));
    Matrix<Scalar> out = a.value() * b.value();
    Shape shape{out.rows(), out.cols()};
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), std::move(shape), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.wants_grad(ia)) t.accumulate(ia, g * t.node(ib).value.transpose());
        if (t.wants_grad(ib)) t.accumulate(ib, t.node(ia).value.transpose() * g);
    });
}

template <typename Scalar>
Var<Scalar> transpose(const Var<Scalar>& a) {
    detail::require_matrix(a, "transpose");
    Matrix<Scalar> out = a.value().transpose();
    Shape shape{out.rows(), out.cols()};
    const int ia = a.id();
    return a.tape()->record(std::move(out), std::move(shape), {a},
                            [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(ia, g.transpose()); });
}

/// Concatenates along the last axis: every row of the result is [a_i ; b_i ; ...].
template <typename Scalar>
Var<Scalar> concat(const std::vector<Var<Scalar>>& parts) {
    if (parts.empty()) throw ContractError("concat: no inputs");
    const Index rows = parts.front().rows();
    Index cols = 0;
    for (const auto& p : parts) {
        detail::require_matrix(p, "concat");
        if (p.rows() != rows)
            throw DimensionError("concat: row counts differ for " + to_string(parts.front().shape()) + " and " +
                                 to_string(p.shape()));
        cols += p.cols();
    }
    Matrix<Scalar> out(rows, cols);
    std::vector<std::pair<int, Index>> slots;
    Index offset = 0;
    for (const auto& p : parts) {
        out.middleCols(offset, p.cols()) = p.value();
        slots.emplace_back(p.id(), offset);
        offset += p.cols();
    }
    Shape shape{rows, cols};
    return parts.front().tape()->record(std::move(out), std::move(shape), parts,
                                        [slots](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                            for (auto [id, off] : slots)
                                                if (t.wants_grad(id))
                                                    t.accumulate(id, g.middleCols(off, t.node(id).value.cols()));
                                        });
}

template <typename Scalar>
Var<Scalar> reshape(const Var<Scalar>& a, Shape shape) {
    if (numel(shape) != a.value().size())
        throw DimensionError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
    auto [r, c] = storage_dims(shape);
    Matrix<Scalar> out = Eigen::Map<const Matrix<Scalar>>(a.value().data(), r, c);
    const int ia = a.id();
    return a.tape()->record(std::move(out), std::move(shape), {a}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& src = t.node(ia).value;
        t.accumulate(ia, Eigen::Map<const Matrix<Scalar>>(g.data(), src.rows(), src.cols()));
    });
}

/// out[i] = a[index[i]].
template <typename Scalar>
Var<Scalar> gather_rows(const Var<Scalar>& a, std::span<const Index> index) {
    detail::require_matrix(a, "gather_rows");
    Matrix<Scalar> out(static_cast<Index>(index.size()), a.cols());
    const Index n = a.rows();
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= n)
            throw DimensionError("gather_rows: index " + std::to_string(index[i]) + " out of range for " +
                                 to_string(a.shape()));
        out.row(static_cast<Index>(i)) = a.value().row(index[i]);
    }
    Shape shape{out.rows(), out.cols()};
    std::vector<Index> idx(index.begin(), index.end());
    const int ia = a.id();
    return a.tape()->record(std::move(out), std::move(shape), {a},
                            [ia, idx = std::move(idx)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                const auto& src = t.node(ia).value;
                                Matrix<Scalar> acc = Matrix<Scalar>::Zero(src.rows(), src.cols());
                                for (std::size_t i = 0; i < idx.size(); ++i)
                                    acc.row(idx[i]) += g.row(static_cast<Index>(i));
                                t.accumulate(ia, acc);
                            });
}

/// out[index[i]] += a[i], out has n_rows rows; rows are visited in order.
template <typename Scalar>
Var<Scalar> scatter_add_rows(const Var<Scalar>& a, std::span<const Index> index, Index n_rows) {
    detail::require_matrix(a, "scatter_add_rows");
    if (static_cast<Index>(index.size()) != a.rows())
        throw DimensionError("scatter_add_rows: " + std::to_string(index.size()) + " indices for " +
                             to_string(a.shape()));
    Matrix<Scalar> out = Matrix<Scalar>::Zero(n_rows, a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (index[i] < 0 || index[i] >= n_rows)
            throw DimensionError("scatter_add_rows: index " + std::to_string(index[i]) + " out of range");
        out.row(index[i]) += a.value().row(static_cast<Index>(i));
    }
    Shape shape{n_rows, a.cols()};
    std::vector<Index> idx(index.begin(), index.end());
    const int ia = a.id();
    return a.tape()->record(std::move(out), std::move(shape), {a},
                            [ia, idx = std::move(idx)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                Matrix<Scalar> acc(static_cast<Index>(idx.size()), g.cols());
                                for (std::size_t i = 0; i < idx.size(); ++i) acc.row(static_cast<Index>(i)) = g.row(idx[i]);
                                t.accumulate(ia, acc);
                            });
}

// ---------------------------------------------------------------------------
// Elementwise operations
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> add(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_shape(a, b, "add");
    Matrix<Scalar> out = a.value() + b.value();
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), a.shape(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

template <typename Scalar>
Var<Scalar> sub(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_shape(a, b, "sub");
    Matrix<Scalar> out = a.value() - b.value();
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), a.shape(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        t.accumulate(ia, g);
        t.accumulate(ib, -g);
    });
}

template <typename Scalar>
Var<Scalar> mul(const Var<Scalar>& a, const Var<Scalar>& b) {
    detail::require_same_shape(a, b, "mul");
    Matrix<Scalar> out = a.value().cwiseProduct(b.value());
    const int ia = a.id(), ib = b.id();
    return a.tape()->record(std::move(out), a.shape(), {a, b}, [ia, ib](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        if (t.wants_grad(ia)) t.accumulate(ia, g.cwiseProduct(t.node(ib).value));
        if (t.wants_grad(ib)) t.accumulate(ib, g.cwiseProduct(t.node(ia).value));
    });
}

template <typename Scalar>
Var<Scalar> neg(const Var<Scalar>& a) {
    Matrix<Scalar> out = -a.value();
    const int ia = a.id();
    return a.tape()->record(std::move(out), a.shape(), {a},
                            [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(ia, -g); });
}

template <typename Scalar>
Var<Scalar> scale(const Var<Scalar>& a, Scalar factor) {
    Matrix<Scalar> out = a.value() * factor;
    const int ia = a.id();
    return a.tape()->record(std::move(out), a.shape(), {a},
                            [ia, factor](Tape<Scalar>& t, const Matrix<Scalar>& g) { t.accumulate(ia, g * factor); });
}

template <typename Scalar>
Var<Scalar> abs(const Var<Scalar>& a) {
    Matrix<Scalar> out = a.value().cwiseAbs();
    const int ia = a.id();
    return a.tape()->record(std::move(out), a.shape(), {a}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& x = t.node(ia).value;
        t.accumulate(ia, g.cwiseProduct(x.unaryExpr([](Scalar v) { return Scalar((v > 0) - (v < 0)); })));
    });
}

/// Adds a 1 x n row vector to every row of a.
template <typename Scalar>
Var<Scalar> add_row(const Var<Scalar>& a, const Var<Scalar>& row) {
    detail::require_matrix(a, "add_row");
    if (row.value().size() != a.cols())
        throw DimensionError("add_row: " + to_string(row.shape()) + " cannot broadcast over " + to_string(a.shape()));
    Matrix<Scalar> out = a.value();
    const auto r = Eigen::Map<const Matrix<Scalar>>(row.value().data(), 1, a.cols());
    out.rowwise() += r.row(0);
    const int ia = a.id(), ir = row.id();
    return a.tape()->record(std::move(out), a.shape(), {a, row}, [ia, ir](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        t.accumulate(ia, g);
        if (t.wants_grad(ir)) {
            const auto& rv = t.node(ir).value;
            Matrix<Scalar> colsum = g.colwise().sum();
            t.accumulate(ir, Eigen::Map<const Matrix<Scalar>>(colsum.data(), rv.rows(), rv.cols()));
        }
    });
}

/// Multiplies row i of a by weights[i]; weights has one entry per row.
template <typename Scalar>
Var<Scalar> scale_rows(const Var<Scalar>& a, const Var<Scalar>& weights) {
    detail::require_matrix(a, "scale_rows");
    if (weights.value().size() != a.rows())
        throw DimensionError("scale_rows: " + to_string(weights.shape()) + " weights for " + to_string(a.shape()));
    const auto w = Eigen::Map<const Vector<Scalar>>(weights.value().data(), a.rows());
    Matrix<Scalar> out = w.asDiagonal() * a.value();
    const int ia = a.id(), iw = weights.id();
    return a.tape()->record(std::move(out), a.shape(), {a, weights}, [ia, iw](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& x = t.node(ia).value;
        const auto& wv = t.node(iw).value;
        const auto wmap = Eigen::Map<const Vector<Scalar>>(wv.data(), x.rows());
        if (t.wants_grad(ia)) t.accumulate(ia, wmap.asDiagonal() * g);
        if (t.wants_grad(iw)) {
            Vector<Scalar> dw = g.cwiseProduct(x).rowwise().sum();
            t.accumulate(iw, Eigen::Map<const Matrix<Scalar>>(dw.data(), wv.rows(), wv.cols()));
        }
    });
}

namespace detail {

template <typename Scalar, typename F, typename DF>
Var<Scalar> unary(const Var<Scalar>& a, F f, DF df_from_out_and_in) {
    Matrix<Scalar> out = a.value().unaryExpr(f);
    const int ia = a.id();
    Tape<Scalar>* tape = a.tape();
    const int next = static_cast<int>(tape->size());
    return tape->record(std::move(out), a.shape(), {a}, [ia, next, df_from_out_and_in](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& x = t.node(ia).value;
        const auto& y = t.node(next).value;
        t.accumulate(ia, g.cwiseProduct(y.binaryExpr(x, df_from_out_and_in)));
    });
}

}  // namespace detail

template <typename Scalar>
Scalar stable_sigmoid(Scalar x) {
    if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
    const Scalar e = std::exp(x);
    return e / (Scalar(1) + e);
}

template <typename Scalar>
Var<Scalar> sigmoid(const Var<Scalar>& a) {
    return detail::unary(a, [](Scalar x) { return stable_sigmoid(x); },
                         [](Scalar y, Scalar) { return y * (Scalar(1) - y); });
}

template <typename Scalar>
Var<Scalar> tanh(const Var<Scalar>& a) {
    return detail::unary(a, [](Scalar x) { return std::tanh(x); }, [](Scalar y, Scalar) { return Scalar(1) - y * y; });
}

template <typename Scalar>
Var<Scalar> relu(const Var<Scalar>& a) {
    return detail::unary(a, [](Scalar x) { return x > 0 ? x : Scalar(0); },
                         [](Scalar, Scalar x) { return x > 0 ? Scalar(1) : Scalar(0); });
}

template <typename Scalar>
Var<Scalar> exp(const Var<Scalar>& a) {
    return detail::unary(a, [](Scalar x) { return std::exp(x); }, [](Scalar y, Scalar) { return y; });
}

template <typename Scalar>
Var<Scalar> log(const Var<Scalar>& a) {
    return detail::unary(a, [](Scalar x) { return std::log(x); }, [](Scalar, Scalar x) { return Scalar(1) / x; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename Scalar>
Var<Scalar> sum(const Var<Scalar>& a) {
    Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, a.value().sum());
    const int ia = a.id();
    return a.tape()->record(std::move(out), Shape{}, {a}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& x = t.node(ia).value;
        t.accumulate(ia, Matrix<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
    });
}

template <typename Scalar>
Var<Scalar> mean(const Var<Scalar>& a) {
    const Index n = a.value().size();
    if (n == 0) throw ContractError("mean of an empty tensor");
    return scale(sum(a), Scalar(1) / Scalar(n));
}

/// Sums the last axis of a matrix: [n x m] -> [n].
template <typename Scalar>
Var<Scalar> sum_last(const Var<Scalar>& a) {
    detail::require_matrix(a, "sum_last");
    Matrix<Scalar> out = a.value().rowwise().sum();
    const int ia = a.id();
    return a.tape()->record(std::move(out), Shape{a.rows()}, {a}, [ia](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& x = t.node(ia).value;
        Matrix<Scalar> acc = g.col(0).replicate(1, x.cols());
        t.accumulate(ia, acc);
    });
}

/// L1 norm of every row: [n x m] -> [n].
template <typename Scalar>
Var<Scalar> l1_norm_last(const Var<Scalar>& a) {
    return sum_last(abs(a));
}

/// out[b, i] = -sum_m |x[b, m] - y[i, m]|, without materialising the
/// b x i x m difference tensor.
template <typename Scalar>
Var<Scalar> pairwise_neg_l1(const Var<Scalar>& x, const Var<Scalar>& y) {
    detail::require_matrix(x, "pairwise_neg_l1");
    detail::require_matrix(y, "pairwise_neg_l1");
    if (x.cols() != y.cols())
        throw DimensionError("pairwise_neg_l1: feature extents differ for " + to_string(x.shape()) + " and " +
                             to_string(y.shape()));
    const auto& xv = x.value();
    const auto& yv = y.value();
    Matrix<Scalar> out(xv.rows(), yv.rows());
    for (Index b = 0; b < xv.rows(); ++b)
        for (Index i = 0; i < yv.rows(); ++i) out(b, i) = -(xv.row(b) - yv.row(i)).cwiseAbs().sum();
    Shape shape{out.rows(), out.cols()};
    const int ix = x.id(), iy = y.id();
    return x.tape()->record(std::move(out), std::move(shape), {x, y}, [ix, iy](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& xs = t.node(ix).value;
        const auto& ys = t.node(iy).value;
        Matrix<Scalar> dx = Matrix<Scalar>::Zero(xs.rows(), xs.cols());
        Matrix<Scalar> dy = Matrix<Scalar>::Zero(ys.rows(), ys.cols());
        for (Index b = 0; b < xs.rows(); ++b)
            for (Index i = 0; i < ys.rows(); ++i) {
                const Scalar gi = g(b, i);
                if (gi == Scalar(0)) continue;
                for (Index m = 0; m < xs.cols(); ++m) {
                    const Scalar diff = xs(b, m) - ys(i, m);
                    const Scalar s = Scalar((diff > 0) - (diff < 0));
                    dx(b, m) -= gi * s;
                    dy(i, m) += gi * s;
                }
            }
        t.accumulate(ix, dx);
        t.accumulate(iy, dy);
    });
}

// ---------------------------------------------------------------------------
// Softmax, convolution, dropout
// ---------------------------------------------------------------------------

/// Softmax of a rank-1 tensor within groups: segments[i] names the group of
/// element i. Every group that appears is normalised independently.
template <typename Scalar>
Var<Scalar> segment_softmax(const Var<Scalar>& logits, std::span<const Index> segments, Index n_segments) {
    const Index n = logits.value().size();
    if (static_cast<Index>(segments.size()) != n)
        throw DimensionError("segment_softmax: " + std::to_string(segments.size()) + " segment ids for " +
                             to_string(logits.shape()));
    const Scalar* x = logits.value().data();
    Vector<Scalar> seg_max = Vector<Scalar>::Constant(n_segments, -std::numeric_limits<Scalar>::infinity());
    for (Index i = 0; i < n; ++i) {
        const Index s = segments[static_cast<std::size_t>(i)];
        if (s < 0 || s >= n_segments) throw DimensionError("segment_softmax: segment id out of range");
        seg_max[s] = std::max(seg_max[s], x[i]);
    }
    Vector<Scalar> seg_sum = Vector<Scalar>::Zero(n_segments);
    Matrix<Scalar> out(n, 1);
    for (Index i = 0; i < n; ++i) {
        const Index s = segments[static_cast<std::size_t>(i)];
        out(i, 0) = std::exp(x[i] - seg_max[s]);
        seg_sum[s] += out(i, 0);
    }
    for (Index i = 0; i < n; ++i) out(i, 0) /= seg_sum[segments[static_cast<std::size_t>(i)]];

    std::vector<Index> seg(segments.begin(), segments.end());
    const int ia = logits.id();
    Tape<Scalar>* tape = logits.tape();
    const int self = static_cast<int>(tape->size());
    return tape->record(std::move(out), Shape{n}, {logits},
                        [ia, self, n_segments, seg = std::move(seg)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                            const auto& y = t.node(self).value;
                            Vector<Scalar> dot = Vector<Scalar>::Zero(n_segments);
                            for (std::size_t i = 0; i < seg.size(); ++i)
                                dot[seg[i]] += g(static_cast<Index>(i), 0) * y(static_cast<Index>(i), 0);
                            Matrix<Scalar> dx(y.rows(), 1);
                            for (std::size_t i = 0; i < seg.size(); ++i) {
                                const Index k = static_cast<Index>(i);
                                dx(k, 0) = y(k, 0) * (g(k, 0) - dot[seg[i]]);
                            }
                            const auto& src = t.node(ia).value;
                            t.accumulate(ia, Eigen::Map<const Matrix<Scalar>>(dx.data(), src.rows(), src.cols()));
                        });
}

/// Valid 2-D cross-correlation plus per-channel bias.
/// input [c_in, H, W] or [batch, c_in, H, W]; kernels [c_out, c_in, kh, kw];
/// bias [c_out]. Output keeps the input's batch convention.
template <typename Scalar>
Var<Scalar> conv2d_valid(const Var<Scalar>& input, const Var<Scalar>& kernels, const Var<Scalar>& bias) {
    const Shape& is = input.shape();
    const Shape& ks = kernels.shape();
    if (is.size() != 3 && is.size() != 4)
        throw DimensionError("conv2d_valid: input must be [c,H,W] or [b,c,H,W], got " + to_string(is));
    if (ks.size() != 4) throw DimensionError("conv2d_valid: kernels must be [o,c,kh,kw], got " + to_string(ks));
    const bool batched = is.size() == 4;
    const Index B = batched ? is[0] : 1;
    const Index C = is[batched ? 1 : 0], H = is[batched ? 2 : 1], W = is[batched ? 3 : 2];
    const Index O = ks[0], KH = ks[2], KW = ks[3];
    if (ks[1] != C)
        throw DimensionError("conv2d_valid: kernel channels " + to_string(ks) + " do not match input " + to_string(is));
    if (KH > H || KW > W)
        throw DimensionError("conv2d_valid: kernel " + to_string(ks) + " larger than input " + to_string(is));
    if (bias.value().size() != O)
        throw DimensionError("conv2d_valid: bias " + to_string(bias.shape()) + " for " + std::to_string(O) + " channels");
    const Index OH = H - KH + 1, OW = W - KW + 1;

    const Scalar* in = input.value().data();
    const Scalar* k = kernels.value().data();
    const Scalar* bv = bias.value().data();
    Shape out_shape = batched ? Shape{B, O, OH, OW} : Shape{O, OH, OW};
    auto [r, c] = storage_dims(out_shape);
    Matrix<Scalar> out(r, c);
    Scalar* o = out.data();
    for (Index b = 0; b < B; ++b)
        for (Index oc = 0; oc < O; ++oc)
            for (Index y = 0; y < OH; ++y)
                for (Index x = 0; x < OW; ++x) {
                    Scalar acc = bv[oc];
                    for (Index ic = 0; ic < C; ++ic)
                        for (Index u = 0; u < KH; ++u)
                            for (Index v = 0; v < KW; ++v)
                                acc += k[((oc * C + ic) * KH + u) * KW + v] * in[((b * C + ic) * H + y + u) * W + x + v];
                    o[((b * O + oc) * OH + y) * OW + x] = acc;
                }

    const int ii = input.id(), ik = kernels.id(), ib = bias.id();
    return input.tape()->record(
        std::move(out), std::move(out_shape), {input, kernels, bias},
        [=](Tape<Scalar>& t, const Matrix<Scalar>& g) {
            const auto& inv = t.node(ii).value;
            const auto& kv = t.node(ik).value;
            const auto& bsv = t.node(ib).value;
            Matrix<Scalar> din = Matrix<Scalar>::Zero(inv.rows(), inv.cols());
            Matrix<Scalar> dk = Matrix<Scalar>::Zero(kv.rows(), kv.cols());
            Matrix<Scalar> db = Matrix<Scalar>::Zero(bsv.rows(), bsv.cols());
            const Scalar* gp = g.data();
            const Scalar* inp = inv.data();
            const Scalar* kp = kv.data();
            Scalar* dinp = din.data();
            Scalar* dkp = dk.data();
            Scalar* dbp = db.data();
            for (Index b = 0; b < B; ++b)
                for (Index oc = 0; oc < O; ++oc)
                    for (Index y = 0; y < OH; ++y)
                        for (Index x = 0; x < OW; ++x) {
                            const Scalar go = gp[((b * O + oc) * OH + y) * OW + x];
                            if (go == Scalar(0)) continue;
                            dbp[oc] += go;
                            for (Index ic = 0; ic < C; ++ic)
                                for (Index u = 0; u < KH; ++u)
                                    for (Index v = 0; v < KW; ++v) {
                                        const Index kidx = ((oc * C + ic) * KH + u) * KW + v;
                                        const Index iidx = ((b * C + ic) * H + y + u) * W + x + v;
                                        dkp[kidx] += go * inp[iidx];
                                        dinp[iidx] += go * kp[kidx];
                                    }
                        }
            t.accumulate(ii, din);
            t.accumulate(ik, dk);
            t.accumulate(ib, db);
        });
}

/// Inverted dropout: survivors are scaled by 1/(1-rate). Identity when
/// rate is 0 or when not training.
template <typename Scalar, typename Rng>
Var<Scalar> dropout(const Var<Scalar>& a, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0) throw ContractError("dropout rate must be in [0, 1)");
    if (!training || rate == 0.0) return a;
    std::bernoulli_distribution keep(1.0 - rate);
    const Scalar s = Scalar(1.0 / (1.0 - rate));
    Matrix<Scalar> mask(a.rows(), a.cols());
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : Scalar(0);
    Matrix<Scalar> out = a.value().cwiseProduct(mask);
    const int ia = a.id();
    return a.tape()->record(std::move(out), a.shape(), {a}, [ia, mask = std::move(mask)](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        t.accumulate(ia, g.cwiseProduct(mask));
    });
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline constexpr double kProbabilityClamp = 1e-7;

template <typename Scalar>
Scalar clamp_probability(Scalar p) {
    const Scalar eps = Scalar(kProbabilityClamp);
    return std::clamp(p, eps, Scalar(1) - eps);
}

/// Mean binary cross-entropy of probabilities p against labels q. p is
/// clamped to [eps, 1-eps]; clamped entries pass no gradient.
template <typename Scalar>
Var<Scalar> bce_loss(const Var<Scalar>& p, const Matrix<Scalar>& q) {
    if (p.rows() != q.rows() || p.cols() != q.cols())
        throw DimensionError("bce_loss: probabilities " + to_string(p.shape()) + " vs labels " +
                             std::to_string(q.rows()) + "x" + std::to_string(q.cols()));
    const Index n = q.size();
    if (n == 0) throw ContractError("bce_loss: empty batch");
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
        const Scalar pc = clamp_probability(p.value().data()[i]);
        const Scalar qi = q.data()[i];
        total += qi * std::log(pc) + (Scalar(1) - qi) * std::log(Scalar(1) - pc);
    }
    Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, -total / Scalar(n));
    const int ip = p.id();
    return p.tape()->record(std::move(out), Shape{}, {p}, [ip, q, n](Tape<Scalar>& t, const Matrix<Scalar>& g) {
        const auto& pv = t.node(ip).value;
        const Scalar eps = Scalar(kProbabilityClamp);
        Matrix<Scalar> dp(pv.rows(), pv.cols());
        for (Index i = 0; i < pv.size(); ++i) {
            const Scalar pi = pv.data()[i];
            const Scalar qi = q.data()[i];
            dp.data()[i] = (pi < eps || pi > Scalar(1) - eps)
                               ? Scalar(0)
                               : -(qi / pi - (Scalar(1) - qi) / (Scalar(1) - pi)) / Scalar(n);
        }
        t.accumulate(ip, dp * g(0, 0));
    });
}

/// bce_loss(sigmoid(logits), q) fused: the value uses the clamped
/// probabilities, the gradient with respect to logits is (p - q) / N.
template <typename Scalar>
Var<Scalar> bce_with_logits(const Var<Scalar>& logits, const Matrix<Scalar>& q) {
    if (logits.rows() != q.rows() || logits.cols() != q.cols())
        throw DimensionError("bce_with_logits: logits " + to_string(logits.shape()) + " vs labels " +
                             std::to_string(q.rows()) + "x" + std::to_string(q.cols()));
    const Index n = q.size();
    if (n == 0) throw ContractError("bce_with_logits: empty batch");
    Matrix<Scalar> p = logits.value().unaryExpr([](Scalar x) { return stable_sigmoid(x); });
    Scalar total = 0;
    for (Index i = 0; i < n; ++i) {
        const Scalar pc = clamp_probability(p.data()[i]);
        const Scalar qi = q.data()[i];
        total += qi * std::log(pc) + (Scalar(1) - qi) * std::log(Scalar(1) - pc);
    }
    Matrix<Scalar> out = Matrix<Scalar>::Constant(1, 1, -total / Scalar(n));
    const int il = logits.id();
    return logits.tape()->record(std::move(out), Shape{}, {logits},
                                 [il, p = std::move(p), q, n](Tape<Scalar>& t, const Matrix<Scalar>& g) {
                                     t.accumulate(il, (p - q) * (g(0, 0) / Scalar(n)));
                                 });
}

}  // namespace kbgsat
