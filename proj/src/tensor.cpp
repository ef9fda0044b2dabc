#include "fdg2s/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fdg2s::ad {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d == 0) throw Error(ErrorCode::ShapeMismatch, "zero dimension in shape");
        n *= d;
    }
    return n;
}

void require_same_tape(const Var& a, const Var& b) {
    if (a.tape() != b.tape())
        throw Error(ErrorCode::ShapeMismatch, "operands recorded on different tapes");
}

std::string shape_str(const Tensor& t) {
    std::string s = "[";
    for (std::size_t i = 0; i < t.shape().size(); ++i) {
        if (i) s += "x";
        s += std::to_string(t.shape()[i]);
    }
    return s + "]";
}

} // namespace

// =============================================================================
// Tensor
// =============================================================================

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
    if (shape_product(shape_) != data_.size())
        throw Error(ErrorCode::ShapeMismatch, "shape product does not match buffer length");
}

Tensor Tensor::ones(std::vector<std::size_t> shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
}

Tensor Tensor::eye(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
    return t;
}

double Tensor::item() const {
    if (size() != 1) throw Error(ErrorCode::NonScalarLoss, "item() on tensor of size " + std::to_string(size()));
    return data_[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

// =============================================================================
// Tape
// =============================================================================

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::leaf(Tensor value, bool trainable) {
    nodes_.push_back(Node{std::move(value), trainable, nullptr});
    return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, BackwardFn back) {
    nodes_.push_back(Node{std::move(value), false, std::move(back)});
    return Var(this, nodes_.size() - 1);
}

GradMap Tape::backward(const Var& loss) {
    if (consumed_) throw Error(ErrorCode::TapeConsumed, "backward already called; reset() the tape first");
    if (loss.tape() != this) throw Error(ErrorCode::NonScalarLoss, "loss recorded on a different tape");
    if (loss.value().size() != 1) throw Error(ErrorCode::NonScalarLoss, "loss must be a scalar");
    consumed_ = true;

    std::vector<Tensor> grads(nodes_.size());
    std::vector<char> has_grad(nodes_.size(), 0);
    grads[loss.id()] = Tensor::scalar(1.0);
    has_grad[loss.id()] = 1;

    for (std::size_t i = nodes_.size(); i-- > 0;) {
        if (!has_grad[i] || !nodes_[i].back) continue;
        nodes_[i].back(*this, grads[i], grads, has_grad);
    }

    GradMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (!nodes_[i].trainable) continue;
        if (has_grad[i])
            out.emplace(i, std::move(grads[i]));
        else
            out.emplace(i, Tensor::zeros(nodes_[i].value.shape()));
    }
    return out;
}

void Tape::reset() {
    nodes_.clear();
    consumed_ = false;
}

void accumulate_grad(std::vector<Tensor>& grads, std::vector<char>& has_grad,
                     std::size_t id, const Tensor& g) {
    if (!has_grad[id]) {
        grads[id] = g;
        has_grad[id] = 1;
        return;
    }
    Tensor& acc = grads[id];
    for (std::size_t k = 0; k < acc.size(); ++k) acc.at(k) += g.at(k);
}

// =============================================================================
// Elementwise binaries
// =============================================================================

namespace {

enum class Bcast { None, LeftScalar, RightScalar };

Bcast binary_mode(const Tensor& a, const Tensor& b) {
    if (a.same_shape(b)) return Bcast::None;
    if (a.size() == 1) return Bcast::LeftScalar;
    if (b.size() == 1) return Bcast::RightScalar;
    throw Error(ErrorCode::ShapeMismatch,
                "elementwise operands " + shape_str(a) + " vs " + shape_str(b));
}

// Reduce a full-shape gradient onto a scalar operand.
Tensor reduce_to_scalar(const Tensor& g) {
    double s = 0.0;
    for (std::size_t k = 0; k < g.size(); ++k) s += g.at(k);
    return Tensor::scalar(s);
}

template <typename Fwd, typename BackA, typename BackB>
Var binary_op(Var a, Var b, Fwd fwd, BackA back_a, BackB back_b) {
    require_same_tape(a, b);
    Tape& tape = *a.tape();
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    Bcast mode = binary_mode(av, bv);

    const Tensor& big = (mode == Bcast::LeftScalar) ? bv : av;
    Tensor out(big.shape());
    for (std::size_t k = 0; k < out.size(); ++k) {
        double x = (mode == Bcast::LeftScalar) ? av.at(0) : av.at(k);
        double y = (mode == Bcast::RightScalar) ? bv.at(0) : bv.at(k);
        out.at(k) = fwd(x, y);
    }

    std::size_t aid = a.id(), bid = b.id();
    return tape.record(std::move(out),
                       [aid, bid, mode, back_a, back_b](Tape& t, const Tensor& gout,
                                                        std::vector<Tensor>& grads,
                                                        std::vector<char>& has) {
                           const Tensor& av = t.value(aid);
                           const Tensor& bv = t.value(bid);
                           Tensor ga((mode == Bcast::LeftScalar) ? bv.shape() : av.shape());
                           Tensor gb((mode == Bcast::RightScalar) ? av.shape() : bv.shape());
                           for (std::size_t k = 0; k < gout.size(); ++k) {
                               double x = (mode == Bcast::LeftScalar) ? av.at(0) : av.at(k);
                               double y = (mode == Bcast::RightScalar) ? bv.at(0) : bv.at(k);
                               ga.at(k) = back_a(x, y) * gout.at(k);
                               gb.at(k) = back_b(x, y) * gout.at(k);
                           }
                           if (mode == Bcast::LeftScalar)
                               accumulate_grad(grads, has, aid, reduce_to_scalar(ga));
                           else
                               accumulate_grad(grads, has, aid, ga);
                           if (mode == Bcast::RightScalar)
                               accumulate_grad(grads, has, bid, reduce_to_scalar(gb));
                           else
                               accumulate_grad(grads, has, bid, gb);
                       });
}

} // namespace

Var add(Var a, Var b) {
    return binary_op(a, b, [](double x, double y) { return x + y; },
                     [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
    return binary_op(a, b, [](double x, double y) { return x - y; },
                     [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
    return binary_op(a, b, [](double x, double y) { return x * y; },
                     [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var div(Var a, Var b) {
    const Tensor& bv = b.value();
    for (std::size_t k = 0; k < bv.size(); ++k)
        if (bv.at(k) == 0.0)
            throw Error(ErrorCode::DivisionDomain, "elementwise divide by exact zero");
    return binary_op(a, b, [](double x, double y) { return x / y; },
                     [](double, double y) { return 1.0 / y; },
                     [](double x, double y) { return -x / (y * y); });
}

Var add_scalar(Var a, double s) {
    Tape& tape = *a.tape();
    Tensor out = a.value();
    for (std::size_t k = 0; k < out.size(); ++k) out.at(k) += s;
    std::size_t aid = a.id();
    return tape.record(std::move(out),
                       [aid](Tape&, const Tensor& gout, std::vector<Tensor>& grads,
                             std::vector<char>& has) { accumulate_grad(grads, has, aid, gout); });
}

Var mul_scalar(Var a, double s) {
    Tape& tape = *a.tape();
    Tensor out = a.value();
    for (std::size_t k = 0; k < out.size(); ++k) out.at(k) *= s;
    std::size_t aid = a.id();
    return tape.record(std::move(out),
                       [aid, s](Tape& , const Tensor& gout, std::vector<Tensor>& grads,
                                std::vector<char>& has) {
                           Tensor g(gout.shape());
                           for (std::size_t k = 0; k < g.size(); ++k) g.at(k) = s * gout.at(k);
                           accumulate_grad(grads, has, aid, g);
                       });
}

// =============================================================================
// Linear algebra
// =============================================================================

namespace {

Tensor matmul_values(const Tensor& a, const Tensor& b) {
    std::size_t n = a.rows(), k = a.cols(), m = b.cols();
    Tensor out({n, m});
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a.data() + i * k;
        double* orow = out.data() + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor transpose_values(const Tensor& a) {
    Tensor out({a.cols(), a.rows()});
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

} // namespace

Var matmul(Var a, Var b) {
    require_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2)
        throw Error(ErrorCode::ShapeMismatch, "matmul requires rank-2 operands");
    if (av.cols() != bv.rows())
        throw Error(ErrorCode::ShapeMismatch,
                    "matmul inner dims " + shape_str(av) + " vs " + shape_str(bv));
    Tape& tape = *a.tape();
    std::size_t aid = a.id(), bid = b.id();
    return tape.record(matmul_values(av, bv),
                       [aid, bid](Tape& t, const Tensor& gout, std::vector<Tensor>& grads,
                                  std::vector<char>& has) {
                           const Tensor& av = t.value(aid);
                           const Tensor& bv = t.value(bid);
                           accumulate_grad(grads, has, aid, matmul_values(gout, transpose_values(bv)));
                           accumulate_grad(grads, has, bid, matmul_values(transpose_values(av), gout));
                       });
}

Var transpose(Var a) {
    const Tensor& av = a.value();
    if (av.rank() != 2) throw Error(ErrorCode::ShapeMismatch, "transpose requires rank-2");
    Tape& tape = *a.tape();
    std::size_t aid = a.id();
    return tape.record(transpose_values(av),
                       [aid](Tape&, const Tensor& gout, std::vector<Tensor>& grads,
                             std::vector<char>& has) {
                           accumulate_grad(grads, has, aid, transpose_values(gout));
                       });
}

// =============================================================================
// Shape ops
// =============================================================================

Var concat(Var a, Var b, int axis) {
    require_same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != bv.rank() || av.rank() > 2 || axis < 0 || axis >= static_cast<int>(av.rank()))
        throw Error(ErrorCode::ShapeMismatch, "concat rank/axis");

    Tensor out;
    if (av.rank() == 1) {
        std::vector<double> v(av.values());
        v.insert(v.end(), bv.values().begin(), bv.values().end());
        out = Tensor({av.size() + bv.size()}, std::move(v));
    } else if (axis == 0) {
        if (av.cols() != bv.cols()) throw Error(ErrorCode::ShapeMismatch, "concat axis 0 cols differ");
        std::vector<double> v(av.values());
        v.insert(v.end(), bv.values().begin(), bv.values().end());
        out = Tensor({av.rows() + bv.rows(), av.cols()}, std::move(v));
    } else {
        if (av.rows() != bv.rows()) throw Error(ErrorCode::ShapeMismatch, "concat axis 1 rows differ");
        out = Tensor({av.rows(), av.cols() + bv.cols()});
        for (std::size_t i = 0; i < av.rows(); ++i) {
            for (std::size_t j = 0; j < av.cols(); ++j) out.at(i, j) = av.at(i, j);
            for (std::size_t j = 0; j < bv.cols(); ++j) out.at(i, av.cols() + j) = bv.at(i, j);
        }
    }

    std::size_t aid = a.id(), bid = b.id();
    return a.tape()->record(
        std::move(out), [aid, bid, axis](Tape& t, const Tensor& gout, std::vector<Tensor>& grads,
                                         std::vector<char>& has) {
            const Tensor& av = t.value(aid);
            const Tensor& bv = t.value(bid);
            Tensor ga(av.shape()), gb(bv.shape());
            if (av.rank() == 1 || axis == 0) {
                for (std::size_t k = 0; k < ga.size(); ++k) ga.at(k) = gout.at(k);
                for (std::size_t k = 0; k < gb.size(); ++k) gb.at(k) = gout.at(ga.size() + k);
            } else {
                for (std::size_t i = 0; i < av.rows(); ++i) {
                    for (std::size_t j = 0; j < av.cols(); ++j) ga.at(i, j) = gout.at(i, j);
                    for (std::size_t j = 0; j < bv.cols(); ++j) gb.at(i, j) = gout.at(i, av.cols() + j);
                }
            }
            accumulate_grad(grads, has, aid, ga);
            accumulate_grad(grads, has, bid, gb);
        });
}

Var slice(Var a, int axis, std::size_t start, std::size_t len) {
    const Tensor& av = a.value();
    if (av.rank() > 2 || axis < 0 || axis >= static_cast<int>(av.rank()))
        throw Error(ErrorCode::ShapeMismatch, "slice rank/axis");
    std::size_t dim = av.shape()[axis];
    if (start + len > dim || len == 0)
        throw Error(ErrorCode::ShapeMismatch, "slice range out of bounds");

    Tensor out;
    if (av.rank() == 1) {
        std::vector<double> v(av.values().begin() + start, av.values().begin() + start + len);
        out = Tensor({len}, std::move(v));
    } else if (axis == 0) {
        std::vector<double> v(av.values().begin() + start * av.cols(),
                              av.values().begin() + (start + len) * av.cols());
        out = Tensor({len, av.cols()}, std::move(v));
    } else {
        out = Tensor({av.rows(), len});
        for (std::size_t i = 0; i < av.rows(); ++i)
            for (std::size_t j = 0; j < len; ++j) out.at(i, j) = av.at(i, start + j);
    }

    std::size_t aid = a.id();
    return a.tape()->record(
        std::move(out), [aid, axis, start, len](Tape& t, const Tensor& gout,
                                                std::vector<Tensor>& grads, std::vector<char>& has) {
            const Tensor& av = t.value(aid);
            Tensor ga(av.shape());
            if (av.rank() == 1) {
                for (std::size_t k = 0; k < len; ++k) ga.at(start + k) = gout.at(k);
            } else if (axis == 0) {
                for (std::size_t i = 0; i < len; ++i)
                    for (std::size_t j = 0; j < av.cols(); ++j) ga.at(start + i, j) = gout.at(i, j);
            } else {
                for (std::size_t i = 0; i < av.rows(); ++i)
                    for (std::size_t j = 0; j < len; ++j) ga.at(i, start + j) = gout.at(i, j);
            }
            accumulate_grad(grads, has, aid, ga);
        });
}

// =============================================================================
// Reductions
// =============================================================================

namespace {

Var reduce_all(Var a, double scale) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t k = 0; k < av.size(); ++k) s += av.at(k);
    std::size_t aid = a.id();
    return a.tape()->record(Tensor::scalar(s * scale),
                            [aid, scale](Tape& t, const Tensor& gout, std::vector<Tensor>& grads,
                                         std::vector<char>& has) {
                                const Tensor& av = t.value(aid);
                                accumulate_grad(grads, has, aid,
                                                Tensor::full(av.shape(), gout.at(0) * scale));
                            });
}

Var reduce_axis(Var a, int axis, bool take_mean) {
    const Tensor& av = a.value();
    if (av.rank() == 1) {
        if (axis != 0) throw Error(ErrorCode::ShapeMismatch, "reduction axis exceeds rank");
        return take_mean ? mean_all(a) : sum_all(a);
    }
    if (av.rank() != 2 || axis < 0 || axis > 1)
        throw Error(ErrorCode::ShapeMismatch, "reduction axis exceeds rank");

    std::size_t n = av.rows(), m = av.cols();
    double scale = take_mean ? 1.0 / static_cast<double>(axis == 0 ? n : m) : 1.0;
    Tensor out = (axis == 0) ? Tensor({1, m}) : Tensor({n, 1});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            if (axis == 0)
                out.at(0, j) += av.at(i, j) * scale;
            else
                out.at(i, 0) += av.at(i, j) * scale;
        }

    std::size_t aid = a.id();
    return a.tape()->record(std::move(out),
                            [aid, axis, scale](Tape& t, const Tensor& gout,
                                               std::vector<Tensor>& grads, std::vector<char>& has) {
                                const Tensor& av = t.value(aid);
                                Tensor ga(av.shape());
                                for (std::size_t i = 0; i < av.rows(); ++i)
                                    for (std::size_t j = 0; j < av.cols(); ++j)
                                        ga.at(i, j) = scale * (axis == 0 ? gout.at(0, j) : gout.at(i, 0));
                                accumulate_grad(grads, has, aid, ga);
                            });
}

} // namespace

Var sum_all(Var a) { return reduce_all(a, 1.0); }
Var mean_all(Var a) { return reduce_all(a, 1.0 / static_cast<double>(a.value().size())); }
Var sum(Var a, int axis) { return reduce_axis(a, axis, false); }
Var mean(Var a, int axis) { return reduce_axis(a, axis, true); }

// =============================================================================
// Elementwise unaries
// =============================================================================
// BACK_EXPR may reference the input value x and the forward output y.

#define FDG2S_UNARY(NAME, FWD_EXPR, BACK_EXPR)                                                  \
    Var NAME(Var a) {                                                                             \
        const Tensor& av_in = a.value();                                                          \
        Tensor out(av_in.shape());                                                                \
        for (std::size_t k = 0; k < out.size(); ++k) {                                            \
            double x = av_in.at(k);                                                               \
            out.at(k) = (FWD_EXPR);                                                               \
        }                                                                                         \
        std::size_t aid = a.id();                                                                 \
        Tape& tape = *a.tape();                                                                   \
        std::size_t rid = tape.size();                                                            \
        return tape.record(std::move(out), [aid, rid](Tape& t, const Tensor& gout,               \
                                                      std::vector<Tensor>& grads,                \
                                                      std::vector<char>& has) {                  \
            const Tensor& av = t.value(aid);                                                      \
            const Tensor& yv = t.value(rid);                                                      \
            (void)av;                                                                             \
            (void)yv;                                                                             \
            Tensor ga(av.shape());                                                                \
            for (std::size_t k = 0; k < ga.size(); ++k) {                                         \
                double x = av.at(k);                                                              \
                double y = yv.at(k);                                                              \
                (void)x;                                                                          \
                (void)y;                                                                          \
                ga.at(k) = (BACK_EXPR)*gout.at(k);                                                \
            }                                                                                     \
            accumulate_grad(grads, has, aid, ga);                                                 \
        });                                                                                       \
    }

FDG2S_UNARY(exp, std::exp(x), y)
FDG2S_UNARY(log, std::log(x), 1.0 / x)
FDG2S_UNARY(sqrt, std::sqrt(x), 0.5 / y)
FDG2S_UNARY(abs, std::fabs(x), (x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0)))
FDG2S_UNARY(relu, (x > 0.0 ? x : 0.0), (x > 0.0 ? 1.0 : 0.0))
FDG2S_UNARY(sigmoid, 1.0 / (1.0 + std::exp(-x)), y * (1.0 - y))
FDG2S_UNARY(tanh, std::tanh(x), 1.0 - y * y)

#undef FDG2S_UNARY

Var softmax(Var a) {
    const Tensor& av = a.value();
    if (av.rank() > 2) throw Error(ErrorCode::ShapeMismatch, "softmax requires rank <= 2");
    std::size_t rows = (av.rank() == 2) ? av.rows() : 1;
    std::size_t cols = (av.rank() == 2) ? av.cols() : av.size();

    Tensor out(av.shape());
    for (std::size_t i = 0; i < rows; ++i) {
        const double* in = av.data() + i * cols;
        double* o = out.data() + i * cols;
        double mx = *std::max_element(in, in + cols);
        double z = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            o[j] = std::exp(in[j] - mx);
            z += o[j];
        }
        for (std::size_t j = 0; j < cols; ++j) o[j] /= z;
    }

    std::size_t aid = a.id();
    Tape& tape = *a.tape();
    std::size_t rid = tape.size();
    return tape.record(std::move(out),
                       [aid, rid, rows, cols](Tape& t, const Tensor& gout,
                                              std::vector<Tensor>& grads, std::vector<char>& has) {
                           const Tensor& yv = t.value(rid);
                           Tensor ga(t.value(aid).shape());
                           for (std::size_t i = 0; i < rows; ++i) {
                               const double* y = yv.data() + i * cols;
                               const double* g = gout.data() + i * cols;
                               double dot = 0.0;
                               for (std::size_t j = 0; j < cols; ++j) dot += g[j] * y[j];
                               double* o = ga.data() + i * cols;
                               for (std::size_t j = 0; j < cols; ++j) o[j] = y[j] * (g[j] - dot);
                           }
                           accumulate_grad(grads, has, aid, ga);
                       });
}

Var squared_norm(Var a) {
    const Tensor& av = a.value();
    double s = 0.0;
    for (std::size_t k = 0; k < av.size(); ++k) s += av.at(k) * av.at(k);
    std::size_t aid = a.id();
    return a.tape()->record(Tensor::scalar(s),
                            [aid](Tape& t, const Tensor& gout, std::vector<Tensor>& grads,
                                  std::vector<char>& has) {
                                const Tensor& av = t.value(aid);
                                Tensor ga(av.shape());
                                for (std::size_t k = 0; k < ga.size(); ++k)
                                    ga.at(k) = 2.0 * av.at(k) * gout.at(0);
                                accumulate_grad(grads, has, aid, ga);
                            });
}

// =============================================================================
// Finite differences
// =============================================================================

double finite_diff_max_rel_error(const std::function<double(const Tensor&)>& f,
                                 const Tensor& x, const Tensor& analytic_grad,
                                 double step) {
    if (!x.same_shape(analytic_grad))
        throw Error(ErrorCode::ShapeMismatch, "analytic gradient shape differs from x");
    if (step <= 0.0) throw Error(ErrorCode::InvalidScale, "finite-difference step must be > 0");

    Tensor probe = x;
    double max_err = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
        probe.at(k) = x.at(k) + step;
        double fp = f(probe);
        probe.at(k) = x.at(k) - step;
        double fm = f(probe);
        probe.at(k) = x.at(k);
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw Error(ErrorCode::NonFiniteEvaluation,
                        "objective non-finite at perturbed coordinate " + std::to_string(k));
        double numeric = (fp - fm) / (2.0 * step);
        double err = std::fabs(analytic_grad.at(k) - numeric) / std::max(std::fabs(numeric), 1e-6);
        max_err = std::max(max_err, err);
    }
    return max_err;
}

} // namespace fdg2s::ad
