#include "gsl/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

namespace gsl {

size_t shape_count(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), values(shape_count(shape), 0.0) {}

Tensor::Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    if (shape_count(shape) != values.size())
        throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    std::fill(t.values.begin(), t.values.end(), v);
    return t;
}

void Tensor::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() {
    std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const {
    for (double x : values)
        if (!std::isfinite(x)) return false;
    return true;
}

double Tensor::frobenius_norm() const {
    double s = 0;
    for (double x : values) s += x * x;
    return std::sqrt(s);
}

void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void gemm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    for (size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0;
            for (size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
            crow[j] = s;
        }
    }
}

void gemm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
    std::memset(c, 0, m * n * sizeof(double));
    for (size_t i = 0; i < k; ++i) {
        const double* arow = a + i * m;
        const double* brow = b + i * n;
        for (size_t p = 0; p < m; ++p) {
            const double av = arow[p];
            double* crow = c + p * n;
            for (size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

Tape::Node& Tape::fresh(Op op) {
    if (n_ == nodes_.size()) nodes_.emplace_back();
    Node& nd = nodes_[n_++];
    nd.op = op;
    nd.a = nd.b = -1;
    nd.c = 0.0;
    nd.lo = nd.hi = 0;
    nd.ids.clear();
    nd.external = nullptr;
    nd.requires_grad = false;
    return nd;
}

int Tape::push(Op op, int a, int b, Shape out_shape) {
    Node& nd = fresh(op);
    nd.a = a;
    nd.b = b;
    nd.val.shape = std::move(out_shape);
    nd.val.values.resize(shape_count(nd.val.shape));
    nd.requires_grad = (a >= 0 && nodes_[a].requires_grad) || (b >= 0 && nodes_[b].requires_grad);
    return static_cast<int>(n_) - 1;
}

const Tensor& Tape::v(int id) const {
    const Node& nd = nodes_[id];
    return nd.external ? *nd.external : nd.val;
}

Tensor& Tape::mut(int id) {
    return nodes_[id].val;
}

void Tape::check_var(Var var) const {
    if (var.id < 0 || static_cast<size_t>(var.id) >= n_) throw ValueError("tape: invalid variable");
}

const Tensor& Tape::value(Var var) const {
    check_var(var);
    return v(var.id);
}

Var Tape::leaf(Tensor& t, bool requires_grad) {
    Node& nd = fresh(Op::leaf);
    nd.external = &t;
    nd.requires_grad = requires_grad;
    return {static_cast<int>(n_) - 1};
}

Var Tape::constant(Tensor t) {
    Node& nd = fresh(Op::constant);
    nd.val = std::move(t);
    return {static_cast<int>(n_) - 1};
}

Var Tape::matmul(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    if (!ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.rows())
        throw ShapeError("matmul: " + shape_str(ta.shape) + " x " + shape_str(tb.shape));
    int id = push(Op::matmul_nn, a.id, b.id, {ta.rows(), tb.cols()});
    gemm_nn(ta.values.data(), tb.values.data(), mut(id).values.data(), ta.rows(), ta.cols(), tb.cols());
    return {id};
}

Var Tape::matmul_nt(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    if (!ta.is_matrix() || !tb.is_matrix() || ta.cols() != tb.cols())
        throw ShapeError("matmul_nt: " + shape_str(ta.shape) + " x " + shape_str(tb.shape) + "^T");
    int id = push(Op::matmul_nt, a.id, b.id, {ta.rows(), tb.rows()});
    gemm_nt(ta.values.data(), tb.values.data(), mut(id).values.data(), ta.rows(), ta.cols(), tb.rows());
    return {id};
}

Var Tape::matmul_tn(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    if (!ta.is_matrix() || !tb.is_matrix() || ta.rows() != tb.rows())
        throw ShapeError("matmul_tn: " + shape_str(ta.shape) + "^T x " + shape_str(tb.shape));
    int id = push(Op::matmul_tn, a.id, b.id, {ta.cols(), tb.cols()});
    gemm_tn(ta.values.data(), tb.values.data(), mut(id).values.data(), ta.cols(), ta.rows(), tb.cols());
    return {id};
}

namespace {

// Supported broadcasting: equal shapes, or one side is a one-element scalar.
enum class Bcast { equal, a_scalar, b_scalar };

Bcast bcast_kind(const Tensor& a, const Tensor& b, const char* what) {
    if (a.same_shape(b)) return Bcast::equal;
    if (a.is_scalar()) return Bcast::a_scalar;
    if (b.is_scalar()) return Bcast::b_scalar;
    throw ShapeError(std::string(what) + ": incompatible shapes " + shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

Var Tape::add(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    Bcast k = bcast_kind(ta, tb, "add");
    const Shape& out = (k == Bcast::a_scalar) ? tb.shape : ta.shape;
    int id = push(Op::add, a.id, b.id, out);
    Tensor& o = mut(id);
    const size_t n = o.size();
    switch (k) {
        case Bcast::equal:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[i] + tb.values[i];
            break;
        case Bcast::a_scalar:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[0] + tb.values[i];
            break;
        case Bcast::b_scalar:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[i] + tb.values[0];
            break;
    }
    return {id};
}

Var Tape::sub(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    Bcast k = bcast_kind(ta, tb, "sub");
    const Shape& out = (k == Bcast::a_scalar) ? tb.shape : ta.shape;
    int id = push(Op::sub, a.id, b.id, out);
    Tensor& o = mut(id);
    const size_t n = o.size();
    switch (k) {
        case Bcast::equal:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[i] - tb.values[i];
            break;
        case Bcast::a_scalar:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[0] - tb.values[i];
            break;
        case Bcast::b_scalar:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[i] - tb.values[0];
            break;
    }
    return {id};
}

Var Tape::mul(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    Bcast k = bcast_kind(ta, tb, "mul");
    const Shape& out = (k == Bcast::a_scalar) ? tb.shape : ta.shape;
    int id = push(Op::mul, a.id, b.id, out);
    Tensor& o = mut(id);
    const size_t n = o.size();
    switch (k) {
        case Bcast::equal:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[i] * tb.values[i];
            break;
        case Bcast::a_scalar:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[0] * tb.values[i];
            break;
        case Bcast::b_scalar:
            for (size_t i = 0; i < n; ++i) o.values[i] = ta.values[i] * tb.values[0];
            break;
    }
    return {id};
}

Var Tape::neg(Var a) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::neg, a.id, -1, ta.shape);
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = -ta.values[i];
    return {id};
}

Var Tape::scale(Var a, double c) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::scale, a.id, -1, ta.shape);
    nodes_[id].c = c;
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = c * ta.values[i];
    return {id};
}

Var Tape::add_scalar(Var a, double c) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::add_scalar, a.id, -1, ta.shape);
    nodes_[id].c = c;
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = ta.values[i] + c;
    return {id};
}

Var Tape::relu(Var a) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::relu, a.id, -1, ta.shape);
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = ta.values[i] > 0 ? ta.values[i] : 0.0;
    return {id};
}

Var Tape::tanh_fn(Var a) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::tanh_fn, a.id, -1, ta.shape);
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = std::tanh(ta.values[i]);
    return {id};
}

Var Tape::sigmoid(Var a) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::sigmoid, a.id, -1, ta.shape);
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = 1.0 / (1.0 + std::exp(-ta.values[i]));
    return {id};
}

Var Tape::softplus(Var a) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::softplus, a.id, -1, ta.shape);
    Tensor& o = mut(id);
    // log(1 + e^x) in logit-safe form
    for (size_t i = 0; i < o.size(); ++i) {
        const double x = ta.values[i];
        o.values[i] = std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    return {id};
}

Var Tape::square(Var a) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::square, a.id, -1, ta.shape);
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = ta.values[i] * ta.values[i];
    return {id};
}

Var Tape::rsqrt(Var a, double eps) {
    check_var(a);
    const Tensor& ta = v(a.id);
    int id = push(Op::rsqrt, a.id, -1, ta.shape);
    nodes_[id].c = eps;
    Tensor& o = mut(id);
    for (size_t i = 0; i < o.size(); ++i) o.values[i] = 1.0 / std::sqrt(ta.values[i] + eps);
    return {id};
}

Var Tape::sum(Var a, int axis) {
    check_var(a);
    const Tensor& ta = v(a.id);
    if (axis == -1) {
        int id = push(Op::sum_all, a.id, -1, {1});
        double s = 0;
        for (double x : ta.values) s += x;
        mut(id).values[0] = s;
        return {id};
    }
    if (!ta.is_matrix() || (axis != 0 && axis != 1))
        throw ShapeError("sum: invalid axis " + std::to_string(axis) + " for " + shape_str(ta.shape));
    const size_t r = ta.rows(), c = ta.cols();
    if (axis == 0) {
        int id = push(Op::sum_axis0, a.id, -1, {c});
        Tensor& o = mut(id);
        std::fill(o.values.begin(), o.values.end(), 0.0);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) o.values[j] += ta.values[i * c + j];
        return {id};
    }
    int id = push(Op::sum_axis1, a.id, -1, {r});
    Tensor& o = mut(id);
    for (size_t i = 0; i < r; ++i) {
        double s = 0;
        for (size_t j = 0; j < c; ++j) s += ta.values[i * c + j];
        o.values[i] = s;
    }
    return {id};
}

Var Tape::mean(Var a, int axis) {
    check_var(a);
    const Tensor& ta = v(a.id);
    if (axis == -1) {
        int id = push(Op::mean_all, a.id, -1, {1});
        double s = 0;
        for (double x : ta.values) s += x;
        mut(id).values[0] = s / static_cast<double>(ta.size());
        return {id};
    }
    if (!ta.is_matrix() || (axis != 0 && axis != 1))
        throw ShapeError("mean: invalid axis " + std::to_string(axis) + " for " + shape_str(ta.shape));
    const size_t r = ta.rows(), c = ta.cols();
    if (axis == 0) {
        int id = push(Op::mean_axis0, a.id, -1, {c});
        Tensor& o = mut(id);
        std::fill(o.values.begin(), o.values.end(), 0.0);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) o.values[j] += ta.values[i * c + j];
        for (size_t j = 0; j < c; ++j) o.values[j] /= static_cast<double>(r);
        return {id};
    }
    int id = push(Op::mean_axis1, a.id, -1, {r});
    Tensor& o = mut(id);
    for (size_t i = 0; i < r; ++i) {
        double s = 0;
        for (size_t j = 0; j < c; ++j) s += ta.values[i * c + j];
        o.values[i] = s / static_cast<double>(c);
    }
    return {id};
}

Var Tape::broadcast_row(Var var, size_t rows) {
    check_var(var);
    const Tensor& tv = v(var.id);
    if (tv.rank() != 1) throw ShapeError("broadcast_row: expected rank-1, got " + shape_str(tv.shape));
    const size_t c = tv.shape[0];
    int id = push(Op::broadcast_row, var.id, -1, {rows, c});
    Tensor& o = mut(id);
    for (size_t i = 0; i < rows; ++i)
        std::copy(tv.values.begin(), tv.values.end(), o.values.begin() + i * c);
    return {id};
}

Var Tape::broadcast_col(Var var, size_t cols) {
    check_var(var);
    const Tensor& tv = v(var.id);
    if (tv.rank() != 1) throw ShapeError("broadcast_col: expected rank-1, got " + shape_str(tv.shape));
    const size_t r = tv.shape[0];
    int id = push(Op::broadcast_col, var.id, -1, {r, cols});
    Tensor& o = mut(id);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < cols; ++j) o.values[i * cols + j] = tv.values[i];
    return {id};
}

Var Tape::gather_rows(Var table, std::vector<uint32_t> ids) {
    check_var(table);
    const Tensor& tt = v(table.id);
    if (!tt.is_matrix()) throw ShapeError("gather_rows: table must be a matrix");
    for (uint32_t r : ids)
        if (r >= tt.rows()) throw ValueError("gather_rows: row " + std::to_string(r) + " out of range");
    const size_t c = tt.cols();
    int id = push(Op::gather_rows, table.id, -1, {ids.size(), c});
    nodes_[id].ids = std::move(ids);
    Tensor& o = mut(id);
    const auto& idx = nodes_[id].ids;
    for (size_t i = 0; i < idx.size(); ++i)
        std::copy(tt.values.begin() + idx[i] * c, tt.values.begin() + (idx[i] + 1) * c, o.values.begin() + i * c);
    return {id};
}

Var Tape::concat_cols(Var a, Var b) {
    check_var(a);
    check_var(b);
    const Tensor& ta = v(a.id);
    const Tensor& tb = v(b.id);
    if (!ta.is_matrix() || !tb.is_matrix() || ta.rows() != tb.rows())
        throw ShapeError("concat_cols: " + shape_str(ta.shape) + " | " + shape_str(tb.shape));
    const size_t r = ta.rows(), ca = ta.cols(), cb = tb.cols();
    int id = push(Op::concat_cols, a.id, b.id, {r, ca + cb});
    nodes_[id].lo = ca;
    Tensor& o = mut(id);
    for (size_t i = 0; i < r; ++i) {
        std::copy(ta.values.begin() + i * ca, ta.values.begin() + (i + 1) * ca, o.values.begin() + i * (ca + cb));
        std::copy(tb.values.begin() + i * cb, tb.values.begin() + (i + 1) * cb, o.values.begin() + i * (ca + cb) + ca);
    }
    return {id};
}

Var Tape::slice_cols(Var a, size_t lo, size_t hi) {
    check_var(a);
    const Tensor& ta = v(a.id);
    if (!ta.is_matrix() || lo >= hi || hi > ta.cols())
        throw ShapeError("slice_cols: [" + std::to_string(lo) + "," + std::to_string(hi) + ") of " + shape_str(ta.shape));
    const size_t r = ta.rows(), c = ta.cols(), w = hi - lo;
    int id = push(Op::slice_cols, a.id, -1, {r, w});
    nodes_[id].lo = lo;
    nodes_[id].hi = hi;
    Tensor& o = mut(id);
    for (size_t i = 0; i < r; ++i)
        std::copy(ta.values.begin() + i * c + lo, ta.values.begin() + i * c + hi, o.values.begin() + i * w);
    return {id};
}

Var Tape::reshape(Var a, Shape s) {
    check_var(a);
    const Tensor& ta = v(a.id);
    if (shape_count(s) != ta.size())
        throw ShapeError("reshape: " + shape_str(ta.shape) + " -> " + shape_str(s));
    int id = push(Op::reshape, a.id, -1, s);
    mut(id).values = ta.values;
    return {id};
}

void Tape::backward(Var loss) {
    check_var(loss);
    if (backward_done_) throw ValueError("tape: backward already ran; build a fresh tape or clear() first");
    if (v(loss.id).size() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(v(loss.id).shape));

    std::vector<int> leaves;
    for (size_t i = 0; i < n_; ++i)
        if (nodes_[i].op == Op::leaf && nodes_[i].requires_grad) leaves.push_back(static_cast<int>(i));

    std::vector<Var> grads = backward_impl(loss, leaves);
    for (size_t i = 0; i < leaves.size(); ++i) {
        Tensor& t = *nodes_[leaves[i]].external;
        t.ensure_grad();
        if (!grads[i].valid()) continue;
        const Tensor& g = v(grads[i].id);
        for (size_t j = 0; j < t.grad.size(); ++j) t.grad[j] += g.values[j];
    }
    backward_done_ = true;
}

std::vector<Var> Tape::gradients(Var scalar, const std::vector<Var>& wrt) {
    check_var(scalar);
    if (v(scalar.id).size() != 1)
        throw ShapeError("gradients: source must be scalar, got " + shape_str(v(scalar.id).shape));
    std::vector<int> targets;
    targets.reserve(wrt.size());
    for (Var w : wrt) {
        check_var(w);
        targets.push_back(w.id);
    }
    return backward_impl(scalar, targets);
}

Var Tape::grad_norm_sq(Var scalar, Var wrt) {
    std::vector<Var> g = gradients(scalar, {wrt});
    if (!g[0].valid()) return constant_scalar(0.0);
    return sum(square(g[0]));
}

// Core reverse sweep. Gradients are ordinary tape nodes, so running it on an
// expression that was itself produced by a previous sweep yields second
// derivatives. The relu rule freezes its mask (subgradient 0 at the kink);
// every other rule is exact.
std::vector<Var> Tape::backward_impl(Var scalar, const std::vector<int>& targets) {
    const size_t top = n_;  // nodes created below must not be revisited
    std::vector<int> grad_of(top, -1);

    auto accum = [&](int id, Var g) {
        if (id < 0 || !nodes_[id].requires_grad) return;
        if (grad_of[id] < 0)
            grad_of[id] = g.id;
        else
            grad_of[id] = add({grad_of[id]}, g).id;
    };

    grad_of[scalar.id] = constant(Tensor::full(v(scalar.id).shape, 1.0)).id;
    if (!nodes_[scalar.id].requires_grad) {
        // constant scalar: all gradients are zero / unreachable
        std::vector<Var> out(targets.size());
        for (size_t i = 0; i < targets.size(); ++i) out[i] = Var{};
        return out;
    }

    for (int i = scalar.id; i >= 0; --i) {
        if (static_cast<size_t>(i) >= top) continue;
        if (grad_of[i] < 0 || !nodes_[i].requires_grad) continue;
        const Node& nd = nodes_[i];
        Var g{grad_of[i]};
        Var a{nd.a}, b{nd.b};
        switch (nd.op) {
            case Op::leaf:
            case Op::constant:
                break;
            case Op::matmul_nn:
                accum(nd.a, matmul_nt(g, b));
                accum(nd.b, matmul_tn(a, g));
                break;
            case Op::matmul_nt:
                accum(nd.a, matmul(g, b));
                accum(nd.b, matmul_tn(g, a));
                break;
            case Op::matmul_tn:
                accum(nd.a, matmul_nt(b, g));
                accum(nd.b, matmul(a, g));
                break;
            case Op::add: {
                const Tensor& ta = v(nd.a);
                const Tensor& tb = v(nd.b);
                accum(nd.a, ta.same_shape(v(i)) ? g : sum(g));
                accum(nd.b, tb.same_shape(v(i)) ? g : sum(g));
                break;
            }
            case Op::sub: {
                const Tensor& ta = v(nd.a);
                const Tensor& tb = v(nd.b);
                accum(nd.a, ta.same_shape(v(i)) ? g : sum(g));
                Var gb = neg(g);
                accum(nd.b, tb.same_shape(v(i)) ? gb : sum(gb));
                break;
            }
            case Op::mul: {
                const Tensor& ta = v(nd.a);
                const Tensor& tb = v(nd.b);
                Var ga = mul(g, b);
                Var gb = mul(g, a);
                accum(nd.a, ta.same_shape(v(i)) ? ga : sum(ga));
                accum(nd.b, tb.same_shape(v(i)) ? gb : sum(gb));
                break;
            }
            case Op::neg:
                accum(nd.a, neg(g));
                break;
            case Op::scale:
                accum(nd.a, scale(g, nd.c));
                break;
            case Op::add_scalar:
                accum(nd.a, g);
                break;
            case Op::relu: {
                Tensor mask(v(nd.a).shape);
                const Tensor& ta = v(nd.a);
                for (size_t j = 0; j < mask.size(); ++j) mask.values[j] = ta.values[j] > 0 ? 1.0 : 0.0;
                accum(nd.a, mul(g, constant(std::move(mask))));
                break;
            }
            case Op::tanh_fn: {
                Var y{i};
                accum(nd.a, mul(g, add_scalar(neg(mul(y, y)), 1.0)));
                break;
            }
            case Op::sigmoid: {
                Var y{i};
                accum(nd.a, mul(g, mul(y, add_scalar(neg(y), 1.0))));
                break;
            }
            case Op::softplus:
                accum(nd.a, mul(g, sigmoid(a)));
                break;
            case Op::square:
                accum(nd.a, scale(mul(g, a), 2.0));
                break;
            case Op::rsqrt: {
                Var y{i};
                accum(nd.a, scale(mul(g, mul(y, mul(y, y))), -0.5));
                break;
            }
            case Op::sum_all:
                accum(nd.a, broadcast_fill(g, v(nd.a).shape));
                break;
            case Op::mean_all:
                accum(nd.a, broadcast_fill(scale(g, 1.0 / static_cast<double>(v(nd.a).size())), v(nd.a).shape));
                break;
            case Op::sum_axis0:
                accum(nd.a, broadcast_row(g, v(nd.a).rows()));
                break;
            case Op::mean_axis0:
                accum(nd.a, broadcast_row(scale(g, 1.0 / static_cast<double>(v(nd.a).rows())), v(nd.a).rows()));
                break;
            case Op::sum_axis1:
                accum(nd.a, broadcast_col(g, v(nd.a).cols()));
                break;
            case Op::mean_axis1:
                accum(nd.a, broadcast_col(scale(g, 1.0 / static_cast<double>(v(nd.a).cols())), v(nd.a).cols()));
                break;
            case Op::broadcast_scalar:
                accum(nd.a, sum(g));
                break;
            case Op::broadcast_row:
                accum(nd.a, sum(g, 0));
                break;
            case Op::broadcast_col:
                accum(nd.a, sum(g, 1));
                break;
            case Op::gather_rows:
                accum(nd.a, scatter_rows(g, nd.ids, v(nd.a).rows()));
                break;
            case Op::scatter_rows:
                accum(nd.a, gather_rows(g, nd.ids));
                break;
            case Op::concat_cols: {
                const size_t split = nd.lo;
                accum(nd.a, slice_cols(g, 0, split));
                accum(nd.b, slice_cols(g, split, v(i).cols()));
                break;
            }
            case Op::slice_cols:
                accum(nd.a, pad_cols(g, nd.lo, v(nd.a).cols()));
                break;
            case Op::pad_cols:
                accum(nd.a, slice_cols(g, nd.lo, nd.lo + v(nd.a).cols()));
                break;
            case Op::reshape:
                accum(nd.a, reshape(g, v(nd.a).shape));
                break;
        }
    }

    std::vector<Var> out(targets.size());
    for (size_t i = 0; i < targets.size(); ++i) {
        int gid = (static_cast<size_t>(targets[i]) < top) ? grad_of[targets[i]] : -1;
        out[i] = Var{gid};
    }
    return out;
}

Var Tape::broadcast_fill(Var scalar, const Shape& s) {
    check_var(scalar);
    if (v(scalar.id).size() != 1) throw ShapeError("broadcast_fill: source must be scalar");
    int id = push(Op::broadcast_scalar, scalar.id, -1, s);
    Tensor& o = mut(id);
    std::fill(o.values.begin(), o.values.end(), v(scalar.id).values[0]);
    return {id};
}

Var Tape::scatter_rows(Var g, const std::vector<uint32_t>& ids, size_t table_rows) {
    check_var(g);
    const Tensor& tg = v(g.id);
    if (!tg.is_matrix() || tg.rows() != ids.size()) throw ShapeError("scatter_rows: bad gradient shape");
    const size_t c = tg.cols();
    int id = push(Op::scatter_rows, g.id, -1, {table_rows, c});
    nodes_[id].ids = ids;
    Tensor& o = mut(id);
    std::fill(o.values.begin(), o.values.end(), 0.0);
    for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < c; ++j) o.values[ids[i] * c + j] += tg.values[i * c + j];
    return {id};
}

Var Tape::pad_cols(Var g, size_t lo, size_t total_cols) {
    check_var(g);
    const Tensor& tg = v(g.id);
    if (!tg.is_matrix() || lo + tg.cols() > total_cols) throw ShapeError("pad_cols: bad bounds");
    const size_t r = tg.rows(), w = tg.cols();
    int id = push(Op::pad_cols, g.id, -1, {r, total_cols});
    nodes_[id].lo = lo;
    Tensor& o = mut(id);
    std::fill(o.values.begin(), o.values.end(), 0.0);
    for (size_t i = 0; i < r; ++i)
        std::copy(tg.values.begin() + i * w, tg.values.begin() + (i + 1) * w, o.values.begin() + i * total_cols + lo);
    return {id};
}

void Tape::clear() {
    n_ = 0;
    backward_done_ = false;
}

}  // namespace gsl
