#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

#include "gsl/errors.hpp"

namespace gsl {

using Shape = std::vector<size_t>;

// Dense row-major 64-bit float array, rank 0..2 in practice.
// grad is empty until a backward pass touches the tensor.
struct Tensor {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;

    Tensor() = default;
    explicit Tensor(Shape s);
    Tensor(Shape s, std::vector<double> v);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    size_t size() const { return values.size(); }
    size_t rank() const { return shape.size(); }
    bool is_matrix() const { return shape.size() == 2; }
    bool is_scalar() const { return size() == 1; }
    size_t rows() const { return shape.at(0); }
    size_t cols() const { return shape.at(1); }

    double& at(size_t r, size_t c) { return values[r * shape[1] + c]; }
    double at(size_t r, size_t c) const { return values[r * shape[1] + c]; }

    void ensure_grad();          // allocate + zero if absent
    void zero_grad();            // zero if allocated
    bool all_finite() const;
    double frobenius_norm() const;

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

size_t shape_count(const Shape& s);
std::string shape_str(const Shape& s);

// Raw matrix kernels shared by the tape and the spectral module.
// C is overwritten. A is m x k, result m x n.
void gemm_nn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
// C = A * B^T, A m x k, B n x k.
void gemm_nt(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
// C = A^T * B, A k x m, B k x n.
void gemm_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);

// Reverse-mode tape. Operations evaluate eagerly; backward walks the
// recorded list in reverse and *builds gradients as tape nodes*, so second
// derivatives come from running backward on an expression produced by
// gradients(). The node list is rebuilt every step; clear() keeps buffers
// so a steady-state training loop does not allocate.
class Tape {
  public:
    struct Var {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    enum class Op : uint8_t {
        leaf,
        constant,
        matmul_nn,
        matmul_nt,
        matmul_tn,
        add,
        sub,
        mul,
        neg,
        scale,       // x * c
        add_scalar,  // x + c
        relu,
        tanh_fn,
        sigmoid,
        softplus,
        square,
        rsqrt,  // (x + c)^(-1/2)
        sum_all,
        mean_all,
        sum_axis0,
        mean_axis0,
        sum_axis1,
        mean_axis1,
        broadcast_scalar,  // {1} -> shape
        broadcast_row,     // {n} -> {rows, n}
        broadcast_col,     // {m} -> {m, cols}
        gather_rows,
        scatter_rows,  // backward pair of gather_rows
        concat_cols,
        slice_cols,
        pad_cols,  // backward pair of slice_cols
        reshape,
    };

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaves reference external storage; the referenced tensor must outlive
    // any use of this tape (single-threaded by contract).
    Var leaf(Tensor& t, bool requires_grad = true);
    Var constant(Tensor t);
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    Var matmul(Var a, Var b);
    Var matmul_nt(Var a, Var b);
    Var matmul_tn(Var a, Var b);

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, double c);
    Var add_scalar(Var a, double c);

    Var relu(Var a);
    Var tanh_fn(Var a);
    Var sigmoid(Var a);
    Var softplus(Var a);
    Var square(Var a);
    Var rsqrt(Var a, double eps);

    // axis = -1 reduces everything to a scalar; axis 0 -> {cols}, axis 1 -> {rows}.
    Var sum(Var a, int axis = -1);
    Var mean(Var a, int axis = -1);

    Var broadcast_row(Var v, size_t rows);
    Var broadcast_col(Var v, size_t cols);
    Var gather_rows(Var table, std::vector<uint32_t> ids);
    Var concat_cols(Var a, Var b);
    Var slice_cols(Var a, size_t lo, size_t hi);
    Var reshape(Var a, Shape s);

    const Tensor& value(Var v) const;
    size_t size() const { return n_; }

    // Accumulates d(loss)/d(leaf) into each requires-grad leaf's .grad.
    // May be called once per tape; a second call throws.
    void backward(Var loss);

    // Create-graph mode: returns d(scalar)/d(wrt[i]) as tape variables
    // (invalid Var where unreachable). Does not touch leaf .grad and does
    // not consume the tape's single backward() call.
    std::vector<Var> gradients(Var scalar, const std::vector<Var>& wrt);

    // Convenience for the second-order penalty path: the squared Euclidean
    // norm of d(scalar)/d(wrt), as a differentiable tape variable.
    Var grad_norm_sq(Var scalar, Var wrt);

    void clear();

  private:
    struct Node {
        Op op = Op::constant;
        int a = -1, b = -1;
        double c = 0.0;                // scale factor / added scalar / rsqrt eps
        size_t lo = 0, hi = 0;         // slice bounds, broadcast extents, pad width
        std::vector<uint32_t> ids;     // gather/scatter row indices
        Tensor val;                    // owned output (unused for leaves)
        Tensor* external = nullptr;    // leaf storage
        bool requires_grad = false;
    };

    Node& fresh(Op op);
    int push(Op op, int a, int b, Shape out_shape);
    const Tensor& v(int id) const;
    Tensor& mut(int id);
    void check_var(Var v) const;
    std::vector<Var> backward_impl(Var scalar, const std::vector<int>& targets);

    // backward-rule counterparts of the reductions / views above
    Var broadcast_fill(Var scalar, const Shape& s);
    Var scatter_rows(Var g, const std::vector<uint32_t>& ids, size_t table_rows);
    Var pad_cols(Var g, size_t lo, size_t total_cols);

    // deque: op builders and the backward sweep hold references to earlier
    // nodes while appending new ones, so storage must not move on growth
    std::deque<Node> nodes_;
    size_t n_ = 0;  // live prefix of nodes_; slots beyond keep their buffers
    bool backward_done_ = false;
};

using Var = Tape::Var;

}  // namespace gsl
