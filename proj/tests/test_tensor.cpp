#include <cmath>

#include "doctest.h"
#include "gsl/rng.hpp"
#include "gsl/tensor.hpp"
#include "oracles.hpp"

using namespace gsl;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1, double hi = 1) {
    Tensor t(std::move(s));
    for (double& v : t.values) v = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul identity and hand arithmetic") {
    Tape t;
    Tensor eye({3, 3});
    for (int i = 0; i < 3; ++i) eye.values[i * 3 + i] = 1.0;
    Rng rng(7, 0);
    Tensor b = random_tensor({3, 4}, rng);
    Var out = t.matmul(t.constant(eye), t.constant(b));
    for (size_t i = 0; i < b.size(); ++i) CHECK(t.value(out).values[i] == doctest::Approx(b.values[i]));

    Tensor a({2, 2}, {1, 2, 3, 4});
    Tensor ones({2, 1}, {1, 1});
    Var prod = t.matmul(t.constant(a), t.constant(ones));
    CHECK(t.value(prod).values[0] == doctest::Approx(3));
    CHECK(t.value(prod).values[1] == doctest::Approx(7));
}

TEST_CASE("matmul shape mismatch names both shapes") {
    Tape t;
    Var a = t.constant(Tensor({2, 3}));
    Var b = t.constant(Tensor({4, 2}));
    CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("2x3"), ShapeError);
}

TEST_CASE("matmul backward matches finite differences") {
    Rng rng(11, 0);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    auto loss = [&]() {
        Tape t;
        // weigh entries so the gradient is not uniform
        Tensor w({4, 3});
        for (size_t i = 0; i < w.size(); ++i) w.values[i] = 0.1 * static_cast<double>(i + 1);
        Var out = t.matmul(t.leaf(a), t.leaf(b));
        return t.value(t.sum(t.mul(out, t.constant(w)))).values[0];
    };
    std::vector<double> fd_a = oracle::finite_diff(loss, a.values);
    std::vector<double> fd_b = oracle::finite_diff(loss, b.values);

    Tape t;
    Tensor w({4, 3});
    for (size_t i = 0; i < w.size(); ++i) w.values[i] = 0.1 * static_cast<double>(i + 1);
    Var av = t.leaf(a), bv = t.leaf(b);
    t.backward(t.sum(t.mul(t.matmul(av, bv), t.constant(w))));
    CHECK(oracle::max_rel_err(a.grad, fd_a) <= 1e-6);
    CHECK(oracle::max_rel_err(b.grad, fd_b) <= 1e-6);
}

TEST_CASE("elementwise basics") {
    Tape t;
    Var r = t.relu(t.constant(Tensor({3}, {-1, 0, 2})));
    CHECK(t.value(r).values == std::vector<double>{0, 0, 2});

    Tensor x0 = Tensor::scalar(0.0);
    Tape t2;
    Var y = t2.tanh_fn(t2.leaf(x0));
    CHECK(t2.value(y).values[0] == doctest::Approx(0.0));
    t2.backward(y);
    CHECK(x0.grad[0] == doctest::Approx(1.0));
}

TEST_CASE("composite elementwise gradient vs finite differences") {
    Rng rng(3, 0);
    Tensor x = random_tensor({2, 3}, rng);
    Tensor y = random_tensor({2, 3}, rng);
    auto loss = [&]() {
        Tape t;
        Var xv = t.leaf(x), yv = t.leaf(y);
        Var expr = t.mul(t.tanh_fn(xv), t.add(yv, t.square(xv)));
        expr = t.sub(expr, t.scale(yv, 0.5));
        return t.value(t.mean(expr)).values[0];
    };
    std::vector<double> fd_x = oracle::finite_diff(loss, x.values);
    std::vector<double> fd_y = oracle::finite_diff(loss, y.values);
    Tape t;
    Var xv = t.leaf(x), yv = t.leaf(y);
    Var expr = t.sub(t.mul(t.tanh_fn(xv), t.add(yv, t.square(xv))), t.scale(yv, 0.5));
    t.backward(t.mean(expr));
    CHECK(oracle::max_rel_err(x.grad, fd_x) <= 1e-6);
    CHECK(oracle::max_rel_err(y.grad, fd_y) <= 1e-6);
}

TEST_CASE("scalar broadcasting only; incompatible shapes rejected") {
    Tape t;
    Var s = t.constant_scalar(2.0);
    Var m = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
    Var sum = t.add(s, m);
    CHECK(t.value(sum).values == std::vector<double>{3, 4, 5, 6});
    Var bad = t.constant(Tensor({3}, {1, 2, 3}));
    CHECK_THROWS_AS(t.add(m, bad), ShapeError);
}

TEST_CASE("reductions") {
    Tape t;
    Var v = t.mean(t.constant(Tensor({3}, {1, 2, 3})));
    CHECK(t.value(v).values[0] == doctest::Approx(2.0));

    Var ones = t.constant(Tensor::full({2, 2}, 1.0));
    Var s0 = t.sum(ones, 0);
    CHECK(t.value(s0).values == std::vector<double>{2, 2});

    CHECK_THROWS_AS(t.sum(ones, 2), ShapeError);

    Tensor x = Tensor::full({5}, 1.0);
    Tape t2;
    t2.backward(t2.mean(t2.leaf(x)));
    for (double g : x.grad) CHECK(g == doctest::Approx(0.2));
}

TEST_CASE("backward seeds ones and reaches all leaves") {
    Tensor w = Tensor::full({3, 2}, 0.5);
    Tape t;
    t.backward(t.sum(t.leaf(w)));
    for (double g : w.grad) CHECK(g == doctest::Approx(1.0));
}

TEST_CASE("backward twice without reset is an error") {
    Tensor w = Tensor::full({2}, 1.0);
    Tape t;
    Var loss = t.sum(t.leaf(w));
    t.backward(loss);
    CHECK_THROWS_AS(t.backward(loss), ValueError);
    t.clear();  // fresh tape is fine again
    Var loss2 = t.sum(t.leaf(w));
    t.backward(loss2);
}

TEST_CASE("non-scalar loss rejected") {
    Tensor w = Tensor::full({2}, 1.0);
    Tape t;
    Var v = t.leaf(w);
    CHECK_THROWS_AS(t.backward(v), ShapeError);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
    Rng rng(42, 0);
    Tensor x = random_tensor({4, 3}, rng);
    Tensor w1 = random_tensor({3, 5}, rng);
    Tensor b1 = random_tensor({5}, rng);
    Tensor w2 = random_tensor({5, 2}, rng);
    auto loss = [&]() {
        Tape t;
        Var h = t.tanh_fn(t.add(t.matmul(t.constant(x), t.leaf(w1)), t.broadcast_row(t.leaf(b1), 4)));
        Var out = t.matmul(h, t.leaf(w2));
        return t.value(t.mean(t.square(out))).values[0];
    };
    auto fd_w1 = oracle::finite_diff(loss, w1.values);
    auto fd_b1 = oracle::finite_diff(loss, b1.values);
    auto fd_w2 = oracle::finite_diff(loss, w2.values);
    Tape t;
    Var h = t.tanh_fn(t.add(t.matmul(t.constant(x), t.leaf(w1)), t.broadcast_row(t.leaf(b1), 4)));
    t.backward(t.mean(t.square(t.matmul(h, t.leaf(w2)))));
    CHECK(oracle::max_rel_err(w1.grad, fd_w1) <= 1e-5);
    CHECK(oracle::max_rel_err(b1.grad, fd_b1) <= 1e-5);
    CHECK(oracle::max_rel_err(w2.grad, fd_w2) <= 1e-5);
}

TEST_CASE("tape replay yields identical gradients") {
    Rng rng(5, 0);
    Tensor w = random_tensor({4, 4}, rng);
    auto run = [&]() {
        w.grad.clear();
        Tape t;
        Var out = t.mean(t.square(t.relu(t.leaf(w))));
        t.backward(out);
        return w.grad;
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1 == g2);
}

TEST_CASE("forward determinism is bit exact") {
    Rng rng(9, 0);
    Tensor a = random_tensor({6, 6}, rng);
    Tensor b = random_tensor({6, 6}, rng);
    Tape t1, t2;
    Var o1 = t1.matmul(t1.tanh_fn(t1.constant(a)), t1.constant(b));
    Var o2 = t2.matmul(t2.tanh_fn(t2.constant(a)), t2.constant(b));
    CHECK(t1.value(o1).values == t2.value(o2).values);
}

TEST_CASE("second order: linear function") {
    // f(x) = a.x => ||grad_x f||^2 = ||a||^2, d/da = 2a
    Tensor a({1, 2}, {3.0, 4.0});
    Tensor x({2, 1}, {0.7, -0.2});
    Tape t;
    Var xv = t.leaf(x);
    Var f = t.sum(t.matmul(t.leaf(a), xv));
    Var pen = t.grad_norm_sq(f, xv);
    CHECK(t.value(pen).values[0] == doctest::Approx(25.0));
    t.backward(pen);
    CHECK(a.grad[0] == doctest::Approx(6.0));
    CHECK(a.grad[1] == doctest::Approx(8.0));
}

TEST_CASE("second order: tanh parameter gradient vs finite differences") {
    // f(x) = sum tanh(w x); penalty = ||d f / d x||^2; check d penalty / d w.
    Rng rng(13, 0);
    Tensor w = random_tensor({3, 2}, rng);
    Tensor x = random_tensor({1, 3}, rng);
    auto penalty_value = [&]() {
        Tape t;
        Var xv = t.leaf(x);
        Var f = t.sum(t.tanh_fn(t.matmul(xv, t.leaf(w))));
        return t.value(t.grad_norm_sq(f, xv)).values[0];
    };
    auto fd = oracle::finite_diff(penalty_value, w.values, 1e-5);
    Tape t;
    Var xv = t.leaf(x);
    Var f = t.sum(t.tanh_fn(t.matmul(xv, t.leaf(w))));
    t.backward(t.grad_norm_sq(f, xv));
    CHECK(oracle::max_rel_err(w.grad, fd, 1e-4) <= 1e-4);
}

TEST_CASE("second order: constant function gives zero") {
    Tensor x({2, 2});
    Tape t;
    Var xv = t.leaf(x);
    Var f = t.constant_scalar(5.0);
    Var pen = t.grad_norm_sq(f, xv);
    CHECK(t.value(pen).values[0] == doctest::Approx(0.0));
}

TEST_CASE("gather/scatter, concat and slice round trips") {
    Rng rng(21, 0);
    Tensor table = random_tensor({5, 3}, rng);
    Tape t;
    Var g = t.gather_rows(t.leaf(table), {4, 0, 4});
    CHECK(t.value(g).rows() == 3);
    t.backward(t.sum(g));
    // row 4 picked twice, row 0 once, rows 1..3 untouched
    CHECK(table.grad[4 * 3] == doctest::Approx(2.0));
    CHECK(table.grad[0] == doctest::Approx(1.0));
    CHECK(table.grad[1 * 3] == doctest::Approx(0.0));

    Tape t2;
    Tensor z = random_tensor({2, 6}, rng);
    Var zv = t2.constant(z);
    Var left = t2.slice_cols(zv, 0, 3), right = t2.slice_cols(zv, 3, 6);
    Var back = t2.concat_cols(left, right);
    CHECK(t2.value(back).values == z.values);
}

TEST_SUITE_END();
