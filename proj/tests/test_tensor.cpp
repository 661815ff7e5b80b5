#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <vector>

#include "doctest.h"
#include "nt/finite_diff.hpp"
#include "nt/params.hpp"
#include "nt/rng.hpp"
#include "nt/tensor.hpp"

using namespace nt;

TEST_CASE("relu forward matches definition") {
    Graph g;
    Tensor x = g.constant({3}, {-1.0, 0.0, 2.0});
    Tensor y = relu(x);
    CHECK(y.values() == std::vector<double>{0.0, 0.0, 2.0});
}

TEST_CASE("log_softmax of a constant vector is -ln(n)") {
    Graph g;
    Tensor y = log_softmax(g.constant({3}, {0.0, 0.0, 0.0}));
    for (int i = 0; i < 3; ++i)
        CHECK(y.value_at(i) == doctest::Approx(-std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("log_softmax exponentiates to a distribution") {
    Rng rng(99, "logsoftmax");
    for (int trial = 0; trial < 50; ++trial) {
        Graph g;
        std::vector<double> v(5);
        for (double& x : v) x = rng.normal() * 3.0;
        Tensor y = log_softmax(g.constant({5}, v));
        double total = 0.0;
        for (int i = 0; i < 5; ++i) total += std::exp(y.value_at(i));
        CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("cosine identities") {
    Graph g;
    Tensor u = g.constant({3}, {0.3, -1.2, 2.0});
    CHECK(cosine(u, u).scalar() == doctest::Approx(1.0).epsilon(1e-12));
    Tensor a = g.constant({2}, {1.0, 0.0});
    Tensor b = g.constant({2}, {0.0, 1.0});
    CHECK(cosine(a, b).scalar() == doctest::Approx(0.0));
}

TEST_CASE("cosine of zero-norm vector raises") {
    Graph g;
    Tensor z = g.constant({2}, {0.0, 0.0});
    Tensor u = g.constant({2}, {1.0, 0.0});
    CHECK_THROWS_AS(cosine(z, u), std::domain_error);
}

TEST_CASE("relu subgradient convention: zero at and below the kink") {
    Graph g;
    Tensor x = g.leaf({2}, {-1.0, 2.0});
    g.backward(sum(relu(x)));
    CHECK(x.grad() == std::vector<double>{0.0, 1.0});
}

TEST_CASE("cosine gradient matches the analytic formula") {
    // d/du cos(u, v) at u = (1, 0), v = (0, 1) is (0, 1).
    Graph g;
    Tensor u = g.leaf({2}, {1.0, 0.0});
    Tensor v = g.constant({2}, {0.0, 1.0});
    g.backward(cosine(u, v));
    CHECK(u.grad()[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(u.grad()[1] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matmul gradient vs central differences") {
    Rng rng(41, "matmul-fd");
    for (int trial = 0; trial < 20; ++trial) {
        ParamTensor a{"a", {3, 4}, std::vector<double>(12)};
        ParamTensor b{"b", {4, 2}, std::vector<double>(8)};
        for (double& v : a.value) v = rng.normal();
        for (double& v : b.value) v = rng.normal();
        std::vector<ParamTensor*> params{&a, &b};
        auto build = [&](Graph&, Binder& binder) {
            return sum(square(matmul(binder.bind(a), binder.bind(b))));
        };
        FdCheckResult r = finite_difference_check(build, params, 1e-5);
        CHECK(r.max_rel_error < 1e-6);
        CHECK(r.coords_checked == 20);
    }
}

TEST_CASE("every primitive used by the losses passes a finite-difference check") {
    Rng rng(4242, "prim-fd");
    for (int trial = 0; trial < 100; ++trial) {
        ParamTensor x{"x", {4}, std::vector<double>(4)};
        ParamTensor y{"y", {4}, std::vector<double>(4)};
        for (double& v : x.value) v = rng.normal() + 0.1;
        for (double& v : y.value) v = rng.normal() + 0.1;
        std::vector<ParamTensor*> params{&x, &y};
        auto build = [&](Graph& g, Binder& binder) {
            Tensor tx = binder.bind(x);
            Tensor ty = binder.bind(y);
            Tensor s = add(sigmoid(tx), nt::tanh(ty));
            Tensor ls = log_softmax(mul(tx, ty));
            Tensor c = cosine(tx, ty);
            Tensor cl = clamp_min(sub(tx, ty), 0.0);
            Tensor parts = concat(concat(s, ls), concat(cl, relu(ty)));
            Tensor e = nt::exp(scale(tx, 0.1));
            Tensor lg = nt::log(add_scalar(square(ty), 1.0));
            return add(add(mean(parts), mean(add(e, lg))),
                       add(scale(c, 0.5), dot(tx, ty)));
            (void)g;
        };
        FdCheckResult r = finite_difference_check(build, params, 1e-5);
        CHECK(r.max_rel_error < 1e-4);
    }
}

TEST_CASE("backward twice raises") {
    Graph g;
    Tensor x = g.leaf({2}, {1.0, 2.0});
    Tensor root = sum(square(x));
    g.backward(root);
    CHECK_THROWS_AS(g.backward(root), std::logic_error);
}

TEST_CASE("backward requires a scalar root") {
    Graph g;
    Tensor x = g.leaf({2}, {1.0, 2.0});
    CHECK_THROWS_AS(g.backward(square(x)), std::invalid_argument);
}

TEST_CASE("shape mismatches name the primitive") {
    Graph g;
    Tensor a = g.constant({2}, {1.0, 2.0});
    Tensor b = g.constant({3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_WITH_AS(add(a, b), doctest::Contains("add"), std::invalid_argument);
    Tensor m = g.constant({2, 2}, {1.0, 0.0, 0.0, 1.0});
    CHECK_THROWS_WITH_AS(matmul(m, b), doctest::Contains("matmul"),
                         std::invalid_argument);
}

TEST_CASE("clamp_min output floor and gradient gating") {
    Graph g;
    Tensor x = g.leaf({3}, {-0.5, 0.2, 1.5});
    Tensor y = clamp_min(x, 0.0);
    for (int i = 0; i < 3; ++i) CHECK(y.value_at(i) >= 0.0);
    g.backward(sum(y));
    CHECK(x.grad() == std::vector<double>{0.0, 1.0, 1.0});
}

TEST_CASE("gather_row selects a row and routes gradient to it") {
    Graph g;
    Tensor m = g.leaf({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor r = gather_row(m, 1);
    CHECK(r.values() == std::vector<double>{4.0, 5.0, 6.0});
    g.backward(sum(r));
    CHECK(m.grad() == std::vector<double>{0, 0, 0, 1, 1, 1});
}

TEST_CASE("concat appends a row to a matrix") {
    Graph g;
    Tensor m = g.leaf({2, 2}, {1, 2, 3, 4});
    Tensor v = g.leaf({2}, {5, 6});
    Tensor out = concat(m, v);
    CHECK(out.shape() == Shape{3, 2});
    CHECK(out.values() == std::vector<double>{1, 2, 3, 4, 5, 6});
    g.backward(sum(mul(out, out)));
    CHECK(v.grad() == std::vector<double>{10.0, 12.0});
}

TEST_CASE("finite_difference_check on x^2 and kink skipping") {
    ParamTensor x{"x", {1}, {3.0}};
    std::vector<ParamTensor*> params{&x};
    auto build = [&](Graph&, Binder& binder) { return sum(square(binder.bind(x))); };
    FdCheckResult r = finite_difference_check(build, params, 1e-5);
    CHECK(r.max_rel_error < 1e-8);

    // relu kink exactly at the evaluation point: the coordinate is skipped.
    ParamTensor z{"z", {1}, {0.0}};
    std::vector<ParamTensor*> zp{&z};
    auto kinked = [&](Graph&, Binder& binder) { return sum(relu(binder.bind(z))); };
    FdCheckResult rk = finite_difference_check(kinked, zp, 1e-5);
    CHECK(rk.coords_skipped == 1);
    CHECK(rk.coords_checked == 0);
}
