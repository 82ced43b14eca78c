#include <doctest.h>

#include <dmplug/rng.hpp>
#include <dmplug/tensor.hpp>

#include "testutil.hpp"

#include <cmath>

using namespace dmplug;
using testutil::grad_check;
using testutil::random_vec;

TEST_CASE("square of a scalar leaf backprops 2x") {
    Tape tape;
    Tensor z = tape.leaf({}, {3.0});
    Tensor w = mul(z, z);
    tape.backward(w);
    CHECK(w.item() == doctest::Approx(9.0));
    CHECK(tape.grad(z)[0] == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("conv with a centered delta kernel is the identity") {
    Rng rng(11);
    auto xv = random_vec(rng, 20, -1.0, 1.0);
    Tensor x = Tensor::from_data({4, 5}, xv);
    std::vector<double> kv(9, 0.0);
    kv[4] = 1.0;
    Tensor k = Tensor::from_data({3, 3}, kv);
    Tensor y = conv2d_same(x, k);
    for (int i = 0; i < 20; ++i) CHECK(y.at(i) == doctest::Approx(xv[i]).epsilon(1e-15));
}

TEST_CASE("matmul gradient matches central differences") {
    Rng rng(7);
    auto a = random_vec(rng, 12, -1.0, 1.0);
    auto b = random_vec(rng, 8, -1.0, 1.0);
    double err = grad_check(
        [](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); },
        {{3, 4}, {4, 2}}, {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("two-step elementwise chain gradient matches central differences") {
    Rng rng(13);
    auto xv = random_vec(rng, 8, 0.2, 1.5);
    double err = grad_check(
        [](const std::vector<Tensor>& in) {
            Tensor t = exp(scale(in[0], 0.7));
            return sum(mul(t, in[0]));
        },
        {{8}}, {xv});
    CHECK(err < 1e-5);
}

TEST_CASE("leaf not feeding the loss gets a zero gradient") {
    Tape tape;
    Tensor a = tape.leaf({2}, {1.0, 2.0});
    Tensor b = tape.leaf({2}, {3.0, 4.0});
    Tensor loss = sum(mul(a, a));
    tape.backward(loss);
    CHECK(tape.grad(b)[0] == 0.0);
    CHECK(tape.grad(b)[1] == 0.0);
    CHECK(tape.grad(a)[0] == doctest::Approx(2.0));
}

TEST_CASE("independent tapes produce bitwise identical gradients") {
    auto run = [] {
        Rng rng(99);
        auto xv = random_vec(rng, 16, -1.0, 1.0);
        Tape tape;
        Tensor x = tape.leaf({4, 4}, xv);
        Tensor k = Tensor::from_data({3, 3}, random_vec(rng, 9, -0.3, 0.3));
        Tensor loss = mse(conv2d_same(x, k), Tensor::zeros({4, 4}));
        tape.backward(loss);
        return tape.grad(x);
    };
    auto g1 = run();
    auto g2 = run();
    REQUIRE(g1.size() == g2.size());
    for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == g2[i]);
}

TEST_CASE("forward evaluation is deterministic bitwise") {
    Rng rng(5);
    auto xv = random_vec(rng, 24, -2.0, 2.0);
    Tensor x = Tensor::from_data({4, 6}, xv);
    Tensor y1 = silu(tanh(scale(x, 0.9)));
    Tensor y2 = silu(tanh(scale(x, 0.9)));
    for (int64_t i = 0; i < y1.size(); ++i) CHECK(y1.at(i) == y2.at(i));
}

TEST_CASE("gradient of composed random affine maps obeys the chain rule") {
    Rng rng(21);
    auto A = random_vec(rng, 6 * 4, -1.0, 1.0);
    auto B = random_vec(rng, 3 * 6, -1.0, 1.0);
    auto xv = random_vec(rng, 4, -1.0, 1.0);
    auto w = random_vec(rng, 3, -1.0, 1.0);

    Tape tape;
    Tensor x = tape.leaf({4}, xv);
    Tensor y = matmul(Tensor::from_data({3, 6}, B),
                      matmul(Tensor::from_data({6, 4}, A), x));
    Tensor loss = sum(mul(Tensor::from_data({3}, w), y));
    tape.backward(loss);

    // chain rule by hand: grad = A^T B^T w
    std::vector<double> btw(6, 0.0);
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 6; ++j) btw[j] += B[i * 6 + j] * w[i];
    for (int j = 0; j < 4; ++j) {
        double expect = 0.0;
        for (int i = 0; i < 6; ++i) expect += A[i * 4 + j] * btw[i];
        CHECK(tape.grad(x)[j] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("every primitive passes a finite-difference gradient check") {
    Rng root(2024);
    struct Case {
        const char* name;
        testutil::GraphFn build;
        std::vector<Shape> shapes;
        double lo, hi;
        double tol;
    };
    auto S = [](std::initializer_list<Shape> s) { return std::vector<Shape>(s); };
    std::vector<Case> cases = {
        {"add", [](const std::vector<Tensor>& in) { return sum(add(in[0], in[1])); },
         S({{3, 4}, {3, 4}}), -1, 1, 1e-5},
        {"sub+mse", [](const std::vector<Tensor>& in) { return mse(in[0], in[1]); },
         S({{5}, {5}}), -1, 1, 1e-5},
        {"mul", [](const std::vector<Tensor>& in) { return sum(mul(in[0], in[1])); },
         S({{2, 3}, {2, 3}}), -1, 1, 1e-5},
        {"div", [](const std::vector<Tensor>& in) { return sum(div(in[0], in[1])); },
         S({{6}, {6}}), 0.5, 1.5, 1e-5},
        {"scale+neg",
         [](const std::vector<Tensor>& in) { return sum(neg(scale(in[0], 1.7))); },
         S({{7}}), -1, 1, 1e-5},
        {"exp", [](const std::vector<Tensor>& in) { return sum(exp(in[0])); },
         S({{5}}), -1, 1, 1e-5},
        {"log", [](const std::vector<Tensor>& in) { return sum(log(in[0])); },
         S({{5}}), 0.3, 2.0, 1e-5},
        {"sqrt", [](const std::vector<Tensor>& in) { return sum(sqrt(in[0])); },
         S({{5}}), 0.3, 2.0, 1e-5},
        {"tanh", [](const std::vector<Tensor>& in) { return sum(tanh(in[0])); },
         S({{5}}), -2, 2, 1e-5},
        {"silu", [](const std::vector<Tensor>& in) { return sum(silu(in[0])); },
         S({{5}}), -2, 2, 1e-5},
        {"power", [](const std::vector<Tensor>& in) { return sum(power(in[0], 2.2)); },
         S({{5}}), 0.2, 1.0, 1e-5},
        {"mean", [](const std::vector<Tensor>& in) { return mean(mul(in[0], in[0])); },
         S({{9}}), -1, 1, 1e-5},
        {"reshape",
         [](const std::vector<Tensor>& in) {
             return sum(mul(reshape(in[0], {6}), reshape(in[0], {6})));
         },
         S({{2, 3}}), -1, 1, 1e-5},
        {"broadcast",
         [](const std::vector<Tensor>& in) {
             Tensor big = broadcast(in[0], {2, 3, 4});
             return sum(mul(big, big));
         },
         S({{3, 1}}), -1, 1, 1e-5},
        {"concat",
         [](const std::vector<Tensor>& in) {
             Tensor c = concat({in[0], in[1]}, 1);
             return sum(mul(c, c));
         },
         S({{2, 3}, {2, 2}}), -1, 1, 1e-5},
        {"slice",
         [](const std::vector<Tensor>& in) {
             Tensor s = slice(in[0], 0, 1, 2);
             return sum(mul(s, s));
         },
         S({{4, 3}}), -1, 1, 1e-5},
        {"matmul-vec",
         [](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); },
         S({{3, 4}, {4}}), -1, 1, 1e-5},
        {"conv2d_same",
         [](const std::vector<Tensor>& in) {
             return mse(conv2d_same(in[0], in[1]), Tensor::zeros({5, 6}));
         },
         S({{5, 6}, {3, 3}}), -1, 1, 1e-5},
        {"conv2d_same circular",
         [](const std::vector<Tensor>& in) {
             return mse(conv2d_same(in[0], in[1], true), Tensor::zeros({4, 4}));
         },
         S({{4, 4}, {3, 3}}), -1, 1, 1e-5},
        {"avg_pool2d",
         [](const std::vector<Tensor>& in) {
             Tensor p = avg_pool2d(in[0], 2);
             return sum(mul(p, p));
         },
         S({{4, 6}}), -1, 1, 1e-5},
        {"softmax_flat",
         [](const std::vector<Tensor>& in) {
             Tensor p = softmax_flat(in[0]);
             return sum(mul(p, p));
         },
         S({{6}}), -1, 1, 1e-5},
        {"2}->silu composite over channels",
         [](const std::vector<Tensor>& in) {
             return mean(silu(conv2d_same(in[0], in[1])));
         },
         S({{2, 4, 4}, {3, 3}}), -1, 1, 1e-5},
    };
    for (auto& c : cases) {
        CAPTURE(c.name);
        Rng rng = root.derive(c.name);
        testutil::Values at;
        for (auto& sh : c.shapes)
            at.push_back(random_vec(rng, static_cast<size_t>(numel(sh)), c.lo, c.hi));
        double err = grad_check(c.build, c.shapes, at);
        CHECK(err < c.tol);
    }
}

TEST_CASE("bilinear_warp gradients match central differences") {
    // keep displacements clear of integer crossings where bilinear
    // interpolation has kinks
    Rng rng(31);
    auto xv = random_vec(rng, 30, -1.0, 1.0);
    auto dv = random_vec(rng, 60, 0.15, 0.45);
    double err = grad_check(
        [](const std::vector<Tensor>& in) {
            return mse(bilinear_warp(in[0], in[1]), Tensor::zeros({5, 6}));
        },
        {{5, 6}, {5, 6, 2}}, {xv, dv}, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("bilinear_warp with integer displacement shifts and zero-fills") {
    std::vector<double> xv(12);
    for (int i = 0; i < 12; ++i) xv[i] = i + 1.0;
    Tensor x = Tensor::from_data({3, 4}, xv);
    // displace every pixel by one row down, one col right: out(i,j) = x(i-1,j-1)
    std::vector<double> dv(24);
    for (int p = 0; p < 12; ++p) {
        dv[2 * p] = 1.0;
        dv[2 * p + 1] = 1.0;
    }
    Tensor out = bilinear_warp(x, Tensor::from_data({3, 4, 2}, dv));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 4; ++j) {
            double expect = (i >= 1 && j >= 1) ? xv[(i - 1) * 4 + (j - 1)] : 0.0;
            CHECK(out.at(i * 4 + j) == doctest::Approx(expect).epsilon(1e-14));
        }
}

TEST_CASE("softmax_flat output is a distribution, invariant to logit shifts") {
    Rng rng(41);
    auto lv = random_vec(rng, 8, -3.0, 3.0);
    Tensor p1 = softmax_flat(Tensor::from_data({8}, lv));
    for (auto& v : lv) v += 12.5;
    Tensor p2 = softmax_flat(Tensor::from_data({8}, lv));
    double s = 0.0;
    for (int i = 0; i < 8; ++i) {
        s += p1.at(i);
        CHECK(p1.at(i) == doctest::Approx(p2.at(i)).epsilon(1e-12));
        CHECK(p1.at(i) > 0.0);
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("avg_pool2d computes block means") {
    std::vector<double> xv(16);
    for (int i = 0; i < 16; ++i) xv[i] = static_cast<double>(i);
    Tensor p = avg_pool2d(Tensor::from_data({4, 4}, xv), 2);
    CHECK(p.at(0) == doctest::Approx(2.5));
    CHECK(p.at(1) == doctest::Approx(4.5));
    CHECK(p.at(2) == doctest::Approx(10.5));
    CHECK(p.at(3) == doctest::Approx(12.5));
}

TEST_CASE("scalar operands broadcast inside binary ops") {
    Tensor x = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    Tensor c = Tensor::scalar(2.0);
    Tensor y = mul(x, c);
    CHECK(y.at(2) == doctest::Approx(6.0));
    Tensor z = add(c, x);
    CHECK(z.at(0) == doctest::Approx(3.0));

    Tape tape;
    Tensor s = tape.leaf({}, {0.5});
    Tensor w = sum(mul(x, s));
    tape.backward(w);
    CHECK(tape.grad(s)[0] == doctest::Approx(6.0));
}

TEST_CASE("contract violations throw") {
    Tensor a = Tensor::from_data({2}, {1.0, 2.0});
    Tensor b = Tensor::from_data({3}, {1.0, 2.0, 3.0});
    CHECK_THROWS_AS(add(a, b), ContractError);
    CHECK_THROWS_AS(mse(a, b), ContractError);
    CHECK_THROWS_AS(reshape(a, {4}), ContractError);
    CHECK_THROWS_AS(slice(a, 0, 1, 5), ContractError);
    CHECK_THROWS_AS(matmul(a, b), ContractError);
    CHECK_THROWS_AS(avg_pool2d(Tensor::zeros({3, 3}), 2), ContractError);
    CHECK_THROWS_AS(conv2d_same(Tensor::zeros({3, 3}), Tensor::zeros({2, 2})),
                    ContractError);

    Tape t1, t2;
    Tensor l1 = t1.leaf({2}, {1.0, 1.0});
    Tensor l2 = t2.leaf({2}, {1.0, 1.0});
    CHECK_THROWS_AS(add(l1, l2), ContractError);

    Tape t3;
    Tensor l3 = t3.leaf({2}, {1.0, 1.0});
    CHECK_THROWS_AS(t3.backward(l3), ContractError); // non-scalar loss
    Tensor other = Tensor::scalar(1.0);
    CHECK_THROWS_AS(t3.backward(other), ContractError); // not on tape
    CHECK_THROWS_AS(t3.grad(l3), ContractError);        // before backward
}

TEST_CASE("domain violations throw") {
    Tensor neg1 = Tensor::from_data({2}, {1.0, -1.0});
    Tensor z = Tensor::from_data({2}, {1.0, 0.0});
    CHECK_THROWS_AS(log(neg1), DomainError);
    CHECK_THROWS_AS(log(z), DomainError);
    CHECK_THROWS_AS(sqrt(neg1), DomainError);
    CHECK_THROWS_AS(div(neg1, z), DomainError);
    CHECK_THROWS_AS(power(neg1, 2.2), DomainError);
    CHECK_NOTHROW(power(neg1, 2.0));
}

TEST_CASE("recorded intermediates reject mutation") {
    Tape tape;
    Tensor x = tape.leaf({2}, {1.0, 2.0});
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(y.mutable_data(), ContractError);
    CHECK_NOTHROW(x.mutable_data());            // leaves stay adjustable
    Tensor c = Tensor::from_data({2}, {0.0, 0.0});
    CHECK_NOTHROW(c.mutable_data());            // constants too
}

TEST_CASE("power handles interior fractional exponents") {
    Tensor x = Tensor::scalar(0.5);
    CHECK(power(x, 2.2).item() == doctest::Approx(std::pow(0.5, 2.2)).epsilon(1e-15));
}
