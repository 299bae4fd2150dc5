#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "gcpc/tensor.hpp"
#include "support/finite_diff.hpp"

using namespace gcpc;
using gcpc::testing::GradCheck;
using gcpc::testing::check_tensor_grad;

TEST_CASE("elementwise add/mul basics") {
    Tape tape;
    Tensor a = Tensor::from({2}, {1, 2});
    Tensor b = Tensor::from({2}, {3, 4});
    Tensor c = add(&tape, a, b);
    CHECK(c.data()[0] == 4.0);
    CHECK(c.data()[1] == 6.0);

    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
    Tensor z = mul(&tape, x, 0.0);
    for (double v : z.data()) CHECK(v == 0.0);

    CHECK_THROWS_AS(add(&tape, a, Tensor::from({3}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("elementwise trailing broadcast") {
    Tape tape;
    Tensor a = Tensor::from({2, 2, 3}, {1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4});
    Tensor b = Tensor::from({3}, {10, 20, 30}, true);
    Tensor c = add(&tape, a, b);
    CHECK(c.data()[0] == 11.0);
    CHECK(c.data()[5] == 32.0);
    Tensor loss = sum(&tape, c);
    tape.backward(loss);
    // each of the 4 leading positions contributes once
    CHECK(b.grad()[0] == 4.0);
    CHECK(b.grad()[2] == 4.0);
}

TEST_CASE("mul gradient matches finite differences") {
    Tensor a = Tensor::from({1}, {2.0}, true);
    Tensor b = Tensor::from({1}, {5.0}, true);
    auto run = [&](Tape* t) { return sum(t, mul(t, a, b)); };
    Tape tape;
    Tensor loss = run(&tape);
    tape.backward(loss);
    CHECK(a.grad()[0] == 5.0);
    GradCheck gc;
    check_tensor_grad(gc, a, [&] {
        Tape t;
        return run(&t).item();
    });
    CHECK(gc.max_rel_err <= 1e-6);
}

TEST_CASE("matmul identity and projector") {
    Tape tape;
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor r = matmul(&tape, eye, m);
    CHECK(std::equal(r.data().begin(), r.data().end(), m.data().begin()));

    Tensor proj = Tensor::from({2, 2}, {1, 0, 0, 0});
    Tensor s = matmul(&tape, proj, Tensor::from({2, 2}, {5, 6, 7, 8}));
    CHECK(s.data()[0] == 5.0);
    CHECK(s.data()[1] == 6.0);
    CHECK(s.data()[2] == 0.0);
    CHECK(s.data()[3] == 0.0);

    CHECK_THROWS_AS(matmul(&tape, Tensor::zeros({2, 3}), Tensor::zeros({2, 3})),
                    std::invalid_argument);
}

TEST_CASE("matmul gradient vs finite differences") {
    RngStream rng(7);
    Tensor a = Tensor::randn({3, 4}, 1.0, rng, true);
    Tensor b = Tensor::randn({4, 2}, 1.0, rng, true);
    auto run = [&](Tape* t) { return sum(t, matmul(t, a, b)); };
    Tape tape;
    tape.backward(run(&tape));
    GradCheck gc;
    auto loss = [&] {
        Tape t;
        return run(&t).item();
    };
    check_tensor_grad(gc, a, loss);
    check_tensor_grad(gc, b, loss);
    CHECK(gc.max_rel_err <= 1e-6);
}

TEST_CASE("batched matmul shapes and gradient") {
    RngStream rng(11);
    Tensor a = Tensor::randn({2, 3, 4}, 1.0, rng, true);
    Tensor b = Tensor::randn({2, 4, 5}, 1.0, rng, true);
    auto run = [&](Tape* t) { return sum(t, matmul(t, a, b)); };
    Tape tape;
    Tensor l = run(&tape);
    tape.backward(l);
    GradCheck gc;
    auto loss = [&] {
        Tape t;
        return run(&t).item();
    };
    check_tensor_grad(gc, a, loss);
    check_tensor_grad(gc, b, loss);
    CHECK(gc.max_rel_err <= 1e-6);
}

TEST_CASE("softmax basics") {
    Tape tape;
    Tensor x = Tensor::from({2}, {0, 0});
    Tensor y = softmax_lastdim(&tape, x);
    CHECK(y.data()[0] == Catch::Approx(0.5));

    Tensor big = Tensor::from({2}, {1000, 0});
    Tensor yb = softmax_lastdim(&tape, big);
    CHECK(yb.data()[0] == Catch::Approx(1.0));
    CHECK(yb.data()[1] == Catch::Approx(0.0).margin(1e-300));
    for (double v : yb.data()) CHECK(std::isfinite(v));
}

TEST_CASE("softmax rows sum to one within 1e-12") {
    RngStream rng(3);
    Tensor x = Tensor::randn({5, 7}, 3.0, rng);
    Tensor y = softmax_lastdim(nullptr, x);
    for (std::int64_t r = 0; r < 5; ++r) {
        double s = 0;
        for (std::int64_t c = 0; c < 7; ++c) s += y.data()[r * 7 + c];
        CHECK(std::abs(s - 1.0) <= 1e-12);
    }
}

TEST_CASE("softmax gradient vs finite differences") {
    RngStream rng(5);
    Tensor x = Tensor::randn({3, 4}, 1.0, rng, true);
    Tensor w = Tensor::randn({3, 4}, 1.0, rng);  // fixed cotangent
    auto run = [&](Tape* t) { return sum(t, mul(t, softmax_lastdim(t, x), w)); };
    Tape tape;
    tape.backward(run(&tape));
    GradCheck gc;
    check_tensor_grad(gc, x, [&] {
        Tape t;
        return run(&t).item();
    });
    CHECK(gc.max_rel_err <= 1e-6);
}

TEST_CASE("layer_norm basics") {
    Tensor gain = Tensor::full({3}, 1.0);
    Tensor bias = Tensor::zeros({3});
    Tensor c = layer_norm(nullptr, Tensor::from({3}, {5, 5, 5}), gain, bias);
    for (double v : c.data()) CHECK(v == Catch::Approx(0.0).margin(1e-12));

    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor b2 = Tensor::zeros({2});
    Tensor y = layer_norm(nullptr, Tensor::from({2}, {1, -1}), g2, b2, 1e-12);
    CHECK(y.data()[0] == Catch::Approx(1.0).epsilon(1e-6));
    CHECK(y.data()[1] == Catch::Approx(-1.0).epsilon(1e-6));

    CHECK_THROWS_AS(layer_norm(nullptr, Tensor::zeros({3}), gain, bias, 0.0),
                    std::invalid_argument);
}

TEST_CASE("layer_norm gradient vs finite differences") {
    RngStream rng(9);
    Tensor x = Tensor::randn({4, 6}, 1.0, rng, true);
    Tensor gain = Tensor::randn({6}, 0.5, rng, true);
    Tensor bias = Tensor::randn({6}, 0.5, rng, true);
    Tensor w = Tensor::randn({4, 6}, 1.0, rng);
    auto run = [&](Tape* t) { return sum(t, mul(t, layer_norm(t, x, gain, bias), w)); };
    Tape tape;
    tape.backward(run(&tape));
    GradCheck gc;
    auto loss = [&] {
        Tape t;
        return run(&t).item();
    };
    check_tensor_grad(gc, x, loss);
    check_tensor_grad(gc, gain, loss);
    check_tensor_grad(gc, bias, loss);
    CHECK(gc.max_rel_err <= 1e-5);
}

TEST_CASE("activations") {
    Tensor z = Tensor::from({1}, {0.0});
    CHECK(gelu(nullptr, z).data()[0] == 0.0);
    CHECK(relu(nullptr, Tensor::from({1}, {-3.0})).data()[0] == 0.0);

    Tensor x = Tensor::from({1}, {0.7}, true);
    auto run = [&](Tape* t) { return sum(t, gelu(t, x)); };
    Tape tape;
    tape.backward(run(&tape));
    GradCheck gc;
    check_tensor_grad(gc, x, [&] {
        Tape t;
        return run(&t).item();
    });
    CHECK(gc.max_rel_err <= 1e-6);
}

TEST_CASE("dropout") {
    RngStream rng(21);
    Tensor x = Tensor::full({100}, 1.0);
    Tensor same = dropout(nullptr, x, 0.0, rng, true);
    CHECK(same.same_storage(x));
    Tensor eval = dropout(nullptr, x, 0.5, rng, false);
    CHECK(eval.same_storage(x));
    CHECK_THROWS_AS(dropout(nullptr, x, 1.0, rng, true), std::invalid_argument);

    Tensor big = Tensor::full({100000}, 1.0);
    Tensor dr = dropout(nullptr, big, 0.5, rng, true);
    std::int64_t kept = 0;
    for (double v : dr.data()) kept += v != 0.0;
    double frac = static_cast<double>(kept) / 1e5;
    CHECK(frac > 0.49);
    CHECK(frac < 0.51);
}

TEST_CASE("mse_loss") {
    Tensor p = Tensor::from({2}, {1, 2});
    Tensor t = Tensor::from({2}, {1, 4});
    CHECK(mse_loss(nullptr, p, t).item() == 2.0);
    CHECK(mse_loss(nullptr, p, p).item() == 0.0);

    Tensor w = Tensor::from({2}, {1, 0});
    CHECK(mse_loss(nullptr, p, t, &w).item() == 0.0);

    Tensor w0 = Tensor::zeros({2});
    CHECK_THROWS_AS(mse_loss(nullptr, p, t, &w0), std::invalid_argument);
    CHECK_THROWS_AS(mse_loss(nullptr, p, Tensor::zeros({3})), std::invalid_argument);
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    Tape tape;
    Tensor l = sum(&tape, x);
    tape.backward(l);
    for (double v : x.grad()) CHECK(v == 1.0);

    Tensor y = Tensor::from({2}, {1, 2}, true);
    Tape tape2;
    Tensor l2 = sum(&tape2, mul(&tape2, y, y));
    tape2.backward(l2);
    CHECK(y.grad()[0] == 2.0);
    CHECK(y.grad()[1] == 4.0);

    Tape tape3;
    Tensor ns = mul(&tape3, y, 2.0);
    CHECK_THROWS_AS(tape3.backward(ns), std::invalid_argument);
}

TEST_CASE("gradient accumulation: backward of L1+L2 equals separate backwards") {
    RngStream rng(13);
    Tensor x = Tensor::randn({4}, 1.0, rng, true);

    Tape joint;
    Tensor l = add(&joint, sum(&joint, mul(&joint, x, x)), sum(&joint, mul(&joint, x, 3.0)));
    joint.backward(l);
    std::vector<double> combined(x.grad().begin(), x.grad().end());

    x.zero_grad();
    Tape sep;
    Tensor l1 = sum(&sep, mul(&sep, x, x));
    Tensor l2 = sum(&sep, mul(&sep, x, 3.0));
    sep.backward(l1);
    sep.backward(l2);
    for (std::size_t i = 0; i < combined.size(); ++i)
        CHECK(x.grad()[i] == Catch::Approx(combined[i]).epsilon(1e-14));
}

TEST_CASE("shape ops gradients") {
    RngStream rng(17);
    Tensor x = Tensor::randn({2, 3, 4}, 1.0, rng, true);
    Tensor v = Tensor::randn({4}, 1.0, rng, true);
    Tensor q = Tensor::randn({3, 4}, 1.0, rng, true);
    Tensor w = Tensor::randn({2, 8, 4}, 1.0, rng);

    auto run = [&](Tape* t) {
        Tensor a = slice_dim1(t, x, 1, 2);                       // [2,2,4]
        Tensor b = tile_batch(t, q, 2);                          // [2,3,4]
        Tensor c = reshape(t, tile_rows(t, v, 6), {2, 3, 4});    // [2,3,4]
        Tensor cat = concat_dim1(t, {a, b, c});                  // [2,8,4]
        Tensor sh = merge_heads(t, split_heads(t, cat, 2), 2);   // round trip
        return sum(t, mul(t, sh, w));
    };
    Tape tape;
    tape.backward(run(&tape));
    GradCheck gc;
    auto loss = [&] {
        Tape t;
        return run(&t).item();
    };
    check_tensor_grad(gc, x, loss);
    check_tensor_grad(gc, v, loss);
    check_tensor_grad(gc, q, loss);
    CHECK(gc.max_rel_err <= 1e-6);
}

TEST_CASE("scale_rows and transpose_last2 gradients") {
    RngStream rng(19);
    Tensor x = Tensor::randn({3, 4}, 1.0, rng, true);
    std::vector<double> s = {0.5, 0.0, 2.0};
    Tensor w = Tensor::randn({4, 3}, 1.0, rng);
    auto run = [&](Tape* t) {
        return sum(t, mul(t, transpose_last2(t, scale_rows(t, x, s)), w));
    };
    Tape tape;
    tape.backward(run(&tape));
    GradCheck gc;
    check_tensor_grad(gc, x, [&] {
        Tape t;
        return run(&t).item();
    });
    CHECK(gc.max_rel_err <= 1e-6);
}

TEST_CASE("bit-exact determinism of op sequences") {
    auto run_once = [](std::uint64_t seed) {
        RngStream rng(seed);
        Tensor a = Tensor::randn({5, 5}, 1.0, rng, true);
        Tensor b = Tensor::randn({5, 5}, 1.0, rng, true);
        Tape t;
        Tensor out = softmax_lastdim(&t, matmul(&t, gelu(&t, a), b));
        Tensor l = sum(&t, out);
        t.backward(l);
        std::vector<double> bytes;
        bytes.insert(bytes.end(), out.data().begin(), out.data().end());
        bytes.insert(bytes.end(), a.grad().begin(), a.grad().end());
        return bytes;
    };
    auto r1 = run_once(42), r2 = run_once(42);
    CHECK(std::memcmp(r1.data(), r2.data(), r1.size() * sizeof(double)) == 0);
}

TEST_CASE("randomized finite-difference property suite over core ops") {
    RngStream master(1234);
    GradCheck gc;
    for (int trial = 0; trial < 30; ++trial) {
        RngStream rng = master.split("trial", static_cast<std::uint64_t>(trial));
        std::int64_t m = 1 + static_cast<std::int64_t>(rng.below(3));
        std::int64_t k = 1 + static_cast<std::int64_t>(rng.below(3));
        std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(3));
        Tensor a = Tensor::randn({m, k}, 1.0, rng, true);
        Tensor b = Tensor::randn({k, n}, 1.0, rng, true);
        Tensor g = Tensor::randn({n}, 0.5, rng, true);
        Tensor bias = Tensor::randn({n}, 0.5, rng, true);
        Tensor w = Tensor::randn({m, n}, 1.0, rng);
        auto run = [&](Tape* t) {
            Tensor h = matmul(t, gelu(t, a), b);
            Tensor ln = layer_norm(t, h, g, bias);
            return sum(t, mul(t, softmax_lastdim(t, ln), w));
        };
        Tape tape;
        tape.backward(run(&tape));
        auto loss = [&] {
            Tape t;
            return run(&t).item();
        };
        check_tensor_grad(gc, a, loss);
        check_tensor_grad(gc, b, loss);
        check_tensor_grad(gc, g, loss);
        check_tensor_grad(gc, bias, loss);
    }
    INFO("checked " << gc.n_checked << " partials, max rel err " << gc.max_rel_err);
    CHECK(gc.max_rel_err <= 1e-5);
}
