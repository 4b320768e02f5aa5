// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "qnas/kernels.hpp"
#include "qnas/rng.hpp"
#include "qnas/tensor.hpp"
#include "testutil.hpp"

using namespace qnas;

TEST_CASE("tensor construction and access") {
    Tensor t({2, 3});
    CHECK(t.numel() == 6);
    CHECK(t.ndim() == 2);
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(t[i] == 0.0f);

    Tensor u({2, 2}, {1, 2, 3, 4});
    CHECK(u.at(0, 1) == 2.0f);
    CHECK(u.at(1, 0) == 3.0f);
    CHECK(u.min_value() == 1.0f);
    CHECK(u.max_value() == 4.0f);

    CHECK_THROWS(Tensor({2, 2}, {1, 2, 3}));
    CHECK_THROWS(Tensor({0, 2}));
    CHECK_THROWS(Tensor({-1}));
}

TEST_CASE("round half to even") {
    CHECK(round_half_even(0.5f) == 0.0f);
    CHECK(round_half_even(1.5f) == 2.0f);
    CHECK(round_half_even(2.5f) == 2.0f);
    CHECK(round_half_even(-0.5f) == 0.0f);
    CHECK(round_half_even(-1.5f) == -2.0f);
    CHECK(round_half_even(-2.5f) == -2.0f);
    CHECK(round_half_even(3.49f) == 3.0f);
    CHECK(round_half_even(3.51f) == 4.0f);
    CHECK(round_half_even(2.0f) == 2.0f);
    CHECK(round_half_even(-7.0f) == -7.0f);
}

TEST_CASE("rng determinism and state round-trip") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    Rng c(7);
    for (int i = 0; i < 10; ++i) c.uniform01();
    const std::string state = c.save_state();
    std::vector<double> expect;
    for (int i = 0; i < 20; ++i) expect.push_back(c.uniform01());
    Rng d(999);
    d.load_state(state);
    for (int i = 0; i < 20; ++i) CHECK(d.uniform01() == expect[static_cast<size_t>(i)]);
}

TEST_CASE("rng ranges and derive_seed") {
    Rng r(3);
    for (int i = 0; i < 1000; ++i) {
        const int v = r.uniform_int(7);
        CHECK(v >= 0);
        CHECK(v < 7);
        const double u = r.uniform01();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    CHECK_THROWS(r.uniform_int(0));
    CHECK(Rng::derive_seed(1, "data") != Rng::derive_seed(1, "train"));
    CHECK(Rng::derive_seed(1, "data") != Rng::derive_seed(2, "data"));
    CHECK(Rng::derive_seed(5, "evolve") == Rng::derive_seed(5, "evolve"));
}

TEST_CASE("matmul examples") {
    const Tensor eye({2, 2}, {1, 0, 0, 1});
    const Tensor m({2, 2}, {1, 2, 3, 4});
    const Tensor prod = k_matmul(eye, m);
    for (int64_t i = 0; i < 4; ++i) CHECK(prod[i] == m[i]);

    const Tensor a({1, 2}, {1, 2});
    const Tensor b({2, 1}, {3, 4});
    const Tensor c = k_matmul(a, b);
    CHECK(c.numel() == 1);
    CHECK(c[0] == 11.0f);

    CHECK_THROWS(k_matmul(a, a));
}

TEST_CASE("linear matches matmul with transposed weight") {
    Rng rng(11);
    const Tensor x = test::random_tensor(rng, {3, 5}, -2.0f, 2.0f);
    const Tensor w = test::random_tensor(rng, {4, 5}, -2.0f, 2.0f);
    const Tensor y1 = k_linear(x, w);
    const Tensor y2 = k_matmul(x, k_transpose(w));
    REQUIRE(y1.same_shape(y2));
    for (int64_t i = 0; i < y1.numel(); ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-6));
}

TEST_CASE("softmax symmetry and normalization") {
    const Tensor x({1, 3}, {0, 0, 0});
    const Tensor y = k_softmax_rows(x);
    for (int64_t i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(1.0 / 3.0));

    Rng rng(5);
    const Tensor r = test::random_tensor(rng, {4, 6}, -5.0f, 5.0f);
    const Tensor s = k_softmax_rows(r);
    for (int row = 0; row < 4; ++row) {
        double total = 0.0;
        for (int col = 0; col < 6; ++col) total += s.at(row, col);
        CHECK(total == doctest::Approx(1.0));
    }
}

TEST_CASE("relu and gelu values") {
    const Tensor x({2}, {-1, 2});
    const Tensor y = k_relu(x);
    CHECK(y[0] == 0.0f);
    CHECK(y[1] == 2.0f);

    const Tensor g = k_gelu(Tensor({3}, {-10, 0, 10}));
    CHECK(g[0] == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(g[1] == 0.0f);
    CHECK(g[2] == doctest::Approx(10.0).epsilon(1e-6));
}

TEST_CASE("layernorm normalizes rows") {
    const Tensor x({2, 4}, {1, 2, 3, 4, -3, 0, 3, 6});
    const Tensor y = k_layernorm_rows(x, 1e-5f);
    for (int row = 0; row < 2; ++row) {
        double mean = 0.0, var = 0.0;
        for (int col = 0; col < 4; ++col) mean += y.at(row, col);
        mean /= 4.0;
        for (int col = 0; col < 4; ++col) var += (y.at(row, col) - mean) * (y.at(row, col) - mean);
        var /= 4.0;
        CHECK(std::fabs(mean) < 1e-5);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-3));
    }
}

TEST_CASE("bilinear resize examples") {
    // Constant grid stays constant at any size.
    const Tensor c = Tensor::full({2, 2, 1}, 0.7f);
    const Tensor cr = k_bilinear_resize(c, 5, 3);
    for (int64_t i = 0; i < cr.numel(); ++i) CHECK(cr[i] == doctest::Approx(0.7).epsilon(1e-6));

    // Identity size is bitwise identical.
    Rng rng(9);
    const Tensor g = test::random_tensor(rng, {3, 4, 2}, -1.0f, 1.0f);
    const Tensor gr = k_bilinear_resize(g, 3, 4);
    for (int64_t i = 0; i < g.numel(); ++i) CHECK(gr[i] == g[i]);

    // Ramp [0,1,2] to length 5 under align-corners.
    const Tensor ramp({3, 1, 1}, {0, 1, 2});
    const Tensor rr = k_bilinear_resize(ramp, 5, 1);
    const float expect[5] = {0.0f, 0.5f, 1.0f, 1.5f, 2.0f};
    for (int i = 0; i < 5; ++i) CHECK(rr[i] == doctest::Approx(expect[i]).epsilon(1e-6));

    CHECK_THROWS(k_bilinear_resize(g, 0, 3));
}

TEST_CASE("patchify layout") {
    Tensor img({4, 4, 1});
    for (int64_t i = 0; i < 16; ++i) img[i] = static_cast<float>(i);
    const Tensor tok = k_patchify(img, 2);
    REQUIRE(tok.dim(0) == 4);
    REQUIRE(tok.dim(1) == 4);
    const float expect[4][4] = {{0, 1, 4, 5}, {2, 3, 6, 7}, {8, 9, 12, 13}, {10, 11, 14, 15}};
    for (int t = 0; t < 4; ++t)
        for (int f = 0; f < 4; ++f) CHECK(tok.at(t, f) == expect[t][f]);

    CHECK_THROWS(k_patchify(img, 3));
}

TEST_CASE("cross entropy values and stability") {
    const Tensor l0({1, 2}, {0, 0});
    CHECK(k_cross_entropy_rows(l0, {0})[0] == doctest::Approx(std::log(2.0)));

    const Tensor l1({1, 2}, {1000, 0});
    CHECK(k_cross_entropy_rows(l1, {0})[0] == doctest::Approx(0.0));
    CHECK(k_cross_entropy_rows(l1, {1})[0] == doctest::Approx(1000.0));

    CHECK_THROWS(k_cross_entropy_rows(l1, {2}));
    CHECK_THROWS(k_cross_entropy_rows(l1, {0, 1}));
}

TEST_CASE("fnv1a64 hashes") {
    // Reference value for the empty input is the offset basis itself.
    CHECK(fnv1a64(std::string()) == 14695981039346656037ull);
    CHECK(fnv1a64(std::string("a")) != fnv1a64(std::string("b")));
    // Chaining: hashing "ab" equals hashing "b" with basis fnv1a64("a").
    const std::string ab = "ab";
    CHECK(fnv1a64(ab.data(), 2) == fnv1a64("b", 1, fnv1a64("a", 1)));
}
