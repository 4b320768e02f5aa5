// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <map>

#include "qnas/search_space.hpp"
#include "testutil.hpp"

using namespace qnas;

TEST_CASE("space validation") {
    SearchSpace space = test::desk_space();
    CHECK_NOTHROW(space.validate());

    SearchSpace bad = space;
    bad.resolutions = {33};
    CHECK_THROWS(bad.validate());

    bad = space;
    bad.depth_options.clear();
    CHECK_THROWS(bad.validate());

    bad = space;
    bad.weight_bits = {5};
    CHECK_THROWS(bad.validate());

    bad = space;
    bad.embed_dim = 30; // not divisible by 4 heads
    CHECK_THROWS(bad.validate());
}

TEST_CASE("singleton space samples its unique config") {
    SearchSpace space = test::desk_space();
    space.resolutions = {32};
    space.depth_options = {{2}};
    space.mlp_ratios = {4.0};
    space.weight_bits = {8};
    space.act_bits = {4};
    Rng rng(0);
    const SubnetConfig cfg = sample_uniform(space, rng);
    CHECK(cfg.resolution == 32);
    CHECK(cfg.depths == std::vector<int>{2});
    CHECK(cfg.mlp_ratios == std::vector<double>{4.0, 4.0});
    CHECK(cfg.patch_bits == BitPair{8, 4});
    CHECK(cfg.layer_bits.size() == 2);
    CHECK_FALSE(validate_config(space, cfg).has_value());
}

TEST_CASE("sampling is deterministic under a fixed seed") {
    const SearchSpace space = test::desk_space();
    Rng a(123), b(123);
    for (int i = 0; i < 50; ++i) {
        const SubnetConfig ca = sample_uniform(space, a);
        const SubnetConfig cb = sample_uniform(space, b);
        CHECK(ca == cb);
        CHECK_FALSE(validate_config(space, ca).has_value());
    }
}

TEST_CASE("resolution cap filters the resolution options only") {
    const SearchSpace space = test::desk_space();
    Rng rng(7);
    for (int i = 0; i < 200; ++i) {
        const SubnetConfig cfg = sample_uniform(space, rng, 48);
        CHECK(cfg.resolution <= 48);
        CHECK_FALSE(validate_config(space, cfg).has_value());
    }
    CHECK_THROWS(sample_uniform(space, rng, 16));
}

TEST_CASE("per-field frequencies are near uniform") {
    const SearchSpace space = test::desk_space();
    Rng rng(42);
    const int kDraws = 10000;
    std::map<int, int> w_counts;
    std::map<int, int> res_counts;
    for (int i = 0; i < kDraws; ++i) {
        const SubnetConfig cfg = sample_uniform(space, rng);
        ++w_counts[cfg.patch_bits.w];
        ++res_counts[cfg.resolution];
    }
    // 5 sigma around n*p for a binomial count.
    const double p5 = 1.0 / 5.0;
    const double sd5 = std::sqrt(kDraws * p5 * (1 - p5));
    for (int b : space.weight_bits) {
        CHECK(std::fabs(w_counts[b] - kDraws * p5) < 5.0 * sd5);
    }
    const double p3 = 1.0 / 3.0;
    const double sd3 = std::sqrt(kDraws * p3 * (1 - p3));
    for (int r : space.resolutions) {
        CHECK(std::fabs(res_counts[r] - kDraws * p3) < 5.0 * sd3);
    }
}

TEST_CASE("validate_config rejects out-of-space fields") {
    const SearchSpace space = test::desk_space();
    const SubnetConfig good = max_config(space);
    CHECK_FALSE(validate_config(space, good).has_value());

    SubnetConfig bad = good;
    bad.resolution = 40;
    auto err = validate_config(space, bad);
    REQUIRE(err.has_value());
    CHECK(err->find("resolution") != std::string::npos);

    // Bits assigned past the active depth.
    bad = good;
    bad.depths = {2, 2};
    err = validate_config(space, bad);
    REQUIRE(err.has_value());
    CHECK(err->find("active layers") != std::string::npos);

    bad = good;
    bad.mlp_ratios[0] = 3.0;
    CHECK(validate_config(space, bad).has_value());

    bad = good;
    bad.layer_bits[2].a = 5;
    CHECK(validate_config(space, bad).has_value());

    bad = good;
    bad.depths = {3};
    CHECK(validate_config(space, bad).has_value());
}

TEST_CASE("subnet string round-trips") {
    const SearchSpace space = test::desk_space();
    Rng rng(9);
    for (int i = 0; i < 100; ++i) {
        const SubnetConfig cfg = sample_uniform(space, rng);
        const SubnetConfig back = parse_subnet_string(to_subnet_string(cfg));
        CHECK(back == cfg);
    }
    const SubnetConfig cfg = parse_subnet_string("res=64;d=3,2;mlp=4,4,2,2,4;bits=w8a8,w4a4,w2a8,w8a32,w32a2,w3a3");
    CHECK(cfg.resolution == 64);
    CHECK(cfg.depths == std::vector<int>{3, 2});
    CHECK(cfg.mlp_ratios.size() == 5);
    CHECK(cfg.patch_bits == BitPair{8, 8});
    CHECK(cfg.layer_bits[0] == BitPair{4, 4});
    CHECK(cfg.layer_bits[4] == BitPair{3, 3});

    CHECK_THROWS(parse_subnet_string("res=64"));
    CHECK_THROWS(parse_subnet_string("res=64;d=1;mlp=4;bits=w8a8"));           // missing layer bits
    CHECK_THROWS(parse_subnet_string("res=64;d=1;mlp=4;bits=w8a8,8a8"));       // malformed token
    CHECK_THROWS(parse_subnet_string("res=64;d=1;mlp=4;bits=w8a8,w4a4;x=1")); // unknown field
}

TEST_CASE("enumeration covers the space exactly once") {
    SearchSpace tiny = test::desk_space();
    tiny.resolutions = {32};
    tiny.depth_options = {{1, 2}};
    tiny.mlp_ratios = {2.0};
    tiny.weight_bits = {2, 8};
    tiny.act_bits = {8};
    // depth 1: patch(2) * layer(2) = 4; depth 2: 2 * 4 = 8; total 12.
    const std::vector<SubnetConfig> all = enumerate_space(tiny);
    CHECK(all.size() == 12);
    for (size_t i = 0; i < all.size(); ++i) {
        CHECK_FALSE(validate_config(tiny, all[i]).has_value());
        for (size_t j = i + 1; j < all.size(); ++j) CHECK_FALSE(all[i] == all[j]);
    }
    CHECK_THROWS(enumerate_space(test::desk_space(), 1000));
}
