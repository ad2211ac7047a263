#include "doctest.h"
#include "stq/basis.hpp"

#include <random>

using namespace stq;

TEST_CASE("wendland kernel values") {
    CHECK(wendland(0.0) == doctest::Approx(1.0));
    CHECK(wendland(1.0) == doctest::Approx(0.0));
    CHECK(wendland(2.0) == 0.0);
    // direct polynomial evaluation as the oracle
    const double d = 0.5;
    const double expect = std::pow(1.0 - d, 6) / 3.0 * (35.0 * d * d + 18.0 * d + 3.0);
    CHECK(wendland(0.5) == doctest::Approx(expect));
    CHECK(wendland(0.5) == doctest::Approx(0.10807).epsilon(1e-3));
    CHECK_THROWS_AS(wendland(-0.1), std::domain_error);
}

TEST_CASE("wendland is monotone nonincreasing and bounded") {
    double prev = wendland(0.0);
    for (int i = 1; i <= 200; ++i) {
        const double v = wendland(i / 100.0);
        CHECK(v <= prev + 1e-15);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        prev = v;
    }
}

TEST_CASE("spatial anchors follow the 2.5x spacing rule") {
    auto set = make_spatial_anchors({25});
    REQUIRE(set.resolutions.size() == 1);
    CHECK(set.resolutions[0].g == 5);
    CHECK(set.resolutions[0].theta == doctest::Approx(0.625));
    CHECK(set.resolutions[0].anchors.size() == 25);

    auto corners = make_spatial_anchors({4});
    CHECK(corners.resolutions[0].theta == doctest::Approx(2.5));
    // 2x2 grid sits on the unit square corners
    std::vector<std::pair<double, double>> expect{{0, 0}, {1, 0}, {0, 1}, {1, 1}};
    for (const auto& [x, y] : expect) {
        bool found = false;
        for (const auto& [ax, ay] : corners.resolutions[0].anchors)
            if (ax == doctest::Approx(x) && ay == doctest::Approx(y)) found = true;
        CHECK(found);
    }

    auto multi = make_spatial_anchors({25, 81, 144});
    CHECK(multi.total_features() == 250);

    CHECK_THROWS_AS(make_spatial_anchors({26}), std::invalid_argument);
    CHECK_THROWS_AS(make_spatial_anchors({1}), std::invalid_argument);
}

TEST_CASE("temporal basis evaluation") {
    auto temporal = make_temporal_anchors({5});
    const auto& res = temporal.resolutions[0];
    CHECK(res.kappa == doctest::Approx(0.25));

    auto v = temporal_basis(res.anchors[2], temporal);
    CHECK(v[2] == doctest::Approx(1.0));
    auto w = temporal_basis(res.anchors[2] + res.kappa, temporal);
    CHECK(w[2] == doctest::Approx(std::exp(-0.5)));
    CHECK(w[2] == doctest::Approx(0.60653).epsilon(1e-4));

    // midpoint symmetry in the first two coordinates
    auto temporal3 = make_temporal_anchors({3});
    const double mid = 0.5 * (temporal3.resolutions[0].anchors[0] +
                              temporal3.resolutions[0].anchors[1]);
    auto m = temporal_basis(mid, temporal3);
    CHECK(m[0] == doctest::Approx(m[1]));
}

TEST_CASE("embedding stacking and shapes") {
    EmbeddingConfig cfg;
    cfg.spatial = make_spatial_anchors({4});
    cfg.temporal = make_temporal_anchors({2});
    CHECK(cfg.dimension() == 6);

    auto phi = embed(0.0, 0.0, 0.3, cfg);
    REQUIRE(phi.size() == 6);
    // first anchor is the origin
    CHECK(phi[0] == doctest::Approx(1.0));
    for (double v : phi) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    CHECK_THROWS_AS(embed(0.0, 0.0, 0.0, cfg, {1.0}), std::invalid_argument);
}

TEST_CASE("compact support zeroes whole resolution blocks") {
    EmbeddingConfig cfg;
    cfg.spatial = make_spatial_anchors({144});  // theta = 2.5/11, small support
    cfg.temporal = make_temporal_anchors({2});
    // far outside the domain: beyond theta of every anchor
    auto phi = embed(3.0, 3.0, 0.5, cfg);
    for (std::size_t i = 0; i < 144; ++i) CHECK(phi[i] == 0.0);
}

TEST_CASE("embedding determinism") {
    EmbeddingConfig cfg;
    cfg.spatial = make_spatial_anchors({25, 81});
    cfg.temporal = make_temporal_anchors({10, 15});
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const double s1 = unif(rng), s2 = unif(rng), t = unif(rng);
        auto a = embed(s1, s2, t, cfg);
        auto b = embed(s1, s2, t, cfg);
        CHECK(a == b);
    }
}

TEST_CASE("embedding config JSON round trip") {
    EmbeddingConfig cfg;
    cfg.spatial = make_spatial_anchors({25, 81});
    cfg.temporal = make_temporal_anchors({10});
    cfg.rescale = {-3.0, 7.0, 10.0, 20.0, 0.0, 500.0};
    cfg.n_covariates = 2;
    auto j = embedding_to_json(cfg);
    auto back = embedding_from_json(j);
    CHECK(back.dimension() == cfg.dimension());
    CHECK(back.rescale.s1_min == cfg.rescale.s1_min);
    CHECK(back.rescale.t_max == cfg.rescale.t_max);
    auto a = embed(1.0, 12.0, 250.0, cfg, {0.5, -1.0});
    auto b = embed(1.0, 12.0, 250.0, back, {0.5, -1.0});
    CHECK(a == b);
}

TEST_CASE("extrapolation flag only fires far outside the domain") {
    EmbeddingConfig cfg;
    cfg.spatial = make_spatial_anchors({4});
    cfg.temporal = make_temporal_anchors({2});
    CHECK_FALSE(cfg.extrapolation_warning(0.5, 0.5, 0.5).has_value());
    CHECK_FALSE(cfg.extrapolation_warning(1.04, 0.5, 0.5).has_value());
    CHECK(cfg.extrapolation_warning(1.2, 0.5, 0.5).has_value());
    CHECK(cfg.extrapolation_warning(0.5, 0.5, -0.2).has_value());
}
