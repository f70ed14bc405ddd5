#include "doctest.h"
#include "test_support.hpp"
#include "twincov/error.hpp"
#include "twincov/sphere_domain.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

using namespace twincov;
using twincov::testing::equator;

TEST_CASE("geodesic distance: identity, antipodes, hemispheres, symmetry") {
    const Vertex a{std::numbers::pi / 2, 0.0, Hemisphere::Left};
    const Vertex b{std::numbers::pi / 2, std::numbers::pi, Hemisphere::Left};
    const Vertex r{0.3, 1.2, Hemisphere::Right};
    CHECK(geodesic_distance(a, a) == 0.0);
    CHECK(geodesic_distance(a, b) == doctest::Approx(180.0).epsilon(1e-14));
    CHECK(std::isinf(geodesic_distance(a, r)));
    CHECK(std::isinf(geodesic_distance(r, a)));
    const Vertex c{1.1, 4.0, Hemisphere::Left};
    CHECK(geodesic_distance(a, c) == geodesic_distance(c, a));
    // pole to equator is a quarter turn
    CHECK(geodesic_distance(Vertex{0.0, 0.0, Hemisphere::Left}, c) == doctest::Approx(1.1 * 180.0 / std::numbers::pi));
}

TEST_CASE("biweight weights") {
    CHECK(biweight_weight(0.0, 1.0) == 0.9375);
    CHECK(biweight_weight(2.0, 1.0) == 0.0);
    CHECK(biweight_weight(1.0, 1.0) == 0.0);
    CHECK(biweight_weight(0.5, 1.0) == doctest::Approx(0.52734375).epsilon(1e-15));
    CHECK(biweight_weight(kInfiniteDistance, 3.0) == 0.0);
    CHECK_THROWS_AS((void)biweight_weight(0.0, 0.0), Error);
    CHECK_THROWS_AS((void)biweight_weight(0.0, -1.0), Error);
    CHECK_THROWS_AS((void)biweight_weight(0.0, std::nan("")), Error);
}

TEST_CASE("vertex set validates angles") {
    CHECK_THROWS_AS(VertexSet({{-0.1, 0.0, Hemisphere::Left}}), Error);
    CHECK_THROWS_AS(VertexSet({{0.1, 2.0 * std::numbers::pi, Hemisphere::Left}}), Error);
    CHECK_THROWS_AS(VertexSet(std::vector<Vertex>{}), Error);
}

TEST_CASE("three collinear vertices, h = 1.5: hand-computed smoother") {
    const auto d = equator({0.0, 1.0, 2.0});
    const auto k = build_kernel(d, 1.5);
    const Eigen::MatrixXd raw = Eigen::MatrixXd(k.raw);
    const Eigen::MatrixXd sm = Eigen::MatrixXd(k.smoother);
    const double k0 = 15.0 / (16.0 * 1.5);
    const double k1 = k0 * (25.0 / 81.0);
    CHECK(raw(0, 0) == doctest::Approx(k0).epsilon(1e-12));
    CHECK(raw(0, 1) == doctest::Approx(k1).epsilon(1e-12));
    CHECK(raw(0, 2) == 0.0);
    CHECK(sm(0, 0) == doctest::Approx(81.0 / 106.0).epsilon(1e-12));
    CHECK(sm(0, 1) == doctest::Approx(25.0 / 106.0).epsilon(1e-12));
    CHECK(sm(1, 0) == doctest::Approx(25.0 / 131.0).epsilon(1e-12));
    CHECK(sm(1, 1) == doctest::Approx(81.0 / 131.0).epsilon(1e-12));
    CHECK(sm(1, 2) == doctest::Approx(25.0 / 131.0).epsilon(1e-12));
    CHECK(k.row_weights(1) == doctest::Approx(k0 + 2 * k1).epsilon(1e-12));
    CHECK(k.smoother_trace() == doctest::Approx(2 * 81.0 / 106.0 + 81.0 / 131.0).epsilon(1e-12));
    CHECK(k.every_vertex_has_neighbour());
}

TEST_CASE("bandwidth below spacing gives the identity smoother") {
    const auto d = fibonacci_sphere(200);
    const auto k = build_kernel(d, 0.5 * d.min_spacing());
    const Eigen::MatrixXd sm = Eigen::MatrixXd(k.smoother);
    CHECK((sm - Eigen::MatrixXd::Identity(200, 200)).cwiseAbs().maxCoeff() == 0.0);
    CHECK_FALSE(k.every_vertex_has_neighbour());
}

TEST_CASE("kernel invariants on a Fibonacci sphere") {
    const auto d = fibonacci_sphere(400);
    const double spacing = d.min_spacing();
    CHECK(spacing > 0.0);
    std::vector<double> hs{spacing * 1.2, spacing * 2.0, 30.0};
    Eigen::MatrixXd previous;
    for (double h : hs) {
        const auto k = build_kernel(d, h);
        const Eigen::MatrixXd raw = Eigen::MatrixXd(k.raw);
        CHECK((raw - raw.transpose()).cwiseAbs().maxCoeff() == 0.0);
        const Eigen::VectorXd rows = Eigen::MatrixXd(k.smoother).rowwise().sum();
        CHECK((rows.array() - 1.0).abs().maxCoeff() < 1e-12);
        for (int i = 0; i < raw.rows(); ++i) {
            for (int j = 0; j < raw.cols(); ++j) {
                if (raw(i, j) > 0.0) REQUIRE(geodesic_distance(d[static_cast<std::size_t>(i)], d[static_cast<std::size_t>(j)]) < h);
                else REQUIRE(geodesic_distance(d[static_cast<std::size_t>(i)], d[static_cast<std::size_t>(j)]) >= h);
            }
        }
        if (previous.size() > 0) {
            CHECK(((previous.array() > 0.0) && (raw.array() == 0.0)).count() == 0);
        }
        previous = raw;
    }
}

TEST_CASE("kernel never crosses hemispheres") {
    std::vector<Vertex> v;
    for (int i = 0; i < 4; ++i) v.push_back({1.0, 0.1 * i, Hemisphere::Left});
    for (int i = 0; i < 4; ++i) v.push_back({1.0, 0.1 * i, Hemisphere::Right});
    const VertexSet d(v);
    CHECK_FALSE(d.single_sphere());
    const Eigen::MatrixXd raw = Eigen::MatrixXd(build_kernel(d, 90.0).raw);
    CHECK(raw.topRightCorner(4, 4).cwiseAbs().maxCoeff() == 0.0);
    CHECK(raw.bottomLeftCorner(4, 4).cwiseAbs().maxCoeff() == 0.0);
    CHECK(raw.topLeftCorner(4, 4).minCoeff() > 0.0);
}

TEST_CASE("minimum spacing matches brute force") {
    const auto d = fibonacci_sphere(300);
    double best = kInfiniteDistance;
    for (std::size_t i = 0; i < d.size(); ++i)
        for (std::size_t j = i + 1; j < d.size(); ++j) best = std::min(best, geodesic_distance(d[i], d[j]));
    CHECK(d.min_spacing() == doctest::Approx(best).epsilon(1e-12));
}

TEST_CASE("normalized weights to an arbitrary location") {
    const auto d = equator({0.0, 1.0, 2.0});
    const Eigen::VectorXd w = normalized_weights_to(d, d[0], 1.5);
    CHECK(w(0) == doctest::Approx(81.0 / 106.0));
    CHECK(w.sum() == doctest::Approx(1.0));
    const Vertex far{std::numbers::pi / 2, std::numbers::pi, Hemisphere::Left};
    CHECK(normalized_weights_to(d, far, 1.5).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bandwidth grid") {
    const auto d = fibonacci_sphere(500);
    const auto grid = default_bandwidth_grid(d, 20);
    REQUIRE(grid.size() == 20);
    CHECK(grid.front() > d.min_spacing());
    CHECK(grid.back() == doctest::Approx(45.0));
    for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
    const auto ls = log_spaced(1.0, 100.0, 3);
    CHECK(ls[1] == doctest::Approx(10.0));
}

TEST_CASE("vertex file round trip and validation") {
    twincov::testing::ScratchDir dir("domain");
    const auto d = fibonacci_sphere(50, Hemisphere::Right);
    save_vertices(d, dir.file("v.csv"));
    const auto back = load_vertices(dir.file("v.csv"));
    REQUIRE(back.size() == d.size());
    for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(back[i].theta == d[i].theta);
        CHECK(back[i].phi == d[i].phi);
        CHECK(back[i].hemisphere == Hemisphere::Right);
    }
    {
        std::ofstream f(dir.file("bad.csv"));
        f << "index,theta,phi,hemisphere\n1,0.1,0.2,L\n2,0.1,0.3,L\n4,0.2,0.2,L\n";
    }
    CHECK_THROWS_AS((void)load_vertices(dir.file("bad.csv")), Error);
    {
        std::ofstream f(dir.file("two.csv"));
        f << "index,theta,phi,hemisphere\n1,0.1,0.2,L\n2,0.1,0.3,L\n";
    }
    CHECK_THROWS_AS((void)load_vertices(dir.file("two.csv")), Error);
}
