#include "test_support.hpp"
#include "twincov/error.hpp"
#include "twincov/psd_ace.hpp"
#include "twincov/sim_metrics.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>

using namespace twincov;
using namespace twincov::testing;

TEST_CASE("harmonic basis: constant row, count, quadrature orthonormality") {
    const auto grid = fibonacci_sphere(100000);
    const Eigen::MatrixXd b = spherical_harmonics_basis(grid);
    CHECK(b.rows() == 28);
    CHECK((b.row(0).array() - 1.0 / std::sqrt(4.0 * std::numbers::pi)).abs().maxCoeff() < 1e-14);
    const Eigen::MatrixXd gram = b * b.transpose() * (4.0 * std::numbers::pi / 100000.0);
    CHECK((gram - Eigen::MatrixXd::Identity(28, 28)).cwiseAbs().maxCoeff() < 1e-2);

    std::vector<Vertex> two{{1.0, 1.0, Hemisphere::Left}, {1.0, 1.0, Hemisphere::Right}};
    CHECK_THROWS_AS((void)spherical_harmonics_basis(VertexSet(two)), Error);
}

TEST_CASE("truth: targets, ranks, PSD, heritability summary") {
    const auto t = build_truth(fibonacci_sphere(1002));
    CHECK(std::abs(t.sigma_a.diagonal().mean() - 0.015) < 1e-10);
    CHECK(std::abs(t.sigma_c.diagonal().mean() - 0.010) < 1e-10);
    CHECK(std::abs(t.sigma_eG.diagonal().mean() - 0.12) < 1e-10);
    CHECK(std::abs(t.sigma2_eL.mean() - 0.03) < 1e-10);
    CHECK(truncate_psd(t.sigma_a).positive_count == 5);
    CHECK(truncate_psd(t.sigma_c).positive_count == 5);
    CHECK(truncate_psd(t.sigma_eG).positive_count == 6);
    for (const auto* m : {&t.sigma_a, &t.sigma_c, &t.sigma_eG}) {
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(*m);
        CHECK(es.eigenvalues().minCoeff() >= -1e-12 * es.eigenvalues().maxCoeff());
    }
    MESSAGE("h2 mean " << t.h2.mean() << " range [" << t.h2.minCoeff() << ", " << t.h2.maxCoeff() << "]");
    CHECK(std::abs(t.h2.mean() - 0.126) < 0.03);
}

TEST_CASE("simulated cohorts: determinism and Monte-Carlo moments") {
    const auto t = build_truth(fibonacci_sphere(40));
    const auto c1 = simulate_cohort(t, 3, 3, 2, 99);
    const auto c2 = simulate_cohort(t, 3, 3, 2, 99);
    CHECK(c1.phenotype == c2.phenotype);
    CHECK(c1.design == c2.design);
    CHECK(simulate_cohort(t, 3, 3, 2, 100).phenotype != c1.phenotype);
    CHECK((c1.design.col(0).array() == 1.0).all());

    const std::size_t pairs = 10000;
    const auto big = simulate_cohort(t, pairs, pairs, pairs, 7);
    const auto& y = big.phenotype;
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<Eigen::Index> pick(0, 39);
    auto check_cross = [&](Eigen::Index offset, const Eigen::MatrixXd& target) {
        for (int s = 0; s < 10; ++s) {
            const Eigen::Index u = pick(rng), v = pick(rng);
            Eigen::VectorXd prod(static_cast<Eigen::Index>(pairs));
            for (std::size_t i = 0; i < pairs; ++i) {
                const Eigen::Index r = offset + 2 * static_cast<Eigen::Index>(i);
                prod(static_cast<Eigen::Index>(i)) = 0.5 * (y(r, u) * y(r + 1, v) + y(r, v) * y(r + 1, u));
            }
            const double mean = prod.mean();
            const double se = std::sqrt((prod.array() - mean).square().sum() / (pairs - 1.0) / pairs);
            CHECK(std::abs(mean - target(u, v)) < 3.0 * se);
        }
    };
    check_cross(0, t.sigma_a + t.sigma_c);
    check_cross(2 * static_cast<Eigen::Index>(pairs), 0.5 * t.sigma_a + t.sigma_c);

    Eigen::MatrixXd total = t.sigma_a + t.sigma_c + t.sigma_eG;
    total.diagonal() += t.sigma2_eL;
    for (int s = 0; s < 10; ++s) {
        const Eigen::Index u = pick(rng), v = pick(rng);
        const Eigen::ArrayXd prod = y.col(u).tail(pairs).array() * y.col(v).tail(pairs).array();
        const double mean = prod.mean();
        const double se = std::sqrt((prod - mean).square().sum() / (pairs - 1.0) / pairs);
        CHECK(std::abs(mean - total(u, v)) < 3.0 * se);
    }
}

TEST_CASE("ISE, MISE and the bias-variance identity") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> z;
    Eigen::MatrixXd truth(5, 5);
    for (Eigen::Index i = 0; i < 25; ++i) truth.data()[i] = z(rng);
    CHECK(ise(truth, truth) == 0.0);
    CHECK(ise(truth + Eigen::MatrixXd::Ones(5, 5), truth) == doctest::Approx(1.0));
    CHECK(normalized_ise(2.0 * truth, truth) == doctest::Approx(1.0));
    CHECK(ise_field(Eigen::Vector2d(1, 3), Eigen::Vector2d(0, 0)) == doctest::Approx(5.0));
    CHECK_THROWS_AS((void)ise(truth, Eigen::MatrixXd::Zero(4, 4)), Error);

    std::vector<Eigen::MatrixXd> reps;
    std::vector<double> ises;
    for (int r = 0; r < 7; ++r) {
        Eigen::MatrixXd e = truth;
        for (Eigen::Index i = 0; i < 25; ++i) e.data()[i] += 0.3 + z(rng);
        reps.push_back(e);
        ises.push_back(ise(e, truth));
    }
    const auto bv = bias_variance(reps, truth);
    CHECK(bv.mise == doctest::Approx(mise(ises)).epsilon(1e-12));
    CHECK(std::abs(bv.bias2 + bv.variance - bv.mise) < 1e-10);
    CHECK(bv.variance > 0.0);
    const auto one = bias_variance(std::span(reps).first(1), truth);
    CHECK(one.variance == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));
    CHECK(one.bias2 == doctest::Approx(one.mise));
}

TEST_CASE("heritability") {
    std::size_t zeros = 0;
    const Eigen::VectorXd h = heritability(Eigen::Vector3d(1, 1, 0), Eigen::Vector3d(0, 1, 0), Eigen::Vector3d(1, 1, 0), &zeros);
    CHECK(h(0) == doctest::Approx(0.5));
    CHECK(h(1) == doctest::Approx(1.0 / 3.0));
    CHECK(h(2) == 0.0);
    CHECK(zeros == 1);
    CHECK(replicate_seed(1, 2) != replicate_seed(1, 3));
    CHECK(replicate_seed(1, 2) == replicate_seed(1, 2));
}
