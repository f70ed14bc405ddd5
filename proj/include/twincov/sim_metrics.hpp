#pragma once

#include "twincov/cohort.hpp"
#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace twincov {

inline constexpr int kHarmonicCount = 28;

/// Real spherical harmonics of degree 0, 2, 4, 6 at every vertex, one row per
/// function, degree-major with order ascending from -l to l. Throws
/// InvalidArgument for a two-hemisphere domain.
[[nodiscard]] Eigen::MatrixXd spherical_harmonics_basis(const VertexSet& domain);

/// 1-based basis rows contributing to each simulated component.
struct BasisSets {
    std::vector<int> a{1, 7, 13, 19, 25};
    std::vector<int> c{2, 8, 14, 20, 26};
    std::vector<int> eG{1, 3, 9, 15, 21, 27};
    std::vector<int> eL{1, 4, 10, 16, 22, 28};
};

/// Spatial means of the component variances after scaling.
struct TruthTargets {
    double a = 0.015;
    double c = 0.010;
    double eG = 0.12;
    double eL = 0.03;
};

struct SimTruth {
    VertexSet domain;
    Eigen::MatrixXd basis;  // 28 x V
    Eigen::MatrixXd root_a, root_c, root_eG;  // V x k; Sigma = root root^T
    Eigen::MatrixXd sigma_a, sigma_c, sigma_eG;
    Eigen::VectorXd sigma2_eL;
    Eigen::VectorXd h2;
    double alpha_a = 0.0, alpha_c = 0.0, alpha_eG = 0.0, alpha_eL = 0.0;
};

[[nodiscard]] SimTruth build_truth(const VertexSet& domain, const TruthTargets& targets = {},
                                   const BasisSets& sets = {});

/// Cohort from the functional ACE model: canonical families, intercept plus
/// one standard-normal covariate, true coefficients zero.
[[nodiscard]] TwinCohort simulate_cohort(const SimTruth& truth, std::size_t n_mz, std::size_t n_dz,
                                         std::size_t n_singleton, std::uint64_t seed);

/// Independent seed for replicate `r` of a run with `master` seed.
[[nodiscard]] std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t replicate);

/// sum (estimate - truth)^2 / V^2 for matrices, / V for fields.
[[nodiscard]] double ise(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth);
[[nodiscard]] double ise_field(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);
/// ISE divided by the matching mean square of the truth.
[[nodiscard]] double normalized_ise(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth);
[[nodiscard]] double normalized_ise_field(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth);
[[nodiscard]] double mise(std::span<const double> ises);

struct BiasVariance {
    double bias2 = 0.0;
    double variance = 0.0;
    double mise = 0.0;
    std::size_t replicates = 0;
};

/// Streaming bias^2 / variance / MISE over replicates of one estimator. Works
/// on matrices or fields (as V x 1); `scale_exponent` is 2 for matrices.
class MiseAccumulator {
public:
    void add(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth);
    [[nodiscard]] BiasVariance result() const;
    [[nodiscard]] std::size_t count() const noexcept { return n_; }

private:
    Eigen::MatrixXd sum_;
    Eigen::MatrixXd truth_;
    double ise_sum_ = 0.0;
    std::size_t n_ = 0;
};

[[nodiscard]] BiasVariance bias_variance(std::span<const Eigen::MatrixXd> estimates, const Eigen::MatrixXd& truth);

/// sigma2_a / (sigma2_a + sigma2_c + sigma2_e) per vertex; a zero denominator
/// gives 0 and increments `zero_denominators` when provided.
[[nodiscard]] Eigen::VectorXd heritability(const Eigen::VectorXd& sigma2_a, const Eigen::VectorXd& sigma2_c,
                                           const Eigen::VectorXd& sigma2_e, std::size_t* zero_denominators = nullptr);

}  // namespace twincov
