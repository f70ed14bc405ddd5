#pragma once

#include "twincov/closed_form_cov.hpp"
#include "twincov/cohort.hpp"
#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

namespace twincov {

struct PsdTruncation {
    Eigen::MatrixXd matrix;
    Eigen::Index positive_count = 0;
    Eigen::VectorXd eigenvalues;  // descending, before truncation
};

/// A strictly positive eigenvalue exceeds this fraction of the largest |eigenvalue|.
inline constexpr double kPositiveEigenTolerance = 1e-10;

/// Nearest PSD matrix in Frobenius norm: symmetrise, then keep the strictly
/// positive part of the spectrum.
[[nodiscard]] PsdTruncation truncate_psd(const Eigen::MatrixXd& m);
[[nodiscard]] Eigen::Index positive_eigen_count(const Eigen::VectorXd& eigenvalues);

enum class EigenMethod { Auto, Dense, Subspace };

struct EigenPairs {
    Eigen::VectorXd values;   // descending
    Eigen::MatrixXd vectors;  // columns; first nonzero entry of each is positive
};

/// Largest `k` eigenpairs (algebraically) of a symmetric matrix. `Auto` uses a
/// dense solver up to V = 2000 and block subspace iteration beyond.
[[nodiscard]] EigenPairs top_eigenpairs(const Eigen::MatrixXd& m, Eigen::Index k, EigenMethod method = EigenMethod::Auto);

struct RankSpec {
    Eigen::Index a = 0;
    Eigen::Index c = 0;
    Eigen::Index eG = 0;
};

struct RankSuggestion {
    RankSpec rank;
    bool structural = false;  // V > N: ranks from family counts
    std::vector<double> scree_a;
    std::vector<double> scree_c;
    std::vector<double> scree_eG;
};

/// Index i - 1 (1-based count) of the largest second difference
/// l[i-1] - 2 l[i] + l[i+1]; at least 1.
[[nodiscard]] Eigen::Index elbow_rank(std::span<const double> descending);

[[nodiscard]] RankSuggestion select_rank(const Eigen::VectorXd& eig_a, const Eigen::VectorXd& eig_c,
                                         const Eigen::VectorXd& eig_eG, const FamilyIndex& families,
                                         Eigen::Index n_vertices);

struct CovFactorization {
    Eigen::MatrixXd za;
    Eigen::MatrixXd zc;
    Eigen::MatrixXd zeG;
};

/// Z = U_d diag(sqrt(lambda_d)) from the top eigenpairs of each estimate.
/// Throws if a requested rank exceeds the number of positive eigenvalues.
[[nodiscard]] CovFactorization initial_factors(const CovTriple& symmetric, const RankSpec& rank,
                                               EigenMethod method = EigenMethod::Auto);

struct DescentConfig {
    double tolerance = 1e-4;
    double learning_rate = 0.1;
    int max_iterations = 1000;
    /// Also reject steps that raise the objective (not only the gradient norm).
    bool guard_objective = true;
};

struct Gradients {
    Eigen::MatrixXd a;
    Eigen::MatrixXd c;
    Eigen::MatrixXd eG;
    [[nodiscard]] double norm() const { return std::sqrt(a.squaredNorm() + c.squaredNorm() + eG.squaredNorm()); }
};

/// The PSD-ACE least-squares objective with its one-time precomputations
/// (K S* K products, kernel row sums, and the data-only constant).
class PsdAceProblem {
public:
    PsdAceProblem(const CrossProducts& cp, const KernelOperator& kernel, const Eigen::MatrixXd& residuals,
                  const FamilyIndex& families);

    [[nodiscard]] double objective(const CovFactorization& z) const;
    [[nodiscard]] Gradients gradients(const CovFactorization& z) const;
    /// Objective and gradients sharing intermediate products.
    [[nodiscard]] double evaluate(const CovFactorization& z, Gradients* grad) const;

    [[nodiscard]] double constant() const noexcept { return constant_; }
    [[nodiscard]] Eigen::Index size() const noexcept { return pa_.rows(); }

private:
    Eigen::MatrixXd pa_;  // K (2 S0 + 2 S1 + S2) K
    Eigen::MatrixXd pc_;  // K (2 S0 + 2 S1 + 2 S2) K
    Eigen::MatrixXd p0_;  // K S0 K
    Eigen::VectorXd w_;   // K 1
    double constant_ = 0.0;
};

struct ConvergenceRow {
    int iteration = 0;
    double grad_norm = 0.0;
    double learning_rate = 0.0;
    double objective = 0.0;
};

struct ConvergenceReport {
    int iterations = 0;  // steps attempted, including rolled-back ones
    int accepted = 0;
    bool converged = false;
    bool stalled = false;  // learning rate fell below 1e-15
    double alpha0 = 0.0;
    double final_grad_norm = 0.0;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    std::vector<ConvergenceRow> history;  // one row per accepted iterate, starting at 0
    std::vector<double> learning_rates;   // every halving, in order
};

struct PsdAceFit {
    CovFactorization factors;
    CovTriple covariance;
    ConvergenceReport report;
};

/// Gradient descent with step rollback and learning-rate halving.
[[nodiscard]] PsdAceFit fit_psd_ace(const CovFactorization& init, const PsdAceProblem& problem,
                                    const DescentConfig& config, double bandwidth);

}  // namespace twincov
