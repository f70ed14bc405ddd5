#pragma once

#include "twincov/cohort.hpp"
#include "twincov/smoothing.hpp"
#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <string>

namespace twincov {

/// Residual cross-product summaries. s0 is corrected for measurement error:
/// s0 = R^T R / N - diag(sigma2_eL).
struct CrossProducts {
    Eigen::MatrixXd s0;
    Eigen::MatrixXd s1;
    Eigen::MatrixXd s2;
    Eigen::VectorXd sigma2_eL;

    [[nodiscard]] Eigen::MatrixXd sa() const { return 2.0 * s1 - 2.0 * s2; }
    [[nodiscard]] Eigen::MatrixXd sc() const { return 2.0 * s2 - s1; }
    [[nodiscard]] Eigen::MatrixXd seG() const { return s0 - s1; }
    [[nodiscard]] Eigen::MatrixXd s0_uncorrected() const;
    [[nodiscard]] Eigen::Index size() const noexcept { return s0.rows(); }
};

[[nodiscard]] CrossProducts cross_products(const Eigen::MatrixXd& residuals, const FamilyIndex& families,
                                           const Eigen::VectorXd& sigma2_eL);

enum class CovEstimator { SFsem, SSw, PsdFsem, PsdSw, PsdAce };
[[nodiscard]] const char* to_string(CovEstimator e);

struct CovTriple {
    Eigen::MatrixXd sigma_a;
    Eigen::MatrixXd sigma_c;
    Eigen::MatrixXd sigma_eG;
    CovEstimator tag = CovEstimator::SSw;
    double bandwidth = 0.0;
};

/// Bandwidth criterion for the measurement-error step. `Gcv` divides the
/// residual norm ||S1 - K~ S1 K~||^2 / V^2 by (1 - tr(K~)^2/V^2)^2; `Raw` uses
/// the bare norm, which is minimised by the least smoothing allowed.
enum class SigmaGCriterion { Gcv, Raw };

struct SigmaGResult {
    Eigen::VectorXd sigma_G_diag;
    Eigen::VectorXd sigma2_eL;
    double bandwidth = 0.0;
    std::size_t clipped = 0;  // negative measurement-error values set to zero
    GcvTrace trace;
};

/// Full matrix {K (S - diag S) K} ./ (w w^T - K K^T); diagonal-free kernel
/// regression of S. Throws InvalidBandwidth if any divisor entry is zero.
[[nodiscard]] Eigen::MatrixXd off_diagonal_kernel_regression(const Eigen::MatrixXd& s, const KernelOperator& kernel);

/// Only the diagonal of off_diagonal_kernel_regression, in O(V * support^2).
[[nodiscard]] Eigen::VectorXd off_diagonal_kernel_regression_diag(const Eigen::MatrixXd& s,
                                                                  const KernelOperator& kernel);

[[nodiscard]] double sigma_G_criterion(const Eigen::MatrixXd& s1, const KernelOperator& kernel,
                                       SigmaGCriterion criterion);

/// Measurement error: sigma2_eL = total SMLE variance - diag(Sigma_G), with
/// the bandwidth chosen on S1 over `kernels`.
[[nodiscard]] SigmaGResult estimate_sigma_G_and_eL(const Eigen::MatrixXd& residuals, const FamilyIndex& families,
                                                   const Eigen::VectorXd& total_variance,
                                                   std::span<const KernelOperator> kernels,
                                                   SigmaGCriterion criterion = SigmaGCriterion::Gcv);

/// Closed-form FSEM estimator, excluding v0 = v0' from every kernel sum.
[[nodiscard]] CovTriple sfsem_estimates(const CrossProducts& cp, const KernelOperator& kernel);

/// Symmetric sandwich estimator K~ S K~^T for each component.
[[nodiscard]] CovTriple sandwich_estimates(const CrossProducts& cp, const KernelOperator& kernel);

/// ||S - K~ S K~^T||_F^2 / V^2 / (1 - tr(K~)^2/V^2)^2, NaN when degenerate.
[[nodiscard]] double gcv_cov_score(const Eigen::MatrixXd& s, const KernelOperator& kernel);
[[nodiscard]] GcvTrace gcv_cov_bandwidth(const Eigen::MatrixXd& s, std::span<const KernelOperator> kernels);

}  // namespace twincov
