#pragma once

#include "twincov/cohort.hpp"
#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace twincov {

/// Per-vertex outcome flags of a variance-component fit.
struct VertexStatus {
    bool converged = true;
    bool degenerate = false;  // (near-)constant data; variances pinned at the floor
    bool at_floor = false;    // at least one variance sits on the lower bound
    int iterations = 0;
};

/// Per-vertex parameter fields. sigma2_e is the total unique variance
/// (environment plus measurement error) unless sigma2_eL is split off.
struct ComponentFields {
    Eigen::MatrixXd beta;  // p x V
    Eigen::VectorXd sigma2_a;
    Eigen::VectorXd sigma2_c;
    Eigen::VectorXd sigma2_e;
    std::optional<Eigen::VectorXd> sigma2_eL;
    std::optional<Eigen::VectorXd> h2;
    std::vector<VertexStatus> status;
    double bandwidth = 0.0;  // MWLE bandwidth, 0 for unweighted fits

    [[nodiscard]] std::size_t n_vertices() const noexcept { return static_cast<std::size_t>(sigma2_a.size()); }
    [[nodiscard]] std::size_t n_unconverged() const;
};

/// The five independent groups obtained by rotating each twin pair into its
/// sum and difference: (y1 +/- y2)/sqrt(2).
enum class BlockGroup : int { MzSum = 0, MzDiff, DzSum, DzDiff, Single };
inline constexpr int kBlockGroups = 5;

/// Variance of a rotated observation in each group as a combination of
/// (sigma2_a, sigma2_c, sigma2_e).
inline constexpr std::array<std::array<double, 3>, kBlockGroups> kGroupCoefficients{{
    {2.0, 2.0, 1.0},  // MZ sum
    {0.0, 0.0, 1.0},  // MZ difference
    {1.5, 2.0, 1.0},  // DZ sum
    {0.5, 0.0, 1.0},  // DZ difference
    {1.0, 1.0, 1.0},  // singleton
}};

/// Orthogonal row rotation of a cohort into the five block groups. Rows of
/// the rotated matrix are ordered group by group.
class BlockRotation {
public:
    explicit BlockRotation(const FamilyIndex& families);

    [[nodiscard]] Eigen::MatrixXd apply(const Eigen::MatrixXd& rows) const;
    [[nodiscard]] Eigen::Index group_begin(int g) const { return begin_[static_cast<std::size_t>(g)]; }
    [[nodiscard]] Eigen::Index group_size(int g) const { return size_[static_cast<std::size_t>(g)]; }
    /// Family (position in FamilyIndex::families()) owning each rotated row.
    [[nodiscard]] const std::vector<std::size_t>& row_family() const noexcept { return row_family_; }

private:
    const FamilyIndex* families_;
    std::array<Eigen::Index, kBlockGroups> begin_{};
    std::array<Eigen::Index, kBlockGroups> size_{};
    std::vector<std::size_t> row_family_;
};

struct MleOptions {
    double floor_fraction = 1e-10;  // variance floor relative to the total variance
    int max_iterations = 200;
    double gradient_tolerance = 1e-7;  // relative to 1 + |negative log-likelihood|
};

struct VertexFit {
    Eigen::VectorXd beta;
    Eigen::Vector3d sigma2 = Eigen::Vector3d::Zero();  // (a, c, e)
    double loglik = 0.0;
    double loglik_at_start = 0.0;  // best of the starting points
    VertexStatus status;
};

/// Gaussian log-likelihood of the ACE family-block model with beta profiled
/// out by GLS. Exposed for testing.
class ProfiledAceLikelihood {
public:
    ProfiledAceLikelihood(const TwinCohort& cohort, std::size_t vertex);
    ProfiledAceLikelihood(const BlockRotation& rotation, const Eigen::MatrixXd& rotated_design,
                          const Eigen::VectorXd& rotated_phenotype);

    [[nodiscard]] double loglik(const Eigen::Vector3d& sigma2) const;
    [[nodiscard]] Eigen::VectorXd gls_beta(const Eigen::Vector3d& sigma2) const;
    [[nodiscard]] double total_variance_estimate() const;  // OLS residual variance
    [[nodiscard]] double mean_square() const;

private:
    std::array<double, kBlockGroups> n_{};
    std::array<Eigen::MatrixXd, kBlockGroups> xtx_;
    std::array<Eigen::VectorXd, kBlockGroups> xty_;
    std::array<double, kBlockGroups> yty_{};
};

/// Log-likelihood of mean-zero residuals summarised by per-group counts and
/// sums of squares (the MWLE building block).
struct ResidualAceLikelihood {
    std::array<double, kBlockGroups> count{};
    std::array<double, kBlockGroups> sum_squares{};

    [[nodiscard]] double loglik(const Eigen::Vector3d& sigma2) const;
};

[[nodiscard]] VertexFit fit_mle_vertex(const TwinCohort& cohort, std::size_t vertex, const MleOptions& options = {});
[[nodiscard]] VertexFit fit_profiled(const ProfiledAceLikelihood& likelihood, const MleOptions& options = {});
[[nodiscard]] VertexFit fit_residual(const ResidualAceLikelihood& likelihood, const MleOptions& options = {});

/// Point-wise MLE at every vertex. Parallel over vertices; the result does not
/// depend on the number of threads.
[[nodiscard]] ComponentFields fit_mle_all(const TwinCohort& cohort, const MleOptions& options = {});

/// Fixed-effect residuals Y - X beta for a fields object.
[[nodiscard]] Eigen::MatrixXd fixed_effect_residuals(const TwinCohort& cohort, const Eigen::MatrixXd& beta);

/// Maximum weighted likelihood: at each focal vertex maximise the
/// kernel-weighted sum of residual log-likelihoods of its neighbours.
/// Residuals come from `residual_source.beta`.
[[nodiscard]] ComponentFields fit_mwle(const TwinCohort& cohort, const KernelOperator& kernel,
                                       const ComponentFields& residual_source, const MleOptions& options = {});

struct MwleCvResult {
    std::vector<double> candidates;
    std::vector<double> heldout_loglik;  // summed over folds and vertices
    double selected = 0.0;
    std::vector<int> fold_of_family;  // aligned with FamilyIndex::families()
};

/// Deterministic assignment of families to `folds` folds from (seed, family ids).
[[nodiscard]] std::vector<int> assign_family_folds(const FamilyIndex& families, std::uint64_t seed, int folds = 5);

/// Five-fold leave-family-out choice of the MWLE bandwidth. The held-out score
/// is the unweighted log-likelihood of the held-out families' residuals under
/// the variances fitted on the remaining families; ties go to the smaller h.
[[nodiscard]] MwleCvResult cv_bandwidth_mwle(const TwinCohort& cohort, const VertexSet& domain,
                                             const ComponentFields& residual_source,
                                             std::span<const double> candidates, std::uint64_t seed,
                                             const MleOptions& options = {});

}  // namespace twincov
