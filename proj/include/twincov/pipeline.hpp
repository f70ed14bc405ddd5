#pragma once

#include "twincov/closed_form_cov.hpp"
#include "twincov/cohort.hpp"
#include "twincov/covfun_eval.hpp"
#include "twincov/pointwise_fit.hpp"
#include "twincov/psd_ace.hpp"
#include "twincov/smoothing.hpp"
#include "twincov/sphere_domain.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace twincov {

enum class Estimator { Mle, Mwle, Smle, SFsem, PsdFsem, SSw, PsdSw, PsdAce };

[[nodiscard]] const char* to_string(Estimator e);
/// Accepts the CLI spellings mle, mwle, smle, s-fsem, psd-fsem, s-sw, psd-sw, psd-ace.
[[nodiscard]] Estimator parse_estimator(const std::string& name);
[[nodiscard]] bool is_covariance_estimator(Estimator e);

struct PipelineConfig {
    std::vector<double> smooth_bandwidths;  // empty: default grid of the domain
    std::vector<double> cov_bandwidths;     // empty: default grid of the domain
    std::vector<double> mwle_bandwidths;    // empty: 8 log-spaced values in [0.5, 10] degrees
    std::uint64_t seed = 1;                 // MWLE fold assignment
    bool run_mwle = false;                  // also when the target is not mwle
    SigmaGCriterion sigma_g_criterion = SigmaGCriterion::Gcv;
    std::optional<RankSpec> ranks;          // empty: suggested from the scree
    DescentConfig descent;
    std::size_t partitions = 1;
    std::size_t overlap_stride = 4;         // interleaved partitions share every k-th block
    double inverse_threshold = 1e-4;
    ThresholdMode inverse_mode = ThresholdMode::Absolute;
    EigenMethod eigen_method = EigenMethod::Auto;
    MleOptions mle;

    /// Throws InvalidArgument on any inconsistent value.
    void validate() const;
};

struct StepTiming {
    std::string step;
    double seconds = 0.0;
};

struct PartitionReport {
    std::vector<std::vector<std::size_t>> partitions;
    std::vector<double> bandwidths;
    std::vector<ConvergenceReport> reports;
    Eigen::Index negative_eigenvalues = 0;
    double clipped_mass = 0.0;
};

struct PipelineResult {
    Estimator target = Estimator::PsdAce;
    ComponentFields mle;
    std::optional<ComponentFields> mwle;
    std::optional<MwleCvResult> mwle_cv;
    std::optional<SmleResult> smle;
    std::optional<SigmaGResult> sigma_g;
    std::optional<CrossProducts> cross;
    std::optional<GcvTrace> cov_trace;
    std::optional<CovTriple> sfsem, ssw, psd_fsem, psd_sw;
    std::optional<RankSuggestion> rank_suggestion;
    std::optional<RankSpec> ranks;
    std::optional<PsdAceFit> psd_ace;
    std::optional<PartitionReport> partition;
    std::vector<StepTiming> timings;
    std::vector<std::string> warnings;

    /// Per-vertex fields of an estimator: pointwise fits as fitted; covariance
    /// estimators contribute their diagonals and the measurement error.
    [[nodiscard]] ComponentFields fields_for(Estimator e) const;
    [[nodiscard]] const CovTriple& covariance_for(Estimator e) const;
};

/// Runs the pipeline stages in order, stopping once `target` is available.
[[nodiscard]] PipelineResult run_pipeline(const TwinCohort& cohort, const VertexSet& domain,
                                          const PipelineConfig& config, Estimator target);

/// Covariance smoothing, truncation and PSD-ACE on each vertex subset, interpolated
/// to the full domain and averaged. Residuals and measurement error come from the pointwise and smoothing stages.
struct PartitionFit {
    CovTriple covariance;
    PartitionReport report;
};
[[nodiscard]] PartitionFit partition_fit_combine(const Eigen::MatrixXd& residuals, const FamilyIndex& families,
                                                 const Eigen::VectorXd& sigma2_eL, const VertexSet& domain,
                                                 const std::vector<std::vector<std::size_t>>& partitions,
                                                 const PipelineConfig& config);

}  // namespace twincov
