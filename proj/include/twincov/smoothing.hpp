#pragma once

#include "twincov/cohort.hpp"
#include "twincov/pointwise_fit.hpp"
#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace twincov {

/// Bandwidth-selection trace. Skipped candidates carry a NaN score.
struct GcvTrace {
    std::vector<double> candidates;
    std::vector<double> scores;
    double selected = 0.0;
    std::size_t selected_index = 0;
    std::vector<std::string> warnings;
};

/// Picks the minimum finite score; scores within 1e-12 * tie_scale of it count
/// as ties and go to the smallest bandwidth. Throws InvalidBandwidth when every
/// score is NaN.
void finish_trace(GcvTrace& trace, const std::string& what, double tie_scale = 0.0);

/// Kernels for a list of bandwidths, built once and shared by every selector.
[[nodiscard]] std::vector<KernelOperator> build_kernels(const VertexSet& domain, std::span<const double> bandwidths);

/// GCV(h) = (1/V) sum_v [(f - K~f)(v) / (1 - tr(K~)/V)]^2. Candidates whose
/// smoother has trace V (no neighbours anywhere) are skipped with a warning.
[[nodiscard]] double gcv_field_score(const Eigen::VectorXd& field, const KernelOperator& kernel);
[[nodiscard]] GcvTrace gcv_select(const Eigen::VectorXd& field, std::span<const KernelOperator> kernels);
[[nodiscard]] GcvTrace gcv_select(const Eigen::VectorXd& field, const VertexSet& domain,
                                  std::span<const double> candidates);

[[nodiscard]] Eigen::VectorXd smooth_field(const Eigen::VectorXd& field, const KernelOperator& kernel);

struct SmleResult {
    ComponentFields fields;
    Eigen::MatrixXd residuals;  // N x V, Y - X beta_smoothed
    std::vector<std::pair<std::string, GcvTrace>> traces;  // one per smoothed field
};

/// Smooths every coefficient row and variance field with its own GCV
/// bandwidth and forms the fixed-effect residuals.
[[nodiscard]] SmleResult smle(const TwinCohort& cohort, const ComponentFields& mle,
                              std::span<const KernelOperator> kernels);

}  // namespace twincov
