#include "twincov/smoothing.hpp"

#include "twincov/error.hpp"

#include <cmath>
#include <algorithm>
#include <cstdio>
#include <limits>

namespace twincov {

void finish_trace(GcvTrace& trace, const std::string& what, double tie_scale) {
    double best = std::numeric_limits<double>::infinity();
    for (double s : trace.scores)
        if (!std::isnan(s)) best = std::min(best, s);
    require(std::isfinite(best), ErrorCode::InvalidBandwidth, what + ": every candidate bandwidth is degenerate");
    const double cutoff = best + 1e-12 * std::abs(tie_scale);
    bool found = false;
    for (std::size_t i = 0; i < trace.scores.size(); ++i) {
        if (!(trace.scores[i] <= cutoff)) continue;
        if (!found || trace.candidates[i] < trace.selected) {
            trace.selected_index = i;
            trace.selected = trace.candidates[i];
            found = true;
        }
    }
}

std::vector<KernelOperator> build_kernels(const VertexSet& domain, std::span<const double> bandwidths) {
    require(!bandwidths.empty(), ErrorCode::InvalidArgument, "candidate bandwidth list is empty");
    std::vector<KernelOperator> out(bandwidths.size());
#pragma omp parallel for schedule(dynamic, 1)
    for (std::size_t i = 0; i < bandwidths.size(); ++i) out[i] = build_kernel(domain, bandwidths[i]);
    return out;
}

double gcv_field_score(const Eigen::VectorXd& field, const KernelOperator& kernel) {
    require(static_cast<std::size_t>(field.size()) == kernel.size(), ErrorCode::DimensionMismatch,
            "field length does not match the kernel");
    const double v = static_cast<double>(field.size());
    const double denom = 1.0 - kernel.smoother_trace() / v;
    if (denom <= 1e-12) return std::numeric_limits<double>::quiet_NaN();
    const Eigen::VectorXd resid = field - kernel.smoother * field;
    return (resid / denom).squaredNorm() / v;
}

GcvTrace gcv_select(const Eigen::VectorXd& field, std::span<const KernelOperator> kernels) {
    require(!kernels.empty(), ErrorCode::InvalidArgument, "candidate bandwidth list is empty");
    GcvTrace trace;
    trace.candidates.resize(kernels.size());
    trace.scores.resize(kernels.size());
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        trace.candidates[i] = kernels[i].bandwidth;
        trace.scores[i] = gcv_field_score(field, kernels[i]);
        if (std::isnan(trace.scores[i])) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "bandwidth %.6g skipped: smoother trace equals V", kernels[i].bandwidth);
            trace.warnings.emplace_back(buf);
        }
    }
    finish_trace(trace, "GCV", field.squaredNorm() / static_cast<double>(field.size()));
    return trace;
}

GcvTrace gcv_select(const Eigen::VectorXd& field, const VertexSet& domain, std::span<const double> candidates) {
    const auto kernels = build_kernels(domain, candidates);
    return gcv_select(field, kernels);
}

Eigen::VectorXd smooth_field(const Eigen::VectorXd& field, const KernelOperator& kernel) {
    require(static_cast<std::size_t>(field.size()) == kernel.size(), ErrorCode::DimensionMismatch,
            "field length does not match the kernel");
    return kernel.smoother * field;
}

SmleResult smle(const TwinCohort& cohort, const ComponentFields& mle, std::span<const KernelOperator> kernels) {
    require(!kernels.empty(), ErrorCode::InvalidArgument, "candidate bandwidth list is empty");
    require(mle.n_vertices() == cohort.n_vertices() && kernels.front().size() == cohort.n_vertices(),
            ErrorCode::DimensionMismatch, "fields, kernels and cohort disagree on V");
    SmleResult out;
    out.fields = mle;
    auto smooth = [&](const std::string& name, const Eigen::VectorXd& f) -> Eigen::VectorXd {
        GcvTrace trace = gcv_select(f, kernels);
        Eigen::VectorXd s = smooth_field(f, kernels[trace.selected_index]);
        out.traces.emplace_back(name, std::move(trace));
        return s;
    };
    for (Eigen::Index r = 0; r < mle.beta.rows(); ++r) {
        const std::string name = static_cast<std::size_t>(r) < cohort.covariate_names.size()
                                     ? cohort.covariate_names[static_cast<std::size_t>(r)]
                                     : "x" + std::to_string(r + 1);
        out.fields.beta.row(r) = smooth("beta_" + name, mle.beta.row(r).transpose()).transpose();
    }
    out.fields.sigma2_a = smooth("sigma2_a", mle.sigma2_a);
    out.fields.sigma2_c = smooth("sigma2_c", mle.sigma2_c);
    out.fields.sigma2_e = smooth("sigma2_e", mle.sigma2_e);
    out.residuals = fixed_effect_residuals(cohort, out.fields.beta);
    return out;
}

}  // namespace twincov
