#include "twincov/closed_form_cov.hpp"

#include "dense_ops.hpp"
#include "twincov/error.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

namespace twincov {

namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

Eigen::MatrixXd symmetric_cross(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, double n) {
    Eigen::MatrixXd ab = a.transpose() * b;
    Eigen::MatrixXd out = (ab + ab.transpose()) / (2.0 * n);
    detail::symmetrize(out);
    return out;
}

Eigen::MatrixXd without_diagonal(const Eigen::MatrixXd& s) {
    Eigen::MatrixXd out = s;
    out.diagonal().setZero();
    return out;
}

// w w^T - K K^T: total kernel mass over distinct pairs (v0, v0').
Eigen::MatrixXd distinct_pair_mass(const KernelOperator& kernel) {
    const Eigen::VectorXd& w = kernel.row_weights;
    const SparseRowMatrix kk = kernel.raw * kernel.raw;
    Eigen::MatrixXd out = w * w.transpose();
    out -= Eigen::MatrixXd(kk);
    return out;
}

[[noreturn]] void fail_no_neighbour(double bandwidth) {
    char buf[160];
    std::snprintf(buf, sizeof buf,
                  "bandwidth %.6g too small: some vertex has no neighbour, so the off-diagonal kernel mass is zero",
                  bandwidth);
    fail(ErrorCode::InvalidBandwidth, buf);
}

void check_divisor(const Eigen::MatrixXd& divisor, double bandwidth) {
    const double scale = divisor.cwiseAbs().maxCoeff();
    if (!(divisor.minCoeff() > 1e-14 * scale)) fail_no_neighbour(bandwidth);
}

}  // namespace

const char* to_string(CovEstimator e) {
    switch (e) {
        case CovEstimator::SFsem: return "s-fsem";
        case CovEstimator::SSw: return "s-sw";
        case CovEstimator::PsdFsem: return "psd-fsem";
        case CovEstimator::PsdSw: return "psd-sw";
        case CovEstimator::PsdAce: return "psd-ace";
    }
    return "?";
}

Eigen::MatrixXd CrossProducts::s0_uncorrected() const {
    Eigen::MatrixXd out = s0;
    out.diagonal() += sigma2_eL;
    return out;
}

CrossProducts cross_products(const Eigen::MatrixXd& residuals, const FamilyIndex& families,
                             const Eigen::VectorXd& sigma2_eL) {
    require(static_cast<std::size_t>(residuals.rows()) == families.n_individuals(), ErrorCode::DimensionMismatch,
            "residual rows do not match the family index");
    require(sigma2_eL.size() == residuals.cols(), ErrorCode::DimensionMismatch,
            "measurement-error vector length differs from V");
    require(families.n_mz() > 0 && families.n_dz() > 0, ErrorCode::Unidentifiable,
            "cross products need at least one MZ and one DZ pair");
    require((sigma2_eL.array() >= 0.0).all(), ErrorCode::InvalidArgument, "measurement error must be nonnegative");
    CrossProducts cp;
    const double n = static_cast<double>(residuals.rows());
    cp.s0 = residuals.transpose() * residuals / n;
    detail::symmetrize(cp.s0);
    cp.s0.diagonal() -= sigma2_eL;
    cp.s1 = symmetric_cross(rows_of(residuals, families.first_twin_rows(FamilyKind::MZ)),
                            rows_of(residuals, families.second_twin_rows(FamilyKind::MZ)),
                            static_cast<double>(families.n_mz()));
    cp.s2 = symmetric_cross(rows_of(residuals, families.first_twin_rows(FamilyKind::DZ)),
                            rows_of(residuals, families.second_twin_rows(FamilyKind::DZ)),
                            static_cast<double>(families.n_dz()));
    cp.sigma2_eL = sigma2_eL;
    return cp;
}

Eigen::MatrixXd off_diagonal_kernel_regression(const Eigen::MatrixXd& s, const KernelOperator& kernel) {
    require(s.rows() == static_cast<Eigen::Index>(kernel.size()) && s.cols() == s.rows(),
            ErrorCode::DimensionMismatch, "matrix and kernel sizes differ");
    const Eigen::MatrixXd divisor = distinct_pair_mass(kernel);
    check_divisor(divisor, kernel.bandwidth);
    Eigen::MatrixXd out = detail::sandwich(kernel.raw, without_diagonal(s));
    out.array() /= divisor.array();
    detail::symmetrize(out);
    return out;
}

Eigen::VectorXd off_diagonal_kernel_regression_diag(const Eigen::MatrixXd& s, const KernelOperator& kernel) {
    const auto v_count = static_cast<Eigen::Index>(kernel.size());
    require(s.rows() == v_count && s.cols() == v_count, ErrorCode::DimensionMismatch, "matrix and kernel sizes differ");
    Eigen::VectorXd out(v_count);
    bool ok = true;
#pragma omp parallel for schedule(dynamic, 16) reduction(&& : ok)
    for (Eigen::Index v = 0; v < v_count; ++v) {
        std::vector<std::pair<Eigen::Index, double>> row;
        for (SparseRowMatrix::InnerIterator it(kernel.raw, v); it; ++it) row.emplace_back(it.col(), it.value());
        double num = 0.0;
        double sum = 0.0;
        double sum_sq = 0.0;
        for (const auto& [a, ka] : row) {
            sum += ka;
            sum_sq += ka * ka;
            for (const auto& [b, kb] : row) {
                if (a != b) num += ka * kb * s(a, b);
            }
        }
        const double den = sum * sum - sum_sq;
        ok = ok && den > 1e-14 * sum * sum;
        out(v) = den > 0.0 ? num / den : 0.0;
    }
    if (!ok) fail_no_neighbour(kernel.bandwidth);
    return out;
}

double sigma_G_criterion(const Eigen::MatrixXd& s1, const KernelOperator& kernel, SigmaGCriterion criterion) {
    if (!kernel.every_vertex_has_neighbour()) return std::numeric_limits<double>::quiet_NaN();
    const double v = static_cast<double>(kernel.size());
    const double resid = (s1 - detail::sandwich(kernel.smoother, s1)).squaredNorm();
    if (criterion == SigmaGCriterion::Raw) return resid;
    const double t = kernel.smoother_trace() / v;
    const double denom = 1.0 - t * t;
    if (denom <= 1e-12) return std::numeric_limits<double>::quiet_NaN();
    return resid / (v * v) / (denom * denom);
}

SigmaGResult estimate_sigma_G_and_eL(const Eigen::MatrixXd& residuals, const FamilyIndex& families,
                                     const Eigen::VectorXd& total_variance, std::span<const KernelOperator> kernels,
                                     SigmaGCriterion criterion) {
    require(!kernels.empty(), ErrorCode::InvalidArgument, "candidate bandwidth list is empty");
    require(total_variance.size() == residuals.cols(), ErrorCode::DimensionMismatch,
            "total variance length differs from V");
    require(families.n_mz() > 0, ErrorCode::Unidentifiable, "bandwidth selection for Sigma_G needs MZ pairs");
    const Eigen::MatrixXd s1 = symmetric_cross(rows_of(residuals, families.first_twin_rows(FamilyKind::MZ)),
                                               rows_of(residuals, families.second_twin_rows(FamilyKind::MZ)),
                                               static_cast<double>(families.n_mz()));
    SigmaGResult out;
    out.trace.candidates.resize(kernels.size());
    out.trace.scores.resize(kernels.size());
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        out.trace.candidates[i] = kernels[i].bandwidth;
        out.trace.scores[i] = sigma_G_criterion(s1, kernels[i], criterion);
        if (std::isnan(out.trace.scores[i])) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "bandwidth %.6g skipped: a vertex has no neighbour", kernels[i].bandwidth);
            out.trace.warnings.emplace_back(buf);
        }
    }
    finish_trace(out.trace, "measurement-error bandwidth", s1.squaredNorm() / static_cast<double>(s1.size()));
    const KernelOperator& kernel = kernels[out.trace.selected_index];
    out.bandwidth = kernel.bandwidth;

    const double n = static_cast<double>(residuals.rows());
    Eigen::MatrixXd s0u = residuals.transpose() * residuals / n;
    detail::symmetrize(s0u);
    out.sigma_G_diag = off_diagonal_kernel_regression_diag(s0u, kernel);
    out.sigma2_eL = total_variance - out.sigma_G_diag;
    for (Eigen::Index v = 0; v < out.sigma2_eL.size(); ++v) {
        if (out.sigma2_eL(v) < 0.0) {
            out.sigma2_eL(v) = 0.0;
            ++out.clipped;
        }
    }
    return out;
}

CovTriple sfsem_estimates(const CrossProducts& cp, const KernelOperator& kernel) {
    require(cp.size() == static_cast<Eigen::Index>(kernel.size()), ErrorCode::DimensionMismatch,
            "cross products and kernel sizes differ");
    const Eigen::MatrixXd divisor = distinct_pair_mass(kernel);
    check_divisor(divisor, kernel.bandwidth);
    auto regress = [&](const Eigen::MatrixXd& s) {
        Eigen::MatrixXd r = detail::sandwich(kernel.raw, without_diagonal(s));
        r.array() /= divisor.array();
        return r;
    };
    const Eigen::MatrixXd r0 = regress(cp.s0);
    const Eigen::MatrixXd r1 = regress(cp.s1);
    const Eigen::MatrixXd r2 = regress(cp.s2);
    CovTriple out;
    out.sigma_a = 2.0 * (r1 - r2);
    out.sigma_c = 2.0 * r2 - r1;
    out.sigma_eG = r0 - r1;
    detail::symmetrize(out.sigma_a);
    detail::symmetrize(out.sigma_c);
    detail::symmetrize(out.sigma_eG);
    out.tag = CovEstimator::SFsem;
    out.bandwidth = kernel.bandwidth;
    return out;
}

CovTriple sandwich_estimates(const CrossProducts& cp, const KernelOperator& kernel) {
    require(cp.size() == static_cast<Eigen::Index>(kernel.size()), ErrorCode::DimensionMismatch,
            "cross products and kernel sizes differ");
    CovTriple out;
    out.sigma_a = detail::sandwich(kernel.smoother, cp.sa());
    out.sigma_c = detail::sandwich(kernel.smoother, cp.sc());
    out.sigma_eG = detail::sandwich(kernel.smoother, cp.seG());
    out.tag = CovEstimator::SSw;
    out.bandwidth = kernel.bandwidth;
    return out;
}

double gcv_cov_score(const Eigen::MatrixXd& s, const KernelOperator& kernel) {
    require(s.rows() == static_cast<Eigen::Index>(kernel.size()), ErrorCode::DimensionMismatch,
            "matrix and kernel sizes differ");
    const double v = static_cast<double>(kernel.size());
    const double t = kernel.smoother_trace() / v;
    const double denom = 1.0 - t * t;
    if (denom <= 1e-12) return std::numeric_limits<double>::quiet_NaN();
    const double resid = (s - detail::sandwich(kernel.smoother, s)).squaredNorm();
    return resid / (v * v) / (denom * denom);
}

GcvTrace gcv_cov_bandwidth(const Eigen::MatrixXd& s, std::span<const KernelOperator> kernels) {
    require(!kernels.empty(), ErrorCode::InvalidArgument, "candidate bandwidth list is empty");
    GcvTrace trace;
    trace.candidates.resize(kernels.size());
    trace.scores.resize(kernels.size());
    for (std::size_t i = 0; i < kernels.size(); ++i) {
        trace.candidates[i] = kernels[i].bandwidth;
        trace.scores[i] = gcv_cov_score(s, kernels[i]);
        if (std::isnan(trace.scores[i])) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "bandwidth %.6g skipped: tr(K~)^2 >= V^2", kernels[i].bandwidth);
            trace.warnings.emplace_back(buf);
        }
    }
    finish_trace(trace, "covariance GCV", s.squaredNorm() / static_cast<double>(s.size()));
    return trace;
}

}  // namespace twincov
