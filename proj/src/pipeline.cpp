#include "twincov/pipeline.hpp"

#include "twincov/error.hpp"
#include "twincov/sim_metrics.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

namespace twincov {

namespace {

class StepClock {
public:
    StepClock(std::vector<StepTiming>& out, std::string name)
        : out_(out), name_(std::move(name)), start_(std::chrono::steady_clock::now()) {}
    ~StepClock() {
        const std::chrono::duration<double> d = std::chrono::steady_clock::now() - start_;
        out_.push_back({name_, d.count()});
    }
    StepClock(const StepClock&) = delete;
    StepClock& operator=(const StepClock&) = delete;

private:
    std::vector<StepTiming>& out_;
    std::string name_;
    std::chrono::steady_clock::time_point start_;
};

int stage_of(Estimator e) {
    switch (e) {
        case Estimator::Mle: return 1;
        case Estimator::Mwle: return 1;
        case Estimator::Smle: return 2;
        case Estimator::SFsem:
        case Estimator::SSw: return 4;
        case Estimator::PsdFsem:
        case Estimator::PsdSw: return 5;
        case Estimator::PsdAce: return 6;
    }
    return 6;
}

std::vector<double> or_default(const std::vector<double>& given, const VertexSet& domain) {
    return given.empty() ? default_bandwidth_grid(domain) : given;
}

Eigen::MatrixXd select_columns(const Eigen::MatrixXd& m, const std::vector<std::size_t>& cols) {
    Eigen::MatrixXd out(m.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = m.col(static_cast<Eigen::Index>(cols[j]));
    return out;
}

void append_trace_warnings(std::vector<std::string>& out, const std::string& what, const GcvTrace& t) {
    for (const auto& w : t.warnings) out.push_back(what + ": " + w);
}

// Steps 4-6 on one domain. Stops after `stage`.
struct CovStages {
    CrossProducts cp;
    GcvTrace trace;
    std::size_t kernel_index = 0;
    std::optional<CovTriple> sfsem, psd_fsem;
    CovTriple ssw, psd_sw;
    PsdTruncation trunc_a, trunc_c, trunc_eG;
    RankSuggestion suggestion;
    RankSpec ranks;
    std::optional<PsdAceFit> fit;
};

CovStages run_cov_steps(const Eigen::MatrixXd& residuals, const FamilyIndex& families, const Eigen::VectorXd& sigma2_eL,
                        const VertexSet& domain, std::span<const KernelOperator> kernels, const PipelineConfig& config,
                        int stage, bool want_fsem, std::vector<StepTiming>& timings,
                        std::vector<std::string>& warnings) {
    CovStages s;
    {
        StepClock clock(timings, "step4_closed_form");
        s.cp = cross_products(residuals, families, sigma2_eL);
        s.trace = gcv_cov_bandwidth(s.cp.sa(), kernels);
        append_trace_warnings(warnings, "covariance bandwidth", s.trace);
        s.kernel_index = s.trace.selected_index;
        const KernelOperator& k = kernels[s.kernel_index];
        s.ssw = sandwich_estimates(s.cp, k);
        if (want_fsem) s.sfsem = sfsem_estimates(s.cp, k);
    }
    if (stage < 5) return s;
    {
        StepClock clock(timings, "step5_truncation");
        s.trunc_a = truncate_psd(s.ssw.sigma_a);
        s.trunc_c = truncate_psd(s.ssw.sigma_c);
        s.trunc_eG = truncate_psd(s.ssw.sigma_eG);
        s.psd_sw = CovTriple{s.trunc_a.matrix, s.trunc_c.matrix, s.trunc_eG.matrix, CovEstimator::PsdSw, s.ssw.bandwidth};
        if (s.sfsem) {
            s.psd_fsem = CovTriple{truncate_psd(s.sfsem->sigma_a).matrix, truncate_psd(s.sfsem->sigma_c).matrix,
                                   truncate_psd(s.sfsem->sigma_eG).matrix, CovEstimator::PsdFsem, s.sfsem->bandwidth};
        }
        s.suggestion = select_rank(s.trunc_a.eigenvalues, s.trunc_c.eigenvalues, s.trunc_eG.eigenvalues, families,
                                   static_cast<Eigen::Index>(domain.size()));
        s.ranks = config.ranks.value_or(s.suggestion.rank);
        auto clamp = [&](Eigen::Index& r, Eigen::Index positive, const char* name) {
            if (r > positive) {
                warnings.push_back(std::string("rank for ") + name + " reduced from " + std::to_string(r) + " to " +
                                   std::to_string(positive) + " (positive eigenvalues of the sandwich estimate)");
                r = positive;
            }
            require(r >= 1, ErrorCode::Numerical, std::string("sandwich estimate of ") + name + " has no positive eigenvalue");
        };
        clamp(s.ranks.a, s.trunc_a.positive_count, "Sigma_a");
        clamp(s.ranks.c, s.trunc_c.positive_count, "Sigma_c");
        clamp(s.ranks.eG, s.trunc_eG.positive_count, "Sigma_eG");
    }
    if (stage < 6) return s;
    {
        StepClock clock(timings, "step6_psd_ace");
        const KernelOperator& k = kernels[s.kernel_index];
        const CovFactorization init = initial_factors(s.ssw, s.ranks, config.eigen_method);
        const PsdAceProblem problem(s.cp, k, residuals, families);
        s.fit = fit_psd_ace(init, problem, config.descent, k.bandwidth);
        if (!s.fit->report.converged) {
            char buf[160];
            std::snprintf(buf, sizeof buf, "PSD-ACE stopped after %d iterations at gradient ratio %.3g%s",
                          s.fit->report.iterations, s.fit->report.final_grad_norm / s.fit->report.alpha0,
                          s.fit->report.stalled ? " (learning rate underflow)" : "");
            warnings.emplace_back(buf);
        }
    }
    return s;
}

ComponentFields with_heritability(ComponentFields f) {
    f.h2 = heritability(f.sigma2_a, f.sigma2_c, f.sigma2_e);
    return f;
}

}  // namespace

const char* to_string(Estimator e) {
    switch (e) {
        case Estimator::Mle: return "mle";
        case Estimator::Mwle: return "mwle";
        case Estimator::Smle: return "smle";
        case Estimator::SFsem: return "s-fsem";
        case Estimator::PsdFsem: return "psd-fsem";
        case Estimator::SSw: return "s-sw";
        case Estimator::PsdSw: return "psd-sw";
        case Estimator::PsdAce: return "psd-ace";
    }
    return "?";
}

Estimator parse_estimator(const std::string& name) {
    for (Estimator e : {Estimator::Mle, Estimator::Mwle, Estimator::Smle, Estimator::SFsem, Estimator::PsdFsem,
                        Estimator::SSw, Estimator::PsdSw, Estimator::PsdAce}) {
        if (name == to_string(e)) return e;
    }
    fail(ErrorCode::InvalidArgument, "unknown estimator '" + name + "'");
}

bool is_covariance_estimator(Estimator e) { return stage_of(e) >= 4; }

void PipelineConfig::validate() const {
    auto positive = [](const std::vector<double>& hs, const char* what) {
        for (double h : hs)
            require(std::isfinite(h) && h > 0.0, ErrorCode::InvalidBandwidth,
                    std::string(what) + " bandwidths must be positive");
    };
    positive(smooth_bandwidths, "smoothing");
    positive(cov_bandwidths, "covariance");
    positive(mwle_bandwidths, "MWLE");
    require(descent.tolerance > 0.0 && descent.learning_rate > 0.0 && descent.max_iterations >= 0,
            ErrorCode::InvalidArgument, "descent tolerance and learning rate must be positive");
    require(partitions >= 1, ErrorCode::InvalidArgument, "partition count must be at least 1");
    require(inverse_threshold > 0.0, ErrorCode::InvalidArgument, "inverse threshold must be positive");
    if (ranks) {
        require(ranks->a >= 1 && ranks->c >= 1 && ranks->eG >= 1, ErrorCode::InvalidArgument, "ranks must be positive");
    }
    require(mle.max_iterations > 0 && mle.floor_fraction > 0.0, ErrorCode::InvalidArgument, "invalid MLE options");
}

ComponentFields PipelineResult::fields_for(Estimator e) const {
    switch (e) {
        case Estimator::Mle: return with_heritability(mle);
        case Estimator::Mwle:
            require(mwle.has_value(), ErrorCode::InvalidArgument, "MWLE was not run");
            return with_heritability(*mwle);
        case Estimator::Smle:
            require(smle.has_value(), ErrorCode::InvalidArgument, "SMLE was not run");
            return with_heritability(smle->fields);
        default: break;
    }
    const CovTriple& t = covariance_for(e);
    ComponentFields f;
    f.beta = smle->fields.beta;
    f.sigma2_a = t.sigma_a.diagonal();
    f.sigma2_c = t.sigma_c.diagonal();
    f.sigma2_e = t.sigma_eG.diagonal();
    f.sigma2_eL = sigma_g->sigma2_eL;
    f.status = mle.status;
    f.bandwidth = t.bandwidth;
    f.h2 = heritability(f.sigma2_a, f.sigma2_c, f.sigma2_e);
    return f;
}

const CovTriple& PipelineResult::covariance_for(Estimator e) const {
    const std::optional<CovTriple>* slot = nullptr;
    switch (e) {
        case Estimator::SFsem: slot = &sfsem; break;
        case Estimator::SSw: slot = &ssw; break;
        case Estimator::PsdFsem: slot = &psd_fsem; break;
        case Estimator::PsdSw: slot = &psd_sw; break;
        case Estimator::PsdAce:
            require(psd_ace.has_value(), ErrorCode::InvalidArgument, "PSD-ACE was not run");
            return psd_ace->covariance;
        default: fail(ErrorCode::InvalidArgument, std::string(to_string(e)) + " has no covariance matrices");
    }
    require(slot->has_value(), ErrorCode::InvalidArgument, std::string(to_string(e)) + " was not run");
    return **slot;
}

PartitionFit partition_fit_combine(const Eigen::MatrixXd& residuals, const FamilyIndex& families,
                                   const Eigen::VectorXd& sigma2_eL, const VertexSet& domain,
                                   const std::vector<std::vector<std::size_t>>& partitions,
                                   const PipelineConfig& config) {
    validate_partitions(partitions, domain.size());
    PartitionFit out;
    out.report.partitions = partitions;
    std::array<std::vector<PartitionEvaluation>, 3> evals;
    std::vector<StepTiming> timings;
    std::vector<std::string> warnings;
    for (const auto& part : partitions) {
        const VertexSet sub = domain.subset(part);
        const Eigen::MatrixXd r = select_columns(residuals, part);
        Eigen::VectorXd el(static_cast<Eigen::Index>(part.size()));
        for (std::size_t i = 0; i < part.size(); ++i) el(static_cast<Eigen::Index>(i)) = sigma2_eL(static_cast<Eigen::Index>(part[i]));
        const auto kernels = build_kernels(sub, or_default(config.cov_bandwidths, sub));
        const CovStages s = run_cov_steps(r, families, el, sub, kernels, config, 6, false, timings, warnings);
        const KernelOperator& k = kernels[s.kernel_index];
        const InterpFactors f =
            make_interp_factors(s.fit->factors, sub, k, config.inverse_threshold, config.inverse_mode);
        evals[0].push_back(partition_evaluation(f, Component::A, domain, part, s.fit->factors.za));
        evals[1].push_back(partition_evaluation(f, Component::C, domain, part, s.fit->factors.zc));
        evals[2].push_back(partition_evaluation(f, Component::EG, domain, part, s.fit->factors.zeG));
        out.report.bandwidths.push_back(k.bandwidth);
        out.report.reports.push_back(s.fit->report);
    }
    std::array<Eigen::MatrixXd*, 3> slots{&out.covariance.sigma_a, &out.covariance.sigma_c, &out.covariance.sigma_eG};
    for (int c = 0; c < 3; ++c) {
        CombinedCovariance comb = combine_partitions(evals[static_cast<std::size_t>(c)]);
        out.report.negative_eigenvalues += comb.negative_eigenvalues;
        out.report.clipped_mass += comb.clipped_mass;
        *slots[static_cast<std::size_t>(c)] = std::move(comb.matrix);
    }
    out.covariance.tag = CovEstimator::PsdAce;
    double hsum = 0.0;
    for (double h : out.report.bandwidths) hsum += h;
    out.covariance.bandwidth = hsum / static_cast<double>(out.report.bandwidths.size());
    return out;
}

PipelineResult run_pipeline(const TwinCohort& cohort, const VertexSet& domain, const PipelineConfig& config,
                            Estimator target) {
    config.validate();
    require(cohort.n_vertices() == domain.size(), ErrorCode::DimensionMismatch,
            "cohort and vertex file disagree on V");
    const auto diagnostics = validate_cohort(cohort);
    for (const auto& d : diagnostics) {
        if (d.severity == Severity::Error) fail(ErrorCode::InvalidArgument, d.code + ": " + d.message);
    }
    const int stage = stage_of(target);
    PipelineResult res;
    res.target = target;
    for (const auto& d : diagnostics) {
        if (d.code == "unidentifiable") fail(ErrorCode::Unidentifiable, d.message);
        res.warnings.push_back(d.code + ": " + d.message);
    }

    {
        StepClock clock(res.timings, "step1_mle");
        res.mle = fit_mle_all(cohort, config.mle);
    }
    if (const auto bad = res.mle.n_unconverged(); bad > 0) {
        res.warnings.push_back(std::to_string(bad) + " vertices did not converge in the pointwise MLE");
    }
    if (target == Estimator::Mwle || config.run_mwle) {
        StepClock clock(res.timings, "mwle");
        const std::vector<double> grid =
            config.mwle_bandwidths.empty() ? log_spaced(0.5, 10.0, 8) : config.mwle_bandwidths;
        res.mwle_cv = cv_bandwidth_mwle(cohort, domain, res.mle, grid, config.seed, config.mle);
        res.mwle = fit_mwle(cohort, build_kernel(domain, res.mwle_cv->selected), res.mle, config.mle);
    }
    if (stage < 2) return res;

    std::vector<KernelOperator> smooth_kernels;
    {
        StepClock clock(res.timings, "step2_smle");
        smooth_kernels = build_kernels(domain, or_default(config.smooth_bandwidths, domain));
        res.smle = smle(cohort, res.mle, smooth_kernels);
        for (const auto& [name, t] : res.smle->traces) append_trace_warnings(res.warnings, name, t);
    }
    if (stage < 3) return res;

    std::vector<KernelOperator> cov_kernels;
    {
        StepClock clock(res.timings, "step3_measurement_error");
        cov_kernels = config.cov_bandwidths.empty() && config.smooth_bandwidths.empty()
                          ? std::move(smooth_kernels)
                          : build_kernels(domain, or_default(config.cov_bandwidths, domain));
        const ComponentFields& f = res.smle->fields;
        const Eigen::VectorXd total = f.sigma2_a + f.sigma2_c + f.sigma2_e;
        res.sigma_g = estimate_sigma_G_and_eL(res.smle->residuals, cohort.families, total, cov_kernels,
                                              config.sigma_g_criterion);
        append_trace_warnings(res.warnings, "measurement-error bandwidth", res.sigma_g->trace);
        if (res.sigma_g->clipped > 0) {
            res.warnings.push_back(std::to_string(res.sigma_g->clipped) +
                                   " negative measurement-error variances clipped to 0");
        }
    }

    const bool partitioned = stage >= 6 && config.partitions > 1;
    const bool want_fsem = target == Estimator::SFsem || target == Estimator::PsdFsem || stage >= 6;
    CovStages s = run_cov_steps(res.smle->residuals, cohort.families, res.sigma_g->sigma2_eL, domain, cov_kernels,
                                config, partitioned ? 5 : stage, want_fsem, res.timings, res.warnings);
    res.cross = std::move(s.cp);
    res.cov_trace = std::move(s.trace);
    res.ssw = std::move(s.ssw);
    res.sfsem = std::move(s.sfsem);
    if (stage >= 5) {
        res.psd_sw = std::move(s.psd_sw);
        res.psd_fsem = std::move(s.psd_fsem);
        res.rank_suggestion = std::move(s.suggestion);
        res.ranks = s.ranks;
    }
    if (stage < 6) return res;
    if (!partitioned) {
        res.psd_ace = std::move(s.fit);
        return res;
    }
    StepClock clock(res.timings, "step6_partitioned");
    PartitionFit pf = partition_fit_combine(res.smle->residuals, cohort.families, res.sigma_g->sigma2_eL, domain,
                                            interleaved_partitions(domain.size(), config.partitions,
                                                                   config.overlap_stride),
                                            config);
    PsdAceFit fit;
    fit.covariance = std::move(pf.covariance);
    fit.report = pf.report.reports.front();
    res.psd_ace = std::move(fit);
    res.partition = std::move(pf.report);
    return res;
}

}  // namespace twincov
