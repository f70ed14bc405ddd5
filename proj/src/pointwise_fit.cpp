#include "twincov/pointwise_fit.hpp"

#include "twincov/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

namespace twincov {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kGradientStep = 1e-5;
constexpr double kMaxLogStep = 5.0;

struct OptimResult {
    Eigen::Vector3d x;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

// Projected BFGS on a box bounded below, with numerical gradients.
template <class F>
class BoundedBfgs {
public:
    BoundedBfgs(F f, Eigen::Vector3d lower, const MleOptions& opt) : f_(std::move(f)), lower_(lower), opt_(opt) {}

    OptimResult run(Eigen::Vector3d x) {
        x = x.cwiseMax(lower_);
        double fx = f_(x);
        Eigen::Vector3d g = gradient(x, fx);
        Eigen::Matrix3d h = Eigen::Matrix3d::Identity();
        bool fresh = true;
        OptimResult out{x, fx, false, 0};
        for (int iter = 0; iter < opt_.max_iterations; ++iter) {
            out.iterations = iter;
            const Eigen::Vector3d pg = projected(x, g);
            const double scale = 1.0 + std::abs(fx);
            if (pg.template lpNorm<Eigen::Infinity>() <= opt_.gradient_tolerance * scale) {
                out.converged = true;
                break;
            }
            Eigen::Vector3d d = -(h * pg);
            for (int i = 0; i < 3; ++i) {
                if (pg(i) == 0.0 && at_bound(x, i) && d(i) < 0.0) d(i) = 0.0;
            }
            if (d.dot(pg) >= 0.0) {
                h.setIdentity();
                fresh = true;
                d = -pg;
            }
            const double dmax = d.template lpNorm<Eigen::Infinity>();
            if (dmax > kMaxLogStep) d *= kMaxLogStep / dmax;

            double t = 1.0;
            Eigen::Vector3d xn;
            double fn = 0.0;
            bool accepted = false;
            for (int k = 0; k < 50; ++k, t *= 0.5) {
                xn = (x + t * d).cwiseMax(lower_);
                fn = f_(xn);
                if (std::isfinite(fn) && fn <= fx + 1e-4 * pg.dot(xn - x)) {
                    accepted = true;
                    break;
                }
            }
            if (!accepted) {
                if (!fresh) {
                    h.setIdentity();
                    fresh = true;
                    continue;
                }
                // Gradient noise dominates: accept a loose stationarity test.
                out.converged = pg.template lpNorm<Eigen::Infinity>() <= 1e-4 * scale;
                break;
            }
            const Eigen::Vector3d gn = gradient(xn, fn);
            const Eigen::Vector3d s = xn - x;
            const Eigen::Vector3d y = gn - g;
            const double sy = s.dot(y);
            const bool tiny_step = s.template lpNorm<Eigen::Infinity>() < 1e-12;
            const double change = fx - fn;
            x = xn;
            fx = fn;
            g = gn;
            if (sy > 1e-12 * s.norm() * y.norm()) {
                const double rho = 1.0 / sy;
                const Eigen::Matrix3d i3 = Eigen::Matrix3d::Identity();
                h = (i3 - rho * s * y.transpose()) * h * (i3 - rho * y * s.transpose()) + rho * s * s.transpose();
                fresh = false;
            }
            if (tiny_step && change <= 1e-15 * scale) {
                out.converged = projected(x, g).template lpNorm<Eigen::Infinity>() <= 1e-4 * scale;
                break;
            }
            out.iterations = iter + 1;
        }
        out.x = x;
        out.value = fx;
        return out;
    }

private:
    bool at_bound(const Eigen::Vector3d& x, int i) const { return x(i) <= lower_(i) + 1e-9; }

    Eigen::Vector3d projected(const Eigen::Vector3d& x, const Eigen::Vector3d& g) const {
        Eigen::Vector3d pg = g;
        for (int i = 0; i < 3; ++i) {
            if (at_bound(x, i) && g(i) > 0.0) pg(i) = 0.0;
        }
        return pg;
    }

    Eigen::Vector3d gradient(const Eigen::Vector3d& x, double fx) {
        Eigen::Vector3d g;
        for (int i = 0; i < 3; ++i) {
            Eigen::Vector3d xp = x;
            xp(i) += kGradientStep;
            if (x(i) - kGradientStep < lower_(i)) {
                g(i) = (f_(xp) - fx) / kGradientStep;
            } else {
                Eigen::Vector3d xm = x;
                xm(i) -= kGradientStep;
                g(i) = (f_(xp) - f_(xm)) / (2.0 * kGradientStep);
            }
        }
        return g;
    }

    F f_;
    Eigen::Vector3d lower_;
    const MleOptions& opt_;
};

template <class Loglik>
VertexFit fit_log_variances(const Loglik& loglik, double total_variance, double mean_square,
                            const MleOptions& options) {
    require(options.floor_fraction > 0.0, ErrorCode::InvalidArgument, "variance floor fraction must be positive");
    VertexFit out;
    // Near-constant data: a scale tied to the data magnitude keeps the floor
    // representable.
    const double base = std::max({total_variance, 1e-20 * mean_square, 1e-200});
    const double floor_value = options.floor_fraction * base;
    const Eigen::Vector3d lower = Eigen::Vector3d::Constant(std::log(floor_value));

    if (!(total_variance > 1e-20 * mean_square) || !std::isfinite(total_variance)) {
        out.sigma2 = Eigen::Vector3d::Constant(floor_value);
        out.loglik = loglik(out.sigma2);
        out.loglik_at_start = out.loglik;
        out.status.degenerate = true;
        out.status.at_floor = true;
        return out;
    }

    auto objective = [&](const Eigen::Vector3d& theta) { return -loglik(Eigen::Vector3d(theta.array().exp())); };
    const std::array<Eigen::Vector3d, 2> starts{
        Eigen::Vector3d(std::log(base / 3.0), std::log(base / 3.0), std::log(base / 3.0)),
        Eigen::Vector3d(std::log(0.1 * base), std::log(0.1 * base), std::log(0.8 * base)),
    };
    OptimResult best;
    bool have = false;
    double best_start = -std::numeric_limits<double>::infinity();
    int total_iterations = 0;
    for (const auto& start : starts) {
        best_start = std::max(best_start, -objective(start));
        BoundedBfgs<decltype(objective)> solver(objective, lower, options);
        const OptimResult r = solver.run(start);
        total_iterations += r.iterations;
        if (!have || r.value < best.value) {
            best = r;
            have = true;
        }
    }
    out.sigma2 = best.x.array().exp();
    out.loglik = -best.value;
    out.loglik_at_start = best_start;
    out.status.converged = best.converged;
    out.status.iterations = total_iterations;
    out.status.at_floor = (best.x - lower).minCoeff() <= 1e-6;
    return out;
}

double group_variance(int g, const Eigen::Vector3d& s) {
    const auto& c = kGroupCoefficients[static_cast<std::size_t>(g)];
    return c[0] * s(0) + c[1] * s(1) + c[2] * s(2);
}

}  // namespace

std::size_t ComponentFields::n_unconverged() const {
    return static_cast<std::size_t>(std::count_if(status.begin(), status.end(), [](const auto& s) { return !s.converged; }));
}

BlockRotation::BlockRotation(const FamilyIndex& families) : families_(&families) {
    const auto n_mz = static_cast<Eigen::Index>(families.n_mz());
    const auto n_dz = static_cast<Eigen::Index>(families.n_dz());
    const auto n_s = static_cast<Eigen::Index>(families.n_singleton());
    size_ = {n_mz, n_mz, n_dz, n_dz, n_s};
    begin_[0] = 0;
    for (int g = 1; g < kBlockGroups; ++g) begin_[static_cast<std::size_t>(g)] = begin_[static_cast<std::size_t>(g - 1)] + size_[static_cast<std::size_t>(g - 1)];
    row_family_.assign(families.n_individuals(), 0);
    const auto& fams = families.families();
    for (std::size_t f = 0; f < fams.size(); ++f) {
        const auto i = static_cast<Eigen::Index>(f);
        switch (fams[f].kind) {
            case FamilyKind::MZ:
                row_family_[static_cast<std::size_t>(begin_[0] + i)] = f;
                row_family_[static_cast<std::size_t>(begin_[1] + i)] = f;
                break;
            case FamilyKind::DZ:
                row_family_[static_cast<std::size_t>(begin_[2] + i - n_mz)] = f;
                row_family_[static_cast<std::size_t>(begin_[3] + i - n_mz)] = f;
                break;
            case FamilyKind::Singleton:
                row_family_[static_cast<std::size_t>(begin_[4] + i - n_mz - n_dz)] = f;
                break;
        }
    }
}

Eigen::MatrixXd BlockRotation::apply(const Eigen::MatrixXd& rows) const {
    require(static_cast<std::size_t>(rows.rows()) == families_->n_individuals(), ErrorCode::DimensionMismatch,
            "row count does not match the family index");
    Eigen::MatrixXd out(rows.rows(), rows.cols());
    const double r = std::numbers::sqrt2 / 2.0;
    const auto& fams = families_->families();
    const auto n_mz = static_cast<Eigen::Index>(families_->n_mz());
    const auto n_dz = static_cast<Eigen::Index>(families_->n_dz());
    for (std::size_t f = 0; f < fams.size(); ++f) {
        const auto i = static_cast<Eigen::Index>(f);
        const auto& fam = fams[f];
        const auto a = static_cast<Eigen::Index>(fam.rows[0]);
        if (fam.kind == FamilyKind::Singleton) {
            out.row(begin_[4] + i - n_mz - n_dz) = rows.row(a);
            continue;
        }
        const auto b = static_cast<Eigen::Index>(fam.rows[1]);
        const int gs = fam.kind == FamilyKind::MZ ? 0 : 2;
        const Eigen::Index k = fam.kind == FamilyKind::MZ ? i : i - n_mz;
        out.row(begin_[static_cast<std::size_t>(gs)] + k) = r * (rows.row(a) + rows.row(b));
        out.row(begin_[static_cast<std::size_t>(gs + 1)] + k) = r * (rows.row(a) - rows.row(b));
    }
    return out;
}

ProfiledAceLikelihood::ProfiledAceLikelihood(const TwinCohort& cohort, std::size_t vertex)
    : ProfiledAceLikelihood(BlockRotation(cohort.families), BlockRotation(cohort.families).apply(cohort.design),
                            BlockRotation(cohort.families).apply(cohort.phenotype.col(static_cast<Eigen::Index>(vertex)))) {
    require(vertex < cohort.n_vertices(), ErrorCode::InvalidArgument, "vertex index out of range");
}

ProfiledAceLikelihood::ProfiledAceLikelihood(const BlockRotation& rotation, const Eigen::MatrixXd& rotated_design,
                                             const Eigen::VectorXd& rotated_phenotype) {
    require(rotated_design.rows() == rotated_phenotype.size(), ErrorCode::DimensionMismatch,
            "design and phenotype row counts differ");
    for (int g = 0; g < kBlockGroups; ++g) {
        const auto k = static_cast<std::size_t>(g);
        const auto b = rotation.group_begin(g);
        const auto n = rotation.group_size(g);
        const auto xg = rotated_design.middleRows(b, n);
        const auto yg = rotated_phenotype.segment(b, n);
        n_[k] = static_cast<double>(n);
        xtx_[k] = xg.transpose() * xg;
        xty_[k] = xg.transpose() * yg;
        yty_[k] = yg.squaredNorm();
    }
}

Eigen::VectorXd ProfiledAceLikelihood::gls_beta(const Eigen::Vector3d& sigma2) const {
    const auto p = xtx_[0].rows();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (int g = 0; g < kBlockGroups; ++g) {
        const auto k = static_cast<std::size_t>(g);
        if (n_[k] == 0.0) continue;
        const double tau = group_variance(g, sigma2);
        a += xtx_[k] / tau;
        b += xty_[k] / tau;
    }
    return a.ldlt().solve(b);
}

double ProfiledAceLikelihood::loglik(const Eigen::Vector3d& sigma2) const {
    const Eigen::VectorXd beta = gls_beta(sigma2);
    double ll = 0.0;
    for (int g = 0; g < kBlockGroups; ++g) {
        const auto k = static_cast<std::size_t>(g);
        if (n_[k] == 0.0) continue;
        const double tau = group_variance(g, sigma2);
        const double rss = std::max(0.0, yty_[k] - 2.0 * beta.dot(xty_[k]) + beta.dot(xtx_[k] * beta));
        ll -= 0.5 * (n_[k] * (kLog2Pi + std::log(tau)) + rss / tau);
    }
    return ll;
}

double ProfiledAceLikelihood::total_variance_estimate() const {
    const auto p = xtx_[0].rows();
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    double yy = 0.0;
    double n = 0.0;
    for (std::size_t k = 0; k < kBlockGroups; ++k) {
        a += xtx_[k];
        b += xty_[k];
        yy += yty_[k];
        n += n_[k];
    }
    const Eigen::VectorXd beta = a.completeOrthogonalDecomposition().solve(b);
    return std::max(0.0, yy - beta.dot(b)) / n;
}

double ProfiledAceLikelihood::mean_square() const {
    double yy = 0.0;
    double n = 0.0;
    for (std::size_t k = 0; k < kBlockGroups; ++k) {
        yy += yty_[k];
        n += n_[k];
    }
    return yy / n;
}

double ResidualAceLikelihood::loglik(const Eigen::Vector3d& sigma2) const {
    double ll = 0.0;
    for (int g = 0; g < kBlockGroups; ++g) {
        const auto k = static_cast<std::size_t>(g);
        if (count[k] == 0.0) continue;
        const double tau = group_variance(g, sigma2);
        ll -= 0.5 * (count[k] * (kLog2Pi + std::log(tau)) + sum_squares[k] / tau);
    }
    return ll;
}

VertexFit fit_profiled(const ProfiledAceLikelihood& likelihood, const MleOptions& options) {
    auto ll = [&](const Eigen::Vector3d& s) { return likelihood.loglik(s); };
    VertexFit fit = fit_log_variances(ll, likelihood.total_variance_estimate(), likelihood.mean_square(), options);
    fit.beta = likelihood.gls_beta(fit.sigma2);
    return fit;
}

VertexFit fit_residual(const ResidualAceLikelihood& likelihood, const MleOptions& options) {
    double n = 0.0;
    double q = 0.0;
    for (std::size_t k = 0; k < kBlockGroups; ++k) {
        n += likelihood.count[k];
        q += likelihood.sum_squares[k];
    }
    require(n > 0.0, ErrorCode::InvalidArgument, "residual likelihood has no observations");
    auto ll = [&](const Eigen::Vector3d& s) { return likelihood.loglik(s); };
    return fit_log_variances(ll, q / n, q / n, options);
}

VertexFit fit_mle_vertex(const TwinCohort& cohort, std::size_t vertex, const MleOptions& options) {
    return fit_profiled(ProfiledAceLikelihood(cohort, vertex), options);
}

namespace {

ComponentFields allocate_fields(Eigen::Index p, Eigen::Index v) {
    ComponentFields out;
    out.beta.setZero(p, v);
    out.sigma2_a.setZero(v);
    out.sigma2_c.setZero(v);
    out.sigma2_e.setZero(v);
    out.status.assign(static_cast<std::size_t>(v), {});
    return out;
}

void store(ComponentFields& out, Eigen::Index v, const VertexFit& fit) {
    out.sigma2_a(v) = fit.sigma2(0);
    out.sigma2_c(v) = fit.sigma2(1);
    out.sigma2_e(v) = fit.sigma2(2);
    out.status[static_cast<std::size_t>(v)] = fit.status;
}

// Per-group sums of squares of rotated rows, one column per vertex.
Eigen::MatrixXd group_sums_of_squares(const BlockRotation& rotation, const Eigen::MatrixXd& rotated) {
    Eigen::MatrixXd q(kBlockGroups, rotated.cols());
    for (int g = 0; g < kBlockGroups; ++g) {
        q.row(g) = rotated.middleRows(rotation.group_begin(g), rotation.group_size(g)).colwise().squaredNorm();
    }
    return q;
}

ResidualAceLikelihood residual_likelihood(const Eigen::VectorXd& counts, const Eigen::VectorXd& sums) {
    ResidualAceLikelihood lik;
    for (int g = 0; g < kBlockGroups; ++g) {
        lik.count[static_cast<std::size_t>(g)] = counts(g);
        lik.sum_squares[static_cast<std::size_t>(g)] = sums(g);
    }
    return lik;
}

}  // namespace

ComponentFields fit_mle_all(const TwinCohort& cohort, const MleOptions& options) {
    const BlockRotation rotation(cohort.families);
    const Eigen::MatrixXd x = rotation.apply(cohort.design);
    const Eigen::MatrixXd y = rotation.apply(cohort.phenotype);
    const auto v_count = y.cols();
    ComponentFields out = allocate_fields(x.cols(), v_count);
#pragma omp parallel for schedule(dynamic, 8)
    for (Eigen::Index v = 0; v < v_count; ++v) {
        const ProfiledAceLikelihood lik(rotation, x, y.col(v));
        const VertexFit fit = fit_profiled(lik, options);
        out.beta.col(v) = fit.beta;
        store(out, v, fit);
    }
    return out;
}

Eigen::MatrixXd fixed_effect_residuals(const TwinCohort& cohort, const Eigen::MatrixXd& beta) {
    require(beta.rows() == cohort.design.cols() && beta.cols() == cohort.phenotype.cols(),
            ErrorCode::DimensionMismatch, "coefficient matrix must be p x V");
    return cohort.phenotype - cohort.design * beta;
}

ComponentFields fit_mwle(const TwinCohort& cohort, const KernelOperator& kernel, const ComponentFields& residual_source,
                         const MleOptions& options) {
    require(kernel.smoother.rows() == cohort.phenotype.cols(), ErrorCode::DimensionMismatch,
            "kernel and cohort have different vertex counts");
    const BlockRotation rotation(cohort.families);
    const Eigen::MatrixXd r = rotation.apply(fixed_effect_residuals(cohort, residual_source.beta));
    const Eigen::MatrixXd q = group_sums_of_squares(rotation, r);
    const Eigen::MatrixXd smoothed = (kernel.smoother * q.transpose()).transpose();
    Eigen::VectorXd counts(kBlockGroups);
    for (int g = 0; g < kBlockGroups; ++g) counts(g) = static_cast<double>(rotation.group_size(g));

    const auto v_count = r.cols();
    ComponentFields out = allocate_fields(residual_source.beta.rows(), v_count);
    out.beta = residual_source.beta;
    out.bandwidth = kernel.bandwidth;
#pragma omp parallel for schedule(dynamic, 8)
    for (Eigen::Index v = 0; v < v_count; ++v) {
        store(out, v, fit_residual(residual_likelihood(counts, smoothed.col(v)), options));
    }
    return out;
}

std::vector<int> assign_family_folds(const FamilyIndex& families, std::uint64_t seed, int folds) {
    require(folds >= 2, ErrorCode::InvalidArgument, "at least two folds are required");
    const auto& fams = families.families();
    require(fams.size() >= static_cast<std::size_t>(folds), ErrorCode::InvalidArgument,
            "fewer families than cross-validation folds");
    auto mix = [](std::uint64_t z) {
        z += 0x9E3779B97F4A7C15ULL;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    };
    std::vector<std::uint64_t> key(fams.size());
    for (std::size_t i = 0; i < fams.size(); ++i) {
        std::uint64_t h = 0xCBF29CE484222325ULL;  // FNV-1a
        for (unsigned char ch : fams[i].id) {
            h ^= ch;
            h *= 0x100000001B3ULL;
        }
        key[i] = mix(seed ^ h);
    }
    std::vector<std::size_t> order(fams.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return key[a] != key[b] ? key[a] < key[b] : fams[a].id < fams[b].id;
    });
    std::vector<int> fold(fams.size());
    for (std::size_t rank = 0; rank < order.size(); ++rank) fold[order[rank]] = static_cast<int>(rank % static_cast<std::size_t>(folds));
    return fold;
}

MwleCvResult cv_bandwidth_mwle(const TwinCohort& cohort, const VertexSet& domain,
                               const ComponentFields& residual_source, std::span<const double> candidates,
                               std::uint64_t seed, const MleOptions& options) {
    require(!candidates.empty(), ErrorCode::InvalidArgument, "candidate bandwidth list is empty");
    require(domain.size() == cohort.n_vertices(), ErrorCode::DimensionMismatch,
            "domain and cohort have different vertex counts");
    constexpr int kFolds = 5;
    MwleCvResult out;
    out.candidates.assign(candidates.begin(), candidates.end());
    out.fold_of_family = assign_family_folds(cohort.families, seed, kFolds);
    if (candidates.size() == 1) {
        out.selected = candidates[0];
        out.heldout_loglik.assign(1, 0.0);
        return out;
    }

    const BlockRotation rotation(cohort.families);
    const Eigen::MatrixXd r = rotation.apply(fixed_effect_residuals(cohort, residual_source.beta));
    const auto v_count = r.cols();
    const auto& row_family = rotation.row_family();

    std::vector<Eigen::MatrixXd> fold_q(kFolds, Eigen::MatrixXd::Zero(kBlockGroups, v_count));
    std::vector<Eigen::VectorXd> fold_n(kFolds, Eigen::VectorXd::Zero(kBlockGroups));
    for (int g = 0; g < kBlockGroups; ++g) {
        for (Eigen::Index i = rotation.group_begin(g); i < rotation.group_begin(g) + rotation.group_size(g); ++i) {
            const int f = out.fold_of_family[row_family[static_cast<std::size_t>(i)]];
            fold_q[static_cast<std::size_t>(f)].row(g) += r.row(i).cwiseAbs2();
            fold_n[static_cast<std::size_t>(f)](g) += 1.0;
        }
    }
    Eigen::MatrixXd total_q = Eigen::MatrixXd::Zero(kBlockGroups, v_count);
    Eigen::VectorXd total_n = Eigen::VectorXd::Zero(kBlockGroups);
    for (int f = 0; f < kFolds; ++f) {
        total_q += fold_q[static_cast<std::size_t>(f)];
        total_n += fold_n[static_cast<std::size_t>(f)];
    }

    out.heldout_loglik.assign(candidates.size(), 0.0);
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        const KernelOperator kernel = build_kernel(domain, candidates[c]);
        Eigen::VectorXd per_vertex = Eigen::VectorXd::Zero(v_count);
        for (int f = 0; f < kFolds; ++f) {
            const auto& qf = fold_q[static_cast<std::size_t>(f)];
            const Eigen::VectorXd n_train = total_n - fold_n[static_cast<std::size_t>(f)];
            const Eigen::MatrixXd train = (kernel.smoother * (total_q - qf).transpose()).transpose();
            const Eigen::VectorXd n_held = fold_n[static_cast<std::size_t>(f)];
#pragma omp parallel for schedule(dynamic, 8)
            for (Eigen::Index v = 0; v < v_count; ++v) {
                const VertexFit fit = fit_residual(residual_likelihood(n_train, train.col(v)), options);
                per_vertex(v) += residual_likelihood(n_held, qf.col(v)).loglik(fit.sigma2);
            }
        }
        out.heldout_loglik[c] = per_vertex.sum();
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < candidates.size(); ++c) {
        const double s = out.heldout_loglik[c];
        const double b = out.heldout_loglik[best];
        if (s > b || (s == b && candidates[c] < candidates[best])) best = c;
    }
    out.selected = candidates[best];
    return out;
}

}  // namespace twincov
