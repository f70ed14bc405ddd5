#include "twincov/psd_ace.hpp"

#include "dense_ops.hpp"
#include "twincov/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace twincov {

namespace {

constexpr Eigen::Index kDenseEigenLimit = 2000;

void fix_signs(Eigen::MatrixXd& vectors) {
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
        const double scale = vectors.col(j).cwiseAbs().maxCoeff();
        for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
            if (std::abs(vectors(i, j)) > 1e-12 * scale) {
                if (vectors(i, j) < 0.0) vectors.col(j) *= -1.0;
                break;
            }
        }
    }
}

EigenPairs dense_top(const Eigen::MatrixXd& m, Eigen::Index k) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    require(es.info() == Eigen::Success, ErrorCode::Numerical, "symmetric eigendecomposition failed");
    EigenPairs out;
    out.values = es.eigenvalues().reverse().head(k);
    out.vectors = es.eigenvectors().rowwise().reverse().leftCols(k);
    return out;
}

// Block subspace iteration on the shifted matrix M + sI, which is PSD for s at
// least the Gershgorin radius, followed by Rayleigh-Ritz.
EigenPairs subspace_top(const Eigen::MatrixXd& m, Eigen::Index k) {
    const Eigen::Index n = m.rows();
    const Eigen::Index block = std::min(n, k + std::max<Eigen::Index>(10, k / 2));
    const double shift = m.cwiseAbs().rowwise().sum().maxCoeff();
    Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n, block);
    for (Eigen::Index j = 0; j < block; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) q(i, j) = std::sin(static_cast<double>((i + 1) * (j + 1)) * 0.7071067811865476);
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(q);
    q = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    Eigen::VectorXd previous = Eigen::VectorXd::Constant(k, std::numeric_limits<double>::infinity());
    EigenPairs out;
    for (int iter = 0; iter < 2000; ++iter) {
        Eigen::MatrixXd y = detail::blocked_product(m, q) + shift * q;
        qr.compute(y);
        q = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
        if (iter % 5 != 4) continue;
        const Eigen::MatrixXd h = q.transpose() * detail::blocked_product(m, q);
        const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (h + h.transpose()));
        out.values = es.eigenvalues().reverse().head(k);
        out.vectors = q * es.eigenvectors().rowwise().reverse().leftCols(k);
        const double scale = std::max(out.values.cwiseAbs().maxCoeff(), 1e-300);
        if ((out.values - previous).cwiseAbs().maxCoeff() <= 1e-12 * scale) break;
        previous = out.values;
    }
    return out;
}

}  // namespace

Eigen::Index positive_eigen_count(const Eigen::VectorXd& eigenvalues) {
    if (eigenvalues.size() == 0) return 0;
    const double scale = eigenvalues.cwiseAbs().maxCoeff();
    return (eigenvalues.array() > kPositiveEigenTolerance * scale).count();
}

PsdTruncation truncate_psd(const Eigen::MatrixXd& m) {
    require(m.rows() == m.cols(), ErrorCode::DimensionMismatch, "matrix must be square");
    Eigen::MatrixXd sym = m;
    detail::symmetrize(sym);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    require(es.info() == Eigen::Success, ErrorCode::Numerical, "symmetric eigendecomposition failed");
    PsdTruncation out;
    out.eigenvalues = es.eigenvalues().reverse();
    out.positive_count = positive_eigen_count(out.eigenvalues);
    const Eigen::Index n = m.rows();
    const Eigen::Index k = out.positive_count;
    const Eigen::MatrixXd u = es.eigenvectors().rightCols(k);
    const Eigen::VectorXd root = es.eigenvalues().tail(k).cwiseSqrt();
    const Eigen::MatrixXd scaled = u * root.asDiagonal();
    out.matrix = k > 0 ? Eigen::MatrixXd(scaled * scaled.transpose()) : Eigen::MatrixXd::Zero(n, n);
    detail::symmetrize(out.matrix);
    return out;
}

EigenPairs top_eigenpairs(const Eigen::MatrixXd& m, Eigen::Index k, EigenMethod method) {
    require(m.rows() == m.cols(), ErrorCode::DimensionMismatch, "matrix must be square");
    require(k >= 1 && k <= m.rows(), ErrorCode::InvalidArgument, "requested eigenpair count out of range");
    Eigen::MatrixXd sym = m;
    detail::symmetrize(sym);
    const bool dense = method == EigenMethod::Dense || (method == EigenMethod::Auto && m.rows() <= kDenseEigenLimit);
    EigenPairs out = dense ? dense_top(sym, k) : subspace_top(sym, k);
    fix_signs(out.vectors);
    return out;
}

Eigen::Index elbow_rank(std::span<const double> l) {
    if (l.size() < 3) return 1;
    Eigen::Index best = 1;
    double best_value = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i + 1 < l.size(); ++i) {
        const double sd = l[i - 1] - 2.0 * l[i] + l[i + 1];
        if (sd > best_value) {
            best_value = sd;
            best = static_cast<Eigen::Index>(i);
        }
    }
    return std::max<Eigen::Index>(best, 1);
}

RankSuggestion select_rank(const Eigen::VectorXd& eig_a, const Eigen::VectorXd& eig_c, const Eigen::VectorXd& eig_eG,
                           const FamilyIndex& families, Eigen::Index n_vertices) {
    RankSuggestion out;
    out.scree_a.assign(eig_a.data(), eig_a.data() + eig_a.size());
    out.scree_c.assign(eig_c.data(), eig_c.data() + eig_c.size());
    out.scree_eG.assign(eig_eG.data(), eig_eG.data() + eig_eG.size());
    const auto n = static_cast<Eigen::Index>(families.n_individuals());
    auto clamp = [&](Eigen::Index r, const Eigen::VectorXd& e) {
        return std::clamp<Eigen::Index>(r, 1, std::max<Eigen::Index>(1, positive_eigen_count(e)));
    };
    if (n_vertices > n) {
        out.structural = true;
        const auto twins = static_cast<Eigen::Index>(families.n_mz() + families.n_dz());
        out.rank = {clamp(twins, eig_a), clamp(twins, eig_c),
                    clamp(n - static_cast<Eigen::Index>(families.n_mz()), eig_eG)};
    } else {
        out.rank = {clamp(elbow_rank(out.scree_a), eig_a), clamp(elbow_rank(out.scree_c), eig_c),
                    clamp(elbow_rank(out.scree_eG), eig_eG)};
    }
    return out;
}

CovFactorization initial_factors(const CovTriple& symmetric, const RankSpec& rank, EigenMethod method) {
    auto factor = [&](const Eigen::MatrixXd& m, Eigen::Index d, const char* name) {
        const EigenPairs ep = top_eigenpairs(m, d, method);
        const double scale = std::max(ep.values.cwiseAbs().maxCoeff(), std::abs(m.diagonal().maxCoeff()));
        require(ep.values(d - 1) > kPositiveEigenTolerance * scale, ErrorCode::InvalidArgument,
                std::string("rank for ") + name + " exceeds the number of positive eigenvalues");
        return Eigen::MatrixXd(ep.vectors * ep.values.cwiseSqrt().asDiagonal());
    };
    CovFactorization z;
    z.za = factor(symmetric.sigma_a, rank.a, "Sigma_a");
    z.zc = factor(symmetric.sigma_c, rank.c, "Sigma_c");
    z.zeG = factor(symmetric.sigma_eG, rank.eG, "Sigma_eG");
    return z;
}

PsdAceProblem::PsdAceProblem(const CrossProducts& cp, const KernelOperator& kernel, const Eigen::MatrixXd& residuals,
                             const FamilyIndex& families) {
    const Eigen::Index v = cp.size();
    require(static_cast<Eigen::Index>(kernel.size()) == v && residuals.cols() == v, ErrorCode::DimensionMismatch,
            "cross products, kernel and residuals disagree on V");
    require(static_cast<std::size_t>(residuals.rows()) == families.n_individuals(), ErrorCode::DimensionMismatch,
            "residual rows do not match the family index");
    p0_ = detail::sandwich(kernel.raw, cp.s0);
    const Eigen::MatrixXd k1 = detail::sandwich(kernel.raw, cp.s1);
    const Eigen::MatrixXd k2 = detail::sandwich(kernel.raw, cp.s2);
    pa_ = 2.0 * p0_ + 2.0 * k1 + k2;
    pc_ = 2.0 * p0_ + 2.0 * k1 + 2.0 * k2;
    w_ = kernel.row_weights;

    // Data-only part of the objective: sum over (v0, v0') of w(v0) w(v0') times
    // the averaged squared cross-products, in O(N V).
    const Eigen::VectorXd& e = cp.sigma2_eL;
    const Eigen::VectorXd w2 = w_.cwiseAbs2();
    double individual = 0.0;
    for (Eigen::Index i = 0; i < residuals.rows(); ++i) {
        const Eigen::VectorXd r2 = residuals.row(i).transpose().cwiseAbs2();
        const double a = w_.dot(r2);
        individual += a * a - 2.0 * w2.dot(r2.cwiseProduct(e)) + w2.dot(e.cwiseAbs2());
    }
    constant_ = individual / static_cast<double>(residuals.rows());
    auto pairs = [&](FamilyKind kind, std::size_t count) {
        const auto first = families.first_twin_rows(kind);
        const auto second = families.second_twin_rows(kind);
        double sum = 0.0;
        for (std::size_t i = 0; i < first.size(); ++i) {
            const auto r1 = residuals.row(static_cast<Eigen::Index>(first[i])).transpose();
            const auto r2 = residuals.row(static_cast<Eigen::Index>(second[i])).transpose();
            const double a = w_.dot(r1.cwiseAbs2());
            const double b = w_.dot(r2.cwiseAbs2());
            const double c = w_.dot(r1.cwiseProduct(r2));
            sum += 0.5 * (a * b + c * c);
        }
        return sum / static_cast<double>(count);
    };
    constant_ += pairs(FamilyKind::MZ, families.n_mz()) + pairs(FamilyKind::DZ, families.n_dz());
}

double PsdAceProblem::evaluate(const CovFactorization& z, Gradients* grad) const {
    const Eigen::Index v = size();
    require(z.za.rows() == v && z.zc.rows() == v && z.zeG.rows() == v, ErrorCode::DimensionMismatch,
            "factor row counts differ from V");
    const Eigen::MatrixXd pza = detail::blocked_product(pa_, z.za);
    const Eigen::MatrixXd pzc = detail::blocked_product(pc_, z.zc);
    const Eigen::MatrixXd pze = detail::blocked_product(p0_, z.zeG);
    const Eigen::MatrixXd wa = w_.asDiagonal() * z.za;
    const Eigen::MatrixXd wc = w_.asDiagonal() * z.zc;
    const Eigen::MatrixXd we = w_.asDiagonal() * z.zeG;
    // m_xy = Z_x^T D_w Z_y
    const Eigen::MatrixXd m_aa = z.za.transpose() * wa;
    const Eigen::MatrixXd m_cc = z.zc.transpose() * wc;
    const Eigen::MatrixXd m_ee = z.zeG.transpose() * we;
    const Eigen::MatrixXd m_ac = z.za.transpose() * wc;
    const Eigen::MatrixXd m_ae = z.za.transpose() * we;
    const Eigen::MatrixXd m_ce = z.zc.transpose() * we;

    const double linear =
        z.za.cwiseProduct(pza).sum() + z.zc.cwiseProduct(pzc).sum() + 2.0 * z.zeG.cwiseProduct(pze).sum();
    const double quadratic = 2.25 * m_aa.squaredNorm() + 3.0 * m_cc.squaredNorm() + m_ee.squaredNorm() +
                             5.0 * m_ac.squaredNorm() + 2.0 * m_ae.squaredNorm() + 2.0 * m_ce.squaredNorm();

    if (grad != nullptr) {
        const auto dw = w_.asDiagonal();
        grad->a = -2.0 * (pza - dw * (4.5 * z.za * m_aa + 5.0 * z.zc * m_ac.transpose() + 2.0 * z.zeG * m_ae.transpose()));
        grad->c = -2.0 * (pzc - dw * (5.0 * z.za * m_ac + 6.0 * z.zc * m_cc + 2.0 * z.zeG * m_ce.transpose()));
        grad->eG = -4.0 * (pze - dw * (z.za * m_ae + z.zc * m_ce + z.zeG * m_ee));
    }
    return constant_ - linear + quadratic;
}

double PsdAceProblem::objective(const CovFactorization& z) const { return evaluate(z, nullptr); }

Gradients PsdAceProblem::gradients(const CovFactorization& z) const {
    Gradients g;
    (void)evaluate(z, &g);
    return g;
}

PsdAceFit fit_psd_ace(const CovFactorization& init, const PsdAceProblem& problem, const DescentConfig& config,
                      double bandwidth) {
    require(config.tolerance > 0.0 && config.learning_rate > 0.0 && config.max_iterations >= 0,
            ErrorCode::InvalidArgument, "descent tolerance and learning rate must be positive");
    PsdAceFit fit;
    ConvergenceReport& rep = fit.report;
    CovFactorization z = init;
    Gradients g;
    double obj = problem.evaluate(z, &g);
    double gnorm = g.norm();
    double lambda = config.learning_rate;
    rep.alpha0 = gnorm;
    rep.initial_objective = obj;
    rep.history.push_back({0, gnorm, lambda, obj});

    while (gnorm > config.tolerance * rep.alpha0 && rep.iterations < config.max_iterations) {
        ++rep.iterations;
        CovFactorization trial{z.za - lambda * g.a, z.zc - lambda * g.c, z.zeG - lambda * g.eG};
        Gradients tg;
        const double tobj = problem.evaluate(trial, &tg);
        const double tnorm = tg.norm();
        const bool worse = !(tnorm <= gnorm) || (config.guard_objective && !(tobj <= obj));
        if (worse) {
            lambda *= 0.5;
            rep.learning_rates.push_back(lambda);
            if (lambda < 1e-15) {
                rep.stalled = true;
                break;
            }
            continue;
        }
        z = std::move(trial);
        g = std::move(tg);
        obj = tobj;
        gnorm = tnorm;
        ++rep.accepted;
        rep.history.push_back({rep.accepted, gnorm, lambda, obj});
    }
    rep.converged = gnorm <= config.tolerance * rep.alpha0;
    rep.final_grad_norm = gnorm;
    rep.final_objective = obj;

    fit.covariance.sigma_a = z.za * z.za.transpose();
    fit.covariance.sigma_c = z.zc * z.zc.transpose();
    fit.covariance.sigma_eG = z.zeG * z.zeG.transpose();
    detail::symmetrize(fit.covariance.sigma_a);
    detail::symmetrize(fit.covariance.sigma_c);
    detail::symmetrize(fit.covariance.sigma_eG);
    fit.covariance.tag = CovEstimator::PsdAce;
    fit.covariance.bandwidth = bandwidth;
    fit.factors = std::move(z);
    return fit;
}

}  // namespace twincov
