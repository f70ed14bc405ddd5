#pragma once

// Independent brute-force references. Deliberately naive loops that share no
// code with the library beyond the data containers.

#include "twincov/cohort.hpp"

#include <Eigen/Dense>

#include <random>
#include <vector>

namespace twincov::testing {

/// Literal quadruple-sum PSD-ACE objective: individual terms over every row,
/// MZ and DZ pair terms, product kernel k(v, v0) k(v', v0').
inline double literal_objective(const Eigen::MatrixXd& r, const FamilyIndex& fam, const Eigen::VectorXd& e_l,
                                const Eigen::MatrixXd& k, const Eigen::MatrixXd& za, const Eigen::MatrixXd& zc,
                                const Eigen::MatrixXd& ze) {
    const Eigen::Index v_count = k.rows();
    const Eigen::MatrixXd a = za * za.transpose();
    const Eigen::MatrixXd c = zc * zc.transpose();
    const Eigen::MatrixXd g = ze * ze.transpose();
    auto quad = [&](auto&& u, auto&& model) {
        double s = 0.0;
        for (Eigen::Index v = 0; v < v_count; ++v)
            for (Eigen::Index w = 0; w < v_count; ++w)
                for (Eigen::Index p = 0; p < v_count; ++p)
                    for (Eigen::Index q = 0; q < v_count; ++q) {
                        const double d = u(p, q) - model(v, w);
                        s += d * d * k(v, p) * k(w, q);
                    }
        return s;
    };
    double total = 0.0;
    for (Eigen::Index i = 0; i < r.rows(); ++i) {
        total += quad([&](Eigen::Index p, Eigen::Index q) { return r(i, p) * r(i, q) - (p == q ? e_l(p) : 0.0); },
                      [&](Eigen::Index v, Eigen::Index w) { return a(v, w) + c(v, w) + g(v, w); });
    }
    total /= static_cast<double>(r.rows());
    auto pairs = [&](FamilyKind kind, double dz_scale, std::size_t n) {
        const auto first = fam.first_twin_rows(kind);
        const auto second = fam.second_twin_rows(kind);
        double s = 0.0;
        for (std::size_t f = 0; f < first.size(); ++f) {
            const auto i1 = static_cast<Eigen::Index>(first[f]);
            const auto i2 = static_cast<Eigen::Index>(second[f]);
            s += quad([&](Eigen::Index p, Eigen::Index q) { return 0.5 * (r(i1, p) * r(i2, q) + r(i1, q) * r(i2, p)); },
                      [&](Eigen::Index v, Eigen::Index w) { return dz_scale * a(v, w) + c(v, w); });
        }
        return s / static_cast<double>(n);
    };
    total += pairs(FamilyKind::MZ, 1.0, fam.n_mz());
    total += pairs(FamilyKind::DZ, 0.5, fam.n_dz());
    return total;
}

/// Weighted least-squares fit of one constant to `targets` with `weights`,
/// via the normal equations of a 1-parameter problem.
inline double weighted_constant(const std::vector<double>& targets, const std::vector<double>& weights) {
    Eigen::MatrixXd x = Eigen::MatrixXd::Ones(static_cast<Eigen::Index>(targets.size()), 1);
    Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(targets.data(), static_cast<Eigen::Index>(targets.size()));
    Eigen::VectorXd sw = Eigen::Map<const Eigen::VectorXd>(weights.data(), static_cast<Eigen::Index>(weights.size()))
                             .cwiseSqrt();
    const Eigen::MatrixXd xw = sw.asDiagonal() * x;
    const Eigen::VectorXd yw = sw.asDiagonal() * y;
    return (xw.transpose() * xw).ldlt().solve(xw.transpose() * yw)(0);
}

inline Eigen::MatrixXd psd_root(const Eigen::MatrixXd& m) {
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
}

/// Residuals drawn from the ACE model with covariances a, c, e (V x V) on the
/// canonical family layout: MZ pairs, DZ pairs, singletons.
inline Eigen::MatrixXd ace_residuals(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c, const Eigen::MatrixXd& e,
                                     std::size_t n_mz, std::size_t n_dz, std::size_t n_s, std::mt19937_64& rng) {
    const Eigen::Index v = a.rows();
    const Eigen::MatrixXd la = psd_root(a), lc = psd_root(c), le = psd_root(e);
    std::normal_distribution<double> z;
    auto draw = [&](const Eigen::MatrixXd& l) {
        Eigen::VectorXd g(v);
        for (Eigen::Index i = 0; i < v; ++i) g(i) = z(rng);
        return Eigen::VectorXd(l * g);
    };
    const auto n = static_cast<Eigen::Index>(2 * (n_mz + n_dz) + n_s);
    Eigen::MatrixXd r(n, v);
    Eigen::Index row = 0;
    for (std::size_t f = 0; f < n_mz; ++f) {
        const Eigen::VectorXd ga = draw(la), gc = draw(lc);
        r.row(row++) = (ga + gc + draw(le)).transpose();
        r.row(row++) = (ga + gc + draw(le)).transpose();
    }
    const double h = std::sqrt(0.5);
    for (std::size_t f = 0; f < n_dz; ++f) {
        const Eigen::VectorXd shared = draw(la), gc = draw(lc);
        r.row(row++) = (h * shared + h * draw(la) + gc + draw(le)).transpose();
        r.row(row++) = (h * shared + h * draw(la) + gc + draw(le)).transpose();
    }
    for (std::size_t f = 0; f < n_s; ++f) r.row(row++) = (draw(la) + draw(lc) + draw(le)).transpose();
    return r;
}

struct Lsq3 {
    Eigen::Matrix3d xtx = Eigen::Matrix3d::Zero();
    Eigen::Vector3d xty = Eigen::Vector3d::Zero();
    void add(const Eigen::Vector3d& x, double y, double w) {
        xtx += w * x * x.transpose();
        xty += w * x * y;
    }
    [[nodiscard]] Eigen::Vector3d solve() const { return xtx.ldlt().solve(xty); }
};

// Joint weighted least squares for (a, c, eG) at one entry (u, v): individual
// products target a + c + eG, MZ pair products a + c, DZ 0.5 a + c.
inline Eigen::Vector3d brute_entry(const Eigen::MatrixXd& r, const FamilyIndex& fam, const Eigen::VectorXd& e_l,
                            const Eigen::MatrixXd& k, Eigen::Index u, Eigen::Index v, bool exclude_diagonal) {
    Lsq3 ls;
    const Eigen::Index vc = k.rows();
    const double n = static_cast<double>(r.rows());
    for (Eigen::Index p = 0; p < vc; ++p)
        for (Eigen::Index q = 0; q < vc; ++q) {
            if (exclude_diagonal && p == q) continue;
            const double w = k(u, p) * k(v, q);
            if (w == 0.0) continue;
            for (Eigen::Index i = 0; i < r.rows(); ++i)
                ls.add({1, 1, 1}, r(i, p) * r(i, q) - (p == q ? e_l(p) : 0.0), w / n);
            auto pairs = [&](FamilyKind kind, const Eigen::Vector3d& x, double count) {
                const auto a = fam.first_twin_rows(kind);
                const auto b = fam.second_twin_rows(kind);
                for (std::size_t f = 0; f < a.size(); ++f) {
                    const auto i1 = static_cast<Eigen::Index>(a[f]), i2 = static_cast<Eigen::Index>(b[f]);
                    ls.add(x, 0.5 * (r(i1, p) * r(i2, q) + r(i1, q) * r(i2, p)), w / count);
                }
            };
            pairs(FamilyKind::MZ, {1, 1, 0}, static_cast<double>(fam.n_mz()));
            pairs(FamilyKind::DZ, {0.5, 1, 0}, static_cast<double>(fam.n_dz()));
        }
    return ls.solve();
}

}  // namespace twincov::testing
