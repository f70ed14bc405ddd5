#include "twincov/sim_metrics.hpp"

#include "twincov/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace twincov {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

Eigen::MatrixXd basis_columns(const Eigen::MatrixXd& basis, const std::vector<int>& rows) {
    Eigen::MatrixXd out(basis.cols(), static_cast<Eigen::Index>(rows.size()));
    for (std::size_t j = 0; j < rows.size(); ++j) {
        require(rows[j] >= 1 && rows[j] <= basis.rows(), ErrorCode::InvalidArgument, "basis index out of range");
        out.col(static_cast<Eigen::Index>(j)) = basis.row(rows[j] - 1).transpose();
    }
    return out;
}

}  // namespace

Eigen::MatrixXd spherical_harmonics_basis(const VertexSet& domain) {
    require(domain.single_sphere(), ErrorCode::InvalidArgument, "spherical harmonics need a single-sphere domain");
    const auto v = static_cast<Eigen::Index>(domain.size());
    Eigen::MatrixXd out(kHarmonicCount, v);
    Eigen::Index row = 0;
    for (unsigned l = 0; l <= 6; l += 2) {
        for (int m = -static_cast<int>(l); m <= static_cast<int>(l); ++m) {
            const auto am = static_cast<unsigned>(std::abs(m));
            for (Eigen::Index i = 0; i < v; ++i) {
                const Vertex& x = domain[static_cast<std::size_t>(i)];
                const double p = std::sph_legendre(l, am, x.theta);
                double y = p;
                if (m > 0) y = std::numbers::sqrt2 * p * std::cos(m * x.phi);
                if (m < 0) y = std::numbers::sqrt2 * p * std::sin(static_cast<double>(am) * x.phi);
                out(row, i) = y;
            }
            ++row;
        }
    }
    return out;
}

SimTruth build_truth(const VertexSet& domain, const TruthTargets& targets, const BasisSets& sets) {
    require(targets.a >= 0.0 && targets.c >= 0.0 && targets.eG >= 0.0 && targets.eL >= 0.0,
            ErrorCode::InvalidArgument, "truth targets must be nonnegative");
    SimTruth t;
    t.domain = domain;
    t.basis = spherical_harmonics_basis(domain);
    const double v = static_cast<double>(domain.size());
    // alpha scales the mean diagonal sum_k x_k(v)^2 / V to the target
    auto scaled_root = [&](const std::vector<int>& rows, double target, double& alpha) {
        const Eigen::MatrixXd x = basis_columns(t.basis, rows);
        const double mean_diag = x.squaredNorm() / v;
        alpha = mean_diag > 0.0 ? target / mean_diag : 0.0;
        return Eigen::MatrixXd(std::sqrt(alpha) * x);
    };
    t.root_a = scaled_root(sets.a, targets.a, t.alpha_a);
    t.root_c = scaled_root(sets.c, targets.c, t.alpha_c);
    t.root_eG = scaled_root(sets.eG, targets.eG, t.alpha_eG);
    t.sigma_a = t.root_a * t.root_a.transpose();
    t.sigma_c = t.root_c * t.root_c.transpose();
    t.sigma_eG = t.root_eG * t.root_eG.transpose();
    const Eigen::MatrixXd el = scaled_root(sets.eL, targets.eL, t.alpha_eL);
    t.sigma2_eL = el.rowwise().squaredNorm();
    t.h2 = heritability(t.sigma_a.diagonal(), t.sigma_c.diagonal(), t.sigma_eG.diagonal());
    return t;
}

TwinCohort simulate_cohort(const SimTruth& truth, std::size_t n_mz, std::size_t n_dz, std::size_t n_singleton,
                           std::uint64_t seed) {
    const auto v = static_cast<Eigen::Index>(truth.domain.size());
    TwinCohort c;
    c.families = FamilyIndex::canonical(n_mz, n_dz, n_singleton);
    const auto n = static_cast<Eigen::Index>(c.families.n_individuals());
    c.phenotype.resize(n, v);
    c.design.resize(n, 2);
    c.covariate_names = {"intercept", "x1"};
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> z;
    auto draw = [&](const Eigen::MatrixXd& root) {
        Eigen::VectorXd g(root.cols());
        for (Eigen::Index k = 0; k < g.size(); ++k) g(k) = z(rng);
        return Eigen::VectorXd(root * g);
    };
    const Eigen::VectorXd sd_l = truth.sigma2_eL.cwiseSqrt();
    auto individual_noise = [&]() {
        Eigen::VectorXd e = draw(truth.root_eG);
        for (Eigen::Index i = 0; i < v; ++i) e(i) += sd_l(i) * z(rng);
        return e;
    };
    const double half = std::sqrt(0.5);
    Eigen::Index row = 0;
    for (std::size_t f = 0; f < n_mz; ++f) {
        const Eigen::VectorXd shared = draw(truth.root_a) + draw(truth.root_c);
        for (int j = 0; j < 2; ++j) c.phenotype.row(row++) = (shared + individual_noise()).transpose();
    }
    for (std::size_t f = 0; f < n_dz; ++f) {
        const Eigen::VectorXd a_family = draw(truth.root_a);
        const Eigen::VectorXd c_family = draw(truth.root_c);
        for (int j = 0; j < 2; ++j) {
            const Eigen::VectorXd a_own = draw(truth.root_a);
            c.phenotype.row(row++) = (half * a_family + half * a_own + c_family + individual_noise()).transpose();
        }
    }
    for (std::size_t f = 0; f < n_singleton; ++f) {
        const Eigen::VectorXd a = draw(truth.root_a);
        const Eigen::VectorXd cc = draw(truth.root_c);
        c.phenotype.row(row++) = (a + cc + individual_noise()).transpose();
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        c.design(i, 0) = 1.0;
        c.design(i, 1) = z(rng);
    }
    return c;
}

std::uint64_t replicate_seed(std::uint64_t master, std::uint64_t replicate) {
    return splitmix64(splitmix64(master) ^ (replicate * 0xD1B54A32D192ED03ULL + 1));
}

double ise(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth) {
    require(estimate.rows() == truth.rows() && estimate.cols() == truth.cols() && truth.size() > 0,
            ErrorCode::DimensionMismatch, "estimate and truth shapes differ");
    return (estimate - truth).squaredNorm() / static_cast<double>(truth.size());
}

double ise_field(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
    return ise(Eigen::MatrixXd(estimate), Eigen::MatrixXd(truth));
}

double normalized_ise(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth) {
    const double denom = truth.squaredNorm();
    require(denom > 0.0, ErrorCode::InvalidArgument, "normalized ISE of a zero truth");
    return ise(estimate, truth) * static_cast<double>(truth.size()) / denom;
}

double normalized_ise_field(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
    return normalized_ise(Eigen::MatrixXd(estimate), Eigen::MatrixXd(truth));
}

double mise(std::span<const double> ises) {
    require(!ises.empty(), ErrorCode::InvalidArgument, "MISE needs at least one replicate");
    double s = 0.0;
    for (double x : ises) s += x;
    return s / static_cast<double>(ises.size());
}

void MiseAccumulator::add(const Eigen::MatrixXd& estimate, const Eigen::MatrixXd& truth) {
    if (n_ == 0) {
        sum_ = Eigen::MatrixXd::Zero(truth.rows(), truth.cols());
        truth_ = truth;
    }
    require(truth.rows() == truth_.rows() && truth.cols() == truth_.cols() && truth == truth_,
            ErrorCode::DimensionMismatch, "every replicate must share the same truth");
    ise_sum_ += ise(estimate, truth);
    sum_ += estimate;
    ++n_;
}

BiasVariance MiseAccumulator::result() const {
    require(n_ > 0, ErrorCode::InvalidArgument, "no replicates accumulated");
    BiasVariance out;
    out.replicates = n_;
    out.mise = ise_sum_ / static_cast<double>(n_);
    out.bias2 = ise(sum_ / static_cast<double>(n_), truth_);
    out.variance = out.mise - out.bias2;
    return out;
}

BiasVariance bias_variance(std::span<const Eigen::MatrixXd> estimates, const Eigen::MatrixXd& truth) {
    MiseAccumulator acc;
    for (const auto& e : estimates) acc.add(e, truth);
    return acc.result();
}

Eigen::VectorXd heritability(const Eigen::VectorXd& sigma2_a, const Eigen::VectorXd& sigma2_c,
                             const Eigen::VectorXd& sigma2_e, std::size_t* zero_denominators) {
    require(sigma2_a.size() == sigma2_c.size() && sigma2_a.size() == sigma2_e.size(), ErrorCode::DimensionMismatch,
            "variance fields differ in length");
    Eigen::VectorXd h(sigma2_a.size());
    std::size_t zeros = 0;
    for (Eigen::Index i = 0; i < h.size(); ++i) {
        const double den = sigma2_a(i) + sigma2_c(i) + sigma2_e(i);
        if (den == 0.0) {
            h(i) = 0.0;
            ++zeros;
        } else {
            h(i) = sigma2_a(i) / den;
        }
    }
    if (zero_denominators != nullptr) *zero_denominators += zeros;
    return h;
}

}  // namespace twincov
