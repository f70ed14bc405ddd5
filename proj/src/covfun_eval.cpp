#include "twincov/covfun_eval.hpp"

#include "atomic_file.hpp"
#include "csv.hpp"
#include "dense_ops.hpp"
#include "twincov/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace twincov {

RobustInverse robust_inverse(const Eigen::MatrixXd& k, double threshold, ThresholdMode mode) {
    require(k.rows() == k.cols() && k.rows() > 0, ErrorCode::DimensionMismatch, "robust inverse needs a square matrix");
    require(threshold > 0.0, ErrorCode::InvalidArgument, "inverse threshold must be positive");
    Eigen::MatrixXd sym = k;
    detail::symmetrize(sym);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    require(es.info() == Eigen::Success, ErrorCode::Numerical, "eigendecomposition of the kernel failed");
    const Eigen::VectorXd& lam = es.eigenvalues();
    const double cut = mode == ThresholdMode::Absolute ? threshold : threshold * lam.cwiseAbs().maxCoeff();
    RobustInverse out;
    out.kept = (lam.array() > cut).count();
    require(out.kept > 0, ErrorCode::Numerical, "no kernel eigenvalue exceeds the inverse threshold");
    // Eigenvalues ascend, so the kept ones are the trailing block.
    const Eigen::MatrixXd u = es.eigenvectors().rightCols(out.kept);
    out.inverse = u * lam.tail(out.kept).cwiseInverse().asDiagonal() * u.transpose();
    detail::symmetrize(out.inverse);
    return out;
}

const char* to_string(Component c) {
    switch (c) {
        case Component::A: return "a";
        case Component::C: return "c";
        case Component::EG: return "eG";
    }
    return "?";
}

const Eigen::MatrixXd& InterpFactors::factor(Component c) const {
    switch (c) {
        case Component::A: return wa;
        case Component::C: return wc;
        case Component::EG: return weG;
    }
    fail(ErrorCode::InvalidArgument, "unknown covariance component");
}

InterpFactors make_interp_factors(const CovFactorization& z, const VertexSet& domain, const KernelOperator& kernel,
                                  double threshold, ThresholdMode mode) {
    const auto v = static_cast<Eigen::Index>(domain.size());
    require(static_cast<Eigen::Index>(kernel.size()) == v && z.za.rows() == v && z.zc.rows() == v &&
                z.zeG.rows() == v,
            ErrorCode::DimensionMismatch, "factors, kernel and domain disagree on V");
    const RobustInverse inv = robust_inverse(Eigen::MatrixXd(kernel.raw), threshold, mode);
    const Eigen::MatrixXd map = inv.inverse * kernel.row_weights.asDiagonal();
    InterpFactors f;
    f.wa = detail::blocked_product(map, z.za);
    f.wc = detail::blocked_product(map, z.zc);
    f.weG = detail::blocked_product(map, z.zeG);
    f.domain = domain;
    f.bandwidth = kernel.bandwidth;
    f.kept = inv.kept;
    return f;
}

Eigen::MatrixXd interpolate_factor(const InterpFactors& f, Component c, std::span<const Vertex> locations) {
    const Eigen::MatrixXd& w = f.factor(c);
    Eigen::MatrixXd out(static_cast<Eigen::Index>(locations.size()), w.cols());
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < locations.size(); ++i) {
        const Eigen::VectorXd k = normalized_weights_to(f.domain, locations[i], f.bandwidth);
        out.row(static_cast<Eigen::Index>(i)) = k.transpose() * w;
    }
    return out;
}

double evaluate_covariance(const InterpFactors& f, Component c, const Vertex& x, const Vertex& y,
                           std::vector<std::string>* warnings) {
    const Eigen::VectorXd kx = normalized_weights_to(f.domain, x, f.bandwidth);
    const Eigen::VectorXd ky = normalized_weights_to(f.domain, y, f.bandwidth);
    if (kx.sum() == 0.0 || ky.sum() == 0.0) {
        if (warnings != nullptr) warnings->emplace_back("location has no observed vertex within the bandwidth; value set to 0");
        return 0.0;
    }
    const Eigen::MatrixXd& w = f.factor(c);
    const Eigen::RowVectorXd ax = kx.transpose() * w;
    const Eigen::RowVectorXd ay = ky.transpose() * w;
    // Elementwise products commute, so swapping x and y gives the same bits.
    return ax.cwiseProduct(ay).sum();
}

Eigen::MatrixXd evaluate_gram(const InterpFactors& f, Component c, std::span<const Vertex> locations) {
    const Eigen::MatrixXd a = interpolate_factor(f, c, locations);
    Eigen::MatrixXd g = a * a.transpose();
    detail::symmetrize(g);
    return g;
}

PartitionEvaluation partition_evaluation(const InterpFactors& f, Component c, const VertexSet& full,
                                         std::span<const std::size_t> members, const Eigen::MatrixXd& z_members) {
    require(z_members.rows() == static_cast<Eigen::Index>(members.size()) &&
                z_members.cols() == f.factor(c).cols(),
            ErrorCode::DimensionMismatch, "partition factor shape does not match its members");
    PartitionEvaluation out;
    out.factor = interpolate_factor(f, c, full.vertices());
    out.covered.assign(full.size(), false);
    for (Eigen::Index i = 0; i < out.factor.rows(); ++i) {
        const Eigen::VectorXd k = normalized_weights_to(f.domain, full[static_cast<std::size_t>(i)], f.bandwidth);
        out.covered[static_cast<std::size_t>(i)] = k.sum() > 0.0;
    }
    for (std::size_t m = 0; m < members.size(); ++m) {
        out.factor.row(static_cast<Eigen::Index>(members[m])) = z_members.row(static_cast<Eigen::Index>(m));
        out.covered[members[m]] = true;
    }
    return out;
}

CombinedCovariance combine_partitions(std::span<const PartitionEvaluation> parts) {
    require(!parts.empty(), ErrorCode::InvalidArgument, "no partitions to combine");
    const Eigen::Index v = parts.front().factor.rows();
    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(v, v);
    Eigen::MatrixXd count = Eigen::MatrixXd::Zero(v, v);
    for (const auto& p : parts) {
        require(p.factor.rows() == v && static_cast<Eigen::Index>(p.covered.size()) == v,
                ErrorCode::DimensionMismatch, "partition evaluations disagree on V");
        Eigen::VectorXd mask(v);
        for (Eigen::Index i = 0; i < v; ++i) mask(i) = p.covered[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
        Eigen::MatrixXd g = detail::blocked_product(p.factor, Eigen::MatrixXd(p.factor.transpose()));
        sum += mask.asDiagonal() * g * mask.asDiagonal();
        count += mask * mask.transpose();
    }
    CombinedCovariance out;
    Eigen::MatrixXd avg(v, v);
    for (Eigen::Index j = 0; j < v; ++j)
        for (Eigen::Index i = 0; i < v; ++i) {
            if (count(i, j) > 0.0) {
                avg(i, j) = sum(i, j) / count(i, j);
            } else {
                avg(i, j) = 0.0;
                ++out.uncovered_pairs;
            }
        }
    detail::symmetrize(avg);
    PsdTruncation t = truncate_psd(avg);
    out.negative_eigenvalues = static_cast<Eigen::Index>((t.eigenvalues.array() < 0.0).count());
    out.clipped_mass = (avg - t.matrix).norm();
    out.matrix = std::move(t.matrix);
    return out;
}

void validate_partitions(std::span<const std::vector<std::size_t>> partitions, std::size_t n_vertices) {
    require(!partitions.empty(), ErrorCode::InvalidArgument, "partition list is empty");
    std::vector<bool> seen(n_vertices, false);
    for (const auto& p : partitions) {
        require(!p.empty(), ErrorCode::InvalidArgument, "empty partition");
        for (std::size_t i : p) {
            require(i < n_vertices, ErrorCode::InvalidArgument, "partition vertex index out of range");
            seen[i] = true;
        }
    }
    for (std::size_t i = 0; i < n_vertices; ++i)
        require(seen[i], ErrorCode::InvalidArgument, "partitions miss vertex " + std::to_string(i + 1));
}

std::vector<std::vector<std::size_t>> interleaved_partitions(std::size_t n_vertices, std::size_t count,
                                                             std::size_t overlap_stride) {
    require(count >= 1 && count <= n_vertices, ErrorCode::InvalidArgument, "partition count out of range");
    std::vector<std::vector<std::size_t>> out(count);
    for (std::size_t p = 0; p < count; ++p)
        for (std::size_t i = 0; i < n_vertices; ++i) {
            const bool own = i % count == p;
            const bool shared = overlap_stride > 0 && (i / count) % overlap_stride == 0;
            if (own || shared) out[p].push_back(i);
        }
    return out;
}

Eigen::VectorXd seed_map(const Eigen::MatrixXd& cov, std::size_t seed, bool correlation) {
    require(cov.rows() == cov.cols(), ErrorCode::DimensionMismatch, "covariance must be square");
    require(seed < static_cast<std::size_t>(cov.rows()), ErrorCode::InvalidArgument, "seed vertex out of range");
    const auto s = static_cast<Eigen::Index>(seed);
    Eigen::VectorXd row = cov.row(s).transpose();
    if (!correlation) return row;
    const double ds = cov(s, s);
    for (Eigen::Index i = 0; i < row.size(); ++i) {
        const double den = std::sqrt(std::max(ds, 0.0) * std::max(cov(i, i), 0.0));
        row(i) = den > 0.0 ? row(i) / den : 0.0;
    }
    return row;
}

void write_seed_map(const std::string& path, const Eigen::VectorXd& values) {
    std::ostringstream out;
    out << "vertex_index,value\n";
    for (Eigen::Index i = 0; i < values.size(); ++i) out << (i + 1) << ',' << detail::format_double(values(i)) << '\n';
    detail::write_file_atomically(path, out.str());
}

}  // namespace twincov
