#pragma once

#include "twincov/psd_ace.hpp"
#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

#include <span>
#include <string>
#include <vector>

namespace twincov {

enum class ThresholdMode { Absolute, Relative };

struct RobustInverse {
    Eigen::MatrixXd inverse;
    Eigen::Index kept = 0;  // eigenvalues above the threshold
};

/// Pseudo-inverse from eigenvalues above `threshold` (absolute, or a fraction
/// of the largest eigenvalue in Relative mode). Throws Numerical when none
/// survive.
[[nodiscard]] RobustInverse robust_inverse(const Eigen::MatrixXd& k, double threshold = 1e-4,
                                           ThresholdMode mode = ThresholdMode::Absolute);

enum class Component { A, C, EG };
[[nodiscard]] const char* to_string(Component c);

/// Factors for evaluating covariance functions at arbitrary locations:
/// Sigma(x, y) = k~(x)^T W W^T k~(y), with W = K^- diag(w) Z so that the
/// evaluation reproduces Z Z^T at the vertices whenever K is well conditioned.
struct InterpFactors {
    Eigen::MatrixXd wa;
    Eigen::MatrixXd wc;
    Eigen::MatrixXd weG;
    VertexSet domain;
    double bandwidth = 0.0;
    Eigen::Index kept = 0;

    [[nodiscard]] const Eigen::MatrixXd& factor(Component c) const;
};

[[nodiscard]] InterpFactors make_interp_factors(const CovFactorization& z, const VertexSet& domain,
                                                const KernelOperator& kernel, double threshold = 1e-4,
                                                ThresholdMode mode = ThresholdMode::Absolute);

/// Row k~(x)^T W for each location; rows are zero where no vertex is in range.
[[nodiscard]] Eigen::MatrixXd interpolate_factor(const InterpFactors& f, Component c,
                                                 std::span<const Vertex> locations);

/// One covariance value. Returns 0 and appends a warning when either location
/// has no observed vertex within the bandwidth.
[[nodiscard]] double evaluate_covariance(const InterpFactors& f, Component c, const Vertex& x, const Vertex& y,
                                         std::vector<std::string>* warnings = nullptr);

/// Gram matrix of the covariance function over `locations`; PSD by construction.
[[nodiscard]] Eigen::MatrixXd evaluate_gram(const InterpFactors& f, Component c, std::span<const Vertex> locations);

/// One partition's contribution: a V x d factor over the full domain and the
/// vertices it can speak for.
struct PartitionEvaluation {
    Eigen::MatrixXd factor;
    std::vector<bool> covered;
};

/// Factor on the full domain: rows of member vertices are the fitted Z
/// directly, other rows are interpolated through the partition's W.
[[nodiscard]] PartitionEvaluation partition_evaluation(const InterpFactors& f, Component c, const VertexSet& full,
                                                       std::span<const std::size_t> members,
                                                       const Eigen::MatrixXd& z_members);

struct CombinedCovariance {
    Eigen::MatrixXd matrix;
    Eigen::Index negative_eigenvalues = 0;  // removed by the final clip
    double clipped_mass = 0.0;              // Frobenius norm of the removed part
    std::size_t uncovered_pairs = 0;        // entries no partition could evaluate (set to 0)
};

/// Entrywise average of F_P F_P^T over the partitions covering both vertices,
/// followed by an eigen-clip.
[[nodiscard]] CombinedCovariance combine_partitions(std::span<const PartitionEvaluation> parts);

/// Throws InvalidArgument unless every partition is nonempty, in range, and
/// the union covers 0..V-1.
void validate_partitions(std::span<const std::vector<std::size_t>> partitions, std::size_t n_vertices);

/// `count` interleaved partitions (index i goes to i mod count) each extended
/// by every `overlap_stride`-th vertex of the others; overlap_stride 0 means
/// no overlap.
[[nodiscard]] std::vector<std::vector<std::size_t>> interleaved_partitions(std::size_t n_vertices, std::size_t count,
                                                                           std::size_t overlap_stride);

/// Row `seed` of a covariance matrix, or of the implied correlation matrix.
[[nodiscard]] Eigen::VectorXd seed_map(const Eigen::MatrixXd& cov, std::size_t seed, bool correlation);

/// CSV `vertex_index,value` with 1-based indices, written atomically.
void write_seed_map(const std::string& path, const Eigen::VectorXd& values);

}  // namespace twincov
