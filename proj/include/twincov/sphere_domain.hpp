#pragma once

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace twincov {

enum class Hemisphere { Left, Right };

/// A location on one of the (unit) hemisphere spheres. Angles are radians.
struct Vertex {
    double theta = 0.0;  // polar angle, [0, pi]
    double phi = 0.0;    // azimuth, [0, 2 pi)
    Hemisphere hemisphere = Hemisphere::Left;
};

inline constexpr double kInfiniteDistance = std::numeric_limits<double>::infinity();

/// Great-circle distance in degrees of arc; kInfiniteDistance across hemispheres.
[[nodiscard]] double geodesic_distance(const Vertex& a, const Vertex& b);

/// Biweight kernel k_h(d) = 15/(16h) (1 - (d/h)^2)^2 on d < h. Both arguments
/// in degrees. Throws InvalidBandwidth when h is not a positive finite number.
[[nodiscard]] double biweight_weight(double distance_deg, double bandwidth_deg);

/// The discrete domain. Vertex indices are 0-based in memory and 1-based in
/// files; the ordering is fixed at construction.
class VertexSet {
public:
    VertexSet() = default;
    explicit VertexSet(std::vector<Vertex> vertices);

    [[nodiscard]] std::size_t size() const noexcept { return vertices_.size(); }
    [[nodiscard]] const Vertex& operator[](std::size_t i) const { return vertices_[i]; }
    [[nodiscard]] std::span<const Vertex> vertices() const noexcept { return vertices_; }

    /// Unit-vector embedding, one row per vertex.
    [[nodiscard]] const Eigen::MatrixX3d& unit_vectors() const noexcept { return xyz_; }

    [[nodiscard]] bool single_sphere() const noexcept;

    /// Restriction to a subset of vertices (indices into this set, kept in order).
    [[nodiscard]] VertexSet subset(std::span<const std::size_t> indices) const;

    /// Smallest nearest-neighbour distance over all vertices (degrees).
    [[nodiscard]] double min_spacing() const;

private:
    std::vector<Vertex> vertices_;
    Eigen::MatrixX3d xyz_;
};

/// Quasi-uniform Fibonacci lattice of `count` points on one unit sphere.
[[nodiscard]] VertexSet fibonacci_sphere(std::size_t count, Hemisphere hemisphere = Hemisphere::Left);

/// CSV `index,theta,phi,hemisphere` with contiguous 1-based indices.
[[nodiscard]] VertexSet load_vertices(const std::string& path);
void save_vertices(const VertexSet& domain, const std::string& path);

using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Raw biweight kernel matrix K and its row-normalised smoother K~ = diag(w)^-1 K.
struct KernelOperator {
    double bandwidth = 0.0;  // degrees
    SparseRowMatrix raw;
    SparseRowMatrix smoother;
    Eigen::VectorXd row_weights;

    [[nodiscard]] std::size_t size() const noexcept { return static_cast<std::size_t>(raw.rows()); }
    [[nodiscard]] double smoother_trace() const;
    /// True when every vertex has at least one other vertex inside its support.
    [[nodiscard]] bool every_vertex_has_neighbour() const;
};

[[nodiscard]] KernelOperator build_kernel(const VertexSet& domain, double bandwidth_deg);

/// Normalised kernel weights k_h(x, v_i)/w(x) from an arbitrary location to
/// every vertex of `domain`. Returns an all-zero vector if nothing is in range.
[[nodiscard]] Eigen::VectorXd normalized_weights_to(const VertexSet& domain, const Vertex& location,
                                                   double bandwidth_deg);

/// `count` log-spaced bandwidths from just above the minimum vertex spacing to
/// a quarter of the domain diameter (45 degrees).
[[nodiscard]] std::vector<double> default_bandwidth_grid(const VertexSet& domain, std::size_t count = 20);

[[nodiscard]] std::vector<double> log_spaced(double lo, double hi, std::size_t count);

}  // namespace twincov
