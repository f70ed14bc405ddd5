#include "twincov/sphere_domain.hpp"

#include "atomic_file.hpp"
#include "csv.hpp"
#include "twincov/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <sstream>

namespace twincov {

namespace {

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

Eigen::RowVector3d to_unit(const Vertex& v) {
    const double s = std::sin(v.theta);
    return {s * std::cos(v.phi), s * std::sin(v.phi), std::cos(v.theta)};
}

double angle_between_deg(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b) {
    // atan2 form stays accurate for both tiny and near-antipodal separations.
    const double cross = a.cross(b).norm();
    const double dot = a.dot(b);
    return std::atan2(cross, dot) * kDegPerRad;
}

void validate_vertex(const Vertex& v, std::size_t index) {
    const bool ok = std::isfinite(v.theta) && std::isfinite(v.phi) && v.theta >= 0.0 &&
                    v.theta <= std::numbers::pi && v.phi >= 0.0 && v.phi < 2.0 * std::numbers::pi;
    if (!ok) {
        fail(ErrorCode::InvalidArgument,
             "vertex " + std::to_string(index + 1) + " has coordinates outside theta in [0,pi], phi in [0,2pi)");
    }
}

}  // namespace

double geodesic_distance(const Vertex& a, const Vertex& b) {
    if (a.hemisphere != b.hemisphere) return kInfiniteDistance;
    return angle_between_deg(to_unit(a), to_unit(b));
}

double biweight_weight(double distance_deg, double bandwidth_deg) {
    if (!(bandwidth_deg > 0.0) || !std::isfinite(bandwidth_deg)) {
        fail(ErrorCode::InvalidBandwidth, "bandwidth must be a positive finite number of degrees");
    }
    if (!(distance_deg < bandwidth_deg)) return 0.0;  // also catches infinity
    const double u = distance_deg / bandwidth_deg;
    const double t = 1.0 - u * u;
    return 15.0 / (16.0 * bandwidth_deg) * t * t;
}

VertexSet::VertexSet(std::vector<Vertex> vertices) : vertices_(std::move(vertices)) {
    require(!vertices_.empty(), ErrorCode::InvalidArgument, "a vertex set needs at least one vertex");
    xyz_.resize(static_cast<Eigen::Index>(vertices_.size()), 3);
    for (std::size_t i = 0; i < vertices_.size(); ++i) {
        validate_vertex(vertices_[i], i);
        xyz_.row(static_cast<Eigen::Index>(i)) = to_unit(vertices_[i]);
    }
}

bool VertexSet::single_sphere() const noexcept {
    return std::all_of(vertices_.begin(), vertices_.end(),
                       [&](const Vertex& v) { return v.hemisphere == vertices_.front().hemisphere; });
}

VertexSet VertexSet::subset(std::span<const std::size_t> indices) const {
    std::vector<Vertex> out;
    out.reserve(indices.size());
    for (auto i : indices) {
        require(i < vertices_.size(), ErrorCode::InvalidArgument, "subset index out of range");
        out.push_back(vertices_[i]);
    }
    return VertexSet(std::move(out));
}

double VertexSet::min_spacing() const {
    double best = kInfiniteDistance;
    const auto n = static_cast<Eigen::Index>(size());
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xyz_(a, 2) < xyz_(b, 2); });
    for (std::size_t a = 0; a < order.size(); ++a) {
        const auto i = order[a];
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            const auto j = order[b];
            if (std::isfinite(best) && xyz_(j, 2) - xyz_(i, 2) > 2.0 * std::sin(best / (2.0 * kDegPerRad)) + 1e-12) {
                break;
            }
            if (vertices_[static_cast<std::size_t>(i)].hemisphere != vertices_[static_cast<std::size_t>(j)].hemisphere) {
                continue;
            }
            best = std::min(best, angle_between_deg(xyz_.row(i), xyz_.row(j)));
        }
    }
    return best;
}

VertexSet fibonacci_sphere(std::size_t count, Hemisphere hemisphere) {
    require(count > 0, ErrorCode::InvalidArgument, "fibonacci_sphere needs a positive count");
    const double golden_angle = std::numbers::pi * (3.0 - std::sqrt(5.0));
    const double two_pi = 2.0 * std::numbers::pi;
    std::vector<Vertex> vs(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double z = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(count);
        vs[i].theta = std::acos(std::clamp(z, -1.0, 1.0));
        double phi = std::fmod(golden_angle * static_cast<double>(i), two_pi);
        if (phi < 0.0) phi += two_pi;
        if (phi >= two_pi) phi = 0.0;
        vs[i].phi = phi;
        vs[i].hemisphere = hemisphere;
    }
    return VertexSet(std::move(vs));
}

VertexSet load_vertices(const std::string& path) {
    const auto table = detail::read_csv(path);
    const std::vector<std::string> expected{"index", "theta", "phi", "hemisphere"};
    require(table.header == expected, ErrorCode::Parse,
            "'" + path + "': header must be index,theta,phi,hemisphere");
    std::vector<Vertex> vs(table.rows.size());
    std::vector<bool> seen(table.rows.size(), false);
    for (const auto& row : table.rows) {
        require(row.size() == 4, ErrorCode::Parse, "'" + path + "': expected 4 fields per row");
        const auto index = detail::parse_int(row[0], path);
        require(index >= 1 && static_cast<std::size_t>(index) <= vs.size(), ErrorCode::Parse,
                "'" + path + "': vertex index " + row[0] + " outside 1..V");
        const auto slot = static_cast<std::size_t>(index - 1);
        require(!seen[slot], ErrorCode::Parse, "'" + path + "': duplicate vertex index " + row[0]);
        seen[slot] = true;
        Vertex v;
        v.theta = detail::parse_double(row[1], path);
        v.phi = detail::parse_double(row[2], path);
        if (row[3] == "L") {
            v.hemisphere = Hemisphere::Left;
        } else if (row[3] == "R") {
            v.hemisphere = Hemisphere::Right;
        } else {
            fail(ErrorCode::Parse, "'" + path + "': hemisphere must be L or R");
        }
        vs[slot] = v;
    }
    require(vs.size() >= 3, ErrorCode::InvalidArgument, "'" + path + "': a domain needs at least 3 vertices");
    return VertexSet(std::move(vs));
}

void save_vertices(const VertexSet& domain, const std::string& path) {
    std::ostringstream out;
    out << "index,theta,phi,hemisphere\n";
    char buf[128];
    for (std::size_t i = 0; i < domain.size(); ++i) {
        const auto& v = domain[i];
        std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%c\n", i + 1, v.theta, v.phi,
                      v.hemisphere == Hemisphere::Left ? 'L' : 'R');
        out << buf;
    }
    detail::write_file_atomically(path, out.str());
}

double KernelOperator::smoother_trace() const {
    double tr = 0.0;
    for (Eigen::Index i = 0; i < smoother.outerSize(); ++i) tr += smoother.coeff(i, i);
    return tr;
}

bool KernelOperator::every_vertex_has_neighbour() const {
    for (Eigen::Index i = 0; i < raw.outerSize(); ++i) {
        bool found = false;
        for (SparseRowMatrix::InnerIterator it(raw, i); it; ++it) {
            if (it.col() != i && it.value() > 0.0) {
                found = true;
                break;
            }
        }
        if (!found) return false;
    }
    return true;
}

KernelOperator build_kernel(const VertexSet& domain, double bandwidth_deg) {
    (void)biweight_weight(0.0, bandwidth_deg);  // validates h
    const auto n = static_cast<Eigen::Index>(domain.size());
    const auto& xyz = domain.unit_vectors();

    // Two points within arc h differ in z by at most the chord length 2 sin(h/2),
    // so a sweep over vertices sorted by z only needs a bounded window.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return xyz(a, 2) < xyz(b, 2); });
    const double half = std::min(bandwidth_deg, 180.0) / (2.0 * kDegPerRad);
    const double window = 2.0 * std::sin(half) + 1e-12;

    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(n) * 8);
    const double self_weight = biweight_weight(0.0, bandwidth_deg);
    for (Eigen::Index i = 0; i < n; ++i) triplets.emplace_back(i, i, self_weight);
    for (std::size_t a = 0; a < order.size(); ++a) {
        const auto i = order[a];
        for (std::size_t b = a + 1; b < order.size(); ++b) {
            const auto j = order[b];
            if (xyz(j, 2) - xyz(i, 2) > window) break;
            if (domain[static_cast<std::size_t>(i)].hemisphere != domain[static_cast<std::size_t>(j)].hemisphere) {
                continue;
            }
            const double d = angle_between_deg(xyz.row(i), xyz.row(j));
            const double k = biweight_weight(d, bandwidth_deg);
            if (k > 0.0) {
                triplets.emplace_back(i, j, k);
                triplets.emplace_back(j, i, k);
            }
        }
    }

    KernelOperator op;
    op.bandwidth = bandwidth_deg;
    op.raw.resize(n, n);
    op.raw.setFromTriplets(triplets.begin(), triplets.end());
    op.raw.makeCompressed();
    op.row_weights = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (SparseRowMatrix::InnerIterator it(op.raw, i); it; ++it) op.row_weights[i] += it.value();
    }
    op.smoother = op.raw;
    for (Eigen::Index i = 0; i < n; ++i) {
        for (SparseRowMatrix::InnerIterator it(op.smoother, i); it; ++it) it.valueRef() /= op.row_weights[i];
    }
    return op;
}

Eigen::VectorXd normalized_weights_to(const VertexSet& domain, const Vertex& location, double bandwidth_deg) {
    Eigen::VectorXd k(static_cast<Eigen::Index>(domain.size()));
    for (std::size_t i = 0; i < domain.size(); ++i) {
        k[static_cast<Eigen::Index>(i)] = biweight_weight(geodesic_distance(location, domain[i]), bandwidth_deg);
    }
    const double w = k.sum();
    if (w > 0.0) k /= w;
    return k;
}

std::vector<double> log_spaced(double lo, double hi, std::size_t count) {
    require(lo > 0.0 && hi >= lo && count > 0, ErrorCode::InvalidArgument, "log_spaced: need 0 < lo <= hi");
    std::vector<double> out(count);
    if (count == 1) {
        out[0] = lo;
        return out;
    }
    const double step = std::log(hi / lo) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) out[i] = lo * std::exp(step * static_cast<double>(i));
    out.back() = hi;
    return out;
}

std::vector<double> default_bandwidth_grid(const VertexSet& domain, std::size_t count) {
    const double spacing = domain.min_spacing();
    require(std::isfinite(spacing), ErrorCode::InvalidArgument,
            "default bandwidth grid needs at least two vertices on one sphere");
    const double lo = spacing * 1.01;
    const double hi = std::max(45.0, lo);
    return log_spaced(lo, hi, count);
}

}  // namespace twincov
