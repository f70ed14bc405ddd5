#pragma once

// Row-blocked products. Block boundaries are fixed, so results are identical
// for any thread count.

#include "twincov/sphere_domain.hpp"

#include <Eigen/Dense>

namespace twincov::detail {

inline constexpr Eigen::Index kRowBlock = 64;

template <class Lhs>
Eigen::MatrixXd blocked_product(const Lhs& lhs, const Eigen::MatrixXd& rhs) {
    Eigen::MatrixXd out(lhs.rows(), rhs.cols());
    const Eigen::Index blocks = (lhs.rows() + kRowBlock - 1) / kRowBlock;
#pragma omp parallel for schedule(static)
    for (Eigen::Index b = 0; b < blocks; ++b) {
        const Eigen::Index begin = b * kRowBlock;
        const Eigen::Index n = std::min(kRowBlock, lhs.rows() - begin);
        out.middleRows(begin, n).noalias() = lhs.middleRows(begin, n) * rhs;
    }
    return out;
}

inline void symmetrize(Eigen::MatrixXd& m) {
    const Eigen::MatrixXd t = m.transpose();
    m = 0.5 * (m + t);
}

/// L S L^T for sparse L and symmetric S, symmetrised exactly.
inline Eigen::MatrixXd sandwich(const SparseRowMatrix& l, const Eigen::MatrixXd& s) {
    const Eigen::MatrixXd ls = blocked_product(l, s);
    Eigen::MatrixXd out = blocked_product(l, Eigen::MatrixXd(ls.transpose()));
    symmetrize(out);
    return out;
}

}  // namespace twincov::detail
