#pragma once

#include <Eigen/Dense>

#include <string>
#include <string_view>

namespace twincov {

/// "MAT1" container: magic `4D 41 54 31`, u64 rows, u64 cols (little-endian),
/// then rows*cols little-endian float64 values in row-major order.
void write_mat1(const std::string& path, const Eigen::MatrixXd& m);
[[nodiscard]] Eigen::MatrixXd read_mat1(const std::string& path);

/// In-memory encode/decode, used by the file functions and by tests.
[[nodiscard]] std::string encode_mat1(const Eigen::MatrixXd& m);
[[nodiscard]] Eigen::MatrixXd decode_mat1(std::string_view bytes, const std::string& context = "MAT1 buffer");

[[nodiscard]] bool looks_like_mat1(const std::string& path);

}  // namespace twincov
