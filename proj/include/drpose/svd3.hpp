#pragma once

#include <array>

#include "drpose/tensor.hpp"

namespace drpose {

using Mat3 = std::array<double, 9>;  // row-major

struct Svd3Result {
    Mat3 u{};
    std::array<double, 3> s{};  // descending, non-negative
    Mat3 v{};
};

// M = U * diag(S) * V^T via Jacobi diagonalization of M^T M. Rank-deficient and
// zero inputs still yield orthonormal U and V.
Svd3Result svd3(const Mat3& m);

struct Svd3Tensors {
    Tensor u, s, v;
};
Svd3Tensors svd3(const Tensor& m);

Mat3 mat3_mul(const Mat3& a, const Mat3& b);
Mat3 mat3_transpose(const Mat3& a);
double mat3_det(const Mat3& a);

}  // namespace drpose
