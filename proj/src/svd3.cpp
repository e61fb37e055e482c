#include "drpose/svd3.hpp"

#include <algorithm>
#include <cmath>

#include "drpose/error.hpp"

namespace drpose {

Mat3 mat3_mul(const Mat3& a, const Mat3& b) {
    Mat3 c{};
    for (int i = 0; i < 3; ++i)
        for (int k = 0; k < 3; ++k)
            for (int j = 0; j < 3; ++j) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return c;
}

Mat3 mat3_transpose(const Mat3& a) {
    return {a[0], a[3], a[6], a[1], a[4], a[7], a[2], a[5], a[8]};
}

double mat3_det(const Mat3& a) {
    return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) + a[2] * (a[3] * a[7] - a[4] * a[6]);
}

namespace {

void swap_columns(Mat3& m, int i, int j) {
    for (int r = 0; r < 3; ++r) std::swap(m[r * 3 + i], m[r * 3 + j]);
}

double column_dot(const Mat3& m, int i, int j) {
    return m[i] * m[j] + m[3 + i] * m[3 + j] + m[6 + i] * m[6 + j];
}

void rotate_columns(Mat3& m, int p, int q, double c, double s) {
    for (int r = 0; r < 3; ++r) {
        const double mp = m[r * 3 + p], mq = m[r * 3 + q];
        m[r * 3 + p] = c * mp - s * mq;
        m[r * 3 + q] = s * mp + c * mq;
    }
}

std::array<double, 3> cross(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

}  // namespace

// Jacobi rotations diagonalizing M^T M, applied to the columns of B = M V so the
// Gram matrix never has to be formed explicitly.
Svd3Result svd3(const Mat3& m) {
    Mat3 b = m;
    Mat3 v{1, 0, 0, 0, 1, 0, 0, 0, 1};
    constexpr double kTol = 1e-15;
    for (int sweep = 0; sweep < 60; ++sweep) {
        bool rotated = false;
        for (int p = 0; p < 2; ++p) {
            for (int q = p + 1; q < 3; ++q) {
                const double alpha = column_dot(b, p, p);
                const double beta = column_dot(b, q, q);
                const double gamma = column_dot(b, p, q);
                if (gamma == 0.0 || std::abs(gamma) <= kTol * std::sqrt(alpha * beta)) continue;
                rotated = true;
                const double zeta = (beta - alpha) / (2.0 * gamma);
                const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = c * t;
                rotate_columns(b, p, q, c, s);
                rotate_columns(v, p, q, c, s);
            }
        }
        if (!rotated) break;
    }

    Svd3Result out;
    for (int i = 0; i < 3; ++i) out.s[i] = std::sqrt(column_dot(b, i, i));
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2 - i; ++j) {
            if (out.s[j] < out.s[j + 1]) {
                std::swap(out.s[j], out.s[j + 1]);
                swap_columns(b, j, j + 1);
                swap_columns(v, j, j + 1);
            }
        }
    }
    out.v = v;

    // Columns of U: normalized B columns; negligible ones are completed to an
    // orthonormal basis.
    std::array<std::array<double, 3>, 3> cols{};
    const double floor = out.s[0] * 1e-15;
    int valid = 0;
    for (int i = 0; i < 3; ++i) {
        if (out.s[i] > floor && out.s[i] > 0.0) {
            for (int r = 0; r < 3; ++r) cols[i][r] = b[r * 3 + i] / out.s[i];
            ++valid;
        }
    }
    if (valid == 0) {
        cols[0] = {1, 0, 0};
        valid = 1;
    }
    if (valid == 1) {
        const auto& u0 = cols[0];
        // pick the axis least aligned with u0
        int axis = 0;
        for (int r = 1; r < 3; ++r)
            if (std::abs(u0[r]) < std::abs(u0[axis])) axis = r;
        std::array<double, 3> e{0, 0, 0};
        e[axis] = 1.0;
        auto w = cross(u0, e);
        const double n = std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
        for (auto& x : w) x /= n;
        cols[1] = w;
        valid = 2;
    }
    if (valid == 2) cols[2] = cross(cols[0], cols[1]);
    for (int i = 0; i < 3; ++i)
        for (int r = 0; r < 3; ++r) out.u[r * 3 + i] = cols[i][r];
    return out;
}

Svd3Tensors svd3(const Tensor& m) {
    if (m.shape() != Shape{3, 3}) throw ShapeError("svd3 expects a 3x3 tensor, got " + shape_string(m.shape()));
    Mat3 a{};
    std::copy_n(m.data().begin(), 9, a.begin());
    const Svd3Result r = svd3(a);
    return {Tensor({3, 3}, std::vector<double>(r.u.begin(), r.u.end())),
            Tensor({3}, std::vector<double>(r.s.begin(), r.s.end())),
            Tensor({3, 3}, std::vector<double>(r.v.begin(), r.v.end()))};
}

}  // namespace drpose
