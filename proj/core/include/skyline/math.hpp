#pragma once

#include <Eigen/Core>
#include <cmath>

namespace skyline {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

// Quaternions are stored as (w, x, y, z) and assumed unit unless noted.
inline Mat3 quat_to_rot(const Vec4& q) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
}

// Accumulates dL/dq for a unit quaternion given dL/dR.
inline Vec4 quat_rot_backward(const Vec4& q, const Mat3& dR) {
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    Mat3 dRw, dRx, dRy, dRz;
    dRw << 0, -z, y, z, 0, -x, -y, x, 0;
    dRx << 0, y, z, y, -2 * x, -w, z, w, -2 * x;
    dRy << -2 * y, x, w, x, 0, z, -w, z, -2 * y;
    dRz << -2 * z, -w, x, w, -2 * z, y, x, y, 0;
    Vec4 g;
    g[0] = 2.0 * dRw.cwiseProduct(dR).sum();
    g[1] = 2.0 * dRx.cwiseProduct(dR).sum();
    g[2] = 2.0 * dRy.cwiseProduct(dR).sum();
    g[3] = 2.0 * dRz.cwiseProduct(dR).sum();
    return g;
}

inline Vec4 normalize_quat(const Vec4& q) {
    const double n = q.norm();
    if (n < 1e-12) return Vec4(1, 0, 0, 0);
    return q / n;
}

// Backward of u = q/|q|: dL/dq = (dL/du - u (u . dL/du)) / |q|.
inline Vec4 quat_normalize_backward(const Vec4& q_raw, const Vec4& d_unit) {
    const double n = q_raw.norm();
    if (n < 1e-12) return Vec4::Zero();
    const Vec4 u = q_raw / n;
    return (d_unit - u * u.dot(d_unit)) / n;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double clampd(double v, double lo, double hi) { return v < lo ? lo : (v > hi ? hi : v); }

struct Bounds2 {
    Vec2 min{0, 0};
    Vec2 max{0, 0};

    bool contains_closed(const Vec2& p) const {
        return p.x() >= min.x() && p.x() <= max.x() && p.y() >= min.y() && p.y() <= max.y();
    }
    Vec2 extent() const { return max - min; }
    double diagonal() const { return extent().norm(); }
    void expand(double m) {
        min.array() -= m;
        max.array() += m;
    }
    void absorb(const Vec2& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
    bool covers(const Bounds2& other) const {
        return other.min.x() >= min.x() && other.min.y() >= min.y() &&
               other.max.x() <= max.x() && other.max.y() <= max.y();
    }
};

// FNV-1a over raw bytes; used for parameter-freeze audits and determinism checks.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t seed = 14695981039346656037ull) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a(const VecX& v, std::uint64_t seed = 14695981039346656037ull) {
    return fnv1a(v.data(), sizeof(double) * static_cast<std::size_t>(v.size()), seed);
}

} // namespace skyline
