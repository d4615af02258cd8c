#pragma once

#include <vector>

#include "skyline/math.hpp"

namespace skyline {

// Real spherical harmonics through degree 2, 3D-GS basis ordering and signs.
inline constexpr int kShCoeffs = 9;

Eigen::Matrix<double, kShCoeffs, 1> sh_basis_deg2(const Vec3& dir);

// n roughly uniform unit directions (Fibonacci spiral).
std::vector<Vec3> fibonacci_sphere(int n);

struct ShFit {
    Eigen::Matrix<double, 3, kShCoeffs> coeffs; // row per channel
    double rms = 0.0;                           // fit residual over samples & channels
};

// Least-squares fit of color(dir) ~ 0.5 + coeffs * basis(dir).
// Throws DegenerateFit when the normal equations are rank deficient.
ShFit fit_sh_deg2(const std::vector<Vec3>& dirs, const std::vector<Vec3>& colors);

// Evaluation including the 0.5 offset, unclamped.
Vec3 eval_sh_deg2(const Eigen::Matrix<double, 3, kShCoeffs>& coeffs, const Vec3& dir);

} // namespace skyline
