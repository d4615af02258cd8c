#include "skyline/sh.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "skyline/error.hpp"

namespace skyline {

namespace {
constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[5] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
                           -1.0925484305920792, 0.5462742152960396};
} // namespace

Eigen::Matrix<double, kShCoeffs, 1> sh_basis_deg2(const Vec3& dir) {
    const double x = dir.x(), y = dir.y(), z = dir.z();
    Eigen::Matrix<double, kShCoeffs, 1> b;
    b[0] = kC0;
    b[1] = -kC1 * y;
    b[2] = kC1 * z;
    b[3] = -kC1 * x;
    b[4] = kC2[0] * x * y;
    b[5] = kC2[1] * y * z;
    b[6] = kC2[2] * (2.0 * z * z - x * x - y * y);
    b[7] = kC2[3] * x * z;
    b[8] = kC2[4] * (x * x - y * y);
    return b;
}

std::vector<Vec3> fibonacci_sphere(int n) {
    std::vector<Vec3> dirs;
    dirs.reserve(static_cast<std::size_t>(n));
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n; ++i) {
        const double z = 1.0 - 2.0 * (i + 0.5) / static_cast<double>(n);
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        dirs.emplace_back(r * std::cos(phi), r * std::sin(phi), z);
    }
    return dirs;
}

ShFit fit_sh_deg2(const std::vector<Vec3>& dirs, const std::vector<Vec3>& colors) {
    if (dirs.size() != colors.size() || dirs.empty()) fail(Errc::ShapeMismatch, "sh fit inputs");
    const int n = static_cast<int>(dirs.size());
    MatX phi(n, kShCoeffs);
    for (int i = 0; i < n; ++i) phi.row(i) = sh_basis_deg2(dirs[static_cast<std::size_t>(i)]).transpose();

    const Eigen::Matrix<double, kShCoeffs, kShCoeffs> gram = phi.transpose() * phi;
    Eigen::LDLT<Eigen::Matrix<double, kShCoeffs, kShCoeffs>> ldlt(gram);
    if (ldlt.info() != Eigen::Success || ldlt.rcond() < 1e-12)
        fail(Errc::DegenerateFit, "rank-deficient SH normal equations");

    ShFit fit;
    double se = 0.0;
    for (int ch = 0; ch < 3; ++ch) {
        VecX target(n);
        for (int i = 0; i < n; ++i) target[i] = colors[static_cast<std::size_t>(i)][ch] - 0.5;
        const VecX f = ldlt.solve(phi.transpose() * target);
        fit.coeffs.row(ch) = f.transpose();
        se += (phi * f - target).squaredNorm();
    }
    fit.rms = std::sqrt(se / static_cast<double>(3 * n));
    return fit;
}

Vec3 eval_sh_deg2(const Eigen::Matrix<double, 3, kShCoeffs>& coeffs, const Vec3& dir) {
    return Vec3::Constant(0.5) + coeffs * sh_basis_deg2(dir);
}

} // namespace skyline
