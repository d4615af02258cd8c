#include "skyline/optim.hpp"

#include <algorithm>
#include <cmath>

namespace skyline {

void Adam::remove_rows(const std::vector<char>& remove, std::size_t row_width) {
    const std::size_t rows = remove.size();
    std::size_t out = 0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (remove[r]) continue;
        if (out != r) {
            std::copy_n(m_.begin() + static_cast<long>(r * row_width), row_width,
                        m_.begin() + static_cast<long>(out * row_width));
            std::copy_n(v_.begin() + static_cast<long>(r * row_width), row_width,
                        v_.begin() + static_cast<long>(out * row_width));
        }
        ++out;
    }
    m_.resize(out * row_width);
    v_.resize(out * row_width);
}

void Adam::update(double* p, const double* g, std::size_t offset, std::size_t n, double lr) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < n; ++i) {
        double& m = m_[offset + i];
        double& v = v_[offset + i];
        const double gi = g[i];
        m = beta1 * m + (1.0 - beta1) * gi;
        v = beta2 * v + (1.0 - beta2) * gi * gi;
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
}

double exp_lr(double lr_init, double lr_final, double progress) {
    if (lr_final <= 0.0 || lr_init <= 0.0) return lr_init;
    progress = progress < 0.0 ? 0.0 : (progress > 1.0 ? 1.0 : progress);
    return lr_init * std::pow(lr_final / lr_init, progress);
}

} // namespace skyline
