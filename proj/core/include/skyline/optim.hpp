#pragma once

#include <cstddef>
#include <vector>

namespace skyline {

// Adam with per-call learning rate. Moments live in flat arrays managed in
// lockstep with the parameters they shadow; densification appends zeroed rows
// and pruning removes rows.
class Adam {
public:
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-15;

    void reset(std::size_t n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
        t_ = 0;
    }
    void append_zeros(std::size_t n) {
        m_.resize(m_.size() + n, 0.0);
        v_.resize(v_.size() + n, 0.0);
    }
    void remove_rows(const std::vector<char>& remove, std::size_t row_width);
    void zero_moments() {
        std::fill(m_.begin(), m_.end(), 0.0);
        std::fill(v_.begin(), v_.end(), 0.0);
    }

    // One optimizer step = begin_step() once, then update() per live span.
    void begin_step() { ++t_; }
    void update(double* p, const double* g, std::size_t offset, std::size_t n, double lr);

    std::size_t size() const { return m_.size(); }
    long step_count() const { return t_; }
    void set_step_count(long t) { t_ = t; }
    std::vector<double>& m() { return m_; }
    std::vector<double>& v() { return v_; }
    const std::vector<double>& m() const { return m_; }
    const std::vector<double>& v() const { return v_; }

private:
    std::vector<double> m_, v_;
    long t_ = 0;
};

// lr_init -> lr_final exponential interpolation over progress in [0, 1];
// lr_final <= 0 keeps the rate constant.
double exp_lr(double lr_init, double lr_final, double progress);

} // namespace skyline
