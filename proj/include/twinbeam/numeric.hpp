#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace twinbeam {

// Neumaier-compensated accumulator. Used wherever many small positive
// terms meet a few large ones (kernel sums, moments, series).
class CompensatedSum {
public:
    void add(double x) noexcept {
        double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x))
            comp_ += (sum_ - t) + x;
        else
            comp_ += (x - t) + sum_;
        sum_ = t;
    }
    double value() const noexcept { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

// log(k!) for k = 0..size-1, built once and indexed directly.
// std::lgamma is exact enough here (|rel err| ~ 1e-16) and avoids
// carrying a cumulative-rounding table.
inline std::vector<double> log_factorial_table(std::size_t size) {
    std::vector<double> t(size);
    for (std::size_t k = 0; k < size; ++k)
        t[k] = std::lgamma(static_cast<double>(k) + 1.0);
    return t;
}

inline double log_binomial(const std::vector<double>& log_fact,
                           std::size_t n, std::size_t k) {
    return log_fact[n] - log_fact[k] - log_fact[n - k];
}

} // namespace twinbeam
