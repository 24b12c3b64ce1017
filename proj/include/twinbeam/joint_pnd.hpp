#pragma once

#include <cstddef>
#include <utility>
#include <vector>

namespace twinbeam {

inline constexpr double kDefaultTailTolerance = 1e-12;

// Truncated joint photon-number distribution p(n_S, n_I).
// Entries are nonnegative and sum to 1 - tail_mass; the discarded tail
// is carried explicitly so downstream error budgets stay auditable.
class JointPnd {
public:
    JointPnd(std::vector<double> probs, std::size_t n_max_s,
             std::size_t n_max_i, double tail_mass);

    std::size_t n_max_s() const noexcept { return n_max_s_; }
    std::size_t n_max_i() const noexcept { return n_max_i_; }
    std::size_t rows() const noexcept { return n_max_s_ + 1; }
    std::size_t cols() const noexcept { return n_max_i_ + 1; }
    double tail_mass() const noexcept { return tail_mass_; }

    double operator()(std::size_t n_s, std::size_t n_i) const {
        return probs_[n_s * cols() + n_i];
    }
    const std::vector<double>& probs() const noexcept { return probs_; }

private:
    std::vector<double> probs_; // row-major (n_max_s+1) x (n_max_i+1)
    std::size_t n_max_s_;
    std::size_t n_max_i_;
    double tail_mass_;
};

// One-dimensional distribution derived from a JointPnd. The difference
// distribution lives on signed indices, so probs[0] corresponds to the
// value `offset` (= -n_max_i there, 0 everywhere else).
struct Marginal {
    enum class Label { signal, idler, sum, difference };

    std::vector<double> probs;
    Label label = Label::signal;
    long long offset = 0;

    long long value_at(std::size_t idx) const {
        return offset + static_cast<long long>(idx);
    }
    double total() const;
    double mean() const;
    double second_moment() const;
    double variance() const;
};

JointPnd make_poisson_pairs(double mu, double eps_trunc = kDefaultTailTolerance);
JointPnd make_gaussian_pairs(double mu, double eps_trunc = kDefaultTailTolerance);
JointPnd product_distribution(const Marginal& m_s, const Marginal& m_i);

std::pair<Marginal, Marginal> marginals(const JointPnd& p);
Marginal diff_distribution(const JointPnd& p);
Marginal sum_distribution(const JointPnd& p);

// First and second moments of the pair (n_S, n_I), computed by direct
// summation.
struct JointMoments {
    double mean_s;
    double mean_i;
    double var_s;
    double var_i;
    double cov;
};
JointMoments joint_moments(const JointPnd& p);

// Normalized covariance; throws degeneracy_error when either marginal
// variance vanishes (the definition divides by them).
double covariance(const JointPnd& p);

// S = <n^2>/<n>^2 - 1/<n>; 1 for Poissonian, 2 for thermal-like
// statistics. Throws degeneracy_error when <n> = 0.
double s_coefficient(const Marginal& m);

struct VarianceIdentity {
    double var_diff; // Var(n_S - n_I) from the difference distribution
    double var_sum;  // Var(n_S + n_I) from the sum distribution
    double rhs_diff; // Var_S + Var_I - 2 Cov
    double rhs_sum;  // Var_S + Var_I + 2 Cov
};
VarianceIdentity variance_identity_check(const JointPnd& p);

} // namespace twinbeam
