#include "twinbeam/joint_pnd.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "twinbeam/errors.hpp"
#include "twinbeam/numeric.hpp"

namespace twinbeam {

namespace {

constexpr double kNormSlack = 1e-9;

double checked_sum(const std::vector<double>& probs) {
    CompensatedSum acc;
    for (double p : probs) {
        if (!(p >= 0.0)) {
            std::ostringstream msg;
            msg << "joint distribution entry " << p << " is negative or NaN";
            throw validation_error(msg.str());
        }
        acc.add(p);
    }
    return acc.value();
}

} // namespace

JointPnd::JointPnd(std::vector<double> probs, std::size_t n_max_s,
                   std::size_t n_max_i, double tail_mass)
    : probs_(std::move(probs)), n_max_s_(n_max_s), n_max_i_(n_max_i),
      tail_mass_(tail_mass) {
    if (probs_.size() != (n_max_s_ + 1) * (n_max_i_ + 1))
        throw validation_error("joint distribution size does not match bounds");
    if (!(tail_mass_ >= 0.0)) {
        if (tail_mass_ > -1e-15)
            tail_mass_ = 0.0; // round-off from mass bookkeeping
        else
            throw validation_error("negative tail mass");
    }
    double total = checked_sum(probs_) + tail_mass_;
    if (std::abs(total - 1.0) > kNormSlack) {
        std::ostringstream msg;
        msg << "joint distribution mass " << total << " is not 1 within "
            << kNormSlack;
        throw validation_error(msg.str());
    }
}

JointPnd make_poisson_pairs(double mu, double eps_trunc) {
    if (!(mu >= 0.0))
        throw validation_error("mean pair number must be nonnegative");
    if (!(eps_trunc > 0.0 && eps_trunc < 1.0))
        throw validation_error("truncation tolerance must lie in (0, 1)");

    // p(n) = mu^n e^-mu / n!, accumulated by the ratio recurrence to
    // avoid overflow; stop once the remaining tail dips below eps_trunc.
    std::vector<double> diag{std::exp(-mu)};
    CompensatedSum cum;
    cum.add(diag.back());
    while (1.0 - cum.value() >= eps_trunc) {
        diag.push_back(diag.back() * mu / static_cast<double>(diag.size()));
        cum.add(diag.back());
    }

    std::size_t n_max = diag.size() - 1;
    std::vector<double> probs((n_max + 1) * (n_max + 1), 0.0);
    for (std::size_t n = 0; n <= n_max; ++n)
        probs[n * (n_max + 1) + n] = diag[n];
    double tail = 1.0 - cum.value();
    return JointPnd(std::move(probs), n_max, n_max, tail < 0.0 ? 0.0 : tail);
}

JointPnd make_gaussian_pairs(double mu, double eps_trunc) {
    if (!(mu >= 0.0))
        throw validation_error("mean pair number must be nonnegative");
    if (!(eps_trunc > 0.0 && eps_trunc < 1.0))
        throw validation_error("truncation tolerance must lie in (0, 1)");

    // geometric law p(n) = mu^n / (mu+1)^(n+1)
    std::vector<double> diag{1.0 / (mu + 1.0)};
    CompensatedSum cum;
    cum.add(diag.back());
    double ratio = mu / (mu + 1.0);
    while (1.0 - cum.value() >= eps_trunc) {
        diag.push_back(diag.back() * ratio);
        cum.add(diag.back());
    }

    std::size_t n_max = diag.size() - 1;
    std::vector<double> probs((n_max + 1) * (n_max + 1), 0.0);
    for (std::size_t n = 0; n <= n_max; ++n)
        probs[n * (n_max + 1) + n] = diag[n];
    double tail = 1.0 - cum.value();
    return JointPnd(std::move(probs), n_max, n_max, tail < 0.0 ? 0.0 : tail);
}

JointPnd product_distribution(const Marginal& m_s, const Marginal& m_i) {
    if (m_s.offset != 0 || m_i.offset != 0)
        throw validation_error(
            "product distribution requires photon-number marginals "
            "(nonnegative support)");
    if (m_s.probs.empty() || m_i.probs.empty())
        throw validation_error("empty marginal");
    for (const Marginal* m : {&m_s, &m_i}) {
        double t = m->total();
        if (std::abs(t - 1.0) > 1e-6)
            throw validation_error("marginal is not normalized");
    }

    std::size_t rows = m_s.probs.size();
    std::size_t cols = m_i.probs.size();
    std::vector<double> probs(rows * cols);
    CompensatedSum mass;
    for (std::size_t a = 0; a < rows; ++a)
        for (std::size_t b = 0; b < cols; ++b) {
            double v = m_s.probs[a] * m_i.probs[b];
            probs[a * cols + b] = v;
            mass.add(v);
        }
    double tail = 1.0 - mass.value();
    return JointPnd(std::move(probs), rows - 1, cols - 1,
                    tail < 0.0 ? 0.0 : tail);
}

double Marginal::total() const {
    CompensatedSum acc;
    for (double p : probs)
        acc.add(p);
    return acc.value();
}

// Moments condition on the truncated support: raw sums are divided by
// the carried mass so a 1e-12 tail cannot bias covariances above the
// documented tolerances.
double Marginal::mean() const {
    const double mass = total();
    if (!(mass > 0.0))
        throw degeneracy_error("moments undefined: marginal carries no mass");
    CompensatedSum acc;
    for (std::size_t i = 0; i < probs.size(); ++i)
        acc.add(static_cast<double>(value_at(i)) * probs[i]);
    return acc.value() / mass;
}

double Marginal::second_moment() const {
    const double mass = total();
    if (!(mass > 0.0))
        throw degeneracy_error("moments undefined: marginal carries no mass");
    CompensatedSum acc;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double v = static_cast<double>(value_at(i));
        acc.add(v * v * probs[i]);
    }
    return acc.value() / mass;
}

double Marginal::variance() const {
    double m = mean();
    return second_moment() - m * m;
}

std::pair<Marginal, Marginal> marginals(const JointPnd& p) {
    Marginal s, i;
    s.label = Marginal::Label::signal;
    i.label = Marginal::Label::idler;
    s.probs.assign(p.rows(), 0.0);
    i.probs.assign(p.cols(), 0.0);
    std::vector<CompensatedSum> row_acc(p.rows()), col_acc(p.cols());
    for (std::size_t a = 0; a < p.rows(); ++a)
        for (std::size_t b = 0; b < p.cols(); ++b) {
            double v = p(a, b);
            row_acc[a].add(v);
            col_acc[b].add(v);
        }
    for (std::size_t a = 0; a < p.rows(); ++a)
        s.probs[a] = row_acc[a].value();
    for (std::size_t b = 0; b < p.cols(); ++b)
        i.probs[b] = col_acc[b].value();
    return {std::move(s), std::move(i)};
}

Marginal diff_distribution(const JointPnd& p) {
    Marginal d;
    d.label = Marginal::Label::difference;
    d.offset = -static_cast<long long>(p.n_max_i());
    std::vector<CompensatedSum> acc(p.n_max_s() + p.n_max_i() + 1);
    for (std::size_t a = 0; a < p.rows(); ++a)
        for (std::size_t b = 0; b < p.cols(); ++b)
            acc[a + p.n_max_i() - b].add(p(a, b));
    d.probs.resize(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k)
        d.probs[k] = acc[k].value();
    return d;
}

Marginal sum_distribution(const JointPnd& p) {
    Marginal s;
    s.label = Marginal::Label::sum;
    std::vector<CompensatedSum> acc(p.n_max_s() + p.n_max_i() + 1);
    for (std::size_t a = 0; a < p.rows(); ++a)
        for (std::size_t b = 0; b < p.cols(); ++b)
            acc[a + b].add(p(a, b));
    s.probs.resize(acc.size());
    for (std::size_t k = 0; k < acc.size(); ++k)
        s.probs[k] = acc[k].value();
    return s;
}

JointMoments joint_moments(const JointPnd& p) {
    CompensatedSum mass, ms, mi, m2s, m2i, msi;
    for (std::size_t a = 0; a < p.rows(); ++a)
        for (std::size_t b = 0; b < p.cols(); ++b) {
            double v = p(a, b);
            double na = static_cast<double>(a);
            double nb = static_cast<double>(b);
            mass.add(v);
            ms.add(na * v);
            mi.add(nb * v);
            m2s.add(na * na * v);
            m2i.add(nb * nb * v);
            msi.add(na * nb * v);
        }
    const double total = mass.value();
    if (!(total > 0.0))
        throw degeneracy_error("moments undefined: distribution carries no mass");
    JointMoments m;
    m.mean_s = ms.value() / total;
    m.mean_i = mi.value() / total;
    m.var_s = m2s.value() / total - m.mean_s * m.mean_s;
    m.var_i = m2i.value() / total - m.mean_i * m.mean_i;
    m.cov = msi.value() / total - m.mean_s * m.mean_i;
    return m;
}

double covariance(const JointPnd& p) {
    JointMoments m = joint_moments(p);
    if (!(m.var_s > 0.0) || !(m.var_i > 0.0))
        throw degeneracy_error(
            "covariance undefined: a marginal has zero variance");
    double c = m.cov / std::sqrt(m.var_s * m.var_i);
    if (c > 1.0) c = 1.0;
    if (c < -1.0) c = -1.0;
    return c;
}

double s_coefficient(const Marginal& m) {
    double mean = m.mean();
    if (!(mean > 0.0))
        throw degeneracy_error(
            "S coefficient undefined: mean photon number is zero");
    return m.second_moment() / (mean * mean) - 1.0 / mean;
}

VarianceIdentity variance_identity_check(const JointPnd& p) {
    JointMoments m = joint_moments(p);
    VarianceIdentity out;
    out.var_diff = diff_distribution(p).variance();
    out.var_sum = sum_distribution(p).variance();
    out.rhs_diff = m.var_s + m.var_i - 2.0 * m.cov;
    out.rhs_sum = m.var_s + m.var_i + 2.0 * m.cov;
    return out;
}

} // namespace twinbeam
