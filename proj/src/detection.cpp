#include "twinbeam/detection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>

#include "twinbeam/errors.hpp"
#include "twinbeam/numeric.hpp"

namespace twinbeam {

namespace {

void check_unit_interval(double v, const char* name, bool open_top = false) {
    bool ok = v >= 0.0 && (open_top ? v < 1.0 : v <= 1.0);
    if (!ok || !std::isfinite(v)) {
        std::ostringstream msg;
        msg << name << " = " << v << " outside " << (open_top ? "[0,1)" : "[0,1]");
        throw validation_error(msg.str());
    }
}

// Shared inner loop of the infinite-pixel kernel. Terms that vanish at
// the q/D boundaries produce -inf exponents and drop out; the count
// guards only prevent 0 * log(0).
double kinf_terms(std::size_t c, std::size_t n, double q, double dark_mean,
                  const std::vector<double>& lf) {
    std::size_t l_max = std::min(c, n);
    CompensatedSum acc;
    for (std::size_t l = 0; l <= l_max; ++l) {
        double lt = lf[n] - lf[l] - lf[n - l] - dark_mean - lf[c - l];
        if (l > 0) lt += static_cast<double>(l) * std::log(q);
        if (n - l > 0) lt += static_cast<double>(n - l) * std::log1p(-q);
        if (c - l > 0) lt += static_cast<double>(c - l) * std::log(dark_mean);
        acc.add(std::exp(lt));
    }
    return acc.value();
}

// P(u distinct occupied pixels | m photons thrown uniformly into N).
// Row m of the returned table has min(m, N) + 1 entries. The forward
// recurrence keeps every term positive, which is what makes the finite
// kernel usable at N ~ 1e4 where the alternating-sum form cancels
// catastrophically.
std::vector<std::vector<double>> occupancy_rows(std::size_t pixels,
                                                std::size_t m_max) {
    double n_inv = 1.0 / static_cast<double>(pixels);
    std::vector<std::vector<double>> occ(m_max + 1);
    occ[0] = {1.0};
    for (std::size_t m = 0; m < m_max; ++m) {
        std::size_t width = std::min(m + 1, pixels) + 1;
        std::vector<double> next(width, 0.0);
        const std::vector<double>& cur = occ[m];
        for (std::size_t u = 0; u < width; ++u) {
            double v = 0.0;
            if (u < cur.size())
                v += cur[u] * (static_cast<double>(u) * n_inv);
            if (u >= 1 && u - 1 < cur.size())
                v += cur[u - 1] *
                     (static_cast<double>(pixels - (u - 1)) * n_inv);
            next[u] = v;
        }
        occ[m + 1] = std::move(next);
    }
    return occ;
}

// Probability that dark counts lift u occupied pixels to exactly c
// clicks: C(N-u, c-u) d^(c-u) (1-d)^(N-c).
double dark_completion(std::size_t c, std::size_t u, std::size_t pixels,
                       double dark_prob, const std::vector<double>& lf) {
    double lt = lf[pixels - u] - lf[c - u] - lf[pixels - c];
    if (c - u > 0) lt += static_cast<double>(c - u) * std::log(dark_prob);
    if (pixels - c > 0)
        lt += static_cast<double>(pixels - c) * std::log1p(-dark_prob);
    return std::exp(lt);
}

double binomial_log_pmf(std::size_t n, std::size_t m, double q,
                        const std::vector<double>& lf) {
    double lt = lf[n] - lf[m] - lf[n - m];
    if (m > 0) lt += static_cast<double>(m) * std::log(q);
    if (n - m > 0) lt += static_cast<double>(n - m) * std::log1p(-q);
    return lt;
}

} // namespace

DetectionChain DetectionChain::infinite(double transmissivity,
                                        double efficiency, double dark_mean) {
    check_unit_interval(transmissivity, "transmissivity");
    check_unit_interval(efficiency, "efficiency");
    if (!(dark_mean >= 0.0) || !std::isfinite(dark_mean))
        throw validation_error("dark-count mean must be finite and >= 0");
    return DetectionChain(true, 0, transmissivity * efficiency, dark_mean);
}

DetectionChain DetectionChain::finite(std::size_t pixel_count,
                                      double transmissivity, double efficiency,
                                      double dark_prob) {
    if (pixel_count == 0)
        throw validation_error("pixel count must be positive");
    check_unit_interval(transmissivity, "transmissivity");
    check_unit_interval(efficiency, "efficiency");
    check_unit_interval(dark_prob, "dark probability", /*open_top=*/true);
    return DetectionChain(false, pixel_count, transmissivity * efficiency,
                          dark_prob);
}

std::size_t DetectionChain::pixel_count() const {
    if (infinite_)
        throw validation_error("pixel count undefined in the infinite mode");
    return pixels_;
}

double k_coeff_infinite(std::size_t c, std::size_t n, double t_eta,
                        double dark_mean) {
    check_unit_interval(t_eta, "T*eta");
    if (!(dark_mean >= 0.0) || !std::isfinite(dark_mean))
        throw validation_error("dark-count mean must be finite and >= 0");
    auto lf = log_factorial_table(std::max(c, n) + 1);
    return kinf_terms(c, n, t_eta, dark_mean, lf);
}

double k_coeff_finite(std::size_t c, std::size_t n, std::size_t pixel_count,
                      double t_eta, double dark_prob) {
    if (pixel_count == 0)
        throw validation_error("pixel count must be positive");
    if (c > pixel_count)
        throw validation_error("click count exceeds detector count");
    check_unit_interval(t_eta, "T*eta");
    check_unit_interval(dark_prob, "dark probability", /*open_top=*/true);

    auto lf = log_factorial_table(std::max(n, pixel_count) + 1);
    auto occ = occupancy_rows(pixel_count, n);

    CompensatedSum acc;
    for (std::size_t m = 0; m <= n; ++m) {
        double pb = std::exp(binomial_log_pmf(n, m, t_eta, lf));
        if (pb == 0.0)
            continue;
        CompensatedSum inner;
        std::size_t u_max = std::min(m, c);
        for (std::size_t u = 0; u <= u_max; ++u) {
            double o = u < occ[m].size() ? occ[m][u] : 0.0;
            if (o == 0.0)
                continue;
            inner.add(o * dark_completion(c, u, pixel_count, dark_prob, lf));
        }
        acc.add(pb * inner.value());
    }
    return acc.value();
}

double exact_multidetector_prob(std::size_t n, const std::vector<bool>& clicked,
                                const std::vector<DetectorSpec>& detectors,
                                double transmissivity) {
    if (clicked.size() != detectors.size())
        throw validation_error("clicked mask and detector list differ in size");
    if (n > 20 || detectors.size() > 8)
        throw validation_error(
            "exact enumeration refused: n <= 20 and <= 8 detectors only");
    check_unit_interval(transmissivity, "transmissivity");

    double routing_total = 0.0;
    for (const DetectorSpec& d : detectors) {
        check_unit_interval(d.amplitude_sq, "|t|^2");
        check_unit_interval(d.efficiency, "efficiency");
        check_unit_interval(d.dark, "dark probability");
        routing_total += d.amplitude_sq;
    }
    if (routing_total > 1.0 + 1e-12)
        throw validation_error("splitting ratios sum above 1");

    // per-photon probability of a registered detection at detector i
    std::vector<double> p_det(detectors.size());
    double p_any = 0.0;
    for (std::size_t i = 0; i < detectors.size(); ++i) {
        p_det[i] = transmissivity * detectors[i].amplitude_sq *
                   detectors[i].efficiency;
        p_any += p_det[i];
    }
    double p_none = std::max(0.0, 1.0 - p_any);

    // binomial coefficients up to n, exact in double
    std::vector<std::vector<double>> choose(n + 1);
    for (std::size_t r = 0; r <= n; ++r) {
        choose[r].assign(r + 1, 1.0);
        for (std::size_t k = 1; k < r; ++k)
            choose[r][k] = choose[r - 1][k - 1] + choose[r - 1][k];
    }

    double total = 0.0;
    // distribute photons detector by detector; undetected remainder at
    // the end; click constraints prune the recursion
    std::function<void(std::size_t, std::size_t, double)> distribute =
        [&](std::size_t i, std::size_t left, double coef) {
            if (coef == 0.0)
                return;
            if (i == detectors.size()) {
                total += coef * std::pow(p_none, static_cast<double>(left));
                return;
            }
            // no detected photon here: a clicked detector needs a dark
            // count, an unclicked one must additionally stay dark
            double idle = clicked[i] ? detectors[i].dark
                                     : 1.0 - detectors[i].dark;
            distribute(i + 1, left, coef * idle);
            if (clicked[i]) {
                double pm = 1.0;
                for (std::size_t m = 1; m <= left; ++m) {
                    pm *= p_det[i];
                    distribute(i + 1, left - m, coef * choose[left][m] * pm);
                }
            }
        };
    distribute(0, n, 1.0);
    return total;
}

std::vector<double> detection_kernel(const DetectionChain& chain,
                                     std::size_t c_max, std::size_t n_max) {
    std::vector<double> kernel((c_max + 1) * (n_max + 1));
    if (chain.infinite_pixels()) {
        auto lf = log_factorial_table(std::max(c_max, n_max) + 1);
        for (std::size_t c = 0; c <= c_max; ++c)
            for (std::size_t n = 0; n <= n_max; ++n)
                kernel[c * (n_max + 1) + n] =
                    kinf_terms(c, n, chain.t_eta(), chain.dark(), lf);
        return kernel;
    }

    std::size_t pixels = chain.pixel_count();
    if (c_max > pixels)
        throw validation_error("c_max exceeds detector count");
    auto lf = log_factorial_table(std::max(n_max, pixels) + 1);
    auto occ = occupancy_rows(pixels, n_max);

    // dark-completion mixture per (photon count m, click count c)
    std::vector<double> a((n_max + 1) * (c_max + 1), 0.0);
    for (std::size_t m = 0; m <= n_max; ++m)
        for (std::size_t c = 0; c <= c_max; ++c) {
            CompensatedSum inner;
            std::size_t u_max = std::min(m, c);
            for (std::size_t u = 0; u <= u_max; ++u) {
                double o = u < occ[m].size() ? occ[m][u] : 0.0;
                if (o != 0.0)
                    inner.add(o * dark_completion(c, u, pixels, chain.dark(), lf));
            }
            a[m * (c_max + 1) + c] = inner.value();
        }

    for (std::size_t n = 0; n <= n_max; ++n) {
        std::vector<double> pb(n + 1);
        for (std::size_t m = 0; m <= n; ++m)
            pb[m] = std::exp(binomial_log_pmf(n, m, chain.t_eta(), lf));
        for (std::size_t c = 0; c <= c_max; ++c) {
            CompensatedSum acc;
            for (std::size_t m = 0; m <= n; ++m)
                acc.add(pb[m] * a[m * (c_max + 1) + c]);
            kernel[c * (n_max + 1) + n] = acc.value();
        }
    }
    return kernel;
}

std::size_t default_c_max(const DetectionChain& chain, std::size_t n_max,
                          double tail_tol) {
    if (!(tail_tol > 0.0))
        throw validation_error("tail tolerance must be positive");
    if (!chain.infinite_pixels())
        return chain.pixel_count();

    // worst case over n <= n_max is n = n_max (stochastically largest)
    auto lf = log_factorial_table(n_max + 2);
    CompensatedSum cum;
    std::size_t c = 0;
    for (;; ++c) {
        if (lf.size() <= std::max(c, n_max) + 1)
            lf = log_factorial_table(std::max(c, n_max) + 2);
        cum.add(kinf_terms(c, n_max, chain.t_eta(), chain.dark(), lf));
        if (1.0 - cum.value() < tail_tol)
            return c;
        if (c > n_max + 100000)
            throw degeneracy_error("click tail fails to converge");
    }
}

double CoincidenceDistribution::probability(std::size_t c_s,
                                            std::size_t c_i) const {
    double v = at(c_s, c_i);
    if (shots && *shots > 0)
        return v / static_cast<double>(*shots);
    return v;
}

JointPnd CoincidenceDistribution::as_joint() const {
    std::vector<double> probs(freqs.size());
    CompensatedSum mass;
    double norm = (shots && *shots > 0) ? static_cast<double>(*shots) : 1.0;
    for (std::size_t k = 0; k < freqs.size(); ++k) {
        probs[k] = freqs[k] / norm;
        mass.add(probs[k]);
    }
    double tail = 1.0 - mass.value();
    return JointPnd(std::move(probs), c_max_s, c_max_i,
                    tail < 0.0 ? 0.0 : tail);
}

CoincidenceDistribution forward_map(const JointPnd& p,
                                    const DetectionChain& chain_s,
                                    const DetectionChain& chain_i,
                                    std::optional<std::size_t> c_max_s,
                                    std::optional<std::size_t> c_max_i) {
    std::size_t cs = c_max_s ? *c_max_s : default_c_max(chain_s, p.n_max_s());
    std::size_t ci = c_max_i ? *c_max_i : default_c_max(chain_i, p.n_max_i());

    std::vector<double> ks = detection_kernel(chain_s, cs, p.n_max_s());
    std::vector<double> ki = detection_kernel(chain_i, ci, p.n_max_i());

    // per-photon-number click mass escaping the histogram
    auto column_tail = [](const std::vector<double>& k, std::size_t c_top,
                          std::size_t n_top) {
        std::vector<double> tail(n_top + 1);
        for (std::size_t n = 0; n <= n_top; ++n) {
            CompensatedSum col;
            for (std::size_t c = 0; c <= c_top; ++c)
                col.add(k[c * (n_top + 1) + n]);
            tail[n] = std::max(0.0, 1.0 - col.value());
        }
        return tail;
    };
    std::vector<double> tail_s = column_tail(ks, cs, p.n_max_s());
    std::vector<double> tail_i = column_tail(ki, ci, p.n_max_i());
    CompensatedSum unmapped;
    for (std::size_t a = 0; a < p.rows(); ++a)
        for (std::size_t b = 0; b < p.cols(); ++b)
            unmapped.add(p(a, b) *
                         (tail_s[a] + tail_i[b] - tail_s[a] * tail_i[b]));
    if (unmapped.value() > 1e-9) {
        std::ostringstream msg;
        msg << "c_max too small: " << unmapped.value()
            << " of the mapped mass falls outside the histogram";
        throw validation_error(msg.str());
    }

    // f = K_S p K_I^T, fixed summation order for reproducibility
    std::size_t nr = p.rows(), nc = p.cols();
    std::vector<double> m1((cs + 1) * nc, 0.0);
    for (std::size_t c = 0; c <= cs; ++c)
        for (std::size_t b = 0; b < nc; ++b) {
            CompensatedSum acc;
            for (std::size_t a = 0; a < nr; ++a)
                acc.add(ks[c * nr + a] * p(a, b));
            m1[c * nc + b] = acc.value();
        }
    CoincidenceDistribution f;
    f.c_max_s = cs;
    f.c_max_i = ci;
    f.origin = CoincidenceDistribution::Origin::analytic;
    f.freqs.assign((cs + 1) * (ci + 1), 0.0);
    for (std::size_t c = 0; c <= cs; ++c)
        for (std::size_t e = 0; e <= ci; ++e) {
            CompensatedSum acc;
            for (std::size_t b = 0; b < nc; ++b)
                acc.add(m1[c * nc + b] * ki[e * nc + b]);
            f.freqs[c * (ci + 1) + e] = acc.value();
        }
    return f;
}

DetectedStatistics detected_statistics(const CoincidenceDistribution& f) {
    JointPnd j = f.as_joint();
    DetectedStatistics out{};
    out.covariance = covariance(j);
    auto [ms, mi] = marginals(j);
    out.s_signal = s_coefficient(ms);
    out.s_idler = s_coefficient(mi);
    out.s_sum = s_coefficient(sum_distribution(j));
    return out;
}

} // namespace twinbeam
