#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "twinbeam/detection.hpp"
#include "twinbeam/errors.hpp"
#include "twinbeam/joint_pnd.hpp"

using namespace twinbeam;
using doctest::Approx;

namespace {

double poisson_pmf(std::size_t n, double mu) {
    if (mu == 0.0)
        return n == 0 ? 1.0 : 0.0;
    return std::exp(static_cast<double>(n) * std::log(mu) - mu -
                    std::lgamma(static_cast<double>(n) + 1.0));
}

// Pascal-triangle binomials, exact in double for the sizes used here.
std::vector<std::vector<double>> pascal(std::size_t top) {
    std::vector<std::vector<double>> ch(top + 1);
    for (std::size_t r = 0; r <= top; ++r) {
        ch[r].assign(r + 1, 1.0);
        for (std::size_t k = 1; k < r; ++k)
            ch[r][k] = ch[r - 1][k - 1] + ch[r - 1][k];
    }
    return ch;
}

// Binomial thinning convolved with Poisson noise, written out term by
// term with plain pow/factorial arithmetic. Safe for small c and n.
double kinf_direct(std::size_t c, std::size_t n, double q, double dark) {
    auto ch = pascal(n);
    double total = 0.0;
    for (std::size_t l = 0; l <= std::min(c, n); ++l) {
        double fact = 1.0;
        for (std::size_t j = 2; j <= c - l; ++j)
            fact *= static_cast<double>(j);
        total += ch[n][l] * std::pow(q, static_cast<double>(l)) *
                 std::pow(1.0 - q, static_cast<double>(n - l)) *
                 std::pow(dark, static_cast<double>(c - l)) *
                 std::exp(-dark) / fact;
    }
    return total;
}

// Inclusion-exclusion form of the N-pixel click kernel. This is the
// textbook expression with the sign fixed so that c = 0 keeps the silent
// probability positive. Usable only at small N before the alternating
// terms start cancelling.
double kfin_alternating(std::size_t c, std::size_t n, std::size_t pixels,
                        double q, double d) {
    auto ch = pascal(std::max(pixels, n));
    double total = 0.0;
    for (std::size_t l = 0; l <= c; ++l) {
        std::size_t silent = pixels - c + l;
        double term = ch[c][l] *
                      std::pow(1.0 - d, static_cast<double>(silent)) *
                      std::pow(1.0 - q * static_cast<double>(silent) /
                                         static_cast<double>(pixels),
                               static_cast<double>(n));
        total += (l % 2 == 0 ? term : -term);
    }
    return ch[pixels][c] * total;
}

std::vector<DetectorSpec> symmetric_arm(std::size_t pixels, double efficiency,
                                        double dark) {
    return std::vector<DetectorSpec>(
        pixels, DetectorSpec{1.0 / static_cast<double>(pixels), efficiency, dark});
}

CoincidenceDistribution standard_forward(const JointPnd& p) {
    const DetectionChain chain = DetectionChain::infinite(1.0, 0.03, 0.1);
    return forward_map(p, chain, chain);
}

} // namespace

TEST_CASE("infinite kernel: noise-only and ideal-detection limits") {
    CHECK(k_coeff_infinite(0, 0, 0.5, 0.1) == Approx(std::exp(-0.1)).epsilon(1e-15));
    CHECK(k_coeff_infinite(0, 0, 0.5, 0.1) ==
          Approx(0.9048374180359596).epsilon(1e-15));
    CHECK(k_coeff_infinite(3, 0, 0.5, 0.1) ==
          Approx(poisson_pmf(3, 0.1)).epsilon(1e-13));

    // perfect efficiency, no noise: every photon is counted
    for (std::size_t n = 0; n <= 12; ++n)
        for (std::size_t c = 0; c <= 14; ++c)
            CHECK(k_coeff_infinite(c, n, 1.0, 0.0) == (c == n ? 1.0 : 0.0));

    // blocked arm: clicks are pure noise regardless of n
    for (std::size_t n : {0u, 5u, 40u})
        for (std::size_t c = 0; c <= 6; ++c)
            CHECK(k_coeff_infinite(c, n, 0.0, 0.3) ==
                  Approx(poisson_pmf(c, 0.3)).epsilon(1e-13));
}

TEST_CASE("infinite kernel: direct summation cross-check and frozen value") {
    CHECK(k_coeff_infinite(1, 20, 0.03, 0.1) ==
          Approx(0.3535625691029796).epsilon(1e-13));
    for (double q : {0.03, 0.4, 0.97})
        for (double dark : {0.0, 0.1, 1.2})
            for (std::size_t n : {0u, 1u, 4u, 11u, 25u})
                for (std::size_t c = 0; c <= 10; ++c)
                    CHECK(k_coeff_infinite(c, n, q, dark) ==
                          Approx(kinf_direct(c, n, q, dark)).epsilon(1e-12));
}

TEST_CASE("infinite kernel: column stochasticity across the parameter sweep") {
    for (double q : {0.0, 0.03, 0.5, 1.0})
        for (double dark : {0.0, 0.1, 1.0}) {
            const DetectionChain chain = DetectionChain::infinite(1.0, q, dark);
            const std::size_t n_top = 100, c_top = 180;
            const std::vector<double> k = detection_kernel(chain, c_top, n_top);
            for (std::size_t n = 0; n <= n_top; ++n) {
                double col = 0.0;
                for (std::size_t c = 0; c <= c_top; ++c) {
                    const double v = k[c * (n_top + 1) + n];
                    CHECK(v >= 0.0);
                    col += v;
                }
                CHECK(col == Approx(1.0).epsilon(1e-10));
            }
        }
}

TEST_CASE("detection kernel matrix agrees with entrywise evaluation") {
    const DetectionChain inf = DetectionChain::infinite(1.0, 0.03, 0.1);
    const std::vector<double> ki = detection_kernel(inf, 6, 30);
    for (std::size_t c = 0; c <= 6; ++c)
        for (std::size_t n : {0u, 1u, 17u, 30u})
            CHECK(ki[c * 31 + n] ==
                  Approx(k_coeff_infinite(c, n, 0.03, 0.1)).epsilon(1e-14));

    const DetectionChain fin = DetectionChain::finite(8, 1.0, 0.3, 0.01);
    const std::vector<double> kf = detection_kernel(fin, 8, 20);
    for (std::size_t c = 0; c <= 8; ++c)
        for (std::size_t n : {0u, 2u, 9u, 20u})
            CHECK(kf[c * 21 + n] ==
                  Approx(k_coeff_finite(c, n, 8, 0.3, 0.01)).epsilon(1e-13));

    CHECK_THROWS_AS(detection_kernel(fin, 9, 5), validation_error);
}

TEST_CASE("finite kernel: single-detector closed form") {
    CHECK(k_coeff_finite(1, 1, 1, 0.3, 0.0) == Approx(0.3).epsilon(1e-15));
    CHECK(k_coeff_finite(0, 1, 1, 0.3, 0.0) == Approx(0.7).epsilon(1e-15));
    for (double q : {0.0, 0.3, 1.0})
        for (double d : {0.0, 0.2})
            for (std::size_t n = 0; n <= 50; ++n) {
                const double miss =
                    std::pow(1.0 - q, static_cast<double>(n)) * (1.0 - d);
                CHECK(k_coeff_finite(0, n, 1, q, d) ==
                      Approx(miss).epsilon(1e-13));
                CHECK(k_coeff_finite(1, n, 1, q, d) ==
                      Approx(1.0 - miss).epsilon(1e-13));
            }
}

TEST_CASE("finite kernel: matches the alternating-sum form at small N") {
    for (std::size_t pixels = 1; pixels <= 4; ++pixels)
        for (double q : {0.0, 0.3, 0.85, 1.0})
            for (double d : {0.0, 0.01, 0.15})
                for (std::size_t n = 0; n <= 6; ++n)
                    for (std::size_t c = 0; c <= pixels; ++c)
                        CHECK(k_coeff_finite(c, n, pixels, q, d) ==
                              Approx(kfin_alternating(c, n, pixels, q, d))
                                  .epsilon(1e-10)
                                  .scale(1.0));

    // moderate N: the alternating form cancels through terms of size
    // C(20,10) ~ 2e5 and bottoms out near 5e-8 of absolute noise (tail
    // entries whose true mass is ~1e-20 come back as ~1e-8, sometimes
    // negative), so it can only be held to its own noise floor
    for (std::size_t n = 0; n <= 40; n += 5)
        for (std::size_t c = 0; c <= 20; ++c)
            CHECK(k_coeff_finite(c, n, 20, 0.3, 0.005) ==
                  Approx(kfin_alternating(c, n, 20, 0.3, 0.005))
                      .epsilon(1e-7)
                      .scale(1.0));
}

TEST_CASE("finite kernel: column stochasticity and positivity") {
    for (std::size_t pixels : {1u, 2u, 8u})
        for (double q : {0.0, 0.03, 0.5, 1.0})
            for (double d : {0.0, 0.1 / static_cast<double>(pixels), 0.5})
                for (std::size_t n = 0; n <= 100; ++n) {
                    double col = 0.0;
                    for (std::size_t c = 0; c <= pixels; ++c) {
                        const double v = k_coeff_finite(c, n, pixels, q, d);
                        CHECK(v >= 0.0);
                        col += v;
                    }
                    CHECK(col == Approx(1.0).epsilon(1e-10));
                }
}

TEST_CASE("finite kernel converges to the infinite limit at N = 10^4") {
    const std::size_t pixels = 10000;
    const double q = 0.03, noise = 0.1;
    for (std::size_t n = 0; n <= 30; ++n)
        for (std::size_t c = 0; c <= 10; ++c) {
            const double fin =
                k_coeff_finite(c, n, pixels, q, noise / static_cast<double>(pixels));
            const double inf = k_coeff_infinite(c, n, q, noise);
            CHECK(std::abs(fin - inf) < 1e-3);
        }
}

TEST_CASE("brute-force multidetector probability: elementary cases") {
    CHECK(exact_multidetector_prob(0, {false}, symmetric_arm(1, 0.9, 0.0), 1.0) ==
          1.0);
    CHECK(exact_multidetector_prob(1, {true}, symmetric_arm(1, 0.37, 0.0), 1.0) ==
          Approx(0.37).epsilon(1e-15));
    // two photons, two balanced detectors, both clicking: only the
    // split-across-outputs assignment can produce two clicks
    CHECK(exact_multidetector_prob(2, {true, true}, symmetric_arm(2, 0.5, 0.0),
                                   1.0) == Approx(0.125).epsilon(1e-14));
}

TEST_CASE("brute-force oracle reproduces the finite kernel at small N") {
    struct Setup {
        double q, d, transmissivity;
    };
    const std::vector<Setup> setups = {
        {0.3, 0.01, 1.0}, {0.3, 0.01, 0.75}, {0.85, 0.15, 1.0}, {1.0, 0.0, 1.0}};
    for (const Setup& s : setups)
        for (std::size_t pixels = 1; pixels <= 4; ++pixels) {
            const auto arm = symmetric_arm(pixels, s.q / s.transmissivity, s.d);
            auto ch = pascal(pixels);
            for (std::size_t n = 0; n <= 6; ++n)
                for (std::size_t c = 0; c <= pixels; ++c) {
                    std::vector<bool> clicked(pixels, false);
                    for (std::size_t i = 0; i < c; ++i)
                        clicked[i] = true;
                    const double brute =
                        ch[pixels][c] * exact_multidetector_prob(
                                            n, clicked, arm, s.transmissivity);
                    CHECK(brute == Approx(k_coeff_finite(c, n, pixels, s.q, s.d))
                                       .epsilon(1e-10)
                                       .scale(1.0));
                }
        }
}

TEST_CASE("brute-force oracle refuses oversize inputs") {
    const auto arm = symmetric_arm(2, 0.5, 0.0);
    CHECK_THROWS_AS(exact_multidetector_prob(21, {true, false}, arm, 1.0),
                    validation_error);
    CHECK_THROWS_AS(
        exact_multidetector_prob(2, std::vector<bool>(9, false),
                                 symmetric_arm(9, 0.5, 0.0), 1.0),
        validation_error);
    CHECK_THROWS_AS(exact_multidetector_prob(2, {true}, arm, 1.0),
                    validation_error);
    std::vector<DetectorSpec> overweight = {{0.7, 0.5, 0.0}, {0.7, 0.5, 0.0}};
    CHECK_THROWS_AS(exact_multidetector_prob(2, {true, true}, overweight, 1.0),
                    validation_error);
}

TEST_CASE("parameter validation across constructors and kernels") {
    CHECK_THROWS_AS(DetectionChain::infinite(-0.1, 0.5, 0.0), validation_error);
    CHECK_THROWS_AS(DetectionChain::infinite(1.1, 0.5, 0.0), validation_error);
    CHECK_THROWS_AS(DetectionChain::infinite(1.0, 2.0, 0.0), validation_error);
    CHECK_THROWS_AS(DetectionChain::infinite(1.0, 0.5, -0.2), validation_error);
    CHECK_THROWS_AS(DetectionChain::finite(0, 1.0, 0.5, 0.0), validation_error);
    CHECK_THROWS_AS(DetectionChain::finite(4, 1.0, 0.5, 1.0), validation_error);
    CHECK_THROWS_AS(DetectionChain::finite(4, 1.0, 0.5, -0.1), validation_error);

    const DetectionChain inf = DetectionChain::infinite(0.9, 0.5, 0.1);
    CHECK(inf.t_eta() == Approx(0.45).epsilon(1e-15));
    CHECK_THROWS_AS(inf.pixel_count(), validation_error);
    CHECK(DetectionChain::finite(6, 0.9, 0.5, 0.0).pixel_count() == 6);

    CHECK_THROWS_AS(k_coeff_infinite(0, 0, 1.5, 0.1), validation_error);
    CHECK_THROWS_AS(k_coeff_infinite(0, 0, 0.5, -0.1), validation_error);
    CHECK_THROWS_AS(k_coeff_finite(3, 1, 2, 0.5, 0.0), validation_error);
    CHECK_THROWS_AS(k_coeff_finite(0, 1, 0, 0.5, 0.0), validation_error);
}

TEST_CASE("default click cutoff: frozen standard case and limits") {
    const DetectionChain chain = DetectionChain::infinite(1.0, 0.03, 0.1);
    CHECK(default_c_max(chain, 59) == 14);
    // looser budget can only shrink the histogram
    CHECK(default_c_max(chain, 59, 1e-6) <= 14);
    CHECK(default_c_max(DetectionChain::infinite(1.0, 0.0, 0.0), 50) == 0);
    CHECK(default_c_max(DetectionChain::infinite(1.0, 1.0, 0.0), 7) == 7);
    CHECK(default_c_max(DetectionChain::finite(8, 1.0, 0.5, 0.1), 40) == 8);
    CHECK_THROWS_AS(default_c_max(chain, 10, 0.0), validation_error);
}

TEST_CASE("forward map: vacuum input") {
    const JointPnd vac = make_poisson_pairs(0.0);

    const DetectionChain quiet = DetectionChain::infinite(1.0, 0.5, 0.0);
    const CoincidenceDistribution silent = forward_map(vac, quiet, quiet);
    CHECK(silent.c_max_s == 0);
    CHECK(silent.c_max_i == 0);
    CHECK(silent.at(0, 0) == Approx(1.0).epsilon(1e-14));
    CHECK(silent.origin == CoincidenceDistribution::Origin::analytic);
    CHECK(!silent.shots.has_value());

    // with dark counts the histogram factorizes into two Poissons
    const DetectionChain noisy = DetectionChain::infinite(1.0, 0.5, 0.1);
    const CoincidenceDistribution f = forward_map(vac, noisy, noisy);
    for (std::size_t cs = 0; cs <= f.c_max_s; ++cs)
        for (std::size_t ci = 0; ci <= f.c_max_i; ++ci)
            CHECK(f.at(cs, ci) ==
                  Approx(poisson_pmf(cs, 0.1) * poisson_pmf(ci, 0.1))
                      .epsilon(1e-12));
}

TEST_CASE("forward map: mass bookkeeping and truncation rejection") {
    const JointPnd p = make_poisson_pairs(20.0);
    const CoincidenceDistribution f = standard_forward(p);
    const double mass = std::accumulate(f.freqs.begin(), f.freqs.end(), 0.0);
    CHECK(mass <= 1.0 + 1e-12);
    CHECK(mass > 1.0 - 2e-9);
    for (double v : f.freqs)
        CHECK(v >= 0.0);

    const DetectionChain chain = DetectionChain::infinite(1.0, 0.03, 0.1);
    CHECK_THROWS_AS(forward_map(p, chain, chain, std::size_t{0}, std::size_t{14}),
                    validation_error);
}

TEST_CASE("detected statistics: Poisson pairs through the standard chain") {
    const CoincidenceDistribution f = standard_forward(make_poisson_pairs(20.0));
    const DetectedStatistics st = detected_statistics(f);
    // thinned marginals stay Poissonian, the cross covariance survives
    CHECK(st.s_signal == Approx(1.0).epsilon(1e-8));
    CHECK(st.s_idler == Approx(1.0).epsilon(1e-8));
    CHECK(st.covariance == Approx(0.025714285714285714).epsilon(1e-8));
    CHECK(st.s_sum == Approx(1.0183673469387755).epsilon(1e-8));
}

TEST_CASE("detected statistics: Gaussian pairs through the standard chain") {
    const CoincidenceDistribution f = standard_forward(make_gaussian_pairs(20.0));
    const DetectedStatistics st = detected_statistics(f);
    CHECK(st.s_signal == Approx(85.0 / 49.0).epsilon(1e-7));
    CHECK(st.s_idler == Approx(85.0 / 49.0).epsilon(1e-7));
    CHECK(st.s_sum == Approx(859.0 / 490.0).epsilon(1e-7));
    CHECK(st.covariance == Approx(0.378 / 1.06).epsilon(1e-7));
}

TEST_CASE("detected statistics: independent noise shows no covariance") {
    const JointPnd vac = make_poisson_pairs(0.0);
    const DetectionChain noisy = DetectionChain::infinite(1.0, 0.5, 0.1);
    const DetectedStatistics st = detected_statistics(forward_map(vac, noisy, noisy));
    CHECK(std::abs(st.covariance) < 1e-10);

    const DetectionChain quiet = DetectionChain::infinite(1.0, 0.5, 0.0);
    CHECK_THROWS_AS(detected_statistics(forward_map(vac, quiet, quiet)),
                    degeneracy_error);
}

TEST_CASE("detection cannot raise the photon-number correlation") {
    struct Case {
        JointPnd p;
        double q, dark;
    };
    const std::vector<Case> cases = {
        {make_poisson_pairs(1.0), 0.3, 0.0},
        {make_poisson_pairs(5.0), 0.8, 0.1},
        {make_gaussian_pairs(2.0), 0.3, 0.1},
        {make_gaussian_pairs(5.0), 0.9, 0.0},
    };
    for (const Case& c : cases) {
        const DetectionChain chain = DetectionChain::infinite(1.0, c.q, c.dark);
        const CoincidenceDistribution f = forward_map(c.p, chain, chain);
        const double before = covariance(c.p);
        const double after = covariance(f.as_joint());
        CHECK(before == Approx(1.0).epsilon(1e-9));
        CHECK(after <= before + 1e-12);
        CHECK(after > 0.0);
    }
}

TEST_CASE("coincidence histograms carry counts and normalize on demand") {
    CoincidenceDistribution f;
    f.c_max_s = 1;
    f.c_max_i = 1;
    f.freqs = {6.0, 2.0, 1.0, 1.0};
    f.origin = CoincidenceDistribution::Origin::monte_carlo;
    f.shots = 10;
    CHECK(f.probability(0, 0) == Approx(0.6).epsilon(1e-15));
    CHECK(f.probability(1, 1) == Approx(0.1).epsilon(1e-15));

    const JointPnd j = f.as_joint();
    CHECK(j(0, 0) == Approx(0.6).epsilon(1e-15));
    CHECK(j(1, 0) == Approx(0.1).epsilon(1e-15));
    CHECK(j.tail_mass() == 0.0);
}
