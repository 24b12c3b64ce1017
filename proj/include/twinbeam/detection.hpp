#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "twinbeam/joint_pnd.hpp"

namespace twinbeam {

// Per-arm apparatus: loss beamsplitter with intensity transmissivity T,
// detectors of quantum efficiency eta, and either a finite symmetric
// multiport of N pixels (per-detector dark probability d) or the
// infinite-pixel limit (total dark-count mean D). T and eta enter the
// response only as their product; both are accepted for traceability.
class DetectionChain {
public:
    static DetectionChain infinite(double transmissivity, double efficiency,
                                   double dark_mean);
    static DetectionChain finite(std::size_t pixel_count, double transmissivity,
                                 double efficiency, double dark_prob);

    bool infinite_pixels() const noexcept { return infinite_; }
    double t_eta() const noexcept { return t_eta_; }
    // Total dark mean D in the infinite mode, per-detector probability d
    // in the finite mode.
    double dark() const noexcept { return dark_; }
    std::size_t pixel_count() const; // finite mode only

private:
    DetectionChain(bool infinite, std::size_t pixels, double t_eta, double dark)
        : infinite_(infinite), pixels_(pixels), t_eta_(t_eta), dark_(dark) {}

    bool infinite_;
    std::size_t pixels_;
    double t_eta_;
    double dark_;
};

// Detected coincidence histogram f(c_S, c_I). Analytic origins store
// probabilities; empirical origins store integer counts (as exact
// doubles) with the shot count carried for normalization.
struct CoincidenceDistribution {
    enum class Origin { analytic, monte_carlo, file };

    std::vector<double> freqs; // row-major (c_max_s+1) x (c_max_i+1)
    std::size_t c_max_s = 0;
    std::size_t c_max_i = 0;
    Origin origin = Origin::analytic;
    std::optional<std::uint64_t> shots;

    std::size_t rows() const noexcept { return c_max_s + 1; }
    std::size_t cols() const noexcept { return c_max_i + 1; }
    double at(std::size_t c_s, std::size_t c_i) const {
        return freqs[c_s * cols() + c_i];
    }
    // Probability view: counts are divided by the shot total.
    double probability(std::size_t c_s, std::size_t c_i) const;
    // Normalized copy usable by the moment machinery.
    JointPnd as_joint() const;
};

// Detection kernel in the infinite-pixel limit: a binomial thinning of n
// photons with success T*eta, convolved with Poisson(D) dark counts.
double k_coeff_infinite(std::size_t c, std::size_t n, double t_eta,
                        double dark_mean);

// Detection kernel of the N-pixel symmetric multiport with per-detector
// dark probability d. Evaluated through the pixel-occupancy expansion
// (all positive terms); the textbook alternating sum is equivalent but
// loses all precision for large N.
double k_coeff_finite(std::size_t c, std::size_t n, std::size_t pixel_count,
                      double t_eta, double dark_prob);

// Brute-force oracle for small systems: probability that exactly the
// detectors flagged in `clicked` fire when n photons enter an arm with
// per-detector splitting ratios, efficiencies and dark probabilities.
struct DetectorSpec {
    double amplitude_sq; // |t_i|^2, the routing probability
    double efficiency;
    double dark;
};
double exact_multidetector_prob(std::size_t n, const std::vector<bool>& clicked,
                                const std::vector<DetectorSpec>& detectors,
                                double transmissivity);

// Response matrix K(c, n) for c = 0..c_max, n = 0..n_max, row-major with
// row index c. Columns sum to 1 up to the c_max truncation.
std::vector<double> detection_kernel(const DetectionChain& chain,
                                     std::size_t c_max, std::size_t n_max);

// Smallest c_max whose neglected click mass is below tail_tol for any
// photon number up to n_max.
std::size_t default_c_max(const DetectionChain& chain, std::size_t n_max,
                          double tail_tol = 1e-9);

// f(c_S, c_I) = sum_n p(n_S, n_I) K_S(c_S, n_S) K_I(c_I, n_I).
// Throws when the requested c_max leaves more than 1e-9 of the mapped
// mass outside the histogram.
CoincidenceDistribution forward_map(const JointPnd& p,
                                    const DetectionChain& chain_s,
                                    const DetectionChain& chain_i,
                                    std::optional<std::size_t> c_max_s = {},
                                    std::optional<std::size_t> c_max_i = {});

struct DetectedStatistics {
    double covariance;
    double s_signal;
    double s_idler;
    double s_sum;
};
DetectedStatistics detected_statistics(const CoincidenceDistribution& f);

} // namespace twinbeam
