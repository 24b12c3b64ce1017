#pragma once

#include <cstddef>
#include <vector>

#include "twinbeam/joint_pnd.hpp"

namespace twinbeam {

// Field-operator ordering parameter: -1 antinormal, 0 symmetric.
// s = 1 (normal ordering) needs generalized functions and is rejected.
struct OrderingParam {
    double s;
    explicit OrderingParam(double value);
};

// Sampled joint integrated-intensity quasi-distribution P(W_S, W_I, s).
struct IntensityGrid {
    std::vector<double> w_s_axis;
    std::vector<double> w_i_axis;
    std::vector<double> values; // row-major, W_S index major
    double s = 0.0;
    // grid points whose series collapsed by more than 8 digits against
    // the largest contributing term
    std::size_t cancellation_warnings = 0;

    double at(std::size_t i, std::size_t j) const {
        return values[i * w_i_axis.size() + j];
    }
};

struct QuasiDiagnostics {
    double largest_term = 0.0; // magnitude, prefactor included
    bool cancellation = false; // |result| < 1e-8 * largest_term
};

// Laguerre polynomial L_n(x) by the three-term recurrence; internally
// sign/log-magnitude tracked so large n*x cannot overflow mid-recurrence.
double laguerre_eval(std::size_t n, double x);

// Laguerre-series evaluation of P(W_S, W_I, s); negative results are
// physical (nonclassicality), catastrophic cancellation is reported
// through the optional diagnostics.
double quasi_distribution(const JointPnd& rho, OrderingParam s, double w_s,
                          double w_i, QuasiDiagnostics* diag = nullptr);

// s = -1 limit: mixture of Poisson kernels, always nonnegative.
double antinormal_closed_form(const JointPnd& rho, double w_s, double w_i);

// Uniform [0, w_max]^2 evaluation. Same series as quasi_distribution,
// organized as factored per-arm passes so dense supports stay tractable.
IntensityGrid grid_scan(const JointPnd& rho, OrderingParam s, double w_max,
                        std::size_t points_per_axis);

struct NegativityReport {
    double min_value;
    double w_s_at_min;
    double w_i_at_min;
    double negative_fraction;
};
NegativityReport negativity_report(const IntensityGrid& grid);

// Composite trapezoid quadrature over the full grid.
double trapezoid_integral(const IntensityGrid& grid);

// 2.5 * (<n_S> + <n_I>), floored at one photon unit so degenerate
// (vacuum-like) inputs still get a usable window.
double default_w_max(const JointPnd& rho);

inline constexpr std::size_t kDefaultGridPoints = 201;

} // namespace twinbeam
