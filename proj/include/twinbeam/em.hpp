#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "twinbeam/detection.hpp"
#include "twinbeam/joint_pnd.hpp"

namespace twinbeam {

struct EmConfig {
    // reconstruction support; 0 selects the c_max/(T*eta) heuristic
    std::size_t n_max_s = 0;
    std::size_t n_max_i = 0;
    std::size_t max_iterations = 10000;
    // relative KL decrease per iteration below which iteration stops
    double stop_tolerance = 1e-9;
    std::optional<JointPnd> init; // uniform when absent
};

struct EmResult {
    JointPnd rho;
    // KL(f || model) after each completed update
    std::vector<double> kl_trace;
    std::size_t iterations_run = 0;
    bool converged = false;
};

// KL(f || f_model) over a common support; +inf when the model assigns
// zero to an observed bin.
double kl_divergence(const CoincidenceDistribution& f,
                     const CoincidenceDistribution& f_model);

// One multiplicative update. Kernels are the per-arm response matrices
// sized (c_max+1) x (n_max+1) matching f and rho.
JointPnd em_step(const JointPnd& rho, const CoincidenceDistribution& f,
                 const std::vector<double>& kernel_s,
                 const std::vector<double>& kernel_i);

EmResult reconstruct(const CoincidenceDistribution& f,
                     const DetectionChain& chain_s,
                     const DetectionChain& chain_i, const EmConfig& cfg = {});

} // namespace twinbeam
