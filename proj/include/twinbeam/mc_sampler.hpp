#pragma once

#include <cstdint>
#include <utility>

#include "twinbeam/detection.hpp"
#include "twinbeam/joint_pnd.hpp"

namespace twinbeam {

// Stochastic realization of the apparatus: per pulse, draw a photon
// pair number, thin each arm through loss and efficiency, route onto
// the multiport (or the infinite-pixel limit) and add dark counts.
struct SimulationConfig {
    JointPnd source;
    DetectionChain chain_s;
    DetectionChain chain_i;
    std::uint64_t shots = 0;
    std::uint64_t seed = 0;
};

struct SimulationStats {
    // times the inverse-CDF draw landed in the truncated source tail
    // (assigned to the largest index pair)
    std::uint64_t tail_draws = 0;
};

// Deterministic for a fixed seed regardless of thread count: each shot
// consumes an independent counter-based random stream keyed on
// (seed, shot index). threads = 0 picks TWINBEAM_THREADS or the
// hardware concurrency.
CoincidenceDistribution simulate(const SimulationConfig& cfg,
                                 unsigned threads = 0,
                                 SimulationStats* stats = nullptr);

// The counts simulate() would accumulate for one specific shot.
std::pair<std::uint32_t, std::uint32_t>
per_shot_counts(const SimulationConfig& cfg, std::uint64_t shot_index);

} // namespace twinbeam
