#pragma once

#include <string>

#include "twinbeam/detection.hpp"
#include "twinbeam/em.hpp"
#include "twinbeam/intensity.hpp"
#include "twinbeam/joint_pnd.hpp"

namespace twinbeam {

// Every artifact travels in the same envelope,
//   {"kind": "...", "version": 1, "payload": {...}},
// so pipeline stages compose through files and refuse each other's
// outputs with a clear message instead of misparsing them.
inline constexpr int kEnvelopeVersion = 1;

std::string to_json(const JointPnd& p);
std::string to_json(const CoincidenceDistribution& f);
std::string to_json(const EmResult& r);
std::string to_json(const IntensityGrid& g);

// Kind string of a serialized envelope, for dispatch before loading.
std::string envelope_kind(const std::string& text);

JointPnd joint_pnd_from_json(const std::string& text);
CoincidenceDistribution coincidence_from_json(const std::string& text);
EmResult em_result_from_json(const std::string& text);
IntensityGrid intensity_grid_from_json(const std::string& text);

// Plotting export: header row carries the W_I axis, first column the
// W_S axis, body the values.
std::string to_csv(const IntensityGrid& g);

// Whole-file helpers; failures surface as io_error.
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

} // namespace twinbeam
