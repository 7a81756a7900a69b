#pragma once

// Finite-difference check of the full training loss of a TieNet model,
// reported per parameter group.

#include <iosfwd>
#include <string>
#include <vector>

#include "tienet/model.hpp"

namespace tienet {

// The smallest configuration that exercises every code path: D = 2, C = 3,
// d_h = 4, s = 5, r = 2, V = 7.
ModelConfig tiny_config(Mode mode);

struct GroupCheck {
  Mode mode = Mode::kImageReport;
  std::string group;          // parameter name prefix, e.g. "aete"
  std::size_t coordinates = 0;
  double max_error = 0.0;     // worst per-coordinate relative error
  double norm_error = 0.0;    // |a - n| / max(1e-8, |a| + |n|) over the whole group
  bool passed = false;
};

struct GradcheckOptions {
  double h = 1e-6;
  double tolerance = 1e-4;
  double jitter = 0.2;  // uniform noise added to every initial parameter
  std::uint64_t seed = 7;
  std::vector<Mode> modes = {Mode::kReport, Mode::kImageReport, Mode::kImageGenReport, Mode::kImageBaseline};
};

// A group passes when its norm error is within tolerance; the per-coordinate
// maximum is reported alongside.
std::vector<GroupCheck> check_model_gradients(const GradcheckOptions& opt = {});

void write_gradcheck_table(std::ostream& out, const std::vector<GroupCheck>& rows);

}  // namespace tienet
