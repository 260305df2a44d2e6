// SPDX-License-Identifier: Apache-2.0
//
// Randomized invariant suites: geometric roundtrip of the grid transforms
// and finite-difference verification of the full model gradient at 64-bit.
#pragma once

#include <cstdint>
#include <string>

#include "gridcast/gradcheck.hpp"
#include "gridcast/predictor.hpp"
#include "gridcast/record.hpp"

namespace gridcast {

struct RoundtripResult {
  int frames = 0;
  double mean_mae = 0.0;
  double worst_mae = 0.0;
  bool pass = false;
};

// Mean interior |oot(iot2(x,d),d) - x| over random simulator frames and
// random deltas with |dtheta| <= 0.3 rad and |dp| <= 10 px.
RoundtripResult roundtrip_suite(int frames, std::uint64_t seed, double tol = 0.02, int grid = 64,
                                int interior_margin = 12);

// Central finite differences against the analytic gradient of the k-step
// training loss of a small model, at 64-bit. With k >= 2 the first step
// draws the unshared code from the posterior and the second from the prior,
// so both sampling paths (and the warped feedback) are covered. `stride`
// subsamples parameter coordinates deterministically.
ad::GradCheckReport model_grad_check(const SequenceRecord& rec, const PredictorConfig& cfg, int k, double fd_step,
                                     double tol, int stride, std::uint64_t seed);

// Record-level validation used by the check command: structural invariants,
// manifest round trip, and measurement replay. Returns a list of failures
// (empty means pass).
std::vector<std::string> check_record(const std::string& dir);

}  // namespace gridcast
