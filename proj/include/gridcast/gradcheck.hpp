// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference verification of tape gradients, 64-bit only.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gridcast/autodiff.hpp"

namespace gridcast::ad {

struct ParamBlock {
  std::string name;
  Shape shape;
  std::vector<double> value;
};

struct GradCheckResult {
  // One forward/backward evaluation of the function under test.
  std::vector<double> analytic;           // flattened per block, block-major
  std::vector<std::size_t> block_offsets;
};

struct BlockReport {
  std::string name;
  double max_rel = 0.0;
  double mean_rel = 0.0;
  long long checked = 0;
  long long skipped_kinks = 0;
};

struct GradCheckReport {
  std::vector<BlockReport> blocks;
  bool pass = true;
  double max_rel = 0.0;
  std::string failure;  // empty when pass

  std::string summary() const {
    std::string s;
    for (const auto& b : blocks) {
      s += b.name + ": max_rel=" + std::to_string(b.max_rel) + " mean_rel=" + std::to_string(b.mean_rel) +
           " checked=" + std::to_string(b.checked) + " skipped=" + std::to_string(b.skipped_kinks) + "\n";
    }
    if (!failure.empty()) s += "FAIL: " + failure + "\n";
    return s;
  }
};

// fn builds a fresh forward pass from the given parameter blocks and returns
// the scalar loss; when `grads` is non-null it must also run backward and fill
// the per-block gradients. `kink_sig` (optional) receives the tape's kink
// signature so the checker can skip coordinates whose perturbation crosses a
// nondifferentiable point.
using CheckedFn = std::function<double(const std::vector<ParamBlock>&, std::vector<std::vector<double>>* grads,
                                       std::vector<signed char>* kink_sig)>;

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-3});
  return std::abs(a - b) / denom;
}

// `stride` > 1 checks every stride-th coordinate of each block (deterministic
// subsample for large models).
inline GradCheckReport grad_check(const CheckedFn& fn, std::vector<ParamBlock> params, double step, double tol,
                                  int stride = 1) {
  GradCheckReport report;
  std::vector<std::vector<double>> grads;
  std::vector<signed char> base_sig;
  const double base = fn(params, &grads, &base_sig);
  if (!std::isfinite(base)) {
    report.pass = false;
    report.failure = "non-finite loss at base point";
    return report;
  }
  if (grads.size() != params.size()) {
    report.pass = false;
    report.failure = "gradient block count mismatch";
    return report;
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    BlockReport br;
    br.name = params[b].name;
    double sum_rel = 0.0;
    for (std::size_t i = 0; i < params[b].value.size(); i += static_cast<std::size_t>(stride)) {
      const double saved = params[b].value[i];
      std::vector<signed char> sig_p, sig_m;
      params[b].value[i] = saved + step;
      const double fp = fn(params, nullptr, &sig_p);
      params[b].value[i] = saved - step;
      const double fm = fn(params, nullptr, &sig_m);
      params[b].value[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.pass = false;
        report.failure = "non-finite loss while perturbing " + br.name + "[" + std::to_string(i) + "]";
        report.blocks.push_back(br);
        return report;
      }
      if (sig_p != base_sig || sig_m != base_sig) {
        ++br.skipped_kinks;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * step);
      const double analytic = grads[b][i];
      if (!std::isfinite(analytic)) {
        report.pass = false;
        report.failure = "non-finite analytic gradient at " + br.name + "[" + std::to_string(i) + "]";
        report.blocks.push_back(br);
        return report;
      }
      const double r = rel_err(analytic, numeric);
      br.max_rel = std::max(br.max_rel, r);
      sum_rel += r;
      ++br.checked;
    }
    br.mean_rel = br.checked ? sum_rel / static_cast<double>(br.checked) : 0.0;
    report.max_rel = std::max(report.max_rel, br.max_rel);
    if (br.max_rel > tol) {
      report.pass = false;
      if (report.failure.empty())
        report.failure = br.name + " max relative error " + std::to_string(br.max_rel) + " > tol";
    }
    report.blocks.push_back(br);
  }
  return report;
}

}  // namespace gridcast::ad
