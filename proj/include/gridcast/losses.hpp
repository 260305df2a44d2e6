// SPDX-License-Identifier: Apache-2.0
//
// Training-objective terms: reconstruction divergence (MSE or Bernoulli
// cross-entropy), windowed SSIM, closed-form diagonal-Gaussian KL, and the
// per-step loss that combines them.
#pragma once

#include <vector>

#include "gridcast/autodiff.hpp"

namespace gridcast {

enum class ReconKind { kMse, kCe };

inline constexpr int kSsimWindow = 7;
inline constexpr double kSsimC1 = 0.01 * 0.01;  // dynamic range 1
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kCeClamp = 1e-7;

// Diagonal Gaussian on the tape.
template <typename T>
struct GaussianCodeVar {
  ad::Var<T> mean;
  ad::Var<T> var;
};

template <typename T>
ad::Var<T> recon_divergence(ad::Var<T> target, ad::Var<T> pred, ReconKind kind) {
  using namespace ad;
  if (target.shape() != pred.shape()) shape_error("recon_divergence", target.shape(), pred.shape());
  if (kind == ReconKind::kMse) return mean_all(square(sub(pred, target)));
  Var<T> p = clamp(pred, static_cast<T>(kCeClamp), static_cast<T>(1.0 - kCeClamp));
  Var<T> pos = mul(target, log_(p));
  Var<T> one_minus_t = add_scalar(neg(target), T(1));
  Var<T> one_minus_p = add_scalar(neg(p), T(1));
  Var<T> negpart = mul(one_minus_t, log_(one_minus_p));
  return neg(mean_all(add(pos, negpart)));
}

// Mean local SSIM over valid 7x7 uniform windows, averaged across channels.
template <typename T>
ad::Var<T> ssim(ad::Var<T> a, ad::Var<T> b) {
  using namespace ad;
  if (a.shape() != b.shape()) shape_error("ssim", a.shape(), b.shape());
  if (a.shape().size() != 3) throw std::invalid_argument("ssim expects [C,H,W]");
  Var<T> mu_a = box_mean(a, kSsimWindow);
  Var<T> mu_b = box_mean(b, kSsimWindow);
  Var<T> mu_aa = box_mean(mul(a, a), kSsimWindow);
  Var<T> mu_bb = box_mean(mul(b, b), kSsimWindow);
  Var<T> mu_ab = box_mean(mul(a, b), kSsimWindow);
  Var<T> var_a = sub(mu_aa, mul(mu_a, mu_a));
  Var<T> var_b = sub(mu_bb, mul(mu_b, mu_b));
  Var<T> cov = sub(mu_ab, mul(mu_a, mu_b));
  const T c1 = static_cast<T>(kSsimC1), c2 = static_cast<T>(kSsimC2);
  Var<T> num = mul(add_scalar(scale(mul(mu_a, mu_b), T(2)), c1), add_scalar(scale(cov, T(2)), c2));
  Var<T> den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1), add_scalar(add(var_a, var_b), c2));
  return mean_all(div(num, den));
}

// KL(q || p) for diagonal Gaussians:
//   1/2 [ sum(var_q/var_p) + sum((mu_p - mu_q)^2 / var_p) + sum(ln var_p - ln var_q) - d ]
template <typename T>
ad::Var<T> gaussian_kl(const GaussianCodeVar<T>& q, const GaussianCodeVar<T>& p) {
  using namespace ad;
  if (q.mean.shape() != p.mean.shape()) shape_error("gaussian_kl", q.mean.shape(), p.mean.shape());
  const T d = static_cast<T>(numel(q.mean.shape()));
  for (T v : q.var.val())
    if (!(v > T(0))) throw std::invalid_argument("gaussian_kl: nonpositive variance in q");
  for (T v : p.var.val())
    if (!(v > T(0))) throw std::invalid_argument("gaussian_kl: nonpositive variance in p");
  Var<T> ratio = sum_all(div(q.var, p.var));
  Var<T> dmu = sub(p.mean, q.mean);
  Var<T> maha = sum_all(div(mul(dmu, dmu), p.var));
  Var<T> logs = sub(sum_all(log_(p.var)), sum_all(log_(q.var)));
  return scale(add_scalar(add(add(ratio, maha), logs), -d), T(0.5));
}

struct LossBreakdown {
  double rec = 0.0;
  double ssim = 0.0;  // SSIM value, not the weighted term
  double kl = 0.0;
  double total = 0.0;
};

template <typename T>
struct StepLossVar {
  ad::Var<T> total;
  LossBreakdown values;
};

// Base variant scores the prediction directly; the difference-learning
// variant receives the unclipped composition so reconstruction gradients
// reach out-of-range values while SSIM sees the clipped frame.
template <typename T>
StepLossVar<T> step_loss(ad::Var<T> target, ad::Var<T> pred_raw, const GaussianCodeVar<T>& q,
                         const GaussianCodeVar<T>& p, double lambda, ReconKind kind, bool difference_learning) {
  using namespace ad;
  Var<T> for_ssim = difference_learning ? clamp(pred_raw, T(0), T(1)) : pred_raw;
  Var<T> rec = recon_divergence(target, pred_raw, kind);
  Var<T> sim = ssim(target, for_ssim);
  Var<T> kl = gaussian_kl(q, p);
  Var<T> one_minus = add_scalar(neg(sim), T(1));
  Var<T> total = add(add(rec, scale(one_minus, static_cast<T>(lambda))), kl);
  StepLossVar<T> out{total, {}};
  out.values.rec = static_cast<double>(rec.scalar());
  out.values.ssim = static_cast<double>(sim.scalar());
  out.values.kl = static_cast<double>(kl.scalar());
  out.values.total = static_cast<double>(total.scalar());
  return out;
}

inline LossBreakdown sum_breakdowns(const std::vector<LossBreakdown>& steps) {
  LossBreakdown out;
  for (const auto& s : steps) {
    out.rec += s.rec;
    out.ssim += s.ssim;
    out.kl += s.kl;
    out.total += s.total;
  }
  return out;
}

// ---- plain-value wrappers (evaluation and tests) ----------------------------

double ssim_value(const std::vector<double>& a, const std::vector<double>& b, int c, int h, int w);
double recon_value(const std::vector<double>& target, const std::vector<double>& pred, int c, int h, int w,
                   ReconKind kind);
double gaussian_kl_value(const std::vector<double>& mu_q, const std::vector<double>& var_q,
                         const std::vector<double>& mu_p, const std::vector<double>& var_p);

}  // namespace gridcast
