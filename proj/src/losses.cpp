// SPDX-License-Identifier: Apache-2.0
#include "gridcast/losses.hpp"

namespace gridcast {

double ssim_value(const std::vector<double>& a, const std::vector<double>& b, int c, int h, int w) {
  ad::Tape<double> t;
  return ssim(ad::constant(t, {c, h, w}, a), ad::constant(t, {c, h, w}, b)).scalar();
}

double recon_value(const std::vector<double>& target, const std::vector<double>& pred, int c, int h, int w,
                   ReconKind kind) {
  ad::Tape<double> t;
  return recon_divergence(ad::constant(t, {c, h, w}, target), ad::constant(t, {c, h, w}, pred), kind).scalar();
}

double gaussian_kl_value(const std::vector<double>& mu_q, const std::vector<double>& var_q,
                         const std::vector<double>& mu_p, const std::vector<double>& var_p) {
  ad::Tape<double> t;
  const int d = static_cast<int>(mu_q.size());
  GaussianCodeVar<double> q{ad::constant(t, {d}, mu_q), ad::constant(t, {d}, var_q)};
  GaussianCodeVar<double> p{ad::constant(t, {d}, mu_p), ad::constant(t, {d}, var_p)};
  return gaussian_kl(q, p).scalar();
}

}  // namespace gridcast
