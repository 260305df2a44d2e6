// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "gridcast/gradcheck.hpp"
#include "gridcast/losses.hpp"
#include "gridcast/rng.hpp"

using namespace gridcast;
using namespace gridcast::ad;

namespace {

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("mse of a perfect prediction is zero, and a random pair matches the direct sum") {
  Rng rng(1);
  auto a = random_vec(rng, 16);
  CHECK(recon_value(a, a, 1, 4, 4, ReconKind::kMse) == 0.0);
  auto b = random_vec(rng, 16);
  double acc = 0.0;
  for (int i = 0; i < 16; ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(recon_value(a, b, 1, 4, 4, ReconKind::kMse) == doctest::Approx(acc / 16.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of target 1 and prediction one half is ln 2") {
  CHECK(recon_value({1.0}, {0.5}, 1, 1, 1, ReconKind::kCe) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("cross entropy clamps away from log(0)") {
  CHECK(std::isfinite(recon_value({1.0}, {0.0}, 1, 1, 1, ReconKind::kCe)));
  CHECK(std::isfinite(recon_value({0.0}, {1.0}, 1, 1, 1, ReconKind::kCe)));
}

TEST_CASE("recon divergence rejects shape mismatches") {
  Tape<double> t;
  Var<double> a = constant(t, {1, 4, 4}, std::vector<double>(16, 0.0));
  Var<double> b = constant(t, {1, 3, 3}, std::vector<double>(9, 0.0));
  CHECK_THROWS_AS(recon_divergence(a, b, ReconKind::kMse), std::invalid_argument);
}

TEST_CASE("ssim of a frame with itself is one") {
  Rng rng(2);
  auto a = random_vec(rng, 2 * 12 * 12);
  CHECK(ssim_value(a, a, 2, 12, 12) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("ssim of constant zero against constant one hits the closed form") {
  std::vector<double> zeros(10 * 10, 0.0), ones(10 * 10, 1.0);
  const double expect = kSsimC1 / (1.0 + kSsimC1);
  CHECK(ssim_value(zeros, ones, 1, 10, 10) == doctest::Approx(expect).epsilon(1e-9));
  CHECK(expect == doctest::Approx(9.999e-5).epsilon(1e-3));
}

TEST_CASE("ssim is symmetric bitwise") {
  Rng rng(3);
  auto a = random_vec(rng, 9 * 9);
  auto b = random_vec(rng, 9 * 9);
  CHECK(ssim_value(a, b, 1, 9, 9) == ssim_value(b, a, 1, 9, 9));
}

TEST_CASE("ssim stays within [-1, 1] and is shift invariant in the shared interior") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    auto a = random_vec(rng, 14 * 14);
    auto b = random_vec(rng, 14 * 14);
    const double s = ssim_value(a, b, 1, 14, 14);
    CHECK(s >= -1.0 - 1e-12);
    CHECK(s <= 1.0 + 1e-12);
  }
  // translating both frames by the same offset leaves window statistics alone
  auto a = random_vec(rng, 16 * 16);
  auto b = random_vec(rng, 16 * 16);
  auto shift = [](const std::vector<double>& x, int n, int d) {
    std::vector<double> out(x.size(), 0.0);
    for (int i = 0; i < n - d; ++i)
      for (int j = 0; j < n - d; ++j) out[(i + d) * n + j + d] = x[i * n + j];
    return out;
  };
  // compare on the common interior by cropping to the same window set
  auto crop_to = [](const std::vector<double>& x, int n, int r0, int c0, int m) {
    std::vector<double> out(static_cast<std::size_t>(m) * m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) out[i * m + j] = x[(i + r0) * n + (j + c0)];
    return out;
  };
  const int m = 10;
  auto sa = crop_to(a, 16, 0, 0, m);
  auto sb = crop_to(b, 16, 0, 0, m);
  auto ta = crop_to(shift(a, 16, 3), 16, 3, 3, m);
  auto tb = crop_to(shift(b, 16, 3), 16, 3, 3, m);
  CHECK(ssim_value(sa, sb, 1, m, m) == doctest::Approx(ssim_value(ta, tb, 1, m, m)).epsilon(1e-12));
}

TEST_CASE("ssim rejects frames smaller than the window") {
  std::vector<double> tiny(5 * 5, 0.5);
  CHECK_THROWS_AS(ssim_value(tiny, tiny, 1, 5, 5), std::invalid_argument);
}

TEST_CASE("kl of identical codes is exactly zero") {
  Rng rng(5);
  auto mu = random_vec(rng, 8, -2, 2);
  auto var = random_vec(rng, 8, 0.1, 3.0);
  CHECK(gaussian_kl_value(mu, var, mu, var) == 0.0);
}

TEST_CASE("kl of N(1,1) against N(0,1) in one dimension is one half") {
  CHECK(gaussian_kl_value({1.0}, {1.0}, {0.0}, {1.0}) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("kl rejects nonpositive variances") {
  CHECK_THROWS_AS(gaussian_kl_value({0.0}, {0.0}, {0.0}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(gaussian_kl_value({0.0}, {1.0}, {0.0}, {-1.0}), std::invalid_argument);
}

TEST_CASE("kl is nonnegative over random diagonal codes") {
  Rng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = rng.uniform_int(1, 16);
    auto mq = random_vec(rng, d, -3, 3);
    auto vq = random_vec(rng, d, 0.05, 4.0);
    auto mp = random_vec(rng, d, -3, 3);
    auto vp = random_vec(rng, d, 0.05, 4.0);
    CHECK(gaussian_kl_value(mq, vq, mp, vp) >= -1e-12);
  }
}

TEST_CASE("kl matches a monte-carlo estimate within one percent") {
  Rng rng(7);
  const int d = 8;
  auto mq = random_vec(rng, d, -1, 1);
  auto vq = random_vec(rng, d, 0.3, 2.0);
  auto mp = random_vec(rng, d, -1, 1);
  auto vp = random_vec(rng, d, 0.3, 2.0);
  const double closed = gaussian_kl_value(mq, vq, mp, vp);

  // E_q[log q(z) - log p(z)] by sampling from q
  const int n = 1000000;
  double acc = 0.0;
  for (int s = 0; s < n; ++s) {
    double lq = 0.0, lp = 0.0;
    for (int i = 0; i < d; ++i) {
      const double z = mq[i] + std::sqrt(vq[i]) * rng.normal();
      lq += -0.5 * (std::log(2.0 * M_PI * vq[i]) + (z - mq[i]) * (z - mq[i]) / vq[i]);
      lp += -0.5 * (std::log(2.0 * M_PI * vp[i]) + (z - mp[i]) * (z - mp[i]) / vp[i]);
    }
    acc += lq - lp;
  }
  const double mc = acc / n;
  CHECK(closed == doctest::Approx(mc).epsilon(0.01));
}

TEST_CASE("step loss: perfect prediction with matching codes totals zero") {
  Rng rng(8);
  auto img = random_vec(rng, 2 * 10 * 10);
  auto mu = random_vec(rng, 4, -1, 1);
  auto var = random_vec(rng, 4, 0.5, 1.5);
  Tape<double> t;
  Var<double> target = constant(t, {2, 10, 10}, img);
  Var<double> pred = constant(t, {2, 10, 10}, img);
  GaussianCodeVar<double> q{constant(t, {4}, mu), constant(t, {4}, var)};
  auto out = step_loss(target, pred, q, q, 0.05, ReconKind::kMse, false);
  CHECK(out.values.total == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(out.values.rec == 0.0);
  CHECK(out.values.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(out.values.kl == 0.0);
}

TEST_CASE("step loss: lambda zero reduces the total to D plus KL") {
  Rng rng(9);
  auto a = random_vec(rng, 1 * 10 * 10);
  auto b = random_vec(rng, 1 * 10 * 10);
  Tape<double> t;
  Var<double> target = constant(t, {1, 10, 10}, a);
  Var<double> pred = constant(t, {1, 10, 10}, b);
  GaussianCodeVar<double> q{constant(t, {3}, {0.3, -0.2, 0.1}), constant(t, {3}, {1.0, 0.8, 1.2})};
  GaussianCodeVar<double> p{constant(t, {3}, {0.0, 0.0, 0.0}), constant(t, {3}, {1.0, 1.0, 1.0})};
  auto out = step_loss(target, pred, q, p, 0.0, ReconKind::kMse, false);
  CHECK(out.values.total == doctest::Approx(out.values.rec + out.values.kl).epsilon(1e-12));
}

TEST_CASE("step loss breakdown satisfies total = rec + lambda(1-ssim) + kl") {
  Rng rng(10);
  auto a = random_vec(rng, 1 * 12 * 12);
  auto b = random_vec(rng, 1 * 12 * 12, -0.2, 1.2);  // raw composition can leave [0,1]
  for (bool dl : {false, true}) {
    Tape<double> t;
    Var<double> target = constant(t, {1, 12, 12}, a);
    Var<double> pred = constant(t, {1, 12, 12}, dl ? b : a);
    GaussianCodeVar<double> q{constant(t, {2}, {0.5, -0.5}), constant(t, {2}, {0.9, 1.1})};
    GaussianCodeVar<double> p{constant(t, {2}, {0.0, 0.0}), constant(t, {2}, {1.0, 1.0})};
    auto out = step_loss(target, pred, q, p, 0.07, ReconKind::kMse, dl);
    CHECK(out.values.total ==
          doctest::Approx(out.values.rec + 0.07 * (1.0 - out.values.ssim) + out.values.kl).epsilon(1e-6));
  }
}

TEST_CASE("difference-learning loss penalizes raw overshoot but scores ssim on the clipped frame") {
  // raw 1.2 where the target is 1: D sees (0.2)^2, SSIM sees a perfect clipped frame
  std::vector<double> target(10 * 10, 1.0);
  std::vector<double> raw(10 * 10, 1.2);
  Tape<double> t;
  Var<double> tv = constant(t, {1, 10, 10}, target);
  Var<double> rv = constant(t, {1, 10, 10}, raw);
  GaussianCodeVar<double> q{constant(t, {1}, {0.0}), constant(t, {1}, {1.0})};
  auto out = step_loss(tv, rv, q, q, 0.1, ReconKind::kMse, true);
  CHECK(out.values.rec == doctest::Approx(0.04).epsilon(1e-9));
  CHECK(out.values.ssim == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("loss terms are differentiable end to end through ssim and kl") {
  Rng rng(11);
  const int C = 1, H = 9, W = 9;
  auto target = random_vec(rng, static_cast<std::size_t>(C) * H * W);
  std::vector<ParamBlock> params;
  params.push_back({"pred", {C, H, W}, random_vec(rng, static_cast<std::size_t>(C) * H * W, 0.05, 0.95)});
  params.push_back({"mu_q", {3}, random_vec(rng, 3, -1, 1)});
  params.push_back({"logvar_q", {3}, random_vec(rng, 3, -0.5, 0.5)});
  params.push_back({"mu_p", {3}, random_vec(rng, 3, -1, 1)});
  params.push_back({"logvar_p", {3}, random_vec(rng, 3, -0.5, 0.5)});
  auto fn = [&target, C, H, W](const std::vector<ParamBlock>& ps, std::vector<std::vector<double>>* grads,
                               std::vector<signed char>* sig) -> double {
    Tape<double> t;
    std::vector<Var<double>> pv;
    for (const auto& p : ps) pv.push_back(param(t, p.shape, p.value));
    Var<double> tv = constant(t, {C, H, W}, target);
    GaussianCodeVar<double> q{pv[1], exp_(pv[2])};
    GaussianCodeVar<double> p{pv[3], exp_(pv[4])};
    auto out = step_loss(tv, pv[0], q, p, 0.05, ReconKind::kMse, false);
    const double v = out.total.scalar();
    if (grads) {
      t.backward(out.total.id);
      grads->clear();
      for (const auto& x : pv) grads->push_back(std::vector<double>(x.grad().begin(), x.grad().end()));
    }
    if (sig) *sig = t.kink_signature();
    return v;
  };
  auto report = grad_check(fn, params, 1e-5, 1e-4, 3);
  INFO(report.summary());
  CHECK(report.pass);
}

TEST_CASE("horizon summation adds breakdowns") {
  std::vector<LossBreakdown> steps = {{1.0, 0.9, 0.1, 1.2}, {2.0, 0.8, 0.2, 2.4}};
  auto total = sum_breakdowns(steps);
  CHECK(total.rec == doctest::Approx(3.0));
  CHECK(total.total == doctest::Approx(3.6));
}
