// SPDX-License-Identifier: Apache-2.0
#include "gridcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "gridcast/errors.hpp"

namespace gridcast {

double mse_metric(const Grid& pred, const Grid& target) {
  if (!pred.same_shape(target)) throw DataError("mse_metric: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(pred.data.size());
}

TpTnRates tp_tn(const Grid& pred, const Grid& target, double threshold) {
  if (!pred.same_shape(target)) throw DataError("tp_tn: shape mismatch");
  long long occ = 0, occ_hit = 0, free_px = 0, free_hit = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool t = target.data[i] >= 0.5f;
    const bool p = pred.data[i] >= threshold;
    if (t) {
      ++occ;
      occ_hit += p ? 1 : 0;
    } else {
      ++free_px;
      free_hit += p ? 0 : 1;
    }
  }
  TpTnRates out;
  if (occ > 0) out.tp = 100.0 * static_cast<double>(occ_hit) / static_cast<double>(occ);
  if (free_px > 0) out.tn = 100.0 * static_cast<double>(free_hit) / static_cast<double>(free_px);
  return out;
}

KdeModel kde_fit(const std::vector<std::vector<float>>& reference_frames, double sigma) {
  if (reference_frames.empty()) throw DataError("kde_fit: no reference frames");
  if (!(sigma > 0.0)) throw DataError("kde_fit: bandwidth must be positive");
  KdeModel m;
  m.sigma = sigma;
  m.dim = static_cast<long long>(reference_frames.front().size());
  for (const auto& r : reference_frames) {
    if (static_cast<long long>(r.size()) != m.dim) throw DataError("kde_fit: reference length mismatch");
  }
  m.refs = reference_frames;
  return m;
}

KdeModel kde_fit_frames(const std::vector<SequenceRecord>& data, int max_refs, double sigma) {
  std::vector<std::vector<float>> refs;
  // deterministic stride over all frames of the dataset
  long long total = 0;
  for (const auto& rec : data) total += rec.length;
  const long long stride = std::max<long long>(1, total / std::max(1, max_refs));
  long long counter = 0;
  for (const auto& rec : data) {
    for (int t = 0; t < rec.length; ++t, ++counter) {
      if (counter % stride != 0) continue;
      if (static_cast<int>(refs.size()) >= max_refs) break;
      const Ogm f = rec.frame(t);
      refs.push_back(f.grid.data);
    }
  }
  if (refs.empty()) refs.push_back(data.front().frame(0).grid.data);
  return kde_fit(refs, sigma);
}

double kde_logpdf(const KdeModel& model, const std::vector<float>& frame) {
  if (static_cast<long long>(frame.size()) != model.dim) throw DataError("kde_logpdf: frame length mismatch");
  const double inv2s2 = 1.0 / (2.0 * model.sigma * model.sigma);
  double max_e = -1e300;
  std::vector<double> exponents;
  exponents.reserve(model.refs.size());
  for (const auto& r : model.refs) {
    double d2 = 0.0;
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const double d = static_cast<double>(frame[i]) - r[i];
      d2 += d * d;
    }
    const double e = -d2 * inv2s2;
    exponents.push_back(e);
    max_e = std::max(max_e, e);
  }
  double acc = 0.0;
  for (double e : exponents) acc += std::exp(e - max_e);
  const double lse = max_e + std::log(acc);
  const double d = static_cast<double>(model.dim);
  return -0.5 * d * std::log(2.0 * M_PI * model.sigma * model.sigma) - std::log(static_cast<double>(model.refs.size())) +
         lse;
}

RolloutFn oracle_rollout(int start_frame) {
  return [start_frame](const SequenceRecord& rec, int k_max) {
    std::vector<Ogm> out;
    for (int k = 0; k < k_max; ++k) out.push_back(rec.frame(start_frame + k));
    return out;
  };
}

namespace {

MetricStat stat_of(const std::vector<double>& xs) {
  MetricStat s;
  s.count = static_cast<long long>(xs.size());
  if (xs.empty()) return s;
  double acc = 0.0;
  for (double x : xs) acc += x;
  s.mean = acc / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    var /= static_cast<double>(xs.size() - 1);
    s.stderr_ = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return s;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

EvalReport evaluate(const RolloutFn& rollout, const std::vector<SequenceRecord>& dataset, int start_frame,
                    const std::vector<int>& horizons, const KdeModel* kde) {
  if (dataset.empty()) throw DataError("evaluate: empty dataset");
  if (horizons.empty()) throw DataError("evaluate: no horizons");
  const int k_max = *std::max_element(horizons.begin(), horizons.end());
  for (const auto& rec : dataset)
    if (rec.length < start_frame + k_max)
      throw DataError("evaluate: sequence of length " + std::to_string(rec.length) + " too short for start " +
                      std::to_string(start_frame) + " + horizon " + std::to_string(k_max));

  struct Acc {
    std::vector<double> mse, tp, tn, all;
  };
  std::vector<Acc> acc(horizons.size());
  for (const auto& rec : dataset) {
    const auto preds = rollout(rec, k_max);
    if (static_cast<int>(preds.size()) != k_max) throw DataError("evaluate: rollout returned wrong step count");
    for (std::size_t hi = 0; hi < horizons.size(); ++hi) {
      const int k = horizons[hi];
      const Ogm& pred = preds[static_cast<std::size_t>(k - 1)];
      const Ogm truth = rec.frame(start_frame + k - 1);
      acc[hi].mse.push_back(mse_metric(pred.grid, truth.grid));
      if (rec.binary_mode) {
        const TpTnRates rates = tp_tn(pred.grid, truth.grid);
        if (rates.tp) acc[hi].tp.push_back(*rates.tp);
        if (rates.tn) acc[hi].tn.push_back(*rates.tn);
      }
      if (kde) acc[hi].all.push_back(kde_logpdf(*kde, pred.grid.data));
    }
  }
  EvalReport report;
  report.horizons = horizons;
  for (std::size_t hi = 0; hi < horizons.size(); ++hi) {
    HorizonMetrics row;
    row.horizon = horizons[hi];
    row.mse = stat_of(acc[hi].mse);
    if (!acc[hi].tp.empty()) row.tp = stat_of(acc[hi].tp);
    if (!acc[hi].tn.empty()) row.tn = stat_of(acc[hi].tn);
    if (!acc[hi].all.empty()) row.all = stat_of(acc[hi].all);
    report.rows.push_back(row);
  }
  return report;
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os << "horizon,metric,mean,spread\n";
  for (const auto& r : rows) {
    os << r.horizon << ",mse," << fmt(r.mse.mean) << "," << fmt(r.mse.stderr_) << "\n";
    if (r.tp) os << r.horizon << ",tp," << fmt(r.tp->mean) << "," << fmt(r.tp->stderr_) << "\n";
    if (r.tn) os << r.horizon << ",tn," << fmt(r.tn->mean) << "," << fmt(r.tn->stderr_) << "\n";
    if (r.all) os << r.horizon << ",all," << fmt(r.all->mean) << "," << fmt(r.all->stderr_) << "\n";
  }
  return os.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << "horizon        mse             tp              tn              all\n";
  for (const auto& r : rows) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-7d %10.5f+-%-8.5f", r.horizon, r.mse.mean, r.mse.stderr_);
    os << line;
    auto cell = [&os](const std::optional<MetricStat>& s) {
      char c[64];
      if (s)
        std::snprintf(c, sizeof(c), " %9.3f+-%-6.3f", s->mean, s->stderr_);
      else
        std::snprintf(c, sizeof(c), " %17s", "-");
      os << c;
    };
    cell(r.tp);
    cell(r.tn);
    cell(r.all);
    os << "\n";
  }
  return os.str();
}

}  // namespace gridcast
