// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: per-horizon MSE, occupancy classification rates, and
// average log-likelihood under a Gaussian-kernel density fit to training
// frames.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "gridcast/ogm.hpp"
#include "gridcast/record.hpp"

namespace gridcast {

double mse_metric(const Grid& pred, const Grid& target);

struct TpTnRates {
  std::optional<double> tp;  // absent when the target has no occupied pixels
  std::optional<double> tn;  // absent when the target has no free pixels
};

// Percent of correctly predicted occupied / free pixels at the threshold.
TpTnRates tp_tn(const Grid& pred, const Grid& target, double threshold = 0.5);

struct KdeModel {
  std::vector<std::vector<float>> refs;
  double sigma = 0.1;
  long long dim = 0;
};

KdeModel kde_fit(const std::vector<std::vector<float>>& reference_frames, double sigma = 0.1);
KdeModel kde_fit_frames(const std::vector<SequenceRecord>& data, int max_refs, double sigma = 0.1);

// log[(1/n) sum_i N(x; x_i, sigma^2 I)], stabilized through log-sum-exp.
double kde_logpdf(const KdeModel& model, const std::vector<float>& frame);

struct MetricStat {
  double mean = 0.0;
  double stderr_ = 0.0;
  long long count = 0;
};

struct HorizonMetrics {
  int horizon = 0;
  MetricStat mse;
  std::optional<MetricStat> tp, tn;
  std::optional<MetricStat> all;
};

struct EvalReport {
  std::vector<int> horizons;
  std::vector<HorizonMetrics> rows;
  std::string to_csv() const;
  std::string to_table() const;
};

// Produces the k_max ego-centered predictions that follow the first
// `start_frame` observations of a record.
using RolloutFn = std::function<std::vector<Ogm>(const SequenceRecord& rec, int k_max)>;

// Ground-truth passthrough; verifies the metric plumbing end to end.
RolloutFn oracle_rollout(int start_frame);

EvalReport evaluate(const RolloutFn& rollout, const std::vector<SequenceRecord>& dataset, int start_frame,
                    const std::vector<int>& horizons, const KdeModel* kde);

}  // namespace gridcast
