// SPDX-License-Identifier: Apache-2.0
//
// Training loop over the multi-step objective with teacher targets and
// autoregressive feedback, rollout engine, checkpointing, and the ablation
// harness.
#pragma once

#include <map>
#include <string>
#include <vector>

#include "gridcast/metrics.hpp"
#include "gridcast/predictor.hpp"
#include "gridcast/record.hpp"
#include "gridcast/run_config.hpp"

namespace gridcast {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 1e-3;
  int horizon = 5;  // k
  int checkpoint_every = 200;
  std::uint64_t seed = 0;
};

TrainConfig train_config_from_run(const RunConfig& run);

struct AdamState {
  std::vector<std::vector<float>> m, v;
  long long t = 0;
};

class Trainer {
 public:
  Trainer(const RunConfig& run, const SequenceRecord& sample);

  // Fresh seeded initialization (parameters, optimizer, data order).
  void init();

  // One optimizer step over a deterministic batch; returns the batch-mean
  // loss breakdown (summed over the k unrolled steps).
  LossBreakdown step(const std::vector<SequenceRecord>& data);

  struct RunOptions {
    std::string out_dir;      // when set: loss.csv + periodic checkpoints
    long long max_steps = -1;
    double max_seconds = -1.0;
  };
  struct Summary {
    std::vector<LossBreakdown> curve;
    bool nan_abort = false;
    long long steps = 0;
  };
  Summary run(const std::vector<SequenceRecord>& data, const RunOptions& opts);

  const PredictorModel<float>& model() const { return model_; }
  PredictorModel<float>& model() { return model_; }
  const GeomSpec& geom() const { return geom_; }
  const RunConfig& run_config() const { return run_; }
  const TrainConfig& train_config() const { return tcfg_; }
  long long global_step() const { return global_step_; }
  bool nan_aborted() const { return nan_abort_; }
  const std::vector<LossBreakdown>& curve() const { return curve_; }

  void save_checkpoint(const std::string& path) const;
  static Trainer load_checkpoint(const std::string& path, const SequenceRecord& sample);

 private:
  friend Trainer load_trainer_state(const std::string&, const SequenceRecord&);
  RunConfig run_;
  TrainConfig tcfg_;
  GeomSpec geom_;
  PredictorModel<float> model_;
  AdamState adam_;
  Rng rng_;
  long long global_step_ = 0;
  int epoch_ = 0;
  int idx_in_epoch_ = 0;
  bool nan_abort_ = false;
  std::vector<LossBreakdown> curve_;
  std::vector<std::vector<float>> last_good_;

  std::vector<int> epoch_order(std::size_t n) const;
  void snapshot_last_good();
  void restore_last_good();
};

// ---- rollout ------------------------------------------------------------------

// Closed-loop k-step prediction starting after the first input_frames
// observations of the record. Deterministic for fixed seed; `stochastic`
// false uses the prior mean.
std::vector<Ogm> rollout_model(const PredictorModel<float>& model, const SequenceRecord& rec, int k, bool stochastic,
                               std::uint64_t seed, DecoderStub stub = DecoderStub::kNone);

RolloutFn model_rollout_fn(const PredictorModel<float>& model, bool stochastic, std::uint64_t seed);

// Rule-based persistence baseline: the environment prediction is the
// anticipated frame itself. Runs without any learned parameters.
RolloutFn persistence_rollout_fn(int input_frames, Interp interp, double ego_len_px, double ego_wid_px);

// ---- parameter snapshots and checkpoints ---------------------------------------

void save_snapshot(const PredictorModel<float>& model, const std::string& path);
PredictorModel<float> load_snapshot(const std::string& path);

// ---- ablation harness -----------------------------------------------------------

// The four study cells; each differs from "full" in exactly one flag.
std::vector<std::string> ablation_cells();
RunConfig with_ablation(RunConfig base, const std::string& cell);

struct AblationCellResult {
  std::string cell;
  EvalReport regular;
  EvalReport rare;
};

// Evaluates trained checkpoints on the regular and rare-action suites;
// throws DataError naming the cell when a checkpoint is missing.
std::vector<AblationCellResult> ablate(const std::map<std::string, std::string>& cell_checkpoints,
                                       const std::vector<SequenceRecord>& regular_data,
                                       const std::vector<SequenceRecord>& rare_data, int input_frames,
                                       const std::vector<int>& horizons, const KdeModel* kde);

std::string loss_csv(const std::vector<LossBreakdown>& curve);

}  // namespace gridcast
