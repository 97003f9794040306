#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "seqforge/config.hpp"
#include "seqforge/plugins.hpp"
#include "seqforge/registry.hpp"

namespace seqforge {

// Dynamic loss scale for the emulated-FP16 path. The scale stays a power
// of two inside [min, max]; overflow halves it (and the caller skips the
// step), a full window of clean steps doubles it.
class LossScaler {
 public:
  LossScaler(double init_scale, int64_t window, double min_scale, double max_scale);

  double scale() const { return scale_; }
  int64_t successes() const { return good_; }
  int64_t window() const { return window_; }

  // overflowed=true: halve + reset counter (DivergenceError below min);
  // false: count a clean step, double when the window fills
  void update(bool overflowed);

  void restore(double scale, int64_t successes);

 private:
  double scale_;
  int64_t window_;
  double min_, max_;
  int64_t good_ = 0;
};

// Contiguous slice of the flattened canonical gradient vector. Buckets
// are built walking parameters in reverse canonical order (the order
// gradients complete during backward), so bucket 0 sits at the tail of
// the flat vector.
struct GradientBucket {
  int64_t start = 0;
  int64_t end = 0;
};

std::vector<GradientBucket> bucket_gradients(const std::vector<int64_t>& sizes,
                                             int64_t threshold);

// Element-wise left fold over replicas in index order, bucket by bucket,
// into `out` (replica 0's buffer per convention). F16E keeps every
// partial sum on the binary16 grid.
void all_reduce(std::vector<std::vector<float>>& replica_grads,
                const std::vector<GradientBucket>& buckets, DType dtype);

struct StepStats {
  int64_t step = 0;       // step index this call produced (1-based)
  double loss = 0.0;      // summed over tokens, unnormalized, unscaled
  double nll = 0.0;
  int64_t ntokens = 0;
  int64_t ncorrect = 0;
  double lr = 0.0;
  bool skipped = false;   // fp16 overflow: scaler updated, nothing else
  double scale = 0.0;     // loss scale used (0 when not in fp16)
};

struct EvalStats {
  double loss = 0.0;
  double nll = 0.0;
  int64_t ntokens = 0;
  int64_t ncorrect = 0;
};

// Synchronous data-parallel trainer over W logical in-process replicas
// with A-way gradient accumulation. Each optimizer step consumes one
// global minibatch, split row-wise into W*A sub-batches, so (W, A) is a
// pure throughput knob: the result matches the W=1, A=1 run on the same
// batches (bitwise for W=1, within rounding for W>1).
class Trainer {
 public:
  Trainer(const Config& cfg, const Registry& reg = global_registry());
  // test/driver hook: supply the task directly instead of via the registry
  Trainer(const Config& cfg, std::unique_ptr<TaskBase> task,
          const Registry& reg = global_registry());

  // runs one optimizer step on the next global batch from the epoch
  // stream; nullopt when the data is exhausted (stream untouched)
  std::optional<StepStats> train_one();

  // explicit-dispatch form: sub[w][a] lists each replica's sub-batches
  StepStats train_step(const std::vector<std::vector<MiniBatch>>& sub);

  // teacher-forced scoring of arbitrary pairs on the FP32 master
  EvalStats evaluate(const std::vector<SequencePair>& pairs) const;

  int64_t step() const { return step_; }
  int epoch() const { return epoch_; }
  int cursor() const { return pos_; }  // next batch ordinal within the epoch
  int batches_per_epoch() const { return static_cast<int>(plan_.batches.size()); }

  ModelBase& model() { return *model_; }
  const ModelBase& model() const { return *model_; }
  int workers() const { return workers_; }
  int accum() const { return accum_; }
  const ModelBase& replica(int w) const { return *replicas_.at(static_cast<size_t>(w)); }
  TaskBase& task() { return *task_; }
  OptimizerBase& optimizer() { return *optimizer_; }
  const OptimizerBase& optimizer() const { return *optimizer_; }
  const Config& config() const { return cfg_; }
  bool fp16() const { return fp16_; }
  const LossScaler& scaler() const;
  const std::vector<GradientBucket>& buckets() const { return buckets_; }

  // checkpoint restore: counters, cursor, scaler; parameters and
  // optimizer state are written through model()/optimizer() directly,
  // then rebroadcast() refreshes the replica copies
  void restore_progress(int64_t step, int epoch, int cursor);
  void restore_scaler(double scale, int64_t successes);
  void rebroadcast();

  // fault injection: force the overflow signal on chosen steps (fp16)
  void set_overflow_injector(std::function<bool(int64_t step)> f) {
    overflow_injector_ = std::move(f);
  }

 private:
  Config cfg_;
  std::unique_ptr<TaskBase> task_;
  std::unique_ptr<ModelBase> model_;  // FP32 master
  std::unique_ptr<CriterionBase> criterion_;
  std::unique_ptr<OptimizerBase> optimizer_;
  std::unique_ptr<SchedulerBase> scheduler_;
  std::unique_ptr<LossScaler> scaler_;

  int workers_ = 1;
  int accum_ = 1;
  bool fp16_ = false;
  int max_epochs_ = 1;
  uint64_t seed_ = 1;

  // replica slots: parameter copies (FP16E shadows in fp16 mode) and
  // private gradient buffers
  std::vector<std::unique_ptr<ModelBase>> replicas_;
  std::vector<std::vector<float>> grads_;
  std::vector<GradientBucket> buckets_;

  EpochPlan plan_;
  int epoch_ = 1;
  int pos_ = 0;
  std::vector<int> order_;

  int64_t step_ = 0;
  std::function<bool(int64_t)> overflow_injector_;

  void init_from_config(const Registry& reg);
  std::optional<MiniBatch> next_batch();
  std::vector<std::vector<MiniBatch>> split_batch(const MiniBatch& batch) const;
};

}  // namespace seqforge
