#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seqforge/config.hpp"
#include "seqforge/data.hpp"
#include "seqforge/tape.hpp"

namespace seqforge {

struct ParamManifestEntry {
  std::string name;
  std::vector<int> shape;
  int64_t offset = 0;  // into the flat parameter vector
  int64_t numel = 0;
};

// Model plugin surface. Parameters live in one flat vector in a canonical
// manifest order that also defines gradient flattening and the on-disk
// layout.
class ModelBase {
 public:
  virtual ~ModelBase() = default;
  virtual std::span<float> params() = 0;
  virtual std::span<const float> params() const = 0;
  virtual const std::vector<ParamManifestEntry>& manifest() const = 0;
  virtual int64_t num_params() const = 0;
  // records encoder + decoder on the tape; returns the logits node whose
  // rows are (b * tgt_width + t)
  virtual int forward_to_logits(Tape& tape, const MiniBatch& batch) const = 0;
  virtual int target_vocab() const = 0;
  virtual int max_positions() const = 0;
  virtual std::unique_ptr<ModelBase> clone() const = 0;
  // trainer hook: dropout RNG streams are derived from (step, site) so a
  // resumed run replays identical masks; irrelevant when dropout is 0
  virtual void set_train_step(int64_t) {}
};

struct CriterionOutput {
  double loss = 0.0;      // sum over non-pad tokens
  int64_t ntokens = 0;
  double nll = 0.0;       // sum of per-token negative log likelihood
  int64_t ncorrect = 0;   // argmax hits among non-pad tokens
  int loss_node = -1;     // xent node on the tape, for backward seeding
};

class CriterionBase {
 public:
  virtual ~CriterionBase() = default;
  // full model access by contract; records loss onto the caller's tape
  virtual CriterionOutput compute(ModelBase& model, const MiniBatch& batch,
                                  Tape& tape) = 0;
};

class TaskBase {
 public:
  virtual ~TaskBase() = default;
  virtual const Dictionary& source_dict() const = 0;
  virtual const Dictionary& target_dict() const = 0;
  virtual const std::vector<SequencePair>& train_pairs() const = 0;
};

class OptimizerBase {
 public:
  virtual ~OptimizerBase() = default;
  // one update with the given step-size; grads are already scaled
  virtual void apply(std::span<float> params, std::span<const float> grads,
                     double lr) = 0;
  virtual int64_t step_count() const = 0;
  virtual void set_step_count(int64_t t) = 0;
  // named auxiliary tensors for checkpointing (e.g. Adam moments)
  virtual std::vector<std::pair<std::string, std::vector<float>>> state_blobs() const = 0;
  virtual void load_state_blobs(
      const std::vector<std::pair<std::string, std::vector<float>>>& blobs) = 0;
};

class SchedulerBase {
 public:
  virtual ~SchedulerBase() = default;
  virtual double lr(int64_t step) const = 0;  // step >= 1
};

}  // namespace seqforge
