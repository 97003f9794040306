#pragma once

#include "seqforge/plugins.hpp"

namespace seqforge {

// loss = -sum over non-pad target positions of log softmax(logits)[gold]
class CrossEntropy : public CriterionBase {
 public:
  CriterionOutput compute(ModelBase& model, const MiniBatch& batch, Tape& tape) override;
};

// (1-eps)*nll + eps*(mean over vocab of -log softmax), summed over
// non-pad positions; eps = 0 reduces to CrossEntropy bitwise
class LabelSmoothedCrossEntropy : public CriterionBase {
 public:
  explicit LabelSmoothedCrossEntropy(double epsilon);
  CriterionOutput compute(ModelBase& model, const MiniBatch& batch, Tape& tape) override;

 private:
  float epsilon_;
};

}  // namespace seqforge
