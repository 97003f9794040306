#include "seqforge/criterions.hpp"

#include "seqforge/common.hpp"
#include "seqforge/data.hpp"

namespace seqforge {

namespace {

CriterionOutput xent_on_tape(ModelBase& model, const MiniBatch& batch, Tape& tape,
                             float epsilon) {
  int logits = model.forward_to_logits(tape, batch);

  const int64_t positions = static_cast<int64_t>(batch.rows) * batch.tgt_width;
  std::vector<int> gold(static_cast<size_t>(positions));
  std::vector<uint8_t> active(static_cast<size_t>(positions));
  for (int64_t i = 0; i < positions; ++i) {
    int id = batch.target_out[static_cast<size_t>(i)];
    gold[static_cast<size_t>(i)] = id;
    active[static_cast<size_t>(i)] = id != Dictionary::kPad ? 1 : 0;
  }

  int loss_node = tape.softmax_xent(logits, std::move(gold), std::move(active), epsilon);
  const TapeNode& n = tape.node(loss_node);

  CriterionOutput out;
  out.loss_node = loss_node;
  for (int64_t r = 0; r < n.out.numel(); ++r) {
    if (!n.active[static_cast<size_t>(r)]) continue;
    out.loss += static_cast<double>(n.out.data()[r]);
    out.nll += static_cast<double>(n.nll[static_cast<size_t>(r)]);
    out.ncorrect += n.correct[static_cast<size_t>(r)];
    ++out.ntokens;
  }
  return out;
}

}  // namespace

CriterionOutput CrossEntropy::compute(ModelBase& model, const MiniBatch& batch,
                                      Tape& tape) {
  return xent_on_tape(model, batch, tape, 0.0f);
}

LabelSmoothedCrossEntropy::LabelSmoothedCrossEntropy(double epsilon)
    : epsilon_(static_cast<float>(epsilon)) {
  if (epsilon < 0.0 || epsilon >= 1.0)
    throw ConfigError("label_smoothed_cross_entropy: epsilon must be in [0, 1)");
}

CriterionOutput LabelSmoothedCrossEntropy::compute(ModelBase& model,
                                                   const MiniBatch& batch, Tape& tape) {
  return xent_on_tape(model, batch, tape, epsilon_);
}

}  // namespace seqforge
