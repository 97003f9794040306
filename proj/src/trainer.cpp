#include "seqforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "seqforge/common.hpp"
#include "seqforge/kernels.hpp"
#include "seqforge/tape.hpp"

namespace seqforge {

namespace {
bool power_of_two(double x) {
  if (x <= 0.0) return false;
  int e = 0;
  return std::frexp(x, &e) == 0.5;
}
}  // namespace

LossScaler::LossScaler(double init_scale, int64_t window, double min_scale, double max_scale)
    : scale_(init_scale), window_(window), min_(min_scale), max_(max_scale) {
  if (window_ < 1) throw ConfigError("loss scaler: window must be at least 1");
  if (!power_of_two(scale_) || !power_of_two(min_) || !power_of_two(max_))
    throw ConfigError("loss scaler: scales must be powers of two");
  if (min_ > scale_ || scale_ > max_)
    throw ConfigError("loss scaler: initial scale outside [min, max]");
}

void LossScaler::update(bool overflowed) {
  if (overflowed) {
    good_ = 0;
    scale_ *= 0.5;
    if (scale_ < min_)
      throw DivergenceError("loss scale fell below its floor; training diverged");
  } else if (++good_ >= window_) {
    good_ = 0;
    scale_ = std::min(scale_ * 2.0, max_);
  }
}

void LossScaler::restore(double scale, int64_t successes) {
  if (!power_of_two(scale) || scale < min_ || scale > max_ || successes < 0 ||
      successes >= window_)
    throw IntegrityError("loss scaler: restored state out of range");
  scale_ = scale;
  good_ = successes;
}

std::vector<GradientBucket> bucket_gradients(const std::vector<int64_t>& sizes,
                                             int64_t threshold) {
  if (threshold < 1) throw ConfigError("bucket_gradients: threshold must be at least 1");
  std::vector<int64_t> offs(sizes.size() + 1, 0);
  for (size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] < 1) throw ConfigError("bucket_gradients: parameter sizes must be positive");
    offs[i + 1] = offs[i] + sizes[i];
  }
  // gradients complete back-to-front during backward, so buckets are cut
  // walking the canonical order in reverse
  std::vector<GradientBucket> out;
  int64_t acc = 0;
  size_t hi = sizes.size();
  for (size_t i = sizes.size(); i-- > 0;) {
    acc += sizes[i];
    if (acc >= threshold) {
      out.push_back({offs[i], offs[hi]});
      hi = i;
      acc = 0;
    }
  }
  if (hi > 0) out.push_back({0, offs[hi]});
  return out;
}

void all_reduce(std::vector<std::vector<float>>& replica_grads,
                const std::vector<GradientBucket>& buckets, DType dtype) {
  if (replica_grads.size() <= 1) return;
  std::vector<float>& out = replica_grads[0];
  for (const GradientBucket& b : buckets) {
    for (size_t w = 1; w < replica_grads.size(); ++w) {
      const std::vector<float>& g = replica_grads[w];
      for (int64_t e = b.start; e < b.end; ++e) out[static_cast<size_t>(e)] += g[static_cast<size_t>(e)];
      if (dtype == DType::F16E)
        kernels::quantize_row(out.data() + b.start, static_cast<int>(b.end - b.start));
    }
  }
}

Trainer::Trainer(const Config& cfg, const Registry& reg) : cfg_(cfg) {
  task_ = reg.make_task(cfg_.get_str("task"), cfg_);
  init_from_config(reg);
}

Trainer::Trainer(const Config& cfg, std::unique_ptr<TaskBase> task, const Registry& reg)
    : cfg_(cfg), task_(std::move(task)) {
  if (!task_) throw ConfigError("trainer: null task");
  init_from_config(reg);
}

void Trainer::init_from_config(const Registry& reg) {
  workers_ = static_cast<int>(cfg_.get_int("workers"));
  accum_ = static_cast<int>(cfg_.get_int("accum"));
  if (workers_ < 1 || accum_ < 1)
    throw ConfigError("trainer: workers and accum must be at least 1");
  fp16_ = cfg_.get_bool("fp16");
  max_epochs_ = static_cast<int>(cfg_.get_int("max_epochs"));
  if (max_epochs_ < 1) throw ConfigError("trainer: max_epochs must be at least 1");
  seed_ = static_cast<uint64_t>(cfg_.get_int("seed"));

  if (cfg_.get_int("src_vocab") == 0)
    cfg_.set_user("src_vocab", static_cast<int64_t>(task_->source_dict().size()));
  if (cfg_.get_int("tgt_vocab") == 0)
    cfg_.set_user("tgt_vocab", static_cast<int64_t>(task_->target_dict().size()));

  const std::string base = reg.architecture(cfg_.get_str("arch")).base_model;
  model_ = reg.make_model(base, cfg_, seed_);
  criterion_ = reg.make_criterion(cfg_.get_str("criterion"), cfg_);
  optimizer_ = reg.make_optimizer(cfg_.get_str("optimizer"), cfg_, model_->num_params());
  scheduler_ = reg.make_scheduler(cfg_.get_str("scheduler"), cfg_);
  if (fp16_)
    scaler_ = std::make_unique<LossScaler>(
        cfg_.get_real("fp16_init_scale"), cfg_.get_int("fp16_scale_window"),
        cfg_.get_real("fp16_min_scale"), cfg_.get_real("fp16_max_scale"));

  std::vector<int64_t> sizes;
  for (const auto& e : model_->manifest()) sizes.push_back(e.numel);
  buckets_ = bucket_gradients(sizes, cfg_.get_int("bucket_threshold"));

  const int64_t ms = cfg_.get_int("max_sentences");
  plan_ = make_batches(task_->train_pairs(), cfg_.get_int("max_tokens"),
                       ms > 0 ? std::optional<int>(static_cast<int>(ms)) : std::nullopt,
                       seed_);
  epoch_ = 1;
  pos_ = 0;
  order_ = plan_.batches.empty() ? std::vector<int>{} : shuffle_epoch(plan_, 1);

  for (int w = 0; w < workers_; ++w) {
    replicas_.push_back(model_->clone());
    grads_.emplace_back(static_cast<size_t>(model_->num_params()), 0.0f);
  }
  rebroadcast();
}

const LossScaler& Trainer::scaler() const {
  if (!scaler_) throw ConfigError("trainer: loss scaler exists only in fp16 mode");
  return *scaler_;
}

void Trainer::rebroadcast() {
  for (auto& r : replicas_) {
    std::memcpy(r->params().data(), model_->params().data(),
                static_cast<size_t>(model_->num_params()) * sizeof(float));
    if (fp16_)
      kernels::quantize_row(r->params().data(), static_cast<int>(r->params().size()));
  }
}

void Trainer::restore_progress(int64_t step, int epoch, int cursor) {
  if (step < 0 || epoch < 1 || cursor < 0 ||
      cursor > static_cast<int>(plan_.batches.size()))
    throw IntegrityError("trainer: restored progress out of range");
  step_ = step;
  epoch_ = epoch;
  pos_ = cursor;
  order_ = plan_.batches.empty() ? std::vector<int>{} : shuffle_epoch(plan_, epoch_);
}

void Trainer::restore_scaler(double scale, int64_t successes) {
  if (!scaler_) throw IntegrityError("trainer: scaler state present but fp16 is off");
  scaler_->restore(scale, successes);
}

std::optional<MiniBatch> Trainer::next_batch() {
  if (plan_.batches.empty()) return std::nullopt;
  if (pos_ >= static_cast<int>(order_.size())) {
    if (epoch_ >= max_epochs_) return std::nullopt;
    ++epoch_;
    order_ = shuffle_epoch(plan_, epoch_);
    pos_ = 0;
  }
  const std::vector<int>& members = plan_.batches[static_cast<size_t>(order_[static_cast<size_t>(pos_)])];
  ++pos_;
  return make_minibatch(task_->train_pairs(), members);
}

std::vector<std::vector<MiniBatch>> Trainer::split_batch(const MiniBatch& batch) const {
  // row-wise split of one global minibatch into W*A sub-batches, as equal
  // as possible, preserving row order; (W, A) stays a throughput knob
  const int groups = workers_ * accum_;
  const int rows = batch.rows;
  const int base = rows / groups, rem = rows % groups;
  std::vector<std::vector<MiniBatch>> out(static_cast<size_t>(workers_));
  int row = 0;
  for (int g = 0; g < groups; ++g) {
    const int take = base + (g < rem ? 1 : 0);
    std::vector<int> members(batch.members.begin() + row, batch.members.begin() + row + take);
    row += take;
    out[static_cast<size_t>(g / accum_)].push_back(
        make_minibatch(task_->train_pairs(), members));
  }
  return out;
}

std::optional<StepStats> Trainer::train_one() {
  std::optional<MiniBatch> batch = next_batch();
  if (!batch) return std::nullopt;
  return train_step(split_batch(*batch));
}

StepStats Trainer::train_step(const std::vector<std::vector<MiniBatch>>& sub) {
  if (static_cast<int>(sub.size()) != workers_)
    throw ShapeError("train_step: need one sub-batch list per replica");
  for (const auto& list : sub)
    if (static_cast<int>(list.size()) != accum_)
      throw ShapeError("train_step: every replica takes exactly accum sub-batches");

  const DType dt = fp16_ ? DType::F16E : DType::F32;
  const double scale = fp16_ ? scaler_->scale() : 1.0;
  StepStats stats;
  stats.step = step_ + 1;
  if (fp16_) stats.scale = scale;

  for (int w = 0; w < workers_; ++w) {
    std::fill(grads_[static_cast<size_t>(w)].begin(), grads_[static_cast<size_t>(w)].end(), 0.0f);
    for (int a = 0; a < accum_; ++a) {
      const MiniBatch& b = sub[static_cast<size_t>(w)][static_cast<size_t>(a)];
      if (b.rows == 0) continue;
      ModelBase& replica = *replicas_[static_cast<size_t>(w)];
      replica.set_train_step(step_ * static_cast<int64_t>(workers_) * accum_ +
                             static_cast<int64_t>(w) * accum_ + a);
      Tape tape{replica.params(), dt};
      CriterionOutput out = criterion_->compute(replica, b, tape);
      stats.loss += out.loss;
      stats.nll += out.nll;
      stats.ntokens += out.ntokens;
      stats.ncorrect += out.ncorrect;
      // the loss-scale multiply lands here: seeding backward with the
      // scale is the same as scaling the loss right after the forward
      tape.backward(out.loss_node, static_cast<float>(scale), grads_[static_cast<size_t>(w)]);
    }
  }
  if (stats.ntokens == 0) throw ShapeError("train_step: zero target tokens in the minibatch");

  all_reduce(grads_, buckets_, dt);
  std::vector<float>& g = grads_[0];

  if (fp16_) {
    bool overflowed = false;
    for (float v : g)
      if (!std::isfinite(v)) {
        overflowed = true;
        break;
      }
    if (overflow_injector_ && overflow_injector_(stats.step)) overflowed = true;
    if (overflowed) {
      stats.skipped = true;
      scaler_->update(true);  // may raise the divergence error at the floor
      return stats;
    }
    const float fscale = static_cast<float>(scale);
    for (float& v : g) v /= fscale;
  }

  const float ftokens = static_cast<float>(stats.ntokens);
  for (float& v : g) v /= ftokens;

  stats.lr = scheduler_->lr(stats.step);
  optimizer_->apply(model_->params(), g, stats.lr);
  step_ = stats.step;
  if (fp16_) scaler_->update(false);
  rebroadcast();
  return stats;
}

EvalStats Trainer::evaluate(const std::vector<SequencePair>& pairs) const {
  EvalStats out;
  if (pairs.empty()) return out;
  EpochPlan plan = make_batches(pairs, cfg_.get_int("max_tokens"), std::nullopt, 0);
  for (const auto& members : plan.batches) {
    MiniBatch b = make_minibatch(pairs, members);
    Tape tape{model_->params()};
    CriterionOutput c = criterion_->compute(*model_, b, tape);
    out.loss += c.loss;
    out.nll += c.nll;
    out.ntokens += c.ntokens;
    out.ncorrect += c.ncorrect;
  }
  return out;
}

}  // namespace seqforge
