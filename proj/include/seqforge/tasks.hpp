#pragma once

#include <vector>

#include "seqforge/config.hpp"
#include "seqforge/plugins.hpp"

namespace seqforge {

// Owns both dictionaries plus the training (and optional validation)
// pairs. Dictionaries load from dict_src/dict_tgt when given, otherwise
// they are built from the training corpus at min_count.
class TranslationTask : public TaskBase {
 public:
  explicit TranslationTask(const Config& cfg);

  const Dictionary& source_dict() const override { return src_dict_; }
  const Dictionary& target_dict() const override { return tgt_dict_; }
  const std::vector<SequencePair>& train_pairs() const override { return train_; }
  const std::vector<SequencePair>& valid_pairs() const { return valid_; }

 private:
  Dictionary src_dict_, tgt_dict_;
  std::vector<SequencePair> train_, valid_;
};

}  // namespace seqforge
