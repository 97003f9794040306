#include "seqforge/tasks.hpp"

#include "seqforge/common.hpp"

namespace seqforge {

TranslationTask::TranslationTask(const Config& cfg) {
  const std::string train_src = cfg.get_str("train_src");
  const std::string train_tgt = cfg.get_str("train_tgt");
  const std::string valid_src = cfg.get_str("valid_src");
  const std::string valid_tgt = cfg.get_str("valid_tgt");
  if (train_src.empty() != train_tgt.empty())
    throw ConfigError("translation: train_src and train_tgt must be given together");
  if (valid_src.empty() != valid_tgt.empty())
    throw ConfigError("translation: valid_src and valid_tgt must be given together");

  const std::string dict_src = cfg.get_str("dict_src");
  const std::string dict_tgt = cfg.get_str("dict_tgt");
  const int64_t min_count = cfg.get_int("min_count");
  if (!dict_src.empty())
    src_dict_ = Dictionary::load(dict_src);
  else if (!train_src.empty())
    src_dict_ = build_dictionary(read_tokenized_lines(train_src), min_count);
  if (!dict_tgt.empty())
    tgt_dict_ = Dictionary::load(dict_tgt);
  else if (!train_tgt.empty())
    tgt_dict_ = build_dictionary(read_tokenized_lines(train_tgt), min_count);

  if (!train_src.empty())
    train_ = load_parallel_corpus(train_src, train_tgt, src_dict_, tgt_dict_);
  if (!valid_src.empty())
    valid_ = load_parallel_corpus(valid_src, valid_tgt, src_dict_, tgt_dict_);
}

}  // namespace seqforge
