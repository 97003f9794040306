#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seqforge/common.hpp"

namespace seqforge {

// Symbol table with the four fixed reserved ids. Corpus symbols start at
// id 4, ordered by descending count with lexicographic tie-break.
class Dictionary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kPad = 1;
  static constexpr int kEos = 2;
  static constexpr int kUnk = 3;
  static constexpr int kNumReserved = 4;

  Dictionary();

  int add_symbol(const std::string& sym, int64_t count);
  int index(const std::string& sym) const;  // unk fallback
  const std::string& symbol(int id) const;
  int size() const { return static_cast<int>(id_to_sym_.size()); }
  int64_t count(int id) const;

  // per-token lookup with unk fallback, then eos appended
  std::vector<int> encode(const std::vector<std::string>& tokens) const;
  // inverse map for generation output; skips bos/pad, stops at nothing
  std::string decode(std::span<const int> ids, bool keep_eos = false) const;

  void save(const std::string& path) const;
  static Dictionary load(const std::string& path);

 private:
  std::vector<std::string> id_to_sym_;
  std::vector<int64_t> counts_;
  // flat sorted map keeps iteration deterministic without tree plumbing
  std::vector<std::pair<std::string, int>> sym_to_id_;
  int find(const std::string& sym) const;
};

Dictionary build_dictionary(const std::vector<std::vector<std::string>>& corpus,
                            int64_t min_count);

struct SequencePair {
  std::vector<int> source;  // eos-terminated
  std::vector<int> target;  // eos-terminated
  int corpus_index = 0;
};

struct MiniBatch {
  int rows = 0;
  int src_width = 0;  // S_max
  int tgt_width = 0;  // T_max (same for input and output sides)
  std::vector<int> source;      // rows x src_width, right-padded with pad
  std::vector<int> target_in;   // rows x tgt_width, bos-prefixed
  std::vector<int> target_out;  // rows x tgt_width, eos-terminated
  std::vector<int> src_lens;
  std::vector<int> tgt_lens;
  int64_t ntokens = 0;  // non-pad target-output tokens
  std::vector<int> members;  // corpus indices, row order

  int src_at(int r, int c) const { return source[static_cast<size_t>(r) * src_width + c]; }
  int tin_at(int r, int c) const { return target_in[static_cast<size_t>(r) * tgt_width + c]; }
  int tout_at(int r, int c) const { return target_out[static_cast<size_t>(r) * tgt_width + c]; }
};

// Fixed batch membership for the whole run; only the order is reshuffled
// between epochs.
struct EpochPlan {
  std::vector<std::vector<int>> batches;  // corpus indices, packed row order
  uint64_t shuffle_seed = 0;
  int epoch = 0;  // cursor of the epoch most recently dealt (0 = none yet)
};

// Sorts by (target length, source length, corpus index) and packs greedy
// runs under cost = rows * max(S_max, T_max) <= max_tokens. A pair that
// alone exceeds the budget becomes a singleton batch and logs a warning.
EpochPlan make_batches(const std::vector<SequencePair>& pairs, int64_t max_tokens,
                       std::optional<int> max_sentences, uint64_t shuffle_seed);

// Permutation of batch indices for one epoch, drawn from
// RngStream(plan.shuffle_seed, stream_id=epoch). epoch >= 1.
std::vector<int> shuffle_epoch(const EpochPlan& plan, int epoch);

// Materializes the padded id matrices for one membership set.
MiniBatch make_minibatch(const std::vector<SequencePair>& pairs,
                         const std::vector<int>& members);

// Plain-text parallel corpus: one whitespace-tokenized sentence per line.
std::vector<std::vector<std::string>> read_tokenized_lines(const std::string& path);
std::vector<SequencePair> load_parallel_corpus(const std::string& src_path,
                                               const std::string& tgt_path,
                                               const Dictionary& src_dict,
                                               const Dictionary& tgt_dict);

}  // namespace seqforge
