#include "seqforge/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include "seqforge/log.hpp"
#include "seqforge/rng.hpp"

namespace seqforge {

Dictionary::Dictionary() {
  id_to_sym_ = {"<s>", "<pad>", "</s>", "<unk>"};
  counts_ = {0, 0, 0, 0};
  for (int i = 0; i < kNumReserved; ++i)
    sym_to_id_.emplace_back(id_to_sym_[static_cast<size_t>(i)], i);
  std::sort(sym_to_id_.begin(), sym_to_id_.end());
}

int Dictionary::find(const std::string& sym) const {
  auto it = std::lower_bound(sym_to_id_.begin(), sym_to_id_.end(), sym,
                             [](const auto& p, const std::string& s) { return p.first < s; });
  if (it != sym_to_id_.end() && it->first == sym) return it->second;
  return -1;
}

int Dictionary::add_symbol(const std::string& sym, int64_t count) {
  if (find(sym) >= 0) throw ConfigError("dictionary: duplicate symbol '" + sym + "'");
  int id = size();
  id_to_sym_.push_back(sym);
  counts_.push_back(count);
  auto it = std::lower_bound(sym_to_id_.begin(), sym_to_id_.end(),
                             std::make_pair(sym, 0));
  sym_to_id_.insert(it, {sym, id});
  return id;
}

int Dictionary::index(const std::string& sym) const {
  int id = find(sym);
  return id >= 0 ? id : kUnk;
}

const std::string& Dictionary::symbol(int id) const {
  if (id < 0 || id >= size()) throw BoundsError("dictionary: id out of range");
  return id_to_sym_[static_cast<size_t>(id)];
}

int64_t Dictionary::count(int id) const {
  if (id < 0 || id >= size()) throw BoundsError("dictionary: id out of range");
  return counts_[static_cast<size_t>(id)];
}

std::vector<int> Dictionary::encode(const std::vector<std::string>& tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size() + 1);
  for (const auto& t : tokens) out.push_back(index(t));
  out.push_back(kEos);
  return out;
}

std::string Dictionary::decode(std::span<const int> ids, bool keep_eos) const {
  std::string out;
  for (int id : ids) {
    if (id == kBos || id == kPad) continue;
    if (id == kEos && !keep_eos) continue;
    if (!out.empty()) out += ' ';
    out += symbol(id);
  }
  return out;
}

void Dictionary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("dictionary: cannot write " + path);
  for (int id = kNumReserved; id < size(); ++id)
    f << id_to_sym_[static_cast<size_t>(id)] << ' ' << counts_[static_cast<size_t>(id)] << '\n';
  if (!f.good()) throw IoError("dictionary: write failed for " + path);
}

Dictionary Dictionary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("dictionary: cannot read " + path);
  Dictionary d;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string sym;
    int64_t cnt;
    if (!(ss >> sym >> cnt)) throw IoError("dictionary: malformed line '" + line + "'");
    d.add_symbol(sym, cnt);
  }
  return d;
}

Dictionary build_dictionary(const std::vector<std::vector<std::string>>& corpus,
                            int64_t min_count) {
  if (min_count < 1) throw ConfigError("build_dictionary: min_count must be >= 1");
  std::map<std::string, int64_t> counts;
  for (const auto& sent : corpus)
    for (const auto& tok : sent) ++counts[tok];
  std::vector<std::pair<std::string, int64_t>> kept;
  for (const auto& [sym, cnt] : counts)
    if (cnt >= min_count) kept.emplace_back(sym, cnt);
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  Dictionary d;
  for (const auto& [sym, cnt] : kept) d.add_symbol(sym, cnt);
  return d;
}

EpochPlan make_batches(const std::vector<SequencePair>& pairs, int64_t max_tokens,
                       std::optional<int> max_sentences, uint64_t shuffle_seed) {
  if (max_tokens < 1) throw ConfigError("make_batches: max_tokens must be >= 1");
  if (max_sentences && *max_sentences < 1)
    throw ConfigError("make_batches: max_sentences must be >= 1");
  std::vector<int> order(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) order[i] = static_cast<int>(i);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& pa = pairs[static_cast<size_t>(a)];
    const auto& pb = pairs[static_cast<size_t>(b)];
    if (pa.target.size() != pb.target.size()) return pa.target.size() < pb.target.size();
    if (pa.source.size() != pb.source.size()) return pa.source.size() < pb.source.size();
    return pa.corpus_index < pb.corpus_index;
  });

  EpochPlan plan;
  plan.shuffle_seed = shuffle_seed;
  std::vector<int> cur;
  int64_t cur_s = 0, cur_t = 0;
  auto flush = [&] {
    if (!cur.empty()) plan.batches.push_back(std::move(cur));
    cur = {};
    cur_s = cur_t = 0;
  };
  for (int idx : order) {
    const auto& p = pairs[static_cast<size_t>(idx)];
    int64_t s = static_cast<int64_t>(p.source.size());
    int64_t t = static_cast<int64_t>(p.target.size());
    int64_t new_s = std::max(cur_s, s), new_t = std::max(cur_t, t);
    int64_t n = static_cast<int64_t>(cur.size()) + 1;
    int64_t cost = n * std::max(new_s, new_t);
    bool fits = cost <= max_tokens && (!max_sentences || n <= *max_sentences);
    if (!cur.empty() && !fits) flush();
    if (cur.empty() && std::max(s, t) > max_tokens)
      logging::warn("msg=oversized_singleton corpus_index=" +
                    std::to_string(p.corpus_index) +
                    " cost=" + std::to_string(std::max(s, t)) +
                    " max_tokens=" + std::to_string(max_tokens));
    cur.push_back(p.corpus_index);
    cur_s = std::max(cur_s, s);
    cur_t = std::max(cur_t, t);
    // an oversized singleton can never accept a second member: the next
    // fit test fails because its own cost already exceeds the budget
  }
  flush();
  return plan;
}

std::vector<int> shuffle_epoch(const EpochPlan& plan, int epoch) {
  if (epoch < 1) throw ConfigError("shuffle_epoch: epoch must be >= 1");
  std::vector<int> order(plan.batches.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  RngStream rng(plan.shuffle_seed, static_cast<uint64_t>(epoch));
  rng.shuffle(order);
  return order;
}

MiniBatch make_minibatch(const std::vector<SequencePair>& pairs,
                         const std::vector<int>& members) {
  // members hold corpus indices; locate the pairs (corpus order == vector
  // order for loaded corpora, but stay general)
  MiniBatch b;
  b.rows = static_cast<int>(members.size());
  std::vector<const SequencePair*> rows;
  rows.reserve(members.size());
  for (int ci : members) {
    const SequencePair* found = nullptr;
    if (ci >= 0 && ci < static_cast<int>(pairs.size()) &&
        pairs[static_cast<size_t>(ci)].corpus_index == ci) {
      found = &pairs[static_cast<size_t>(ci)];
    } else {
      for (const auto& p : pairs)
        if (p.corpus_index == ci) {
          found = &p;
          break;
        }
    }
    if (!found) throw BoundsError("make_minibatch: corpus index not present");
    rows.push_back(found);
  }
  for (const auto* p : rows) {
    b.src_width = std::max(b.src_width, static_cast<int>(p->source.size()));
    b.tgt_width = std::max(b.tgt_width, static_cast<int>(p->target.size()));
  }
  b.source.assign(static_cast<size_t>(b.rows) * b.src_width, Dictionary::kPad);
  b.target_in.assign(static_cast<size_t>(b.rows) * b.tgt_width, Dictionary::kPad);
  b.target_out.assign(static_cast<size_t>(b.rows) * b.tgt_width, Dictionary::kPad);
  for (int r = 0; r < b.rows; ++r) {
    const auto& src = rows[static_cast<size_t>(r)]->source;
    const auto& tgt = rows[static_cast<size_t>(r)]->target;
    for (size_t c = 0; c < src.size(); ++c)
      b.source[static_cast<size_t>(r) * b.src_width + c] = src[c];
    // input side: bos then the target without its closing eos
    b.target_in[static_cast<size_t>(r) * b.tgt_width] = Dictionary::kBos;
    for (size_t c = 0; c + 1 < tgt.size(); ++c)
      b.target_in[static_cast<size_t>(r) * b.tgt_width + c + 1] = tgt[c];
    for (size_t c = 0; c < tgt.size(); ++c)
      b.target_out[static_cast<size_t>(r) * b.tgt_width + c] = tgt[c];
    b.src_lens.push_back(static_cast<int>(src.size()));
    b.tgt_lens.push_back(static_cast<int>(tgt.size()));
    b.ntokens += static_cast<int64_t>(tgt.size());
    b.members.push_back(rows[static_cast<size_t>(r)]->corpus_index);
  }
  return b;
}

std::vector<std::vector<std::string>> read_tokenized_lines(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("corpus: cannot read " + path);
  std::vector<std::vector<std::string>> lines;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::vector<std::string> toks;
    std::string t;
    while (ss >> t) toks.push_back(t);
    lines.push_back(std::move(toks));
  }
  return lines;
}

std::vector<SequencePair> load_parallel_corpus(const std::string& src_path,
                                               const std::string& tgt_path,
                                               const Dictionary& src_dict,
                                               const Dictionary& tgt_dict) {
  auto src_lines = read_tokenized_lines(src_path);
  auto tgt_lines = read_tokenized_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size())
    throw IoError("corpus: line count mismatch between " + src_path + " and " + tgt_path);
  std::vector<SequencePair> pairs;
  pairs.reserve(src_lines.size());
  for (size_t i = 0; i < src_lines.size(); ++i) {
    SequencePair p;
    p.source = src_dict.encode(src_lines[i]);
    p.target = tgt_dict.encode(tgt_lines[i]);
    p.corpus_index = static_cast<int>(i);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace seqforge
