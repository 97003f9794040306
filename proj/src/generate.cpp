#include "seqforge/generate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "seqforge/common.hpp"
#include "seqforge/data.hpp"
#include "seqforge/kernels.hpp"
#include "seqforge/rng.hpp"

namespace seqforge {

GenConfig gen_config_from(const Config& cfg) {
  GenConfig g;
  g.beam = static_cast<int>(cfg.get_int("beam"));
  g.lenpen = cfg.get_real("lenpen");
  g.max_len = static_cast<int>(cfg.get_int("max_len"));
  g.diverse_groups = static_cast<int>(cfg.get_int("diverse_groups"));
  g.diverse_strength = cfg.get_real("diverse_strength");
  g.topk = static_cast<int>(cfg.get_int("topk"));
  g.temperature = cfg.get_real("temperature");
  g.seed = static_cast<uint64_t>(cfg.get_int("seed"));
  return g;
}

double score_hypothesis(double cum_logprob, int64_t length, double alpha) {
  if (length < 1) throw ShapeError("score_hypothesis: length must be at least 1");
  if (alpha == 0.0) return cum_logprob;
  return cum_logprob / std::pow(static_cast<double>(length), alpha);
}

namespace {

void validate_common(const GenConfig& cfg) {
  if (cfg.beam < 1) throw ConfigError("generation: beam must be at least 1");
  if (cfg.lenpen < 0.0) throw ConfigError("generation: lenpen must be non-negative");
  if (cfg.max_len < 0) throw ConfigError("generation: max_len must be non-negative");
  if (cfg.diverse_groups < 1 || cfg.beam % cfg.diverse_groups != 0)
    throw ConfigError("generation: diverse_groups must divide beam");
  if (cfg.topk < 1) throw ConfigError("generation: topk must be at least 1");
  if (!(cfg.temperature > 0.0))
    throw ConfigError("generation: temperature must be positive");
}

// generated-token budget; the decoder position budget caps it from above
int length_cap(const GenConfig& cfg, int src_len, int max_positions) {
  const int want = cfg.max_len > 0 ? cfg.max_len : 2 * src_len + 8;
  return std::max(1, std::min(want, max_positions));
}

// ordering of the final n-best list
bool better_hyp(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.finish_step != b.finish_step) return a.finish_step < b.finish_step;
  return a.tokens < b.tokens;
}

struct Active {
  std::vector<int> tokens;
  std::vector<float> steps;
  double cum = 0.0;
  int lrow = 0;  // row in the current logits block
};

struct Candidate {
  int hyp = 0;
  int token = 0;
  float lp = 0.0f;  // true log-probability of the continuation
  double key = 0.0;  // selection key: cum + lp - diversity dock
};

Hypothesis finish(const Active& parent, float lp, double alpha) {
  Hypothesis h;
  h.tokens = parent.tokens;
  h.tokens.push_back(Dictionary::kEos);
  h.step_scores = parent.steps;
  h.step_scores.push_back(lp);
  h.cum_logprob = parent.cum + lp;
  h.finished = true;
  h.finish_step = static_cast<int>(h.tokens.size());
  h.score = score_hypothesis(h.cum_logprob, h.finish_step, alpha);
  return h;
}

// cache-free oracle path: re-decode every live prefix from scratch and
// keep only the final position's logits
Tensor recompute_logits(const TransformerModel& model, const MiniBatch& batch,
                        const std::vector<Active*>& live,
                        const std::vector<int>& live_sentence, int prefix_len) {
  const int R = static_cast<int>(live.size());
  const int T = prefix_len + 1;
  MiniBatch mb;
  mb.rows = R;
  mb.src_width = batch.src_width;
  mb.tgt_width = T;
  mb.source.resize(static_cast<size_t>(R) * batch.src_width);
  mb.target_in.assign(static_cast<size_t>(R) * T, Dictionary::kPad);
  mb.target_out.assign(static_cast<size_t>(R) * T, Dictionary::kPad);
  mb.src_lens.resize(static_cast<size_t>(R));
  mb.tgt_lens.assign(static_cast<size_t>(R), T);
  for (int i = 0; i < R; ++i) {
    const int s = live_sentence[static_cast<size_t>(i)];
    std::memcpy(mb.source.data() + static_cast<size_t>(i) * batch.src_width,
                batch.source.data() + static_cast<size_t>(s) * batch.src_width,
                sizeof(int) * static_cast<size_t>(batch.src_width));
    mb.src_lens[static_cast<size_t>(i)] = batch.src_lens[static_cast<size_t>(s)];
    int* tin = mb.target_in.data() + static_cast<size_t>(i) * T;
    tin[0] = Dictionary::kBos;
    for (int t = 0; t < prefix_len; ++t)
      tin[t + 1] = live[static_cast<size_t>(i)]->tokens[static_cast<size_t>(t)];
  }
  Tensor full = model.forward_decoder_full(mb);
  const int V = full.cols();
  Tensor out({R, V});
  for (int i = 0; i < R; ++i)
    std::memcpy(out.data() + static_cast<size_t>(i) * V,
                full.data() + (static_cast<size_t>(i) * T + (T - 1)) * V,
                sizeof(float) * static_cast<size_t>(V));
  return out;
}

std::vector<std::vector<Hypothesis>> beam_engine(const TransformerModel& model,
                                                 const MiniBatch& batch,
                                                 const GenConfig& cfg, int groups,
                                                 double lambda) {
  validate_common(cfg);
  if (batch.rows < 1) throw ShapeError("generation: batch has no rows");
  const int B = batch.rows;
  const int beam = cfg.beam;
  const int bg = beam / groups;
  const int V = model.target_vocab();

  const EncoderOut enc = model.forward_encoder(batch);

  std::vector<int> cap(static_cast<size_t>(B));
  std::vector<char> done(static_cast<size_t>(B), 0);
  std::vector<std::vector<Hypothesis>> pool(static_cast<size_t>(B));
  std::vector<std::vector<std::vector<Active>>> act(static_cast<size_t>(B));

  bool all_done = true;
  for (int s = 0; s < B; ++s) {
    cap[static_cast<size_t>(s)] = length_cap(cfg, enc.src_lens[static_cast<size_t>(s)],
                                             model.max_positions());
    act[static_cast<size_t>(s)].assign(static_cast<size_t>(groups), {});
    if (enc.src_lens[static_cast<size_t>(s)] == 0) {
      // an empty source row decodes to the bare end marker
      Hypothesis h;
      h.tokens = {Dictionary::kEos};
      h.finished = true;
      h.finish_step = 1;
      h.score = score_hypothesis(0.0, 1, cfg.lenpen);
      pool[static_cast<size_t>(s)].push_back(std::move(h));
      done[static_cast<size_t>(s)] = 1;
      continue;
    }
    for (int g = 0; g < groups; ++g)
      act[static_cast<size_t>(s)][static_cast<size_t>(g)].push_back(Active{});
    all_done = false;
  }

  IncrementalState st;
  Tensor logits;

  auto live_refs = [&](std::vector<Active*>& live, std::vector<int>& sent) {
    live.clear();
    sent.clear();
    for (int s = 0; s < B; ++s) {
      if (done[static_cast<size_t>(s)]) continue;
      for (auto& g : act[static_cast<size_t>(s)])
        for (auto& a : g) {
          live.push_back(&a);
          sent.push_back(s);
        }
    }
  };

  if (!all_done) {
    if (cfg.no_cache) {
      std::vector<Active*> live;
      std::vector<int> sent;
      live_refs(live, sent);
      logits = recompute_logits(model, batch, live, sent, 0);
      int i = 0;
      for (int s = 0; s < B; ++s)
        if (!done[static_cast<size_t>(s)])
          for (auto& g : act[static_cast<size_t>(s)])
            for (auto& a : g) a.lrow = i++;
    } else {
      std::vector<int> r2s(static_cast<size_t>(B) * beam);
      for (int s = 0; s < B; ++s)
        for (int j = 0; j < beam; ++j) r2s[static_cast<size_t>(s) * beam + j] = s;
      st = model.make_incremental_state(enc, r2s);
      const std::vector<int> bos(static_cast<size_t>(B) * beam, Dictionary::kBos);
      logits = model.forward_decoder_step(bos, st);
      for (int s = 0; s < B; ++s)
        if (!done[static_cast<size_t>(s)])
          for (auto& g : act[static_cast<size_t>(s)])
            for (auto& a : g) a.lrow = s * beam;
    }
  }

  std::vector<Candidate> cands;
  std::vector<int> used(static_cast<size_t>(V));

  for (int t = 0; !all_done; ++t) {
    // ---- selection on this step's logits
    for (int s = 0; s < B; ++s) {
      if (done[static_cast<size_t>(s)]) continue;
      const bool force_eos = (t == cap[static_cast<size_t>(s)] - 1);
      std::fill(used.begin(), used.end(), 0);
      bool any_active = false;
      for (int g = 0; g < groups; ++g) {
        auto& ag = act[static_cast<size_t>(s)][static_cast<size_t>(g)];
        cands.clear();
        for (int k = 0; k < static_cast<int>(ag.size()); ++k) {
          const float* row = logits.data() + static_cast<size_t>(ag[static_cast<size_t>(k)].lrow) * V;
          float mx, lse;
          kernels::logsumexp_row(row, V, &mx, &lse);
          if (force_eos) {
            const float lp = row[Dictionary::kEos] - lse;
            cands.push_back({k, Dictionary::kEos, lp,
                             ag[static_cast<size_t>(k)].cum + lp});
          } else {
            for (int v = 0; v < V; ++v) {
              const float lp = row[v] - lse;
              double key = ag[static_cast<size_t>(k)].cum + lp;
              if (g > 0 && used[static_cast<size_t>(v)] > 0)
                key -= lambda * used[static_cast<size_t>(v)];
              cands.push_back({k, v, lp, key});
            }
          }
        }
        // stable: ties keep (hypothesis order, ascending token) generation order
        std::stable_sort(cands.begin(), cands.end(),
                         [](const Candidate& a, const Candidate& b) {
                           return a.key > b.key;
                         });
        if (static_cast<int>(cands.size()) > 2 * bg) cands.resize(static_cast<size_t>(2 * bg));
        std::vector<Active> next;
        for (const Candidate& cd : cands) {
          const Active& parent = ag[static_cast<size_t>(cd.hyp)];
          if (cd.token == Dictionary::kEos) {
            pool[static_cast<size_t>(s)].push_back(finish(parent, cd.lp, cfg.lenpen));
          } else if (static_cast<int>(next.size()) < bg) {
            Active a;
            a.tokens = parent.tokens;
            a.tokens.push_back(cd.token);
            a.steps = parent.steps;
            a.steps.push_back(cd.lp);
            a.cum = parent.cum + cd.lp;
            a.lrow = parent.lrow;  // reorder origin until reassigned
            next.push_back(std::move(a));
          }
        }
        for (const Active& a : next) ++used[static_cast<size_t>(a.tokens.back())];
        ag = std::move(next);
        any_active = any_active || !ag.empty();
      }

      if (!any_active) {
        done[static_cast<size_t>(s)] = 1;
      } else if (static_cast<int>(pool[static_cast<size_t>(s)].size()) >= beam) {
        // admissible early stop: the best an unfinished hypothesis can
        // still reach is cum / cap^alpha (log-probs never raise cum)
        std::vector<double> scores;
        scores.reserve(pool[static_cast<size_t>(s)].size());
        for (const Hypothesis& h : pool[static_cast<size_t>(s)]) scores.push_back(h.score);
        std::nth_element(scores.begin(), scores.begin() + (beam - 1), scores.end(),
                         std::greater<double>());
        const double worst_kept = scores[static_cast<size_t>(beam - 1)];
        double best_alive = -std::numeric_limits<double>::infinity();
        for (const auto& g : act[static_cast<size_t>(s)])
          for (const Active& a : g)
            best_alive = std::max(
                best_alive, score_hypothesis(a.cum, cap[static_cast<size_t>(s)], cfg.lenpen));
        if (worst_kept >= best_alive) done[static_cast<size_t>(s)] = 1;
      }
    }

    all_done = true;
    for (int s = 0; s < B; ++s)
      if (!done[static_cast<size_t>(s)]) all_done = false;
    if (all_done) break;

    // ---- produce logits for the survivors
    if (cfg.no_cache) {
      std::vector<Active*> live;
      std::vector<int> sent;
      live_refs(live, sent);
      logits = recompute_logits(model, batch, live, sent, t + 1);
      for (int i = 0; i < static_cast<int>(live.size()); ++i)
        live[static_cast<size_t>(i)]->lrow = i;
    } else {
      std::vector<int> order(static_cast<size_t>(B) * beam);
      std::vector<int> last(static_cast<size_t>(B) * beam, Dictionary::kEos);
      for (int s = 0; s < B; ++s) {
        for (int g = 0; g < groups; ++g) {
          for (int k = 0; k < bg; ++k) {
            const int row = s * beam + g * bg + k;
            auto& ag = act[static_cast<size_t>(s)][static_cast<size_t>(g)];
            if (!done[static_cast<size_t>(s)] && k < static_cast<int>(ag.size())) {
              Active& a = ag[static_cast<size_t>(k)];
              order[static_cast<size_t>(row)] = a.lrow;
              last[static_cast<size_t>(row)] = a.tokens.back();
              a.lrow = row;
            } else {
              order[static_cast<size_t>(row)] = row;  // parked row, fed a dummy
            }
          }
        }
      }
      TransformerModel::reorder_incremental_state(st, order);
      logits = model.forward_decoder_step(last, st);
    }
  }

  for (int s = 0; s < B; ++s) {
    auto& p = pool[static_cast<size_t>(s)];
    std::sort(p.begin(), p.end(), better_hyp);
    if (static_cast<int>(p.size()) > beam) p.resize(static_cast<size_t>(beam));
  }
  return pool;
}

}  // namespace

std::vector<std::vector<Hypothesis>> beam_search(const TransformerModel& model,
                                                 const MiniBatch& batch,
                                                 const GenConfig& cfg) {
  return beam_engine(model, batch, cfg, 1, 0.0);
}

std::vector<std::vector<Hypothesis>> diverse_beam_search(const TransformerModel& model,
                                                         const MiniBatch& batch,
                                                         const GenConfig& cfg) {
  return beam_engine(model, batch, cfg, cfg.diverse_groups, cfg.diverse_strength);
}

int sample_from_topk(const float* logits, int vocab, int k, double temperature,
                     double u) {
  if (k < 1 || k > vocab)
    throw ConfigError("sampling: topk must lie in [1, vocab]");
  if (!(temperature > 0.0)) throw ConfigError("sampling: temperature must be positive");
  // k best under logits/temperature; temperature > 0 preserves order, so
  // select on raw logits with ties to the lower id
  std::vector<int> ids(static_cast<size_t>(vocab));
  for (int v = 0; v < vocab; ++v) ids[static_cast<size_t>(v)] = v;
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) {
    return logits[a] > logits[b];
  });
  ids.resize(static_cast<size_t>(k));

  double m = -std::numeric_limits<double>::infinity();
  for (int v : ids) m = std::max(m, static_cast<double>(logits[v]) / temperature);
  double z = 0.0;
  std::vector<double> w(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    w[static_cast<size_t>(i)] =
        std::exp(static_cast<double>(logits[ids[static_cast<size_t>(i)]]) / temperature - m);
    z += w[static_cast<size_t>(i)];
  }
  double acc = 0.0;
  for (int i = 0; i < k; ++i) {
    acc += w[static_cast<size_t>(i)] / z;
    if (u < acc) return ids[static_cast<size_t>(i)];
  }
  return ids.back();
}

std::vector<Hypothesis> top_k_sample(const TransformerModel& model,
                                     const MiniBatch& batch, const GenConfig& cfg,
                                     const std::vector<uint64_t>& stream_ids) {
  validate_common(cfg);
  if (batch.rows < 1) throw ShapeError("generation: batch has no rows");
  const int B = batch.rows;
  const int V = model.target_vocab();
  if (cfg.topk > V) throw ConfigError("sampling: topk exceeds the vocabulary");
  if (!stream_ids.empty() && static_cast<int>(stream_ids.size()) != B)
    throw ShapeError("sampling: one stream id per sentence");

  const EncoderOut enc = model.forward_encoder(batch);
  std::vector<Hypothesis> out(static_cast<size_t>(B));
  std::vector<RngStream> rng;
  rng.reserve(static_cast<size_t>(B));
  for (int s = 0; s < B; ++s) {
    const uint64_t id = stream_ids.empty() ? static_cast<uint64_t>(s)
                                           : stream_ids[static_cast<size_t>(s)];
    rng.emplace_back(cfg.seed, kStreamSamplingBase | id);
  }

  std::vector<int> cap(static_cast<size_t>(B));
  std::vector<char> done(static_cast<size_t>(B), 0);
  bool all_done = true;
  for (int s = 0; s < B; ++s) {
    cap[static_cast<size_t>(s)] = length_cap(cfg, enc.src_lens[static_cast<size_t>(s)],
                                             model.max_positions());
    if (enc.src_lens[static_cast<size_t>(s)] == 0) {
      out[static_cast<size_t>(s)].tokens = {Dictionary::kEos};
      out[static_cast<size_t>(s)].finished = true;
      out[static_cast<size_t>(s)].finish_step = 1;
      out[static_cast<size_t>(s)].score = score_hypothesis(0.0, 1, cfg.lenpen);
      done[static_cast<size_t>(s)] = 1;
    } else {
      all_done = false;
    }
  }
  if (all_done) return out;

  std::vector<int> r2s(static_cast<size_t>(B));
  for (int s = 0; s < B; ++s) r2s[static_cast<size_t>(s)] = s;
  IncrementalState st = model.make_incremental_state(enc, r2s);
  std::vector<int> last(static_cast<size_t>(B), Dictionary::kBos);

  for (int t = 0; !all_done; ++t) {
    const Tensor logits = model.forward_decoder_step(last, st);
    all_done = true;
    for (int s = 0; s < B; ++s) {
      if (done[static_cast<size_t>(s)]) {
        last[static_cast<size_t>(s)] = Dictionary::kEos;
        continue;
      }
      const float* row = logits.data() + static_cast<size_t>(s) * V;
      const bool force_eos = (t == cap[static_cast<size_t>(s)] - 1);
      int tok;
      if (force_eos) {
        tok = Dictionary::kEos;
      } else {
        const double u = rng[static_cast<size_t>(s)].next_double();
        tok = sample_from_topk(row, V, cfg.topk, cfg.temperature, u);
      }
      // step scores stay true model log-probs; temperature is a draw knob
      float mx, lse;
      kernels::logsumexp_row(row, V, &mx, &lse);
      const float lp = row[tok] - lse;
      Hypothesis& h = out[static_cast<size_t>(s)];
      h.tokens.push_back(tok);
      h.step_scores.push_back(lp);
      h.cum_logprob += lp;
      if (tok == Dictionary::kEos) {
        h.finished = true;
        h.finish_step = static_cast<int>(h.tokens.size());
        h.score = score_hypothesis(h.cum_logprob, h.finish_step, cfg.lenpen);
        done[static_cast<size_t>(s)] = 1;
      } else {
        all_done = false;
      }
      last[static_cast<size_t>(s)] = tok;
    }
  }
  return out;
}

std::vector<std::vector<int>> batch_for_inference(
    const std::vector<std::vector<int>>& sources, int64_t max_tokens) {
  if (max_tokens < 1) throw ConfigError("batch_for_inference: max_tokens must be positive");
  std::vector<int> order(sources.size());
  for (size_t i = 0; i < sources.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return sources[static_cast<size_t>(a)].size() > sources[static_cast<size_t>(b)].size();
  });

  std::vector<std::vector<int>> batches;
  size_t widest = 0;
  for (int idx : order) {
    const size_t len = sources[static_cast<size_t>(idx)].size();
    if (static_cast<int64_t>(len) > max_tokens)
      throw CapacityError("batch_for_inference: a source of " + std::to_string(len) +
                          " tokens exceeds the " + std::to_string(max_tokens) +
                          "-token budget");
    if (batches.empty() ||
        static_cast<int64_t>((batches.back().size() + 1) * widest) > max_tokens) {
      batches.emplace_back();
      widest = len;  // lengths arrive descending, the first row is widest
    }
    batches.back().push_back(idx);
  }
  return batches;
}

}  // namespace seqforge
