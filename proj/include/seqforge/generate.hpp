#pragma once

#include <cstdint>
#include <vector>

#include "seqforge/config.hpp"
#include "seqforge/model.hpp"

namespace seqforge {

struct GenConfig {
  int beam = 4;
  double lenpen = 0.6;          // alpha in cum/len^alpha
  int max_len = 0;              // generated-token cap; 0 = 2*source_len + 8
  int diverse_groups = 1;       // G (diverse beam only); must divide beam
  double diverse_strength = 0.5;  // lambda
  int topk = 1;                 // sampling only
  double temperature = 1.0;     // sampling only
  uint64_t seed = 1;            // sampling stream seed
  bool no_cache = false;        // oracle mode: re-decode the full prefix each step
};

// fills the generation-relevant fields from a resolved config
GenConfig gen_config_from(const Config& cfg);

struct Hypothesis {
  std::vector<int> tokens;       // generated ids, eos-terminated when finished
  std::vector<float> step_scores;  // per-token log-probabilities
  double cum_logprob = 0.0;      // running sum of step_scores
  bool finished = false;
  int finish_step = 0;           // == tokens.size() for finished hypotheses
  double score = 0.0;            // score_hypothesis at finish time
};

// length-penalized ranking score: cum / length^alpha
double score_hypothesis(double cum_logprob, int64_t length, double alpha);

// Standard beam search over the incremental decoder. Expands every active
// hypothesis with all vocabulary continuations, keeps the top 2*beam
// candidates per sentence, banks eos endings, and retains the top beam
// unfinished rows. Stops per sentence once no unfinished hypothesis can
// still beat the worst banked score (admissible for alpha >= 0), or at
// the length cap, where eos is forced. Returns up to beam finished
// hypotheses per sentence, sorted by score with ties broken by earlier
// finish step, then lexicographic tokens. A sentence whose source row is
// empty yields the single hypothesis [eos].
std::vector<std::vector<Hypothesis>> beam_search(const TransformerModel& model,
                                                 const MiniBatch& batch,
                                                 const GenConfig& cfg);

// Diverse variant: the beam is split into diverse_groups groups expanded
// sequentially per step; a candidate token's selection key is docked
// lambda for each time a prior group picked that token this step. With
// one group this is exactly beam_search.
std::vector<std::vector<Hypothesis>> diverse_beam_search(const TransformerModel& model,
                                                         const MiniBatch& batch,
                                                         const GenConfig& cfg);

// Draws one hypothesis per sentence: per step, the topk highest-scoring
// tokens under logits/temperature are renormalized and sampled. Each
// sentence draws from RngStream(cfg.seed, sampling stream | stream_ids[s]),
// so results do not depend on batch composition. stream_ids defaults to
// the row index when empty.
std::vector<Hypothesis> top_k_sample(const TransformerModel& model,
                                     const MiniBatch& batch, const GenConfig& cfg,
                                     const std::vector<uint64_t>& stream_ids = {});

// The draw inside top_k_sample, exposed for direct testing: restricts to
// the k best tokens of logits/temperature (ties to the lower id),
// renormalizes, and returns the token picked by uniform u in [0,1).
int sample_from_topk(const float* logits, int vocab, int k, double temperature,
                     double u);

// Greedy packing of source-length lists under cost rows * max_padded_len
// <= max_tokens, longest first. Returns original-index groups in
// processing order; a single source longer than the budget is a capacity
// error.
std::vector<std::vector<int>> batch_for_inference(
    const std::vector<std::vector<int>>& sources, int64_t max_tokens);

}  // namespace seqforge
