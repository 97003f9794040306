#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "seqforge/config.hpp"
#include "seqforge/plugins.hpp"

namespace seqforge {

struct EncoderOut {
  Tensor states;              // (B * S) x d_model
  int batch = 0;
  int width = 0;              // padded source width S
  std::vector<int> src_lens;  // per sentence; positions >= len are pad
  DType dtype = DType::F32;
};

// Decode-time cache. Self-attention K/V grow t-major ([t][row][d]) so a
// step appends one rows*d block and existing entries never move; the
// attention kernels walk them with stride rows*d. Cross-attention K/V
// are precomputed per hypothesis row ([row][S][d], stride d).
struct IncrementalState {
  int step = 0;
  int rows = 0;
  int width = 0;  // encoder padded width S
  DType dtype = DType::F32;
  std::vector<int> src_lens;                         // per row
  std::vector<std::vector<float>> self_k, self_v;    // per decoder layer
  std::vector<std::vector<float>> cross_k, cross_v;  // per decoder layer
};

// Pre-norm encoder-decoder transformer with sinusoidal positions. The
// training forward records onto a Tape; the incremental path runs the
// same row kernels eagerly and must agree bitwise in FP32.
class TransformerModel : public ModelBase {
 public:
  TransformerModel(const Config& cfg, uint64_t seed);

  std::span<float> params() override { return params_; }
  std::span<const float> params() const override { return {params_.data(), params_.size()}; }
  const std::vector<ParamManifestEntry>& manifest() const override { return manifest_; }
  int64_t num_params() const override { return static_cast<int64_t>(params_.size()); }
  int forward_to_logits(Tape& tape, const MiniBatch& batch) const override;
  int target_vocab() const override { return tgt_vocab_; }
  int max_positions() const override { return max_positions_; }
  std::unique_ptr<ModelBase> clone() const override;
  void set_train_step(int64_t step) override { train_step_ = step; }

  EncoderOut forward_encoder(const MiniBatch& batch, DType dt = DType::F32) const;

  // full re-forward (encoder included) through the tape path; reads only
  // source fields and target_in — the cache-free reference for decoding
  Tensor forward_decoder_full(const MiniBatch& batch, DType dt = DType::F32) const;

  // row_to_sentence maps each hypothesis row to its sentence in enc
  IncrementalState make_incremental_state(const EncoderOut& enc,
                                          const std::vector<int>& row_to_sentence) const;

  // feeds one token per row at position state.step; returns rows x V logits
  Tensor forward_decoder_step(const std::vector<int>& last_tokens,
                              IncrementalState& state) const;

  // row i of every cached tensor becomes old row order[i]
  static void reorder_incremental_state(IncrementalState& state,
                                        const std::vector<int>& order);

  int source_vocab() const { return src_vocab_; }
  int embed_dim() const { return d_model_; }
  bool shares_embeddings() const { return share_; }

 private:
  struct AttnRefs {
    ParamRef wq, bq, wk, bk, wv, bv, wo, bo;
  };
  struct EncLayer {
    ParamRef ln1g, ln1b;
    AttnRefs self_attn;
    ParamRef ln2g, ln2b;
    ParamRef w1, b1, w2, b2;
  };
  struct DecLayer {
    ParamRef ln1g, ln1b;
    AttnRefs self_attn;
    ParamRef ln2g, ln2b;
    AttnRefs cross;
    ParamRef ln3g, ln3b;
    ParamRef w1, b1, w2, b2;
  };

  int src_vocab_, tgt_vocab_, d_model_, heads_, d_ffn_, max_positions_;
  int enc_layers_n_, dec_layers_n_;
  float dropout_;
  bool share_;
  uint64_t seed_;
  int64_t train_step_ = 0;

  std::vector<float> params_;
  std::vector<ParamManifestEntry> manifest_;
  ParamRef src_embed_, tgt_embed_, out_proj_;  // out_proj_ aliases tgt_embed_ when shared
  std::vector<EncLayer> enc_layers_;
  std::vector<DecLayer> dec_layers_;
  ParamRef enc_lng_, enc_lnb_, dec_lng_, dec_lnb_;

  ParamRef reserve(const std::string& name, int rows, int cols, int64_t& off);
  void build_layout();
  void init_params();

  int encode_on_tape(Tape& tape, const MiniBatch& batch, int* site) const;
  int decode_on_tape(Tape& tape, const MiniBatch& batch, int enc_node, int* site) const;
  int maybe_dropout(Tape& tape, int x, int* site) const;
};

// declared model config keys with their base-model defaults
Config transformer_default_config();

// shared by tape and eager paths; writes one sinusoidal position row
void positional_row(int pos, int d, float* out);

}  // namespace seqforge
