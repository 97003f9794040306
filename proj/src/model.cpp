#include "seqforge/model.hpp"

#include <cmath>
#include <cstring>

#include "seqforge/common.hpp"
#include "seqforge/kernels.hpp"
#include "seqforge/rng.hpp"

namespace seqforge {

void positional_row(int pos, int d, float* out) {
  for (int i = 0; 2 * i < d; ++i) {
    float angle = static_cast<float>(pos) *
                  std::pow(10000.0f, -2.0f * static_cast<float>(i) / static_cast<float>(d));
    out[2 * i] = std::sin(angle);
    if (2 * i + 1 < d) out[2 * i + 1] = std::cos(angle);
  }
}

Config transformer_default_config() {
  Config c;
  c.declare("src_vocab", int64_t{0});  // 0: filled from the dictionary before construction
  c.declare("tgt_vocab", int64_t{0});
  c.declare("d_model", int64_t{64});
  c.declare("heads", int64_t{4});
  c.declare("enc_layers", int64_t{2});
  c.declare("dec_layers", int64_t{2});
  c.declare("d_ffn", int64_t{128});
  c.declare("max_positions", int64_t{256});
  c.declare("dropout", 0.0);
  c.declare("share_embeddings", false);
  return c;
}

TransformerModel::TransformerModel(const Config& cfg, uint64_t seed)
    : src_vocab_(static_cast<int>(cfg.get_int("src_vocab"))),
      tgt_vocab_(static_cast<int>(cfg.get_int("tgt_vocab"))),
      d_model_(static_cast<int>(cfg.get_int("d_model"))),
      heads_(static_cast<int>(cfg.get_int("heads"))),
      d_ffn_(static_cast<int>(cfg.get_int("d_ffn"))),
      max_positions_(static_cast<int>(cfg.get_int("max_positions"))),
      enc_layers_n_(static_cast<int>(cfg.get_int("enc_layers"))),
      dec_layers_n_(static_cast<int>(cfg.get_int("dec_layers"))),
      dropout_(static_cast<float>(cfg.get_real("dropout"))),
      share_(cfg.get_bool("share_embeddings")),
      seed_(seed) {
  if (src_vocab_ < Dictionary::kNumReserved || tgt_vocab_ < Dictionary::kNumReserved)
    throw ConfigError("transformer: vocab sizes must cover the reserved symbols");
  if (d_model_ <= 0 || heads_ <= 0 || d_model_ % heads_ != 0)
    throw ConfigError("transformer: d_model must be a positive multiple of heads");
  if (enc_layers_n_ < 1 || dec_layers_n_ < 1)
    throw ConfigError("transformer: need at least one encoder and one decoder layer");
  if (d_ffn_ <= 0) throw ConfigError("transformer: d_ffn must be positive");
  if (dropout_ < 0.0f || dropout_ >= 1.0f)
    throw ConfigError("transformer: dropout must be in [0, 1)");
  if (max_positions_ < 2) throw ConfigError("transformer: max_positions must be at least 2");
  build_layout();
  init_params();
}

ParamRef TransformerModel::reserve(const std::string& name, int rows, int cols, int64_t& off) {
  ParamRef ref{off, rows, cols};
  ParamManifestEntry e;
  e.name = name;
  e.shape = rows == 1 ? std::vector<int>{cols} : std::vector<int>{rows, cols};
  e.offset = off;
  e.numel = ref.numel();
  manifest_.push_back(std::move(e));
  off += ref.numel();
  return ref;
}

void TransformerModel::build_layout() {
  int64_t off = 0;
  const int d = d_model_;
  auto attn = [&](const std::string& prefix) {
    AttnRefs a;
    a.wq = reserve(prefix + ".wq", d, d, off);
    a.bq = reserve(prefix + ".bq", 1, d, off);
    a.wk = reserve(prefix + ".wk", d, d, off);
    a.bk = reserve(prefix + ".bk", 1, d, off);
    a.wv = reserve(prefix + ".wv", d, d, off);
    a.bv = reserve(prefix + ".bv", 1, d, off);
    a.wo = reserve(prefix + ".wo", d, d, off);
    a.bo = reserve(prefix + ".bo", 1, d, off);
    return a;
  };

  src_embed_ = reserve("src_embed", src_vocab_, d, off);
  tgt_embed_ = reserve("tgt_embed", tgt_vocab_, d, off);
  for (int i = 0; i < enc_layers_n_; ++i) {
    std::string p = "enc." + std::to_string(i);
    EncLayer l;
    l.ln1g = reserve(p + ".ln1.g", 1, d, off);
    l.ln1b = reserve(p + ".ln1.b", 1, d, off);
    l.self_attn = attn(p + ".self");
    l.ln2g = reserve(p + ".ln2.g", 1, d, off);
    l.ln2b = reserve(p + ".ln2.b", 1, d, off);
    l.w1 = reserve(p + ".ffn.w1", d_ffn_, d, off);
    l.b1 = reserve(p + ".ffn.b1", 1, d_ffn_, off);
    l.w2 = reserve(p + ".ffn.w2", d, d_ffn_, off);
    l.b2 = reserve(p + ".ffn.b2", 1, d, off);
    enc_layers_.push_back(l);
  }
  enc_lng_ = reserve("enc.ln.g", 1, d, off);
  enc_lnb_ = reserve("enc.ln.b", 1, d, off);
  for (int i = 0; i < dec_layers_n_; ++i) {
    std::string p = "dec." + std::to_string(i);
    DecLayer l;
    l.ln1g = reserve(p + ".ln1.g", 1, d, off);
    l.ln1b = reserve(p + ".ln1.b", 1, d, off);
    l.self_attn = attn(p + ".self");
    l.ln2g = reserve(p + ".ln2.g", 1, d, off);
    l.ln2b = reserve(p + ".ln2.b", 1, d, off);
    l.cross = attn(p + ".cross");
    l.ln3g = reserve(p + ".ln3.g", 1, d, off);
    l.ln3b = reserve(p + ".ln3.b", 1, d, off);
    l.w1 = reserve(p + ".ffn.w1", d_ffn_, d, off);
    l.b1 = reserve(p + ".ffn.b1", 1, d_ffn_, off);
    l.w2 = reserve(p + ".ffn.w2", d, d_ffn_, off);
    l.b2 = reserve(p + ".ffn.b2", 1, d, off);
    dec_layers_.push_back(l);
  }
  dec_lng_ = reserve("dec.ln.g", 1, d, off);
  dec_lnb_ = reserve("dec.ln.b", 1, d, off);
  if (share_) {
    out_proj_ = tgt_embed_;  // logits reuse the target embedding matrix
  } else {
    out_proj_ = reserve("out_proj", tgt_vocab_, d, off);
  }
  params_.assign(static_cast<size_t>(off), 0.0f);
}

void TransformerModel::init_params() {
  RngStream rng(seed_, kStreamInit);
  for (const auto& e : manifest_) {
    size_t dot = e.name.rfind('.');
    const std::string last = dot == std::string::npos ? e.name : e.name.substr(dot + 1);
    float* p = params_.data() + e.offset;
    if (last == "g") {
      for (int64_t i = 0; i < e.numel; ++i) p[i] = 1.0f;
    } else if (last[0] == 'b') {
      // zero already
    } else {
      for (int64_t i = 0; i < e.numel; ++i)
        p[i] = static_cast<float>(0.02 * rng.next_normal());
    }
  }
}

std::unique_ptr<ModelBase> TransformerModel::clone() const {
  return std::make_unique<TransformerModel>(*this);
}

int TransformerModel::maybe_dropout(Tape& tape, int x, int* site) const {
  if (site == nullptr || dropout_ <= 0.0f) return x;
  uint64_t stream = kStreamDropoutBase |
                    (static_cast<uint64_t>(train_step_) << 8) |
                    static_cast<uint64_t>((*site)++);
  RngStream rng(seed_, stream);
  return tape.dropout(x, dropout_, rng);
}

namespace {

// query-row spans for self-attention over padded (batch x width) layouts
void sentence_spans(int batch, int width, const std::vector<int>& lens,
                    std::vector<int>* base, std::vector<int>* len) {
  base->resize(static_cast<size_t>(batch) * width);
  len->resize(static_cast<size_t>(batch) * width);
  for (int b = 0; b < batch; ++b)
    for (int j = 0; j < width; ++j) {
      (*base)[static_cast<size_t>(b) * width + j] = b * width;
      (*len)[static_cast<size_t>(b) * width + j] = lens[static_cast<size_t>(b)];
    }
}

void causal_spans(int batch, int width, std::vector<int>* base, std::vector<int>* len) {
  base->resize(static_cast<size_t>(batch) * width);
  len->resize(static_cast<size_t>(batch) * width);
  for (int b = 0; b < batch; ++b)
    for (int t = 0; t < width; ++t) {
      (*base)[static_cast<size_t>(b) * width + t] = b * width;
      (*len)[static_cast<size_t>(b) * width + t] = t + 1;
    }
}

Tensor position_leaf(int batch, int width, int d) {
  Tensor pe({batch * width, d});
  for (int b = 0; b < batch; ++b)
    for (int j = 0; j < width; ++j)
      positional_row(j, d, pe.data() + (static_cast<int64_t>(b) * width + j) * d);
  return pe;
}

}  // namespace

int TransformerModel::encode_on_tape(Tape& tape, const MiniBatch& batch, int* site) const {
  if (batch.src_width > max_positions_)
    throw CapacityError("transformer: source length " + std::to_string(batch.src_width) +
                        " exceeds max_positions " + std::to_string(max_positions_));
  const int B = batch.rows, S = batch.src_width, d = d_model_;
  std::vector<int> ids(batch.source.begin(), batch.source.end());
  int x = tape.embedding_lookup(src_embed_, std::move(ids));
  x = tape.scale(x, std::sqrt(static_cast<float>(d)));
  x = tape.add(x, tape.leaf(position_leaf(B, S, d)));
  x = maybe_dropout(tape, x, site);

  std::vector<int> kb, kl;
  sentence_spans(B, S, batch.src_lens, &kb, &kl);
  for (const EncLayer& l : enc_layers_) {
    int z = tape.layer_norm(x, l.ln1g, l.ln1b);
    int q = tape.add_bias(tape.matmul_nt(z, l.self_attn.wq), l.self_attn.bq);
    int k = tape.add_bias(tape.matmul_nt(z, l.self_attn.wk), l.self_attn.bk);
    int v = tape.add_bias(tape.matmul_nt(z, l.self_attn.wv), l.self_attn.bv);
    int a = tape.attention(q, k, v, heads_, kb, kl);
    a = tape.add_bias(tape.matmul_nt(a, l.self_attn.wo), l.self_attn.bo);
    x = tape.add(x, maybe_dropout(tape, a, site));

    int z2 = tape.layer_norm(x, l.ln2g, l.ln2b);
    int h = tape.relu(tape.add_bias(tape.matmul_nt(z2, l.w1), l.b1));
    h = tape.add_bias(tape.matmul_nt(h, l.w2), l.b2);
    x = tape.add(x, maybe_dropout(tape, h, site));
  }
  return tape.layer_norm(x, enc_lng_, enc_lnb_);
}

int TransformerModel::decode_on_tape(Tape& tape, const MiniBatch& batch, int enc_node,
                                     int* site) const {
  if (batch.tgt_width > max_positions_)
    throw CapacityError("transformer: target length " + std::to_string(batch.tgt_width) +
                        " exceeds max_positions " + std::to_string(max_positions_));
  const int B = batch.rows, T = batch.tgt_width, S = batch.src_width, d = d_model_;
  std::vector<int> ids(batch.target_in.begin(), batch.target_in.end());
  int x = tape.embedding_lookup(tgt_embed_, std::move(ids));
  x = tape.scale(x, std::sqrt(static_cast<float>(d)));
  x = tape.add(x, tape.leaf(position_leaf(B, T, d)));
  x = maybe_dropout(tape, x, site);

  std::vector<int> self_kb, self_kl, cross_kb, cross_kl;
  causal_spans(B, T, &self_kb, &self_kl);
  cross_kb.resize(static_cast<size_t>(B) * T);
  cross_kl.resize(static_cast<size_t>(B) * T);
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < T; ++t) {
      cross_kb[static_cast<size_t>(b) * T + t] = b * S;
      cross_kl[static_cast<size_t>(b) * T + t] = batch.src_lens[static_cast<size_t>(b)];
    }

  for (const DecLayer& l : dec_layers_) {
    int z = tape.layer_norm(x, l.ln1g, l.ln1b);
    int q = tape.add_bias(tape.matmul_nt(z, l.self_attn.wq), l.self_attn.bq);
    int k = tape.add_bias(tape.matmul_nt(z, l.self_attn.wk), l.self_attn.bk);
    int v = tape.add_bias(tape.matmul_nt(z, l.self_attn.wv), l.self_attn.bv);
    int a = tape.attention(q, k, v, heads_, self_kb, self_kl);
    a = tape.add_bias(tape.matmul_nt(a, l.self_attn.wo), l.self_attn.bo);
    x = tape.add(x, maybe_dropout(tape, a, site));

    int z2 = tape.layer_norm(x, l.ln2g, l.ln2b);
    int cq = tape.add_bias(tape.matmul_nt(z2, l.cross.wq), l.cross.bq);
    int ck = tape.add_bias(tape.matmul_nt(enc_node, l.cross.wk), l.cross.bk);
    int cv = tape.add_bias(tape.matmul_nt(enc_node, l.cross.wv), l.cross.bv);
    int ca = tape.attention(cq, ck, cv, heads_, cross_kb, cross_kl);
    ca = tape.add_bias(tape.matmul_nt(ca, l.cross.wo), l.cross.bo);
    x = tape.add(x, maybe_dropout(tape, ca, site));

    int z3 = tape.layer_norm(x, l.ln3g, l.ln3b);
    int h = tape.relu(tape.add_bias(tape.matmul_nt(z3, l.w1), l.b1));
    h = tape.add_bias(tape.matmul_nt(h, l.w2), l.b2);
    x = tape.add(x, maybe_dropout(tape, h, site));
  }
  x = tape.layer_norm(x, dec_lng_, dec_lnb_);
  return tape.matmul_nt(x, out_proj_);
}

int TransformerModel::forward_to_logits(Tape& tape, const MiniBatch& batch) const {
  int site = 0;
  int enc = encode_on_tape(tape, batch, &site);
  return decode_on_tape(tape, batch, enc, &site);
}

EncoderOut TransformerModel::forward_encoder(const MiniBatch& batch, DType dt) const {
  Tape tape{std::span<const float>(params_.data(), params_.size()), dt};
  int n = encode_on_tape(tape, batch, nullptr);
  EncoderOut out;
  out.states = tape.out(n);
  out.batch = batch.rows;
  out.width = batch.src_width;
  out.src_lens = batch.src_lens;
  out.dtype = dt;
  return out;
}

Tensor TransformerModel::forward_decoder_full(const MiniBatch& batch, DType dt) const {
  Tape tape{std::span<const float>(params_.data(), params_.size()), dt};
  int enc = encode_on_tape(tape, batch, nullptr);
  int logits = decode_on_tape(tape, batch, enc, nullptr);
  return tape.out(logits);
}

// ---------------------------------------------------------------------------
// incremental path: same row kernels run eagerly, with a quantize call at
// every point the tape would quantize a node output

namespace {
struct RowOps {
  bool f16;
  void q(float* p, int n) const {
    if (f16) kernels::quantize_row(p, n);
  }
};
}  // namespace

IncrementalState TransformerModel::make_incremental_state(
    const EncoderOut& enc, const std::vector<int>& row_to_sentence) const {
  const int R = static_cast<int>(row_to_sentence.size());
  const int S = enc.width, d = d_model_;
  for (int b : row_to_sentence)
    if (b < 0 || b >= enc.batch)
      throw BoundsError("make_incremental_state: sentence index out of range");

  IncrementalState st;
  st.rows = R;
  st.width = S;
  st.dtype = enc.dtype;
  st.src_lens.resize(static_cast<size_t>(R));
  for (int r = 0; r < R; ++r)
    st.src_lens[static_cast<size_t>(r)] = enc.src_lens[static_cast<size_t>(row_to_sentence[r])];

  RowOps ops{enc.dtype == DType::F16E};
  const int nl = dec_layers_n_;
  st.self_k.resize(static_cast<size_t>(nl));
  st.self_v.resize(static_cast<size_t>(nl));
  st.cross_k.resize(static_cast<size_t>(nl));
  st.cross_v.resize(static_cast<size_t>(nl));

  // fold the encoder states through each layer's cross projections once
  // per sentence, then copy blocks into hypothesis rows
  std::vector<float> sk(static_cast<size_t>(enc.batch) * S * d);
  std::vector<float> sv(sk.size());
  for (int li = 0; li < nl; ++li) {
    const DecLayer& l = dec_layers_[static_cast<size_t>(li)];
    for (int b = 0; b < enc.batch; ++b)
      for (int j = 0; j < S; ++j) {
        const float* e = enc.states.data() + (static_cast<int64_t>(b) * S + j) * d;
        float* ko = sk.data() + (static_cast<int64_t>(b) * S + j) * d;
        float* vo = sv.data() + (static_cast<int64_t>(b) * S + j) * d;
        kernels::linear_nt_row(e, params_.data() + l.cross.wk.offset, d, d, ko);
        ops.q(ko, d);
        kernels::add_row(ko, params_.data() + l.cross.bk.offset, d, ko);
        ops.q(ko, d);
        kernels::linear_nt_row(e, params_.data() + l.cross.wv.offset, d, d, vo);
        ops.q(vo, d);
        kernels::add_row(vo, params_.data() + l.cross.bv.offset, d, vo);
        ops.q(vo, d);
      }
    auto& ck = st.cross_k[static_cast<size_t>(li)];
    auto& cv = st.cross_v[static_cast<size_t>(li)];
    ck.resize(static_cast<size_t>(R) * S * d);
    cv.resize(ck.size());
    for (int r = 0; r < R; ++r) {
      int64_t src = static_cast<int64_t>(row_to_sentence[r]) * S * d;
      std::memcpy(ck.data() + static_cast<int64_t>(r) * S * d, sk.data() + src,
                  static_cast<size_t>(S) * d * sizeof(float));
      std::memcpy(cv.data() + static_cast<int64_t>(r) * S * d, sv.data() + src,
                  static_cast<size_t>(S) * d * sizeof(float));
    }
  }
  return st;
}

Tensor TransformerModel::forward_decoder_step(const std::vector<int>& last_tokens,
                                              IncrementalState& state) const {
  const int R = state.rows, d = d_model_, dh = d / heads_;
  const int t = state.step;
  if (static_cast<int>(last_tokens.size()) != R)
    throw ShapeError("forward_decoder_step: one token per hypothesis row required");
  if (t + 1 > max_positions_)
    throw CapacityError("transformer: decoder position " + std::to_string(t) +
                        " exceeds max_positions " + std::to_string(max_positions_));
  for (int id : last_tokens)
    if (id < 0 || id >= tgt_vocab_) throw BoundsError("forward_decoder_step: token id out of range");

  RowOps ops{state.dtype == DType::F16E};
  const float* P = params_.data();
  const float sc = 1.0f / std::sqrt(static_cast<float>(dh));
  const float emb_scale = std::sqrt(static_cast<float>(d));

  // token embedding + position, mirroring lookup/scale/leaf/add quantize points
  std::vector<float> x(static_cast<size_t>(R) * d);
  std::vector<float> pe(static_cast<size_t>(d));
  positional_row(t, d, pe.data());
  ops.q(pe.data(), d);
  for (int r = 0; r < R; ++r) {
    float* xr = x.data() + static_cast<int64_t>(r) * d;
    std::memcpy(xr, P + tgt_embed_.offset + static_cast<int64_t>(last_tokens[static_cast<size_t>(r)]) * d,
                static_cast<size_t>(d) * sizeof(float));
    ops.q(xr, d);
    kernels::scale_row(xr, emb_scale, d, xr);
    ops.q(xr, d);
    kernels::add_row(xr, pe.data(), d, xr);
    ops.q(xr, d);
  }

  std::vector<float> z(static_cast<size_t>(d));
  std::vector<float> qv(static_cast<size_t>(d));
  std::vector<float> ao(static_cast<size_t>(d));
  std::vector<float> pr(static_cast<size_t>(d));
  std::vector<float> h1(static_cast<size_t>(d_ffn_));
  std::vector<float> probs;

  for (int li = 0; li < dec_layers_n_; ++li) {
    const DecLayer& l = dec_layers_[static_cast<size_t>(li)];
    auto& cache_k = state.self_k[static_cast<size_t>(li)];
    auto& cache_v = state.self_v[static_cast<size_t>(li)];
    cache_k.resize(static_cast<size_t>(t + 1) * R * d);
    cache_v.resize(cache_k.size());

    for (int r = 0; r < R; ++r) {
      float* xr = x.data() + static_cast<int64_t>(r) * d;

      // self-attention; the new key/value rows land at the t-major slot
      kernels::layer_norm_row(xr, P + l.ln1g.offset, P + l.ln1b.offset, d,
                              kernels::kLayerNormEps, z.data(), nullptr, nullptr);
      ops.q(z.data(), d);
      float* kslot = cache_k.data() + (static_cast<int64_t>(t) * R + r) * d;
      float* vslot = cache_v.data() + (static_cast<int64_t>(t) * R + r) * d;
      kernels::linear_nt_row(z.data(), P + l.self_attn.wk.offset, d, d, kslot);
      ops.q(kslot, d);
      kernels::add_row(kslot, P + l.self_attn.bk.offset, d, kslot);
      ops.q(kslot, d);
      kernels::linear_nt_row(z.data(), P + l.self_attn.wv.offset, d, d, vslot);
      ops.q(vslot, d);
      kernels::add_row(vslot, P + l.self_attn.bv.offset, d, vslot);
      ops.q(vslot, d);
      kernels::linear_nt_row(z.data(), P + l.self_attn.wq.offset, d, d, qv.data());
      ops.q(qv.data(), d);
      kernels::add_row(qv.data(), P + l.self_attn.bq.offset, d, qv.data());
      ops.q(qv.data(), d);

      int klen = t + 1;
      probs.resize(static_cast<size_t>(klen));
      for (int hh = 0; hh < heads_; ++hh) {
        const float* kbase = cache_k.data() + static_cast<int64_t>(r) * d + hh * dh;
        const float* vbase = cache_v.data() + static_cast<int64_t>(r) * d + hh * dh;
        kernels::attn_scores_row(qv.data() + hh * dh, kbase, klen, R * d, dh, sc, probs.data());
        kernels::softmax_row(probs.data(), klen);
        kernels::attn_ctx_row(probs.data(), vbase, klen, R * d, dh, ao.data() + hh * dh);
      }
      ops.q(ao.data(), d);
      kernels::linear_nt_row(ao.data(), P + l.self_attn.wo.offset, d, d, pr.data());
      ops.q(pr.data(), d);
      kernels::add_row(pr.data(), P + l.self_attn.bo.offset, d, pr.data());
      ops.q(pr.data(), d);
      kernels::add_row(xr, pr.data(), d, xr);
      ops.q(xr, d);

      // cross-attention over the precomputed per-row source projections
      kernels::layer_norm_row(xr, P + l.ln2g.offset, P + l.ln2b.offset, d,
                              kernels::kLayerNormEps, z.data(), nullptr, nullptr);
      ops.q(z.data(), d);
      kernels::linear_nt_row(z.data(), P + l.cross.wq.offset, d, d, qv.data());
      ops.q(qv.data(), d);
      kernels::add_row(qv.data(), P + l.cross.bq.offset, d, qv.data());
      ops.q(qv.data(), d);
      int slen = state.src_lens[static_cast<size_t>(r)];
      probs.resize(static_cast<size_t>(slen));
      const auto& ck = state.cross_k[static_cast<size_t>(li)];
      const auto& cv = state.cross_v[static_cast<size_t>(li)];
      for (int hh = 0; hh < heads_; ++hh) {
        const float* kbase = ck.data() + static_cast<int64_t>(r) * state.width * d + hh * dh;
        const float* vbase = cv.data() + static_cast<int64_t>(r) * state.width * d + hh * dh;
        kernels::attn_scores_row(qv.data() + hh * dh, kbase, slen, d, dh, sc, probs.data());
        kernels::softmax_row(probs.data(), slen);
        kernels::attn_ctx_row(probs.data(), vbase, slen, d, dh, ao.data() + hh * dh);
      }
      ops.q(ao.data(), d);
      kernels::linear_nt_row(ao.data(), P + l.cross.wo.offset, d, d, pr.data());
      ops.q(pr.data(), d);
      kernels::add_row(pr.data(), P + l.cross.bo.offset, d, pr.data());
      ops.q(pr.data(), d);
      kernels::add_row(xr, pr.data(), d, xr);
      ops.q(xr, d);

      // feed-forward
      kernels::layer_norm_row(xr, P + l.ln3g.offset, P + l.ln3b.offset, d,
                              kernels::kLayerNormEps, z.data(), nullptr, nullptr);
      ops.q(z.data(), d);
      kernels::linear_nt_row(z.data(), P + l.w1.offset, d, d_ffn_, h1.data());
      ops.q(h1.data(), d_ffn_);
      kernels::add_row(h1.data(), P + l.b1.offset, d_ffn_, h1.data());
      ops.q(h1.data(), d_ffn_);
      kernels::relu_row(h1.data(), d_ffn_, h1.data());
      ops.q(h1.data(), d_ffn_);
      kernels::linear_nt_row(h1.data(), P + l.w2.offset, d_ffn_, d, pr.data());
      ops.q(pr.data(), d);
      kernels::add_row(pr.data(), P + l.b2.offset, d, pr.data());
      ops.q(pr.data(), d);
      kernels::add_row(xr, pr.data(), d, xr);
      ops.q(xr, d);
    }
  }

  Tensor logits({R, tgt_vocab_}, state.dtype);
  for (int r = 0; r < R; ++r) {
    float* xr = x.data() + static_cast<int64_t>(r) * d;
    kernels::layer_norm_row(xr, P + dec_lng_.offset, P + dec_lnb_.offset, d,
                            kernels::kLayerNormEps, z.data(), nullptr, nullptr);
    ops.q(z.data(), d);
    float* lr = logits.data() + static_cast<int64_t>(r) * tgt_vocab_;
    kernels::linear_nt_row(z.data(), P + out_proj_.offset, d, tgt_vocab_, lr);
    ops.q(lr, tgt_vocab_);
  }
  ++state.step;
  return logits;
}

void TransformerModel::reorder_incremental_state(IncrementalState& state,
                                                 const std::vector<int>& order) {
  const int R = state.rows;
  const int Rn = static_cast<int>(order.size());
  for (int o : order)
    if (o < 0 || o >= R) throw BoundsError("reorder_incremental_state: row index out of range");

  // per-layer element width: caches may be empty before the first step
  for (size_t li = 0; li < state.self_k.size(); ++li) {
    auto remap_self = [&](std::vector<float>& buf) {
      if (buf.empty() || R == 0) return;
      const int64_t d = static_cast<int64_t>(buf.size()) / (static_cast<int64_t>(state.step) * R);
      std::vector<float> nb(static_cast<size_t>(state.step) * Rn * d);
      for (int tt = 0; tt < state.step; ++tt)
        for (int i = 0; i < Rn; ++i)
          std::memcpy(nb.data() + (static_cast<int64_t>(tt) * Rn + i) * d,
                      buf.data() + (static_cast<int64_t>(tt) * R + order[i]) * d,
                      static_cast<size_t>(d) * sizeof(float));
      buf = std::move(nb);
    };
    remap_self(state.self_k[li]);
    remap_self(state.self_v[li]);
    auto remap_cross = [&](std::vector<float>& buf) {
      if (buf.empty() || R == 0) return;
      const int64_t block = static_cast<int64_t>(buf.size()) / R;  // S * d
      std::vector<float> nb(static_cast<size_t>(Rn) * block);
      for (int i = 0; i < Rn; ++i)
        std::memcpy(nb.data() + i * block, buf.data() + order[i] * block,
                    static_cast<size_t>(block) * sizeof(float));
      buf = std::move(nb);
    };
    remap_cross(state.cross_k[li]);
    remap_cross(state.cross_v[li]);
  }
  std::vector<int> lens(static_cast<size_t>(Rn));
  for (int i = 0; i < Rn; ++i) lens[static_cast<size_t>(i)] = state.src_lens[static_cast<size_t>(order[i])];
  state.src_lens = std::move(lens);
  state.rows = Rn;
}

}  // namespace seqforge
