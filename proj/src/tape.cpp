#include "seqforge/tape.hpp"

#include <cmath>
#include <cstring>

#include "seqforge/common.hpp"
#include "seqforge/fp16.hpp"
#include "seqforge/kernels.hpp"

namespace seqforge {

namespace {
constexpr float kLnEps = kernels::kLayerNormEps;
}

Tape::Tape(std::span<const float> params, DType dtype)
    : params_(params), dtype_(dtype) {}

int Tape::push(TapeNode n) {
  forward_node(n);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor value) {
  TapeNode n;
  n.kind = OpKind::Leaf;
  n.out = std::move(value);
  if (dtype_ == DType::F16E) n.out.quantize_to_fp16_grid();
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

int Tape::embedding_lookup(ParamRef embed, std::vector<int> ids) {
  for (int id : ids)
    if (id < 0 || id >= embed.rows)
      throw BoundsError("embedding_lookup: token id out of range");
  TapeNode n;
  n.kind = OpKind::EmbeddingLookup;
  n.p0 = embed;
  n.ids = std::move(ids);
  n.out = Tensor({static_cast<int>(n.ids.size()), embed.cols}, dtype_);
  return push(std::move(n));
}

int Tape::matmul_nt(int x, ParamRef w) {
  const Tensor& xv = nodes_[x].out;
  if (xv.cols() != w.cols) throw ShapeError("matmul_nt: inner dimension mismatch");
  TapeNode n;
  n.kind = OpKind::MatMulNT;
  n.in0 = x;
  n.p0 = w;
  n.out = Tensor({xv.rows(), w.rows}, dtype_);
  return push(std::move(n));
}

int Tape::add_bias(int x, ParamRef b) {
  const Tensor& xv = nodes_[x].out;
  if (xv.cols() != b.cols || b.rows != 1)
    throw ShapeError("add_bias: bias length mismatch");
  TapeNode n;
  n.kind = OpKind::AddBias;
  n.in0 = x;
  n.p0 = b;
  n.out = Tensor(xv.shape(), dtype_);
  return push(std::move(n));
}

int Tape::add(int x, int y) {
  if (!nodes_[x].out.same_shape(nodes_[y].out)) throw ShapeError("add: shape mismatch");
  TapeNode n;
  n.kind = OpKind::Add;
  n.in0 = x;
  n.in1 = y;
  n.out = Tensor(nodes_[x].out.shape(), dtype_);
  return push(std::move(n));
}

int Tape::scale(int x, float c) {
  TapeNode n;
  n.kind = OpKind::Scale;
  n.in0 = x;
  n.scalar = c;
  n.out = Tensor(nodes_[x].out.shape(), dtype_);
  return push(std::move(n));
}

int Tape::relu(int x) {
  TapeNode n;
  n.kind = OpKind::Relu;
  n.in0 = x;
  n.out = Tensor(nodes_[x].out.shape(), dtype_);
  return push(std::move(n));
}

int Tape::layer_norm(int x, ParamRef gamma, ParamRef beta) {
  const Tensor& xv = nodes_[x].out;
  if (gamma.cols != xv.cols() || beta.cols != xv.cols() || gamma.rows != 1 || beta.rows != 1)
    throw ShapeError("layer_norm: affine parameter length mismatch");
  TapeNode n;
  n.kind = OpKind::LayerNorm;
  n.in0 = x;
  n.p0 = gamma;
  n.p1 = beta;
  n.out = Tensor(xv.shape(), dtype_);
  return push(std::move(n));
}

int Tape::dropout(int x, float p, RngStream& rng) {
  if (p < 0.0f || p >= 1.0f) throw ConfigError("dropout: p must be in [0, 1)");
  const Tensor& xv = nodes_[x].out;
  TapeNode n;
  n.kind = OpKind::Dropout;
  n.in0 = x;
  n.scalar = p;
  n.aux.resize(static_cast<size_t>(xv.numel()));
  float keep_scale = 1.0f / (1.0f - p);
  for (auto& m : n.aux) m = (rng.next_double() < p) ? 0.0f : keep_scale;
  n.out = Tensor(xv.shape(), dtype_);
  return push(std::move(n));
}

int Tape::attention(int q, int k, int v, int heads,
                    std::vector<int> key_base, std::vector<int> key_len) {
  const Tensor& qv = nodes_[q].out;
  const Tensor& kv = nodes_[k].out;
  const Tensor& vv = nodes_[v].out;
  int d = qv.cols();
  if (kv.cols() != d || vv.cols() != d || !kv.same_shape(vv))
    throw ShapeError("attention: q/k/v width mismatch");
  if (heads <= 0 || d % heads != 0) throw ShapeError("attention: d_model not divisible by heads");
  int rq = qv.rows();
  if (static_cast<int>(key_base.size()) != rq || static_cast<int>(key_len.size()) != rq)
    throw ShapeError("attention: span arrays must cover every query row");
  for (int r = 0; r < rq; ++r) {
    if (key_len[r] < 0 || key_base[r] < 0 || key_base[r] + key_len[r] > kv.rows())
      throw BoundsError("attention: key span out of range");
  }
  TapeNode n;
  n.kind = OpKind::Attention;
  n.in0 = q;
  n.in1 = k;
  n.in2 = v;
  n.heads = heads;
  n.key_base = std::move(key_base);
  n.key_len = std::move(key_len);
  n.out = Tensor(qv.shape(), dtype_);
  return push(std::move(n));
}

int Tape::softmax_xent(int logits, std::vector<int> gold, std::vector<uint8_t> active,
                       float epsilon) {
  const Tensor& lv = nodes_[logits].out;
  int r = lv.rows(), vocab = lv.cols();
  if (static_cast<int>(gold.size()) != r || static_cast<int>(active.size()) != r)
    throw ShapeError("softmax_xent: gold/active must cover every row");
  for (int g : gold)
    if (g < 0 || g >= vocab) throw BoundsError("softmax_xent: gold id out of range");
  if (epsilon < 0.0f || epsilon >= 1.0f) throw ConfigError("softmax_xent: epsilon must be in [0, 1)");
  TapeNode n;
  n.kind = OpKind::SoftmaxXent;
  n.in0 = logits;
  n.ids = std::move(gold);
  n.active = std::move(active);
  n.scalar = epsilon;
  n.out = Tensor({r}, dtype_);
  return push(std::move(n));
}

void Tape::forward_node(TapeNode& n) const {
  switch (n.kind) {
    case OpKind::Leaf:
      return;  // value was supplied, already on-grid if F16E
    case OpKind::EmbeddingLookup: {
      int d = n.p0.cols;
      const float* e = param_ptr(n.p0);
      for (size_t r = 0; r < n.ids.size(); ++r)
        for (int c = 0; c < d; ++c)
          n.out.data()[r * d + c] = e[static_cast<int64_t>(n.ids[r]) * d + c];
      break;
    }
    case OpKind::MatMulNT: {
      const Tensor& x = nodes_[n.in0].out;
      int in_dim = x.cols(), out_dim = n.p0.rows;
      for (int r = 0; r < x.rows(); ++r)
        kernels::linear_nt_row(x.data() + static_cast<int64_t>(r) * in_dim, param_ptr(n.p0),
                               in_dim, out_dim, n.out.data() + static_cast<int64_t>(r) * out_dim);
      break;
    }
    case OpKind::AddBias: {
      const Tensor& x = nodes_[n.in0].out;
      int d = x.cols();
      for (int r = 0; r < x.rows(); ++r)
        kernels::add_row(x.data() + static_cast<int64_t>(r) * d, param_ptr(n.p0), d,
                         n.out.data() + static_cast<int64_t>(r) * d);
      break;
    }
    case OpKind::Add: {
      kernels::add_row(nodes_[n.in0].out.data(), nodes_[n.in1].out.data(),
                       static_cast<int>(n.out.numel()), n.out.data());
      break;
    }
    case OpKind::Scale:
      kernels::scale_row(nodes_[n.in0].out.data(), n.scalar,
                         static_cast<int>(n.out.numel()), n.out.data());
      break;
    case OpKind::Relu:
      kernels::relu_row(nodes_[n.in0].out.data(), static_cast<int>(n.out.numel()),
                        n.out.data());
      break;
    case OpKind::LayerNorm: {
      const Tensor& x = nodes_[n.in0].out;
      int d = x.cols();
      n.aux.assign(static_cast<size_t>(x.rows()) * 2, 0.0f);
      for (int r = 0; r < x.rows(); ++r)
        kernels::layer_norm_row(x.data() + static_cast<int64_t>(r) * d, param_ptr(n.p0),
                                param_ptr(n.p1), d, kLnEps,
                                n.out.data() + static_cast<int64_t>(r) * d,
                                &n.aux[2 * static_cast<size_t>(r)],
                                &n.aux[2 * static_cast<size_t>(r) + 1]);
      break;
    }
    case OpKind::Dropout: {
      const Tensor& x = nodes_[n.in0].out;
      for (int64_t i = 0; i < x.numel(); ++i)
        n.out.data()[i] = x.data()[i] * n.aux[static_cast<size_t>(i)];
      break;
    }
    case OpKind::Attention: {
      const Tensor& q = nodes_[n.in0].out;
      const Tensor& k = nodes_[n.in1].out;
      const Tensor& v = nodes_[n.in2].out;
      int d = q.cols(), dh = d / n.heads;
      float sc = 1.0f / std::sqrt(static_cast<float>(dh));
      size_t total = 0;
      for (int r = 0; r < q.rows(); ++r)
        total += static_cast<size_t>(n.key_len[r]) * n.heads;
      n.aux.assign(total, 0.0f);
      std::memset(n.out.data(), 0, static_cast<size_t>(n.out.numel()) * sizeof(float));
      size_t pos = 0;
      for (int r = 0; r < q.rows(); ++r) {
        int klen = n.key_len[r];
        int64_t kb = n.key_base[r];
        for (int h = 0; h < n.heads; ++h) {
          if (klen == 0) continue;
          const float* qrow = q.data() + static_cast<int64_t>(r) * d + h * dh;
          const float* kbase = k.data() + kb * d + h * dh;
          const float* vbase = v.data() + kb * d + h * dh;
          float* probs = n.aux.data() + pos;
          kernels::attn_scores_row(qrow, kbase, klen, d, dh, sc, probs);
          kernels::softmax_row(probs, klen);
          kernels::attn_ctx_row(probs, vbase, klen, d, dh,
                                n.out.data() + static_cast<int64_t>(r) * d + h * dh);
          pos += static_cast<size_t>(klen);
        }
      }
      break;
    }
    case OpKind::SoftmaxXent: {
      const Tensor& l = nodes_[n.in0].out;
      int vocab = l.cols();
      int rows = l.rows();
      n.aux.assign(static_cast<size_t>(rows) * 2, 0.0f);
      n.nll.assign(static_cast<size_t>(rows), 0.0f);
      n.correct.assign(static_cast<size_t>(rows), 0);
      float eps = n.scalar;
      for (int r = 0; r < rows; ++r) {
        if (!n.active[static_cast<size_t>(r)]) {
          n.out.data()[r] = 0.0f;
          continue;
        }
        const float* row = l.data() + static_cast<int64_t>(r) * vocab;
        float m, lse;
        kernels::logsumexp_row(row, vocab, &m, &lse);
        n.aux[2 * static_cast<size_t>(r)] = m;
        n.aux[2 * static_cast<size_t>(r) + 1] = lse;
        float nll = lse - row[n.ids[static_cast<size_t>(r)]];
        n.nll[static_cast<size_t>(r)] = nll;
        n.correct[static_cast<size_t>(r)] =
            kernels::argmax_row(row, vocab) == n.ids[static_cast<size_t>(r)] ? 1 : 0;
        if (eps == 0.0f) {
          n.out.data()[r] = nll;
        } else {
          float smooth = 0.0f;
          for (int t = 0; t < vocab; ++t) smooth += lse - row[t];
          n.out.data()[r] = (1.0f - eps) * nll + (eps / static_cast<float>(vocab)) * smooth;
        }
      }
      break;
    }
  }
  if (dtype_ == DType::F16E)
    kernels::quantize_row(n.out.data(), static_cast<int>(n.out.numel()));
}

void Tape::quantize_param_range(std::span<float> pgrad, int64_t off, int64_t count) const {
  if (dtype_ != DType::F16E) return;
  kernels::quantize_row(pgrad.data() + off, static_cast<int>(count));
}

void Tape::backward_node(int i, std::span<float> pgrad) {
  TapeNode& n = nodes_[static_cast<size_t>(i)];
  const Tensor& g = n.grad;
  bool f16 = dtype_ == DType::F16E;
  auto qgrad = [&](int id) {
    if (f16) nodes_[static_cast<size_t>(id)].grad.quantize_to_fp16_grid();
  };
  switch (n.kind) {
    case OpKind::Leaf:
      break;
    case OpKind::EmbeddingLookup: {
      int d = n.p0.cols;
      // direct fold into the flat buffer, rows in recording order: this
      // per-element ordering is what gradient-accumulation equality rides on
      for (size_t r = 0; r < n.ids.size(); ++r)
        for (int c = 0; c < d; ++c)
          pgrad[static_cast<size_t>(n.p0.offset + static_cast<int64_t>(n.ids[r]) * d + c)] +=
              g.data()[r * d + c];
      if (f16)
        for (size_t r = 0; r < n.ids.size(); ++r)
          quantize_param_range(pgrad, n.p0.offset + static_cast<int64_t>(n.ids[r]) * d, d);
      break;
    }
    case OpKind::MatMulNT: {
      const Tensor& x = nodes_[n.in0].out;
      Tensor& dx = nodes_[n.in0].grad;
      const float* w = param_ptr(n.p0);
      int in_dim = x.cols(), out_dim = n.p0.rows;
      for (int r = 0; r < x.rows(); ++r) {
        const float* grow = g.data() + static_cast<int64_t>(r) * out_dim;
        float* dxrow = dx.data() + static_cast<int64_t>(r) * in_dim;
        for (int k = 0; k < in_dim; ++k) {
          float acc = 0.0f;
          for (int o = 0; o < out_dim; ++o) acc += grow[o] * w[static_cast<int64_t>(o) * in_dim + k];
          dxrow[k] += acc;
        }
        const float* xrow = x.data() + static_cast<int64_t>(r) * in_dim;
        for (int o = 0; o < out_dim; ++o)
          for (int k = 0; k < in_dim; ++k)
            pgrad[static_cast<size_t>(n.p0.offset + static_cast<int64_t>(o) * in_dim + k)] +=
                grow[o] * xrow[k];
      }
      qgrad(n.in0);
      quantize_param_range(pgrad, n.p0.offset, n.p0.numel());
      break;
    }
    case OpKind::AddBias: {
      Tensor& dx = nodes_[n.in0].grad;
      int d = n.p0.cols;
      int rows = nodes_[n.in0].out.rows();
      for (int64_t j = 0; j < g.numel(); ++j) dx.data()[j] += g.data()[j];
      for (int r = 0; r < rows; ++r)
        for (int c = 0; c < d; ++c)
          pgrad[static_cast<size_t>(n.p0.offset + c)] += g.data()[static_cast<int64_t>(r) * d + c];
      qgrad(n.in0);
      quantize_param_range(pgrad, n.p0.offset, n.p0.numel());
      break;
    }
    case OpKind::Add: {
      Tensor& da = nodes_[n.in0].grad;
      Tensor& db = nodes_[n.in1].grad;
      for (int64_t j = 0; j < g.numel(); ++j) {
        da.data()[j] += g.data()[j];
        db.data()[j] += g.data()[j];
      }
      qgrad(n.in0);
      qgrad(n.in1);
      break;
    }
    case OpKind::Scale: {
      Tensor& dx = nodes_[n.in0].grad;
      for (int64_t j = 0; j < g.numel(); ++j) dx.data()[j] += n.scalar * g.data()[j];
      qgrad(n.in0);
      break;
    }
    case OpKind::Relu: {
      Tensor& dx = nodes_[n.in0].grad;
      for (int64_t j = 0; j < g.numel(); ++j)
        if (n.out.data()[j] > 0.0f) dx.data()[j] += g.data()[j];
      qgrad(n.in0);
      break;
    }
    case OpKind::LayerNorm: {
      const Tensor& x = nodes_[n.in0].out;
      Tensor& dx = nodes_[n.in0].grad;
      const float* gamma = param_ptr(n.p0);
      int d = x.cols();
      std::vector<float> dxhat(static_cast<size_t>(d));
      std::vector<float> xhat(static_cast<size_t>(d));
      for (int r = 0; r < x.rows(); ++r) {
        float mean = n.aux[2 * static_cast<size_t>(r)];
        float rstd = n.aux[2 * static_cast<size_t>(r) + 1];
        const float* xrow = x.data() + static_cast<int64_t>(r) * d;
        const float* grow = g.data() + static_cast<int64_t>(r) * d;
        for (int c = 0; c < d; ++c) {
          xhat[static_cast<size_t>(c)] = (xrow[c] - mean) * rstd;
          dxhat[static_cast<size_t>(c)] = grow[c] * gamma[c];
        }
        float s1 = 0.0f, s2 = 0.0f;
        for (int c = 0; c < d; ++c) {
          s1 += dxhat[static_cast<size_t>(c)];
          s2 += dxhat[static_cast<size_t>(c)] * xhat[static_cast<size_t>(c)];
        }
        float inv_n = 1.0f / static_cast<float>(d);
        float* dxrow = dx.data() + static_cast<int64_t>(r) * d;
        for (int c = 0; c < d; ++c)
          dxrow[c] += rstd * (dxhat[static_cast<size_t>(c)] - s1 * inv_n -
                              xhat[static_cast<size_t>(c)] * (s2 * inv_n));
        for (int c = 0; c < d; ++c)
          pgrad[static_cast<size_t>(n.p0.offset + c)] += grow[c] * xhat[static_cast<size_t>(c)];
        for (int c = 0; c < d; ++c)
          pgrad[static_cast<size_t>(n.p1.offset + c)] += grow[c];
      }
      qgrad(n.in0);
      quantize_param_range(pgrad, n.p0.offset, n.p0.numel());
      quantize_param_range(pgrad, n.p1.offset, n.p1.numel());
      break;
    }
    case OpKind::Dropout: {
      Tensor& dx = nodes_[n.in0].grad;
      for (int64_t j = 0; j < g.numel(); ++j)
        dx.data()[j] += g.data()[j] * n.aux[static_cast<size_t>(j)];
      qgrad(n.in0);
      break;
    }
    case OpKind::Attention: {
      const Tensor& q = nodes_[n.in0].out;
      const Tensor& k = nodes_[n.in1].out;
      const Tensor& v = nodes_[n.in2].out;
      Tensor& dq = nodes_[n.in0].grad;
      Tensor& dk = nodes_[n.in1].grad;
      Tensor& dv = nodes_[n.in2].grad;
      int d = q.cols(), dh = d / n.heads;
      float sc = 1.0f / std::sqrt(static_cast<float>(dh));
      std::vector<float> dp, ds;
      size_t pos = 0;
      for (int r = 0; r < q.rows(); ++r) {
        int klen = n.key_len[r];
        int64_t kb = n.key_base[r];
        for (int h = 0; h < n.heads; ++h) {
          if (klen == 0) continue;
          const float* probs = n.aux.data() + pos;
          const float* gc = g.data() + static_cast<int64_t>(r) * d + h * dh;
          const float* qrow = q.data() + static_cast<int64_t>(r) * d + h * dh;
          dp.assign(static_cast<size_t>(klen), 0.0f);
          ds.assign(static_cast<size_t>(klen), 0.0f);
          for (int j = 0; j < klen; ++j) {
            const float* vrow = v.data() + (kb + j) * d + h * dh;
            float acc = 0.0f;
            for (int c = 0; c < dh; ++c) acc += gc[c] * vrow[c];
            dp[static_cast<size_t>(j)] = acc;
          }
          float dot = 0.0f;
          for (int j = 0; j < klen; ++j) dot += probs[j] * dp[static_cast<size_t>(j)];
          for (int j = 0; j < klen; ++j)
            ds[static_cast<size_t>(j)] = probs[j] * (dp[static_cast<size_t>(j)] - dot);
          float* dqrow = dq.data() + static_cast<int64_t>(r) * d + h * dh;
          for (int c = 0; c < dh; ++c) {
            float acc = 0.0f;
            for (int j = 0; j < klen; ++j)
              acc += ds[static_cast<size_t>(j)] * k.data()[(kb + j) * d + h * dh + c];
            dqrow[c] += sc * acc;
          }
          for (int j = 0; j < klen; ++j) {
            float sds = sc * ds[static_cast<size_t>(j)];
            float* dkrow = dk.data() + (kb + j) * d + h * dh;
            float* dvrow = dv.data() + (kb + j) * d + h * dh;
            for (int c = 0; c < dh; ++c) {
              dkrow[c] += sds * qrow[c];
              dvrow[c] += probs[j] * gc[c];
            }
          }
          pos += static_cast<size_t>(klen);
        }
      }
      qgrad(n.in0);
      qgrad(n.in1);
      qgrad(n.in2);
      break;
    }
    case OpKind::SoftmaxXent: {
      const Tensor& l = nodes_[n.in0].out;
      Tensor& dl = nodes_[n.in0].grad;
      int vocab = l.cols();
      float eps = n.scalar;
      float uni = eps / static_cast<float>(vocab);
      for (int r = 0; r < l.rows(); ++r) {
        if (!n.active[static_cast<size_t>(r)]) continue;
        float seed = g.data()[r];
        float lse = n.aux[2 * static_cast<size_t>(r) + 1];
        const float* row = l.data() + static_cast<int64_t>(r) * vocab;
        float* drow = dl.data() + static_cast<int64_t>(r) * vocab;
        int gold = n.ids[static_cast<size_t>(r)];
        for (int t = 0; t < vocab; ++t) {
          float p = std::exp(row[t] - lse);
          float target = (t == gold ? (1.0f - eps) : 0.0f) + uni;
          drow[t] += seed * (p - target);
        }
      }
      qgrad(n.in0);
      break;
    }
  }
}

void Tape::backward(int loss_node, float seed, std::span<float> pgrad) {
  if (loss_node < 0 || loss_node >= static_cast<int>(nodes_.size()))
    throw BoundsError("backward: bad node id");
  TapeNode& ln = nodes_[static_cast<size_t>(loss_node)];
  if (ln.kind != OpKind::SoftmaxXent)
    throw ShapeError("backward: loss node must be a softmax_xent node");
  Tensor dout(ln.out.shape());
  for (int64_t r = 0; r < ln.out.numel(); ++r)
    dout.data()[r] = ln.active[static_cast<size_t>(r)] ? seed : 0.0f;
  backward_from(loss_node, dout, pgrad);
}

void Tape::backward_from(int node, const Tensor& dout, std::span<float> pgrad) {
  if (node < 0 || node >= static_cast<int>(nodes_.size()))
    throw BoundsError("backward_from: bad node id");
  if (!dout.same_shape(nodes_[static_cast<size_t>(node)].out))
    throw ShapeError("backward_from: seed gradient shape mismatch");
  for (auto& n : nodes_) n.grad = Tensor(n.out.shape());
  nodes_[static_cast<size_t>(node)].grad = dout;
  for (int i = node; i >= 0; --i) backward_node(i, pgrad);
}

bool Tape::replay_matches() const {
  for (const auto& n : nodes_) {
    TapeNode copy;
    copy.kind = n.kind;
    copy.in0 = n.in0;
    copy.in1 = n.in1;
    copy.in2 = n.in2;
    copy.p0 = n.p0;
    copy.p1 = n.p1;
    copy.ids = n.ids;
    copy.active = n.active;
    copy.key_base = n.key_base;
    copy.key_len = n.key_len;
    copy.heads = n.heads;
    copy.scalar = n.scalar;
    if (n.kind == OpKind::Dropout) copy.aux = n.aux;  // replay must reuse the mask
    copy.out = n.kind == OpKind::Leaf ? n.out : Tensor(n.out.shape(), dtype_);
    forward_node(copy);
    if (copy.out.numel() != n.out.numel()) return false;
    if (std::memcmp(copy.out.data(), n.out.data(),
                    static_cast<size_t>(n.out.numel()) * sizeof(float)) != 0)
      return false;
  }
  return true;
}

GradCheckResult grad_check(const std::function<double(std::span<const float>)>& loss,
                           std::span<const float> analytic_grad,
                           std::span<float> theta, double h) {
  GradCheckResult res;
  for (size_t i = 0; i < theta.size(); ++i) {
    float orig = theta[i];
    float up = static_cast<float>(orig + h);
    float down = static_cast<float>(orig - h);
    theta[i] = up;
    double fp = loss(theta);
    theta[i] = down;
    double fm = loss(theta);
    theta[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      res.nonfinite = true;
      continue;
    }
    // divide by the step the float parameters actually realized, not the
    // nominal h — otherwise rounding of theta±h dominates the comparison
    double span = static_cast<double>(up) - static_cast<double>(down);
    double cd = (fp - fm) / span;
    double a = static_cast<double>(analytic_grad[i]);
    double err = std::abs(a - cd) / std::max(1.0, std::abs(a));
    if (err > res.max_err) {
      res.max_err = err;
      res.worst_index = i;
    }
  }
  return res;
}

}  // namespace seqforge
