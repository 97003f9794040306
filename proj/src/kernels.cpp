#include "seqforge/kernels.hpp"

#include <cmath>

#include "seqforge/fp16.hpp"

namespace seqforge::kernels {

void linear_nt_row(const float* x, const float* W, int in_dim, int out_dim, float* y) {
  for (int o = 0; o < out_dim; ++o) {
    const float* w = W + static_cast<long>(o) * in_dim;
    float acc = 0.0f;
    for (int k = 0; k < in_dim; ++k) acc += x[k] * w[k];
    y[o] = acc;
  }
}

void add_row(const float* a, const float* b, int n, float* y) {
  for (int i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

void scale_row(const float* x, float c, int n, float* y) {
  for (int i = 0; i < n; ++i) y[i] = c * x[i];
}

void relu_row(const float* x, int n, float* y) {
  for (int i = 0; i < n; ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void layer_norm_row(const float* x, const float* gamma, const float* beta, int n,
                    float eps, float* y, float* mean_out, float* rstd_out) {
  float sum = 0.0f;
  for (int i = 0; i < n; ++i) sum += x[i];
  float mean = sum / static_cast<float>(n);
  float var_sum = 0.0f;
  for (int i = 0; i < n; ++i) {
    float d = x[i] - mean;
    var_sum += d * d;
  }
  float var = var_sum / static_cast<float>(n);
  float rstd = 1.0f / std::sqrt(var + eps);
  for (int i = 0; i < n; ++i) y[i] = (x[i] - mean) * rstd * gamma[i] + beta[i];
  if (mean_out != nullptr) *mean_out = mean;
  if (rstd_out != nullptr) *rstd_out = rstd;
}

void attn_scores_row(const float* q, const float* kbase, int klen, int stride,
                     int d_head, float scale, float* scores) {
  for (int j = 0; j < klen; ++j) {
    const float* k = kbase + static_cast<long>(j) * stride;
    float acc = 0.0f;
    for (int c = 0; c < d_head; ++c) acc += q[c] * k[c];
    scores[j] = scale * acc;
  }
}

void softmax_row(float* s, int n) {
  if (n <= 0) return;
  float m = s[0];
  for (int j = 1; j < n; ++j)
    if (s[j] > m) m = s[j];
  float sum = 0.0f;
  for (int j = 0; j < n; ++j) {
    s[j] = std::exp(s[j] - m);
    sum += s[j];
  }
  float inv = 1.0f / sum;
  for (int j = 0; j < n; ++j) s[j] *= inv;
}

void attn_ctx_row(const float* probs, const float* vbase, int klen, int stride,
                  int d_head, float* ctx) {
  for (int c = 0; c < d_head; ++c) {
    float acc = 0.0f;
    for (int j = 0; j < klen; ++j) acc += probs[j] * vbase[static_cast<long>(j) * stride + c];
    ctx[c] = acc;
  }
}

void logsumexp_row(const float* logits, int n, float* max_out, float* lse_out) {
  float m = logits[0];
  for (int v = 1; v < n; ++v)
    if (logits[v] > m) m = logits[v];
  float sum = 0.0f;
  for (int v = 0; v < n; ++v) sum += std::exp(logits[v] - m);
  *max_out = m;
  *lse_out = m + std::log(sum);
}

int argmax_row(const float* x, int n) {
  int best = 0;
  for (int v = 1; v < n; ++v)
    if (x[v] > x[best]) best = v;
  return best;
}

void quantize_row(float* x, int n) {
  for (int i = 0; i < n; ++i) x[i] = quantize_fp16(x[i]);
}

}  // namespace seqforge::kernels
