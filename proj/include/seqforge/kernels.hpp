#pragma once

// Row-level compute kernels shared by the recording tape and the eager
// incremental-decode path. Step-wise and full-sequence decoding are
// required to agree bitwise in FP32, which holds only if both paths run
// the exact same folds — so everything row-shaped lives here and is
// called from both sides.

namespace seqforge::kernels {

// layer-norm variance epsilon, shared by tape and eager paths
inline constexpr float kLayerNormEps = 1e-5f;

// y[o] = sum_k x[k] * W[o*in_dim + k]   (W stored (out, in), left fold over k)
void linear_nt_row(const float* x, const float* W, int in_dim, int out_dim, float* y);

// y[i] = a[i] + b[i]
void add_row(const float* a, const float* b, int n, float* y);

// y[i] = c * x[i]
void scale_row(const float* x, float c, int n, float* y);

// y[i] = max(x[i], 0)
void relu_row(const float* x, int n, float* y);

// mean/rstd are written for the backward pass; y = (x - mean) * rstd * g + b
void layer_norm_row(const float* x, const float* gamma, const float* beta, int n,
                    float eps, float* y, float* mean_out, float* rstd_out);

// scores[j] = scale * sum_c q[c] * kbase[j*stride + c], j in [0, klen)
void attn_scores_row(const float* q, const float* kbase, int klen, int stride,
                     int d_head, float scale, float* scores);

// in-place stable softmax: max-subtract, exp, normalize (fixed fold order)
void softmax_row(float* s, int n);

// ctx[c] = sum_j probs[j] * vbase[j*stride + c]
void attn_ctx_row(const float* probs, const float* vbase, int klen, int stride,
                  int d_head, float* ctx);

// row max and log-sum-exp, folded in index order
void logsumexp_row(const float* logits, int n, float* max_out, float* lse_out);

// index of the largest element, first occurrence wins
int argmax_row(const float* x, int n);

// quantize every element onto the binary16 grid (FP16E mode)
void quantize_row(float* x, int n);

}  // namespace seqforge::kernels
