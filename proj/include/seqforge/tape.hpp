#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "seqforge/rng.hpp"
#include "seqforge/tensor.hpp"

namespace seqforge {

// View into the flat parameter vector: `rows` x `cols` row-major at `offset`.
// Vectors (biases, norm gains) use rows == 1.
struct ParamRef {
  int64_t offset = 0;
  int rows = 0;
  int cols = 0;
  int64_t numel() const { return static_cast<int64_t>(rows) * cols; }
};

enum class OpKind : uint8_t {
  Leaf,            // externally supplied constant (no backward)
  EmbeddingLookup, // ids -> rows of an embedding param
  MatMulNT,        // x (R x K) times W^T, W stored (O x K)
  AddBias,         // x + b (b broadcast over rows)
  Add,             // x + y elementwise
  Scale,           // c * x
  Relu,
  LayerNorm,       // row-wise, with affine params
  Dropout,         // recorded mask, scaled by 1/(1-p)
  Attention,       // multi-head scores+softmax+mix over ragged key spans
  SoftmaxXent,     // per-row (label-smoothed) cross entropy over logits
};

struct TapeNode {
  OpKind kind;
  int in0 = -1, in1 = -1, in2 = -1;
  ParamRef p0{}, p1{};  // op parameters (W, b, E, gamma/beta)
  Tensor out;
  Tensor grad;  // allocated during backward

  // op attributes
  std::vector<int> ids;                // embedding tokens / gold targets
  std::vector<uint8_t> active;         // xent: rows that count (non-pad)
  std::vector<int> key_base, key_len;  // attention key spans per query row
  int heads = 0;
  float scalar = 0.0f;  // scale factor / smoothing epsilon / dropout p
  std::vector<float> aux;  // probs | (mean,rstd) pairs | dropout mask | (max,lse) pairs
  std::vector<float> nll;       // xent: per-row negative log likelihood
  std::vector<uint8_t> correct; // xent: argmax(logits) == gold
};

// Recording tape. Forward ops execute eagerly and are recorded; backward
// walks nodes in exact reverse recording order. Parameter gradients are
// accumulated element-by-element straight into the caller's flat buffer,
// so folding a batch through as one tape or as several consecutive tapes
// produces the identical per-element addition sequence (this is what
// makes gradient-accumulation runs bit-equal to large-batch runs).
//
// The params span must stay alive and unmodified from construction
// through backward()/replay_matches().
class Tape {
 public:
  Tape(std::span<const float> params, DType dtype = DType::F32);

  int leaf(Tensor value);
  int embedding_lookup(ParamRef embed, std::vector<int> ids);
  int matmul_nt(int x, ParamRef w);
  int add_bias(int x, ParamRef b);
  int add(int x, int y);
  int scale(int x, float c);
  int relu(int x);
  int layer_norm(int x, ParamRef gamma, ParamRef beta);
  int dropout(int x, float p, RngStream& rng);
  int attention(int q, int k, int v, int heads,
                std::vector<int> key_base, std::vector<int> key_len);
  int softmax_xent(int logits, std::vector<int> gold, std::vector<uint8_t> active,
                   float epsilon);

  const Tensor& out(int id) const { return nodes_[id].out; }
  const TapeNode& node(int id) const { return nodes_[id]; }
  size_t size() const { return nodes_.size(); }
  DType dtype() const { return dtype_; }

  // Seeds d(loss_row) = seed on every active row of the given xent node,
  // then runs the reverse sweep. Parameter gradients land in pgrad
  // (caller-owned, NOT zeroed here — accumulation is the point).
  void backward(int loss_node, float seed, std::span<float> pgrad);

  // Generic seeding: sets d(node) = dout and sweeps. Used to exercise
  // single primitives against finite differences.
  void backward_from(int node, const Tensor& dout, std::span<float> pgrad);

  // Re-executes every recorded forward and compares outputs bitwise.
  bool replay_matches() const;

 private:
  std::span<const float> params_;
  DType dtype_;
  std::vector<TapeNode> nodes_;

  int push(TapeNode n);
  void forward_node(TapeNode& n) const;  // fills out (+aux); dropout reads its mask
  void backward_node(int i, std::span<float> pgrad);
  void quantize_param_range(std::span<float> pgrad, int64_t off, int64_t n) const;
  const float* param_ptr(const ParamRef& p) const { return params_.data() + p.offset; }
};

struct GradCheckResult {
  double max_err = 0.0;      // max over coords of |analytic - central| / max(1, |analytic|)
  size_t worst_index = 0;
  bool nonfinite = false;    // loss was non-finite at some probe point
};

// Central-difference check of an analytic gradient. `loss` must be a pure
// function of theta; `analytic` returns the full gradient at theta.
GradCheckResult grad_check(const std::function<double(std::span<const float>)>& loss,
                           std::span<const float> analytic_grad,
                           std::span<float> theta, double h);

}  // namespace seqforge
