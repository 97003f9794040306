#include <algorithm>
#include <bit>
#include <cfenv>
#include <cmath>
#include <cstring>
#include <limits>
#include <vector>

#include "doctest.h"
#include "seqforge/fp16.hpp"
#include "seqforge/kernels.hpp"
#include "seqforge/rng.hpp"
#include "seqforge/tape.hpp"
#include "seqforge/tensor.hpp"

using namespace seqforge;

namespace {

// Independent binary16 rounding oracle: arithmetic route via frexp /
// nearbyint (ties-to-even under the default rounding mode), no bit
// twiddling shared with the implementation under test.
float oracle_q16(float x) {
  double xd = static_cast<double>(x);
  if (std::isnan(xd)) return x;
  if (std::isinf(xd)) return x;
  if (xd == 0.0) return x;  // keeps the sign of zero
  int exp;
  std::frexp(std::fabs(xd), &exp);  // |x| = m * 2^exp, m in [0.5, 1)
  int quantum_exp = (exp - 1 < -14) ? -24 : exp - 11;
  double quantum = std::ldexp(1.0, quantum_exp);
  double q = std::nearbyint(xd / quantum) * quantum;
  if (std::fabs(q) > 65504.0)
    return xd > 0 ? std::numeric_limits<float>::infinity()
                  : -std::numeric_limits<float>::infinity();
  return static_cast<float>(q);
}

bool same_bits(float a, float b) {
  return std::bit_cast<uint32_t>(a) == std::bit_cast<uint32_t>(b);
}

}  // namespace

TEST_CASE("quantize_fp16 matches spec examples") {
  CHECK(quantize_fp16(0.5f) == 0.5f);
  CHECK(std::isinf(quantize_fp16(1.0e5f)));
  CHECK(quantize_fp16(1.0e5f) > 0);
  CHECK(quantize_fp16(std::ldexp(1.0f, -25)) == 0.0f);
  CHECK_FALSE(std::signbit(quantize_fp16(std::ldexp(1.0f, -25))));
  CHECK(std::signbit(quantize_fp16(-std::ldexp(1.0f, -25))));

  // values frozen from a reference binary16 conversion
  CHECK(quantize_fp16(65504.0f) == 65504.0f);
  CHECK(quantize_fp16(65519.0f) == 65504.0f);
  CHECK(std::isinf(quantize_fp16(65520.0f)));
  CHECK(quantize_fp16(6.0e-8f) == std::ldexp(1.0f, -24));  // smallest subnormal
  CHECK(quantize_fp16(1.0f / 3.0f) == 0.333251953125f);
  CHECK(quantize_fp16(345.678f) == 345.75f);
  CHECK(quantize_fp16(0.1f) == 0.0999755859375f);
  CHECK(std::isnan(quantize_fp16(std::nanf(""))));
  CHECK(std::isinf(quantize_fp16(std::numeric_limits<float>::infinity())));
}

TEST_CASE("quantize_fp16 agrees with the arithmetic oracle on a wide sweep") {
  REQUIRE(std::fegetround() == FE_TONEAREST);
  RngStream rng(123, 0);
  int checked = 0;
  for (int i = 0; i < 200000; ++i) {
    uint32_t bits = static_cast<uint32_t>(rng.next_u64());
    float x = std::bit_cast<float>(bits);
    float got = quantize_fp16(x);
    float want = oracle_q16(x);
    if (std::isnan(x)) {
      CHECK(std::isnan(got));
      continue;
    }
    if (!same_bits(got, want)) {
      CAPTURE(x);
      CAPTURE(got);
      CAPTURE(want);
      REQUIRE(same_bits(got, want));
    }
    ++checked;
  }
  CHECK(checked > 100000);

  // dense sweeps over the delicate regions: subnormal boundary and overflow
  for (int i = -40; i <= 40; ++i) {
    for (float base : {65504.0f, 65520.0f, 2.0f, 1024.0f}) {
      float x = base + static_cast<float>(i) * 0.5f;
      CHECK(same_bits(quantize_fp16(x), oracle_q16(x)));
    }
    float tiny = std::ldexp(1.0f, -25) + static_cast<float>(i) * std::ldexp(1.0f, -30);
    CHECK(same_bits(quantize_fp16(tiny), oracle_q16(tiny)));
    CHECK(same_bits(quantize_fp16(-tiny), oracle_q16(-tiny)));
  }
}

TEST_CASE("quantize_fp16 is idempotent, odd, and monotone") {
  RngStream rng(7, 0);
  float prev_x = 0, prev_q = 0;
  bool have_prev = false;
  for (int i = 0; i < 20000; ++i) {
    float x = static_cast<float>((rng.next_double() - 0.5) * std::ldexp(1.0, (int)rng.next_below(40) - 20));
    float q = quantize_fp16(x);
    CHECK(same_bits(quantize_fp16(q), q));
    CHECK(same_bits(quantize_fp16(-x), -q));
    if (have_prev) {
      if (prev_x <= x)
        CHECK(prev_q <= q);
      else
        CHECK(prev_q >= q);
    }
    prev_x = x;
    prev_q = q;
    have_prev = true;
  }
}

TEST_CASE("deterministic_sum is a strict left fold") {
  CHECK(deterministic_sum(std::vector<float>{}) == 0.0f);
  CHECK(deterministic_sum(std::vector<float>{1.0f, 2.0f, 3.0f}) == 6.0f);

  // left fold absorbs the 1.0 before cancellation
  std::vector<float> v{1e30f, 1.0f, -1e30f};
  float ref = 0.0f;
  for (float x : v) ref += x;  // reference strict fold, written out longhand
  CHECK(deterministic_sum(v) == 0.0f);
  CHECK(same_bits(deterministic_sum(v), ref));

  // permutation sensitivity: same multiset, different order, different value
  std::vector<float> w{1e30f, -1e30f, 1.0f};
  CHECK(deterministic_sum(w) == 1.0f);

  // identical sequences -> bitwise identical results
  RngStream rng(99, 1);
  std::vector<float> r(257);
  for (auto& x : r) x = static_cast<float>(rng.next_normal()) * 1e3f;
  CHECK(same_bits(deterministic_sum(r), deterministic_sum(r)));

  CHECK(deterministic_sum(std::vector<double>{0.1, 0.2}) == 0.1 + 0.2);
}

TEST_CASE("rng streams are reproducible and splittable") {
  RngStream a(42, 3);
  RngStream b(42, 3);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  RngStream c(42, 4);
  c.set_counter(0);
  RngStream d(42, 3, 0);
  int differ = 0;
  for (int i = 0; i < 64; ++i)
    if (c.next_u64() != d.next_u64()) ++differ;
  CHECK(differ > 60);  // distinct streams do not share draws

  // counter round-trip: resume mid-stream from (seed, stream, counter)
  RngStream e(7, 9);
  for (int i = 0; i < 5; ++i) e.next_u64();
  uint64_t saved = e.counter();
  std::vector<uint64_t> tail;
  for (int i = 0; i < 8; ++i) tail.push_back(e.next_u64());
  RngStream f(7, 9, saved);
  for (int i = 0; i < 8; ++i) CHECK(f.next_u64() == tail[static_cast<size_t>(i)]);
}

TEST_CASE("rng derived draws are well-behaved") {
  RngStream rng(1234, 5);
  double sum = 0, sum2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = rng.next_normal();
    sum += x;
    sum2 += x * x;
  }
  CHECK(std::abs(sum / n) < 0.05);
  CHECK(std::abs(sum2 / n - 1.0) < 0.05);

  for (int i = 0; i < 1000; ++i) {
    double u = rng.next_double();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    uint64_t k = rng.next_below(17);
    CHECK(k < 17);
  }
  CHECK(rng.next_below(1) == 0);

  // shuffle: deterministic permutation
  std::vector<int> p(50), q(50);
  for (int i = 0; i < 50; ++i) p[static_cast<size_t>(i)] = q[static_cast<size_t>(i)] = i;
  RngStream s1(5, 2), s2(5, 2);
  s1.shuffle(p);
  s2.shuffle(q);
  CHECK(p == q);
  std::vector<int> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 0; i < 50; ++i) CHECK(sorted[static_cast<size_t>(i)] == i);
  CHECK(p != sorted);  // astronomically unlikely to be identity
}

TEST_CASE("tensor basics and the fp16 grid flag") {
  Tensor t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6.0f);
  CHECK(t.numel() == 6);

  CHECK_THROWS_AS(Tensor({2, -1}), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), ShapeError);

  Tensor u({1, 3}, std::vector<float>{0.1f, 1.0f / 3.0f, 7.0f});
  CHECK_FALSE(u.on_fp16_grid());
  u.quantize_to_fp16_grid();
  CHECK(u.on_fp16_grid());
  CHECK(u.dtype() == DType::F16E);
  CHECK(u.at(0, 0) == 0.0999755859375f);

  Tensor empty({0, 4});
  CHECK(empty.numel() == 0);
  CHECK(empty.rows() == 0);
  CHECK(empty.all_finite());
}

// ---------------------------------------------------------------------------
// tape: primitives vs central finite differences
// ---------------------------------------------------------------------------

namespace {

using Builder = std::function<int(Tape&, std::span<const float>)>;

double tape_sum(const Builder& build, std::span<const float> theta) {
  Tape t(theta);
  int node = build(t, theta);
  double s = 0;
  for (float v : t.out(node).flat()) s += v;
  return s;
}

// runs forward+backward once for the analytic gradient, then grad_check
void check_primitive(const Builder& build, std::vector<float> theta,
                     double tol = 1e-3) {
  Tape t{std::span<const float>(theta)};
  int node = build(t, theta);
  std::vector<float> pgrad(theta.size(), 0.0f);
  Tensor ones(t.out(node).shape());
  for (auto& v : ones.flat()) v = 1.0f;
  t.backward_from(node, ones, pgrad);

  auto loss = [&](std::span<const float> th) { return tape_sum(build, th); };
  auto res = grad_check(loss, pgrad, theta, 1e-3);
  CAPTURE(res.worst_index);
  CHECK_FALSE(res.nonfinite);
  CHECK(res.max_err < tol);
}

std::vector<float> randvec(size_t n, uint64_t seed, float scale = 0.5f) {
  RngStream rng(seed, 0);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.next_normal()) * scale;
  return v;
}

Tensor rand_tensor(std::vector<int> shape, uint64_t seed, float scale = 0.5f) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return Tensor(std::move(shape), randvec(static_cast<size_t>(n), seed, scale));
}

}  // namespace

TEST_CASE("gradients: matmul_nt") {
  Tensor x = rand_tensor({3, 4}, 11);
  check_primitive(
      [&](Tape& t, std::span<const float>) {
        int xi = t.leaf(x);
        return t.matmul_nt(xi, ParamRef{0, 5, 4});
      },
      randvec(20, 21));
}

TEST_CASE("gradients: add_bias") {
  Tensor x = rand_tensor({4, 6}, 12);
  check_primitive(
      [&](Tape& t, std::span<const float>) {
        int xi = t.leaf(x);
        return t.add_bias(xi, ParamRef{0, 1, 6});
      },
      randvec(6, 22));
}

TEST_CASE("gradients: embedding_lookup") {
  check_primitive(
      [&](Tape& t, std::span<const float>) {
        return t.embedding_lookup(ParamRef{0, 5, 3}, {4, 1, 1, 0, 3});
      },
      randvec(15, 23));
}

TEST_CASE("gradients: layer_norm") {
  Tensor x = rand_tensor({3, 8}, 13, 1.0f);
  check_primitive(
      [&](Tape& t, std::span<const float>) {
        int xi = t.leaf(x);
        return t.layer_norm(xi, ParamRef{0, 1, 8}, ParamRef{8, 1, 8});
      },
      randvec(16, 24));
}

TEST_CASE("gradients: scale, relu, add, dropout through a linear map") {
  Tensor x = rand_tensor({3, 4}, 14, 1.0f);
  SUBCASE("scale") {
    check_primitive(
        [&](Tape& t, std::span<const float>) {
          int xi = t.leaf(x);
          int mm = t.matmul_nt(xi, ParamRef{0, 4, 4});
          return t.scale(mm, -1.7f);
        },
        randvec(16, 25));
  }
  SUBCASE("relu") {
    check_primitive(
        [&](Tape& t, std::span<const float>) {
          int xi = t.leaf(x);
          int mm = t.matmul_nt(xi, ParamRef{0, 4, 4});
          return t.relu(mm);
        },
        randvec(16, 26));
  }
  SUBCASE("add") {
    check_primitive(
        [&](Tape& t, std::span<const float>) {
          int xi = t.leaf(x);
          int a = t.matmul_nt(xi, ParamRef{0, 4, 4});
          int b = t.matmul_nt(xi, ParamRef{16, 4, 4});
          return t.add(a, b);
        },
        randvec(32, 27));
  }
  SUBCASE("dropout") {
    check_primitive(
        [&](Tape& t, std::span<const float>) {
          int xi = t.leaf(x);
          int mm = t.matmul_nt(xi, ParamRef{0, 4, 4});
          RngStream rng(77, 0);  // fixed stream: every rebuild sees the same mask
          return t.dropout(mm, 0.3f, rng);
        },
        randvec(16, 28));
  }
}

TEST_CASE("gradients: attention over ragged spans") {
  // two sentences of lengths 3 and 2, causal spans on the first,
  // full spans on the second
  Tensor x = rand_tensor({5, 8}, 15, 0.7f);
  std::vector<int> kb{0, 0, 0, 3, 3};
  std::vector<int> kl{1, 2, 3, 2, 2};
  check_primitive(
      [&](Tape& t, std::span<const float>) {
        int xi = t.leaf(x);
        int q = t.matmul_nt(xi, ParamRef{0, 8, 8});
        int k = t.matmul_nt(xi, ParamRef{64, 8, 8});
        int v = t.matmul_nt(xi, ParamRef{128, 8, 8});
        return t.attention(q, k, v, 2, kb, kl);
      },
      randvec(192, 29, 0.4f));
}

TEST_CASE("gradients: softmax cross entropy, plain and smoothed") {
  Tensor x = rand_tensor({4, 5}, 16, 0.8f);
  std::vector<int> gold{2, 0, 6, 3};
  std::vector<uint8_t> active{1, 1, 0, 1};  // one pad row
  for (float eps : {0.0f, 0.1f}) {
    CAPTURE(eps);
    std::vector<float> theta = randvec(35, 30);
    Tape t{std::span<const float>(theta)};
    int xi = t.leaf(x);
    int logits = t.matmul_nt(xi, ParamRef{0, 7, 5});
    int loss = t.softmax_xent(logits, gold, active, eps);
    std::vector<float> pgrad(theta.size(), 0.0f);
    t.backward(loss, 1.0f, pgrad);

    auto lossf = [&](std::span<const float> th) {
      Tape t2(th);
      int xi2 = t2.leaf(x);
      int l2 = t2.matmul_nt(xi2, ParamRef{0, 7, 5});
      int n2 = t2.softmax_xent(l2, gold, active, eps);
      double s = 0;
      for (float v : t2.out(n2).flat()) s += v;
      return s;
    };
    auto res = grad_check(lossf, pgrad, theta, 1e-3);
    CHECK_FALSE(res.nonfinite);
    CHECK(res.max_err < 1e-3);

    // pad rows contribute nothing: logits grad rows for inactive entries are 0
    const Tensor& dl = t.node(logits).grad;
    for (int vcol = 0; vcol < 7; ++vcol) CHECK(dl.at(2, vcol) == 0.0f);
  }
}

TEST_CASE("grad_check spec examples") {
  // f(theta) = theta^2 at theta=3: analytic 6
  std::vector<float> th{3.0f};
  std::vector<float> analytic{6.0f};
  auto res = grad_check(
      [](std::span<const float> t) { return static_cast<double>(t[0]) * t[0]; },
      analytic, th, 1e-3);
  CHECK(res.max_err < 1e-6);
  CHECK_FALSE(res.nonfinite);

  // constant function: central difference is exactly zero
  std::vector<float> zero{0.0f};
  auto res2 = grad_check([](std::span<const float>) { return 42.0; }, zero, th, 1e-3);
  CHECK(res2.max_err == 0.0);

  // non-finite probes are a distinguished failure, not a crash
  auto res3 = grad_check(
      [](std::span<const float> t) {
        return t[0] > 3.0f ? std::numeric_limits<double>::infinity() : 0.0;
      },
      zero, th, 1e-3);
  CHECK(res3.nonfinite);
}

TEST_CASE("tape replay and determinism") {
  std::vector<float> theta = randvec(200, 31);
  auto run = [&](DType dt, std::vector<float>& pgrad) {
    Tape t{std::span<const float>(theta), dt};
    int e = t.embedding_lookup(ParamRef{0, 6, 8}, {1, 3, 5, 0});
    int s = t.scale(e, 2.0f);
    int ln = t.layer_norm(s, ParamRef{48, 1, 8}, ParamRef{56, 1, 8});
    int q = t.matmul_nt(ln, ParamRef{64, 8, 8});
    int at = t.attention(q, q, q, 2, {0, 0, 0, 0}, {1, 2, 3, 4});
    int r = t.add(at, ln);
    int lg = t.matmul_nt(r, ParamRef{128, 6, 8});
    int loss = t.softmax_xent(lg, {2, 3, 4, 1}, {1, 1, 1, 0}, 0.0f);
    CHECK(t.replay_matches());
    t.backward(loss, 1.0f, pgrad);
    return t.out(loss).flat()[0];
  };
  std::vector<float> g1(theta.size(), 0.0f), g2(theta.size(), 0.0f);
  float l1 = run(DType::F32, g1);
  float l2 = run(DType::F32, g2);
  CHECK(same_bits(l1, l2));
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);

  // FP16E mode: outputs land on the grid and replay still matches
  std::vector<float> g3(theta.size(), 0.0f);
  Tape tf{std::span<const float>(theta), DType::F16E};
  int e = tf.embedding_lookup(ParamRef{0, 6, 8}, {1, 3, 5, 0});
  int lnf = tf.layer_norm(e, ParamRef{48, 1, 8}, ParamRef{56, 1, 8});
  int lg = tf.matmul_nt(lnf, ParamRef{128, 6, 8});
  int loss = tf.softmax_xent(lg, {2, 3, 4, 1}, {1, 1, 1, 1}, 0.0f);
  CHECK(tf.replay_matches());
  for (float v : tf.out(lg).flat()) CHECK(same_bits(v, quantize_fp16(v)));
  tf.backward(loss, 1.0f, g3);
  for (float v : g3) CHECK(same_bits(v, quantize_fp16(v)));
}

TEST_CASE("gradient accumulation is a continuing fold across tapes") {
  // one tape over four rows vs two consecutive tapes over two rows each,
  // accumulating into the same flat buffer: bitwise identical
  std::vector<float> theta = randvec(6 * 4 + 4 * 5, 32);
  ParamRef embed{0, 6, 4};
  ParamRef wout{24, 5, 4};
  std::vector<int> ids{1, 4, 2, 5};
  std::vector<int> gold{3, 0, 2, 4};

  auto run_rows = [&](size_t lo, size_t hi, std::vector<float>& pgrad) {
    Tape t{std::span<const float>(theta)};
    std::vector<int> sub_ids(ids.begin() + static_cast<long>(lo), ids.begin() + static_cast<long>(hi));
    std::vector<int> sub_gold(gold.begin() + static_cast<long>(lo), gold.begin() + static_cast<long>(hi));
    int e = t.embedding_lookup(embed, sub_ids);
    int lg = t.matmul_nt(e, wout);
    int loss = t.softmax_xent(lg, sub_gold, std::vector<uint8_t>(sub_ids.size(), 1), 0.0f);
    t.backward(loss, 1.0f, pgrad);
  };

  std::vector<float> g_once(theta.size(), 0.0f);
  run_rows(0, 4, g_once);

  std::vector<float> g_acc(theta.size(), 0.0f);
  run_rows(0, 2, g_acc);
  run_rows(2, 4, g_acc);

  CHECK(std::memcmp(g_once.data(), g_acc.data(), g_once.size() * sizeof(float)) == 0);
}
