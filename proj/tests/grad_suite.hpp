#pragma once

// Finite-difference cases shared by the unit tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "telescopic/core/gradcheck.hpp"
#include "telescopic/core/ops.hpp"
#include "telescopic/model/params.hpp"
#include "telescopic/peft/adapter.hpp"
#include "telescopic/peft/cross_modal.hpp"
#include "telescopic/peft/decoder_enhancement.hpp"
#include "telescopic/train/loss.hpp"
#include "test_util.hpp"

namespace telescopic::testing {

struct GradCase {
  const char* name;
  std::vector<Shape> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> fn;
  Real lo = -1, hi = 1;
};

inline std::vector<std::size_t> rows_of(std::initializer_list<std::size_t> r) { return r; }

inline std::vector<GradCase> primitive_grad_cases() {
  return {
      GradCase{"add", {{3, 4}, {3, 4}}, [](auto& t) { return ops::add(t[0], t[1]); }},
      GradCase{"sub", {{3, 4}, {3, 4}}, [](auto& t) { return ops::sub(t[0], t[1]); }},
      GradCase{"mul", {{3, 4}, {3, 4}}, [](auto& t) { return ops::mul(t[0], t[1]); }},
      GradCase{"scale", {{3, 4}}, [](auto& t) { return ops::scale(t[0], -1.7); }},
      GradCase{"add_scalar", {{3, 4}}, [](auto& t) { return ops::add_scalar(t[0], 0.3); }},
      GradCase{"scale_by", {{3, 4}, {1}}, [](auto& t) { return ops::scale_by(t[0], t[1]); }},
      GradCase{"add_bias", {{3, 4}, {4}}, [](auto& t) { return ops::add_bias(t[0], t[1]); }},
      GradCase{"matmul", {{3, 5}, {5, 2}}, [](auto& t) { return ops::matmul(t[0], t[1]); }},
      GradCase{"linear", {{3, 5}, {5, 2}, {2}}, [](auto& t) { return ops::linear(t[0], t[1], &t[2]); }},
      GradCase{"bmm", {{2, 3, 4}, {2, 4, 5}}, [](auto& t) { return ops::bmm(t[0], t[1]); }},
      GradCase{"bmm_t", {{2, 3, 4}, {2, 5, 4}}, [](auto& t) { return ops::bmm(t[0], t[1], true); }},
      GradCase{"transpose", {{3, 4}}, [](auto& t) { return ops::transpose(t[0]); }},
      GradCase{"reshape", {{3, 4}}, [](auto& t) { return ops::reshape(t[0], {2, 6}); }},
      GradCase{"swap_axes12", {{2, 3, 4, 2}}, [](auto& t) { return ops::swap_axes12(t[0]); }},
      GradCase{"concat0", {{2, 3}, {1, 3}},
               [](auto& t) { return ops::concat(std::span<const Tensor>(t.data(), 2), 0); }},
      GradCase{"concat1", {{2, 3}, {2, 2}},
               [](auto& t) { return ops::concat(std::span<const Tensor>(t.data(), 2), 1); }},
      GradCase{"silu", {{3, 4}}, [](auto& t) { return ops::silu(t[0]); }, -3, 3},
      GradCase{"sigmoid", {{3, 4}}, [](auto& t) { return ops::sigmoid(t[0]); }, -3, 3},
      GradCase{"softmax", {{3, 5}}, [](auto& t) { return ops::softmax(t[0]); }, -2, 2},
      GradCase{"layer_norm", {{3, 6}, {6}, {6}}, [](auto& t) { return ops::layer_norm(t[0], t[1], t[2]); }},
      GradCase{"sum", {{3, 4}}, [](auto& t) { return ops::sum(t[0]); }},
      GradCase{"mean", {{3, 4}}, [](auto& t) { return ops::mean(t[0]); }},
      GradCase{"mean_groups", {{6, 3}}, [](auto& t) { return ops::mean_groups(t[0], 3); }},
      GradCase{"expand_rows", {{2, 3}}, [](auto& t) { return ops::expand_rows(t[0], 4); }},
      GradCase{"gather_rows", {{4, 3}},
               [](auto& t) {
                 static const auto r = rows_of({2, 0, 2, 3});
                 return ops::gather_rows(t[0], r);
               }},
      GradCase{"embedding", {{5, 3}},
               [](auto& t) {
                 static const auto r = rows_of({1, 1, 4});
                 return ops::embedding(t[0], r);
               }},
      GradCase{"conv2d_same", {{2, 2, 4, 5}, {3, 2, 3, 3}, {3}},
               [](auto& t) { return ops::conv2d(t[0], t[1], &t[2], ops::Padding::kSame); }},
      GradCase{"conv2d_valid", {{1, 2, 5, 5}, {2, 2, 3, 3}},
               [](auto& t) { return ops::conv2d(t[0], t[1], nullptr, ops::Padding::kNone); }},
      GradCase{"conv2d_1x1", {{2, 3, 3, 3}, {1, 3, 1, 1}, {1}},
               [](auto& t) { return ops::conv2d(t[0], t[1], &t[2], ops::Padding::kSame); }},
      GradCase{"upsample", {{1, 2, 3, 3}}, [](auto& t) { return ops::upsample_nearest2x(t[0]); }},
      GradCase{"batch_norm_train", {{4, 2, 3, 3}, {2}, {2}},
               [](auto& t) {
                 auto stats = ops::BatchNormStats::fresh(2);
                 return ops::batch_norm(t[0], t[1], t[2], stats, true);
               }},
      GradCase{"batch_norm_eval", {{2, 2, 3, 3}, {2}, {2}},
               [](auto& t) {
                 auto stats = ops::BatchNormStats::fresh(2);
                 return ops::batch_norm(t[0], t[1], t[2], stats, false);
               }},
      GradCase{"dropout", {{4, 5}},
               [](auto& t) {
                 RngStream rng(77);  // same mask on every evaluation
                 return ops::dropout(t[0], 0.3, true, rng);
               }},
      GradCase{"patchify", {{2, 1, 4, 4}}, [](auto& t) { return ops::patchify(t[0], 2); }},
      GradCase{"unpatchify", {{8, 4}}, [](auto& t) { return ops::unpatchify(t[0], 2, 1, 4, 4, 2); }}};
}

inline Real primitive_grad_error(const GradCase& c, int seed) {
  RngStream rng(1000 + seed);
  std::vector<Tensor> leaves;
  for (const Shape& s : c.inputs) leaves.push_back(random_tensor(s, rng, c.lo, c.hi, true));
  return finite_difference_check([&] { return probe(c.fn(leaves), seed); }, leaves);
}

// Perturbs every trainable entry so zero-initialized weights do not hide terms.
inline void randomize(ParamSet& params, std::uint64_t seed, Real scale) {
  RngStream rng(seed);
  for (const auto& e : params.entries()) {
    if (params.is_buffer(e.name)) continue;
    Tensor t = e.tensor;
    for (auto& v : t.mutable_data()) v += static_cast<Real>(rng.uniform(-scale, scale));
  }
}

inline Tensor random_mask(const Shape& shape, RngStream& rng) {
  Tensor m(shape);
  for (auto& v : m.mutable_data()) v = rng.below(2) ? Real(1) : Real(0);
  return m;
}

inline Real adapter_grad_error(int seed) {
  ParamSet params;
  RngStream rng(300 + seed);
  AdapterParams a = make_adapter(params, "a", 8, 3, rng);
  randomize(params, 400 + seed, 0.5);
  Tensor f = random_tensor({4, 8}, rng, -1, 1, true);
  std::vector<Tensor> leaves = params.trainable();
  leaves.push_back(f);
  return finite_difference_check(
      [&] {
        RngStream drop(55);  // fixed mask across evaluations
        return probe(adapter_forward(f, a, true, drop), seed);
      },
      leaves);
}

inline Real cross_modal_grad_error(int seed) {
  ParamSet params;
  RngStream rng(500 + seed);
  CrossModalBlock b = make_cross_modal(params, "cm", 8, 6, 4, 4, 2, rng);
  randomize(params, 600 + seed, 0.5);
  Tensor cond = random_tensor({3, 4}, rng, -1, 1, true);
  Tensor v = random_tensor({3, 8}, rng, -1, 1, true);
  Tensor z = random_tensor({3, 6}, rng, -1, 1, true);
  std::vector<Tensor> leaves = params.trainable();
  leaves.insert(leaves.end(), {cond, v, z});
  return finite_difference_check([&] { return probe(cross_modal_enhance(b, cond, v, z), seed); }, leaves);
}

struct EnhancementGrad {
  Real error;
  Real pre_norm_bias_grad;  // largest |gradient| on the conv bias ahead of batch norm
};

inline EnhancementGrad decoder_enhancement_grad_error(int seed) {
  ParamSet params;
  RngStream rng(700 + seed);
  ops::BatchNormStats stats;
  DecoderEnhancement e = make_decoder_enhancement(params, "enh", 3, rng, stats);
  randomize(params, 800 + seed, 0.5);
  Tensor l = random_tensor({2, 1, 4, 4}, rng, -2, 2, true);
  // The conv bias ahead of batch norm is cancelled by the mean subtraction;
  // its gradient is zero up to rounding, so a relative error is meaningless.
  std::vector<Tensor> leaves;
  for (const Tensor& t : params.trainable())
    if (t.node() != e.conv3_b.node()) leaves.push_back(t);
  leaves.push_back(l);
  e.conv3_b.zero_grad();
  backward(probe(decoder_enhance(e, l, true), seed));
  Real bias = 0;
  for (Real g : e.conv3_b.grad()) bias = std::max(bias, std::abs(g));
  // Batch statistics depend on the input alone; the running update does not
  // feed back into the evaluation.
  const Real err = finite_difference_check([&] { return probe(decoder_enhance(e, l, true), seed); }, leaves);
  return {err, bias};
}

inline Real loss_grad_error(int seed, Real eps) {
  RngStream rng(200 + seed);
  Tensor logits = random_tensor({2, 1, 8, 8}, rng, -3, 3, true);
  Tensor mask = random_mask(logits.shape(), rng);
  return finite_difference_check([&](const Tensor& x) { return composite_loss(x, mask, 1.5, 1.0, eps); }, logits);
}

}  // namespace telescopic::testing
