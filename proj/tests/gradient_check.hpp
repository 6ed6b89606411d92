#pragma once

// Finite-difference checks for every hand-written backward kernel. Each check
// draws a random shape from `shape_id`, random data from `seed`, and returns
// the worst norm-wise relative error across the gradients the op produces.
// The scalar loss is sum(r * y) with a fixed random r, accumulated in double.

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "reference.hpp"
#include "seminf/ops.hpp"

namespace seminf::testing {

struct GradCheckResult {
  std::string op;
  double worst = 0.0;
};

inline std::mt19937_64 check_rng(std::uint64_t shape_id, std::uint64_t seed) {
  return std::mt19937_64(shape_id * 1000003ULL + seed * 7919ULL + 17ULL);
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

/// Values bounded away from zero so the ReLU kink is never crossed by a step.
inline Tensor kink_free(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (float& v : t.data())
    if (std::abs(v) < 0.02F) v = v < 0.0F ? -0.02F - std::abs(v) : 0.02F + v;
  return t;
}

/// Distinct values spaced 0.01 apart so every pooling window has a clear max.
inline Tensor distinct_values(Shape shape, std::mt19937_64& rng) {
  Tensor t(std::move(shape));
  std::vector<std::size_t> order(t.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[order[i]] = -1.0F + 0.01F * static_cast<float>(i);
  return t;
}

inline double check_conv2d(std::uint64_t shape_id, std::uint64_t seed) {
  auto rng = check_rng(shape_id, seed);
  const std::size_t n = pick(rng, 1, 2), ci = pick(rng, 1, 3), co = pick(rng, 1, 3);
  const std::size_t h = pick(rng, 3, 6), w = pick(rng, 3, 6);
  const std::size_t k = pick(rng, 1, 3), stride = pick(rng, 1, 2), pad = pick(rng, 0, 1);
  const Tensor x = random_tensor({n, ci, h, w}, rng);
  const Tensor wt = random_tensor({co, ci, k, k}, rng);
  const Tensor b = random_tensor({co}, rng);
  const Tensor y = conv2d(x, wt, b, stride, pad);
  const Tensor r = random_tensor(y.shape(), rng);
  const auto g = conv2d_backward(r, x, wt, stride, pad);
  const double ex = relative_error(
      g.input_grad.data(),
      numeric_gradient([&](const Tensor& v) { return weighted_sum(conv2d(v, wt, b, stride, pad), r); }, x));
  const double ew = relative_error(
      g.weight_grad.data(),
      numeric_gradient([&](const Tensor& v) { return weighted_sum(conv2d(x, v, b, stride, pad), r); }, wt));
  const double eb = relative_error(
      g.bias_grad.data(),
      numeric_gradient([&](const Tensor& v) { return weighted_sum(conv2d(x, wt, v, stride, pad), r); }, b));
  return std::max({ex, ew, eb});
}

inline double check_dense(std::uint64_t shape_id, std::uint64_t seed) {
  auto rng = check_rng(shape_id, seed);
  const std::size_t n = pick(rng, 1, 3), d = pick(rng, 1, 8), o = pick(rng, 1, 6);
  const Tensor x = random_tensor({n, d}, rng);
  const Tensor wt = random_tensor({o, d}, rng);
  const Tensor b = random_tensor({o}, rng);
  const Tensor r = random_tensor({n, o}, rng);
  const auto g = dense_backward(r, x, wt);
  const double ex = relative_error(
      g.input_grad.data(),
      numeric_gradient([&](const Tensor& v) { return weighted_sum(dense(v, wt, b), r); }, x));
  const double ew = relative_error(
      g.weight_grad.data(),
      numeric_gradient([&](const Tensor& v) { return weighted_sum(dense(x, v, b), r); }, wt));
  const double eb = relative_error(
      g.bias_grad.data(),
      numeric_gradient([&](const Tensor& v) { return weighted_sum(dense(x, wt, v), r); }, b));
  return std::max({ex, ew, eb});
}

inline double check_relu(std::uint64_t shape_id, std::uint64_t seed) {
  auto rng = check_rng(shape_id, seed);
  const Tensor x = kink_free({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 5), pick(rng, 2, 5)}, rng);
  const Tensor r = random_tensor(x.shape(), rng);
  return relative_error(relu_backward(r, x).data(),
                        numeric_gradient([&](const Tensor& v) { return weighted_sum(relu(v), r); }, x));
}

inline double check_maxpool2(std::uint64_t shape_id, std::uint64_t seed) {
  auto rng = check_rng(shape_id, seed);
  const Tensor x = distinct_values({pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 2, 7), pick(rng, 2, 7)}, rng);
  const Tensor y = maxpool2(x);
  const Tensor r = random_tensor(y.shape(), rng);
  return relative_error(maxpool2_backward(r, x).data(),
                        numeric_gradient([&](const Tensor& v) { return weighted_sum(maxpool2(v), r); }, x));
}

inline double check_adaptive_pool(std::uint64_t shape_id, std::uint64_t seed) {
  auto rng = check_rng(shape_id, seed);
  const std::size_t h = pick(rng, 2, 7), w = pick(rng, 2, 7);
  const std::size_t k = pick(rng, 1, std::min(h, w));
  const Tensor x = random_tensor({pick(rng, 1, 2), pick(rng, 1, 3), h, w}, rng);
  const Tensor r = random_tensor(adaptive_avg_pool(x, k).shape(), rng);
  return relative_error(
      adaptive_avg_pool_backward(r, x, k).data(),
      numeric_gradient([&](const Tensor& v) { return weighted_sum(adaptive_avg_pool(v, k), r); }, x));
}

inline constexpr double kSoftmaxStep = 1e-2;

inline double check_softmax(std::uint64_t shape_id, std::uint64_t seed) {
  auto rng = check_rng(shape_id, seed);
  const Tensor x = random_tensor({pick(rng, 1, 3), pick(rng, 2, 8)}, rng, -3.0F, 3.0F);
  const Tensor r = random_tensor(x.shape(), rng);
  return relative_error(softmax_backward(r, softmax(x)).data(),
                        numeric_gradient([&](const Tensor& v) { return weighted_sum(softmax(v), r); }, x,
                                         kSoftmaxStep));
}

inline double check_cross_entropy(std::uint64_t shape_id, std::uint64_t seed) {
  auto rng = check_rng(shape_id, seed);
  const std::size_t n = pick(rng, 1, 4), c = pick(rng, 2, 8);
  const Tensor x = random_tensor({n, c}, rng, -3.0F, 3.0F);
  std::vector<std::size_t> t(n);
  for (auto& v : t) v = pick(rng, 0, c - 1);
  return relative_error(cross_entropy_backward(x, t).data(),
                        numeric_gradient([&](const Tensor& v) { return cross_entropy(v, t); }, x));
}

using GradCheckFn = double (*)(std::uint64_t, std::uint64_t);

struct NamedCheck {
  const char* name;
  GradCheckFn fn;
};

inline const std::vector<NamedCheck>& all_gradient_checks() {
  static const std::vector<NamedCheck> checks{
      {"conv2d", check_conv2d},       {"dense", check_dense},
      {"relu", check_relu},           {"maxpool2", check_maxpool2},
      {"adaptive_avg_pool", check_adaptive_pool},
      {"softmax", check_softmax},     {"cross_entropy", check_cross_entropy}};
  return checks;
}

}  // namespace seminf::testing
