#pragma once

// Forward and hand-written backward kernels. Every kernel processes samples of
// a batch independently with identical loop order, so a batched call is
// bit-identical to the per-sample calls concatenated.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "seminf/errors.hpp"
#include "seminf/tensor.hpp"

namespace seminf {

namespace detail {

// Eight independent partial sums; keeps the reduction vectorizable without
// relaxing floating-point semantics.
inline float dot(const float* a, const float* b, std::size_t n) noexcept {
  std::array<float, 8> acc{};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  float tail = 0.0F;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline void axpy(float alpha, const float* x, float* y, std::size_t n) noexcept {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct BatchView {
  std::size_t batch;
  std::size_t channels;
  std::size_t height;
  std::size_t width;
  bool batched;
};

inline BatchView view_chw(const Tensor& t, const char* op) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw ValidationError(std::string(op) + ": expected [C,H,W] or [N,C,H,W], got " +
                        shape_str(t.shape()));
}

inline Shape make_chw(const BatchView& v, std::size_t c, std::size_t h, std::size_t w) {
  return v.batched ? Shape{v.batch, c, h, w} : Shape{c, h, w};
}

struct ConvGeometry {
  std::size_t in_c, in_h, in_w;
  std::size_t out_c, k_h, k_w;
  std::size_t out_h, out_w;
  std::size_t stride, padding;

  std::size_t patch() const noexcept { return in_c * k_h * k_w; }
  std::size_t pixels() const noexcept { return out_h * out_w; }
};

inline ConvGeometry conv_geometry(const BatchView& in, const Tensor& weights, std::size_t stride,
                                  std::size_t padding) {
  require(weights.rank() == 4, "conv2d: weights must be [C_out,C_in,kh,kw], got " +
                                   shape_str(weights.shape()));
  require(stride >= 1, "conv2d: stride must be >= 1");
  require(weights.dim(1) == in.channels,
          "conv2d: input channels " + std::to_string(in.channels) + " do not match weights " +
              shape_str(weights.shape()));
  ConvGeometry g{in.channels, in.height,      in.width, weights.dim(0), weights.dim(2),
                 weights.dim(3), 0,           0,        stride,         padding};
  require(in.height + 2 * padding >= g.k_h && in.width + 2 * padding >= g.k_w,
          "conv2d: kernel " + shape_str(weights.shape()) + " does not fit padded input [" +
              std::to_string(in.height) + "," + std::to_string(in.width) + "]");
  g.out_h = (in.height + 2 * padding - g.k_h) / stride + 1;
  g.out_w = (in.width + 2 * padding - g.k_w) / stride + 1;
  return g;
}

// col[(ci*kh + ky)*kw + kx][oy*out_w + ox]
inline void im2col(const float* in, const ConvGeometry& g, float* col) {
  const std::size_t pixels = g.pixels();
  for (std::size_t ci = 0; ci < g.in_c; ++ci) {
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        float* row = col + ((ci * g.k_h + ky) * g.k_w + kx) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          float* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            std::fill(dst, dst + g.out_w, 0.0F);
            continue;
          }
          const float* src = in + (ci * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? 0.0F
                                                                   : src[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

inline void col2im(const float* col, const ConvGeometry& g, float* in_grad) {
  const std::size_t pixels = g.pixels();
  for (std::size_t ci = 0; ci < g.in_c; ++ci) {
    for (std::size_t ky = 0; ky < g.k_h; ++ky) {
      for (std::size_t kx = 0; kx < g.k_w; ++kx) {
        const float* row = col + ((ci * g.k_h + ky) * g.k_w + kx) * pixels;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          float* dst = in_grad + (ci * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.in_w))
              dst[static_cast<std::size_t>(ix)] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

inline bool is_pointwise(const ConvGeometry& g) noexcept {
  return g.k_h == 1 && g.k_w == 1 && g.stride == 1 && g.padding == 0;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv2d

inline Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias,
                     std::size_t stride = 1, std::size_t padding = 0) {
  const auto in = detail::view_chw(input, "conv2d");
  const auto g = detail::conv_geometry(in, weights, stride, padding);
  require(bias.rank() == 1 && bias.dim(0) == g.out_c,
          "conv2d: bias " + shape_str(bias.shape()) + " does not match weights " +
              shape_str(weights.shape()));

  Tensor out(detail::make_chw(in, g.out_c, g.out_h, g.out_w));
  const std::size_t patch = g.patch();
  const std::size_t pixels = g.pixels();
  const std::size_t in_stride = in.channels * in.height * in.width;
  std::vector<float> col(detail::is_pointwise(g) ? 0 : patch * pixels);

  for (std::size_t n = 0; n < in.batch; ++n) {
    const float* src = input.raw() + n * in_stride;
    const float* cols = src;
    if (!detail::is_pointwise(g)) {
      detail::im2col(src, g, col.data());
      cols = col.data();
    }
    float* dst = out.raw() + n * g.out_c * pixels;
    for (std::size_t co = 0; co < g.out_c; ++co) {
      float* orow = dst + co * pixels;
      std::fill(orow, orow + pixels, bias[co]);
      const float* wrow = weights.raw() + co * patch;
      for (std::size_t k = 0; k < patch; ++k) detail::axpy(wrow[k], cols + k * pixels, orow, pixels);
    }
  }
  return out;
}

struct ConvGrads {
  Tensor input_grad;
  Tensor weight_grad;
  Tensor bias_grad;
};

inline ConvGrads conv2d_backward(const Tensor& upstream, const Tensor& saved_input,
                                 const Tensor& weights, std::size_t stride = 1,
                                 std::size_t padding = 0) {
  const auto in = detail::view_chw(saved_input, "conv2d_backward");
  const auto g = detail::conv_geometry(in, weights, stride, padding);
  const Shape expected = detail::make_chw(in, g.out_c, g.out_h, g.out_w);
  require(upstream.shape() == expected, "conv2d_backward: upstream " + shape_str(upstream.shape()) +
                                            " does not match expected output " +
                                            shape_str(expected));

  ConvGrads grads{Tensor(saved_input.shape()), Tensor(weights.shape()), Tensor(Shape{g.out_c})};
  const std::size_t patch = g.patch();
  const std::size_t pixels = g.pixels();
  const std::size_t in_stride = in.channels * in.height * in.width;
  std::vector<float> col(patch * pixels);
  std::vector<float> col_grad(patch * pixels);

  for (std::size_t n = 0; n < in.batch; ++n) {
    const float* src = saved_input.raw() + n * in_stride;
    const float* up = upstream.raw() + n * g.out_c * pixels;
    detail::im2col(src, g, col.data());
    std::fill(col_grad.begin(), col_grad.end(), 0.0F);
    for (std::size_t co = 0; co < g.out_c; ++co) {
      const float* urow = up + co * pixels;
      float bsum = 0.0F;
      for (std::size_t p = 0; p < pixels; ++p) bsum += urow[p];
      grads.bias_grad[co] += bsum;
      float* wg = grads.weight_grad.raw() + co * patch;
      const float* wrow = weights.raw() + co * patch;
      for (std::size_t k = 0; k < patch; ++k) {
        wg[k] += detail::dot(urow, col.data() + k * pixels, pixels);
        detail::axpy(wrow[k], urow, col_grad.data() + k * pixels, pixels);
      }
    }
    detail::col2im(col_grad.data(), g, grads.input_grad.raw() + n * in_stride);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// adaptive average pooling: window i covers [floor(i*H/k), floor((i+1)*H/k))

namespace detail {
inline std::pair<std::size_t, std::size_t> pool_window(std::size_t i, std::size_t extent,
                                                       std::size_t out) {
  return {i * extent / out, (i + 1) * extent / out};
}
}  // namespace detail

inline Tensor adaptive_avg_pool(const Tensor& input, std::size_t out_size) {
  const auto in = detail::view_chw(input, "adaptive_avg_pool");
  require(out_size >= 1 && out_size <= in.height && out_size <= in.width,
          "adaptive_avg_pool: output size " + std::to_string(out_size) +
              " must lie in [1, min(H,W)] for input " + shape_str(input.shape()));
  Tensor out(detail::make_chw(in, in.channels, out_size, out_size));
  const std::size_t planes = in.batch * in.channels;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = input.raw() + p * in.height * in.width;
    float* dst = out.raw() + p * out_size * out_size;
    for (std::size_t i = 0; i < out_size; ++i) {
      const auto [y0, y1] = detail::pool_window(i, in.height, out_size);
      for (std::size_t j = 0; j < out_size; ++j) {
        const auto [x0, x1] = detail::pool_window(j, in.width, out_size);
        float sum = 0.0F;
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) sum += src[y * in.width + x];
        dst[i * out_size + j] = sum / static_cast<float>((y1 - y0) * (x1 - x0));
      }
    }
  }
  return out;
}

inline Tensor adaptive_avg_pool_backward(const Tensor& upstream, const Tensor& saved_input,
                                         std::size_t out_size) {
  const auto in = detail::view_chw(saved_input, "adaptive_avg_pool_backward");
  require(upstream.shape() == detail::make_chw(in, in.channels, out_size, out_size),
          "adaptive_avg_pool_backward: upstream shape " + shape_str(upstream.shape()) +
              " does not match input " + shape_str(saved_input.shape()));
  Tensor grad(saved_input.shape());
  const std::size_t planes = in.batch * in.channels;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* up = upstream.raw() + p * out_size * out_size;
    float* dst = grad.raw() + p * in.height * in.width;
    for (std::size_t i = 0; i < out_size; ++i) {
      const auto [y0, y1] = detail::pool_window(i, in.height, out_size);
      for (std::size_t j = 0; j < out_size; ++j) {
        const auto [x0, x1] = detail::pool_window(j, in.width, out_size);
        const float share = up[i * out_size + j] / static_cast<float>((y1 - y0) * (x1 - x0));
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) dst[y * in.width + x] += share;
      }
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// dense: input [D] or [N,D], weights [O,D], bias [O]

inline Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  require(weights.rank() == 2, "dense: weights must be [O,D], got " + shape_str(weights.shape()));
  const std::size_t out_dim = weights.dim(0);
  const std::size_t in_dim = weights.dim(1);
  require(bias.rank() == 1 && bias.dim(0) == out_dim,
          "dense: bias " + shape_str(bias.shape()) + " does not match weights " +
              shape_str(weights.shape()));
  require((input.rank() == 1 || input.rank() == 2) && input.shape().back() == in_dim,
          "dense: input " + shape_str(input.shape()) + " does not match weights " +
              shape_str(weights.shape()));
  const std::size_t batch = input.rank() == 2 ? input.dim(0) : 1;
  Tensor out(input.rank() == 2 ? Shape{batch, out_dim} : Shape{out_dim});
  for (std::size_t n = 0; n < batch; ++n) {
    const float* x = input.raw() + n * in_dim;
    float* y = out.raw() + n * out_dim;
    for (std::size_t o = 0; o < out_dim; ++o)
      y[o] = bias[o] + detail::dot(weights.raw() + o * in_dim, x, in_dim);
  }
  return out;
}

struct DenseGrads {
  Tensor input_grad;
  Tensor weight_grad;
  Tensor bias_grad;
};

inline DenseGrads dense_backward(const Tensor& upstream, const Tensor& saved_input,
                                 const Tensor& weights) {
  require(weights.rank() == 2, "dense_backward: weights must be [O,D]");
  const std::size_t out_dim = weights.dim(0);
  const std::size_t in_dim = weights.dim(1);
  require((saved_input.rank() == 1 || saved_input.rank() == 2) &&
              saved_input.shape().back() == in_dim,
          "dense_backward: input " + shape_str(saved_input.shape()) + " does not match weights " +
              shape_str(weights.shape()));
  const std::size_t batch = saved_input.rank() == 2 ? saved_input.dim(0) : 1;
  const Shape expected = saved_input.rank() == 2 ? Shape{batch, out_dim} : Shape{out_dim};
  require(upstream.shape() == expected, "dense_backward: upstream " + shape_str(upstream.shape()) +
                                            " does not match expected " + shape_str(expected));
  DenseGrads grads{Tensor(saved_input.shape()), Tensor(weights.shape()), Tensor(Shape{out_dim})};
  for (std::size_t n = 0; n < batch; ++n) {
    const float* x = saved_input.raw() + n * in_dim;
    const float* g = upstream.raw() + n * out_dim;
    float* dx = grads.input_grad.raw() + n * in_dim;
    for (std::size_t o = 0; o < out_dim; ++o) {
      if (g[o] == 0.0F) continue;
      grads.bias_grad[o] += g[o];
      detail::axpy(g[o], weights.raw() + o * in_dim, dx, in_dim);
      detail::axpy(g[o], x, grads.weight_grad.raw() + o * in_dim, in_dim);
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// elementwise / pooling / loss

inline Tensor relu(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = v > 0.0F ? v : 0.0F;
  return out;
}

inline Tensor relu_backward(const Tensor& upstream, const Tensor& saved_input) {
  require(upstream.shape() == saved_input.shape(),
          "relu_backward: upstream " + shape_str(upstream.shape()) + " vs input " +
              shape_str(saved_input.shape()));
  Tensor grad = upstream;
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(saved_input[i] > 0.0F)) grad[i] = 0.0F;
  return grad;
}

/// 2x2 max pooling with stride 2; odd trailing rows/columns are dropped.
inline Tensor maxpool2(const Tensor& input) {
  const auto in = detail::view_chw(input, "maxpool2");
  require(in.height >= 2 && in.width >= 2, "maxpool2: input " + shape_str(input.shape()) +
                                               " smaller than the 2x2 window");
  const std::size_t oh = in.height / 2;
  const std::size_t ow = in.width / 2;
  Tensor out(detail::make_chw(in, in.channels, oh, ow));
  const std::size_t planes = in.batch * in.channels;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = input.raw() + p * in.height * in.width;
    float* dst = out.raw() + p * oh * ow;
    for (std::size_t y = 0; y < oh; ++y) {
      const float* r0 = src + (2 * y) * in.width;
      const float* r1 = r0 + in.width;
      for (std::size_t x = 0; x < ow; ++x)
        dst[y * ow + x] = std::max(std::max(r0[2 * x], r0[2 * x + 1]),
                                   std::max(r1[2 * x], r1[2 * x + 1]));
    }
  }
  return out;
}

/// Routes the gradient to the first maximal element of each window (row-major).
inline Tensor maxpool2_backward(const Tensor& upstream, const Tensor& saved_input) {
  const auto in = detail::view_chw(saved_input, "maxpool2_backward");
  const std::size_t oh = in.height / 2;
  const std::size_t ow = in.width / 2;
  require(upstream.shape() == detail::make_chw(in, in.channels, oh, ow),
          "maxpool2_backward: upstream " + shape_str(upstream.shape()) + " does not match input " +
              shape_str(saved_input.shape()));
  Tensor grad(saved_input.shape());
  const std::size_t planes = in.batch * in.channels;
  for (std::size_t p = 0; p < planes; ++p) {
    const float* src = saved_input.raw() + p * in.height * in.width;
    const float* up = upstream.raw() + p * oh * ow;
    float* dst = grad.raw() + p * in.height * in.width;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        std::size_t best = (2 * y) * in.width + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (2 * y + dy) * in.width + 2 * x + dx;
            if (src[idx] > src[best]) best = idx;
          }
        dst[best] += up[y * ow + x];
      }
    }
  }
  return grad;
}

/// Row-wise softmax over the last axis of a [D] or [N,D] tensor.
inline Tensor softmax(const Tensor& logits) {
  require(logits.rank() == 1 || logits.rank() == 2,
          "softmax: expected [D] or [N,D], got " + shape_str(logits.shape()));
  require(logits.all_finite(), "softmax: non-finite logits");
  const std::size_t width = logits.shape().back();
  require(width >= 1, "softmax: empty row");
  const std::size_t rows = logits.size() / width;
  Tensor out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* x = logits.raw() + r * width;
    float* y = out.raw() + r * width;
    const float peak = *std::max_element(x, x + width);
    double total = 0.0;
    for (std::size_t i = 0; i < width; ++i) total += std::exp(static_cast<double>(x[i] - peak));
    for (std::size_t i = 0; i < width; ++i)
      y[i] = static_cast<float>(std::exp(static_cast<double>(x[i] - peak)) / total);
  }
  return out;
}

inline Tensor softmax_backward(const Tensor& upstream, const Tensor& softmax_output) {
  require(upstream.shape() == softmax_output.shape(),
          "softmax_backward: upstream " + shape_str(upstream.shape()) + " vs output " +
              shape_str(softmax_output.shape()));
  const std::size_t width = softmax_output.shape().back();
  const std::size_t rows = softmax_output.size() / width;
  Tensor grad(softmax_output.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* y = softmax_output.raw() + r * width;
    const float* g = upstream.raw() + r * width;
    double inner = 0.0;
    for (std::size_t i = 0; i < width; ++i) inner += static_cast<double>(g[i]) * y[i];
    for (std::size_t i = 0; i < width; ++i)
      grad[r * width + i] = static_cast<float>(y[i] * (g[i] - inner));
  }
  return grad;
}

namespace detail {
inline double log_sum_exp(const float* x, std::size_t n) {
  const double peak = *std::max_element(x, x + n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += std::exp(x[i] - peak);
  return peak + std::log(total);
}
}  // namespace detail

/// Softmax cross-entropy of a single logit row, computed with log-sum-exp.
inline double cross_entropy(std::span<const float> logits, std::size_t target) {
  require(!logits.empty(), "cross_entropy: empty logits");
  require(target < logits.size(), "cross_entropy: target " + std::to_string(target) +
                                      " out of range for " + std::to_string(logits.size()) +
                                      " classes");
  return detail::log_sum_exp(logits.data(), logits.size()) - logits[target];
}

/// Mean cross-entropy over the rows of [N,C] logits.
inline double cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  if (logits.rank() == 1) {
    require(targets.size() == 1, "cross_entropy: one target expected for [C] logits");
    return cross_entropy(logits.data(), targets[0]);
  }
  require(logits.rank() == 2 && logits.dim(0) == targets.size(),
          "cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
              std::to_string(targets.size()) + " targets");
  const std::size_t width = logits.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < targets.size(); ++r)
    total += cross_entropy(logits.data().subspan(r * width, width), targets[r]);
  return targets.empty() ? 0.0 : total / static_cast<double>(targets.size());
}

/// Gradient of the mean cross-entropy w.r.t. logits: (softmax - onehot) / N.
inline Tensor cross_entropy_backward(const Tensor& logits, std::span<const std::size_t> targets) {
  Tensor grad = softmax(logits);
  const std::size_t width = logits.shape().back();
  const std::size_t rows = logits.size() / width;
  require(rows == targets.size(), "cross_entropy_backward: " + std::to_string(rows) +
                                      " rows vs " + std::to_string(targets.size()) + " targets");
  const float scale = 1.0F / static_cast<float>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    require(targets[r] < width, "cross_entropy_backward: target out of range");
    grad[r * width + targets[r]] -= 1.0F;
    for (std::size_t i = 0; i < width; ++i) grad[r * width + i] *= scale;
  }
  return grad;
}

// ---------------------------------------------------------------------------
// optimizer

/// p <- p - lr * (grad + weight_decay * p)
inline void sgd_step(std::span<GradPair> params, float learning_rate, float weight_decay) {
  require(learning_rate > 0.0F, "sgd_step: learning rate must be positive");
  for (auto& p : params) {
    require(p.value.shape() == p.grad.shape(), "sgd_step: gradient shape mismatch");
    float* v = p.value.raw();
    const float* g = p.grad.raw();
    for (std::size_t i = 0; i < p.value.size(); ++i)
      v[i] -= learning_rate * (g[i] + weight_decay * v[i]);
  }
}

}  // namespace seminf
