#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "seminf/errors.hpp"

namespace seminf {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << ',';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

/// Dense row-major float32 array. Holds its storage by value; copies are deep.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, float fill = 0.0F)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    require(shape_size(shape_) == data_.size(),
            "tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                shape_str(shape_));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  float* raw() noexcept { return data_.data(); }
  const float* raw() const noexcept { return data_.data(); }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  float& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  float at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  float& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  float at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  Tensor reshaped(Shape shape) const& {
    require(shape_size(shape) == data_.size(),
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }
  Tensor reshaped(Shape shape) && {
    require(shape_size(shape) == data_.size(),
            "cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), std::move(data_));
  }

  /// Copy of sample `n` from a batched tensor (leading axis dropped).
  Tensor sample(std::size_t n) const {
    require(rank() >= 2 && n < shape_[0], "sample index out of range for " + shape_str(shape_));
    Shape inner(shape_.begin() + 1, shape_.end());
    const std::size_t stride = shape_size(inner);
    return Tensor(std::move(inner),
                  std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(n * stride),
                                     data_.begin() + static_cast<std::ptrdiff_t>((n + 1) * stride)));
  }

  /// Rows [begin, end) of the leading axis.
  Tensor slice(std::size_t begin, std::size_t end) const {
    require(rank() >= 1 && begin <= end && end <= shape_[0],
            "slice out of range for " + shape_str(shape_));
    Shape out_shape = shape_;
    out_shape[0] = end - begin;
    const std::size_t stride = shape_[0] == 0 ? 0 : data_.size() / shape_[0];
    return Tensor(std::move(out_shape),
                  std::vector<float>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                     data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }

  bool all_finite() const noexcept {
    for (float v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Stack equally-shaped tensors along a new leading axis.
inline Tensor stack(std::span<const Tensor> items) {
  require(!items.empty(), "stack of zero tensors");
  Shape shape = items.front().shape();
  std::vector<float> data;
  data.reserve(items.size() * items.front().size());
  for (const auto& t : items) {
    require(t.shape() == shape, "stack shape mismatch: " + shape_str(shape) + " vs " +
                                    shape_str(t.shape()));
    data.insert(data.end(), t.values().begin(), t.values().end());
  }
  shape.insert(shape.begin(), items.size());
  return Tensor(std::move(shape), std::move(data));
}

/// Select rows of the leading axis by index.
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  require(t.rank() >= 1, "gather_rows on scalar tensor");
  const std::size_t stride = t.dim(0) == 0 ? 0 : t.size() / t.dim(0);
  Shape shape = t.shape();
  shape[0] = rows.size();
  std::vector<float> data;
  data.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    require(r < t.dim(0), "row index out of range");
    auto first = t.values().begin() + static_cast<std::ptrdiff_t>(r * stride);
    data.insert(data.end(), first, first + static_cast<std::ptrdiff_t>(stride));
  }
  return Tensor(std::move(shape), std::move(data));
}

/// Parameter paired with its gradient accumulator.
struct GradPair {
  Tensor value;
  Tensor grad;

  explicit GradPair(Tensor v) : value(std::move(v)), grad(value.shape()) {}
  GradPair(Tensor v, Tensor g) : value(std::move(v)), grad(std::move(g)) {
    require(value.shape() == grad.shape(), "gradient shape " + shape_str(grad.shape()) +
                                               " does not match value shape " +
                                               shape_str(value.shape()));
  }
};

}  // namespace seminf
