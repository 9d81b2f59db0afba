#include "ctrlsynth/tensor.hpp"

#include <algorithm>
#include <cmath>

#include "ctrlsynth/error.hpp"

namespace ctrlsynth {

namespace {

void check_shape(const Tensor::Shape& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw ShapeError("tensor rank must be 1 or 2, got " + shape_string(shape));
  }
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) {
  check_shape(shape);
  rank_ = shape.size();
  rows_ = rank_ == 2 ? shape[0] : 1;
  cols_ = shape.back();
  values_.assign(rows_ * cols_, 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : Tensor(std::move(shape)) {
  if (values.size() != values_.size()) {
    throw ShapeError("tensor of shape " + shape_string(this->shape()) + " given " +
                     std::to_string(values.size()) + " values");
  }
  values_ = std::move(values);
}

Tensor::Tensor(std::size_t rows, std::size_t cols)
    : rank_(2), rows_(rows), cols_(cols), values_(rows * cols, 0.0) {
  if (rows == 0 || cols == 0) {
    throw ShapeError("tensor dimensions must be positive: " + shape_string({rows, cols}));
  }
}

Tensor::Shape Tensor::shape() const {
  if (rank_ == 1) return {cols_};
  if (rank_ == 2) return {rows_, cols_};
  return {};
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols) { return Tensor(rows, cols); }

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({1, n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t(n, n);
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

double Tensor::item() const {
  if (values_.size() != 1) {
    throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  }
  return values_[0];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

bool Tensor::all_finite() const {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

std::string shape_string(const Tensor::Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

}  // namespace ctrlsynth
