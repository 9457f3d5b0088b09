#include "asmmd/tensor.hpp"

#include <cmath>

#include "asmmd/errors.hpp"

namespace asmmd {

std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d < 0) throw ShapeError("tensor: negative dimension in " + shape_str(shape));
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  if (shape.empty()) return "scalar";
  std::string s;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

Tensor Tensor::zeros(std::vector<std::int64_t> shape) {
  Tensor t;
  const std::int64_t n = shape_numel(shape);
  t.shape = std::move(shape);
  t.data.assign(static_cast<std::size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& x : t.data) x = value;
  return t;
}

Tensor Tensor::scalar(double value) {
  Tensor t;
  t.shape = {1};
  t.data = {value};
  return t;
}

Tensor Tensor::from(std::vector<std::int64_t> shape, std::vector<double> values) {
  const std::int64_t n = shape_numel(shape);
  if (n != static_cast<std::int64_t>(values.size()))
    throw ShapeError("tensor: " + std::to_string(values.size()) +
                     " values for shape " + shape_str(shape));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::move(values);
  return t;
}

std::int64_t Tensor::numel() const {
  return static_cast<std::int64_t>(data.size());
}

std::int64_t Tensor::dim(int i) const {
  if (i < 0 || i >= rank())
    throw ShapeError("tensor: axis " + std::to_string(i) + " out of range for " +
                     shape_str(shape));
  return shape[static_cast<std::size_t>(i)];
}

double& Tensor::at(std::int64_t i, std::int64_t j) {
  return data[static_cast<std::size_t>(i * shape[1] + j)];
}

double Tensor::at(std::int64_t i, std::int64_t j) const {
  return data[static_cast<std::size_t>(i * shape[1] + j)];
}

double& Tensor::at(std::int64_t i, std::int64_t j, std::int64_t k) {
  return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
}

double Tensor::at(std::int64_t i, std::int64_t j, std::int64_t k) const {
  return data[static_cast<std::size_t>((i * shape[1] + j) * shape[2] + k)];
}

bool Tensor::all_finite() const {
  for (double x : data)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace asmmd
