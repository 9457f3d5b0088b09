#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace asmmd {

/// Dense row-major tensor of doubles with value semantics.
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;

  Tensor() = default;

  static Tensor zeros(std::vector<std::int64_t> shape);
  static Tensor full(std::vector<std::int64_t> shape, double value);
  static Tensor scalar(double value);
  static Tensor from(std::vector<std::int64_t> shape, std::vector<double> values);

  bool defined() const { return !shape.empty() || !data.empty(); }
  std::int64_t numel() const;
  int rank() const { return static_cast<int>(shape.size()); }
  std::int64_t dim(int i) const;

  double* ptr() { return data.data(); }
  const double* ptr() const { return data.data(); }

  double& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  double& at(std::int64_t i, std::int64_t j);
  double& at(std::int64_t i, std::int64_t j, std::int64_t k);
  double at(std::int64_t i, std::int64_t j) const;
  double at(std::int64_t i, std::int64_t j, std::int64_t k) const;

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
  bool all_finite() const;
};

std::string shape_str(const std::vector<std::int64_t>& shape);
std::int64_t shape_numel(const std::vector<std::int64_t>& shape);

}  // namespace asmmd
