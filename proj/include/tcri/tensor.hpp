#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tcri::diff {

// Dense row-major array of doubles, rank 0 (scalar) to 2 (matrix). Plain
// value type; autodiff bookkeeping lives on the Tape, not here.
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  // Validates the buffer: length must match the shape and every entry must be
  // finite. This is the only entry point for external data.
  static Tensor from_data(std::vector<std::size_t> shape,
                          std::vector<double> values);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Rank-agnostic matrix view: scalars are 1x1, vectors are n x 1.
  std::size_t rows() const;
  std::size_t cols() const;

  bool is_scalar() const { return data_.size() == 1 && shape_.empty(); }
  double scalar_value() const;

  double& at(std::size_t i) { return data_[i]; }
  double at(std::size_t i) const { return data_[i]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }
  double at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  std::string shape_str() const;

  Tensor transposed() const;

 private:
  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), data_(std::move(values)) {}

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Row-major matrix product, OpenMP over rows (see tcri::par). `serial`
// variants are the reference implementations used by tests and the benchmark.
Tensor matmul_value(const Tensor& a, const Tensor& b);
Tensor matmul_value_serial(const Tensor& a, const Tensor& b);

}  // namespace tcri::diff
