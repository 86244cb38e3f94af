#include "tcri/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "tcri/parallel.hpp"

namespace tcri::diff {

namespace {
std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (auto d : shape) p *= d;
  return p;
}
}  // namespace

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::vector<double> values(product(shape), 0.0);
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::from_data(std::vector<std::size_t> shape,
                         std::vector<double> values) {
  if (values.size() != product(shape)) {
    throw std::invalid_argument("Tensor: buffer length does not match shape");
  }
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("Tensor: non-finite value in input data");
    }
  }
  return Tensor(std::move(shape), std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return from_data({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return from_data({rows, cols}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape_.empty()) return 1;
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (shape_.size() < 2) return 1;
  return shape_[1];
}

double Tensor::scalar_value() const {
  if (data_.size() != 1) {
    throw std::logic_error("Tensor: scalar_value() on non-scalar of shape " +
                           shape_str());
  }
  return data_[0];
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ',';
    os << shape_[i];
  }
  os << ')';
  return os.str();
}

Tensor Tensor::transposed() const {
  if (rank() > 2) throw std::logic_error("Tensor: transpose needs rank <= 2");
  const std::size_t r = rows(), c = cols();
  Tensor out = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = at(i, j);
  return out;
}

Tensor matmul_value_serial(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (k != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                a.shape_str() + " x " + b.shape_str());
  }
  Tensor c = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a.at(i, l);
      for (std::size_t j = 0; j < m; ++j) c.at(i, j) += av * b.at(l, j);
    }
  }
  return c;
}

Tensor matmul_value(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (k != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                a.shape_str() + " x " + b.shape_str());
  }
  Tensor c = Tensor::zeros({n, m});
  // One thread owns one output row, so the result does not depend on the
  // number of threads.
#pragma omp parallel for schedule(static) if (par::enabled() && n * k * m > 16384)
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a.at(i, l);
      for (std::size_t j = 0; j < m; ++j) c.at(i, j) += av * b.at(l, j);
    }
  }
  return c;
}

}  // namespace tcri::diff
