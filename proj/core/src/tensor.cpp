#include "vmi/tensor.hpp"

#include <cmath>
#include <stdexcept>

#include "vmi/rng.hpp"

namespace vmi {

namespace {
bool g_allow_nonfinite = false;

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape");
    n *= d;
  }
  return n;
}
}  // namespace

void Tensor::allow_nonfinite(bool allow) { g_allow_nonfinite = allow; }
bool Tensor::nonfinite_allowed() { return g_allow_nonfinite; }

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty()) throw std::invalid_argument("tensor: empty shape");
  if (shape_product(shape_) != data_.size()) {
    throw std::invalid_argument("tensor: data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_string());
  }
  if (!g_allow_nonfinite) {
    for (double v : data_) {
      if (!std::isfinite(v)) throw std::invalid_argument("tensor: non-finite entry");
    }
  }
}

Tensor Tensor::scalar(double v) { return Tensor({1, 1}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

Tensor Tensor::row(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

Tensor Tensor::column(std::vector<double> v) {
  std::size_t n = v.size();
  return Tensor({n, 1}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor({rows, cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t = zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::randn(std::vector<std::size_t> shape, RngStream& rng) {
  std::size_t n = shape_product(shape);
  std::vector<double> data(n);
  for (double& v : data) v = rng.normal();
  return Tensor(std::move(shape), std::move(data));
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw std::invalid_argument("tensor: rows() on non-matrix " + shape_string());
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw std::invalid_argument("tensor: cols() on non-matrix " + shape_string());
  return shape_[1];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return data_[r * cols() + c];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return data_[r * cols() + c];
}

double Tensor::value() const {
  if (numel() != 1) throw std::invalid_argument("tensor: value() on non-scalar " + shape_string());
  return data_[0];
}

std::string Tensor::shape_string() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape_[i]);
  }
  return s + ")";
}

bool approx_equal(const Tensor& a, const Tensor& b, double tol) {
  if (!a.same_shape(b)) return false;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    if (std::abs(a.data()[i] - b.data()[i]) > tol) return false;
  }
  return true;
}

}  // namespace vmi
