#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace vmi {

class RngStream;

// Dense row-major array of 64-bit reals.
//
// Shapes are lists of positive dimension sizes; a 1x1 tensor acts as a
// scalar. Entries are validated to be finite at construction; set
// Tensor::allow_nonfinite(true) only to inspect a failed intermediate.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  // Row vector (1 x n) / column vector (n x 1).
  static Tensor row(std::vector<double> v);
  static Tensor column(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor identity(std::size_t n);
  static Tensor randn(std::vector<std::size_t> shape, RngStream& rng);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  bool is_scalar() const { return numel() == 1; }

  // 2-d accessors; throw unless ndim() == 2.
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;

  double value() const;  // scalar contents; throws if numel != 1

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  std::string shape_string() const;

  static void allow_nonfinite(bool allow);
  static bool nonfinite_allowed();

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

bool approx_equal(const Tensor& a, const Tensor& b, double tol);

}  // namespace vmi
