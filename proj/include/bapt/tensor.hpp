#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapt {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class EmptySupportError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of doubles.
///
/// Rank-1 tensors of extent n behave as 1 x n row vectors wherever a matrix
/// view is needed; sequences are stored one step per row.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  /// Empty, or the same length as `data`.
  std::vector<double> grad;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double v) { return Tensor({1, 1}, std::vector<double>{v}); }

  std::size_t numel() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  bool has_grad() const { return !grad.empty(); }
  void zero_grad() { grad.assign(data.size(), 0.0); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }
  double item() const;

  MatrixMap mat() { return MatrixMap(data.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data.data(), rows(), cols()); }
  MatrixMap grad_mat();

  bool all_finite() const;
};

Tensor from_matrix(const RowMatrix& m);

}  // namespace bapt
