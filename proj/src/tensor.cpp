#include "bapt/tensor.hpp"

#include <cmath>
#include <sstream>

namespace bapt {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_numel(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                         std::to_string(data.size()) + " values");
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged row list");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const {
  if (shape.size() <= 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
  return r;
}

std::size_t Tensor::cols() const {
  if (shape.empty()) return 1;
  return shape.back();
}

double Tensor::item() const {
  if (data.size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape));
  }
  return data[0];
}

MatrixMap Tensor::grad_mat() {
  if (grad.size() != data.size()) zero_grad();
  return MatrixMap(grad.data(), rows(), cols());
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  for (double v : grad) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor from_matrix(const RowMatrix& m) {
  Tensor t = Tensor::matrix(static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols()));
  t.mat() = m;
  return t;
}

}  // namespace bapt
