#include "bapt/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace bapt {

void adam_step(ParameterStore& params, AdamState& state, double lr) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params.at(i).grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + params.name(i) + "'");
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params.at(i);
    auto& m = state.m[params.name(i)];
    auto& v = state.v[params.name(i)];
    if (m.size() != p.numel()) m.assign(p.numel(), 0.0);
    if (v.size() != p.numel()) v.assign(p.numel(), 0.0);
    const bool has_grad = p.has_grad();
    for (std::size_t k = 0; k < p.numel(); ++k) {
      const double g = has_grad ? p.grad[k] : 0.0;
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g;
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g * g;
      const double m_hat = m[k] / bc1;
      const double v_hat = v[k] / bc2;
      p.data[k] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
    }
  }
}

double global_grad_norm(const ParameterStore& params) {
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (double g : params.at(i).grad) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_by_global_norm(std::vector<std::vector<double>*> grads, double max_norm) {
  if (!(max_norm > 0.0)) throw std::invalid_argument("clip_by_global_norm: max_norm must be positive");
  double sq = 0.0;
  for (const auto* g : grads) {
    for (double x : *g) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto* g : grads) {
      for (double& x : *g) x *= factor;
    }
  }
  return norm;
}

double clip_by_global_norm(ParameterStore& params, double max_norm) {
  std::vector<std::vector<double>*> grads;
  for (std::size_t i = 0; i < params.size(); ++i) grads.push_back(&params.at(i).grad);
  return clip_by_global_norm(std::move(grads), max_norm);
}

Tensor xavier_uniform_init(const Shape& shape, Rng& rng) {
  if (shape.empty()) throw DimensionError("xavier_uniform_init: shape needs at least one dimension");
  for (auto d : shape) {
    if (d == 0) throw DimensionError("xavier_uniform_init: zero extent in shape " + shape_string(shape));
  }
  Tensor t(shape);
  xavier_uniform_fill(t, rng);
  return t;
}

void xavier_uniform_fill(Tensor& t, Rng& rng) {
  const auto& shape = t.shape;
  if (shape.empty() || shape_numel(shape) == 0) {
    throw DimensionError("xavier_uniform_fill: empty shape " + shape_string(shape));
  }
  double fan_in = static_cast<double>(shape.back());
  double fan_out = shape.size() == 1 ? fan_in : static_cast<double>(shape_numel(shape)) / fan_in;
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.data) v = dist(rng);
}

}  // namespace bapt
