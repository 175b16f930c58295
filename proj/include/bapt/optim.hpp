#pragma once

#include "bapt/parameters.hpp"
#include "bapt/rng.hpp"
#include "bapt/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bapt {

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  /// First and second moments keyed by parameter name.
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;
};

/// One bias-corrected Adam update over every parameter in the store, using
/// each parameter's grad buffer (missing buffers count as zero).
/// Throws NumericError naming the first parameter with a non-finite gradient;
/// nothing is modified in that case.
void adam_step(ParameterStore& params, AdamState& state, double lr);

/// Global L2 norm over all grad buffers.
double global_grad_norm(const ParameterStore& params);

/// Rescales every gradient by max_norm / norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_by_global_norm(ParameterStore& params, double max_norm);

/// Same rule over a loose list of gradient buffers.
double clip_by_global_norm(std::vector<std::vector<double>*> grads, double max_norm);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)); fan_in is the last extent and
/// fan_out the product of the others (a rank-1 shape uses its extent for both).
Tensor xavier_uniform_init(const Shape& shape, Rng& rng);
void xavier_uniform_fill(Tensor& t, Rng& rng);

}  // namespace bapt
