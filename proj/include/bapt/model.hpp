#pragma once

#include "bapt/biatt.hpp"
#include "bapt/parameters.hpp"
#include "bapt/pointer.hpp"

#include <optional>
#include <string>

namespace bapt {

enum class ModelKind { biatt_pointer, biatt, bienc };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
std::string to_string(PoolingMode mode);
PoolingMode parse_pooling(const std::string& name);

struct ModelConfig {
  ModelKind kind = ModelKind::biatt_pointer;
  ModelDims dims;
  PoolingMode pooling = PoolingMode::max;
};

/// Owns every trainable tensor: the comprehension parameters and, for
/// biatt_pointer, the pointer network.
class Model {
 public:
  Model(const ModelConfig& config, Rng& rng);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  const ModelConfig& config() const { return config_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  bool uses_pointer() const { return pointer_.has_value(); }

  const BiattParameters& comprehension() const { return biatt_; }
  const PointerParameters& pointer() const { return *pointer_; }

  struct Prediction {
    ModelOutput output;
    ObjectOrders orders;  // greedy pointer orders; dataset order without a pointer
  };
  /// Inference: no dropout, greedy pointer decoding. Deterministic.
  Prediction predict(const EncodedExample& example) const;

 private:
  ModelConfig config_;
  ParameterStore store_;
  BiattParameters biatt_;
  std::optional<PointerParameters> pointer_;
};

}  // namespace bapt
