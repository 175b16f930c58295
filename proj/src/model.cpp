#include "bapt/model.hpp"

#include <numeric>
#include <stdexcept>

namespace bapt {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::biatt_pointer: return "biatt-pointer";
    case ModelKind::biatt: return "biatt";
    case ModelKind::bienc: return "bienc";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "biatt-pointer") return ModelKind::biatt_pointer;
  if (name == "biatt") return ModelKind::biatt;
  if (name == "bienc") return ModelKind::bienc;
  throw std::invalid_argument("unknown model kind '" + name + "'");
}

std::string to_string(PoolingMode mode) { return mode == PoolingMode::max ? "max" : "mean"; }

PoolingMode parse_pooling(const std::string& name) {
  if (name == "max") return PoolingMode::max;
  if (name == "mean") return PoolingMode::mean;
  throw std::invalid_argument("unknown pooling mode '" + name + "'");
}

Model::Model(const ModelConfig& config, Rng& rng) : config_(config) {
  const ScorerKind scorer = config.kind == ModelKind::bienc ? ScorerKind::bienc : ScorerKind::biatt;
  biatt_ = BiattParameters::create(store_, scorer, config.dims, rng);
  if (config.kind == ModelKind::biatt_pointer) pointer_ = PointerParameters::create(store_, biatt_, rng);
}

Model::Prediction Model::predict(const EncodedExample& example) const {
  Tape tape;
  Rng unused;
  ForwardContext ctx{tape, unused, false, 0.0};
  StatementEncoding statement = encode_statement(biatt_, ctx, example.token_ids);
  std::array<std::optional<Var>, kSubImages> embeddings;
  Prediction pred;
  for (std::size_t j = 0; j < kSubImages; ++j) {
    const auto& objs = example.sub_images[j];
    if (objs.empty()) continue;
    embeddings[j] = project_objects(biatt_, ctx, objs);
    if (pointer_) {
      pred.orders[j] = greedy_permutation(*pointer_, tape, *embeddings[j], statement.states).order;
    } else {
      pred.orders[j].resize(objs.size());
      std::iota(pred.orders[j].begin(), pred.orders[j].end(), 0);
    }
  }
  pred.output = predict_with_encoding(biatt_, ctx, statement, embeddings, pred.orders, config_.pooling).output;
  return pred;
}

}  // namespace bapt
