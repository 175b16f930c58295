#pragma once

#include "bapt/data.hpp"
#include "bapt/model.hpp"
#include "bapt/optim.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bapt {

struct TrainConfig {
  double lr = 1e-4;
  double dropout = 0.3;
  double clip_norm = 5.0;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  std::uint64_t seed = 1;
  ModelKind model = ModelKind::biatt_pointer;
  PoolingMode pooling = PoolingMode::max;
  bool pointer_enabled = true;
  bool encoder_order_randomized = false;
  bool shuffle = true;
  std::string train_path;
  std::string dev_path;
  std::string vocab_path;
  std::string checkpoint_path;
  std::string metrics_path;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
  /// Effective model kind after applying pointer_enabled.
  ModelKind effective_model() const;
};

std::string config_to_json(const TrainConfig& config);
TrainConfig config_from_json(const std::string& text);

/// Loss recorded for one example of a training step.
struct ExampleLoss {
  Var total;                   // comprehension loss + policy surrogate
  double comprehension = 0.0;  // L(s, o[pi*], y)
  double reward = 0.0;         // -L(s, o[pi*], y)
  double baseline = 0.0;       // -L(s, o[pi_greedy], y), inference mode
  ObjectOrders sampled;
  ObjectOrders greedy;
  ExampleForward forward;
};

/// Records the training objective of one example onto `tape`.
/// With a pointer network: one permutation per non-empty sub-image is
/// sampled, the greedy decode (run on a scratch tape, no dropout) gives the
/// self-critical baseline, and the total adds -(R - b) * sum_j log p(pi_j).
ExampleLoss example_loss(const Model& model, Tape& tape, Rng& rng, const EncodedExample& example,
                         const TrainConfig& config);

struct StepMetrics {
  double mean_loss = 0.0;           // mean total objective
  double mean_comprehension = 0.0;  // mean L(s, o[pi*], y)
  double grad_norm = 0.0;           // before clipping
  std::size_t examples = 0;
};

/// Thrown when a loss is NaN or infinite; names the offending examples.
class NonFiniteLoss : public NumericError {
 public:
  NonFiniteLoss(std::vector<std::string> ids, const std::string& what)
      : NumericError(what), identifiers(std::move(ids)) {}
  std::vector<std::string> identifiers;
};

/// Mean loss over the batch, backward, global-norm clip, one Adam step.
StepMetrics train_step(Model& model, const Batch& batch, const TrainConfig& config, Rng& rng, AdamState& adam);

struct Metrics {
  std::string split;
  std::size_t count = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
  double mean_loss = 0.0;
};

/// Predicted label is 1 iff P >= 0.5. Throws std::invalid_argument on an
/// empty dataset.
Metrics evaluate(const Model& model, const std::vector<EncodedExample>& examples, const std::string& split = "dev");

std::string metrics_to_json(const Metrics& m, std::optional<std::size_t> epoch = std::nullopt);

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, version, truncated, checksum, schema };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
  Kind kind;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  TrainConfig config;
  ModelDims dims;
  Vocabulary vocab;
  std::vector<std::pair<std::string, Tensor>> tensors;  // parameter values, store order
  AdamState adam;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::string rng_state;
  double best_dev_accuracy = -1.0;
};

Checkpoint capture_checkpoint(const Model& model, const TrainConfig& config, const Vocabulary& vocab,
                              const AdamState& adam, std::uint64_t epoch, std::uint64_t step, const Rng& rng);
/// Rebuilds the model from the stored config and copies every tensor in.
Model restore_model(const Checkpoint& ckpt);

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<char>& bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// ---------------------------------------------------------------------------
// Full training run

struct TrainingReport {
  std::vector<Metrics> dev_history;
  std::vector<double> epoch_losses;
  double best_dev_accuracy = -1.0;
  std::uint64_t steps = 0;
};

/// Trains for config.max_epochs epochs (an epoch count of 0 only evaluates
/// the initialization), evaluates dev after each, writes the best-dev
/// checkpoint and appends one JSON line per epoch to config.metrics_path.
/// `on_epoch` receives each metrics line.
TrainingReport run_training(const TrainConfig& config, const ModelDims& dims, const Vocabulary& vocab,
                            const std::vector<EncodedExample>& train, const std::vector<EncodedExample>& dev,
                            const std::function<void(const std::string&)>& on_epoch = {});

}  // namespace bapt
