#pragma once

#include "bapt/data.hpp"
#include "bapt/nn.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace bapt {

enum class PoolingMode { max, mean };

/// Which sub-image scorer the comprehension parameters implement.
enum class ScorerKind { biatt, bienc };

struct ModelDims {
  std::size_t vocab_size = 2;
  std::size_t embed = 128;
  std::size_t hidden = 256;        // per LSTM direction
  std::size_t object_embed = 64;
  std::size_t joint = 512;         // fused word/object representation
  std::size_t mlp = 512;           // first score layer

  std::size_t states() const { return 2 * hidden; }
};

/// Trainable weights of the comprehension model. Layers used only by the
/// other scorer kind are left unregistered.
struct BiattParameters {
  ScorerKind kind = ScorerKind::biatt;
  ModelDims dims;
  EmbeddingTable embedding;
  LinearLayer object_projection;  // 9 -> object_embed, shared with the pointer network
  BiLstm lang_lstm;
  BiLstm obj_lstm;
  // BiATT only.
  BilinearForm word_to_object;  // B1
  BilinearForm object_to_word;  // B2
  LinearLayer fuse_words;       // W_LANG, no bias
  LinearLayer fuse_objects;     // W_OBJ, no bias
  BiLstm post_words;
  BiLstm post_objects;
  LinearLayer score_hidden;  // W1, b1, tanh
  LinearLayer score_out;     // W2, no bias
  // BiENC only.
  BilinearForm encoder_similarity;

  static BiattParameters create(ParameterStore& store, ScorerKind kind, const ModelDims& dims, Rng& rng);
};

struct StatementEncoding {
  Var states;   // T x 2H, one row per unmasked token
  Var summary;  // 1 x 2H: [forward final ; backward final]
};

/// Embeds the unmasked tokens and runs the LANG-LSTM. `mask` may be empty
/// (all tokens kept). Throws std::invalid_argument if no token survives.
StatementEncoding encode_statement(const BiattParameters& p, ForwardContext& ctx, std::span<const std::size_t> ids,
                                   const Mask& mask = {});

/// Shared FC projection of raw object features (N x 9 -> N x object_embed).
/// Requires N >= 1.
Var project_objects(const BiattParameters& p, ForwardContext& ctx, const std::vector<ObjectFeature>& objects);

struct ObjectEncoding {
  std::size_t count = 0;  // zero means an empty sub-image; the Vars are unset
  Var embeddings;         // N x object_embed, in the encoded order
  Var states;             // N x 2H
  Var summary;            // 1 x 2H
};

/// Projects and reads the objects in `order` (identity when empty).
ObjectEncoding encode_objects(const BiattParameters& p, ForwardContext& ctx, const std::vector<ObjectFeature>& objects,
                              std::span<const std::size_t> order = {});
/// Same, starting from already projected embeddings (rows in the desired order).
ObjectEncoding encode_object_embeddings(const BiattParameters& p, ForwardContext& ctx, Var embeddings);

struct Fusion {
  Var words;    // T x joint
  Var objects;  // N x joint
  Var alpha;    // T x N, word -> object attention
  Var beta;     // N x T, object -> word attention
};

Fusion biatt_fuse(const BiattParameters& p, ForwardContext& ctx, Var words, Var objects);

struct Pooled {
  Var words;    // 1 x 2H
  Var objects;  // 1 x 2H (zeros when there are no objects)
};

/// Post-fusion BiLSTMs followed by element-wise max over steps.
/// `objects` may be unset for an empty sub-image.
Pooled pool_representations(const BiattParameters& p, ForwardContext& ctx, Var words, std::optional<Var> objects);

/// W2 tanh(W1 [h; g] + b1), with dropout on [h; g] when training.
Var sub_image_score(const BiattParameters& p, ForwardContext& ctx, Var pooled_words, Var pooled_objects);

/// (last LANG state)^T B (last OBJ state); 0 for an empty sub-image.
Var bienc_score(const BiattParameters& p, ForwardContext& ctx, const StatementEncoding& statement,
                const ObjectEncoding& objects);

struct SubImageDecision {
  double score = 0.0;
  Tensor alpha;  // T x N (empty for BiENC or N = 0)
  Tensor beta;   // N x T
};

struct ModelOutput {
  double probability = 0.5;
  std::array<SubImageDecision, kSubImages> sub_images;
  std::size_t chosen = 0;  // argmax score, lowest index on ties
};

struct ExampleForward {
  Var probability;
  std::array<Var, kSubImages> scores;
  ModelOutput output;
};

using ObjectOrders = std::array<std::vector<std::size_t>, kSubImages>;

/// Scores one sub-image given the shared statement encoding.
Var score_sub_image(const BiattParameters& p, ForwardContext& ctx, const StatementEncoding& statement,
                    const ObjectEncoding& objects, SubImageDecision* decision = nullptr);

/// Combines three sub-image scores into P = sigmoid(pool(scores)).
Var pool_scores(std::span<const Var> scores, PoolingMode mode);

/// Full comprehension forward. Empty orders mean dataset order.
ExampleForward predict_example(const BiattParameters& p, ForwardContext& ctx, const EncodedExample& example,
                               const ObjectOrders& orders, PoolingMode pooling);
/// Variant reusing an existing statement encoding and object embeddings
/// (row k of embeddings[j] is object k of sub-image j in dataset order).
ExampleForward predict_with_encoding(const BiattParameters& p, ForwardContext& ctx,
                                     const StatementEncoding& statement,
                                     const std::array<std::optional<Var>, kSubImages>& embeddings,
                                     const ObjectOrders& orders, PoolingMode pooling);

/// -y log P - (1-y) log(1-P), P clamped to [1e-12, 1 - 1e-12].
double comprehension_loss(double probability, int label);

}  // namespace bapt
