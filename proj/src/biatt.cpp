#include "bapt/biatt.hpp"

#include "bapt/optim.hpp"

#include <algorithm>
#include <cmath>

namespace bapt {

BiattParameters BiattParameters::create(ParameterStore& store, ScorerKind kind, const ModelDims& d, Rng& rng) {
  BiattParameters p;
  p.kind = kind;
  p.dims = d;
  p.embedding = EmbeddingTable::create(store, "embedding", d.vocab_size, d.embed, rng);
  p.object_projection =
      LinearLayer::create(store, "object_projection", kObjectFeatureDim, d.object_embed, true, Activation::none, rng);
  p.lang_lstm = BiLstm::create(store, "lang_lstm", d.embed, d.hidden, rng);
  p.obj_lstm = BiLstm::create(store, "obj_lstm", d.object_embed, d.hidden, rng);
  if (kind == ScorerKind::bienc) {
    p.encoder_similarity = BilinearForm::create(store, "bienc_similarity", d.states(), d.states(), rng);
    return p;
  }
  p.word_to_object = BilinearForm::create(store, "attention.word_to_object", d.states(), d.states(), rng);
  p.object_to_word = BilinearForm::create(store, "attention.object_to_word", d.states(), d.states(), rng);
  p.fuse_words = LinearLayer::create(store, "fuse_words", 4 * d.states(), d.joint, false, Activation::none, rng);
  p.fuse_objects = LinearLayer::create(store, "fuse_objects", 4 * d.states(), d.joint, false, Activation::none, rng);
  p.post_words = BiLstm::create(store, "post_words", d.joint, d.hidden, rng);
  p.post_objects = BiLstm::create(store, "post_objects", d.joint, d.hidden, rng);
  p.score_hidden = LinearLayer::create(store, "score_hidden", 2 * d.states(), d.mlp, true, Activation::tanh, rng);
  p.score_out = LinearLayer::create(store, "score_out", d.mlp, 1, false, Activation::none, rng);
  return p;
}

StatementEncoding encode_statement(const BiattParameters& p, ForwardContext& ctx, std::span<const std::size_t> ids,
                                   const Mask& mask) {
  if (!mask.empty() && mask.size() != ids.size()) throw DimensionError("statement mask length differs from ids");
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (mask.empty() || mask[i]) kept.push_back(ids[i]);
  }
  if (kept.empty()) throw std::invalid_argument("encode_statement: empty statement");
  Var words = p.embedding.lookup(ctx.tape, kept);
  auto run = p.lang_lstm.run(ctx.tape, words, ctx.dropout, ctx.training, ctx.rng);
  std::array<Var, 2> ends{run.last_fwd, run.last_bwd};
  return {run.outputs, concat_cols(ends)};
}

Var project_objects(const BiattParameters& p, ForwardContext& ctx, const std::vector<ObjectFeature>& objects) {
  if (objects.empty()) throw std::invalid_argument("project_objects: no objects");
  Tensor raw = Tensor::matrix(objects.size(), kObjectFeatureDim);
  for (std::size_t k = 0; k < objects.size(); ++k) {
    std::copy(objects[k].begin(), objects[k].end(), raw.data.begin() + static_cast<std::ptrdiff_t>(k * kObjectFeatureDim));
  }
  return p.object_projection.forward(ctx.tape, ctx.tape.constant(std::move(raw)));
}

ObjectEncoding encode_object_embeddings(const BiattParameters& p, ForwardContext& ctx, Var embeddings) {
  ObjectEncoding enc;
  enc.count = embeddings.rows();
  enc.embeddings = embeddings;
  auto run = p.obj_lstm.run(ctx.tape, embeddings, ctx.dropout, ctx.training, ctx.rng);
  enc.states = run.outputs;
  std::array<Var, 2> ends{run.last_fwd, run.last_bwd};
  enc.summary = concat_cols(ends);
  return enc;
}

ObjectEncoding encode_objects(const BiattParameters& p, ForwardContext& ctx, const std::vector<ObjectFeature>& objects,
                              std::span<const std::size_t> order) {
  if (objects.empty()) return {};
  Var e = project_objects(p, ctx, objects);
  if (!order.empty()) {
    if (order.size() != objects.size()) throw std::invalid_argument("object order length differs from object count");
    e = gather_rows(e, order);
  }
  return encode_object_embeddings(p, ctx, e);
}

Fusion biatt_fuse(const BiattParameters& p, ForwardContext& ctx, Var words, Var objects) {
  if (words.rows() == 0 || objects.rows() == 0) throw std::invalid_argument("biatt_fuse: empty sequence");
  const Mask object_mask(objects.rows(), true);
  const Mask word_mask(words.rows(), true);
  auto w2o = bilinear_attention(ctx.tape, p.word_to_object, words, objects, object_mask);
  auto o2w = bilinear_attention(ctx.tape, p.object_to_word, objects, words, word_mask);
  return {fuse_joint(ctx.tape, p.fuse_words, words, w2o.context),
          fuse_joint(ctx.tape, p.fuse_objects, objects, o2w.context), w2o.weights, o2w.weights};
}

Pooled pool_representations(const BiattParameters& p, ForwardContext& ctx, Var words, std::optional<Var> objects) {
  auto w = p.post_words.run(ctx.tape, words, ctx.dropout, ctx.training, ctx.rng);
  Pooled out;
  out.words = masked_max_rows(w.outputs, Mask(w.outputs.rows(), true));
  if (objects && objects->rows() > 0) {
    auto o = p.post_objects.run(ctx.tape, *objects, ctx.dropout, ctx.training, ctx.rng);
    out.objects = masked_max_rows(o.outputs, Mask(o.outputs.rows(), true));
  } else {
    out.objects = ctx.tape.constant(Tensor::matrix(1, p.post_objects.out_dim()));
  }
  return out;
}

Var sub_image_score(const BiattParameters& p, ForwardContext& ctx, Var pooled_words, Var pooled_objects) {
  std::array<Var, 2> both{pooled_words, pooled_objects};
  Var x = dropout(concat_cols(both), ctx.dropout, ctx.training, ctx.rng);
  return p.score_out.forward(ctx.tape, p.score_hidden.forward(ctx.tape, x));
}

Var bienc_score(const BiattParameters& p, ForwardContext& ctx, const StatementEncoding& statement,
                const ObjectEncoding& objects) {
  if (objects.count == 0) return ctx.tape.constant(Tensor::scalar(0.0));
  return p.encoder_similarity.logits(ctx.tape, statement.summary, objects.summary);
}

Var score_sub_image(const BiattParameters& p, ForwardContext& ctx, const StatementEncoding& statement,
                    const ObjectEncoding& objects, SubImageDecision* decision) {
  if (p.kind == ScorerKind::bienc) {
    Var s = bienc_score(p, ctx, statement, objects);
    if (decision) decision->score = s.item();
    return s;
  }
  Pooled pooled;
  if (objects.count > 0) {
    Fusion f = biatt_fuse(p, ctx, statement.states, objects.states);
    pooled = pool_representations(p, ctx, f.words, f.objects);
    if (decision) {
      decision->alpha = f.alpha.value();
      decision->beta = f.beta.value();
    }
  } else {
    Var no_context = ctx.tape.constant(Tensor::matrix(statement.states.rows(), statement.states.cols()));
    pooled = pool_representations(p, ctx, fuse_joint(ctx.tape, p.fuse_words, statement.states, no_context), std::nullopt);
  }
  Var s = sub_image_score(p, ctx, pooled.words, pooled.objects);
  if (decision) decision->score = s.item();
  return s;
}

Var pool_scores(std::span<const Var> scores, PoolingMode mode) {
  Var stacked = concat_rows(scores);
  Var pooled = mode == PoolingMode::max ? masked_max_rows(stacked, Mask(stacked.rows(), true)) : mean_rows(stacked);
  return sigmoid(pooled);
}

ExampleForward predict_with_encoding(const BiattParameters& p, ForwardContext& ctx,
                                     const StatementEncoding& statement,
                                     const std::array<std::optional<Var>, kSubImages>& embeddings,
                                     const ObjectOrders& orders, PoolingMode pooling) {
  ExampleForward out;
  for (std::size_t j = 0; j < kSubImages; ++j) {
    ObjectEncoding objects;
    if (embeddings[j]) {
      Var e = *embeddings[j];
      if (!orders[j].empty()) {
        if (orders[j].size() != e.rows()) throw std::invalid_argument("object order length differs from object count");
        e = gather_rows(e, orders[j]);
      }
      objects = encode_object_embeddings(p, ctx, e);
    }
    out.scores[j] = score_sub_image(p, ctx, statement, objects, &out.output.sub_images[j]);
  }
  out.probability = pool_scores(out.scores, pooling);
  out.output.probability = out.probability.item();
  std::size_t best = 0;
  for (std::size_t j = 1; j < kSubImages; ++j) {
    if (out.output.sub_images[j].score > out.output.sub_images[best].score) best = j;
  }
  out.output.chosen = best;
  return out;
}

ExampleForward predict_example(const BiattParameters& p, ForwardContext& ctx, const EncodedExample& example,
                               const ObjectOrders& orders, PoolingMode pooling) {
  StatementEncoding statement = encode_statement(p, ctx, example.token_ids);
  std::array<std::optional<Var>, kSubImages> embeddings;
  for (std::size_t j = 0; j < kSubImages; ++j) {
    if (!example.sub_images[j].empty()) embeddings[j] = project_objects(p, ctx, example.sub_images[j]);
  }
  return predict_with_encoding(p, ctx, statement, embeddings, orders, pooling);
}

double comprehension_loss(double probability, int label) {
  const double pc = std::clamp(probability, 1e-12, 1.0 - 1e-12);
  const double y = label;
  return -y * std::log(pc) - (1.0 - y) * std::log(1.0 - pc);
}

}  // namespace bapt
