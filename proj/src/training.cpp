#include "bapt/training.hpp"

#include <json.hpp>
#include <zlib.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace bapt {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be a finite value >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip norm must be positive");
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
}

ModelKind TrainConfig::effective_model() const {
  if (model == ModelKind::biatt_pointer && !pointer_enabled) return ModelKind::biatt;
  return model;
}

namespace {

json config_json(const TrainConfig& c) {
  return json{{"lr", c.lr},
              {"dropout", c.dropout},
              {"clip_norm", c.clip_norm},
              {"batch_size", c.batch_size},
              {"max_epochs", c.max_epochs},
              {"seed", c.seed},
              {"model", to_string(c.model)},
              {"pooling", to_string(c.pooling)},
              {"pointer_enabled", c.pointer_enabled},
              {"encoder_order_randomized", c.encoder_order_randomized},
              {"shuffle", c.shuffle},
              {"train_path", c.train_path},
              {"dev_path", c.dev_path},
              {"vocab_path", c.vocab_path},
              {"checkpoint_path", c.checkpoint_path},
              {"metrics_path", c.metrics_path}};
}

TrainConfig config_of(const json& j) {
  TrainConfig c;
  c.lr = j.at("lr").get<double>();
  c.dropout = j.at("dropout").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_epochs = j.at("max_epochs").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.model = parse_model_kind(j.at("model").get<std::string>());
  c.pooling = parse_pooling(j.at("pooling").get<std::string>());
  c.pointer_enabled = j.at("pointer_enabled").get<bool>();
  c.encoder_order_randomized = j.at("encoder_order_randomized").get<bool>();
  c.shuffle = j.value("shuffle", true);
  c.train_path = j.value("train_path", "");
  c.dev_path = j.value("dev_path", "");
  c.vocab_path = j.value("vocab_path", "");
  c.checkpoint_path = j.value("checkpoint_path", "");
  c.metrics_path = j.value("metrics_path", "");
  return c;
}

json dims_json(const ModelDims& d) {
  return json{{"vocab_size", d.vocab_size}, {"embed", d.embed},   {"hidden", d.hidden},
              {"object_embed", d.object_embed}, {"joint", d.joint}, {"mlp", d.mlp}};
}

ModelDims dims_of(const json& j) {
  ModelDims d;
  d.vocab_size = j.at("vocab_size").get<std::size_t>();
  d.embed = j.at("embed").get<std::size_t>();
  d.hidden = j.at("hidden").get<std::size_t>();
  d.object_embed = j.at("object_embed").get<std::size_t>();
  d.joint = j.at("joint").get<std::size_t>();
  d.mlp = j.at("mlp").get<std::size_t>();
  return d;
}

}  // namespace

std::string config_to_json(const TrainConfig& config) { return config_json(config).dump(); }

TrainConfig config_from_json(const std::string& text) { return config_of(json::parse(text)); }

// ---------------------------------------------------------------------------
// Training objective

ExampleLoss example_loss(const Model& model, Tape& tape, Rng& rng, const EncodedExample& example,
                         const TrainConfig& config) {
  const BiattParameters& p = model.comprehension();
  ForwardContext ctx{tape, rng, true, config.dropout};
  ExampleLoss out;

  StatementEncoding statement = encode_statement(p, ctx, example.token_ids);
  std::array<std::optional<Var>, kSubImages> embeddings;
  for (std::size_t j = 0; j < kSubImages; ++j) {
    if (!example.sub_images[j].empty()) embeddings[j] = project_objects(p, ctx, example.sub_images[j]);
  }

  const bool pointer = model.uses_pointer() && config.pointer_enabled;
  if (!pointer) {
    out.forward = predict_with_encoding(p, ctx, statement, embeddings, {}, model.config().pooling);
    out.total = binary_cross_entropy(out.forward.probability, example.label);
    out.comprehension = out.total.item();
    out.reward = out.baseline = -out.comprehension;
    return out;
  }

  // Encoder input order per sub-image (indices into dataset order).
  std::array<std::vector<std::size_t>, kSubImages> encoder_order;
  for (std::size_t j = 0; j < kSubImages; ++j) {
    encoder_order[j].resize(example.sub_images[j].size());
    std::iota(encoder_order[j].begin(), encoder_order[j].end(), 0);
    if (config.encoder_order_randomized) std::shuffle(encoder_order[j].begin(), encoder_order[j].end(), rng);
  }
  auto to_dataset = [&](std::size_t j, const std::vector<std::size_t>& order) {
    std::vector<std::size_t> mapped;
    for (auto k : order) mapped.push_back(encoder_order[j][k]);
    return mapped;
  };

  std::vector<Var> log_probs;
  for (std::size_t j = 0; j < kSubImages; ++j) {
    if (!embeddings[j]) continue;
    Var input = gather_rows(*embeddings[j], encoder_order[j]);
    Permutation perm = sample_permutation(model.pointer(), tape, input, statement.states, rng);
    out.sampled[j] = to_dataset(j, perm.order);
    log_probs.push_back(perm.log_prob_var);
  }

  {
    // Self-critical baseline: greedy decode in inference mode, no gradients.
    Tape scratch;
    ForwardContext infer{scratch, rng, false, 0.0};
    StatementEncoding s = encode_statement(p, infer, example.token_ids);
    std::array<std::optional<Var>, kSubImages> e;
    for (std::size_t j = 0; j < kSubImages; ++j) {
      if (example.sub_images[j].empty()) continue;
      e[j] = project_objects(p, infer, example.sub_images[j]);
      Var input = gather_rows(*e[j], encoder_order[j]);
      out.greedy[j] = to_dataset(j, greedy_permutation(model.pointer(), scratch, input, s.states).order);
    }
    auto greedy = predict_with_encoding(p, infer, s, e, out.greedy, model.config().pooling);
    out.baseline = -comprehension_loss(greedy.output.probability, example.label);
  }

  out.forward = predict_with_encoding(p, ctx, statement, embeddings, out.sampled, model.config().pooling);
  Var comprehension = binary_cross_entropy(out.forward.probability, example.label);
  out.comprehension = comprehension.item();
  out.reward = -out.comprehension;
  out.total = comprehension;
  if (!log_probs.empty()) {
    Var joint_log_prob = sum(concat_cols(log_probs));
    out.total = add(comprehension, rl_surrogate_loss(joint_log_prob, out.reward, out.baseline));
  }
  return out;
}

StepMetrics train_step(Model& model, const Batch& batch, const TrainConfig& config, Rng& rng, AdamState& adam) {
  if (batch.size == 0) throw std::invalid_argument("train_step: empty batch");
  model.params().zero_grad();
  StepMetrics m;
  m.examples = batch.size;
  const double weight = 1.0 / static_cast<double>(batch.size);
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < batch.size; ++i) {
    const EncodedExample ex = batch.example(i);
    Tape tape;
    ExampleLoss loss = example_loss(model, tape, rng, ex, config);
    const double total = loss.total.item();
    if (!std::isfinite(total)) {
      bad.push_back(ex.identifier);
      continue;
    }
    m.mean_loss += weight * total;
    m.mean_comprehension += weight * loss.comprehension;
    tape.backward(scale(loss.total, weight));
  }
  if (!bad.empty()) {
    std::string ids;
    for (const auto& id : bad) ids += (ids.empty() ? "" : ", ") + id;
    throw NonFiniteLoss(bad, "non-finite loss for example(s): " + ids);
  }
  m.grad_norm = clip_by_global_norm(model.params(), config.clip_norm);
  adam_step(model.params(), adam, config.lr);
  return m;
}

Metrics evaluate(const Model& model, const std::vector<EncodedExample>& examples, const std::string& split) {
  if (examples.empty()) throw std::invalid_argument("evaluate: empty dataset");
  Metrics m;
  m.split = split;
  m.count = examples.size();
  double loss = 0.0;
  for (const auto& ex : examples) {
    const auto pred = model.predict(ex);
    const int label = pred.output.probability >= 0.5 ? 1 : 0;
    if (label == ex.label) ++m.correct;
    loss += comprehension_loss(pred.output.probability, ex.label);
  }
  m.accuracy = static_cast<double>(m.correct) / static_cast<double>(m.count);
  m.mean_loss = loss / static_cast<double>(m.count);
  return m;
}

std::string metrics_to_json(const Metrics& m, std::optional<std::size_t> epoch) {
  json j{{"split", m.split}, {"accuracy", m.accuracy}, {"mean_loss", m.mean_loss}, {"count", m.count},
         {"correct", m.correct}};
  if (epoch) j["epoch"] = *epoch;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Checkpoints

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'B', 'A', 'P', 'T'};

template <typename T>
void put(std::vector<char>& out, T v) {
  const char* p = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T take(const std::vector<char>& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw CheckpointError(CheckpointError::Kind::truncated, "checkpoint is truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::uint32_t crc32_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

Checkpoint capture_checkpoint(const Model& model, const TrainConfig& config, const Vocabulary& vocab,
                              const AdamState& adam, std::uint64_t epoch, std::uint64_t step, const Rng& rng) {
  Checkpoint c;
  c.config = config;
  c.dims = model.config().dims;
  c.vocab = vocab;
  const auto& store = model.params();
  for (std::size_t i = 0; i < store.size(); ++i) {
    Tensor t(store.at(i).shape, store.at(i).data);
    c.tensors.emplace_back(store.name(i), std::move(t));
  }
  c.adam = adam;
  c.epoch = epoch;
  c.step = step;
  c.rng_state = serialize_rng(rng);
  return c;
}

Model restore_model(const Checkpoint& ckpt) {
  Rng rng(ckpt.config.seed);
  ModelConfig mc{ckpt.config.effective_model(), ckpt.dims, ckpt.config.pooling};
  Model model(mc, rng);
  auto& store = model.params();
  if (store.size() != ckpt.tensors.size()) {
    throw CheckpointError(CheckpointError::Kind::schema, "checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                                                             " tensors, model expects " + std::to_string(store.size()));
  }
  for (const auto& [name, tensor] : ckpt.tensors) {
    if (!store.contains(name)) throw CheckpointError(CheckpointError::Kind::schema, "unexpected tensor '" + name + "'");
    Tensor& dst = store.get(name);
    if (dst.shape != tensor.shape) {
      throw CheckpointError(CheckpointError::Kind::schema, "tensor '" + name + "' has shape " +
                                                               shape_string(tensor.shape) + ", model expects " +
                                                               shape_string(dst.shape));
    }
    dst.data = tensor.data;
  }
  return model;
}

std::vector<char> serialize_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::pair<std::string, const std::vector<double>*>> payload;
  json manifest = json::array();
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const Shape& shape, const std::vector<double>& values) {
    manifest.push_back({{"name", name}, {"shape", shape}, {"offset", offset}});
    payload.emplace_back(name, &values);
    offset += values.size() * sizeof(double);
  };
  for (const auto& [name, t] : ckpt.tensors) add(name, t.shape, t.data);
  for (const auto& [name, t] : ckpt.tensors) {
    if (auto it = ckpt.adam.m.find(name); it != ckpt.adam.m.end()) add("adam.m/" + name, t.shape, it->second);
    if (auto it = ckpt.adam.v.find(name); it != ckpt.adam.v.end()) add("adam.v/" + name, t.shape, it->second);
  }

  json header{{"config", config_json(ckpt.config)},
              {"dims", dims_json(ckpt.dims)},
              {"vocab", ckpt.vocab.tokens()},
              {"tensors", manifest},
              {"adam",
               {{"step", ckpt.adam.step},
                {"beta1", ckpt.adam.beta1},
                {"beta2", ckpt.adam.beta2},
                {"epsilon", ckpt.adam.epsilon}}},
              {"epoch", ckpt.epoch},
              {"step", ckpt.step},
              {"rng", ckpt.rng_state},
              {"best_dev_accuracy", ckpt.best_dev_accuracy},
              {"feature_layout",
               {{"shape_one_hot", {"square", "triangle", "circle"}}, {"color_one_hot", {"black", "yellow", "blue"}}}}};
  const std::string text = header.dump();

  std::vector<char> out;
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put<std::uint32_t>(out, ckpt.version);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, values] : payload) {
    const char* p = reinterpret_cast<const char*>(values->data());
    out.insert(out.end(), p, p + values->size() * sizeof(double));
  }
  put<std::uint32_t>(out, crc32_of(out.data(), out.size()));
  return out;
}

Checkpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  using Kind = CheckpointError::Kind;
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, "not a checkpoint file (bad magic)");
  }
  std::size_t pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version, "checkpoint version " + std::to_string(version) + " is not supported (expected " +
                                             std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < pos + 8 + 4) throw CheckpointError(Kind::truncated, "checkpoint is truncated");
  const auto json_len = take<std::uint64_t>(bytes, pos);
  if (json_len > bytes.size() - 4 - pos) throw CheckpointError(Kind::truncated, "checkpoint header is truncated");
  json header;
  std::string header_error;
  try {
    header = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + json_len));
  } catch (const json::exception& e) {
    header_error = e.what();
  }
  // Size check before the checksum so a short file reads as truncated.
  if (header_error.empty()) {
    std::uint64_t payload = 0;
    try {
      for (const json& entry : header.at("tensors")) {
        payload = std::max<std::uint64_t>(
            payload, entry.at("offset").get<std::uint64_t>() + shape_numel(entry.at("shape").get<Shape>()) * sizeof(double));
      }
    } catch (const json::exception&) {
    }
    if (bytes.size() < pos + json_len + payload + 4) throw CheckpointError(Kind::truncated, "checkpoint is truncated");
  }
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored_crc) {
    throw CheckpointError(Kind::checksum, "checkpoint checksum mismatch");
  }
  if (!header_error.empty()) throw CheckpointError(Kind::schema, "checkpoint header: " + header_error);
  pos += json_len;
  const std::size_t payload_begin = pos;
  const std::size_t payload_end = bytes.size() - 4;

  Checkpoint c;
  c.version = version;
  try {
    c.config = config_of(header.at("config"));
    c.dims = dims_of(header.at("dims"));
    std::string vocab_text;
    const auto tokens = header.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 0; i < tokens.size(); ++i) vocab_text += tokens[i] + '\t' + std::to_string(i) + '\n';
    c.vocab = Vocabulary::deserialize(vocab_text);
    const json& adam = header.at("adam");
    c.adam.step = adam.at("step").get<std::int64_t>();
    c.adam.beta1 = adam.at("beta1").get<double>();
    c.adam.beta2 = adam.at("beta2").get<double>();
    c.adam.epsilon = adam.at("epsilon").get<double>();
    c.epoch = header.at("epoch").get<std::uint64_t>();
    c.step = header.at("step").get<std::uint64_t>();
    c.rng_state = header.at("rng").get<std::string>();
    c.best_dev_accuracy = header.at("best_dev_accuracy").get<double>();
    for (const json& entry : header.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::size_t n = shape_numel(shape);
      if (payload_begin + offset + n * sizeof(double) > payload_end) {
        throw CheckpointError(Kind::truncated, "tensor '" + name + "' extends past the payload");
      }
      std::vector<double> values(n);
      std::memcpy(values.data(), bytes.data() + payload_begin + offset, n * sizeof(double));
      if (name.rfind("adam.m/", 0) == 0) {
        c.adam.m[name.substr(7)] = std::move(values);
      } else if (name.rfind("adam.v/", 0) == 0) {
        c.adam.v[name.substr(7)] = std::move(values);
      } else {
        c.tensors.emplace_back(name, Tensor(shape, std::move(values)));
      }
    }
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::schema, std::string("checkpoint header: ") + e.what());
  }
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write '" + tmp + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "write to '" + tmp + "' failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw CheckpointError(CheckpointError::Kind::io, "cannot move checkpoint into '" + path + "'");
  }
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open '" + path + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

// ---------------------------------------------------------------------------

TrainingReport run_training(const TrainConfig& config, const ModelDims& dims, const Vocabulary& vocab,
                            const std::vector<EncodedExample>& train, const std::vector<EncodedExample>& dev,
                            const std::function<void(const std::string&)>& on_epoch) {
  config.validate();
  Rng rng(config.seed);
  Model model(ModelConfig{config.effective_model(), dims, config.pooling}, rng);
  AdamState adam;
  TrainingReport report;

  std::ofstream metrics_file;
  if (!config.metrics_path.empty()) {
    metrics_file.open(config.metrics_path, std::ios::app);
    if (!metrics_file) throw std::runtime_error("cannot open metrics file '" + config.metrics_path + "'");
  }

  auto finish_epoch = [&](std::size_t epoch, std::optional<double> train_loss) {
    Metrics m = evaluate(model, dev, "dev");
    json line = json::parse(metrics_to_json(m, epoch));
    if (train_loss) line["train_loss"] = *train_loss;
    line["step"] = report.steps;
    const std::string text = line.dump();
    if (metrics_file) metrics_file << text << '\n' << std::flush;
    if (on_epoch) on_epoch(text);
    report.dev_history.push_back(m);
    if (m.accuracy > report.best_dev_accuracy) {
      report.best_dev_accuracy = m.accuracy;
      if (!config.checkpoint_path.empty()) {
        Checkpoint ckpt = capture_checkpoint(model, config, vocab, adam, epoch, report.steps, rng);
        ckpt.best_dev_accuracy = m.accuracy;
        save_checkpoint(config.checkpoint_path, ckpt);
      }
    }
  };

  if (config.max_epochs == 0) {
    finish_epoch(0, std::nullopt);
    return report;
  }
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    auto batches = make_batches(train, config.batch_size, config.shuffle, rng);
    double total = 0.0;
    std::size_t seen = 0;
    for (const auto& batch : batches) {
      StepMetrics sm;
      try {
        sm = train_step(model, batch, config, rng, adam);
      } catch (const NonFiniteLoss& e) {
        throw NonFiniteLoss(e.identifiers, std::string(e.what()) + " at step " + std::to_string(report.steps + 1));
      }
      ++report.steps;
      total += sm.mean_loss * static_cast<double>(sm.examples);
      seen += sm.examples;
    }
    const double epoch_loss = seen ? total / static_cast<double>(seen) : 0.0;
    report.epoch_losses.push_back(epoch_loss);
    finish_epoch(epoch, epoch_loss);
  }
  return report;
}

}  // namespace bapt
