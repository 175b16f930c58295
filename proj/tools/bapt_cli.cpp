// Command-line driver: build-vocab, train, eval, predict, dump-orders.
//
// Exit codes: 0 success, 1 usage, 2 I/O or input data, 3 numeric failure,
// 4 incompatible or corrupt checkpoint.

#include "bapt/data.hpp"
#include "bapt/model.hpp"
#include "bapt/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace bapt;
using nlohmann::json;

constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitCheckpoint = 4;

struct IoFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<RawExample> read_corpus(const std::string& path, bool allow_empty = false) {
  if (path.empty()) throw IoFailure("no data path given");
  std::vector<RawExample> raw;
  try {
    raw = load_corpus(path);
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoFailure(e.what());
  }
  if (raw.empty() && !allow_empty) throw IoFailure("'" + path + "' contains no examples");
  return raw;
}

std::vector<EncodedExample> encode_all(const std::vector<RawExample>& raw, const Vocabulary& vocab) {
  std::vector<EncodedExample> out;
  out.reserve(raw.size());
  for (const auto& r : raw) out.push_back(encode_example(r, vocab));
  return out;
}

Vocabulary vocab_from_corpus(const std::vector<RawExample>& raw) {
  std::vector<std::vector<std::string>> streams;
  for (const auto& r : raw) streams.push_back(tokenize(r.sentence));
  return Vocabulary::build(streams);
}

Checkpoint read_checkpoint(const std::string& path) {
  if (!std::filesystem::exists(path)) throw IoFailure("checkpoint '" + path + "' does not exist");
  return load_checkpoint(path);
}

struct Options {
  std::string train, dev, test, vocab, checkpoint, out, metrics;
  std::string model = "biatt-pointer";
  std::string pooling = "max";
  double lr = 1e-4;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 30;
  double clip_norm = 5.0;
  double dropout = 0.3;
  std::uint64_t seed = 1;
  bool no_pointer = false;
  bool randomize_encoder_order = false;
  ModelDims dims;
};

int cmd_build_vocab(const Options& o) {
  const auto raw = read_corpus(o.train, true);
  const Vocabulary vocab = vocab_from_corpus(raw);
  if (!o.vocab.empty()) {
    try {
      vocab.save(o.vocab);
    } catch (const std::exception& e) {
      throw IoFailure(e.what());
    }
  }
  std::cout << "vocab_size=" << vocab.size() << '\n';
  return 0;
}

int cmd_train(const Options& o) {
  TrainConfig cfg;
  cfg.lr = o.lr;
  cfg.dropout = o.dropout;
  cfg.clip_norm = o.clip_norm;
  cfg.batch_size = o.batch_size;
  cfg.max_epochs = o.max_epochs;
  cfg.seed = o.seed;
  cfg.model = parse_model_kind(o.model);
  cfg.pooling = parse_pooling(o.pooling);
  cfg.pointer_enabled = !o.no_pointer && cfg.model == ModelKind::biatt_pointer;
  cfg.encoder_order_randomized = o.randomize_encoder_order;
  cfg.train_path = o.train;
  cfg.dev_path = o.dev;
  cfg.vocab_path = o.vocab;
  cfg.checkpoint_path = o.checkpoint;
  cfg.metrics_path = o.metrics;
  if (cfg.metrics_path.empty()) {
    const auto dir = std::filesystem::path(o.checkpoint).parent_path();
    cfg.metrics_path = (dir / "metrics.jsonl").string();
  }
  cfg.validate();

  const auto train_raw = read_corpus(o.train);
  const auto dev_raw = read_corpus(o.dev);
  Vocabulary vocab;
  if (!o.vocab.empty() && std::filesystem::exists(o.vocab)) {
    try {
      vocab = Vocabulary::load(o.vocab);
    } catch (const std::exception& e) {
      throw IoFailure(e.what());
    }
  } else {
    vocab = vocab_from_corpus(train_raw);
    if (!o.vocab.empty()) vocab.save(o.vocab);
  }
  ModelDims dims = o.dims;
  dims.vocab_size = vocab.size();

  std::cerr << "training " << to_string(cfg.effective_model()) << " on " << train_raw.size() << " examples, vocab "
            << vocab.size() << '\n';
  auto report = run_training(cfg, dims, vocab, encode_all(train_raw, vocab), encode_all(dev_raw, vocab),
                             [](const std::string& line) { std::cout << line << '\n' << std::flush; });
  std::cerr << "best dev accuracy " << report.best_dev_accuracy << ", checkpoint " << cfg.checkpoint_path << '\n';
  return 0;
}

std::string data_path(const Options& o) {
  if (!o.test.empty()) return o.test;
  if (!o.dev.empty()) return o.dev;
  return o.train;
}

int cmd_eval(const Options& o) {
  const Checkpoint ckpt = read_checkpoint(o.checkpoint);
  const Model model = restore_model(ckpt);
  const auto examples = encode_all(read_corpus(data_path(o)), ckpt.vocab);
  const Metrics m = evaluate(model, examples, "eval");
  char line[64];
  std::snprintf(line, sizeof(line), "accuracy=%.4f n=%zu", m.accuracy, m.count);
  std::cout << line << '\n' << metrics_to_json(m) << '\n';
  return 0;
}

int cmd_predict(const Options& o, bool with_orders) {
  const Checkpoint ckpt = read_checkpoint(o.checkpoint);
  const Model model = restore_model(ckpt);
  const auto raw = read_corpus(data_path(o));
  std::ofstream file;
  if (!o.out.empty()) {
    file.open(o.out, std::ios::trunc);
    if (!file) throw IoFailure("cannot write '" + o.out + "'");
  }
  std::ostream& out = o.out.empty() ? std::cout : file;
  for (const auto& r : raw) {
    const auto pred = model.predict(encode_example(r, ckpt.vocab));
    json rec{{"identifier", r.identifier},
             {"probability", pred.output.probability},
             {"label", pred.output.probability >= 0.5},
             {"scores",
              {pred.output.sub_images[0].score, pred.output.sub_images[1].score, pred.output.sub_images[2].score}},
             {"chosen", pred.output.chosen}};
    if (with_orders) rec["orders"] = pred.orders;
    out << rec.dump() << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BiATT-Pointer visual reasoning over structured scenes"};
  app.require_subcommand(1, 1);
  Options o;

  auto* build = app.add_subcommand("build-vocab", "Build the vocabulary from a training corpus");
  build->add_option("--train", o.train, "Training JSONL")->required();
  build->add_option("--vocab,--out", o.vocab, "Output vocabulary file");

  auto* train = app.add_subcommand("train", "Train a model");
  train->add_option("--train", o.train, "Training JSONL")->required();
  train->add_option("--dev", o.dev, "Development JSONL")->required();
  train->add_option("--test", o.test, "Test JSONL (unused during training)");
  train->add_option("--vocab", o.vocab, "Vocabulary file (built from --train when missing)");
  train->add_option("--checkpoint", o.checkpoint, "Best-dev checkpoint path")->required();
  train->add_option("--metrics", o.metrics, "Metrics JSONL (default: metrics.jsonl next to the checkpoint)");
  train->add_option("--model", o.model, "biatt-pointer | biatt | bienc")
      ->check(CLI::IsMember({"biatt-pointer", "biatt", "bienc"}));
  train->add_option("--pooling", o.pooling, "max | mean")->check(CLI::IsMember({"max", "mean"}));
  train->add_option("--lr", o.lr);
  train->add_option("--batch-size", o.batch_size);
  train->add_option("--max-epochs", o.max_epochs);
  train->add_option("--clip-norm", o.clip_norm);
  train->add_option("--dropout", o.dropout);
  train->add_option("--seed", o.seed);
  train->add_flag("--no-pointer", o.no_pointer, "Train the BiATT ablation");
  train->add_flag("--randomize-encoder-order", o.randomize_encoder_order);
  train->add_option("--embed-dim", o.dims.embed);
  train->add_option("--hidden-dim", o.dims.hidden);
  train->add_option("--object-dim", o.dims.object_embed);
  train->add_option("--joint-dim", o.dims.joint);
  train->add_option("--mlp-dim", o.dims.mlp);

  auto add_eval_options = [&](CLI::App* cmd) {
    cmd->add_option("--checkpoint", o.checkpoint)->required();
    cmd->add_option("--test,--data", o.test, "JSONL to evaluate");
    cmd->add_option("--dev", o.dev);
    cmd->add_option("--seed", o.seed);
  };
  auto* eval = app.add_subcommand("eval", "Report accuracy of a checkpoint on a corpus");
  add_eval_options(eval);
  auto* predict = app.add_subcommand("predict", "Write one prediction record per example");
  add_eval_options(predict);
  predict->add_option("--out", o.out, "Output JSONL (default stdout)");
  auto* dump = app.add_subcommand("dump-orders", "Predictions plus greedy pointer orders");
  add_eval_options(dump);
  dump->add_option("--out", o.out, "Output JSONL (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*build) return cmd_build_vocab(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*predict) return cmd_predict(o, false);
    if (*dump) return cmd_predict(o, true);
  } catch (const IoFailure& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.kind == CheckpointError::Kind::io ? kExitIo : kExitCheckpoint;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
