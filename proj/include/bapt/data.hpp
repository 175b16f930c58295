#pragma once

#include "bapt/rng.hpp"

#include <array>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace bapt {

inline constexpr std::size_t kSubImages = 3;
inline constexpr std::size_t kObjectFeatureDim = 9;

/// Malformed corpus line. `identifier` is empty when it could not be read.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string identifier, const std::string& what)
      : std::runtime_error(identifier.empty() ? what : "[" + identifier + "] " + what),
        identifier_(std::move(identifier)) {}
  const std::string& identifier() const { return identifier_; }

 private:
  std::string identifier_;
};

// One-hot orders are part of the checkpoint format; do not reorder.
enum class ObjectShape { square = 0, triangle = 1, circle = 2 };
enum class ObjectColor { black = 0, yellow = 1, blue = 2 };

struct RawObject {
  double x = 0;
  double y = 0;
  int size = 10;
  ObjectShape shape = ObjectShape::square;
  ObjectColor color = ObjectColor::black;

  bool operator==(const RawObject&) const = default;
};

struct RawExample {
  std::string identifier;
  std::string sentence;
  std::array<std::vector<RawObject>, kSubImages> boxes;
  bool label = false;
};

RawExample parse_structured_json(const std::string& line);
/// Reads every non-blank line of a JSONL file. Throws std::runtime_error if
/// the file cannot be opened.
std::vector<RawExample> load_corpus(const std::string& path);

std::vector<std::string> tokenize(const std::string& sentence);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;
  static constexpr std::size_t kMinCount = 3;

  /// PAD and UNK only.
  Vocabulary();

  /// Tokens seen at least `min_count` times get ids 2, 3, ... in order of
  /// first occurrence.
  static Vocabulary build(const std::vector<std::vector<std::string>>& token_streams,
                          std::size_t min_count = kMinCount);

  std::size_t size() const { return tokens_.size(); }
  std::size_t id(const std::string& token) const;
  const std::string& token(std::size_t id) const { return tokens_.at(id); }
  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  std::vector<std::size_t> encode(const std::vector<std::string>& tokens) const;
  std::vector<std::string> decode(const std::vector<std::size_t>& ids) const;

  /// "token<TAB>id" lines sorted by id.
  std::string serialize() const;
  static Vocabulary deserialize(const std::string& text);
  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

  bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

 private:
  void append(const std::string& token);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> ids_;
};

/// (x_norm, y_norm, size_norm, square, triangle, circle, black, yellow, blue)
using ObjectFeature = std::array<double, kObjectFeatureDim>;

ObjectFeature encode_object(const RawObject& object);

struct EncodedExample {
  std::string identifier;
  std::vector<std::size_t> token_ids;
  std::array<std::vector<ObjectFeature>, kSubImages> sub_images;
  int label = 0;

  bool operator==(const EncodedExample&) const = default;
};

EncodedExample encode_example(const RawExample& raw, const Vocabulary& vocab);

/// Padded, masked group of examples. Padding tokens are PAD, padding objects
/// are all-zero features.
struct Batch {
  std::size_t size = 0;
  std::size_t max_tokens = 0;
  std::vector<std::size_t> token_ids;  // size x max_tokens
  std::vector<bool> token_mask;        // size x max_tokens
  std::array<std::size_t, kSubImages> max_objects{};
  std::array<std::vector<double>, kSubImages> objects;   // size x max_objects[j] x 9
  std::array<std::vector<bool>, kSubImages> object_mask;  // size x max_objects[j]
  std::vector<int> labels;
  std::vector<std::string> identifiers;

  /// Recovers the i-th original example from the unmasked positions.
  EncodedExample example(std::size_t i) const;
  std::vector<EncodedExample> unbatch() const;
};

Batch make_batch(const std::vector<const EncodedExample*>& examples);
std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples, std::size_t batch_size, bool shuffle,
                                Rng& rng);

}  // namespace bapt
