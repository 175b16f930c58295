#include "bapt/data.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

namespace bapt {

namespace {

using nlohmann::json;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

const json& field(const json& obj, const char* key, const std::string& id) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(id, std::string("missing field '") + key + "'");
  return *it;
}

double number_field(const json& obj, const char* key, const std::string& id) {
  const json& v = field(obj, key, id);
  if (!v.is_number()) throw ParseError(id, std::string("field '") + key + "' is not a number");
  return v.get<double>();
}

std::string string_field(const json& obj, const char* key, const std::string& id) {
  const json& v = field(obj, key, id);
  if (!v.is_string()) throw ParseError(id, std::string("field '") + key + "' is not a string");
  return v.get<std::string>();
}

ObjectColor parse_color(const std::string& raw, const std::string& id) {
  const std::string c = lower(raw);
  if (c == "black") return ObjectColor::black;
  if (c == "yellow") return ObjectColor::yellow;
  // The corpus writes blue as a hex code.
  if (c != "blue" && c != "#0099ff") std::cerr << "warning: [" << id << "] unknown color '" << raw << "' read as blue\n";
  return ObjectColor::blue;
}

ObjectShape parse_shape(const std::string& raw, const std::string& id) {
  const std::string s = lower(raw);
  if (s == "square") return ObjectShape::square;
  if (s == "triangle") return ObjectShape::triangle;
  if (s == "circle") return ObjectShape::circle;
  throw ParseError(id, "unknown object type '" + raw + "'");
}

void validate(const RawObject& o, const std::string& id) {
  if (!(o.x >= 0 && o.x <= 100) || !(o.y >= 0 && o.y <= 100)) {
    throw ParseError(id, "object position outside [0, 100]");
  }
  if (o.size != 10 && o.size != 20 && o.size != 30) {
    throw ParseError(id, "object size " + std::to_string(o.size) + " not in {10, 20, 30}");
  }
}

bool is_split_punct(char c) { return c == '.' || c == ',' || c == ';' || c == '!' || c == '?'; }

}  // namespace

RawExample parse_structured_json(const std::string& line) {
  json doc;
  try {
    doc = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParseError("", "line is not a JSON object");

  RawExample ex;
  ex.identifier = string_field(doc, "identifier", "");
  const std::string& id = ex.identifier;
  ex.sentence = string_field(doc, "sentence", id);

  const json& label = field(doc, "label", id);
  if (label.is_boolean()) {
    ex.label = label.get<bool>();
  } else if (label.is_string() && lower(label.get<std::string>()) == "true") {
    ex.label = true;
  } else if (label.is_string() && lower(label.get<std::string>()) == "false") {
    ex.label = false;
  } else {
    throw ParseError(id, "label must be \"true\" or \"false\"");
  }

  const json& rep = field(doc, "structured_rep", id);
  if (!rep.is_array()) throw ParseError(id, "structured_rep is not an array");
  if (rep.size() != kSubImages) {
    throw ParseError(id, "expected 3 sub-images, found " + std::to_string(rep.size()));
  }
  for (std::size_t j = 0; j < kSubImages; ++j) {
    if (!rep[j].is_array()) throw ParseError(id, "sub-image " + std::to_string(j) + " is not an array");
    for (const json& obj : rep[j]) {
      if (!obj.is_object()) throw ParseError(id, "object is not a JSON object");
      RawObject o;
      o.x = number_field(obj, "x_loc", id);
      o.y = number_field(obj, "y_loc", id);
      const double size = number_field(obj, "size", id);
      o.size = static_cast<int>(size);
      if (static_cast<double>(o.size) != size) throw ParseError(id, "object size is not an integer");
      o.shape = parse_shape(string_field(obj, "type", id), id);
      o.color = parse_color(string_field(obj, "color", id), id);
      validate(o, id);
      ex.boxes[j].push_back(o);
    }
  }
  return ex;
}

std::vector<RawExample> load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::vector<RawExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    out.push_back(parse_structured_json(line));
  }
  return out;
}

std::vector<std::string> tokenize(const std::string& sentence) {
  std::vector<std::string> tokens;
  std::istringstream words(lower(sentence));
  std::string word;
  while (words >> word) {
    std::size_t end = word.size();
    while (end > 0 && is_split_punct(word[end - 1])) --end;
    if (end > 0) tokens.push_back(word.substr(0, end));
    for (std::size_t k = end; k < word.size(); ++k) tokens.emplace_back(1, word[k]);
  }
  return tokens;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary() {
  append("<pad>");
  append("<unk>");
}

void Vocabulary::append(const std::string& token) {
  ids_.emplace(token, tokens_.size());
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::vector<std::string>>& token_streams, std::size_t min_count) {
  std::unordered_map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& stream : token_streams) {
    for (const auto& tok : stream) {
      if (counts[tok]++ == 0) order.push_back(tok);
    }
  }
  Vocabulary vocab;
  for (const auto& tok : order) {
    if (counts[tok] >= min_count && !vocab.contains(tok)) vocab.append(tok);
  }
  return vocab;
}

std::size_t Vocabulary::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Vocabulary::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::size_t> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<std::size_t>& ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (auto i : ids) out.push_back(token(i));
  return out;
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (std::size_t i = 0; i < tokens_.size(); ++i) out += tokens_[i] + '\t' + std::to_string(i) + '\n';
  return out;
}

Vocabulary Vocabulary::deserialize(const std::string& text) {
  Vocabulary vocab;
  vocab.tokens_.clear();
  vocab.ids_.clear();
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::runtime_error("vocabulary line without tab: '" + line + "'");
    const std::string token = line.substr(0, tab);
    const std::size_t id = std::stoul(line.substr(tab + 1));
    if (id != vocab.tokens_.size()) throw std::runtime_error("vocabulary ids are not dense at '" + token + "'");
    vocab.append(token);
  }
  if (vocab.size() < 2 || vocab.tokens_[kPad] != "<pad>" || vocab.tokens_[kUnk] != "<unk>") {
    throw std::runtime_error("vocabulary does not start with <pad>, <unk>");
  }
  return vocab;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << serialize();
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

// ---------------------------------------------------------------------------

ObjectFeature encode_object(const RawObject& o) {
  validate(o, "");
  ObjectFeature f{};
  f[0] = o.x / 50.0 - 1.0;
  f[1] = o.y / 50.0 - 1.0;
  f[2] = o.size / 30.0;
  f[3 + static_cast<int>(o.shape)] = 1.0;
  f[6 + static_cast<int>(o.color)] = 1.0;
  return f;
}

EncodedExample encode_example(const RawExample& raw, const Vocabulary& vocab) {
  EncodedExample ex;
  ex.identifier = raw.identifier;
  ex.token_ids = vocab.encode(tokenize(raw.sentence));
  for (std::size_t j = 0; j < kSubImages; ++j) {
    for (const auto& o : raw.boxes[j]) ex.sub_images[j].push_back(encode_object(o));
  }
  ex.label = raw.label ? 1 : 0;
  return ex;
}

// ---------------------------------------------------------------------------

Batch make_batch(const std::vector<const EncodedExample*>& examples) {
  Batch b;
  b.size = examples.size();
  for (const auto* ex : examples) {
    b.max_tokens = std::max(b.max_tokens, ex->token_ids.size());
    for (std::size_t j = 0; j < kSubImages; ++j) b.max_objects[j] = std::max(b.max_objects[j], ex->sub_images[j].size());
  }
  b.token_ids.assign(b.size * b.max_tokens, Vocabulary::kPad);
  b.token_mask.assign(b.size * b.max_tokens, false);
  for (std::size_t j = 0; j < kSubImages; ++j) {
    b.objects[j].assign(b.size * b.max_objects[j] * kObjectFeatureDim, 0.0);
    b.object_mask[j].assign(b.size * b.max_objects[j], false);
  }
  for (std::size_t i = 0; i < b.size; ++i) {
    const auto& ex = *examples[i];
    for (std::size_t t = 0; t < ex.token_ids.size(); ++t) {
      b.token_ids[i * b.max_tokens + t] = ex.token_ids[t];
      b.token_mask[i * b.max_tokens + t] = true;
    }
    for (std::size_t j = 0; j < kSubImages; ++j) {
      for (std::size_t k = 0; k < ex.sub_images[j].size(); ++k) {
        const std::size_t slot = i * b.max_objects[j] + k;
        std::copy(ex.sub_images[j][k].begin(), ex.sub_images[j][k].end(),
                  b.objects[j].begin() + static_cast<std::ptrdiff_t>(slot * kObjectFeatureDim));
        b.object_mask[j][slot] = true;
      }
    }
    b.labels.push_back(ex.label);
    b.identifiers.push_back(ex.identifier);
  }
  return b;
}

EncodedExample Batch::example(std::size_t i) const {
  if (i >= size) throw std::out_of_range("batch index out of range");
  EncodedExample ex;
  ex.identifier = identifiers[i];
  ex.label = labels[i];
  for (std::size_t t = 0; t < max_tokens; ++t) {
    if (token_mask[i * max_tokens + t]) ex.token_ids.push_back(token_ids[i * max_tokens + t]);
  }
  for (std::size_t j = 0; j < kSubImages; ++j) {
    for (std::size_t k = 0; k < max_objects[j]; ++k) {
      const std::size_t slot = i * max_objects[j] + k;
      if (!object_mask[j][slot]) continue;
      ObjectFeature f;
      std::copy_n(objects[j].begin() + static_cast<std::ptrdiff_t>(slot * kObjectFeatureDim), kObjectFeatureDim,
                  f.begin());
      ex.sub_images[j].push_back(f);
    }
  }
  return ex;
}

std::vector<EncodedExample> Batch::unbatch() const {
  std::vector<EncodedExample> out;
  for (std::size_t i = 0; i < size; ++i) out.push_back(example(i));
  return out;
}

std::vector<Batch> make_batches(const std::vector<EncodedExample>& examples, std::size_t batch_size, bool shuffle,
                                Rng& rng) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    std::vector<const EncodedExample*> group;
    for (std::size_t k = start; k < std::min(order.size(), start + batch_size); ++k) group.push_back(&examples[order[k]]);
    batches.push_back(make_batch(group));
  }
  return batches;
}

}  // namespace bapt
