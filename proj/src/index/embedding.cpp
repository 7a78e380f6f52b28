#include "nlq/index/embedding.hpp"

#include <cctype>
#include <cmath>
#include <nlohmann/json.hpp>
#include <stdexcept>

#include "nlq/util/files.hpp"
#include "nlq/util/hash.hpp"

namespace nlq::index {

namespace {

bool is_token_byte(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

void normalize(std::vector<double>& v) {
  double norm2 = 0.0;
  for (double x : v) norm2 += x * x;
  if (norm2 == 0.0) return;
  double inv = 1.0 / std::sqrt(norm2);
  for (double& x : v) x *= inv;
}

}  // namespace

bool EmbeddingVector::is_zero() const {
  for (double x : values) {
    if (x != 0.0) return false;
  }
  return true;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_token_byte(c)) {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

EmbeddingVector embed_text(std::string_view text, std::size_t dimension) {
  if (dimension == 0) throw std::invalid_argument("embedding dimension must be >= 1");
  EmbeddingVector out{std::vector<double>(dimension, 0.0)};
  for (const auto& token : tokenize(text)) {
    std::uint64_t h = util::fnv1a64(token);
    double sign = (h >> 63) == 0 ? 1.0 : -1.0;
    out.values[h % dimension] += sign;
  }
  normalize(out.values);
  return out;
}

double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dimension() != b.dimension()) throw std::invalid_argument("cosine: dimension mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

BuiltinEmbedder::BuiltinEmbedder(std::size_t dimension) : dimension_(dimension) {
  if (dimension_ == 0) throw std::invalid_argument("embedding dimension must be >= 1");
}

EmbeddingVector BuiltinEmbedder::embed(std::string_view text) const {
  return embed_text(text, dimension_);
}

std::string BuiltinEmbedder::id() const { return "builtin-fnv1a-" + std::to_string(dimension_); }

RemoteEmbedder::RemoteEmbedder(std::string model_id, std::size_t dimension, Transport transport,
                               std::filesystem::path cache_file)
    : model_id_(std::move(model_id)),
      dimension_(dimension),
      transport_(std::move(transport)),
      cache_file_(std::move(cache_file)) {
  if (!cache_file_.empty() && std::filesystem::exists(cache_file_)) {
    auto doc = nlohmann::json::parse(util::read_file(cache_file_));
    for (auto& [key, value] : doc.items()) cache_[key] = value.get<std::vector<double>>();
  }
}

EmbeddingVector RemoteEmbedder::embed(std::string_view text) const {
  std::string key = util::to_hex(util::fnv1a64(text));
  {
    std::lock_guard lock(mu_);
    if (auto it = cache_.find(key); it != cache_.end()) return EmbeddingVector{it->second};
  }
  auto values = transport_(text);
  if (values.size() != dimension_) {
    throw std::runtime_error("remote embedder returned dimension " + std::to_string(values.size()) +
                             ", expected " + std::to_string(dimension_));
  }
  normalize(values);
  std::lock_guard lock(mu_);
  cache_[key] = values;
  return EmbeddingVector{std::move(values)};
}

void RemoteEmbedder::flush() const {
  if (cache_file_.empty()) return;
  std::lock_guard lock(mu_);
  nlohmann::json doc = nlohmann::json::object();
  for (const auto& [key, values] : cache_) doc[key] = values;
  util::write_file_atomic(cache_file_, doc.dump());
}

std::size_t RemoteEmbedder::cache_size() const {
  std::lock_guard lock(mu_);
  return cache_.size();
}

}  // namespace nlq::index
