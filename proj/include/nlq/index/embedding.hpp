#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

namespace nlq::index {

inline constexpr std::size_t kDefaultDimension = 256;

// Either all zeros or unit L2 norm.
struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dimension() const { return values.size(); }
  bool is_zero() const;
  bool operator==(const EmbeddingVector&) const = default;
};

// Lowercased alphanumeric runs. Bytes >= 0x80 count as word characters so
// UTF-8 words stay whole.
std::vector<std::string> tokenize(std::string_view text);

// Signed feature hashing: each token's FNV-1a hash h adds +1 (bit 63 clear)
// or -1 (bit 63 set) to slot h mod d, then the vector is L2-normalized.
EmbeddingVector embed_text(std::string_view text, std::size_t dimension = kDefaultDimension);

// Cosine of two vectors of equal dimension; 0 if either is the zero vector.
double cosine(const EmbeddingVector& a, const EmbeddingVector& b);

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string id() const = 0;
};

class BuiltinEmbedder final : public Embedder {
 public:
  explicit BuiltinEmbedder(std::size_t dimension = kDefaultDimension);

  EmbeddingVector embed(std::string_view text) const override;
  std::size_t dimension() const override { return dimension_; }
  std::string id() const override;

 private:
  std::size_t dimension_;
};

// Adapter for an external embedding model. Results are cached by text hash
// and the cache is persisted so repeated runs see identical vectors.
class RemoteEmbedder final : public Embedder {
 public:
  using Transport = std::function<std::vector<double>(std::string_view text)>;

  RemoteEmbedder(std::string model_id, std::size_t dimension, Transport transport,
                 std::filesystem::path cache_file = {});

  EmbeddingVector embed(std::string_view text) const override;
  std::size_t dimension() const override { return dimension_; }
  std::string id() const override { return "remote:" + model_id_; }

  void flush() const;
  std::size_t cache_size() const;

 private:
  std::string model_id_;
  std::size_t dimension_;
  Transport transport_;
  std::filesystem::path cache_file_;
  mutable std::mutex mu_;
  mutable std::map<std::string, std::vector<double>> cache_;
};

}  // namespace nlq::index
