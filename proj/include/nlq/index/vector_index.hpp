#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlq/index/embedding.hpp"

namespace nlq::index {

enum class ChunkKind { kTableDoc, kRule };

const char* to_string(ChunkKind kind);
std::optional<ChunkKind> parse_chunk_kind(std::string_view text);

struct ContextChunk {
  std::string id;
  ChunkKind kind = ChunkKind::kTableDoc;
  std::string text;
  std::string source_ref;  // table name or rule id
  EmbeddingVector embedding;
  bool active = true;

  bool operator==(const ContextChunk&) const = default;
};

// Content address: hash over kind, source_ref and text.
std::string content_id(ChunkKind kind, std::string_view source_ref, std::string_view text);

// Builds a chunk with its embedding; the id defaults to the content address.
ContextChunk make_chunk(ChunkKind kind, std::string source_ref, std::string text,
                        const Embedder& embedder, std::optional<std::string> id = std::nullopt);

struct SearchHit {
  ContextChunk chunk;
  double score = 0.0;
};

class DimensionMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NotFound : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Exact (brute-force) cosine index. Concurrent readers, exclusive writers.
class VectorIndex {
 public:
  explicit VectorIndex(std::shared_ptr<const Embedder> embedder);

  VectorIndex(const VectorIndex&) = delete;
  VectorIndex& operator=(const VectorIndex&) = delete;

  const Embedder& embedder() const { return *embedder_; }
  std::size_t dimension() const { return embedder_->dimension(); }

  // Inserts or replaces by id. Throws DimensionMismatch.
  void upsert(ContextChunk chunk);

  // Hits sorted by score descending, ties by id ascending. Inactive chunks
  // never appear. Throws std::invalid_argument when top_k == 0.
  std::vector<SearchHit> search(std::string_view query_text, std::size_t top_k,
                                std::optional<ChunkKind> kind_filter = std::nullopt) const;
  std::vector<SearchHit> search(const EmbeddingVector& query, std::size_t top_k,
                                std::optional<ChunkKind> kind_filter = std::nullopt) const;

  // Excludes the chunk from search; it stays stored. Throws NotFound.
  void deactivate(const std::string& id);

  // Removes every chunk matching `pred`; returns how many were removed.
  std::size_t remove_if(const std::function<bool(const ContextChunk&)>& pred);

  std::size_t size() const;
  std::size_t active_count(std::optional<ChunkKind> kind = std::nullopt) const;
  std::optional<ContextChunk> get(const std::string& id) const;
  std::vector<ContextChunk> chunks() const;  // ordered by id

  // One chunk per line: {"id","kind","source_ref","text","active","embedding"}.
  void save(const std::filesystem::path& path) const;
  // Replaces the current contents. Throws DimensionMismatch or std::runtime_error.
  void load(const std::filesystem::path& path);

 private:
  std::shared_ptr<const Embedder> embedder_;
  mutable std::shared_mutex mu_;
  std::map<std::string, ContextChunk> chunks_;
};

}  // namespace nlq::index
