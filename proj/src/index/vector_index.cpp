#include "nlq/index/vector_index.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "nlq/util/files.hpp"
#include "nlq/util/hash.hpp"

namespace nlq::index {

const char* to_string(ChunkKind kind) {
  return kind == ChunkKind::kTableDoc ? "table_doc" : "rule";
}

std::optional<ChunkKind> parse_chunk_kind(std::string_view text) {
  if (text == "table_doc") return ChunkKind::kTableDoc;
  if (text == "rule") return ChunkKind::kRule;
  return std::nullopt;
}

std::string content_id(ChunkKind kind, std::string_view source_ref, std::string_view text) {
  // Unit separators keep ("ab","c") and ("a","bc") apart.
  std::uint64_t h = util::fnv1a64(to_string(kind));
  h = util::fnv1a64("\x1f", h);
  h = util::fnv1a64(source_ref, h);
  h = util::fnv1a64("\x1f", h);
  h = util::fnv1a64(text, h);
  return util::to_hex(h);
}

ContextChunk make_chunk(ChunkKind kind, std::string source_ref, std::string text,
                        const Embedder& embedder, std::optional<std::string> id) {
  ContextChunk chunk;
  chunk.id = id ? std::move(*id) : content_id(kind, source_ref, text);
  chunk.kind = kind;
  chunk.embedding = embedder.embed(text);
  chunk.text = std::move(text);
  chunk.source_ref = std::move(source_ref);
  chunk.active = true;
  return chunk;
}

VectorIndex::VectorIndex(std::shared_ptr<const Embedder> embedder)
    : embedder_(std::move(embedder)) {
  if (!embedder_) throw std::invalid_argument("VectorIndex requires an embedder");
}

void VectorIndex::upsert(ContextChunk chunk) {
  if (chunk.embedding.dimension() != dimension()) {
    throw DimensionMismatch("chunk '" + chunk.id + "' has dimension " +
                            std::to_string(chunk.embedding.dimension()) + ", index expects " +
                            std::to_string(dimension()));
  }
  std::unique_lock lock(mu_);
  auto id = chunk.id;
  chunks_.insert_or_assign(std::move(id), std::move(chunk));
}

std::vector<SearchHit> VectorIndex::search(std::string_view query_text, std::size_t top_k,
                                           std::optional<ChunkKind> kind_filter) const {
  return search(embedder_->embed(query_text), top_k, kind_filter);
}

std::vector<SearchHit> VectorIndex::search(const EmbeddingVector& query, std::size_t top_k,
                                           std::optional<ChunkKind> kind_filter) const {
  if (top_k == 0) throw std::invalid_argument("top_k must be >= 1");
  if (query.dimension() != dimension()) {
    throw DimensionMismatch("query has dimension " + std::to_string(query.dimension()));
  }
  std::vector<SearchHit> hits;
  {
    std::shared_lock lock(mu_);
    hits.reserve(chunks_.size());
    for (const auto& [id, chunk] : chunks_) {
      if (!chunk.active) continue;
      if (kind_filter && chunk.kind != *kind_filter) continue;
      hits.push_back(SearchHit{chunk, cosine(query, chunk.embedding)});
    }
  }
  auto by_rank = [](const SearchHit& a, const SearchHit& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.chunk.id < b.chunk.id;
  };
  if (hits.size() > top_k) {
    std::partial_sort(hits.begin(), hits.begin() + static_cast<std::ptrdiff_t>(top_k), hits.end(),
                      by_rank);
    hits.resize(top_k);
  } else {
    std::sort(hits.begin(), hits.end(), by_rank);
  }
  return hits;
}

void VectorIndex::deactivate(const std::string& id) {
  std::unique_lock lock(mu_);
  auto it = chunks_.find(id);
  if (it == chunks_.end()) throw NotFound("no chunk with id '" + id + "'");
  it->second.active = false;
}

std::size_t VectorIndex::remove_if(const std::function<bool(const ContextChunk&)>& pred) {
  std::unique_lock lock(mu_);
  return std::erase_if(chunks_, [&](const auto& kv) { return pred(kv.second); });
}

std::size_t VectorIndex::size() const {
  std::shared_lock lock(mu_);
  return chunks_.size();
}

std::size_t VectorIndex::active_count(std::optional<ChunkKind> kind) const {
  std::shared_lock lock(mu_);
  return static_cast<std::size_t>(std::count_if(chunks_.begin(), chunks_.end(), [&](const auto& kv) {
    return kv.second.active && (!kind || kv.second.kind == *kind);
  }));
}

std::optional<ContextChunk> VectorIndex::get(const std::string& id) const {
  std::shared_lock lock(mu_);
  auto it = chunks_.find(id);
  if (it == chunks_.end()) return std::nullopt;
  return it->second;
}

std::vector<ContextChunk> VectorIndex::chunks() const {
  std::shared_lock lock(mu_);
  std::vector<ContextChunk> out;
  out.reserve(chunks_.size());
  for (const auto& [id, chunk] : chunks_) out.push_back(chunk);
  return out;
}

void VectorIndex::save(const std::filesystem::path& path) const {
  std::string out;
  {
    std::shared_lock lock(mu_);
    for (const auto& [id, chunk] : chunks_) {
      nlohmann::json line = {{"id", chunk.id},
                             {"kind", to_string(chunk.kind)},
                             {"source_ref", chunk.source_ref},
                             {"text", chunk.text},
                             {"active", chunk.active},
                             {"embedding", chunk.embedding.values}};
      out += line.dump();
      out.push_back('\n');
    }
  }
  util::write_file_atomic(path, out);
}

void VectorIndex::load(const std::filesystem::path& path) {
  std::map<std::string, ContextChunk> loaded;
  std::size_t lineno = 0;
  for (const auto& line : util::read_lines(path)) {
    ++lineno;
    auto doc = nlohmann::json::parse(line);
    ContextChunk chunk;
    chunk.id = doc.at("id").get<std::string>();
    auto kind = parse_chunk_kind(doc.at("kind").get<std::string>());
    if (!kind) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad chunk kind");
    }
    chunk.kind = *kind;
    chunk.source_ref = doc.at("source_ref").get<std::string>();
    chunk.text = doc.at("text").get<std::string>();
    chunk.active = doc.at("active").get<bool>();
    chunk.embedding.values = doc.at("embedding").get<std::vector<double>>();
    if (chunk.embedding.dimension() != dimension()) {
      throw DimensionMismatch(path.string() + ":" + std::to_string(lineno) +
                              ": embedding dimension " +
                              std::to_string(chunk.embedding.dimension()));
    }
    auto id = chunk.id;
    loaded.insert_or_assign(std::move(id), std::move(chunk));
  }
  std::unique_lock lock(mu_);
  chunks_ = std::move(loaded);
}

}  // namespace nlq::index
