#include <limits>

#include "nlq/bench/harness.hpp"
#include "nlq/util/files.hpp"

namespace nlq::bench {

namespace fs = std::filesystem;
using nlohmann::json;

const char* to_string(Difficulty difficulty) {
  switch (difficulty) {
    case Difficulty::kSimple: return "simple";
    case Difficulty::kModerate: return "moderate";
    case Difficulty::kChallenging: return "challenging";
  }
  return "?";
}

std::optional<Difficulty> parse_difficulty(std::string_view text) {
  for (auto d : kAllDifficulties) {
    if (text == to_string(d)) return d;
  }
  return std::nullopt;
}

namespace {

fs::path find_questions_file(const fs::path& dir) {
  if (fs::is_regular_file(dir / "dev.json")) return dir / "dev.json";
  std::vector<fs::path> candidates;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".json") candidates.push_back(entry.path());
  }
  if (candidates.size() == 1) return candidates.front();
  if (candidates.empty()) throw DatasetNotFound("no question file in " + dir.string());
  throw DatasetNotFound("several question files in " + dir.string() + "; expected dev.json");
}

fs::path find_db_dir(const fs::path& dir) {
  for (const char* name : {"dev_databases", "databases", "train_databases"}) {
    if (fs::is_directory(dir / name)) return dir / name;
  }
  return dir / "dev_databases";
}

std::string record_label(const json& rec, std::size_t position) {
  if (rec.is_object() && rec.contains("question_id")) {
    const auto& id = rec["question_id"];
    return id.is_string() ? id.get<std::string>() : id.dump();
  }
  return "#" + std::to_string(position);
}

std::string required_string(const json& rec, const char* key, const std::string& label) {
  if (!rec.contains(key) || !rec[key].is_string()) {
    throw MalformedDataset(label, std::string("missing or non-string field '") + key + "'");
  }
  return rec[key].get<std::string>();
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DatasetNotFound("dataset directory not found: " + dir.string());
  Dataset ds;
  ds.dir = dir;
  ds.questions_file = find_questions_file(dir);

  json doc;
  try {
    doc = json::parse(util::read_file(ds.questions_file));
  } catch (const json::exception& e) {
    throw MalformedDataset(ds.questions_file.filename().string(), e.what());
  }
  if (!doc.is_array()) throw MalformedDataset(ds.questions_file.filename().string(), "expected a JSON array");

  const fs::path db_root = find_db_dir(dir);
  std::map<std::string, std::unique_ptr<db::Connection>> conns;

  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const auto label = record_label(rec, i);
    if (!rec.is_object()) throw MalformedDataset(label, "record is not an object");
    if (!rec.contains("question_id")) throw MalformedDataset(label, "missing field 'question_id'");

    BenchItem item;
    item.question_id = label;
    item.db_id = required_string(rec, "db_id", label);
    item.question = required_string(rec, "question", label);
    item.gold_sql = rec.contains("SQL") ? required_string(rec, "SQL", label)
                                        : required_string(rec, "gold_sql", label);
    if (rec.contains("evidence") && !rec["evidence"].is_null()) {
      auto ev = required_string(rec, "evidence", label);
      if (ev.find_first_not_of(" \t\r\n") != std::string::npos) item.evidence = std::move(ev);
    }
    auto diff_text = rec.contains("difficulty") ? required_string(rec, "difficulty", label) : "simple";
    auto diff = parse_difficulty(diff_text);
    if (!diff) throw MalformedDataset(label, "unknown difficulty '" + diff_text + "'");
    item.difficulty = *diff;

    item.db_path = db_root / item.db_id / (item.db_id + ".sqlite");
    if (!fs::is_regular_file(item.db_path)) {
      throw MalformedDataset(label, "database file not found: " + item.db_path.string());
    }
    auto& conn = conns[item.db_id];
    if (!conn) {
      try {
        conn = db::connect({item.db_id, db::ConnectionKind::kEmbeddedFile, item.db_path.string()});
      } catch (const db::ConnectFailure& e) {
        throw MalformedDataset(label, std::string("cannot open database: ") + e.what());
      }
    }
    auto gold = conn->execute(item.gold_sql, std::numeric_limits<std::int64_t>::max());
    if (!gold) {
      ds.skipped.push_back({item.question_id, "gold SQL failed: " + gold.error().message});
      continue;
    }
    ds.items.push_back(std::move(item));
  }
  return ds;
}

}  // namespace nlq::bench
