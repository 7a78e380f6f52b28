#include "shop_env.hpp"

#include "fixtures.hpp"

namespace nlq::testing {

ShopEnv::ShopEnv() {
  dir = make_temp_dir("env");
  db_file = make_shop_db(dir);
  conn = db::connect(profile_for(db_file));
  snapshot = schema::scan(*conn);
  embedder = std::make_shared<index::BuiltinEmbedder>();
  index = std::make_unique<index::VectorIndex>(embedder);
  for (auto& chunk : schema::render_chunks(snapshot, *embedder)) index->upsert(std::move(chunk));
  backend = std::make_shared<llm::ScriptedBackend>();
  gateway = std::make_unique<llm::Gateway>(backend, llm::PromptTemplates::load(llm::default_prompt_dir()));
}

ShopEnv::~ShopEnv() {
  conn.reset();
  std::filesystem::remove_all(dir);
}

pipeline::PipelineDeps ShopEnv::deps(pipeline::PipelineConfig config) {
  return pipeline::PipelineDeps{*conn, *index, snapshot, *gateway, std::move(config)};
}

std::unique_ptr<pipeline::Session> ShopEnv::session(const std::string& id) {
  auto s = std::make_unique<pipeline::Session>();
  s->session_id = id;
  s->database = "shop";
  return s;
}

std::vector<std::string> ShopEnv::prompts(llm::TemplateId id) const {
  std::vector<std::string> out;
  for (const auto& c : backend->calls()) {
    if (c.template_id == id) out.push_back(c.rendered_prompt);
  }
  return out;
}

std::string fenced(const std::string& sql) { return "```sql\n" + sql + "\n```"; }

}  // namespace nlq::testing
