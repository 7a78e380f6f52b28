#include <cstdio>
#include <sstream>

#include "nlq/bench/harness.hpp"

namespace nlq::bench {

using nlohmann::json;

namespace {

std::string percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f%%", fraction * 100.0);
  return buf;
}

json tally_json(const Tally& t) {
  return {{"items", t.items},
          {"first_attempt_correct", t.first_attempt_correct},
          {"final_correct", t.final_correct},
          {"first_attempt_accuracy", t.first_attempt_accuracy()},
          {"final_accuracy", t.final_accuracy()}};
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

std::string render_text(const BenchReport& report) {
  std::ostringstream out;
  auto all = report.overall();
  out << "dataset " << report.dataset_path << "\n";
  out << "items " << all.items << " (skipped " << report.skipped_count << ")\n";
  out << "first-attempt accuracy " << percent(all.first_attempt_accuracy()) << " ("
      << all.first_attempt_correct << "/" << all.items << ")\n";
  out << "final accuracy " << percent(all.final_accuracy()) << " (" << all.final_correct << "/"
      << all.items << ")\n\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %6s %14s %14s\n", "difficulty", "items", "first-attempt", "final");
  out << line;
  for (const auto& [d, t] : report.by_difficulty()) {
    std::snprintf(line, sizeof line, "%-12s %6d %14s %14s\n", to_string(d), t.items,
                  percent(t.first_attempt_accuracy()).c_str(), percent(t.final_accuracy()).c_str());
    out << line;
  }
  std::snprintf(line, sizeof line, "%-12s %6d %14s %14s\n", "total", all.items,
                percent(all.first_attempt_accuracy()).c_str(), percent(all.final_accuracy()).c_str());
  out << line;
  return out.str();
}

std::string render_csv(const BenchReport& report) {
  std::ostringstream out;
  out << "question_id,db_id,difficulty,first_attempt_correct,final_correct,iterations_used,predicted_sql,"
         "failure_detail\n";
  for (const auto& r : report.records) {
    out << csv_field(r.question_id) << ',' << csv_field(r.db_id) << ',' << to_string(r.difficulty) << ','
        << (r.first_attempt_correct ? 1 : 0) << ',' << (r.final_correct ? 1 : 0) << ','
        << r.iterations_used << ',' << csv_field(r.predicted_sql) << ',' << csv_field(r.failure_detail)
        << '\n';
  }
  auto all = report.overall();
  out << "TOTAL," << all.items << ",," << all.first_attempt_correct << ',' << all.final_correct << ",,,\n";
  return out.str();
}

}  // namespace

std::optional<ReportFormat> parse_report_format(std::string_view text) {
  if (text == "text") return ReportFormat::kText;
  if (text == "json") return ReportFormat::kJson;
  if (text == "csv") return ReportFormat::kCsv;
  return std::nullopt;
}

json to_json(const BenchReport& report) {
  json by = json::object();
  for (const auto& [d, t] : report.by_difficulty()) by[to_string(d)] = tally_json(t);
  json items = json::array();
  for (const auto& r : report.records) {
    items.push_back({{"question_id", r.question_id},
                     {"db_id", r.db_id},
                     {"difficulty", to_string(r.difficulty)},
                     {"question", r.question},
                     {"predicted_sql", r.predicted_sql},
                     {"first_attempt_correct", r.first_attempt_correct},
                     {"final_correct", r.final_correct},
                     {"iterations_used", r.iterations_used},
                     {"failure_detail", r.failure_detail}});
  }
  return {{"dataset_path", report.dataset_path},
          {"item_count", static_cast<int>(report.records.size())},
          {"skipped_count", report.skipped_count},
          {"overall", tally_json(report.overall())},
          {"by_difficulty", by},
          {"items", items}};
}

std::string render_report(const BenchReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::kText: return render_text(report);
    case ReportFormat::kJson: return to_json(report).dump(2) + "\n";
    case ReportFormat::kCsv: return render_csv(report);
  }
  return {};
}

}  // namespace nlq::bench
