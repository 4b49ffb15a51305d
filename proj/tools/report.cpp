#include "report.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace pm::cli {

namespace fs = std::filesystem;

std::string format_cell(const nlohmann::json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_null()) return "";
  return v.dump();
}

std::string to_tsv(const Table& table) {
  std::ostringstream out;
  for (std::size_t c = 0; c < table.columns.size(); ++c) out << (c ? "\t" : "") << table.columns[c];
  out << '\n';
  for (const auto& row : table.rows) {
    if (row.size() != table.columns.size()) throw ValidationError("table row width does not match header");
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? "\t" : "") << format_cell(row[c]);
    out << '\n';
  }
  return out.str();
}

std::string to_jsonl(const std::vector<nlohmann::json>& records) {
  std::string out;
  for (const auto& r : records) {
    out += r.dump();
    out += '\n';
  }
  return out;
}

void check_schema(const std::vector<nlohmann::json>& records) {
  if (records.empty()) return;
  const auto& first = records.front();
  if (!first.is_object()) throw ValidationError("metric records must be JSON objects");
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    bool same = r.is_object() && r.size() == first.size();
    for (auto it = first.begin(); same && it != first.end(); ++it) same = r.contains(it.key());
    if (!same) throw ValidationError("metric record " + std::to_string(i) + " has a different schema");
  }
}

Table aggregate_mean(const std::vector<nlohmann::json>& records, const std::string& key,
                     const std::string& value) {
  check_schema(records);
  Table t{{key, "mean_" + value}, {}};
  struct Acc {
    nlohmann::json label;
    Real sum = 0.0;
    std::size_t n = 0;
  };
  std::map<Real, Acc> groups;
  for (const auto& r : records) {
    if (!r.contains(key) || !r[key].is_number()) throw ValidationError("record lacks numeric '" + key + "'");
    if (!r.contains(value) || !r[value].is_number()) {
      throw ValidationError("record lacks numeric '" + value + "'");
    }
    Acc& a = groups[r[key].get<Real>()];
    if (a.n == 0) a.label = r[key];
    a.sum += r[value].get<Real>();
    ++a.n;
  }
  for (const auto& [k, a] : groups) t.rows.push_back({a.label, a.sum / Real(a.n)});
  return t;
}

Real mean_nrmse(const std::vector<nlohmann::json>& records) {
  if (records.empty()) throw ValidationError("no records to aggregate");
  check_schema(records);
  Real sum = 0.0;
  for (const auto& r : records) {
    if (!r.contains("nrmse") || !r["nrmse"].is_number()) throw ValidationError("record lacks numeric 'nrmse'");
    sum += r["nrmse"].get<Real>();
  }
  return sum / Real(records.size());
}

RunOutput::RunOutput(std::string dir) : dir_(std::move(dir)) {
  if (dir_.empty()) throw ValidationError("--out is required");
  if (fs::exists(fs::path(dir_) / "manifest.json")) {
    throw ValidationError("output directory '" + dir_ + "' already holds a run");
  }
  fs::create_directories(fs::path(dir_) / "tables");
  fs::create_directories(fs::path(dir_) / "checkpoints");
}

std::string RunOutput::path(const std::string& name) const { return (fs::path(dir_) / name).string(); }

std::string RunOutput::checkpoint_prefix(const std::string& name) const {
  return (fs::path(dir_) / "checkpoints" / name).string();
}

void RunOutput::write_text(const std::string& name, const std::string& text) const {
  std::ofstream out(path(name), std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write '" + path(name) + "'");
  out << text;
  if (!out) throw ValidationError("write failed for '" + path(name) + "'");
}

void RunOutput::write_metrics(const std::vector<nlohmann::json>& records) const {
  write_jsonl("metrics.jsonl", records);
}

void RunOutput::write_jsonl(const std::string& name, const std::vector<nlohmann::json>& records) const {
  check_schema(records);
  write_text(name, to_jsonl(records));
}

void RunOutput::write_table(const std::string& name, const Table& table) const {
  write_text("tables/" + name + ".tsv", to_tsv(table));
}

void RunOutput::write_manifest(const nlohmann::json& manifest) const {
  write_text("manifest.json", manifest.dump(2) + "\n");
}

}  // namespace pm::cli
