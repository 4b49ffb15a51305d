#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "pm/common.hpp"

namespace pm::cli {

// A two-or-more column table written as TSV with a header row.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<nlohmann::json>> rows;  // numbers or strings
};

// Numbers use the shortest round-trip form so identical inputs give
// identical bytes.
std::string format_cell(const nlohmann::json& v);
std::string to_tsv(const Table& table);
std::string to_jsonl(const std::vector<nlohmann::json>& records);

// Every record must be an object with exactly the keys of the first.
void check_schema(const std::vector<nlohmann::json>& records);

// Groups records by `key` (numeric, ascending) and averages `value`.
// Empty input gives a header-only table.
Table aggregate_mean(const std::vector<nlohmann::json>& records, const std::string& key,
                     const std::string& value);

// Mean over records of the per-record "nrmse" field.
Real mean_nrmse(const std::vector<nlohmann::json>& records);

// Owns one run directory: manifest.json, metrics.jsonl, tables/, checkpoints/.
class RunOutput {
 public:
  // Refuses a directory that already holds a run manifest.
  explicit RunOutput(std::string dir);

  const std::string& dir() const { return dir_; }
  std::string path(const std::string& name) const;
  std::string checkpoint_prefix(const std::string& name) const;

  void write_text(const std::string& name, const std::string& text) const;
  void write_metrics(const std::vector<nlohmann::json>& records) const;
  void write_jsonl(const std::string& name, const std::vector<nlohmann::json>& records) const;
  void write_table(const std::string& name, const Table& table) const;
  void write_manifest(const nlohmann::json& manifest) const;

 private:
  std::string dir_;
};

}  // namespace pm::cli
