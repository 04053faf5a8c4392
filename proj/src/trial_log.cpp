#include "vpo/trial_log.hpp"

#include <filesystem>

namespace vpo {

std::string trial_line(const TrialRecord& record) {
  validate(record);
  return trial_to_json(record).dump();
}

TrialRecord parse_trial_line(std::string_view line) {
  Json j;
  try {
    j = Json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw SchemaError(std::string("trial row is not JSON: ") + e.what());
  }
  return trial_from_json(j);
}

TrialLogWriter::TrialLogWriter(const std::string& path, bool truncate) : path_(path) {
  const std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  out_.open(path, truncate ? std::ios::trunc : std::ios::app);
  if (!out_) throw Error("cannot open trial log " + path);
}

void TrialLogWriter::append(const TrialRecord& record) {
  const std::string line = trial_line(record);
  std::lock_guard lock(mu_);
  out_ << line << '\n';
  out_.flush();
  if (!out_) throw Error("trial log write failed: " + path_);
}

void TrialLogWriter::append(const std::vector<TrialRecord>& records) {
  for (const auto& r : records) append(r);
}

std::vector<TrialRecord> read_trial_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open trial log " + path);
  std::vector<TrialRecord> out;
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      out.push_back(parse_trial_line(line));
    } catch (const SchemaError& e) {
      throw SchemaError(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_trial_log(const std::string& path, const std::vector<TrialRecord>& records) {
  std::string text;
  for (const auto& r : records) text += trial_line(r) + "\n";
  write_text_file(path, text);
}

void write_jsonl(const std::string& path, const std::vector<Json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_text_file(path, text);
}

}  // namespace vpo
