#pragma once

#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include "vpo/serialization.hpp"

namespace vpo {

/// One JSONL line, no trailing newline. Validates first.
std::string trial_line(const TrialRecord& record);
TrialRecord parse_trial_line(std::string_view line);

/// Appends validated rows and flushes after each one, so a crash loses at
/// most the row being written. Safe to share between threads.
class TrialLogWriter {
 public:
  explicit TrialLogWriter(const std::string& path, bool truncate = false);
  void append(const TrialRecord& record);
  void append(const std::vector<TrialRecord>& records);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
  std::mutex mu_;
};

/// Strict reader: any malformed row raises SchemaError naming the line.
std::vector<TrialRecord> read_trial_log(const std::string& path);
/// Whole-file write through a temporary file.
void write_trial_log(const std::string& path, const std::vector<TrialRecord>& records);

void write_jsonl(const std::string& path, const std::vector<Json>& rows);

}  // namespace vpo
