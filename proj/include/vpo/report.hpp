#pragma once

#include <string>
#include <vector>

#include "vpo/analysis.hpp"
#include "vpo/config.hpp"

// Analysis execution and the run report. Everything here reads only files
// under the run directory, so a report can be regenerated from the logs.

namespace vpo {

struct AnalysisResult {
  AnalysisSpec spec;
  analysis::Fit fit;
  analysis::EmmTable table;
  std::vector<analysis::Contrast> contrasts;
};

AnalysisResult run_analysis(const std::vector<TrialRecord>& trials, const AnalysisSpec& spec);

/// fit.json, emm.json, emm.csv, contrasts.json under `dir`.
void write_analysis(const std::string& dir, const AnalysisResult& result);

/// Markdown table of an EMM table (same columns as the CSV).
std::string emm_markdown(const analysis::EmmTable& table);

/// Writes report/{summary.md,budget.csv,utility.csv,trials.csv} and returns
/// the summary text.
std::string write_report(const std::string& run_dir);

}  // namespace vpo
