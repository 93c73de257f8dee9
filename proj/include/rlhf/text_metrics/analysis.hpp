#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlhf/text_metrics/copying.hpp"
#include "rlhf/text_metrics/rouge.hpp"

namespace rlhf::text_metrics {

// One (source, summary) pair; `reference` enables ROUGE.
struct PairInput {
  std::string id;
  std::string source;
  std::string summary;
  std::optional<std::string> reference;
};

// Accepts "source", "article" or "post" for the source text.
PairInput pair_from_json(const nlohmann::json& j);
std::vector<PairInput> read_pairs(std::istream& in);

struct AnalysisOptions {
  DatasetKind kind = DatasetKind::kTldr;
  CountMode count = CountMode::kOccurrences;
  std::size_t n_threads = 1;
};

struct PairAnalysis {
  std::string id;
  CopyStats copy;
  std::optional<RougeScores> rouge;
  std::optional<bool> first3_copy;
  bool preamble = false;
  LcsSpan lcs;
};

PairAnalysis analyze_pair(const PairInput& p, const AnalysisOptions& opt);
nlohmann::json to_json(const PairAnalysis& a);

struct AnalysisReport {
  std::vector<PairAnalysis> pairs;
  nlohmann::json aggregate;  // corpus means, skipping undefined entries
};

AnalysisReport analyze(const std::vector<PairInput>& pairs, const AnalysisOptions& opt);

// One JSON line per pair, then the aggregate line ({"aggregate": true, ...}).
void write_report(const AnalysisReport& r, std::ostream& out);

// Tab-separated (x, y) series: novel.tsv and repeated.tsv (x = n, with 5 for
// whole sentences), lcs_positions.tsv (relative context vs summary position).
void write_plot_data(const AnalysisReport& r, const std::filesystem::path& dir);

}  // namespace rlhf::text_metrics
