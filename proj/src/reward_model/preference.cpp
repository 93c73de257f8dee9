#include "rlhf/reward_model/preference.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <stdexcept>

namespace rlhf::reward_model {

std::string to_string(Source s) {
  switch (s) {
    case Source::kRho: return "rho";
    case Source::kPi: return "pi";
    case Source::kOther: return "other";
  }
  return "other";
}

Source source_from_string(const std::string& s) {
  if (s == "rho") return Source::kRho;
  if (s == "pi") return Source::kPi;
  if (s == "other") return Source::kOther;
  throw std::invalid_argument("unknown response source '" + s + "'");
}

void PreferenceRecord::validate() const {
  if (choice < 0 || choice > 3)
    throw std::invalid_argument("preference record: choice must be in {0,1,2,3}");
}

nlohmann::json record_to_json(const PreferenceRecord& r, const seq_model::Vocab& vocab) {
  r.validate();
  nlohmann::json ys = nlohmann::json::array(), srcs = nlohmann::json::array();
  for (std::size_t i = 0; i < 4; ++i) {
    ys.push_back(vocab.detokenize(r.responses[i]));
    srcs.push_back(to_string(r.sources[i]));
  }
  return {{"x", vocab.detokenize(r.x)}, {"y", ys},          {"b", r.choice},
          {"sources", srcs},           {"labeler", r.labeler_id},
          {"validation", r.is_validation}, {"created_at", r.created_at}};
}

PreferenceRecord record_from_json(const nlohmann::json& j, const seq_model::Vocab& vocab) {
  PreferenceRecord r;
  r.x = vocab.tokenize(j.at("x").get<std::string>());
  const auto& ys = j.at("y");
  if (!ys.is_array() || ys.size() != 4)
    throw std::invalid_argument("preference record: y must hold exactly 4 responses");
  for (std::size_t i = 0; i < 4; ++i) r.responses[i] = vocab.tokenize(ys[i].get<std::string>());
  r.choice = j.at("b").get<int>();
  if (j.contains("sources")) {
    const auto& s = j.at("sources");
    if (!s.is_array() || s.size() != 4)
      throw std::invalid_argument("preference record: sources must hold 4 tags");
    for (std::size_t i = 0; i < 4; ++i) r.sources[i] = source_from_string(s[i].get<std::string>());
  }
  r.labeler_id = j.value("labeler", "");
  r.is_validation = j.value("validation", false);
  r.created_at = j.value("created_at", "");
  r.validate();
  return r;
}

void write_records(const std::filesystem::path& path,
                   const std::vector<PreferenceRecord>& records,
                   const seq_model::Vocab& vocab, bool append) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r, vocab).dump() << '\n';
}

std::vector<PreferenceRecord> read_records(const std::filesystem::path& path,
                                           const seq_model::Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<PreferenceRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line), vocab));
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace rlhf::reward_model
