#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlhf/seq_model/vocab.hpp"

namespace rlhf::reward_model {

using seq_model::TokenSeq;

enum class Source { kRho, kPi, kOther };

std::string to_string(Source s);
Source source_from_string(const std::string& s);

// One best-of-4 judgement: context, four responses with the policy that
// produced each, and the chosen index.
struct PreferenceRecord {
  TokenSeq x;
  std::array<TokenSeq, 4> responses;
  int choice = 0;
  std::array<Source, 4> sources{Source::kOther, Source::kOther, Source::kOther,
                                Source::kOther};
  std::string labeler_id;
  bool is_validation = false;
  std::string created_at;

  void validate() const;
};

// Line-delimited JSON: {x, y: [4], b, sources: [4], labeler, validation, created_at}
nlohmann::json record_to_json(const PreferenceRecord& r, const seq_model::Vocab& vocab);
PreferenceRecord record_from_json(const nlohmann::json& j, const seq_model::Vocab& vocab);

void write_records(const std::filesystem::path& path,
                   const std::vector<PreferenceRecord>& records,
                   const seq_model::Vocab& vocab, bool append = false);
std::vector<PreferenceRecord> read_records(const std::filesystem::path& path,
                                           const seq_model::Vocab& vocab);

std::string utc_timestamp();

}  // namespace rlhf::reward_model
