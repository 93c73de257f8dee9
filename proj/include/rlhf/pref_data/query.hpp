#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rlhf/reward_model/preference.hpp"
#include "rlhf/seq_model/sampling.hpp"

namespace rlhf::pref_data {

using reward_model::PreferenceRecord;
using reward_model::Source;
using seq_model::PolicyModel;
using seq_model::SampleConstraint;
using seq_model::TokenId;
using seq_model::TokenSeq;

// Four candidate continuations of x awaiting a best-of-4 judgement.
struct Query {
  TokenSeq x;
  std::array<TokenSeq, 4> responses;
  std::array<Source, 4> sources{Source::kOther, Source::kOther, Source::kOther, Source::kOther};
  std::array<bool, 4> satisfied{true, true, true, true};
  bool is_validation = false;
};

struct SamplingSpec {
  std::size_t response_len = 1;
  std::optional<SampleConstraint> constraint;
  std::size_t max_attempts = seq_model::kDefaultMaxAttempts;
};

// Draws one slot's continuation; the slot index picks its own seed stream.
TokenSeq sample_response(const PolicyModel& model, std::span<const TokenId> x,
                         const SamplingSpec& spec, std::uint64_t seed, bool* satisfied = nullptr);

// Four independent samples from the model, all tagged with `source`.
Query make_policy_query(const PolicyModel& pi, const TokenSeq& x, const SamplingSpec& spec,
                        std::uint64_t seed, Source source = Source::kPi);

// Slots 0 and 1 from rho, slots 2 and 3 from pi.
Query make_validation_query(const PolicyModel& rho, const PolicyModel& pi, const TokenSeq& x,
                            const SamplingSpec& spec, std::uint64_t seed);

using OracleFn = std::function<double(std::span<const TokenId>, std::span<const TokenId>)>;

// Picks the response with the highest oracle score, lowest index on ties.
// With probability `noise` it picks a uniformly random other index instead.
struct MockLabeler {
  OracleFn oracle;
  double noise = 0.0;
  std::string id = "mock";

  void validate() const;
};

int mock_label(const MockLabeler& labeler, const Query& q, std::uint64_t seed = 0);

PreferenceRecord to_record(const Query& q, int choice, const std::string& labeler_id);

// Fraction of records whose chosen response came from pi.
double win_rate(std::span<const PreferenceRecord> validation_records);

}  // namespace rlhf::pref_data
