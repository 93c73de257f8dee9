#include "rlhf/pref_data/query.hpp"

#include <stdexcept>

#include "rlhf/common/random.hpp"

namespace rlhf::pref_data {

TokenSeq sample_response(const PolicyModel& model, std::span<const TokenId> x,
                         const SamplingSpec& spec, std::uint64_t seed, bool* satisfied) {
  if (spec.constraint) {
    auto s = seq_model::sample_constrained(model, x, spec.response_len, *spec.constraint,
                                           spec.max_attempts, seed);
    if (satisfied) *satisfied = s.satisfied;
    return std::move(s.y);
  }
  if (satisfied) *satisfied = true;
  return seq_model::sample(model, x, spec.response_len, seed);
}

Query make_policy_query(const PolicyModel& pi, const TokenSeq& x, const SamplingSpec& spec,
                        std::uint64_t seed, Source source) {
  Query q;
  q.x = x;
  for (std::size_t i = 0; i < 4; ++i) {
    q.responses[i] = sample_response(pi, x, spec, derive_seed(seed, i), &q.satisfied[i]);
    q.sources[i] = source;
  }
  return q;
}

Query make_validation_query(const PolicyModel& rho, const PolicyModel& pi, const TokenSeq& x,
                            const SamplingSpec& spec, std::uint64_t seed) {
  if (rho.vocab_size() != pi.vocab_size())
    throw std::invalid_argument("validation query: vocabularies differ");
  Query q;
  q.x = x;
  q.is_validation = true;
  for (std::size_t i = 0; i < 4; ++i) {
    const PolicyModel& m = i < 2 ? rho : pi;
    q.responses[i] = sample_response(m, x, spec, derive_seed(seed, i), &q.satisfied[i]);
    q.sources[i] = i < 2 ? Source::kRho : Source::kPi;
  }
  return q;
}

void MockLabeler::validate() const {
  if (!oracle) throw std::invalid_argument("mock labeler: no oracle");
  if (!(noise >= 0.0 && noise < 1.0)) throw std::invalid_argument("mock labeler: noise must be in [0, 1)");
}

int mock_label(const MockLabeler& labeler, const Query& q, std::uint64_t seed) {
  labeler.validate();
  int best = 0;
  double best_score = labeler.oracle(q.x, q.responses[0]);
  for (int i = 1; i < 4; ++i) {
    const double s = labeler.oracle(q.x, q.responses[static_cast<std::size_t>(i)]);
    if (s > best_score) {
      best = i;
      best_score = s;
    }
  }
  if (labeler.noise > 0.0) {
    Rng rng(seed);
    if (rng.bernoulli(labeler.noise)) {
      const int other = static_cast<int>(rng.below(3));
      return other >= best ? other + 1 : other;
    }
  }
  return best;
}

PreferenceRecord to_record(const Query& q, int choice, const std::string& labeler_id) {
  PreferenceRecord r;
  r.x = q.x;
  r.responses = q.responses;
  r.sources = q.sources;
  r.choice = choice;
  r.labeler_id = labeler_id;
  r.is_validation = q.is_validation;
  r.created_at = reward_model::utc_timestamp();
  r.validate();
  return r;
}

double win_rate(std::span<const PreferenceRecord> validation_records) {
  if (validation_records.empty()) throw std::invalid_argument("win_rate: no records");
  std::size_t wins = 0;
  for (const auto& r : validation_records)
    if (r.sources[static_cast<std::size_t>(r.choice)] == Source::kPi) ++wins;
  return static_cast<double>(wins) / static_cast<double>(validation_records.size());
}

}  // namespace rlhf::pref_data
