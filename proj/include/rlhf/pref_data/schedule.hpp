#pragma once

#include <cstddef>
#include <vector>

namespace rlhf::pref_data {

// N_r0 labels before the first episode, N_r in total, over N_pi episodes.
struct LabelSchedule {
  std::size_t n_r0 = 0;
  std::size_t n_r = 0;
  std::size_t n_pi = 1;

  void validate() const;
  bool offline() const { return n_r == n_r0; }
};

inline constexpr std::size_t kOutstandingQueries = 1000;
inline constexpr std::size_t kRetrainCount = 20;

// l(n) = N_r0 + (N_r - N_r0)(1 - (1 - n/N_pi)^2), before rounding.
double label_curve(const LabelSchedule& s, std::size_t n);
// l(n) rounded down, computed in exact integer arithmetic.
std::size_t label_target(const LabelSchedule& s, std::size_t n);
bool should_pause(const LabelSchedule& s, std::size_t n, std::size_t labels_collected);
std::size_t topup_requests(const LabelSchedule& s, std::size_t n, std::size_t total_requested,
                           std::size_t outstanding = kOutstandingQueries);
// First point N_r0, then 19 more evenly spaced up to N_r. Offline: {N_r0}.
std::vector<std::size_t> retrain_points(const LabelSchedule& s);

}  // namespace rlhf::pref_data
