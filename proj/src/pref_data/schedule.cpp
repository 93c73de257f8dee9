#include "rlhf/pref_data/schedule.hpp"

#include <stdexcept>

namespace rlhf::pref_data {

void LabelSchedule::validate() const {
  if (n_r0 == 0 || n_r0 > n_r) throw std::invalid_argument("schedule: need 0 < N_r0 <= N_r");
  if (n_pi == 0) throw std::invalid_argument("schedule: N_pi must be positive");
}

namespace {

void check_n(const LabelSchedule& s, std::size_t n) {
  s.validate();
  if (n > s.n_pi) throw std::out_of_range("schedule: episode index beyond N_pi");
}

}  // namespace

double label_curve(const LabelSchedule& s, std::size_t n) {
  check_n(s, n);
  const double f = 1.0 - static_cast<double>(n) / static_cast<double>(s.n_pi);
  return static_cast<double>(s.n_r0) + static_cast<double>(s.n_r - s.n_r0) * (1.0 - f * f);
}

std::size_t label_target(const LabelSchedule& s, std::size_t n) {
  check_n(s, n);
  // (N_r - N_r0) * (N_pi^2 - (N_pi - n)^2) / N_pi^2, floored
  using u128 = unsigned __int128;
  const u128 np = s.n_pi, rem = s.n_pi - n;
  const u128 num = static_cast<u128>(s.n_r - s.n_r0) * (np * np - rem * rem);
  return s.n_r0 + static_cast<std::size_t>(num / (np * np));
}

bool should_pause(const LabelSchedule& s, std::size_t n, std::size_t labels_collected) {
  return labels_collected < label_target(s, n);
}

std::size_t topup_requests(const LabelSchedule& s, std::size_t n, std::size_t total_requested,
                           std::size_t outstanding) {
  const std::size_t want = label_target(s, n) + outstanding;
  return want > total_requested ? want - total_requested : 0;
}

std::vector<std::size_t> retrain_points(const LabelSchedule& s) {
  s.validate();
  if (s.offline()) return {s.n_r0};
  const std::size_t span = s.n_r - s.n_r0;
  if (span < kRetrainCount - 1)
    throw std::invalid_argument("schedule: N_r - N_r0 too small for distinct retrain points");
  std::vector<std::size_t> pts;
  for (std::size_t k = 0; k < kRetrainCount; ++k)
    pts.push_back(s.n_r0 + k * span / (kRetrainCount - 1));
  return pts;
}

}  // namespace rlhf::pref_data
