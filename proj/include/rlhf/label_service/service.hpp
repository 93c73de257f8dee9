#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "rlhf/label_service/state.hpp"

namespace rlhf::label_service {

struct ServiceConfig {
  double repeat_fraction = 0.05;
  std::size_t repeat_count = 5;  // distinct labelers on a repeat task
  std::size_t eval_labels = 1;   // labels per eval2/eval4 task (3 for majority votes)
  std::uint64_t seed = 0;
  std::filesystem::path data_dir;  // empty keeps everything in memory
  bool majority_vote = false;      // one record per task instead of per label
  bool fsync = true;
  // Labelers with at least gold_min_answers gold answers and accuracy below
  // gold_min_accuracy are only served gold tasks.
  double gold_min_accuracy = 0.0;
  std::size_t gold_min_answers = 10;

  void validate() const;
};

nlohmann::json to_json(const ServiceConfig& c);
ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig base = {});

struct Progress {
  std::size_t open = 0;
  std::size_t complete = 0;
  std::size_t labels_total = 0;
  std::optional<double> win_rate;
};

nlohmann::json to_json(const Progress& p);

inline constexpr const char* kLogFile = "labels.jsonl";

// Thread-safe labeling service. Mutations go through one writer that applies
// the event and appends it to <data_dir>/labels.jsonl; construction replays
// that log, so a restart restores every open task and assignment.
class LabelService {
 public:
  explicit LabelService(ServiceConfig cfg);
  ~LabelService();
  LabelService(const LabelService&) = delete;
  LabelService& operator=(const LabelService&) = delete;

  std::string enqueue(const TaskQuery& q);
  // An open task this labeler has not been served yet, or nullopt.
  std::optional<Assignment> next_task(const std::string& labeler);
  // Returns the canonical choice.
  int submit(const std::string& task_id, const std::string& labeler, int presented_choice);

  AgreementStats agreement() const;
  Progress progress() const;
  void andon_stop(bool stopped = true);
  bool stop_status() const;

  std::vector<LabelRecord> records() const;
  // Records of tasks completed after `cursor` (a completion count); advances it.
  std::vector<LabelRecord> records_since(std::size_t& cursor) const;
  std::optional<Permutation> permutation(const std::string& task_id,
                                         const std::string& labeler) const;
  std::map<std::string, GoldTally> gold_accuracy() const;
  std::map<std::string, std::size_t> eval_wins(TaskKind kind) const;

  const ServiceConfig& config() const { return cfg_; }
  std::filesystem::path log_path() const;
  std::size_t replayed_events() const { return replayed_; }

 private:
  void commit(const nlohmann::json& event);
  void replay();
  bool excluded(const std::string& labeler) const;

  ServiceConfig cfg_;
  ServiceState state_;
  mutable std::shared_mutex mu_;
  std::FILE* log_ = nullptr;
  std::size_t replayed_ = 0;
};

// Serves and answers tasks for one labeler until none are left; returns the
// number of labels submitted. `choose` returns an index in presentation order.
std::size_t answer_all(LabelService& service, const std::string& labeler,
                       const std::function<int(const Assignment&)>& choose);

// Stable 64-bit FNV-1a, used to derive per-labeler seeds.
std::uint64_t fnv1a(const std::string& s);

}  // namespace rlhf::label_service
