#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace rlhf::label_service {

enum class TaskKind { kTrain, kValidation, kEval2, kEval4 };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);
std::size_t option_count(TaskKind k);

// Text as shown to labelers. Sources are provenance tags that never leave the
// service in task payloads.
struct TaskQuery {
  std::string x;
  std::vector<std::string> responses;
  std::vector<std::string> sources;
  TaskKind kind = TaskKind::kTrain;
  std::optional<int> gold;  // known canonical answer for quality control

  void validate() const;
};

nlohmann::json to_json(const TaskQuery& q);
TaskQuery task_query_from_json(const nlohmann::json& j);

using Permutation = std::vector<int>;  // presented[i] = canonical[perm[i]]

bool is_permutation(const Permutation& p);
Permutation inverse(const Permutation& p);
Permutation random_permutation(std::size_t n, std::uint64_t seed);
// All n! permutations in lexicographic order.
std::vector<Permutation> all_permutations(std::size_t n);

struct Label {
  std::string labeler;
  int presented = 0;
  int canonical = 0;
  std::string at;
};

enum class TaskStatus { kOpen, kComplete };

struct Task {
  std::string task_id;
  std::size_t index = 0;  // creation order
  TaskQuery query;
  std::size_t required_labels = 1;
  std::map<std::string, Permutation> assignments;  // labeler -> presentation order
  std::vector<Label> labels;
  TaskStatus status = TaskStatus::kOpen;

  bool labeled_by(const std::string& labeler) const;
};

// What a labeler sees: no sources, no permutation.
struct Assignment {
  std::string task_id;
  std::string x;
  std::vector<std::string> responses;
  TaskKind kind = TaskKind::kTrain;
};

nlohmann::json to_json(const Assignment& a);

// One finished judgement in canonical order, ready for reward-model training.
struct LabelRecord {
  std::string task_id;
  std::string x;
  std::vector<std::string> responses;
  std::vector<std::string> sources;
  int choice = 0;
  std::string labeler;  // "majority" for collapsed records
  bool is_validation = false;
  std::string created_at;
};

nlohmann::json to_json(const LabelRecord& r);

struct AgreementStats {
  double probability = 0.0;
  std::size_t n_pairs = 0;
  double baseline = 0.25;
  double ci_low = 0.0;  // 95%, normal approximation
  double ci_high = 0.0;
};

nlohmann::json to_json(const AgreementStats& s);

// Fraction of unordered within-task label pairs that agree. Throws when no
// task has two labels.
AgreementStats agreement(const std::vector<std::vector<int>>& labels_by_task,
                         double baseline = 0.25);

// Most frequent choice, smallest index on ties.
int majority(const std::vector<int>& choices);

struct GoldTally {
  std::size_t correct = 0;
  std::size_t total = 0;
};

// Client-visible failures, mapped to HTTP status codes by the server.
class ServiceError : public std::runtime_error {
 public:
  enum class Code { kBadRequest = 400, kNotFound = 404, kConflict = 409 };
  ServiceError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Code code() const { return code_; }

 private:
  Code code_;
};

// Event-sourced service state. Every mutation is an event; replaying the
// same events reproduces the same state. Events:
//   {"type":"task", task_id, query, required}
//   {"type":"assign", task_id, labeler, perm}
//   {"type":"label", task_id, labeler, choice, b, at}
//   {"type":"stop", stopped}
class ServiceState {
 public:
  // Validates the event against the current state and applies it. Throws
  // ServiceError without changing anything if the event is invalid.
  void apply(const nlohmann::json& event);

  const std::vector<Task>& tasks() const { return tasks_; }
  const Task* find(const std::string& task_id) const;
  bool stopped() const { return stopped_; }
  std::size_t labels_total() const { return labels_total_; }
  std::size_t open_count() const { return open_; }
  const std::map<std::string, GoldTally>& gold() const { return gold_; }

  // Records of train and validation tasks, in completion order: one per
  // label, or one majority record per task.
  std::vector<LabelRecord> completed_records(bool majority_vote) const;
  // Completed task indices in completion order.
  const std::vector<std::size_t>& completion_order() const { return completed_; }
  std::vector<LabelRecord> task_records(const Task& t, bool majority_vote) const;

  AgreementStats agreement_stats() const;
  // Share of completed validation tasks whose majority choice came from pi.
  std::optional<double> win_rate() const;
  // Majority winner's source tag -> count, over completed tasks of one
  // evaluation kind.
  std::map<std::string, std::size_t> eval_wins(TaskKind kind) const;

 private:
  Task& at(const std::string& task_id);

  std::vector<Task> tasks_;
  std::map<std::string, std::size_t> by_id_;
  std::vector<std::size_t> completed_;
  std::map<std::string, GoldTally> gold_;
  std::size_t labels_total_ = 0;
  std::size_t open_ = 0;
  bool stopped_ = false;
};

}  // namespace rlhf::label_service
