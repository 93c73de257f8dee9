#include "rlhf/label_service/state.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlhf/common/random.hpp"

namespace rlhf::label_service {
namespace {

using Code = ServiceError::Code;

[[noreturn]] void bad(const std::string& what) { throw ServiceError(Code::kBadRequest, what); }

template <class T>
T field(const nlohmann::json& j, const char* name) {
  if (!j.is_object() || !j.contains(name)) bad(std::string("missing field '") + name + "'");
  try {
    return j.at(name).get<T>();
  } catch (const nlohmann::json::exception&) {
    bad(std::string("bad type for field '") + name + "'");
  }
}

const std::string& source_of(const Task& t, int canonical) {
  static const std::string none;
  const auto& s = t.query.sources;
  return static_cast<std::size_t>(canonical) < s.size() ? s[static_cast<std::size_t>(canonical)] : none;
}

std::vector<int> canonical_choices(const Task& t) {
  std::vector<int> c;
  for (const auto& l : t.labels) c.push_back(l.canonical);
  return c;
}

bool is_preference_task(const Task& t) {
  return (t.query.kind == TaskKind::kTrain || t.query.kind == TaskKind::kValidation) &&
         !t.query.gold;
}

}  // namespace

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::kTrain: return "train";
    case TaskKind::kValidation: return "validation";
    case TaskKind::kEval2: return "eval2";
    case TaskKind::kEval4: return "eval4";
  }
  return "train";
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "train") return TaskKind::kTrain;
  if (s == "validation") return TaskKind::kValidation;
  if (s == "eval2") return TaskKind::kEval2;
  if (s == "eval4") return TaskKind::kEval4;
  bad("unknown task kind '" + s + "'");
}

std::size_t option_count(TaskKind k) { return k == TaskKind::kEval2 ? 2 : 4; }

void TaskQuery::validate() const {
  const std::size_t n = option_count(kind);
  if (responses.size() != n)
    bad(to_string(kind) + " task needs " + std::to_string(n) + " responses");
  if (!sources.empty() && sources.size() != n) bad("sources must match responses");
  if (gold && (*gold < 0 || static_cast<std::size_t>(*gold) >= n)) bad("gold answer out of range");
}

nlohmann::json to_json(const TaskQuery& q) {
  nlohmann::json j{{"x", q.x}, {"responses", q.responses}, {"sources", q.sources},
                   {"kind", to_string(q.kind)}};
  if (q.gold) j["gold"] = *q.gold;
  return j;
}

TaskQuery task_query_from_json(const nlohmann::json& j) {
  TaskQuery q;
  q.x = field<std::string>(j, "x");
  q.responses = field<std::vector<std::string>>(j, "responses");
  if (j.contains("sources")) q.sources = field<std::vector<std::string>>(j, "sources");
  if (j.contains("kind")) q.kind = task_kind_from_string(field<std::string>(j, "kind"));
  if (j.contains("gold") && !j["gold"].is_null()) q.gold = field<int>(j, "gold");
  q.validate();
  return q;
}

bool is_permutation(const Permutation& p) {
  std::vector<bool> seen(p.size(), false);
  for (int v : p) {
    if (v < 0 || static_cast<std::size_t>(v) >= p.size() || seen[static_cast<std::size_t>(v)])
      return false;
    seen[static_cast<std::size_t>(v)] = true;
  }
  return true;
}

Permutation inverse(const Permutation& p) {
  Permutation inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[static_cast<std::size_t>(p[i])] = static_cast<int>(i);
  return inv;
}

Permutation random_permutation(std::size_t n, std::uint64_t seed) {
  Permutation p(n);
  std::iota(p.begin(), p.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

std::vector<Permutation> all_permutations(std::size_t n) {
  Permutation p(n);
  std::iota(p.begin(), p.end(), 0);
  std::vector<Permutation> out;
  do out.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  return out;
}

bool Task::labeled_by(const std::string& labeler) const {
  return std::any_of(labels.begin(), labels.end(), [&](const Label& l) { return l.labeler == labeler; });
}

nlohmann::json to_json(const Assignment& a) {
  return {{"task_id", a.task_id}, {"x", a.x}, {"responses", a.responses}, {"kind", to_string(a.kind)}};
}

nlohmann::json to_json(const LabelRecord& r) {
  return {{"task_id", r.task_id}, {"x", r.x},           {"y", r.responses},
          {"sources", r.sources}, {"b", r.choice},      {"labeler", r.labeler},
          {"validation", r.is_validation}, {"created_at", r.created_at}};
}

nlohmann::json to_json(const AgreementStats& s) {
  return {{"pairwise_same_choice_probability", s.probability},
          {"n_pairs", s.n_pairs},
          {"baseline", s.baseline},
          {"ci95", {s.ci_low, s.ci_high}},
          {"ci_method", "normal_approx"}};
}

AgreementStats agreement(const std::vector<std::vector<int>>& labels_by_task, double baseline) {
  std::size_t pairs = 0, same = 0;
  for (const auto& t : labels_by_task)
    for (std::size_t i = 0; i < t.size(); ++i)
      for (std::size_t j = i + 1; j < t.size(); ++j) {
        ++pairs;
        if (t[i] == t[j]) ++same;
      }
  if (pairs == 0) throw std::invalid_argument("agreement needs a task with at least two labels");
  AgreementStats s;
  s.n_pairs = pairs;
  s.baseline = baseline;
  s.probability = static_cast<double>(same) / static_cast<double>(pairs);
  const double half = 1.96 * std::sqrt(s.probability * (1.0 - s.probability) / static_cast<double>(pairs));
  s.ci_low = std::max(0.0, s.probability - half);
  s.ci_high = std::min(1.0, s.probability + half);
  return s;
}

int majority(const std::vector<int>& choices) {
  if (choices.empty()) throw std::invalid_argument("majority of no choices");
  std::map<int, std::size_t> n;
  for (int c : choices) ++n[c];
  int best = n.begin()->first;
  for (const auto& [c, k] : n)
    if (k > n[best]) best = c;
  return best;
}

Task& ServiceState::at(const std::string& task_id) {
  const auto it = by_id_.find(task_id);
  if (it == by_id_.end()) throw ServiceError(Code::kNotFound, "unknown task '" + task_id + "'");
  return tasks_[it->second];
}

const Task* ServiceState::find(const std::string& task_id) const {
  const auto it = by_id_.find(task_id);
  return it == by_id_.end() ? nullptr : &tasks_[it->second];
}

void ServiceState::apply(const nlohmann::json& e) {
  const auto type = field<std::string>(e, "type");
  if (type == "stop") {
    stopped_ = field<bool>(e, "stopped");
    return;
  }
  const auto id = field<std::string>(e, "task_id");
  if (type == "task") {
    if (by_id_.contains(id)) throw ServiceError(Code::kConflict, "duplicate task '" + id + "'");
    Task t;
    t.task_id = id;
    t.index = tasks_.size();
    t.query = task_query_from_json(field<nlohmann::json>(e, "query"));
    t.required_labels = field<std::size_t>(e, "required");
    if (t.required_labels == 0) bad("required labels must be positive");
    by_id_[id] = tasks_.size();
    tasks_.push_back(std::move(t));
    ++open_;
    return;
  }
  const auto labeler = field<std::string>(e, "labeler");
  if (labeler.empty()) bad("labeler id must be nonempty");
  Task& t = at(id);
  const std::size_t n = option_count(t.query.kind);
  if (type == "assign") {
    if (t.assignments.contains(labeler)) throw ServiceError(Code::kConflict, "already assigned");
    auto perm = field<Permutation>(e, "perm");
    if (perm.size() != n || !is_permutation(perm)) bad("bad permutation");
    t.assignments.emplace(labeler, std::move(perm));
    return;
  }
  if (type != "label") bad("unknown event type '" + type + "'");
  if (t.status == TaskStatus::kComplete) throw ServiceError(Code::kConflict, "task already complete");
  if (t.labeled_by(labeler)) throw ServiceError(Code::kConflict, "duplicate submission");
  const auto a = t.assignments.find(labeler);
  if (a == t.assignments.end()) throw ServiceError(Code::kConflict, "task was not served to this labeler");
  const int choice = field<int>(e, "choice");
  if (choice < 0 || static_cast<std::size_t>(choice) >= n) bad("choice out of range");
  const int b = a->second[static_cast<std::size_t>(choice)];
  if (e.contains("b") && e["b"] != b) bad("event canonical choice disagrees with its permutation");
  t.labels.push_back({labeler, choice, b, e.value("at", std::string())});
  ++labels_total_;
  if (t.query.gold) {
    auto& g = gold_[labeler];
    ++g.total;
    if (b == *t.query.gold) ++g.correct;
  }
  if (t.labels.size() >= t.required_labels) {
    t.status = TaskStatus::kComplete;
    completed_.push_back(t.index);
    --open_;
  }
}

std::vector<LabelRecord> ServiceState::task_records(const Task& t, bool majority_vote) const {
  std::vector<LabelRecord> out;
  if (!is_preference_task(t) || t.status != TaskStatus::kComplete) return out;
  auto rec = [&](int b, const std::string& who, const std::string& at) {
    LabelRecord r;
    r.task_id = t.task_id;
    r.x = t.query.x;
    r.responses = t.query.responses;
    r.sources = t.query.sources;
    r.choice = b;
    r.labeler = who;
    r.is_validation = t.query.kind == TaskKind::kValidation;
    r.created_at = at;
    return r;
  };
  if (majority_vote) {
    out.push_back(rec(majority(canonical_choices(t)), t.labels.size() == 1 ? t.labels[0].labeler : "majority",
                      t.labels.back().at));
  } else {
    for (const auto& l : t.labels) out.push_back(rec(l.canonical, l.labeler, l.at));
  }
  return out;
}

std::vector<LabelRecord> ServiceState::completed_records(bool majority_vote) const {
  std::vector<LabelRecord> out;
  for (std::size_t i : completed_) {
    auto r = task_records(tasks_[i], majority_vote);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

AgreementStats ServiceState::agreement_stats() const {
  std::vector<std::vector<int>> by_task;
  for (const auto& t : tasks_)
    if (t.labels.size() >= 2 && !t.query.gold) by_task.push_back(canonical_choices(t));
  return agreement(by_task, 1.0 / 4.0);
}

std::optional<double> ServiceState::win_rate() const {
  std::size_t n = 0, wins = 0;
  for (std::size_t i : completed_) {
    const auto& t = tasks_[i];
    if (t.query.kind != TaskKind::kValidation || t.query.gold) continue;
    ++n;
    if (source_of(t, majority(canonical_choices(t))) == "pi") ++wins;
  }
  if (n == 0) return std::nullopt;
  return static_cast<double>(wins) / static_cast<double>(n);
}

std::map<std::string, std::size_t> ServiceState::eval_wins(TaskKind kind) const {
  std::map<std::string, std::size_t> out;
  for (std::size_t i : completed_) {
    const auto& t = tasks_[i];
    if (t.query.kind == kind && !t.query.gold) ++out[source_of(t, majority(canonical_choices(t)))];
  }
  return out;
}

}  // namespace rlhf::label_service
