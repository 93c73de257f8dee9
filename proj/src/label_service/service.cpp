#include "rlhf/label_service/service.hpp"

#include <fstream>
#include <mutex>
#include <unistd.h>

#include "rlhf/common/random.hpp"
#include "rlhf/reward_model/preference.hpp"

namespace rlhf::label_service {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void ServiceConfig::validate() const {
  if (!(repeat_fraction >= 0.0 && repeat_fraction <= 1.0))
    throw std::invalid_argument("repeat_fraction must lie in [0, 1]");
  if (repeat_count < 1) throw std::invalid_argument("repeat_count must be at least 1");
  if (eval_labels < 1) throw std::invalid_argument("eval_labels must be at least 1");
  if (!(gold_min_accuracy >= 0.0 && gold_min_accuracy <= 1.0))
    throw std::invalid_argument("gold_min_accuracy must lie in [0, 1]");
}

nlohmann::json to_json(const ServiceConfig& c) {
  return {{"repeat_fraction", c.repeat_fraction}, {"repeat_count", c.repeat_count},
          {"eval_labels", c.eval_labels},         {"seed", c.seed},
          {"data_dir", c.data_dir.string()},      {"majority_vote", c.majority_vote},
          {"fsync", c.fsync},                     {"gold_min_accuracy", c.gold_min_accuracy},
          {"gold_min_answers", c.gold_min_answers}};
}

ServiceConfig service_config_from_json(const nlohmann::json& j, ServiceConfig c) {
  c.repeat_fraction = j.value("repeat_fraction", c.repeat_fraction);
  c.repeat_count = j.value("repeat_count", c.repeat_count);
  c.eval_labels = j.value("eval_labels", c.eval_labels);
  c.seed = j.value("seed", c.seed);
  if (j.contains("data_dir")) c.data_dir = j["data_dir"].get<std::string>();
  c.majority_vote = j.value("majority_vote", c.majority_vote);
  c.fsync = j.value("fsync", c.fsync);
  c.gold_min_accuracy = j.value("gold_min_accuracy", c.gold_min_accuracy);
  c.gold_min_answers = j.value("gold_min_answers", c.gold_min_answers);
  c.validate();
  return c;
}

nlohmann::json to_json(const Progress& p) {
  return {{"open", p.open},
          {"complete", p.complete},
          {"labels_total", p.labels_total},
          {"win_rate", p.win_rate ? nlohmann::json(*p.win_rate) : nlohmann::json(nullptr)}};
}

LabelService::LabelService(ServiceConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  if (cfg_.data_dir.empty()) return;
  std::filesystem::create_directories(cfg_.data_dir);
  replay();
  log_ = std::fopen(log_path().c_str(), "ab");
  if (!log_) throw std::runtime_error("cannot open label log " + log_path().string());
}

LabelService::~LabelService() {
  if (log_) std::fclose(log_);
}

std::filesystem::path LabelService::log_path() const { return cfg_.data_dir / kLogFile; }

void LabelService::replay() {
  const auto path = log_path();
  if (!std::filesystem::exists(path)) return;
  std::ifstream in(path, std::ios::binary);
  std::string line;
  std::uintmax_t good = 0;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (in.eof()) break;  // no trailing newline: a torn final write
    try {
      state_.apply(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("label log " + path.string() + " line " + std::to_string(lineno) +
                               ": " + e.what());
    }
    good += line.size() + 1;
    ++replayed_;
  }
  in.close();
  if (good != std::filesystem::file_size(path)) std::filesystem::resize_file(path, good);
}

void LabelService::commit(const nlohmann::json& event) {
  state_.apply(event);
  if (!log_) return;
  const std::string line = event.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), log_) != line.size() || std::fflush(log_) != 0)
    throw std::runtime_error("label log write failed");
  if (cfg_.fsync) ::fsync(fileno(log_));
}

std::string LabelService::enqueue(const TaskQuery& q) {
  q.validate();
  std::unique_lock lock(mu_);
  const std::size_t index = state_.tasks().size();
  std::size_t required = 1;
  if (q.gold) {
    required = cfg_.repeat_count;
  } else if (q.kind == TaskKind::kEval2 || q.kind == TaskKind::kEval4) {
    required = cfg_.eval_labels;
  } else if (Rng(derive_seed(cfg_.seed, 2 * index)).bernoulli(cfg_.repeat_fraction)) {
    required = cfg_.repeat_count;
  }
  const std::string id = "t" + std::to_string(index);
  commit({{"type", "task"}, {"task_id", id}, {"query", to_json(q)}, {"required", required}});
  return id;
}

bool LabelService::excluded(const std::string& labeler) const {
  const auto it = state_.gold().find(labeler);
  if (it == state_.gold().end() || it->second.total < cfg_.gold_min_answers) return false;
  return static_cast<double>(it->second.correct) <
         cfg_.gold_min_accuracy * static_cast<double>(it->second.total);
}

std::optional<Assignment> LabelService::next_task(const std::string& labeler) {
  if (labeler.empty()) throw ServiceError(ServiceError::Code::kBadRequest, "labeler id must be nonempty");
  std::unique_lock lock(mu_);
  const bool gold_only = excluded(labeler);
  const Task* pick = nullptr;
  // Prefer tasks still short of assignees so labelers spread out; fall back
  // to any open task this labeler has not seen.
  for (int pass = 0; pass < 2 && !pick; ++pass)
    for (const auto& t : state_.tasks()) {
      if (t.status != TaskStatus::kOpen || t.assignments.contains(labeler)) continue;
      if (gold_only && !t.query.gold) continue;
      if (pass == 0 && t.assignments.size() >= t.required_labels) continue;
      pick = &t;
      break;
    }
  if (!pick) return std::nullopt;
  const std::size_t n = option_count(pick->query.kind);
  const auto perm = random_permutation(n, derive_seed(derive_seed(cfg_.seed, 2 * pick->index + 1), fnv1a(labeler)));
  commit({{"type", "assign"}, {"task_id", pick->task_id}, {"labeler", labeler}, {"perm", perm}});
  Assignment a;
  a.task_id = pick->task_id;
  a.x = pick->query.x;
  a.kind = pick->query.kind;
  for (int c : perm) a.responses.push_back(pick->query.responses[static_cast<std::size_t>(c)]);
  return a;
}

int LabelService::submit(const std::string& task_id, const std::string& labeler, int presented_choice) {
  std::unique_lock lock(mu_);
  const Task* t = state_.find(task_id);
  if (!t) throw ServiceError(ServiceError::Code::kNotFound, "unknown task '" + task_id + "'");
  commit({{"type", "label"},
          {"task_id", task_id},
          {"labeler", labeler},
          {"choice", presented_choice},
          {"at", reward_model::utc_timestamp()}});
  return state_.find(task_id)->labels.back().canonical;
}

AgreementStats LabelService::agreement() const {
  std::shared_lock lock(mu_);
  return state_.agreement_stats();
}

Progress LabelService::progress() const {
  std::shared_lock lock(mu_);
  Progress p;
  p.open = state_.open_count();
  p.complete = state_.completion_order().size();
  p.labels_total = state_.labels_total();
  p.win_rate = state_.win_rate();
  return p;
}

void LabelService::andon_stop(bool stopped) {
  std::unique_lock lock(mu_);
  commit({{"type", "stop"}, {"stopped", stopped}});
}

bool LabelService::stop_status() const {
  std::shared_lock lock(mu_);
  return state_.stopped();
}

std::vector<LabelRecord> LabelService::records() const {
  std::shared_lock lock(mu_);
  return state_.completed_records(cfg_.majority_vote);
}

std::vector<LabelRecord> LabelService::records_since(std::size_t& cursor) const {
  std::shared_lock lock(mu_);
  std::vector<LabelRecord> out;
  const auto& order = state_.completion_order();
  for (; cursor < order.size(); ++cursor) {
    auto r = state_.task_records(state_.tasks()[order[cursor]], cfg_.majority_vote);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

std::optional<Permutation> LabelService::permutation(const std::string& task_id,
                                                     const std::string& labeler) const {
  std::shared_lock lock(mu_);
  const Task* t = state_.find(task_id);
  if (!t) return std::nullopt;
  const auto it = t->assignments.find(labeler);
  if (it == t->assignments.end()) return std::nullopt;
  return it->second;
}

std::map<std::string, GoldTally> LabelService::gold_accuracy() const {
  std::shared_lock lock(mu_);
  return state_.gold();
}

std::map<std::string, std::size_t> LabelService::eval_wins(TaskKind kind) const {
  std::shared_lock lock(mu_);
  return state_.eval_wins(kind);
}

std::size_t answer_all(LabelService& service, const std::string& labeler,
                       const std::function<int(const Assignment&)>& choose) {
  std::size_t n = 0;
  while (const auto a = service.next_task(labeler)) {
    service.submit(a->task_id, labeler, choose(*a));
    ++n;
  }
  return n;
}

}  // namespace rlhf::label_service
