#include "rlhf/label_service/label_source.hpp"

#include <fstream>
#include <thread>

#include <httplib.h>

namespace rlhf::label_service {
namespace {

PreferenceRecord to_preference(const Query& q, const LabelRecord& r) {
  auto rec = pref_data::to_record(q, r.choice, r.labeler);
  if (!r.created_at.empty()) rec.created_at = r.created_at;
  return rec;
}

std::vector<PreferenceRecord> claim(std::map<std::string, Query>& pending,
                                    const std::vector<LabelRecord>& records) {
  std::vector<PreferenceRecord> out;
  std::vector<std::string> done;
  for (const auto& r : records) {
    const auto it = pending.find(r.task_id);
    if (it == pending.end()) continue;
    out.push_back(to_preference(it->second, r));
    done.push_back(r.task_id);
  }
  for (const auto& id : done) pending.erase(id);
  return out;
}

}  // namespace

TaskQuery to_task_query(const Query& q, const seq_model::Vocab& vocab) {
  TaskQuery t;
  t.x = vocab.detokenize(q.x);
  for (std::size_t i = 0; i < 4; ++i) {
    t.responses.push_back(vocab.detokenize(q.responses[i]));
    t.sources.push_back(reward_model::to_string(q.sources[i]));
  }
  t.kind = q.is_validation ? TaskKind::kValidation : TaskKind::kTrain;
  return t;
}

ServiceLabelSource::ServiceLabelSource(LabelService& service, const seq_model::Vocab& vocab)
    : service_(service), vocab_(vocab) {
  // Tasks completed before this source existed belong to someone else.
  service_.records_since(cursor_);
}

void ServiceLabelSource::request(std::vector<Query> queries) {
  for (auto& q : queries) pending_.emplace(service_.enqueue(to_task_query(q, vocab_)), std::move(q));
}

std::vector<PreferenceRecord> ServiceLabelSource::poll() {
  return claim(pending_, service_.records_since(cursor_));
}

bool ServiceLabelSource::stop_requested() const { return service_.stop_status(); }

LogFollower::LogFollower(std::filesystem::path path, bool majority_vote)
    : path_(std::move(path)), majority_vote_(majority_vote) {}

std::vector<LabelRecord> LogFollower::poll() {
  std::ifstream in(path_, std::ios::binary);
  if (in) {
    in.seekg(static_cast<std::streamoff>(offset_));
    std::string line;
    while (std::getline(in, line) && !in.eof()) {
      state_.apply(nlohmann::json::parse(line));
      offset_ += line.size() + 1;
    }
  }
  std::vector<LabelRecord> out;
  const auto& order = state_.completion_order();
  for (; cursor_ < order.size(); ++cursor_) {
    auto r = state_.task_records(state_.tasks()[order[cursor_]], majority_vote_);
    out.insert(out.end(), r.begin(), r.end());
  }
  return out;
}

RemoteLabelSource::RemoteLabelSource(RemoteOptions opt, const seq_model::Vocab& vocab)
    : opt_(std::move(opt)),
      vocab_(vocab),
      client_(std::make_unique<httplib::Client>(opt_.url)),
      follower_(opt_.log_path, opt_.majority_vote) {
  client_->set_connection_timeout(2);
  client_->set_read_timeout(10);
  follower_.poll();
}

RemoteLabelSource::~RemoteLabelSource() = default;

template <class F>
auto RemoteLabelSource::with_retry(const char* what, F f) const {
  auto wait = opt_.backoff;
  for (int attempt = 0;; ++attempt) {
    auto res = f();
    if (res && res->status == 200) return nlohmann::json::parse(res->body);
    if (res && res->status >= 400 && res->status < 500)
      throw std::runtime_error(std::string(what) + " rejected: " + res->body);
    if (attempt >= opt_.max_retries)
      throw std::runtime_error(std::string("label service unreachable at ") + opt_.url + " (" + what + ")");
    std::this_thread::sleep_for(wait);
    wait *= 2;
  }
}

void RemoteLabelSource::request(std::vector<Query> queries) {
  for (auto& q : queries) {
    const std::string payload = to_json(to_task_query(q, vocab_)).dump();
    const auto j = with_retry("POST /tasks", [&] { return client_->Post("/tasks", payload, "application/json"); });
    pending_.emplace(j.at("task_id").get<std::string>(), std::move(q));
  }
}

std::vector<PreferenceRecord> RemoteLabelSource::poll() { return claim(pending_, follower_.poll()); }

bool RemoteLabelSource::stop_requested() const {
  return with_retry("GET /stop", [&] { return client_->Get("/stop"); }).at("stopped").get<bool>();
}

MockCrowd::MockCrowd(LabelService& service, const seq_model::Vocab& vocab,
                     pref_data::OracleFn oracle, std::size_t n_labelers,
                     std::chrono::milliseconds interval)
    : service_(service), vocab_(vocab), oracle_(std::move(oracle)) {
  if (n_labelers == 0) throw std::invalid_argument("MockCrowd needs at least one labeler");
  thread_ = std::thread([this, n_labelers, interval] {
    while (!done_.load()) {
      for (std::size_t i = 0; i < n_labelers; ++i)
        answered_ += answer_all(service_, "crowd-" + std::to_string(i),
                                [this](const Assignment& a) { return choose(a); });
      std::this_thread::sleep_for(interval);
    }
  });
}

MockCrowd::~MockCrowd() { stop(); }

void MockCrowd::stop() {
  done_ = true;
  if (thread_.joinable()) thread_.join();
}

int MockCrowd::choose(const Assignment& a) const {
  const auto x = vocab_.tokenize(a.x);
  int best = 0;
  double best_score = 0.0;
  for (std::size_t i = 0; i < a.responses.size(); ++i) {
    const double s = oracle_(x, vocab_.tokenize(a.responses[i]));
    if (i == 0 || s > best_score) {
      best = static_cast<int>(i);
      best_score = s;
    }
  }
  return best;
}

}  // namespace rlhf::label_service
