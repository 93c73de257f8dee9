#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <atomic>
#include <string>
#include <thread>
#include <vector>

#include "rlhf/label_service/service.hpp"
#include "rlhf/pref_data/collection.hpp"

namespace httplib {
class Client;
}

namespace rlhf::label_service {

using pref_data::PreferenceRecord;
using pref_data::Query;

TaskQuery to_task_query(const Query& q, const seq_model::Vocab& vocab);

// Feeds the collection loop from a LabelService in the same process. Only
// labels for tasks this source enqueued are returned.
class ServiceLabelSource final : public pref_data::LabelSource {
 public:
  ServiceLabelSource(LabelService& service, const seq_model::Vocab& vocab);
  void request(std::vector<Query> queries) override;
  std::vector<PreferenceRecord> poll() override;
  bool stop_requested() const override;

  std::size_t pending() const { return pending_.size(); }

 private:
  LabelService& service_;
  const seq_model::Vocab& vocab_;
  std::map<std::string, Query> pending_;
  std::size_t cursor_ = 0;
};

// Incrementally replays a label log written by another process.
class LogFollower {
 public:
  explicit LogFollower(std::filesystem::path path, bool majority_vote = false);
  // Records of tasks completed since the previous call.
  std::vector<LabelRecord> poll();
  const ServiceState& state() const { return state_; }

 private:
  std::filesystem::path path_;
  bool majority_vote_;
  std::uintmax_t offset_ = 0;
  std::size_t cursor_ = 0;
  ServiceState state_;
};

struct RemoteOptions {
  std::string url = "http://127.0.0.1:8080";
  std::filesystem::path log_path;  // the service's labels.jsonl
  int max_retries = 5;
  std::chrono::milliseconds backoff{200};  // doubles per retry
  bool majority_vote = false;
};

// Talks to a separate service process: tasks go out over HTTP, labels come
// back through the shared log file, the stop flag is polled over HTTP.
class RemoteLabelSource final : public pref_data::LabelSource {
 public:
  RemoteLabelSource(RemoteOptions opt, const seq_model::Vocab& vocab);
  ~RemoteLabelSource() override;
  void request(std::vector<Query> queries) override;
  std::vector<PreferenceRecord> poll() override;
  bool stop_requested() const override;

  std::size_t pending() const { return pending_.size(); }

 private:
  template <class F>
  auto with_retry(const char* what, F f) const;

  RemoteOptions opt_;
  const seq_model::Vocab& vocab_;
  std::unique_ptr<httplib::Client> client_;
  LogFollower follower_;
  std::map<std::string, Query> pending_;
};

// Background labelers answering every task with an oracle over the tokenized
// text. Stands in for a human crowd in tests and demos.
class MockCrowd {
 public:
  MockCrowd(LabelService& service, const seq_model::Vocab& vocab, pref_data::OracleFn oracle,
            std::size_t n_labelers = 5,
            std::chrono::milliseconds interval = std::chrono::milliseconds(1));
  ~MockCrowd();
  MockCrowd(const MockCrowd&) = delete;
  MockCrowd& operator=(const MockCrowd&) = delete;

  void stop();
  std::size_t answered() const { return answered_.load(); }
  // Presented index with the highest oracle score, lowest index on ties.
  int choose(const Assignment& a) const;

 private:
  LabelService& service_;
  const seq_model::Vocab& vocab_;
  pref_data::OracleFn oracle_;
  std::atomic<bool> done_{false};
  std::atomic<std::size_t> answered_{0};
  std::thread thread_;
};

}  // namespace rlhf::label_service
