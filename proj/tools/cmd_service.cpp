#include <csignal>
#include <pthread.h>
#include <thread>

#include <httplib.h>

#include "rlhf/label_service/server.hpp"
#include "rlhf/pref_data/query.hpp"
#include "setup.hpp"

namespace rlhf::cli {
namespace {

namespace ls = label_service;

ls::ServiceConfig service_config(const json& j, std::uint64_t seed) {
  return parse_section("service", [&] {
    ls::ServiceConfig c;
    c.repeat_fraction = j.value("repeat_fraction", c.repeat_fraction);
    c.repeat_count = j.value("repeat_count", c.repeat_count);
    c.eval_labels = j.value("eval_labels", c.eval_labels);
    c.majority_vote = j.value("majority_vote", c.majority_vote);
    c.fsync = j.value("fsync", c.fsync);
    c.gold_min_accuracy = j.value("gold_min_accuracy", c.gold_min_accuracy);
    c.gold_min_answers = j.value("gold_min_answers", c.gold_min_answers);
    c.seed = seed;
    c.validate();
    return c;
  });
}

ls::BindAddress bind_address(const json& c) {
  if (c.at("bind").is_null()) return parse_section("bind", [] { return ls::bind_from_env(); });
  return parse_section("bind", [&] { return ls::parse_bind(get<std::string>(c, "bind")); });
}

int serve(const RunContext& ctx) {
  const auto& c = ctx.config;
  auto cfg = service_config(c.at("service"), ctx.seed);
  cfg.data_dir = get<std::string>(c, "data_dir");
  const auto addr = bind_address(c);

  // Block the stop signals before any thread starts so sigwait sees them.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  prepare_out(ctx);
  fs::create_directories(cfg.data_dir);
  ls::LabelService service(cfg);
  ls::LabelServer server(service);
  const int port = server.start(addr);
  const auto p = service.progress();
  log_line("serving on " + addr.host + ":" + std::to_string(port) + " (data " + cfg.data_dir.string() + ", " +
           std::to_string(service.replayed_events()) + " events replayed, " + std::to_string(p.open) +
           " open tasks)");
  int sig = 0;
  sigwait(&set, &sig);
  log_line("shutting down");
  server.stop();
  return kOk;
}

std::string base_url(const json& c) {
  if (!c.at("url").is_null()) return get<std::string>(c, "url");
  const auto b = parse_section("bind", [] { return ls::bind_from_env(); });
  return "http://" + b.host + ":" + std::to_string(b.port);
}

// Retries connection failures with doubling backoff.
httplib::Result with_retry(int retries, const std::function<httplib::Result()>& f) {
  auto wait = std::chrono::milliseconds(200);
  for (int i = 0;; ++i) {
    auto r = f();
    if (r || i >= retries) return r;
    std::this_thread::sleep_for(wait);
    wait *= 2;
  }
}

json checked(const httplib::Result& r, const std::string& url) {
  if (!r) throw std::runtime_error("label service unreachable at " + url);
  if (r->status != 200) throw std::runtime_error("label service answered " + std::to_string(r->status) + ": " + r->body);
  return json::parse(r->body);
}

int compare(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto url = base_url(c);
  const auto kind = parse_section("kind", [&] { return ls::task_kind_from_string(get<std::string>(c, "kind")); });
  if (kind != ls::TaskKind::kEval2 && kind != ls::TaskKind::kEval4) throw ConfigError("kind must be eval2 or eval4");
  const auto retries = get<int>(c, "max_retries");
  httplib::Client client(url);
  client.set_connection_timeout(std::chrono::seconds(2));

  if (get<bool>(c, "report")) {
    prepare_out(ctx);
    const auto wins = checked(with_retry(retries, [&] { return client.Get("/stats/eval?kind=" + ls::to_string(kind)); }), url);
    write_json(ctx.out / "wins.json", wins);
    std::cout << wins.dump() << '\n';
    return kOk;
  }

  std::vector<ls::TaskQuery> tasks;
  if (const auto items = optional_path(c, "items")) {
    for (const auto& row : parse_section("items", [&] { return read_jsonl(*items); })) {
      auto q = parse_section("items", [&] {
        auto j = row;
        j["kind"] = ls::to_string(kind);
        auto t = ls::task_query_from_json(j);
        t.validate();
        return t;
      });
      tasks.push_back(std::move(q));
    }
  } else {
    const auto paths = get<std::vector<std::string>>(c, "models");
    if (paths.size() != ls::option_count(kind))
      throw ConfigError(ls::to_string(kind) + " compares " + std::to_string(ls::option_count(kind)) + " models, got " +
                        std::to_string(paths.size()));
    std::vector<std::string> names = c.at("names").is_null() ? std::vector<std::string>{}
                                                             : get<std::vector<std::string>>(c, "names");
    if (names.empty())
      for (const auto& p : paths) names.push_back(fs::path(p).stem().string());
    if (names.size() != paths.size()) throw ConfigError("names must match models");
    const auto vocab = load_vocab(existing_path(c, "vocab"));
    const auto contexts = load_contexts(existing_path(c, "contexts"), vocab);
    const double t = get<double>(c, "temperature");
    if (!(t > 0.0)) throw ConfigError("temperature must be positive");
    std::vector<std::unique_ptr<seq_model::PolicyModel>> models;
    for (const auto& p : paths) {
      if (!fs::exists(p)) throw ConfigError("models: no such path " + p);
      auto m = parse_section("model " + p, [&] { return seq_model::load_model(p); });
      if (m->vocab_size() != vocab.size()) throw ConfigError("model " + p + " does not match the vocabulary");
      models.push_back(scaled(*m, t));
    }
    const pref_data::SamplingSpec spec{get<std::size_t>(c, "response_len"), std::nullopt, seq_model::kDefaultMaxAttempts};
    if (spec.response_len == 0) throw ConfigError("response_len must be positive");
    const auto n = get<std::size_t>(c, "n_tasks");
    for (std::size_t i = 0; i < n; ++i) {
      const auto& x = contexts.draw(derive_seed(derive_seed(ctx.seed, 1), i));
      ls::TaskQuery q;
      q.x = vocab.detokenize(x);
      q.kind = kind;
      for (std::size_t m = 0; m < models.size(); ++m) {
        const auto y = pref_data::sample_response(*models[m], x, spec, derive_seed(derive_seed(ctx.seed, 2 + m), i));
        q.responses.push_back(vocab.detokenize(y));
        q.sources.push_back(names[m]);
      }
      tasks.push_back(std::move(q));
    }
  }
  if (tasks.empty()) throw ConfigError("nothing to enqueue");

  prepare_out(ctx);
  std::vector<json> ids;
  for (const auto& q : tasks) {
    const auto r = checked(with_retry(retries, [&] {
      return client.Post("/tasks", ls::to_json(q).dump(), "application/json");
    }), url);
    ids.push_back({{"task_id", r.at("task_id")}, {"sources", q.sources}});
  }
  write_jsonl(ctx.out / "tasks.jsonl", ids);
  log_line("enqueued " + std::to_string(ids.size()) + " " + ls::to_string(kind) + " tasks at " + url);
  return kOk;
}

}  // namespace

std::vector<CommandSpec> service_commands() {
  const json serve_defaults = {{"seed", 0},
                               {"data_dir", "label_data"},
                               {"bind", nullptr},
                               {"service",
                                {{"repeat_fraction", 0.05},
                                 {"repeat_count", 5},
                                 {"eval_labels", 1},
                                 {"majority_vote", false},
                                 {"fsync", true},
                                 {"gold_min_accuracy", 0.0},
                                 {"gold_min_answers", 10}}}};
  const json compare_defaults = {{"seed", 0},         {"url", nullptr},     {"kind", "eval2"},
                                 {"models", json::array()}, {"names", nullptr}, {"vocab", nullptr},
                                 {"contexts", nullptr}, {"n_tasks", 100},    {"response_len", 24},
                                 {"temperature", 1.0}, {"items", nullptr},   {"max_retries", 5},
                                 {"report", false}};
  return {
      {"serve", "Run the labeling service until SIGINT or SIGTERM", serve_defaults,
       [](CLI::App& app, json& flags) {
         flag_value<std::string>(app, "--data-dir", flags, "data_dir", "Label log directory (created if absent)");
         flag_value<std::string>(app, "--bind", flags, "bind", "host:port (default from RLHF_LABEL_BIND)");
       },
       serve},
      {"compare", "Enqueue two- or four-way evaluation tasks on a running service", compare_defaults,
       [](CLI::App& app, json& flags) {
         flag_value<std::string>(app, "--url", flags, "url", "Service URL (default from RLHF_LABEL_BIND)");
         flag_value<std::string>(app, "--kind", flags, "kind", "eval2 or eval4");
         flag_value<std::vector<std::string>>(app, "--models", flags, "models", "Model checkpoints, one per option");
         flag_value<std::vector<std::string>>(app, "--names", flags, "names", "Source names (default: file stems)");
         flag_value<std::string>(app, "--vocab", flags, "vocab", "Vocabulary file");
         flag_value<std::string>(app, "--contexts", flags, "contexts", "Contexts, one per line");
         flag_value<std::size_t>(app, "--n-tasks", flags, "n_tasks", "Tasks to enqueue");
         flag_value<std::string>(app, "--items", flags, "items", "Prebuilt tasks (JSONL of x, responses, sources)");
         flag_switch(app, "--report", flags, "report", "Fetch win counts instead of enqueueing");
       },
       compare},
  };
}

}  // namespace rlhf::cli
