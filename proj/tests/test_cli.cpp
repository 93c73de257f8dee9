#include <doctest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <signal.h>
#include <sys/socket.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "rlhf/label_service/label_source.hpp"
#include "rlhf/label_service/server.hpp"
#include "rlhf/oracle_bench/experiment.hpp"

extern char** environ;

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Scratch {
  fs::path dir = fs::temp_directory_path() / ("rlhf_cli_" + std::to_string(::getpid()));
  Scratch() {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
};

const fs::path& scratch() {
  static const Scratch s;
  return s.dir;
}

int run(const std::string& args) {
  const std::string cmd = std::string(RLHF_CLI) + " " + args + " >>" + (scratch() / "cli.log").string() + " 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

pid_t spawn(const std::vector<std::string>& args) {
  std::vector<char*> argv;
  std::string bin = RLHF_CLI;
  argv.push_back(bin.data());
  std::vector<std::string> copy = args;
  for (auto& a : copy) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  REQUIRE(posix_spawn(&pid, RLHF_CLI, nullptr, nullptr, argv.data(), environ) == 0);
  return pid;
}

int wait_exit(pid_t pid) {
  int st = 0;
  waitpid(pid, &st, 0);
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::size_t count_lines(const fs::path& p) {
  std::ifstream in(p);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += !line.empty();
  return n;
}

json read_json(const fs::path& p) { return json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

fs::path corpus() {
  const auto p = scratch() / "corpus.txt";
  if (!fs::exists(p)) write(p, "the cat sat on the mat.\nthe dog ate a log.\na bird in the hand.\n");
  return p;
}

// A port nothing listens on once this returns.
int free_port() {
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = 0;
  REQUIRE(::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) == 0);
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  ::close(fd);
  return ntohs(addr.sin_port);
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("missing corpus fails before any output") {
    const auto out = scratch() / "no_corpus";
    CHECK(run("train-lm --corpus " + (scratch() / "absent.txt").string() + " --out " + out.string()) == 2);
    CHECK_FALSE(fs::exists(out));
  }

  TEST_CASE("unknown keys are config errors") {
    const auto out = scratch() / "unknown";
    CHECK(run("train-lm --corpus " + corpus().string() + " --set nope=1 --out " + out.string()) == 2);
    write(scratch() / "bad.json", R"({"train": {"epochz": 3}})");
    CHECK(run("train-lm --corpus " + corpus().string() + " --config " + (scratch() / "bad.json").string() +
              " --out " + out.string()) == 2);
    CHECK(run("rlhf --set ppo.learning_rate=1 --out " + out.string()) == 2);
    CHECK(run("rlhf --task poetry --out " + out.string()) == 2);
    CHECK(run("rlhf --task style --out " + out.string()) == 2);
    CHECK_FALSE(fs::exists(out));
  }

  TEST_CASE("print-defaults emits the config document") {
    const auto p = scratch() / "defaults.json";
    CHECK(std::system((std::string(RLHF_CLI) + " rlhf --print-defaults > " + p.string()).c_str()) == 0);
    const auto j = read_json(p);
    CHECK(j.at("task") == "mock");
    CHECK(j.at("mode") == "online");
  }
}

TEST_SUITE("train-lm") {
  TEST_CASE("same seed gives identical checkpoints and echoes the config") {
    const std::string common = "train-lm --corpus " + corpus().string() +
                               " --seed 5 --set train.epochs=2 --set neural.d_model=16 --set neural.context_len=32";
    const auto a = scratch() / "lm_a", b = scratch() / "lm_b";
    REQUIRE(run(common + " --out " + a.string()) == 0);
    REQUIRE(run(common + " --out " + b.string()) == 0);
    CHECK(slurp(a / "model.ckpt") == slurp(b / "model.ckpt"));
    const auto rc = read_json(a / "resolved_config.json");
    CHECK(rc.at("seed") == 5);
    CHECK(rc.at("command") == "train-lm");
    CHECK(rc.at("config").at("train").at("epochs") == 2);
    CHECK(count_lines(a / "train_log.jsonl") > 0);
    CHECK(fs::exists(a / "vocab.txt"));

    const auto c = scratch() / "lm_c";
    REQUIRE(run("train-lm --corpus " + corpus().string() + " --seed 6 --set train.epochs=2 --set neural.d_model=16 --set neural.context_len=32 --out " + c.string()) == 0);
    CHECK(slurp(a / "model.ckpt") != slurp(c / "model.ckpt"));
  }

  TEST_CASE("finetune refuses tabular models") {
    const auto t = scratch() / "lm_tab";
    REQUIRE(run("train-lm --model tabular --corpus " + corpus().string() + " --out " + t.string()) == 0);
    write(scratch() / "pairs.jsonl", R"({"x": "the cat", "y": " sat."})" "\n");
    CHECK(run("finetune --model " + (t / "model.ckpt").string() + " --vocab " + (t / "vocab.txt").string() +
              " --pairs " + (scratch() / "pairs.jsonl").string() + " --out " + (scratch() / "ft").string()) == 2);
  }
}

TEST_SUITE("collect") {
  TEST_CASE("mock labels, one record per query") {
    const auto out = scratch() / "collect";
    REQUIRE(run("collect --n-queries 100 --out " + out.string()) == 0);
    CHECK(count_lines(out / "records.jsonl") == 100);
  }

  TEST_CASE("validation queries are two reference and two policy samples") {
    const auto pol = scratch() / "collect_pol";
    REQUIRE(run("rlhf --mode offline --set schedule.n_r0=50 --set schedule.n_r=50 --set schedule.n_pi=256 --out " +
                pol.string()) == 0);
    const auto out = scratch() / "collect_val";
    REQUIRE(run("collect --n-queries 60 --validation-fraction 0.5 --policy " + (pol / "policy.ckpt").string() +
                " --out " + out.string()) == 0);
    std::ifstream in(out / "records.jsonl");
    std::size_t val = 0;
    for (std::string line; std::getline(in, line);) {
      const auto r = json::parse(line);
      if (!r.at("validation").get<bool>()) {
        CHECK(r.at("sources") == json({"pi", "pi", "pi", "pi"}));
        continue;
      }
      ++val;
      CHECK(r.at("sources") == json({"rho", "rho", "pi", "pi"}));
    }
    CHECK(val > 10);
    CHECK(val < 50);
    CHECK(read_json(out / "summary.json").contains("validation_win_rate"));
  }
}

TEST_SUITE("rlhf") {
  TEST_CASE("offline trains the reward model once, online twenty times") {
    const auto off = scratch() / "rlhf_off", on = scratch() / "rlhf_on";
    const std::string sched = " --set schedule.n_r0=40 --set schedule.n_r=200 --set schedule.n_pi=640";
    REQUIRE(run("rlhf --mode offline --set schedule.n_r0=40 --set schedule.n_r=40 --set schedule.n_pi=640 --out " +
                off.string()) == 0);
    REQUIRE(run("rlhf --mode online" + sched + " --out " + on.string()) == 0);
    CHECK(read_json(off / "summary.json").at("retrains") == 1);
    CHECK(read_json(on / "summary.json").at("retrains") == 20);
    CHECK(read_json(on / "summary.json").at("labels") == 200);
    CHECK(count_lines(on / "ppo_log.jsonl") == 10);
    CHECK(count_lines(on / "records.jsonl") == 200);
    for (const char* f : {"policy.ckpt", "reward_model.ckpt", "scheduler_state.json", "resolved_config.json"})
      CHECK(fs::exists(on / f));
  }

  TEST_CASE("andon stop exits 4 and resume finishes without relabeling") {
    namespace ls = rlhf::label_service;
    const auto task = rlhf::oracle_bench::make_mock_task({});
    ls::ServiceConfig sc;
    sc.repeat_fraction = 0.0;
    sc.fsync = false;
    sc.data_dir = scratch() / "andon_svc";
    ls::LabelService svc(sc);
    ls::LabelServer server(svc);
    const int port = server.start({"127.0.0.1", 0});
    ls::MockCrowd crowd(svc, task.vocab, rlhf::oracle_bench::as_reward(task.oracle), 3);

    const auto out = scratch() / "rlhf_andon";
    const std::vector<std::string> args = {
        "rlhf", "--labels", "service", "--out", out.string(),
        "--set", "service.url=\"http://127.0.0.1:" + std::to_string(port) + "\"",
        "--set", "service.log=\"" + sc.data_dir.string() + "\"",
        "--set", "schedule.n_r0=100", "--set", "schedule.n_r=1000", "--set", "schedule.n_pi=30000",
        "--set", "poll_interval_ms=5", "--set", "outstanding=100"};
    const pid_t pid = spawn(args);
    const auto t0 = std::chrono::steady_clock::now();
    while (svc.progress().complete < 300 && std::chrono::steady_clock::now() - t0 < std::chrono::seconds(60))
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    svc.andon_stop();
    CHECK(wait_exit(pid) == 4);
    const auto cut = read_json(out / "summary.json");
    CHECK(cut.at("stopped") == true);
    const std::size_t labels_before = cut.at("labels");
    CHECK(labels_before < 1000);
    CHECK(count_lines(out / "records.jsonl") == labels_before);

    svc.andon_stop(false);
    auto again = args;
    again.push_back("--resume");
    CHECK(wait_exit(spawn(again)) == 0);
    crowd.stop();
    server.stop();
    const auto done = read_json(out / "summary.json");
    CHECK(done.at("stopped") == false);
    CHECK(done.at("episodes") == 30000);
    CHECK(done.at("retrains") == 20);
    CHECK(count_lines(out / "records.jsonl") == 1000);
  }
}

TEST_SUITE("bench") {
  TEST_CASE("frontier echoes betas and is deterministic") {
    const auto a = scratch() / "front_a", b = scratch() / "front_b";
    const std::string common = "frontier --betas 0.3 1 3 --reweighted --set n_samples=2000";
    REQUIRE(run(common + " --out " + a.string()) == 0);
    REQUIRE(run(common + " --out " + b.string()) == 0);
    CHECK(slurp(a / "frontier.jsonl") == slurp(b / "frontier.jsonl"));
    std::ifstream in(a / "frontier.jsonl");
    std::vector<double> exact_betas;
    std::size_t rows = 0;
    for (std::string line; std::getline(in, line); ++rows) {
      const auto r = json::parse(line);
      if (r.at("estimator") == "exact") exact_betas.push_back(r.at("beta"));
    }
    CHECK(rows == 6);
    CHECK(exact_betas == std::vector<double>{0.3, 1.0, 3.0});
    CHECK(run("frontier --betas 0 --out " + (scratch() / "front_bad").string()) == 2);
  }
}

TEST_SUITE("text") {
  TEST_CASE("analyze and rouge") {
    const auto pairs = scratch() / "pairs_text.jsonl";
    write(pairs,
          R"({"id": "a", "article": "The cat sat. It slept. Then it ate. The end.", "summary": "The cat sat. It ate.", "reference": "A cat sat."})"
          "\n");
    const auto out = scratch() / "analyze";
    REQUIRE(run("analyze --pairs " + pairs.string() + " --baseline lead3 --plot --out " + out.string()) == 0);
    CHECK(count_lines(out / "report.jsonl") == 2);
    CHECK(count_lines(out / "lead3_report.jsonl") == 2);
    CHECK(fs::exists(out / "plot" / "novel.tsv"));

    write(scratch() / "empty.jsonl", "");
    CHECK(run("analyze --pairs " + (scratch() / "empty.jsonl").string() + " --out " + (scratch() / "an_empty").string()) == 2);

    REQUIRE(run("rouge --pairs " + pairs.string() + " --out " + (scratch() / "rouge").string()) == 0);
    CHECK(read_json(scratch() / "rouge" / "summary.json").at("pairs") == 1);
    CHECK(run("rouge --pairs " + pairs.string() + " --reference gold --out " + (scratch() / "rouge_bad").string()) == 2);
    CHECK_FALSE(fs::exists(scratch() / "rouge_bad"));
  }
}

TEST_SUITE("serve") {
  TEST_CASE("serve creates its data directory, reports its version and replays on restart") {
    const int port = free_port();
    const auto data = scratch() / "serve_data" / "nested";
    const std::vector<std::string> args = {"serve", "--data-dir", data.string(), "--bind",
                                           "127.0.0.1:" + std::to_string(port), "--out",
                                           (scratch() / "serve_out").string()};
    pid_t pid = spawn(args);
    httplib::Client cli("127.0.0.1", port);
    httplib::Result r;
    for (int i = 0; i < 100 && !(r = cli.Get("/health")); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    REQUIRE(r);
    CHECK(json::parse(r->body).at("version") == rlhf::label_service::kVersion);
    CHECK(fs::is_directory(data));

    write(scratch() / "items.jsonl", R"({"x": "q", "responses": ["a", "b"], "sources": ["A", "B"]})" "\n"
                                     R"({"x": "r", "responses": ["c", "d"], "sources": ["A", "B"]})" "\n");
    REQUIRE(run("compare --url http://127.0.0.1:" + std::to_string(port) + " --items " +
                (scratch() / "items.jsonl").string() + " --out " + (scratch() / "compare").string()) == 0);
    CHECK(count_lines(scratch() / "compare" / "tasks.jsonl") == 2);
    ::kill(pid, SIGTERM);
    CHECK(wait_exit(pid) == 0);

    pid = spawn(args);
    for (int i = 0; i < 100 && !(r = cli.Get("/stats/progress")); ++i)
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
    REQUIRE(r);
    CHECK(json::parse(r->body).at("open") == 2);
    r = cli.Get("/tasks/next?labeler=u");
    REQUIRE(r);
    CHECK(r->status == 200);
    ::kill(pid, SIGTERM);
    CHECK(wait_exit(pid) == 0);
  }

  TEST_CASE("compare fails when the service is unreachable") {
    const int port = free_port();
    write(scratch() / "items.jsonl", R"({"x": "q", "responses": ["a", "b"], "sources": ["A", "B"]})" "\n");
    CHECK(run("compare --url http://127.0.0.1:" + std::to_string(port) + " --items " +
              (scratch() / "items.jsonl").string() + " --set max_retries=1 --out " +
              (scratch() / "compare_down").string()) == 3);
  }
}
