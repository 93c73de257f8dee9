#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "rlhf/common/random.hpp"
#include "rlhf/pref_data/collection.hpp"
#include "rlhf/seq_model/tabular_lm.hpp"
#include "test_support.hpp"

using namespace rlhf;
using namespace rlhf::pref_data;
using seq_model::TabularLM;

namespace {

// Continuous scores so ties have probability zero.
double hashed_score(std::span<const TokenId> y) {
  std::uint64_t h = 0x12345;
  for (TokenId t : y) h = mix_seed(h ^ static_cast<std::uint64_t>(t));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

OracleFn lexicon(std::vector<double> w) {
  return [w](std::span<const TokenId>, std::span<const TokenId> y) {
    double s = 0.0;
    for (TokenId t : y) s += w[static_cast<std::size_t>(t)];
    return s;
  };
}

Query fixed_query(std::array<TokenSeq, 4> ys) {
  Query q;
  q.responses = std::move(ys);
  return q;
}

}  // namespace

TEST_SUITE("label schedule") {
  TEST_CASE("endpoints and midpoint") {
    const LabelSchedule s{100, 500, 1000};
    CHECK(label_target(s, 0) == 100);
    CHECK(label_target(s, 1000) == 500);
    CHECK(label_target(s, 500) == 400);
    CHECK_THROWS_AS(label_target(s, 1001), std::out_of_range);
    CHECK_THROWS(label_target(LabelSchedule{0, 10, 5}, 0));
    CHECK_THROWS(label_target(LabelSchedule{20, 10, 5}, 0));
    CHECK_THROWS(label_target(LabelSchedule{1, 10, 0}, 0));
  }

  TEST_CASE("pause and top-up rules") {
    const LabelSchedule s{100, 500, 1000};
    const std::size_t l = label_target(s, 300);
    CHECK_FALSE(should_pause(s, 300, l));
    CHECK(should_pause(s, 300, l - 1));
    CHECK(topup_requests(s, 300, l + 1000) == 0);
    CHECK(topup_requests(s, 300, l) == 1000);
    CHECK(topup_requests(s, 0, 0) == 1100);
    CHECK(topup_requests(s, 0, 5000) == 0);
    const LabelSchedule off{200, 200, 77};
    for (std::size_t n = 0; n <= 77; ++n) CHECK_FALSE(should_pause(off, n, 200));
  }

  TEST_CASE("retrain points") {
    const auto pts = retrain_points(LabelSchedule{100, 2000, 50});
    REQUIRE(pts.size() == 20);
    for (std::size_t k = 0; k < 20; ++k) CHECK(pts[k] == 100 * (k + 1));
    CHECK(retrain_points(LabelSchedule{300, 300, 10}) == std::vector<std::size_t>{300});
    CHECK_THROWS(retrain_points(LabelSchedule{100, 110, 10}));
  }

  TEST_CASE("random schedules: monotone, concave, pause monotone, points increasing") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      LabelSchedule s;
      s.n_r0 = 1 + rng.below(500);
      s.n_r = s.n_r0 + 19 + rng.below(3000);
      s.n_pi = 1 + rng.below(3000);
      std::size_t prev = label_target(s, 0);
      CHECK(prev == s.n_r0);
      for (std::size_t n = 1; n <= s.n_pi; ++n) {
        const std::size_t cur = label_target(s, n);
        CHECK(cur >= prev);
        CHECK(cur == static_cast<std::size_t>(std::floor(label_curve(s, n) + 1e-9)));
        if (n + 1 <= s.n_pi) {
          const double d2 = label_curve(s, n + 1) - 2 * label_curve(s, n) + label_curve(s, n - 1);
          CHECK(d2 <= 1e-9);
          // Rounding down perturbs the second difference by less than 2.
          const auto lp = static_cast<double>(label_target(s, n + 1));
          const auto lm = static_cast<double>(label_target(s, n - 1));
          CHECK(lp - 2.0 * static_cast<double>(cur) + lm <= 1.0);
        }
        prev = cur;
      }
      CHECK(prev == s.n_r);
      const std::size_t labels = s.n_r0 + rng.below(s.n_r - s.n_r0 + 1);
      bool seen_false = false;
      for (std::size_t n = s.n_pi + 1; n-- > 0;) {
        const bool p = should_pause(s, n, labels);
        if (seen_false) CHECK_FALSE(p);
        if (!p) seen_false = true;
      }
      const auto pts = retrain_points(s);
      CHECK(pts.size() == 20);
      CHECK(pts.front() == s.n_r0);
      CHECK(pts.back() == s.n_r);
      for (std::size_t k = 1; k < pts.size(); ++k) CHECK(pts[k] > pts[k - 1]);
    }
  }
}

TEST_SUITE("queries") {
  TEST_CASE("point-mass policy gives four identical responses") {
    auto pi = TabularLM::from_table(3, 0, {{{}, {0.0, 1.0, 0.0}}});
    const auto q = make_policy_query(pi, {0}, {.response_len = 3}, 5);
    for (const auto& y : q.responses) CHECK(y == TokenSeq{1, 1, 1});
    for (auto s : q.sources) CHECK(s == Source::kPi);
    CHECK_FALSE(q.is_validation);
  }

  TEST_CASE("slots use independent streams") {
    auto pi = TabularLM::random(6, 1, 2);
    std::size_t distinct_queries = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const auto q = make_policy_query(pi, {0}, {.response_len = 6}, seed);
      if (q.responses[0] != q.responses[1] || q.responses[1] != q.responses[2]) ++distinct_queries;
      CHECK(q.responses[0] == seq_model::sample(pi, TokenSeq{0}, 6, derive_seed(seed, 0)));
    }
    CHECK(distinct_queries >= 45);
  }

  TEST_CASE("constrained responses end inside the window") {
    auto pi = TabularLM::random(3, 1, 4);
    SamplingSpec spec{.response_len = 8, .constraint = SampleConstraint{2, 3, 6}};
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto q = make_policy_query(pi, {1}, spec, seed);
      for (std::size_t i = 0; i < 4; ++i) {
        if (!q.satisfied[i]) continue;
        CHECK(q.responses[i].size() >= 4);
        CHECK(q.responses[i].size() <= 7);
        CHECK(q.responses[i].back() == 2);
      }
    }
  }

  TEST_CASE("validation query provenance and symmetric win rate") {
    auto rho = TabularLM::random(4, 1, 3);
    const auto q = make_validation_query(rho, rho, {0}, {.response_len = 4}, 1);
    CHECK(q.is_validation);
    CHECK(q.sources == std::array<Source, 4>{Source::kRho, Source::kRho, Source::kPi, Source::kPi});

    MockLabeler judge{[](auto, std::span<const TokenId> y) { return hashed_score(y); }};
    std::vector<PreferenceRecord> recs;
    const std::size_t n = 4000;
    for (std::size_t i = 0; i < n; ++i) {
      const auto v = make_validation_query(rho, rho, {static_cast<TokenId>(i % 4)},
                                           {.response_len = 6}, 1000 + i);
      recs.push_back(to_record(v, mock_label(judge, v), judge.id));
    }
    const double wr = win_rate(recs);
    CHECK(testing::within_binomial(static_cast<std::size_t>(std::lround(wr * n)), n, 0.5));
  }
}

TEST_SUITE("mock labeler") {
  TEST_CASE("argmax and ties") {
    MockLabeler m{[](auto, std::span<const TokenId> y) {
      static const double s[] = {0.1, 0.9, 0.2, 0.3};
      return s[y[0]];
    }};
    CHECK(mock_label(m, fixed_query({TokenSeq{0}, {1}, {2}, {3}})) == 1);
    MockLabeler flat{[](auto, auto) { return 0.5; }};
    CHECK(mock_label(flat, fixed_query({TokenSeq{0}, {1}, {2}, {3}})) == 0);
    CHECK_THROWS(mock_label(MockLabeler{}, fixed_query({})));
    CHECK_THROWS(mock_label(MockLabeler{flat.oracle, 1.0}, fixed_query({})));
  }

  TEST_CASE("noise flips to another index at the stated rate") {
    MockLabeler m{lexicon({0, 1, 2, 3}), 0.3};
    const auto q = fixed_query({TokenSeq{0}, {3}, {1}, {2}});
    std::size_t flips = 0;
    const std::size_t n = 20000;
    for (std::uint64_t s = 0; s < n; ++s) {
      const int b = mock_label(m, q, s);
      CHECK(b == mock_label(m, q, s));
      if (b != 1) ++flips;
    }
    CHECK(testing::within_binomial(flips, n, 0.3));
  }

  TEST_CASE("permutation equivariance") {
    Rng rng(8);
    MockLabeler m{[](auto, std::span<const TokenId> y) { return hashed_score(y); }};
    for (int i = 0; i < 500; ++i) {
      std::array<TokenSeq, 4> ys;
      for (auto& y : ys) y = {static_cast<TokenId>(rng.below(5)), static_cast<TokenId>(rng.below(5))};
      std::array<int, 4> perm{0, 1, 2, 3};
      std::shuffle(perm.begin(), perm.end(), rng.engine());
      std::array<TokenSeq, 4> permuted;
      for (int k = 0; k < 4; ++k) permuted[static_cast<std::size_t>(perm[k])] = ys[static_cast<std::size_t>(k)];
      const int b = mock_label(m, fixed_query(ys));
      if (std::count(ys.begin(), ys.end(), ys[static_cast<std::size_t>(b)]) > 1) continue;
      CHECK(mock_label(m, fixed_query(permuted)) == perm[static_cast<std::size_t>(b)]);
    }
  }

  TEST_CASE("win rate counting") {
    Query q;
    q.sources = {Source::kRho, Source::kRho, Source::kPi, Source::kPi};
    q.is_validation = true;
    std::vector<PreferenceRecord> recs;
    for (int i = 0; i < 10; ++i) recs.push_back(to_record(q, i < 7 ? 2 + i % 2 : i % 2, "m"));
    CHECK(win_rate(recs) == doctest::Approx(0.7).epsilon(1e-15));
    std::vector<PreferenceRecord> all_pi(3, to_record(q, 3, "m"));
    CHECK(win_rate(all_pi) == 1.0);
    CHECK_THROWS(win_rate(std::vector<PreferenceRecord>{}));
  }
}

TEST_SUITE("collection") {
  TEST_CASE("plans per mode") {
    const LabelSchedule s{100, 2000, 1000};
    const CollectionPlan off(s, CollectionMode::offline());
    CHECK(off.target(0) == 100);
    CHECK(off.target(1000) == 100);
    CHECK(off.retrain_points().size() == 1);
    const CollectionPlan on(s, CollectionMode::online(), 1000);
    CHECK(on.retrain_points().size() == 20);
    CHECK(on.request_target(0) == 1100);
    CHECK(on.request_target(1000) == 2000);
    const CollectionPlan b(s, CollectionMode::batched(4));
    CHECK(b.retrain_points() == std::vector<std::size_t>{500, 1000, 1500, 2000});
    CHECK(b.target(0) == 500);
    CHECK(b.target(249) == 500);
    CHECK(b.target(250) == 1000);
    CHECK(b.target(999) == 2000);
    CHECK(b.target(1000) == 2000);
    CHECK(to_string(collection_mode_from_string("batched:4")) == "batched:4");
    CHECK(collection_mode_from_string("online").kind == CollectionMode::Kind::kOnline);
    CHECK_THROWS(collection_mode_from_string("batched:0"));
    CHECK_THROWS(collection_mode_from_string("sometimes"));
  }

  TEST_CASE("scheduler state round trip") {
    const auto path = std::filesystem::temp_directory_path() / "rlhf_sched.json";
    SchedulerState s{10, 20, 30, 2};
    s.save(path);
    const auto back = SchedulerState::load(path);
    CHECK(back.n == 10);
    CHECK(back.labels_collected == 20);
    CHECK(back.requests_issued == 30);
    CHECK(back.retrains_done == 2);
    std::filesystem::remove(path);
  }
}

namespace {

struct Task {
  std::shared_ptr<const TabularLM> rho = std::make_shared<TabularLM>(TabularLM::random(4, 1, 5));
  seq_model::ContextSet contexts{{TokenSeq{0}, TokenSeq{1}, TokenSeq{2}}};
  OracleFn oracle = lexicon({1.0, -1.0, 0.0, 0.5});

  RlhfConfig config(LabelSchedule s, CollectionMode m) const {
    RlhfConfig c;
    c.schedule = s;
    c.mode = m;
    c.outstanding = 0;
    c.rm.lr = 0.05;
    c.norm_samples = 200;
    c.ppo.policy_lr = 0.02;
    c.ppo.value_lr = 0.05;
    c.ppo.batch_size = 16;
    c.ppo.response_len = 3;
    c.controller = {.beta = 0.1, .target_kl = 2.0};
    c.seed = 3;
    return c;
  }
};

}  // namespace

TEST_SUITE("run_rlhf") {
  TEST_CASE("batched with one batch reproduces offline") {
    Task t;
    MockLabelSource a({t.oracle}, 1), b({t.oracle}, 1);
    const LabelSchedule s{200, 200, 160};
    const auto off = run_rlhf(*t.rho, t.rho, t.contexts, a, t.config(s, CollectionMode::offline()));
    const auto bat = run_rlhf(*t.rho, t.rho, t.contexts, b, t.config(s, CollectionMode::batched(1)));
    CHECK(off.records.size() == 200);
    CHECK(off.state.retrains_done == 1);
    CHECK(std::equal(off.policy->parameters().begin(), off.policy->parameters().end(),
                     bat.policy->parameters().begin()));
    CHECK(std::equal(off.reward_model->head().begin(), off.reward_model->head().end(),
                     bat.reward_model->head().begin()));
    for (const auto& r : off.records) CHECK(r.sources[0] == Source::kRho);
  }

  TEST_CASE("online mode retrains 20 times and follows l(n)") {
    Task t;
    MockLabelSource src({t.oracle}, 2);
    auto cfg = t.config({40, 400, 320}, CollectionMode::online());
    cfg.validation_fraction = 0.2;
    std::vector<std::size_t> retrain_labels;
    cfg.on_retrain = [&](std::size_t labels, const auto&) { retrain_labels.push_back(labels); };
    const auto dir = std::filesystem::temp_directory_path() / "rlhf_online";
    std::filesystem::create_directories(dir);
    cfg.state_path = dir / "state.json";
    seq_model::Vocab vocab({"a", "b", "c", "d"});
    cfg.vocab = &vocab;
    cfg.records_path = dir / "records.jsonl";
    std::filesystem::remove(cfg.records_path);
    std::size_t batches = 0;
    cfg.on_batch = [&](const auto& rec, const auto&) {
      ++batches;
      CHECK(rec.episode <= 320);
    };
    const auto out = run_rlhf(*t.rho, t.rho, t.contexts, src, cfg);
    CHECK(batches == 20);
    CHECK(out.state.retrains_done == 20);
    CHECK(retrain_labels.size() == 20);
    CHECK(retrain_labels.front() == 40);
    CHECK(retrain_labels.back() == 400);
    CHECK(out.records.size() == 400);
    CHECK(out.state.requests_issued == 400);
    CHECK(out.validation_win_rate.has_value());
    CHECK(reward_model::read_records(cfg.records_path, vocab).size() == 400);
    const auto st = SchedulerState::load(cfg.state_path);
    CHECK(st.labels_collected == 400);
    CHECK(st.n == 320);
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("stop signal ends the run within a batch") {
    Task t;
    MockLabelSource src({t.oracle}, 2);
    auto cfg = t.config({40, 400, 320}, CollectionMode::online());
    std::size_t batches = 0;
    cfg.on_batch = [&](const auto&, const auto&) { ++batches; };
    cfg.stop = [&] { return batches >= 2; };
    const auto out = run_rlhf(*t.rho, t.rho, t.contexts, src, cfg);
    CHECK(out.stopped);
    CHECK(out.ppo_log.size() == 2);
  }

  TEST_CASE("resume reuses collected labels") {
    Task t;
    auto cfg = t.config({40, 400, 320}, CollectionMode::online());
    MockLabelSource first({t.oracle}, 2);
    std::size_t batches = 0;
    cfg.on_batch = [&](const auto&, const auto&) { ++batches; };
    cfg.stop = [&] { return batches >= 5; };
    const auto cut = run_rlhf(*t.rho, t.rho, t.contexts, first, cfg);
    REQUIRE(cut.stopped);
    CHECK(cut.state.n == 80);

    struct Counting final : LabelSource {
      MockLabelSource inner;
      std::size_t requested = 0;
      explicit Counting(MockLabeler l) : inner(std::move(l), 9) {}
      void request(std::vector<Query> q) override {
        requested += q.size();
        inner.request(std::move(q));
      }
      std::vector<PreferenceRecord> poll() override { return inner.poll(); }
    } second({t.oracle});

    RlhfResume r;
    r.state = cut.state;
    r.records = cut.records;
    r.reward_model = cut.reward_model;
    r.episodes = cut.state.n;
    r.value = cut.value;
    cfg.stop = {};
    cfg.resume = r;
    cfg.controller = cut.controller;
    std::size_t retrains = 0;
    cfg.on_retrain = [&](std::size_t, const auto&) { ++retrains; };
    const auto out = run_rlhf(*cut.policy, t.rho, t.contexts, second, cfg);
    CHECK_FALSE(out.stopped);
    CHECK(out.records.size() == 400);
    CHECK(second.requested == 400 - cut.records.size());
    CHECK(out.state.retrains_done == 20);
    CHECK(retrains == 20 - cut.state.retrains_done);
    CHECK(out.ppo_log.size() == 15);
    CHECK(out.state.n == 320);
  }
}
