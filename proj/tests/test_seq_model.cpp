#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>

#include "rlhf/common/random.hpp"
#include "rlhf/seq_model/lm_training.hpp"
#include "rlhf/seq_model/neural_lm.hpp"
#include "rlhf/seq_model/sampling.hpp"
#include "rlhf/seq_model/tabular_lm.hpp"
#include "rlhf/seq_model/vocab.hpp"
#include "test_support.hpp"

using namespace rlhf;
using namespace rlhf::seq_model;

namespace {

NeuralConfig tiny_config(std::size_t vocab) {
  NeuralConfig c;
  c.vocab_size = vocab;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_model = 8;
  c.context_len = 6;
  c.init_std = 0.5;
  return c;
}

// Sets every head weight to zero and the head bias to the given logits, so
// the model emits exactly these logits at every position.
NeuralLM fixed_logit_model(const std::vector<double>& logits) {
  NeuralConfig c = tiny_config(logits.size());
  NeuralLM m(c, 1);
  for (const auto& s : m.segments()) {
    if (s.name == "w_head")
      std::fill_n(m.parameters().begin() + static_cast<std::ptrdiff_t>(s.offset), s.size, 0.0);
    if (s.name == "b_head")
      std::copy(logits.begin(), logits.end(),
                m.parameters().begin() + static_cast<std::ptrdiff_t>(s.offset));
  }
  return m;
}

double entropy(const std::vector<double>& logprobs) {
  double h = 0.0;
  for (double lp : logprobs) h -= std::exp(lp) * lp;
  return h;
}

}  // namespace

TEST_SUITE("vocab") {
  TEST_CASE("tokenize examples") {
    Vocab ab({"a", "b"});
    CHECK(ab.tokenize("").empty());
    CHECK(ab.tokenize("ab") == TokenSeq{0, 1});

    Vocab words({"good", "bad", " ", "g", "o", "d"});
    CHECK(words.detokenize(words.tokenize("good bad")) == "good bad");
    CHECK(words.tokenize("good bad") == TokenSeq{0, 2, 1});
  }

  TEST_CASE("unknown symbol reports its position") {
    Vocab ab({"a", "b"});
    try {
      ab.tokenize("abxa");
      FAIL("expected TokenizeError");
    } catch (const TokenizeError& e) {
      CHECK(e.position() == 2);
    }
  }

  TEST_CASE("duplicate and empty symbols are rejected") {
    CHECK_THROWS_AS(Vocab({"a", "a"}), std::invalid_argument);
    CHECK_THROWS_AS(Vocab({"a", ""}), std::invalid_argument);
  }

  TEST_CASE("tokenization is invertible on a random corpus") {
    Vocab v({"a", "b", "c", " ", ".", "\n", "ab", "the"});
    Rng rng(11);
    for (int i = 0; i < 10000; ++i) {
      std::string s;
      const auto len = rng.below(20);
      for (std::size_t k = 0; k < len; ++k) s += v.symbol(static_cast<TokenId>(rng.below(v.size())));
      const auto ids = v.tokenize(s);
      REQUIRE(v.valid(ids));
      REQUIRE(v.detokenize(ids) == s);
    }
  }

  TEST_CASE("vocab file round trip with escaped whitespace") {
    const auto path = std::filesystem::temp_directory_path() / "rlhf_vocab_test.txt";
    Vocab v({"a", " ", "\n", "\\", "."});
    v.save(path);
    CHECK(Vocab::load(path) == v);
    std::filesystem::remove(path);
  }
}

TEST_SUITE("log probabilities") {
  TEST_CASE("uniform tabular model") {
    TabularLM m(4, 1);
    const auto lp = seq_logprob(m, TokenSeq{0, 3, 2});
    REQUIRE(lp.size() == 3);
    for (double v : lp) CHECK(v == doctest::Approx(std::log(0.25)).epsilon(1e-12));
  }

  TEST_CASE("table read") {
    // vocab [a, b]; empty context -> (0.5, 0.5), context a -> (0.9, 0.1)
    auto m = TabularLM::from_table(2, 1, {{{}, {0.5, 0.5}}, {{0}, {0.9, 0.1}}});
    const auto lp = seq_logprob(m, TokenSeq{0, 0});
    CHECK(std::abs(lp[0] - std::log(0.5)) < 1e-12);
    CHECK(std::abs(lp[1] - std::log(0.9)) < 1e-12);
  }

  TEST_CASE("empty prefix and errors") {
    auto m = TabularLM::random(3, 2, 5);
    TokenSeq s{1, 2, 0};
    CHECK(conditional_logprob(m, {}, s) == doctest::Approx(seq_logprob_total(m, s)).epsilon(1e-14));
    CHECK_THROWS_AS(seq_logprob(m, TokenSeq{}), std::invalid_argument);
    CHECK_THROWS_AS(seq_logprob(m, TokenSeq{0, 3}), std::out_of_range);
    CHECK_THROWS_AS(conditional_logprob(m, TokenSeq{0}, TokenSeq{}), std::invalid_argument);
  }

  TEST_CASE("factorization identity over random tabular models") {
    Rng rng(21);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t v = 2 + rng.below(4);
      auto m = TabularLM::random(v, rng.below(3), rng.next());
      TokenSeq x(rng.below(4)), y(1 + rng.below(4));
      for (auto& t : x) t = static_cast<TokenId>(rng.below(v));
      for (auto& t : y) t = static_cast<TokenId>(rng.below(v));
      const double cond = conditional_logprob(m, x, y);
      const double lx = x.empty() ? 0.0 : seq_logprob_total(m, x);
      const double lxy = seq_logprob_total(m, concat(x, y));
      REQUIRE(std::abs(std::exp(cond) * std::exp(lx) - std::exp(lxy)) < 1e-9);
      REQUIRE(std::abs(cond + lx - lxy) < 1e-9);
    }
  }

  TEST_CASE("conditional matches a brute-force product of table entries") {
    // Oracle: the order-1 table is built here as explicit probability rows and
    // rho(xy)/rho(x) is computed as a product of those rows.
    Rng rng(4);
    const std::size_t v = 3;
    std::map<TokenSeq, std::vector<double>> table;
    auto random_row = [&] {
      std::vector<double> p(v);
      for (double& x : p) x = 0.1 + rng.uniform();
      const double s = std::accumulate(p.begin(), p.end(), 0.0);
      for (double& x : p) x /= s;
      return p;
    };
    table[{}] = random_row();
    for (TokenId a = 0; a < 3; ++a) table[{a}] = random_row();
    auto m = TabularLM::from_table(v, 1, table);
    auto product = [&](const TokenSeq& s) {
      double p = 1.0;
      for (std::size_t t = 0; t < s.size(); ++t)
        p *= t == 0 ? table[{}][s[t]] : table[{s[t - 1]}][s[t]];
      return p;
    };
    for (int trial = 0; trial < 200; ++trial) {
      TokenSeq x(1 + rng.below(3)), y(1 + rng.below(3));
      for (auto& t : x) t = static_cast<TokenId>(rng.below(v));
      for (auto& t : y) t = static_cast<TokenId>(rng.below(v));
      const double expected = product(concat(x, y)) / product(x);
      CHECK(std::exp(conditional_logprob(m, x, y)) == doctest::Approx(expected).epsilon(1e-12));
    }
  }

  TEST_CASE("every conditional is normalized") {
    auto tab = TabularLM::random(5, 2, 9, 2.0);
    NeuralConfig c = tiny_config(5);
    c.context_len = 10;
    NeuralLM neural(c, 4);
    Rng rng(8);
    for (int trial = 0; trial < 100; ++trial) {
      TokenSeq prefix(rng.below(8));
      for (auto& t : prefix) t = static_cast<TokenId>(rng.below(5));
      for (const PolicyModel* m : {static_cast<const PolicyModel*>(&tab),
                                   static_cast<const PolicyModel*>(&neural)}) {
        double s = 0.0;
        for (double lp : m->next_logprobs(prefix)) s += std::exp(lp);
        REQUIRE(std::abs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_SUITE("sampling") {
  TEST_CASE("point mass and determinism") {
    auto point = TabularLM::from_table(3, 0, {{{}, {1.0, 0.0, 0.0}}});
    CHECK(sample(point, {}, 5, 1) == TokenSeq{0, 0, 0, 0, 0});
    auto m = TabularLM::random(4, 1, 2);
    CHECK(sample(m, TokenSeq{1}, 20, 99) == sample(m, TokenSeq{1}, 20, 99));
    CHECK(sample(m, TokenSeq{1}, 20, 99) != sample(m, TokenSeq{1}, 20, 100));
    CHECK_THROWS(sample(m, {}, 0, 1));
  }

  TEST_CASE("empirical frequencies match table probabilities") {
    auto m = TabularLM::from_table(2, 0, {{{}, {0.3, 0.7}}});
    const std::size_t n = 100000;
    std::size_t zeros = 0;
    for (std::size_t i = 0; i < n; ++i)
      zeros += sample(m, {}, 1, derive_seed(123, i))[0] == 0 ? 1 : 0;
    CHECK(testing::within_binomial(zeros, n, 0.3));
  }

  TEST_CASE("constrained sampling") {
    // Order-2 point mass over [b, a, b, a, b] with symbol a = 0.
    std::map<TokenSeq, std::vector<double>> t;
    t[{}] = {0.0, 1.0};
    t[{1}] = {1.0, 0.0};
    t[{0}] = {0.0, 1.0};
    for (TokenId p : {0, 1}) {
      t[{p, 1}] = {1.0, 0.0};
      t[{p, 0}] = {0.0, 1.0};
    }
    auto alternating = TabularLM::from_table(2, 2, t);
    SampleConstraint c{.required_symbol = 0, .window_lo = 2, .window_hi = 4};

    SUBCASE("forced acceptance at position 3, not the earlier position 1") {
      const auto s = sample_constrained(alternating, {}, 5, c, 32, 1);
      CHECK(s.satisfied);
      CHECK(s.y.size() == 4);
      CHECK(s.y == TokenSeq{1, 0, 1, 0});
      CHECK(s.attempts == 1);
    }
    SUBCASE("forced rejection") {
      auto never = TabularLM::from_table(2, 0, {{{}, {0.0, 1.0}}});
      const auto s = sample_constrained(never, {}, 5, c, 32, 1);
      CHECK_FALSE(s.satisfied);
      CHECK(s.attempts == 32);
      CHECK(s.y.size() == 5);
    }
    SUBCASE("invalid windows") {
      CHECK_THROWS(sample_constrained(alternating, {}, 4, c, 32, 1));
      SampleConstraint bad{.required_symbol = 0, .window_lo = 3, .window_hi = 2};
      CHECK_THROWS(sample_constrained(alternating, {}, 5, bad, 32, 1));
    }
  }

  TEST_CASE("enumerate_outputs") {
    CHECK(enumerate_outputs(TabularLM(2, 1), {}, 3).size() == 8);
    for (const auto& [y, p] : enumerate_outputs(TabularLM(3, 1), TokenSeq{0}, 2))
      CHECK(p == doctest::Approx(1.0 / 9.0).epsilon(1e-12));
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      auto m = TabularLM::random(4, 2, rng.next(), 2.0);
      double total = 0.0;
      for (const auto& [y, p] : enumerate_outputs(m, TokenSeq{1}, 4)) total += p;
      CHECK(std::abs(total - 1.0) < 1e-9);
    }
    CHECK_THROWS_AS(enumerate_outputs(TabularLM(10, 1), {}, 7), std::invalid_argument);
    CHECK_THROWS_AS(enumerate_outputs(TabularLM(10, 1), {}, 3, 999), std::invalid_argument);
  }
}

TEST_SUITE("temperature") {
  TEST_CASE("T=1 is the identity") {
    NeuralLM m(tiny_config(4), 3);
    const auto t1 = apply_temperature(m, 1.0);
    TokenSeq p{1, 2};
    const auto a = m.next_logprobs(p), b = t1.next_logprobs(p);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-9);
    CHECK_THROWS(apply_temperature(m, 0.0));
    CHECK_THROWS(apply_temperature(m, -1.0));
  }

  TEST_CASE("small T concentrates on the argmax") {
    auto m = fixed_logit_model({5.0, 0.0, -1.0});
    const auto lp = apply_temperature(m, 0.01).next_logprobs(TokenSeq{});
    CHECK(std::exp(lp[0]) >= 0.99);
  }

  TEST_CASE("T=0.7 on logits (1, 0, -1)") {
    auto m = fixed_logit_model({1.0, 0.0, -1.0});
    const auto lp = apply_temperature(m, 0.7).next_logprobs(TokenSeq{2});
    // softmax(1/0.7, 0, -1/0.7) by hand
    const double a = std::exp(1.0 / 0.7), b = 1.0, c = std::exp(-1.0 / 0.7);
    const double z = a + b + c;
    CHECK(std::exp(lp[0]) == doctest::Approx(a / z).epsilon(1e-6));
    CHECK(std::exp(lp[1]) == doctest::Approx(b / z).epsilon(1e-6));
    CHECK(std::exp(lp[2]) == doctest::Approx(c / z).epsilon(1e-6));
  }

  TEST_CASE("entropy is non-increasing as T decreases") {
    auto m = fixed_logit_model({0.3, -1.2, 2.0, 0.1});
    double prev = INFINITY;
    for (double t : {3.0, 2.0, 1.0, 0.7, 0.5, 0.2, 0.05}) {
      const double h = entropy(apply_temperature(m, t).next_logprobs(TokenSeq{}));
      CHECK(h <= prev + 1e-12);
      prev = h;
    }
  }

  TEST_CASE("tabular temperature") {
    auto m = TabularLM::from_table(2, 0, {{{}, {0.25, 0.75}}});
    const auto lp = m.with_temperature(0.5).next_logprobs(TokenSeq{});
    CHECK(std::exp(lp[1]) == doctest::Approx(0.5625 / 0.625).epsilon(1e-12));
  }
}

TEST_SUITE("neural training") {
  TEST_CASE("NLL gradient matches central finite differences") {
    NeuralLM m(tiny_config(3), 17);
    REQUIRE(m.num_parameters() <= 1100);
    TokenSeq seq{0, 2, 1, 1, 0};
    std::vector<double> grad(m.num_parameters(), 0.0);
    m.nll_and_grad(seq, 0, grad);
    auto params = m.parameters();
    const auto fd = testing::finite_difference_grad(params, [&] {
      std::vector<double> dummy(m.num_parameters(), 0.0);
      return m.nll_and_grad(seq, 0, dummy);
    });
    CHECK(testing::max_relative_error(grad, fd) < 1e-4);
  }

  TEST_CASE("prefix tokens are excluded from the supervised loss") {
    NeuralLM m(tiny_config(3), 5);
    TokenSeq x{1, 2}, y{0, 0, 1};
    std::vector<double> grad(m.num_parameters(), 0.0);
    const double loss = m.nll_and_grad(concat(x, y), x.size(), grad);
    CHECK(loss == doctest::Approx(-conditional_logprob(m, x, y)).epsilon(1e-12));
    auto params = m.parameters();
    const auto fd = testing::finite_difference_grad(params, [&] {
      return -conditional_logprob(m, x, y);
    });
    CHECK(testing::max_relative_error(grad, fd) < 1e-4);
  }

  TEST_CASE("logprob and embedding gradients match finite differences") {
    NeuralLM m(tiny_config(3), 9);
    TokenSeq x{2}, y{0, 1, 1};
    std::vector<double> coef{0.5, -1.5, 2.0};
    std::vector<double> dembed(m.embedding_width());
    for (std::size_t i = 0; i < dembed.size(); ++i) dembed[i] = std::sin(1.0 + i);
    std::vector<double> grad(m.num_parameters(), 0.0);
    m.accumulate_logprob_grad(x, y, coef, grad);
    m.accumulate_embedding_grad(x, y, dembed, grad);
    auto params = m.parameters();
    const auto fd = testing::finite_difference_grad(params, [&] {
      const auto lp = m.evaluate(x, y).logprobs;
      double f = 0.0;
      for (std::size_t t = 0; t < lp.size(); ++t) f += coef[t] * lp[t];
      const auto e = m.final_embedding(x, y);
      for (std::size_t i = 0; i < e.size(); ++i) f += dembed[i] * e[i];
      return f;
    });
    CHECK(testing::max_relative_error(grad, fd) < 1e-4);
  }

  TEST_CASE("dropout forward is deterministic under a seeded stream") {
    NeuralLM m(tiny_config(3), 2);
    Rng r1(5), r2(5);
    TokenSeq s{0, 1, 2};
    std::vector<double> g1(m.num_parameters(), 0.0), g2(m.num_parameters(), 0.0);
    CHECK(m.nll_and_grad(s, 0, g1, 0.1, &r1) == m.nll_and_grad(s, 0, g2, 0.1, &r2));
    CHECK(g1 == g2);
  }

  TEST_CASE("single repeated sequence is learned") {
    NeuralConfig c;
    c.vocab_size = 4;
    c.n_layers = 1;
    c.d_model = 16;
    c.context_len = 8;
    NeuralLM m(c, 1);
    const TokenSeq target{1, 3, 0, 2, 2};
    std::vector<TokenSeq> corpus(8, target);
    const auto log = train_lm(m, corpus, {.epochs = 40, .lr = 1e-2, .batch_size = 8, .seed = 3});
    CHECK(std::exp(seq_logprob_total(m, target)) >= 0.9);
    CHECK(log.epoch_nll.back() < log.epoch_nll.front());
  }

  TEST_CASE("zero steps leave parameters unchanged; same seed is bit-identical") {
    NeuralLM m(tiny_config(3), 1);
    const std::vector<double> before(m.parameters().begin(), m.parameters().end());
    std::vector<TokenSeq> corpus{{0, 1, 2}, {2, 2, 1}};
    train_lm(m, corpus, {.epochs = 0});
    CHECK(std::equal(before.begin(), before.end(), m.parameters().begin()));

    NeuralLM a(tiny_config(3), 1), b(tiny_config(3), 1);
    train_lm(a, corpus, {.epochs = 3, .lr = 1e-2, .batch_size = 1, .dropout = 0.1, .seed = 8});
    train_lm(b, corpus, {.epochs = 3, .lr = 1e-2, .batch_size = 1, .dropout = 0.1, .seed = 8});
    CHECK(std::equal(a.parameters().begin(), a.parameters().end(), b.parameters().begin()));
  }

  TEST_CASE("empty corpus is rejected") {
    NeuralLM m(tiny_config(3), 1);
    CHECK_THROWS_AS(train_lm(m, {}, {}), std::invalid_argument);
  }

  TEST_CASE("cosine schedule and learning-rate grid") {
    CHECK(cosine_lr(3e-4, 0, 11) == 3e-4);
    CHECK(std::abs(cosine_lr(3e-4, 10, 11)) < 1e-12);
    CHECK(cosine_lr(3e-4, 5, 11) == doctest::Approx(1.5e-4).epsilon(1e-12));
    const auto grid = finetune_lr_grid();
    REQUIRE(grid.size() == 8);
    for (std::size_t i = 0; i < 8; ++i)
      CHECK(grid[i] == doctest::Approx(1e-4 * std::pow(3.0, static_cast<double>(i) / 7.0)).epsilon(1e-12));
  }

  TEST_CASE("supervised finetune follows the cosine schedule to zero") {
    NeuralLM m(tiny_config(3), 1);
    std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
    for (int i = 0; i < 9; ++i) pairs.push_back({{0, 1}, {2, 2}});
    const auto log = supervised_finetune(m, pairs, {.lr = 2e-4, .batch_size = 3});
    REQUIRE(log.step_lr.size() == 3);
    CHECK(log.step_lr[0] == 2e-4);
    CHECK(log.step_lr[1] == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(std::abs(log.step_lr[2]) < 1e-12);
    CHECK_THROWS(supervised_finetune(m, {}, {}));
  }
}

TEST_SUITE("checkpoints") {
  TEST_CASE("neural round trip is bit exact") {
    NeuralLM m(tiny_config(5), 4);
    std::vector<TokenSeq> corpus{{0, 1, 2, 3}, {4, 4, 1}};
    train_lm(m, corpus, {.epochs = 2, .lr = 1e-2, .batch_size = 1});
    const auto t = apply_temperature(m, 0.7);
    const auto path = std::filesystem::temp_directory_path() / "rlhf_neural.ckpt";
    save_model(t, path);
    const auto loaded = load_model(path);
    REQUIRE(loaded->kind() == "neural");
    const auto& n = dynamic_cast<const NeuralLM&>(*loaded);
    CHECK(n.temperature() == t.temperature());
    CHECK(std::equal(t.parameters().begin(), t.parameters().end(), n.parameters().begin(),
                     n.parameters().end()));
    std::filesystem::remove(path);
  }

  TEST_CASE("tabular round trip and corrupted input") {
    auto m = TabularLM::random(3, 2, 4);
    const auto bytes = m.to_checkpoint().serialize();
    const auto back = TabularLM::from_checkpoint(Checkpoint::deserialize(bytes));
    CHECK(std::equal(m.parameters().begin(), m.parameters().end(), back.parameters().begin()));
    CHECK_THROWS(Checkpoint::deserialize(bytes.substr(0, bytes.size() - 3)));
    CHECK_THROWS(Checkpoint::deserialize("NOTACKPT" + bytes.substr(8)));
  }

  TEST_CASE("fit_tabular recovers counts") {
    std::vector<TokenSeq> corpus(50, TokenSeq{0, 1, 0, 1});
    auto m = fit_tabular(corpus, 2, 1, 0.01);
    CHECK(std::exp(m.next_logprobs(TokenSeq{0})[1]) > 0.99);
  }
}
