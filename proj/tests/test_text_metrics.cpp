#include <doctest.h>

#include <algorithm>
#include <bit>
#include <map>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "rlhf/text_metrics/analysis.hpp"

using namespace rlhf::text_metrics;

namespace {

WordSeq one_sentence(std::vector<std::string> words) {
  WordSeq w;
  w.words = std::move(words);
  if (!w.words.empty()) w.sentences.push_back({0, w.words.size()});
  return w;
}

// Longest common subsequence by checking every subset of the shorter side.
std::size_t brute_lcs(const std::vector<int>& a, const std::vector<int>& b) {
  const auto& s = a.size() <= b.size() ? a : b;
  const auto& t = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
    const auto k = static_cast<std::size_t>(std::popcount(mask));
    if (k <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < s.size() && ok; ++i) {
      if (!(mask >> i & 1u)) continue;
      while (j < t.size() && t[j] != s[i]) ++j;
      if (j == t.size()) ok = false;
      else ++j;
    }
    if (ok) best = k;
  }
  return best;
}

}  // namespace

TEST_SUITE("words") {
  TEST_CASE("normalization") {
    const auto w = normalize_words("The cat. The DOG!");
    CHECK(w.words == std::vector<std::string>{"the", "cat", "the", "dog"});
    REQUIRE(w.sentences.size() == 2);
    CHECK(w.sentences[0] == Span{0, 2});
    CHECK(w.sentences[1] == Span{2, 4});
    CHECK(normalize_words("").empty());
    CHECK(normalize_words("").sentences.empty());
    CHECK(normalize_words("Don't \xE2\x80\x9Cquote\xE2\x80\x9D me, ok?").words ==
          std::vector<std::string>{"dont", "quote", "me", "ok"});
  }

  TEST_CASE("normalization is idempotent on rejoined words") {
    for (const char* t : {"The cat. The DOG!", "Hello,   WORLD... again?\nYes", "a-b c'd E.F."}) {
      const auto w = normalize_words(t);
      CHECK(normalize_words(join_words(w)).words == w.words);
    }
  }

  TEST_CASE("sentence splitting") {
    CHECK(split_sentences("A. B.").size() == 2);
    CHECK(split_sentences("no terminators at all").size() == 1);
    CHECK(split_sentences("A.\nB").size() == 2);
    CHECK(split_sentences("3.14 is pi").size() == 1);
    CHECK(split_sentences("Wait... what?!  ").size() == 2);
    CHECK(split_sentences("  \n\n . ").size() == 1);
    CHECK(split_sentences("").empty());
  }

  TEST_CASE("sentence ranges partition the words") {
    std::mt19937 g(1);
    const char* parts[] = {"word", "Word", ". ", "! ", "?", "\n", " ", ",", "x.y", "  "};
    for (int t = 0; t < 300; ++t) {
      std::string text;
      for (int k = 0; k < 20; ++k) text += parts[g() % 10];
      const auto w = normalize_words(text);
      std::size_t at = 0;
      for (const auto& s : w.sentences) {
        CHECK(s.begin == at);
        CHECK(s.end > s.begin);
        at = s.end;
      }
      CHECK(at == w.size());
    }
  }
}

TEST_SUITE("copying") {
  TEST_CASE("novel n-grams") {
    const auto src = one_sentence({"a", "b", "c"});
    CHECK(novel_ngram_fraction(one_sentence({"a", "b", "x"}), src, 2) == 0.5);
    for (std::size_t n = 1; n <= 3; ++n) CHECK(novel_ngram_fraction(src, src, n) == 0.0);
    CHECK(novel_ngram_fraction(one_sentence({"p", "q"}), src, 1) == 1.0);
    CHECK_THROWS(novel_ngram_fraction(one_sentence({"a"}), src, 2));
    CHECK_THROWS(novel_ngram_fraction(src, src, 0));
  }

  TEST_CASE("n-grams do not cross sentence boundaries") {
    const auto sum = normalize_words("a b. c d.");
    const auto src = normalize_words("a b zz c d");
    CHECK(novel_ngram_fraction(sum, src, 2) == 0.0);
  }

  TEST_CASE("verbatim copies are never novel") {
    const auto src = normalize_words(
        "The council met on Tuesday. It approved the budget after a long debate. "
        "Residents were not consulted, critics said.");
    const auto sum = normalize_words("It approved the budget after a long debate. The council met on Tuesday.");
    for (std::size_t n = 1; n <= 4; ++n) {
      CHECK(novel_ngram_fraction(sum, src, n) == 0.0);
      CHECK(novel_ngram_fraction(sum, src, n, CountMode::kTypes) == 0.0);
    }
    CHECK(novel_sentence_fraction(sum, src) == 0.0);
  }

  TEST_CASE("novel sentences") {
    const auto src = normalize_words("One two three. Four five six.");
    CHECK(novel_sentence_fraction(normalize_words("one two three. four five six."), src) == 0.0);
    CHECK(novel_sentence_fraction(normalize_words("seven. eight nine."), src) == 1.0);
    CHECK(novel_sentence_fraction(normalize_words("two three four. nine."), src) == 0.5);
    CHECK_THROWS(novel_sentence_fraction(WordSeq{}, src));
  }

  TEST_CASE("repetition") {
    CHECK(repeated_ngram_fraction(one_sentence({"a", "b", "c"}), 1) == 0.0);
    CHECK(repeated_ngram_fraction(one_sentence({"a", "a"}), 1) == 1.0);
    CHECK(repeated_ngram_fraction(one_sentence({"a", "b", "a"}), 1) == 2.0 / 3.0);
    CHECK(repeated_ngram_fraction(one_sentence({"a", "b", "a"}), 1, CountMode::kTypes) == 0.5);
    CHECK(repeated_sentence_fraction(normalize_words("Go home. Stay. Go home.")) == 2.0 / 3.0);
  }

  TEST_CASE("types and occurrences differ only in weighting") {
    const auto src = one_sentence({"a", "b"});
    const auto sum = one_sentence({"a", "a", "a", "z"});
    CHECK(novel_ngram_fraction(sum, src, 1) == 0.25);
    CHECK(novel_ngram_fraction(sum, src, 1, CountMode::kTypes) == 0.5);
  }

  TEST_CASE("unigram repetition ignores sentence order") {
    std::mt19937 g(7);
    const char* words[] = {"a", "b", "c", "d"};
    for (int t = 0; t < 100; ++t) {
      std::vector<std::string> sents;
      for (int s = 0; s < 4; ++s) {
        std::string sent;
        for (int k = 0; k < 1 + static_cast<int>(g() % 4); ++k) sent += std::string(words[g() % 4]) + " ";
        sents.push_back(sent + ".");
      }
      std::string a, b;
      for (const auto& s : sents) a += s + " ";
      std::shuffle(sents.begin(), sents.end(), g);
      for (const auto& s : sents) b += s + " ";
      CHECK(repeated_ngram_fraction(normalize_words(a), 1) == repeated_ngram_fraction(normalize_words(b), 1));
    }
  }

  TEST_CASE("summary-as-source is never novel up to the shortest sentence") {
    std::mt19937 g(3);
    for (int t = 0; t < 100; ++t) {
      std::string text;
      std::size_t shortest = 100;
      for (int s = 0; s < 3; ++s) {
        const std::size_t len = 1 + g() % 6;
        shortest = std::min(shortest, len);
        for (std::size_t k = 0; k < len; ++k) text += std::string(1, static_cast<char>('a' + g() % 5)) + " ";
        text += ". ";
      }
      const auto w = normalize_words(text);
      for (std::size_t n = 1; n <= shortest; ++n) CHECK(novel_ngram_fraction(w, w, n) == 0.0);
    }
  }

  TEST_CASE("fractions stay in the unit interval") {
    std::mt19937 g(11);
    for (int t = 0; t < 200; ++t) {
      auto rnd = [&](int len) {
        std::string s;
        for (int k = 0; k < len; ++k) s += (g() % 6 == 0) ? ". " : std::string(1, static_cast<char>('a' + g() % 4)) + " ";
        return normalize_words(s);
      };
      const auto st = copy_stats(rnd(12), rnd(20));
      for (std::size_t n = 0; n < 4; ++n) {
        if (st.novel[n]) CHECK((*st.novel[n] >= 0.0 && *st.novel[n] <= 1.0));
        if (st.repeated[n]) CHECK((*st.repeated[n] >= 0.0 && *st.repeated[n] <= 1.0));
      }
    }
  }

  TEST_CASE("preamble rules") {
    CHECK(preamble_flags("Hi everyone, I need advice", DatasetKind::kTldr));
    CHECK(preamble_flags("OKAY so here goes", DatasetKind::kTldr));
    CHECK(preamble_flags("So, my roommate", DatasetKind::kTldr));
    CHECK_FALSE(preamble_flags("Sometimes I wonder", DatasetKind::kTldr));
    CHECK_FALSE(preamble_flags("", DatasetKind::kTldr));
    CHECK(preamble_flags("Winner: Simon Wood took home the prize", DatasetKind::kCnnDm));
    CHECK(preamble_flags("By Staff Reporter: the plane", DatasetKind::kCnnDm));
    CHECK_FALSE(preamble_flags("The plane has been grounded", DatasetKind::kCnnDm));
    CHECK_FALSE(preamble_flags("The plane has been: grounded", DatasetKind::kCnnDm));
    CHECK(dataset_kind_from_string("cnndm") == DatasetKind::kCnnDm);
    CHECK_THROWS(dataset_kind_from_string("xsum"));
  }

  TEST_CASE("first three words") {
    const std::string art = "The quick brown fox jumps.";
    const auto r = first3_copy_rate({{art, art},
                                     {art, "A quick brown fox."},
                                     {art, "the Quick, brown cat"},
                                     {art, "Slow green turtle"},
                                     {art, "too short"}});
    CHECK(r.copies == 2);
    CHECK(r.eligible == 4);
    CHECK(r.excluded == 1);
    CHECK(*r.rate() == 0.5);
    CHECK_FALSE(first3_copy_rate({}).rate());
  }
}

TEST_SUITE("lcs and rouge") {
  TEST_CASE("bigram LCS hand instance") {
    const auto ctx = one_sentence({"a", "b", "c", "d"});  // ab bc cd
    const auto sum = one_sentence({"b", "c", "d", "x", "e"});  // bc cd dx xe
    const auto s = bigram_lcs_span(ctx, one_sentence({"b", "c", "d"}));
    CHECK(s.context_positions == std::vector<std::size_t>{1, 2});
    CHECK(s.summary_positions == std::vector<std::size_t>{0, 1});
    CHECK(bigram_lcs_span(ctx, sum).length() == 2);
    CHECK(bigram_lcs_span(ctx, ctx).length() == 3);
    CHECK(bigram_lcs_span(ctx, one_sentence({"p", "q", "r"})).length() == 0);
  }

  TEST_CASE("bigram LCS matches exhaustive search") {
    std::mt19937 g(2024);
    for (int t = 0; t < 200; ++t) {
      auto rnd = [&] {
        std::vector<std::string> w(2 + g() % 10);
        for (auto& x : w) x = std::string(1, static_cast<char>('a' + g() % 3));
        return one_sentence(w);
      };
      const auto a = rnd(), b = rnd();
      const auto s = bigram_lcs_span(a, b);
      std::map<std::string, int> ids;
      auto bigrams = [&](const WordSeq& w) {
        std::vector<int> out;
        for (std::size_t i = 0; i + 1 < w.size(); ++i)
          out.push_back(ids.try_emplace(w.words[i] + w.words[i + 1], static_cast<int>(ids.size())).first->second);
        return out;
      };
      const auto ba = bigrams(a), bb = bigrams(b);
      REQUIRE(ba.size() <= 10);
      CHECK(s.length() == brute_lcs(ba, bb));
      for (std::size_t k = 0; k < s.length(); ++k) {
        CHECK(ba[s.context_positions[k]] == bb[s.summary_positions[k]]);
        if (k) {
          CHECK(s.context_positions[k] > s.context_positions[k - 1]);
          CHECK(s.summary_positions[k] > s.summary_positions[k - 1]);
        }
      }
    }
  }

  TEST_CASE("alignment is leftmost") {
    const auto m = lcs_alignment({1, 1, 1}, {1});
    REQUIRE(m.size() == 1);
    CHECK(m[0] == std::pair<std::size_t, std::size_t>{0, 0});
  }

  TEST_CASE("rouge hand counts") {
    const auto r = rouge("the cat sat", "the cat sat on the mat");
    CHECK(r.r1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.rl == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(r.r2 == doctest::Approx(2.0 * (1.0 * 0.4) / 1.4).epsilon(1e-15));
    const auto same = rouge("The cat sat.", "the cat sat");
    CHECK(same.r1 == 1.0);
    CHECK(same.r2 == 1.0);
    CHECK(same.rl == 1.0);
    CHECK_THROWS(rouge("x", ""));
    CHECK(rouge("", "x").r_avg == 0.0);
  }

  TEST_CASE("rouge properties") {
    std::mt19937 g(5);
    for (int t = 0; t < 200; ++t) {
      std::vector<std::string> w(1 + g() % 8);
      for (auto& x : w) x = std::string(1, static_cast<char>('a' + g() % 4));
      const auto a = one_sentence(w);
      const auto self = rouge(a, a);
      CHECK(self.r1 == 1.0);
      CHECK(self.r2 == 1.0);
      CHECK(self.rl == 1.0);
      std::shuffle(w.begin(), w.end(), g);
      const auto b = one_sentence(w);
      CHECK(rouge(a, b).r1 == rouge(b, a).r1);
      std::vector<std::string> v(1 + g() % 8);
      for (auto& x : v) x = std::string(1, static_cast<char>('a' + g() % 4));
      const auto r = rouge(one_sentence(v), a);
      CHECK(std::abs(r.r_avg - (r.r1 + r.r2 + r.rl) / 3.0) < 1e-12);
      for (double x : {r.r1, r.r2, r.rl}) CHECK((x >= 0.0 && x <= 1.0));
    }
  }

  TEST_CASE("lead-3") {
    const std::string art = "One a. Two b b. Three c c c. Four. Five.";
    CHECK(lead3(art) == "One a. Two b b. Three c c c.");
    CHECK(lead3("Only one. And two.") == "Only one. And two.");
    // Nine words do not fit a 6-word budget; the second sentence ends at word 5.
    CHECK(lead3(art, LeadTruncation{3, 5}) == "One a. Two b b.");
    CHECK(lead3(art, LeadTruncation{0, 20}) == "One a. Two b b. Three c c c.");
    CHECK(lead3(art, LeadTruncation{6, 7}) == "One a. Two b b.");
    CHECK(lead3("no periods here at all in this text", LeadTruncation{1, 2}) == "no periods here");
    CHECK_THROWS(lead3("   "));
  }
}

TEST_SUITE("analysis report") {
  TEST_CASE("records and aggregate") {
    std::istringstream in(
        R"({"id":"p1","post":"Hi all. My cat is sick.","summary":"My cat is sick.","reference":"my cat is ill"})"
        "\n\n"
        R"({"article":"Winner: Simon Wood took home the prize.","summary":"Wood won."})"
        "\n");
    const auto pairs = read_pairs(in);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[1].id == "1");
    AnalysisOptions opt;
    opt.n_threads = 2;
    const auto rep = analyze(pairs, opt);
    const auto j0 = to_json(rep.pairs[0]);
    CHECK(j0.at("novel").at("1") == 0.0);
    CHECK(j0.at("preamble") == true);
    CHECK(j0.at("first3_copy") == false);
    CHECK(j0.at("rouge").at("r1").get<double>() == doctest::Approx(0.75));
    CHECK(j0.at("lcs").at("sum_len") == 3);
    const auto j1 = to_json(rep.pairs[1]);
    CHECK(j1.at("novel").at("3").is_null());
    CHECK(j1.at("rouge").is_null());
    CHECK(rep.aggregate.at("rouge").at("n") == 1);
    CHECK(rep.aggregate.at("novel").at("2").get<double>() == doctest::Approx(0.5));

    std::ostringstream out;
    write_report(rep, out);
    std::istringstream lines(out.str());
    std::string line;
    std::size_t n = 0;
    while (std::getline(lines, line)) ++n;
    CHECK(n == 3);

    const auto dir = std::filesystem::temp_directory_path() / "rlhf_text_metrics_plot";
    std::filesystem::remove_all(dir);
    write_plot_data(rep, dir);
    for (const char* f : {"novel.tsv", "repeated.tsv", "lcs_positions.tsv"})
      CHECK(std::filesystem::exists(dir / f));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("malformed lines name their position") {
    std::istringstream in("{\"summary\": \"x\"}\nnot json\n");
    CHECK_THROWS_WITH(read_pairs(in), doctest::Contains("line 2"));
  }
}
