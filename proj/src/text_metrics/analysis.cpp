#include "rlhf/text_metrics/analysis.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "rlhf/common/parallel.hpp"

namespace rlhf::text_metrics {
namespace {

nlohmann::json opt_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json fractions(const std::array<std::optional<double>, 4>& per_n,
                         const std::optional<double>& sentence) {
  nlohmann::json j;
  for (std::size_t n = 0; n < 4; ++n) j[std::to_string(n + 1)] = opt_json(per_n[n]);
  j["sentence"] = opt_json(sentence);
  return j;
}

struct Mean {
  double sum = 0.0;
  std::size_t n = 0;

  void add(const std::optional<double>& v) {
    if (v) {
      sum += *v;
      ++n;
    }
  }
  nlohmann::json value() const {
    return n ? nlohmann::json(sum / static_cast<double>(n)) : nlohmann::json(nullptr);
  }
};

std::array<Mean, 5> column_means(const std::vector<PairAnalysis>& pairs, bool novel) {
  std::array<Mean, 5> m;
  for (const auto& p : pairs) {
    const auto& per_n = novel ? p.copy.novel : p.copy.repeated;
    for (std::size_t n = 0; n < 4; ++n) m[n].add(per_n[n]);
    m[4].add(novel ? p.copy.novel_sentence : p.copy.repeated_sentence);
  }
  return m;
}

nlohmann::json means_json(const std::array<Mean, 5>& m) {
  nlohmann::json j;
  for (std::size_t n = 0; n < 4; ++n) j[std::to_string(n + 1)] = m[n].value();
  j["sentence"] = m[4].value();
  return j;
}

}  // namespace

PairInput pair_from_json(const nlohmann::json& j) {
  PairInput p;
  p.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump()) : "";
  for (const char* k : {"source", "article", "post"})
    if (j.contains(k)) {
      p.source = j[k].get<std::string>();
      break;
    }
  p.summary = j.at("summary").get<std::string>();
  if (j.contains("reference") && !j["reference"].is_null())
    p.reference = j["reference"].get<std::string>();
  return p;
}

std::vector<PairInput> read_pairs(std::istream& in) {
  std::vector<PairInput> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(pair_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("pairs line " + std::to_string(lineno) + ": " + e.what());
    }
    if (out.back().id.empty()) out.back().id = std::to_string(out.size() - 1);
  }
  return out;
}

PairAnalysis analyze_pair(const PairInput& p, const AnalysisOptions& opt) {
  const auto src = normalize_words(p.source);
  const auto sum = normalize_words(p.summary);
  PairAnalysis a;
  a.id = p.id;
  a.copy = copy_stats(sum, src, opt.count);
  if (p.reference) {
    const auto ref = normalize_words(*p.reference);
    if (!ref.empty()) a.rouge = rouge(sum, ref);
  }
  a.first3_copy = first3_copied(src, sum);
  a.preamble = preamble_flags(p.source, opt.kind);
  a.lcs = bigram_lcs_span(src, sum);
  return a;
}

nlohmann::json to_json(const PairAnalysis& a) {
  nlohmann::json j;
  j["id"] = a.id;
  j["novel"] = fractions(a.copy.novel, a.copy.novel_sentence);
  j["repeated"] = fractions(a.copy.repeated, a.copy.repeated_sentence);
  if (a.rouge)
    j["rouge"] = {{"r1", a.rouge->r1}, {"r2", a.rouge->r2}, {"rl", a.rouge->rl}, {"r_avg", a.rouge->r_avg}};
  else
    j["rouge"] = nullptr;
  j["first3_copy"] = a.first3_copy ? nlohmann::json(*a.first3_copy) : nlohmann::json(nullptr);
  j["preamble"] = a.preamble;
  j["lcs"] = {{"ctx_positions", a.lcs.context_positions},
              {"sum_positions", a.lcs.summary_positions},
              {"ctx_len", a.lcs.context_bigrams},
              {"sum_len", a.lcs.summary_bigrams}};
  return j;
}

AnalysisReport analyze(const std::vector<PairInput>& pairs, const AnalysisOptions& opt) {
  AnalysisReport r;
  r.pairs.resize(pairs.size());
  parallel_for(pairs.size(), opt.n_threads,
               [&](std::size_t i) { r.pairs[i] = analyze_pair(pairs[i], opt); });

  Mean r1, r2, rl, ravg, first3, preamble;
  for (const auto& p : r.pairs) {
    if (p.rouge) {
      r1.add(p.rouge->r1);
      r2.add(p.rouge->r2);
      rl.add(p.rouge->rl);
      ravg.add(p.rouge->r_avg);
    }
    if (p.first3_copy) first3.add(*p.first3_copy ? 1.0 : 0.0);
    preamble.add(p.preamble ? 1.0 : 0.0);
  }
  auto& g = r.aggregate;
  g["aggregate"] = true;
  g["n_pairs"] = r.pairs.size();
  g["dataset"] = to_string(opt.kind);
  g["count"] = opt.count == CountMode::kTypes ? "types" : "occurrences";
  g["novel"] = means_json(column_means(r.pairs, true));
  g["repeated"] = means_json(column_means(r.pairs, false));
  g["rouge"] = {{"r1", r1.value()}, {"r2", r2.value()}, {"rl", rl.value()},
                {"r_avg", ravg.value()}, {"n", r1.n}};
  g["first3_copy"] = {{"rate", first3.value()}, {"eligible", first3.n},
                      {"excluded", r.pairs.size() - first3.n}};
  g["preamble_rate"] = preamble.value();
  return r;
}

void write_report(const AnalysisReport& r, std::ostream& out) {
  for (const auto& p : r.pairs) out << to_json(p).dump() << '\n';
  out << r.aggregate.dump() << '\n';
}

void write_plot_data(const AnalysisReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw std::runtime_error("cannot write " + (dir / name).string());
    return f;
  };
  for (const bool novel : {true, false}) {
    auto f = open(novel ? "novel.tsv" : "repeated.tsv");
    f << "# n\tmean_fraction (n=5 is whole sentences)\n";
    const auto m = column_means(r.pairs, novel);
    for (std::size_t n = 0; n < 5; ++n)
      if (m[n].n) f << n + 1 << '\t' << m[n].sum / static_cast<double>(m[n].n) << '\n';
  }
  auto f = open("lcs_positions.tsv");
  f << "# context_position\tsummary_position (relative, in [0,1))\n";
  for (const auto& p : r.pairs)
    for (std::size_t k = 0; k < p.lcs.length(); ++k)
      f << static_cast<double>(p.lcs.context_positions[k]) / static_cast<double>(p.lcs.context_bigrams)
        << '\t'
        << static_cast<double>(p.lcs.summary_positions[k]) / static_cast<double>(p.lcs.summary_bigrams)
        << '\n';
}

}  // namespace rlhf::text_metrics
