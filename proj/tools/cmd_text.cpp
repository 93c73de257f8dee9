#include <fstream>

#include "rlhf/text_metrics/analysis.hpp"
#include "cli.hpp"

namespace rlhf::cli {
namespace {

namespace tm = text_metrics;

std::vector<tm::PairInput> load_pairs(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read " + path.string());
  auto pairs = parse_section("pairs " + path.string(), [&] { return tm::read_pairs(in); });
  if (pairs.empty()) throw ConfigError("pairs file " + path.string() + " is empty");
  return pairs;
}

std::optional<tm::LeadTruncation> lead_window(const json& c) {
  const auto& w = c.at("lead3_window");
  if (w.is_null()) return std::nullopt;
  const auto v = get<std::vector<std::size_t>>(c, "lead3_window");
  if (v.size() != 2 || v[0] > v[1]) throw ConfigError("lead3_window must be [lo, hi] with lo <= hi");
  return tm::LeadTruncation{v[0], v[1]};
}

std::string baseline(const json& c) {
  const auto b = c.at("baseline").is_null() ? std::string() : get<std::string>(c, "baseline");
  if (!b.empty() && b != "lead3") throw ConfigError("baseline must be lead3");
  return b;
}

void write_analysis(const tm::AnalysisReport& r, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  tm::write_report(r, out);
}

int analyze(const RunContext& ctx) {
  const auto& c = ctx.config;
  auto pairs = load_pairs(existing_path(c, "pairs"));
  tm::AnalysisOptions opt;
  opt.kind = parse_section("kind", [&] { return tm::dataset_kind_from_string(get<std::string>(c, "kind")); });
  const auto count = get<std::string>(c, "count");
  if (count != "occurrences" && count != "types") throw ConfigError("count must be occurrences or types");
  opt.count = count == "types" ? tm::CountMode::kTypes : tm::CountMode::kOccurrences;
  opt.n_threads = std::max<std::size_t>(1, get<std::size_t>(c, "threads"));
  const auto base = baseline(c);
  const auto window = lead_window(c);
  const bool plot = get<bool>(c, "plot");

  prepare_out(ctx);
  const auto report = tm::analyze(pairs, opt);
  write_analysis(report, ctx.out / "report.jsonl");
  if (plot) tm::write_plot_data(report, ctx.out / "plot");
  json summary = {{"pairs", pairs.size()}, {"aggregate", report.aggregate}};
  if (base == "lead3") {
    for (auto& p : pairs) p.summary = tm::lead3(p.source, window);
    const auto lead = tm::analyze(pairs, opt);
    write_analysis(lead, ctx.out / "lead3_report.jsonl");
    if (plot) tm::write_plot_data(lead, ctx.out / "plot_lead3");
    summary["lead3"] = lead.aggregate;
  }
  write_json(ctx.out / "summary.json", summary);
  log_line("analyzed " + std::to_string(pairs.size()) + " pairs");
  return kOk;
}

int rouge(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto path = existing_path(c, "pairs");
  const auto field = get<std::string>(c, "reference");
  const auto base = baseline(c);
  const auto window = lead_window(c);
  const auto rows = parse_section("pairs " + path.string(), [&] { return read_jsonl(path); });
  if (rows.empty()) throw ConfigError("pairs file " + path.string() + " is empty");
  struct Row {
    std::string id, candidate, reference;
  };
  std::vector<Row> items;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& j = rows[i];
    const std::string where = path.string() + " line " + std::to_string(i + 1);
    if (!j.contains(field) || !j.at(field).is_string())
      throw ConfigError(where + ": no reference column '" + field + "'");
    Row r;
    r.id = j.contains("id") ? (j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump()) : std::to_string(i);
    r.reference = j.at(field).get<std::string>();
    if (base == "lead3") {
      const auto p = parse_section(where, [&] { return tm::pair_from_json(j); });
      r.candidate = tm::lead3(p.source, window);
    } else {
      if (!j.contains("summary") || !j.at("summary").is_string()) throw ConfigError(where + ": no summary column");
      r.candidate = j.at("summary").get<std::string>();
    }
    items.push_back(std::move(r));
  }

  prepare_out(ctx);
  std::vector<json> out;
  tm::RougeScores mean;
  for (const auto& r : items) {
    const auto s = parse_section("rouge " + r.id, [&] { return tm::rouge(r.candidate, r.reference); });
    out.push_back({{"id", r.id}, {"r1", s.r1}, {"r2", s.r2}, {"rl", s.rl}, {"r_avg", s.r_avg}});
    mean.r1 += s.r1;
    mean.r2 += s.r2;
    mean.rl += s.rl;
    mean.r_avg += s.r_avg;
  }
  const double n = static_cast<double>(items.size());
  write_jsonl(ctx.out / "rouge.jsonl", out);
  const json agg = {{"pairs", items.size()}, {"candidate", base.empty() ? "summary" : base},
                    {"r1", mean.r1 / n}, {"r2", mean.r2 / n}, {"rl", mean.rl / n}, {"r_avg", mean.r_avg / n}};
  write_json(ctx.out / "summary.json", agg);
  std::cout << agg.dump() << '\n';
  return kOk;
}

}  // namespace

std::vector<CommandSpec> text_commands() {
  const json analyze_defaults = {{"seed", 0},        {"pairs", nullptr}, {"kind", "tldr"},
                                 {"count", "occurrences"}, {"threads", 1}, {"baseline", nullptr},
                                 {"lead3_window", nullptr}, {"plot", false}};
  const json rouge_defaults = {{"seed", 0},         {"pairs", nullptr},         {"reference", "reference"},
                               {"baseline", nullptr}, {"lead3_window", nullptr}};
  return {
      {"analyze", "Copying, repetition, ROUGE and LCS statistics over (source, summary) pairs",
       analyze_defaults,
       [](CLI::App& app, json& flags) {
         flag_value<std::string>(app, "--pairs", flags, "pairs", "JSONL with source and summary fields");
         flag_value<std::string>(app, "--kind", flags, "kind", "tldr or cnndm");
         flag_value<std::string>(app, "--count", flags, "count", "occurrences or types");
         flag_value<std::string>(app, "--baseline", flags, "baseline", "lead3");
         flag_value<std::size_t>(app, "--threads", flags, "threads", "Worker threads");
         flag_switch(app, "--plot", flags, "plot", "Write plot-data series");
       },
       analyze},
      {"rouge", "ROUGE-1/2/L F1 of summaries against a reference column", rouge_defaults,
       [](CLI::App& app, json& flags) {
         flag_value<std::string>(app, "--pairs", flags, "pairs", "JSONL with summary and reference fields");
         flag_value<std::string>(app, "--reference", flags, "reference", "Name of the reference column");
         flag_value<std::string>(app, "--baseline", flags, "baseline", "lead3: score lead-3 of the source instead");
       },
       rouge},
  };
}

}  // namespace rlhf::cli
