#include <fstream>
#include <set>

#include "cli.hpp"

namespace rlhf::cli {
namespace {

using seq_model::NeuralLM;
using seq_model::TokenSeq;

// Characters of the corpus, sorted; used when no vocabulary file is given.
seq_model::Vocab char_vocab(const std::vector<std::string>& docs) {
  std::set<std::string> chars;
  for (const auto& d : docs)
    for (char c : d) chars.insert(std::string(1, c));
  return seq_model::Vocab(std::vector<std::string>(chars.begin(), chars.end()));
}

void write_train_log(const fs::path& path, const seq_model::TrainLog& log) {
  std::ofstream out(path);
  for (std::size_t i = 0; i < log.step_loss.size(); ++i)
    out << json{{"step", i}, {"loss", log.step_loss[i]}, {"lr", log.step_lr[i]}}.dump() << '\n';
  for (std::size_t e = 0; e < log.epoch_nll.size(); ++e)
    out << json{{"epoch", e}, {"nll", log.epoch_nll[e]}}.dump() << '\n';
}

int train_lm(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto corpus_path = existing_path(c, "corpus");
  const auto vocab_path = optional_path(c, "vocab");
  const auto kind = get<std::string>(c, "model");
  if (kind != "neural" && kind != "tabular") throw ConfigError("model must be neural or tabular");
  const auto docs = read_lines(corpus_path);
  if (docs.empty()) throw ConfigError("corpus " + corpus_path.string() + " is empty");
  const auto vocab = vocab_path ? load_vocab(*vocab_path) : char_vocab(docs);
  std::vector<TokenSeq> corpus;
  for (const auto& d : docs) corpus.push_back(parse_section("corpus", [&] { return vocab.tokenize(d); }));
  const double temperature = get<double>(c, "temperature");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");

  seq_model::LmTrainConfig tc;
  seq_model::NeuralConfig nc;
  if (kind == "neural") {
    const auto& t = c.at("train");
    tc = parse_section("train", [&] {
      seq_model::LmTrainConfig x;
      x.epochs = t.value("epochs", x.epochs);
      x.lr = t.value("lr", x.lr);
      x.batch_size = t.value("batch_size", x.batch_size);
      x.dropout = t.value("dropout", x.dropout);
      x.max_steps = t.value("max_steps", x.max_steps);
      x.seed = derive_seed(ctx.seed, 1);
      return x;
    });
    nc = parse_section("neural", [&] {
      auto j = c.at("neural");
      j["vocab_size"] = vocab.size();
      return j.get<seq_model::NeuralConfig>();
    });
  }

  prepare_out(ctx);
  vocab.save(ctx.out / "vocab.txt");
  std::unique_ptr<seq_model::PolicyModel> model;
  if (kind == "neural") {
    NeuralLM lm(nc, derive_seed(ctx.seed, 0));
    const auto log = seq_model::train_lm(lm, corpus, tc);
    write_train_log(ctx.out / "train_log.jsonl", log);
    model = std::make_unique<NeuralLM>(std::move(lm));
  } else {
    const auto& t = c.at("tabular");
    model = std::make_unique<seq_model::TabularLM>(
        seq_model::fit_tabular(corpus, vocab.size(), t.value("order", std::size_t{2}), t.value("alpha", 0.5)));
  }
  model = scaled(*model, temperature);
  seq_model::save_model(*model, ctx.out / "model.ckpt");
  const double nll = seq_model::mean_nll(*model, corpus);
  write_json(ctx.out / "summary.json", {{"model", kind}, {"documents", corpus.size()},
                                        {"vocab_size", vocab.size()}, {"train_nll", nll}});
  log_line("wrote " + (ctx.out / "model.ckpt").string() + " (train NLL " + std::to_string(nll) + ")");
  return kOk;
}

int finetune(const RunContext& ctx) {
  const auto& c = ctx.config;
  const auto model_path = existing_path(c, "model");
  const auto vocab = load_vocab(existing_path(c, "vocab"));
  const auto pairs_path = existing_path(c, "pairs");
  std::vector<std::pair<TokenSeq, TokenSeq>> pairs;
  for (const auto& j : read_jsonl(pairs_path))
    pairs.emplace_back(parse_section("pairs", [&] { return vocab.tokenize(j.at("x").get<std::string>()); }),
                       parse_section("pairs", [&] { return vocab.tokenize(j.at("y").get<std::string>()); }));
  if (pairs.empty()) throw ConfigError("pairs file " + pairs_path.string() + " is empty");
  auto base = seq_model::load_model(model_path);
  auto* lm = dynamic_cast<NeuralLM*>(base.get());
  if (!lm) throw ConfigError("finetune needs a neural model, got " + base->kind());
  if (lm->vocab_size() != vocab.size()) throw ConfigError("model and vocabulary sizes differ");
  const auto& f = c.at("finetune");
  const auto fc = parse_section("finetune", [&] {
    seq_model::FinetuneConfig x;
    x.lr = f.value("lr", x.lr);
    x.batch_size = f.value("batch_size", x.batch_size);
    x.dropout = f.value("dropout", x.dropout);
    x.seed = derive_seed(ctx.seed, 2);
    return x;
  });

  prepare_out(ctx);
  const auto log = seq_model::supervised_finetune(*lm, pairs, fc);
  write_train_log(ctx.out / "train_log.jsonl", log);
  seq_model::save_model(*lm, ctx.out / "model.ckpt");
  vocab.save(ctx.out / "vocab.txt");
  log_line("fine-tuned on " + std::to_string(pairs.size()) + " pairs");
  return kOk;
}

}  // namespace

std::vector<CommandSpec> train_commands() {
  const json train_defaults = {
      {"seed", 0},
      {"corpus", nullptr},
      {"vocab", nullptr},
      {"model", "neural"},
      {"neural", {{"n_layers", 2}, {"n_heads", 2}, {"d_model", 64}, {"context_len", 64}, {"init_std", 0.02}}},
      {"tabular", {{"order", 2}, {"alpha", 0.5}}},
      {"train", {{"epochs", 1}, {"lr", 1e-3}, {"batch_size", 8}, {"dropout", 0.0}, {"max_steps", 0}}},
      {"temperature", 1.0}};
  const json finetune_defaults = {
      {"seed", 0},
      {"model", nullptr},
      {"vocab", nullptr},
      {"pairs", nullptr},
      {"finetune", {{"lr", 1e-4}, {"batch_size", 8}, {"dropout", 0.1}}}};
  return {
      {"train-lm", "Train a tabular or neural language model on a text corpus (one document per line)",
       train_defaults,
       [](CLI::App& app, json& flags) {
         flag_value<std::string>(app, "--corpus", flags, "corpus", "Corpus file");
         flag_value<std::string>(app, "--vocab", flags, "vocab", "Vocabulary file (default: corpus characters)");
         flag_value<std::string>(app, "--model", flags, "model", "neural or tabular");
       },
       train_lm},
      {"finetune", "Supervised fine-tuning of a neural model on (x, y) pairs", finetune_defaults,
       [](CLI::App& app, json& flags) {
         flag_value<std::string>(app, "--model", flags, "model", "Model checkpoint");
         flag_value<std::string>(app, "--vocab", flags, "vocab", "Vocabulary file");
         flag_value<std::string>(app, "--pairs", flags, "pairs", "JSONL of {x, y}");
       },
       finetune},
  };
}

}  // namespace rlhf::cli
