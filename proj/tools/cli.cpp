#include "cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iostream>
#include <regex>

#include "rlhf/label_service/server.hpp"

namespace rlhf::cli {
namespace {

void check_known(const json& defaults, const json& given, const std::string& prefix) {
  if (!given.is_object() || !defaults.is_object() || defaults.empty()) return;
  for (const auto& [k, v] : given.items()) {
    if (!defaults.contains(k)) throw ConfigError("unknown config key '" + prefix + k + "'");
    check_known(defaults.at(k), v, prefix + k + ".");
  }
}

json parse_scalar(const std::string& s) {
  try {
    return json::parse(s);
  } catch (const json::exception&) {
    return s;
  }
}

}  // namespace

void reject_unknown(const json& given, const json& known, const std::string& section) {
  if (!given.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [k, v] : given.items())
    if (!known.contains(k)) throw ConfigError("unknown config key '" + section + "." + k + "'");
}

json resolve_config(const json& defaults, const std::string& config_path, const json& flags,
                    const std::vector<std::string>& sets) {
  json cfg = defaults;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw ConfigError("cannot read config file " + config_path);
    json file;
    try {
      file = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + config_path + ": " + e.what());
    }
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    check_known(defaults, file, "");
    cfg.merge_patch(file);
  }
  for (const auto& [k, v] : flags.items()) cfg[k] = v;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key.path=value, got '" + s + "'");
    const std::string path = "/" + std::regex_replace(s.substr(0, eq), std::regex("\\."), "/");
    const json::json_pointer ptr(path);
    if (!defaults.contains(ptr) && !cfg.contains(ptr)) throw ConfigError("unknown config key '" + s.substr(0, eq) + "'");
    cfg[ptr] = parse_scalar(s.substr(eq + 1));
  }
  return cfg;
}

void prepare_out(const RunContext& ctx) {
  fs::create_directories(ctx.out);
  write_json(ctx.out / "resolved_config.json", {{"command", ctx.command},
                                                {"version", label_service::kVersion},
                                                {"seed", ctx.seed},
                                                {"config", ctx.config}});
}

CLI::Option* flag_switch(CLI::App& app, const std::string& name, json& flags, const std::string& key,
                         const std::string& help) {
  return app.add_flag_function(name, [&flags, key](std::int64_t n) { flags[key] = n > 0; }, help);
}

fs::path existing_path(const json& j, const std::string& key) {
  const fs::path p = get<std::string>(j, key);
  if (!fs::exists(p)) throw ConfigError("config field '" + key + "': no such path " + p.string());
  return p;
}

std::optional<fs::path> optional_path(const json& j, const std::string& key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return existing_path(j, key);
}

std::vector<std::string> read_lines(const fs::path& path, bool skip_empty) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (skip_empty && line.empty()) continue;
    out.push_back(line);
  }
  return out;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::size_t n = 0;
  for (const auto& line : read_lines(path)) {
    ++n;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw std::runtime_error(path.string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

void write_jsonl(const fs::path& path, const std::vector<json>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& r : rows) out << r.dump() << '\n';
}

seq_model::Vocab load_vocab(const fs::path& path) {
  return parse_section("vocab " + path.string(), [&] { return seq_model::Vocab::load(path); });
}

seq_model::ContextSet load_contexts(const fs::path& path, const seq_model::Vocab& vocab) {
  std::vector<seq_model::TokenSeq> xs;
  for (const auto& line : read_lines(path))
    xs.push_back(parse_section("contexts " + path.string(), [&] { return vocab.tokenize(line); }));
  if (xs.empty()) throw ConfigError("contexts file " + path.string() + " is empty");
  return seq_model::ContextSet(std::move(xs));
}

reward_model::RMTrainConfig rm_config(const json& j, reward_model::RMTrainConfig c) {
  return parse_section("rm", [&] {
    reject_unknown(j, to_json(c), "rm");
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.dropout = j.value("dropout", c.dropout);
    c.train_backbone = j.value("train_backbone", c.train_backbone);
    if (!(c.lr > 0.0) || c.batch_size == 0 || c.epochs == 0)
      throw std::invalid_argument("lr, batch_size and epochs must be positive");
    return c;
  });
}

json to_json(const reward_model::RMTrainConfig& c) {
  return {{"lr", c.lr}, {"batch_size", c.batch_size}, {"epochs", c.epochs},
          {"dropout", c.dropout}, {"train_backbone", c.train_backbone}};
}

ppo_trainer::KLControllerState controller_config(const json& j, ppo_trainer::KLControllerState c) {
  return parse_section("controller", [&] {
    c.beta = j.value("beta", c.beta);
    if (j.contains("target_kl"))
      c.target_kl = j["target_kl"].is_null() ? std::nullopt : std::optional<double>(j["target_kl"].get<double>());
    c.k_beta = j.value("k_beta", c.k_beta);
    c.clip = j.value("clip", c.clip);
    c.validate();
    return c;
  });
}

json to_json(const ppo_trainer::KLControllerState& c) {
  return {{"beta", c.beta},
          {"target_kl", c.target_kl ? json(*c.target_kl) : json(nullptr)},
          {"k_beta", c.k_beta},
          {"clip", c.clip}};
}

pref_data::LabelSchedule schedule_config(const json& j) {
  return parse_section("schedule", [&] {
    pref_data::LabelSchedule s{get<std::size_t>(j, "n_r0"), get<std::size_t>(j, "n_r"),
                               get<std::size_t>(j, "n_pi")};
    s.validate();
    return s;
  });
}

std::optional<seq_model::SampleConstraint> constraint_config(const json& j, const seq_model::Vocab* vocab) {
  if (j.is_null()) return std::nullopt;
  return parse_section("constraint", [&] {
    seq_model::TokenId sym = 0;
    if (j.at("symbol").is_string()) {
      if (!vocab) throw std::invalid_argument("symbolic constraint needs a vocabulary");
      const auto id = vocab->find(j.at("symbol").get<std::string>());
      if (!id) throw std::invalid_argument("symbol not in vocabulary");
      sym = *id;
    } else {
      sym = j.at("symbol").get<seq_model::TokenId>();
    }
    return std::optional<seq_model::SampleConstraint>(
        seq_model::SampleConstraint{sym, j.at("window_lo").get<std::size_t>(), j.at("window_hi").get<std::size_t>()});
  });
}

ppo_trainer::PPOConfig ppo_section(json j, ppo_trainer::PPOConfig base, const seq_model::Vocab* vocab) {
  return parse_section("ppo", [&] {
    json known;
    ppo_trainer::to_json(known, base);
    reject_unknown(j, known, "ppo");
    std::optional<seq_model::SampleConstraint> c = base.constraint;
    if (j.contains("constraint")) {
      c = constraint_config(j["constraint"], vocab);
      j.erase("constraint");
    }
    auto p = ppo_trainer::ppo_config_from_json(j, base);
    p.constraint = c;
    p.validate();
    return p;
  });
}

namespace {
std::atomic<bool> g_interrupted{false};
extern "C" void on_stop_signal(int) { g_interrupted.store(true); }
}  // namespace

void install_stop_signals() {
  std::signal(SIGINT, on_stop_signal);
  std::signal(SIGTERM, on_stop_signal);
}

bool interrupted() { return g_interrupted.load(); }

void log_line(const std::string& msg) { std::cerr << "[rlhf] " << msg << std::endl; }

}  // namespace rlhf::cli

namespace rlhf::cli {

std::unique_ptr<seq_model::PolicyModel> scaled(const seq_model::PolicyModel& m, double t) {
  if (t == 1.0) return m.clone();
  if (const auto* n = dynamic_cast<const seq_model::NeuralLM*>(&m))
    return std::make_unique<seq_model::NeuralLM>(seq_model::apply_temperature(*n, t));
  if (const auto* tab = dynamic_cast<const seq_model::TabularLM*>(&m))
    return std::make_unique<seq_model::TabularLM>(tab->with_temperature(t));
  throw std::invalid_argument("temperature: unsupported model kind " + m.kind());
}

}  // namespace rlhf::cli
