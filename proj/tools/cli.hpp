#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rlhf/ppo_trainer/ppo.hpp"
#include "rlhf/pref_data/schedule.hpp"
#include "rlhf/reward_model/reward_model.hpp"
#include "rlhf/seq_model/lm_training.hpp"
#include "rlhf/seq_model/vocab.hpp"

namespace rlhf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

enum ExitCode : int { kOk = 0, kConfigError = 2, kRuntimeFailure = 3, kStopped = 4 };

// Bad or incomplete configuration; raised before any side effect.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunContext {
  std::string command;
  json config;
  std::uint64_t seed = 0;
  fs::path out;
};

struct CommandSpec {
  std::string name;
  std::string help;
  json defaults;
  // Registers command-specific flags; each writes one top-level config field.
  std::function<void(CLI::App&, json& flags)> add_flags;
  std::function<int(const RunContext&)> run;
};

std::vector<CommandSpec> train_commands();
std::vector<CommandSpec> rlhf_commands();
std::vector<CommandSpec> bench_commands();
std::vector<CommandSpec> text_commands();
std::vector<CommandSpec> service_commands();

// defaults <- config file (merge patch) <- flags <- --set key.path=value.
// Keys unknown to the defaults are rejected.
json resolve_config(const json& defaults, const std::string& config_path, const json& flags,
                    const std::vector<std::string>& sets);

// Creates the output directory and writes resolved_config.json into it.
void prepare_out(const RunContext& ctx);

// Flag helpers that store into `flags[key]`.
template <class T>
CLI::Option* flag_value(CLI::App& app, const std::string& name, json& flags, const std::string& key,
                        const std::string& help) {
  return app.add_option_function<T>(name, [&flags, key](const T& v) { flags[key] = v; }, help);
}
CLI::Option* flag_switch(CLI::App& app, const std::string& name, json& flags, const std::string& key,
                         const std::string& help);

// Config accessors that raise ConfigError with the key name.
template <class T>
T get(const json& j, const std::string& key) {
  if (!j.contains(key) || j.at(key).is_null()) throw ConfigError("missing config field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config field '" + key + "': " + e.what());
  }
}
fs::path existing_path(const json& j, const std::string& key);
std::optional<fs::path> optional_path(const json& j, const std::string& key);

// Wraps parsing of a config section, turning library validation errors into
// ConfigError.
template <class F>
auto parse_section(const std::string& what, F f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

std::vector<std::string> read_lines(const fs::path& path, bool skip_empty = true);
std::vector<json> read_jsonl(const fs::path& path);
void write_json(const fs::path& path, const json& j);
void write_jsonl(const fs::path& path, const std::vector<json>& rows);

seq_model::Vocab load_vocab(const fs::path& path);
// One context per line, tokenized.
seq_model::ContextSet load_contexts(const fs::path& path, const seq_model::Vocab& vocab);

reward_model::RMTrainConfig rm_config(const json& j, reward_model::RMTrainConfig base);
json to_json(const reward_model::RMTrainConfig& c);
ppo_trainer::KLControllerState controller_config(const json& j, ppo_trainer::KLControllerState base);
json to_json(const ppo_trainer::KLControllerState& c);
pref_data::LabelSchedule schedule_config(const json& j);
// A PPO section whose constraint symbol may be spelled as a vocabulary symbol.
ppo_trainer::PPOConfig ppo_section(json j, ppo_trainer::PPOConfig base, const seq_model::Vocab* vocab);
std::optional<seq_model::SampleConstraint> constraint_config(const json& j, const seq_model::Vocab* vocab);

void reject_unknown(const json& given, const json& known, const std::string& section);

// SIGINT/SIGTERM set a flag that long-running commands poll.
void install_stop_signals();
bool interrupted();

void log_line(const std::string& msg);

}  // namespace rlhf::cli

namespace rlhf::cli {

// Logit temperature for either model family.
std::unique_ptr<seq_model::PolicyModel> scaled(const seq_model::PolicyModel& m, double t);

}  // namespace rlhf::cli
