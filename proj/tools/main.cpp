#include <iostream>
#include <memory>

#include "cli.hpp"
#include "rlhf/label_service/server.hpp"
#include "rlhf/seq_model/lm_training.hpp"

using namespace rlhf::cli;

namespace {

struct Registered {
  CommandSpec spec;
  CLI::App* app = nullptr;
  json flags = json::object();
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Preference-learning toolkit: language models, reward models, PPO, labeling"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(rlhf::label_service::kVersion));

  std::vector<std::unique_ptr<Registered>> cmds;
  for (auto&& group : {train_commands(), rlhf_commands(), bench_commands(), text_commands(),
                       service_commands()})
    for (auto& spec : group) {
      auto r = std::make_unique<Registered>();
      r->spec = spec;
      r->app = app.add_subcommand(spec.name, spec.help);
      r->app->add_option("--config", r->config_path, "JSON config file")->check(CLI::ExistingFile);
      r->app->add_option("--seed", r->seed, "Master seed (overrides the config)");
      r->app->add_option("--out", r->out, "Output directory")->default_val("out/" + spec.name);
      r->app->add_option("--set", r->sets, "Override a config field: key.path=value");
      r->app->add_flag_callback("--print-defaults", [r = r.get()] {
        std::cout << r->spec.defaults.dump(2) << '\n';
        throw CLI::Success();
      }, "Print the default config and exit");
      if (spec.add_flags) spec.add_flags(*r->app, r->flags);
      cmds.push_back(std::move(r));
    }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  for (auto& r : cmds) {
    if (!r->app->parsed()) continue;
    RunContext ctx;
    ctx.command = r->spec.name;
    ctx.out = r->out;
    try {
      ctx.config = resolve_config(r->spec.defaults, r->config_path, r->flags, r->sets);
      if (r->seed) ctx.config["seed"] = *r->seed;
      ctx.seed = ctx.config.value("seed", std::uint64_t{0});
      return r->spec.run(ctx);
    } catch (const ConfigError& e) {
      std::cerr << "config error: " << e.what() << '\n';
      return kConfigError;
    } catch (const rlhf::seq_model::TrainingDiverged& e) {
      std::cerr << "training diverged: " << e.what() << '\n';
      return kRuntimeFailure;
    } catch (const std::exception& e) {
      std::cerr << "error: " << e.what() << '\n';
      return kRuntimeFailure;
    }
  }
  return kConfigError;
}
