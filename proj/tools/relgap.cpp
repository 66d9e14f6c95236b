#include "relgap/harness.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

namespace {

using relgap::harness::kFailure;
using relgap::harness::kUsage;

int dispatch(int argc, char** argv) {
  CLI::App app{"relgap: value-relativity verification and transfer experiments"};
  app.allow_extras();

  std::string command;
  std::string config_path;
  std::string out_dir;
  std::string mdp_path;
  std::vector<std::string> seed_list;
  int jobs = 1;
  bool require_pretrained = false;

  app.add_option("command", command, "verify, pretrain or transfer")
      ->required()
      ->check(CLI::IsMember({"verify", "pretrain", "transfer"}));
  app.add_option("--config", config_path, "configuration file")->required();
  app.add_option("--jobs", jobs, "number of seeds run in parallel")->check(CLI::PositiveNumber);
  app.add_option("--out", out_dir, "output directory (default: $RELGAP_OUT, then ./relgap_out)");
  app.add_option("--seed-list", seed_list, "seeds, overriding experiment.seeds")->expected(1, -1);
  app.add_option("--mdp", mdp_path, "MDP file used as the source of every verify instance");
  app.add_flag("--require-pretrained", require_pretrained,
               "fail instead of pretraining when a checkpoint is missing");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : kUsage;
  }

  relgap::Config config = relgap::harness::default_config();
  try {
    config.read_file(config_path);
    for (const std::string& extra : app.remaining()) {
      if (extra.rfind("--", 0) != 0 || extra.find('=') == std::string::npos) {
        std::cerr << "error: unexpected argument '" << extra << "' (overrides use --key=value)\n";
        return kUsage;
      }
      const auto eq = extra.find('=');
      config.set(extra.substr(2, eq - 2), extra.substr(eq + 1));
    }
    if (!seed_list.empty()) {
      std::string joined;
      for (const auto& s : seed_list) joined += s + ",";
      config.set("experiment.seeds", joined);
    }
  } catch (const relgap::ParseError& e) {
    std::cerr << config_path << ": " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  if (out_dir.empty()) {
    const char* env = std::getenv("RELGAP_OUT");
    out_dir = env && *env ? env : "relgap_out";
  }

  try {
    if (command == "verify") return relgap::harness::run_verify(config, out_dir, mdp_path, jobs, std::cout);
    if (command == "pretrain") return relgap::harness::run_pretrain(config, out_dir, jobs, std::cout);
    return relgap::harness::run_transfer_experiment(config, out_dir, jobs, require_pretrained,
                                                    std::cout);
  } catch (const relgap::harness::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const relgap::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const relgap::ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kUsage;
  } catch (const relgap::NanError& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) { return dispatch(argc, argv); }
