// attclf: command-line front end.
//
// Exit codes: 0 success, 2 validation error, 3 failed --assert-ordering,
// 4 runtime error.

#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "attclf/commands.hpp"

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitAssertion = 3;
constexpr int kExitRuntime = 4;

struct CommonOptions {
  std::string config;
  std::vector<std::string> overrides;
  std::string seed;
  std::string out;

  attclf::RunConfig load() const {
    std::string file = config;
    if (file.empty()) {
      if (const char* env = std::getenv("ATTCLF_CONFIG")) file = env;
    }
    std::vector<std::string> all = overrides;
    if (!seed.empty()) all.push_back("seed=" + seed);
    if (!out.empty()) all.push_back("out=\"" + out + "\"");
    return attclf::load_run_config(file, all);
  }
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("-c,--config", o.config, "JSON config file (default: $ATTCLF_CONFIG, else built-in defaults)");
  cmd->add_option("--set", o.overrides, "override a config entry, e.g. --set clf.epsilon=2.0")->take_all();
  cmd->add_option("--seed", o.seed, "top-level seed");
  cmd->add_option("-o,--out", o.out, "output directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-parameterized CLF-QP lane keeping: tracks, expert data, training, benchmarks"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(attclf::kToolVersion));

  CommonOptions opt;
  std::string mode = "true";
  bool resume = false;
  bool assert_ordering = false;
  std::string sweep_parameter;
  std::vector<double> sweep_values;
  bool print_config = false;

  auto* gen = app.add_subcommand("generate-tracks", "write the seeded curvy track suite");
  auto* col = app.add_subcommand("collect-expert", "roll out the NMPC expert and write the training set");
  auto* trn = app.add_subcommand("train", "fit an attention head to the expert data");
  auto* ben = app.add_subcommand("benchmark", "paired-seed comparison of all controllers");
  auto* swp = app.add_subcommand("sweep", "fixed-CLF sensitivity to one parameter");
  auto* cfg = app.add_subcommand("config", "print the merged configuration and its hash");
  for (auto* c : {gen, col, trn, ben, swp, cfg}) add_common(c, opt);
  trn->add_option("--mode", mode, "observation mode")->check(CLI::IsMember({"true", "estimated"}));
  trn->add_flag("--resume", resume, "continue from the stored checkpoint of this mode");
  ben->add_flag("--assert-ordering", assert_ordering, "exit 3 unless NMPC < att-CLF < fixed CLF");
  swp->add_option("--parameter", sweep_parameter, "parameter name, e.g. clf.epsilon");
  swp->add_option("--values", sweep_values, "comma-separated values")->delimiter(',');
  cfg->add_flag("--json", print_config, "print the full merged JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    if (!sweep_parameter.empty()) opt.overrides.push_back("sweep.parameter=\"" + sweep_parameter + "\"");
    if (!sweep_values.empty()) {
      std::string list = "[";
      for (std::size_t i = 0; i < sweep_values.size(); ++i) list += (i ? "," : "") + attclf::csv::fmt(sweep_values[i]);
      opt.overrides.push_back("sweep.values=" + list + "]");
    }
    const attclf::RunConfig rc = opt.load();
    if (*gen) attclf::cmd_generate_tracks(rc, std::cout);
    if (*col) attclf::cmd_collect_expert(rc, std::cout);
    if (*trn) attclf::cmd_train(rc, attclf::parse_observation_mode(mode), resume, std::cout);
    if (*ben) attclf::cmd_benchmark(rc, assert_ordering, std::cout);
    if (*swp) {
      attclf::find_sweep_parameter(rc.sweep_parameter);
      attclf::cmd_sweep(rc, std::cout);
    }
    if (*cfg) {
      if (print_config) std::cout << rc.raw.dump(2) << '\n';
      (print_config ? std::cerr : std::cout) << "config=" << rc.hash << '\n';
    }
  } catch (const attclf::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return kExitValidation;
  } catch (const attclf::AssertionFailure& e) {
    std::cerr << "assertion failed: " << e.what() << '\n';
    return kExitAssertion;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return 0;
}
