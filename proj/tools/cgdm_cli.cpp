// Command-line front end: synth | calibrate | train | estimate | compare.
//
// Exit codes: 0 success, 2 validation or configuration error, 3 missing
// artifact, 4 numerical failure.

#include "cgdm/errors.hpp"
#include "cgdm/parallel.hpp"
#include "cgdm/pipeline.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const cgdm::MissingArtifactError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const cgdm::NumericalError*>(&e) != nullptr) return 4;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compressive covariance estimation with diffusion-preconditioned gradients"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<unsigned> threads;
  std::string method;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "Master seed");
    cmd->add_option("--out", out, "Output directory");
    cmd->add_option("--threads", threads, "Worker thread cap")->check(CLI::PositiveNumber);
    cmd->add_option("--set", overrides, "Override a config value, e.g. solver.max_iters=100");
  };
  auto* synth = app.add_subcommand("synth", "Write a synthetic cube and its true covariance");
  auto* calibrate = app.add_subcommand("calibrate", "Measure partition noise and write the diffusion schedule");
  auto* train = app.add_subcommand("train", "Build a training set and train the noise predictor");
  auto* estimate = app.add_subcommand("estimate", "Estimate the covariance of the cube");
  auto* compare = app.add_subcommand("compare", "Paired comparison of the three preconditioners");
  for (auto* cmd : {synth, calibrate, train, estimate, compare}) add_common(cmd);
  estimate->add_option("--method", method, "identity | gaussian | diffusion")
      ->check(CLI::IsMember({"identity", "gaussian", "diffusion"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    std::vector<std::string> sets = overrides;
    if (seed) sets.push_back("seed=" + std::to_string(*seed));
    if (out) sets.push_back("out=" + nlohmann::json(*out).dump());
    if (threads) sets.push_back("threads=" + std::to_string(*threads));
    if (!method.empty()) sets.push_back("solver.method=\"" + method + "\"");
    const std::filesystem::path path(config_path);
    const cgdm::RunConfig cfg = cgdm::load_config(config_path.empty() ? nullptr : &path, sets);
    if (cfg.threads > 0) cgdm::set_max_threads(cfg.threads);
    const cgdm::Log log = [](const std::string& line) { std::cout << line << std::endl; };

    if (synth->parsed()) cgdm::cmd_synth(cfg, log);
    else if (calibrate->parsed()) cgdm::cmd_calibrate(cfg, log);
    else if (train->parsed()) cgdm::cmd_train(cfg, log);
    else if (estimate->parsed()) cgdm::cmd_estimate(cfg, log);
    else if (compare->parsed()) cgdm::cmd_compare(cfg, log);
  } catch (const cgdm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
