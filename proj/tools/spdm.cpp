#include <cstdio>
#include <cstdlib>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "spdm/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Structure-preserving diffusion toolkit"};
  app.require_subcommand(1, 1);

  std::string config_path, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
  const char* commands[][2] = {
      {"gen-data", "sample the configured mixture"},
      {"train", "train a score network"},
      {"sample", "run the reverse-SDE sampler"},
      {"bridge", "run the bridge sampler and its equivariance ablation"},
      {"nll", "PF-ODE likelihoods over all group elements"},
      {"metrics", "Fréchet, Inv-FID, energy test and scatter plots"},
      {"verify", "run the invariant suite"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "JSON configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the configured seed");
    sub->add_option("--threads", threads, "worker threads (default: SPDM_THREADS or 1)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  std::size_t worker_count = 1;
  if (threads) {
    worker_count = *threads;
  } else if (const char* env = std::getenv("SPDM_THREADS")) {
    worker_count = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
  }

  try {
    spdm::ExperimentConfig config =
        config_path.empty() ? spdm::default_config() : spdm::load_config(config_path);
    const auto ctx = spdm::make_context(std::move(config), out_dir, seed, worker_count);
    return spdm::run_command(command, ctx);
  } catch (const spdm::IoError& e) {
    std::fprintf(stderr, "spdm: I/O error: %s\n", e.what());
    return 1;
  } catch (const spdm::Error& e) {
    std::fprintf(stderr, "spdm: configuration error: %s\n", e.what());
    return 2;
  }
}
