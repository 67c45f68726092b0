#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "spdm/config.hpp"
#include "spdm/errors.hpp"

namespace spdm {

/// Raised by `verify` when at least one check fails.
class VerificationFailed : public Error {
 public:
  using Error::Error;
};

struct CommandContext {
  ExperimentConfig config;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  std::string hash;
};

/// Resolves seed overrides and the output directory and computes the hash.
CommandContext make_context(ExperimentConfig config, const std::string& out_dir,
                            std::optional<std::uint64_t> seed, std::size_t threads);

void cmd_gen_data(const CommandContext& ctx);
void cmd_train(const CommandContext& ctx);
void cmd_sample(const CommandContext& ctx);
void cmd_bridge(const CommandContext& ctx);
void cmd_nll(const CommandContext& ctx);
void cmd_metrics(const CommandContext& ctx);

struct VerifyCheck {
  std::string name;
  std::string comparison;  // "<=", ">", "==" against the tolerance
  double tolerance = 0.0;
  double observed = 0.0;
  bool passed = false;
};

/// Runs the invariant suite and writes verify.json. Throws VerificationFailed
/// after writing the report when any check fails.
std::vector<VerifyCheck> cmd_verify(const CommandContext& ctx);

/// Dispatches by name; returns the process exit code
/// (0 ok, 1 I/O, 2 configuration, 3 numerical, 4 verification failure).
int run_command(const std::string& name, const CommandContext& ctx);

}  // namespace spdm
