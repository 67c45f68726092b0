#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "spdm/diffusion.hpp"
#include "spdm/group.hpp"
#include "spdm/score_oracle.hpp"
#include "spdm/trainer.hpp"

namespace spdm {

struct ScheduleSpec {
  std::string kind = "vp";
  double beta_min = 0.1;
  double beta_max = 20.0;
  double sigma_min = 0.01;
  double sigma_max = 10.0;
  double horizon = 1.0;

  Schedule build() const;
};

/// tag: "none", "flip_v", "flip_h", "C4", "D4" for either domain, or "C<n>",
/// "D<n>" for the 2D point domain.
struct GroupSpec {
  std::string tag = "C4";
  std::string domain = "point";  // "point" or "grid"
  std::vector<std::size_t> grid{8, 8, 1};

  bool enabled() const { return tag != "none"; }
  /// Throws ConfigError.
  IsometryGroup build() const;
  /// The same tag acting on H × W × C grids.
  IsometryGroup build_grid(GridShape shape) const;
};

struct DataSpec {
  std::vector<MixtureComponent> components;
  bool symmetrize = true;
  std::size_t samples = 2000;

  /// The mixture actually used: symmetrized over the group when requested.
  GaussianMixture build(const std::optional<IsometryGroup>& group) const;
};

struct ModelSpec {
  std::string kind = "oracle";  // oracle | mlp | mlp+fa | mlp+wt
  std::vector<std::size_t> hidden{64, 64};
};

struct TrainSpec {
  TrainerConfig trainer;
  std::string mode = "plain";  // plain | regularized | weight_tied
  bool resume = false;
};

struct SamplerSpec {
  double lambda = 1.0;
  std::size_t steps = 400;
  std::size_t samples = 1000;
  bool equivariant_noise = false;
};

struct BridgeSpec {
  double tau = 1.0;
  std::size_t steps = 200;
  std::size_t inputs = 16;
  double coupling_scale = 0.8;
  double noise_variance = 0.1;
  /// Size of the non-equivariant perturbation added to the bridge score.
  double perturbation = 1.0;
  bool frame_average = true;
  bool equivariant_noise = true;
};

struct NllSpec {
  std::size_t steps = 1000;
  std::string divergence = "exact_fd";
  std::size_t probes = 16;
  std::size_t points = 20;
  std::size_t dequantization_bins = 0;
};

struct MetricsSpec {
  std::vector<std::string> list{"energy", "fid", "inv_fid", "nll"};
  std::size_t permutations = 200;
  std::size_t feature_dim = 64;
};

struct VerifySpec {
  /// "" or "closure": corrupts one group table entry before the axiom checks.
  std::string inject_fault;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::string output_dir;
  ScheduleSpec schedule;
  GroupSpec group;
  DataSpec data;
  ModelSpec model;
  TrainSpec train;
  SamplerSpec sampler;
  BridgeSpec bridge;
  NllSpec nll;
  MetricsSpec metrics;
  VerifySpec verify;
};

/// Defaults with a two-component 2D mixture.
ExperimentConfig default_config();

/// Parses and validates; unknown keys and bad values throw ConfigError.
ExperimentConfig parse_config(const nlohmann::json& j);
ExperimentConfig load_config(const std::string& path);

/// Fully resolved configuration (defaults filled in).
nlohmann::json to_json(const ExperimentConfig& c);

/// FNV-1a 64 of the resolved configuration's canonical dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);

}  // namespace spdm
