#include "spdm/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "spdm/errors.hpp"

namespace spdm {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + section);
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ConfigError(message);
}

std::optional<std::size_t> cyclic_order(const std::string& tag, char letter) {
  if (tag.size() < 2 || tag[0] != letter) return std::nullopt;
  for (std::size_t i = 1; i < tag.size(); ++i)
    if (tag[i] < '0' || tag[i] > '9') return std::nullopt;
  return std::stoul(tag.substr(1));
}

}  // namespace

Schedule ScheduleSpec::build() const {
  try {
    if (kind == "vp") return vp_schedule(beta_min, beta_max, horizon);
    if (kind == "ve") return ve_schedule(sigma_min, sigma_max, horizon);
  } catch (const InvalidParams& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
  throw ConfigError("schedule.kind must be 'vp' or 've'");
}

IsometryGroup GroupSpec::build() const {
  if (domain == "grid") {
    require(grid.size() == 3, "group.grid must be [height, width, channels]");
    return build_grid(GridShape{grid[0], grid[1], grid[2]});
  }
  require(domain == "point", "group.domain must be 'point' or 'grid'");
  if (tag == "none") return make_trivial_group(2);
  if (tag == "flip_v") return IsometryGroup("flip_v_point", make_point_group_2d(1, true).elements());
  if (tag == "flip_h") {
    Matrix m(2, 2);
    m << -1, 0, 0, 1;
    return IsometryGroup("flip_h_point",
                         {GroupElement::point(0, "e", Matrix::Identity(2, 2)), GroupElement::point(1, "flip_h", m)});
  }
  if (auto n = cyclic_order(tag, 'C')) {
    require(*n >= 1, "group order must be positive");
    return make_point_group_2d(*n, false);
  }
  if (auto n = cyclic_order(tag, 'D')) {
    require(*n >= 1, "group order must be positive");
    return make_point_group_2d(*n, true);
  }
  throw ConfigError("unknown group tag '" + tag + "'");
}

IsometryGroup GroupSpec::build_grid(GridShape shape) const {
  try {
    if (tag == "none") return IsometryGroup("none", {GroupElement::grid(0, "e", shape, [&] {
                                              std::vector<std::size_t> id(shape.pixels());
                                              for (std::size_t i = 0; i < id.size(); ++i) id[i] = i;
                                              return id;
                                            }())});
    if (tag == "flip_v") return make_flip_group(FlipAxis::vertical, shape);
    if (tag == "flip_h") return make_flip_group(FlipAxis::horizontal, shape);
    if (tag == "C4") return make_c4_group(shape);
    if (tag == "D4") return make_d4_group(shape);
  } catch (const Error& e) {
    throw ConfigError(std::string("group: ") + e.what());
  }
  throw ConfigError("group tag '" + tag + "' has no grid form");
}

GaussianMixture DataSpec::build(const std::optional<IsometryGroup>& group) const {
  require(!components.empty(), "data.components must not be empty");
  try {
    GaussianMixture m(components);
    if (symmetrize && group) return spdm::symmetrize(m, *group);
    return m;
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
}

ExperimentConfig default_config() {
  ExperimentConfig c;
  Vector m1(2), m2(2);
  m1 << 1.5, 0.5;
  m2 << 0.3, 1.2;
  c.data.components = {{0.6, m1, 0.05}, {0.4, m2, 0.08}};
  c.train.trainer.steps = 2000;
  c.train.trainer.batch_size = 128;
  return c;
}

ExperimentConfig parse_config(const json& j) {
  ExperimentConfig c = default_config();
  check_keys(j, {"seed", "output_dir", "schedule", "group", "data", "model", "train", "sampler", "bridge",
                 "nll", "metrics", "verify"},
             "config");
  read(j, "seed", c.seed, "config");
  read(j, "output_dir", c.output_dir, "config");

  if (j.contains("schedule")) {
    const auto& s = j["schedule"];
    check_keys(s, {"kind", "beta_min", "beta_max", "sigma_min", "sigma_max", "T"}, "schedule");
    read(s, "kind", c.schedule.kind, "schedule");
    read(s, "beta_min", c.schedule.beta_min, "schedule");
    read(s, "beta_max", c.schedule.beta_max, "schedule");
    read(s, "sigma_min", c.schedule.sigma_min, "schedule");
    read(s, "sigma_max", c.schedule.sigma_max, "schedule");
    read(s, "T", c.schedule.horizon, "schedule");
  }
  if (j.contains("group")) {
    const auto& g = j["group"];
    check_keys(g, {"tag", "domain", "grid"}, "group");
    read(g, "tag", c.group.tag, "group");
    read(g, "domain", c.group.domain, "group");
    read(g, "grid", c.group.grid, "group");
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"components", "symmetrize", "samples"}, "data");
    read(d, "symmetrize", c.data.symmetrize, "data");
    read(d, "samples", c.data.samples, "data");
    if (d.contains("components")) {
      require(d["components"].is_array(), "data.components must be an array");
      c.data.components.clear();
      for (const auto& comp : d["components"]) {
        check_keys(comp, {"weight", "mean", "variance"}, "data.components[]");
        MixtureComponent mc;
        std::vector<double> mean;
        read(comp, "weight", mc.weight, "data.components[]");
        read(comp, "mean", mean, "data.components[]");
        read(comp, "variance", mc.variance, "data.components[]");
        mc.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        c.data.components.push_back(std::move(mc));
      }
    }
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, {"kind", "hidden"}, "model");
    read(m, "kind", c.model.kind, "model");
    read(m, "hidden", c.model.hidden, "model");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"learning_rate", "batch_size", "steps", "ema_rate", "regularizer_weight", "mode", "resume"},
               "train");
    read(t, "learning_rate", c.train.trainer.learning_rate, "train");
    read(t, "batch_size", c.train.trainer.batch_size, "train");
    read(t, "steps", c.train.trainer.steps, "train");
    read(t, "ema_rate", c.train.trainer.ema_rate, "train");
    read(t, "regularizer_weight", c.train.trainer.regularizer_weight, "train");
    read(t, "mode", c.train.mode, "train");
    read(t, "resume", c.train.resume, "train");
  }
  if (j.contains("sampler")) {
    const auto& s = j["sampler"];
    check_keys(s, {"lambda", "steps", "samples", "equivariant_noise"}, "sampler");
    read(s, "lambda", c.sampler.lambda, "sampler");
    read(s, "steps", c.sampler.steps, "sampler");
    read(s, "samples", c.sampler.samples, "sampler");
    read(s, "equivariant_noise", c.sampler.equivariant_noise, "sampler");
  }
  if (j.contains("bridge")) {
    const auto& b = j["bridge"];
    check_keys(b, {"tau", "steps", "inputs", "coupling_scale", "noise_variance", "perturbation", "frame_average",
                   "equivariant_noise"},
               "bridge");
    read(b, "tau", c.bridge.tau, "bridge");
    read(b, "steps", c.bridge.steps, "bridge");
    read(b, "inputs", c.bridge.inputs, "bridge");
    read(b, "coupling_scale", c.bridge.coupling_scale, "bridge");
    read(b, "noise_variance", c.bridge.noise_variance, "bridge");
    read(b, "perturbation", c.bridge.perturbation, "bridge");
    read(b, "frame_average", c.bridge.frame_average, "bridge");
    read(b, "equivariant_noise", c.bridge.equivariant_noise, "bridge");
  }
  if (j.contains("nll")) {
    const auto& n = j["nll"];
    check_keys(n, {"steps", "divergence", "probes", "points", "dequantization_bins"}, "nll");
    read(n, "steps", c.nll.steps, "nll");
    read(n, "divergence", c.nll.divergence, "nll");
    read(n, "probes", c.nll.probes, "nll");
    read(n, "points", c.nll.points, "nll");
    read(n, "dequantization_bins", c.nll.dequantization_bins, "nll");
  }
  if (j.contains("metrics")) {
    const auto& m = j["metrics"];
    check_keys(m, {"list", "permutations", "feature_dim"}, "metrics");
    read(m, "list", c.metrics.list, "metrics");
    read(m, "permutations", c.metrics.permutations, "metrics");
    read(m, "feature_dim", c.metrics.feature_dim, "metrics");
  }
  if (j.contains("verify")) {
    const auto& v = j["verify"];
    check_keys(v, {"inject_fault"}, "verify");
    read(v, "inject_fault", c.verify.inject_fault, "verify");
  }

  // Validation of values that cannot wait for the first command to fail.
  c.schedule.build();
  if (c.group.enabled() || c.group.domain == "grid") c.group.build();
  require(!c.data.components.empty(), "data.components must not be empty");
  require(c.data.samples > 0, "data.samples must be positive");
  const std::set<std::string> kinds{"oracle", "mlp", "mlp+fa", "mlp+wt"};
  require(kinds.count(c.model.kind) == 1, "model.kind must be one of oracle, mlp, mlp+fa, mlp+wt");
  const std::set<std::string> modes{"plain", "regularized", "weight_tied"};
  require(modes.count(c.train.mode) == 1, "train.mode must be plain, regularized or weight_tied");
  try {
    c.train.trainer.validate();
  } catch (const InvalidParams& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }
  require(c.sampler.lambda >= 0.0, "sampler.lambda must be >= 0");
  require(c.sampler.steps > 0 && c.sampler.samples > 0, "sampler.steps and sampler.samples must be positive");
  require(c.bridge.tau >= 0.0, "bridge.tau must be >= 0");
  require(c.bridge.steps > 0 && c.bridge.inputs > 0, "bridge.steps and bridge.inputs must be positive");
  require(c.bridge.noise_variance > 0.0, "bridge.noise_variance must be positive");
  require(c.nll.divergence == "exact_fd" || c.nll.divergence == "hutchinson",
          "nll.divergence must be exact_fd or hutchinson");
  require(c.nll.steps > 0 && c.nll.points > 0 && c.nll.probes > 0, "nll counts must be positive");
  const std::set<std::string> metric_names{"energy", "fid", "inv_fid", "nll", "delta_x0"};
  for (const auto& m : c.metrics.list)
    require(metric_names.count(m) == 1, "unknown metric '" + m + "'");
  require(c.metrics.feature_dim > 0, "metrics.feature_dim must be positive");
  require(c.verify.inject_fault.empty() || c.verify.inject_fault == "closure",
          "verify.inject_fault must be empty or 'closure'");
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config is not valid JSON: " + std::string(e.what()));
  }
  return parse_config(j);
}

json to_json(const ExperimentConfig& c) {
  json comps = json::array();
  for (const auto& m : c.data.components)
    comps.push_back({{"weight", m.weight},
                     {"mean", std::vector<double>(m.mean.begin(), m.mean.end())},
                     {"variance", m.variance}});
  const auto& t = c.train.trainer;
  return {
      {"seed", c.seed},
      {"schedule",
       {{"kind", c.schedule.kind},
        {"beta_min", c.schedule.beta_min},
        {"beta_max", c.schedule.beta_max},
        {"sigma_min", c.schedule.sigma_min},
        {"sigma_max", c.schedule.sigma_max},
        {"T", c.schedule.horizon}}},
      {"group", {{"tag", c.group.tag}, {"domain", c.group.domain}, {"grid", c.group.grid}}},
      {"data", {{"components", comps}, {"symmetrize", c.data.symmetrize}, {"samples", c.data.samples}}},
      {"model", {{"kind", c.model.kind}, {"hidden", c.model.hidden}}},
      {"train",
       {{"learning_rate", t.learning_rate},
        {"batch_size", t.batch_size},
        {"steps", t.steps},
        {"ema_rate", t.ema_rate},
        {"regularizer_weight", t.regularizer_weight},
        {"mode", c.train.mode},
        {"resume", c.train.resume}}},
      {"sampler",
       {{"lambda", c.sampler.lambda},
        {"steps", c.sampler.steps},
        {"samples", c.sampler.samples},
        {"equivariant_noise", c.sampler.equivariant_noise}}},
      {"bridge",
       {{"tau", c.bridge.tau},
        {"steps", c.bridge.steps},
        {"inputs", c.bridge.inputs},
        {"coupling_scale", c.bridge.coupling_scale},
        {"noise_variance", c.bridge.noise_variance},
        {"perturbation", c.bridge.perturbation},
        {"frame_average", c.bridge.frame_average},
        {"equivariant_noise", c.bridge.equivariant_noise}}},
      {"nll",
       {{"steps", c.nll.steps},
        {"divergence", c.nll.divergence},
        {"probes", c.nll.probes},
        {"points", c.nll.points},
        {"dequantization_bins", c.nll.dequantization_bins}}},
      {"metrics",
       {{"list", c.metrics.list}, {"permutations", c.metrics.permutations}, {"feature_dim", c.metrics.feature_dim}}},
      {"verify", {{"inject_fault", c.verify.inject_fault}}},
  };
}

std::string config_hash(const ExperimentConfig& c) {
  // output_dir is left out so that the hash describes the experiment only.
  const std::string text = to_json(c).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spdm
