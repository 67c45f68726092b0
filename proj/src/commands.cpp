#include "spdm/commands.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "spdm/metrics.hpp"
#include "spdm/mlp.hpp"
#include "spdm/rng.hpp"
#include "spdm/sampler.hpp"
#include "spdm/score_oracle.hpp"
#include "spdm/spdt.hpp"
#include "spdm/trainer.hpp"

namespace spdm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream ids for derive_seed, one per consumer of randomness.
enum SeedStream : std::uint64_t {
  kData = 1,
  kInit = 2,
  kTrain = 3,
  kSampleNoise = 4,
  kPrior = 5,
  kBridgeInputs = 6,
  kNll = 7,
  kFeatures = 8,
  kGap = 10,
  kPerturbation = 12,
  kBridgeNoise = 13,
  kBridgeGap = 14,
  kEnergy = 15,
};

std::string out_path(const CommandContext& ctx, const std::string& name) {
  return (fs::path(ctx.out_dir) / name).string();
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

void write_json(const std::string& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw IoError(path + " is not valid JSON: " + e.what());
  }
}

// Timestamps go only to this sidecar so data outputs stay reproducible.
void log_line(const CommandContext& ctx, const std::string& message) {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  std::ofstream log(out_path(ctx, "run.log"), std::ios::app);
  log << stamp << " [" << ctx.hash << "] " << message << "\n";
}

json stamp(const CommandContext& ctx, json j) {
  j["config_hash"] = ctx.hash;
  j["seed"] = ctx.seed;
  return j;
}

class MetricCsv {
 public:
  explicit MetricCsv(const CommandContext& ctx) : ctx_(ctx) { text_ << "name,value,config_hash,seed\n"; }
  void add(const std::string& name, double value) {
    text_ << name << "," << num(value) << "," << ctx_.hash << "," << ctx_.seed << "\n";
  }
  void write(const std::string& name) const { write_text(out_path(ctx_, name), text_.str()); }

 private:
  const CommandContext& ctx_;
  std::ostringstream text_;
};

std::uint64_t stream_seed(const CommandContext& ctx, SeedStream s) { return derive_seed(ctx.seed, s); }

std::optional<IsometryGroup> point_group(const CommandContext& ctx) {
  if (!ctx.config.group.enabled()) return std::nullopt;
  if (ctx.config.group.domain != "point")
    throw ConfigError("this command works on point data; set group.domain to 'point'");
  return ctx.config.group.build();
}

GaussianMixture data_mixture(const CommandContext& ctx, const std::optional<IsometryGroup>& group) {
  const GaussianMixture base = ctx.config.data.build(std::nullopt);
  if (group && group->dimension() != base.dimension())
    throw ConfigError("the point group acts on R^" + std::to_string(group->dimension()) + " but the data has dimension " +
                      std::to_string(base.dimension()));
  return ctx.config.data.build(group);
}

Matrix load_data(const CommandContext& ctx) {
  const std::string path = out_path(ctx, "data.spdt");
  if (!fs::exists(path)) throw IoError("missing dataset " + path + " (run gen-data first)");
  return tensor_to_samples(read_spdt(path));
}

ScoreNet make_net(const CommandContext& ctx, std::size_t dim, const std::optional<IsometryGroup>& group) {
  Mlp mlp(dim, 0, ctx.config.model.hidden, ctx.config.schedule.horizon);
  mlp.initialize(stream_seed(ctx, kInit));
  std::optional<IsometryGroup> tied;
  if (ctx.config.model.kind == "mlp+wt") {
    if (!group) throw ConfigError("model mlp+wt needs a group");
    tied = group;
  }
  return ScoreNet(std::move(mlp), tied);
}

ScoreNet load_net(const CommandContext& ctx, std::size_t dim, const std::optional<IsometryGroup>& group) {
  const std::string manifest = out_path(ctx, "checkpoint.json");
  if (!fs::exists(manifest)) throw IoError("missing checkpoint " + manifest + " (run train first)");
  const json m = read_json(manifest);
  ScoreNet net = make_net(ctx, dim, group);
  if (m.at("layer_sizes").get<std::vector<std::size_t>>() != net.mlp().layer_sizes())
    throw ConfigError("checkpoint layer sizes do not match model.hidden");
  const Vector ema = tensor_to_vector(read_spdt(out_path(ctx, "ema.spdt")));
  if (static_cast<std::size_t>(ema.size()) != net.mlp().parameter_count())
    throw IoError("checkpoint parameter count does not match the network");
  net.parameters() = ema;
  return net;
}

struct ScoreModel {
  ScoreField field;
  std::string id;
};

ScoreModel build_score(const CommandContext& ctx, const std::optional<IsometryGroup>& group, std::size_t dim) {
  const auto& kind = ctx.config.model.kind;
  const Schedule s = ctx.config.schedule.build();
  if (kind == "oracle") return {analytic_score_field(data_mixture(ctx, group), s), "oracle"};
  const ScoreNet net = load_net(ctx, dim, group);
  if (kind == "mlp+fa") {
    if (!group) throw ConfigError("model mlp+fa needs a group");
    return {frame_average(net.field(), *group), kind};
  }
  return {net.field(), kind};
}

std::string svg_scatter(const CommandContext& ctx, const Matrix& data, const Matrix& samples,
                        const std::vector<std::size_t>& orientation) {
  static const std::array<const char*, 8> palette{"#1b9e77", "#d95f02", "#7570b3", "#e7298a",
                                                  "#66a61e", "#e6ab02", "#a6761d", "#666666"};
  double lo = -1.0, hi = 1.0;
  for (const Matrix* m : {&data, &samples})
    if (m->size() > 0) {
      lo = std::min(lo, m->topRows(2).minCoeff());
      hi = std::max(hi, m->topRows(2).maxCoeff());
    }
  const double pad = 0.05 * (hi - lo), size = 480.0;
  lo -= pad;
  hi += pad;
  auto px = [&](double v) { return (v - lo) / (hi - lo) * size; };
  auto fmt = [](double v) {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return std::string(buf);
  };
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
      << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  svg << "<desc>config_hash=" << ctx.hash << " seed=" << ctx.seed << "; grey: data, colour: sample orientation</desc>\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  for (Eigen::Index j = 0; j < data.cols(); ++j)
    svg << "<circle cx=\"" << fmt(px(data(0, j))) << "\" cy=\"" << fmt(size - px(data(1, j)))
        << "\" r=\"1.2\" fill=\"#bbbbbb\"/>\n";
  for (Eigen::Index j = 0; j < samples.cols(); ++j)
    svg << "<circle cx=\"" << fmt(px(samples(0, j))) << "\" cy=\"" << fmt(size - px(samples(1, j)))
        << "\" r=\"1.6\" fill=\"" << palette[orientation[static_cast<std::size_t>(j)] % palette.size()] << "\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

struct NllTable {
  std::string csv;
  double mean_nll = 0.0;
  double max_gap = 0.0;
  bool prior_bias_flag = false;
};

NllTable nll_table(const CommandContext& ctx, const Matrix& points, const std::optional<IsometryGroup>& group,
                   const ScoreField& score) {
  const auto& spec = ctx.config.nll;
  const Schedule s = ctx.config.schedule.build();
  const TimeGrid grid = TimeGrid::sampling(s, spec.steps);
  const IsometryGroup g = group ? *group : make_trivial_group(static_cast<std::size_t>(points.rows()));
  DivergenceSpec div;
  div.mode = spec.divergence == "hutchinson" ? DivergenceMode::hutchinson : DivergenceMode::exact_fd;
  div.probes = spec.probes;
  div.seed = stream_seed(ctx, kNll);
  NllOptions opts;
  opts.dequantization_bins = spec.dequantization_bins;

  NllTable table;
  std::ostringstream csv;
  csv << "point,element,nll,bits_per_dim,config_hash,seed\n";
  double total = 0.0;
  for (Eigen::Index j = 0; j < points.cols(); ++j) {
    std::vector<double> row;
    for (const auto& kappa : g.elements()) {
      const NllReport r = pf_ode_nll(score, s, kappa.apply(points.col(j)), grid, div, opts);
      row.push_back(-r.log_likelihood);
      table.prior_bias_flag = r.prior_bias_flag;
      csv << j << "," << kappa.name() << "," << num(row.back()) << "," << num(r.bits_per_dim) << "," << ctx.hash
          << "," << ctx.seed << "\n";
    }
    const double base = row[g.identity()];
    total += base;
    for (double v : row) table.max_gap = std::max(table.max_gap, std::abs(v - base));
  }
  table.mean_nll = total / static_cast<double>(points.cols());
  table.csv = csv.str();
  return table;
}

}  // namespace

CommandContext make_context(ExperimentConfig config, const std::string& out_dir,
                            std::optional<std::uint64_t> seed, std::size_t threads) {
  CommandContext ctx;
  if (seed) config.seed = *seed;
  ctx.out_dir = !out_dir.empty() ? out_dir : (!config.output_dir.empty() ? config.output_dir : std::string("."));
  ctx.seed = config.seed;
  ctx.threads = std::max<std::size_t>(1, threads);
  ctx.hash = config_hash(config);
  ctx.config = std::move(config);
  std::error_code ec;
  fs::create_directories(ctx.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + ctx.out_dir + ": " + ec.message());
  return ctx;
}

void cmd_gen_data(const CommandContext& ctx) {
  const auto group = point_group(ctx);
  const GaussianMixture mixture = data_mixture(ctx, group);
  auto rng = rng_stream(stream_seed(ctx, kData), 0);
  const Matrix x = mixture.sample(rng, ctx.config.data.samples);
  write_spdt(out_path(ctx, "data.spdt"), samples_to_tensor(x));

  json comps = json::array();
  for (const auto& c : mixture.components())
    comps.push_back({{"weight", c.weight}, {"mean", std::vector<double>(c.mean.begin(), c.mean.end())},
                     {"variance", c.variance}});
  json manifest{{"file", "data.spdt"},
                {"samples", x.cols()},
                {"dimension", x.rows()},
                {"symmetrized", ctx.config.data.symmetrize && group.has_value()},
                {"group", group ? group->tag() : std::string("none")},
                {"mixture", comps}};
  if (x.rows() == 2) {
    std::array<std::size_t, 4> quadrants{};
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      ++quadrants[(x(0, j) < 0 ? 1 : 0) + (x(1, j) < 0 ? 2 : 0)];
    manifest["quadrant_counts"] = quadrants;
  }
  write_json(out_path(ctx, "data.json"), stamp(ctx, manifest));
  log_line(ctx, "gen-data wrote " + std::to_string(x.cols()) + " samples");
}

void cmd_train(const CommandContext& ctx) {
  const auto& kind = ctx.config.model.kind;
  if (kind == "oracle") throw ConfigError("train needs model.kind mlp, mlp+fa or mlp+wt");
  const auto group = point_group(ctx);
  const Matrix data = load_data(ctx);
  const auto dim = static_cast<std::size_t>(data.rows());
  TrainMode mode = TrainMode::plain;
  if (kind == "mlp+wt") {
    mode = TrainMode::weight_tied;
  } else if (ctx.config.train.mode == "weight_tied") {
    throw ConfigError("train.mode weight_tied needs model.kind mlp+wt");
  } else if (ctx.config.train.mode == "regularized") {
    if (!group) throw ConfigError("regularized training needs a group");
    mode = TrainMode::regularized;
  }

  TrainState state = initial_train_state(make_net(ctx, dim, group));
  const std::string manifest_path = out_path(ctx, "checkpoint.json");
  if (ctx.config.train.resume && fs::exists(manifest_path)) {
    const json m = read_json(manifest_path);
    if (m.at("layer_sizes").get<std::vector<std::size_t>>() != state.net.mlp().layer_sizes())
      throw ConfigError("checkpoint layer sizes do not match model.hidden");
    state.net.parameters() = tensor_to_vector(read_spdt(out_path(ctx, "checkpoint.spdt")));
    state.ema = tensor_to_vector(read_spdt(out_path(ctx, "ema.spdt")));
    state.adam.m = tensor_to_vector(read_spdt(out_path(ctx, "adam_m.spdt")));
    state.adam.v = tensor_to_vector(read_spdt(out_path(ctx, "adam_v.spdt")));
    state.adam.step = m.at("adam_step").get<std::size_t>();
    state.step = m.at("step").get<std::size_t>();
    const Vector losses = tensor_to_vector(read_spdt(out_path(ctx, "losses.spdt")));
    state.losses.assign(losses.begin(), losses.end());
    log_line(ctx, "train resumed at step " + std::to_string(state.step));
  }
  TrainerConfig tc = ctx.config.train.trainer;
  tc.seed = stream_seed(ctx, kTrain);
  train(state, tc, data, Matrix(), ctx.config.schedule.build(), group, mode);

  write_spdt(out_path(ctx, "checkpoint.spdt"), vector_to_tensor(state.net.parameters()));
  write_spdt(out_path(ctx, "ema.spdt"), vector_to_tensor(state.ema));
  write_spdt(out_path(ctx, "adam_m.spdt"), vector_to_tensor(state.adam.m));
  write_spdt(out_path(ctx, "adam_v.spdt"), vector_to_tensor(state.adam.v));
  write_spdt(out_path(ctx, "losses.spdt"),
             vector_to_tensor(Eigen::Map<const Vector>(state.losses.data(), static_cast<Eigen::Index>(state.losses.size()))));
  const char* mode_name = mode == TrainMode::plain ? "plain" : mode == TrainMode::regularized ? "regularized" : "weight_tied";
  json manifest{{"model_kind", kind},
                {"mode", mode_name},
                {"layer_sizes", state.net.mlp().layer_sizes()},
                {"group", group ? group->tag() : std::string("none")},
                {"tied", mode == TrainMode::weight_tied},
                {"free_parameters", state.net.mlp().parameter_count()},
                {"step", state.step},
                {"adam_step", state.adam.step},
                {"init_seed", stream_seed(ctx, kInit)},
                {"files", {"checkpoint.spdt", "ema.spdt", "adam_m.spdt", "adam_v.spdt", "losses.spdt"}}};
  if (mode == TrainMode::weight_tied) manifest["orbit_copies"] = group->size();
  write_json(manifest_path, stamp(ctx, manifest));

  std::ostringstream csv;
  csv << "step,loss,config_hash,seed\n";
  for (std::size_t i = 0; i < state.losses.size(); ++i)
    csv << i << "," << num(state.losses[i]) << "," << ctx.hash << "," << ctx.seed << "\n";
  write_text(out_path(ctx, "loss.csv"), csv.str());
  log_line(ctx, "train finished at step " + std::to_string(state.step));
}

void cmd_sample(const CommandContext& ctx) {
  const auto group = point_group(ctx);
  const Schedule s = ctx.config.schedule.build();
  const auto dim = static_cast<std::size_t>(ctx.config.data.build(std::nullopt).dimension());
  const ScoreModel score = build_score(ctx, group, dim);
  const auto& spec = ctx.config.sampler;
  std::optional<Canonicalizer> canon;
  if (spec.equivariant_noise) {
    if (!group) throw ConfigError("sampler.equivariant_noise needs a group");
    canon.emplace(*group);
  }
  const Matrix x_T = sample_prior(s, dim, spec.samples, stream_seed(ctx, kPrior));
  const TimeGrid grid = TimeGrid::sampling(s, spec.steps);
  const std::uint64_t noise_seed = stream_seed(ctx, kSampleNoise);
  const Matrix samples = reverse_sde_terminal(score.field, s, spec.lambda, grid, x_T, noise_seed, ctx.threads,
                                              canon ? &*canon : nullptr);
  write_spdt(out_path(ctx, "samples.spdt"), samples_to_tensor(samples));

  json manifest{{"file", "samples.spdt"},
                {"lambda", spec.lambda},
                {"steps", spec.steps},
                {"samples", spec.samples},
                {"equivariant_noise", spec.equivariant_noise},
                {"score_id", score.id},
                {"noise_seed", noise_seed}};
  MetricCsv csv(ctx);
  if (group && group->size() > 1) {
    // Δx̂₀ of the sampler seen as a map x_T ↦ x̂₀ with one fixed noise seed.
    std::vector<Vector> inputs;
    for (Eigen::Index j = 0; j < std::min<Eigen::Index>(16, x_T.cols()); ++j) inputs.push_back(x_T.col(j));
    const Model m = [&](const Vector& x) {
      const NoiseSequence noise = canon ? equivariant_noise_sequence(x, noise_seed, *canon, grid.steps())
                                        : NoiseSequence(noise_seed, dim);
      return Vector(reverse_sde_sample(score.field, s, spec.lambda, grid, x, noise).terminal());
    };
    const double gap = delta_x0_gap(m, inputs, *group, stream_seed(ctx, kGap));
    manifest["delta_x0"] = gap;
    csv.add("delta_x0", gap);
  }
  csv.add("sample_mean_norm", samples.rowwise().mean().norm());
  csv.write("sample_summary.csv");
  write_json(out_path(ctx, "samples.json"), stamp(ctx, manifest));
  log_line(ctx, "sample wrote " + std::to_string(samples.cols()) + " samples");
}

void cmd_bridge(const CommandContext& ctx) {
  const auto& spec = ctx.config.bridge;
  const auto& shape_v = ctx.config.group.grid;
  if (shape_v.size() != 3) throw ConfigError("group.grid must be [height, width, channels]");
  const IsometryGroup g = ctx.config.group.build_grid(GridShape{shape_v[0], shape_v[1], shape_v[2]});
  const Schedule s = ctx.config.schedule.build();
  const std::size_t d = g.dimension();

  const GaussianCoupling coupling{spec.coupling_scale * Matrix::Identity(d, d), spec.noise_variance};
  const ScoreField oracle = bridge_score_field(coupling, s);
  Mlp perturb(d, d, {32}, s.horizon());
  perturb.initialize(stream_seed(ctx, kPerturbation));
  const double eps = spec.perturbation;
  const ScoreField approx = [oracle, perturb, eps](const Vector& x, const Vector& y, double t) {
    return Vector(oracle(x, y, t) + eps * perturb.evaluate(x, y, t));
  };
  const ScoreField averaged = frame_average(approx, diagonal_pair_group(g));
  const Canonicalizer canon(g);
  const TimeGrid grid = TimeGrid::bridge(s, spec.steps);
  const std::uint64_t noise_seed = stream_seed(ctx, kBridgeNoise);

  auto model = [&](bool fa, bool en) -> Model {
    return [&, fa, en](const Vector& x_T) {
      const NoiseSequence noise = en ? equivariant_noise_sequence(x_T, noise_seed, canon, grid.steps())
                                     : NoiseSequence(noise_seed, d);
      return Vector(ddbm_reverse_sample(fa ? averaged : approx, s, x_T, spec.tau, grid, noise).terminal());
    };
  };
  auto rng = rng_stream(stream_seed(ctx, kBridgeInputs), 0);
  std::vector<Vector> inputs;
  Matrix input_matrix(d, spec.inputs);
  for (std::size_t j = 0; j < spec.inputs; ++j) {
    inputs.push_back(standard_normal(rng, d));
    input_matrix.col(static_cast<Eigen::Index>(j)) = inputs.back();
  }
  const std::uint64_t gap_seed = stream_seed(ctx, kBridgeGap);
  MetricCsv csv(ctx);
  json gaps;
  for (const auto& [name, fa, en] : {std::tuple{"baseline", false, false}, std::tuple{"en", false, true},
                                     std::tuple{"fa", true, false}, std::tuple{"fa_en", true, true}}) {
    const double gap = g.size() > 1 ? delta_x0_gap(model(fa, en), inputs, g, gap_seed) : 0.0;
    csv.add(std::string("delta_x0.") + name, gap);
    gaps[name] = gap;
  }
  csv.write("bridge.csv");

  const Model chosen = model(spec.frame_average, spec.equivariant_noise);
  Matrix outputs(d, spec.inputs);
  for (std::size_t j = 0; j < spec.inputs; ++j) outputs.col(static_cast<Eigen::Index>(j)) = chosen(inputs[j]);
  write_spdt(out_path(ctx, "bridge_inputs.spdt"), samples_to_tensor(input_matrix));
  write_spdt(out_path(ctx, "bridge_samples.spdt"), samples_to_tensor(outputs));
  write_json(out_path(ctx, "bridge.json"),
             stamp(ctx, {{"group", g.tag()},
                         {"grid", shape_v},
                         {"tau", spec.tau},
                         {"steps", spec.steps},
                         {"frame_average", spec.frame_average},
                         {"equivariant_noise", spec.equivariant_noise},
                         {"score_id", "bridge_oracle+perturbation"},
                         {"delta_x0", gaps}}));
  log_line(ctx, "bridge finished");
}

void cmd_nll(const CommandContext& ctx) {
  const auto group = point_group(ctx);
  const std::string data_path = out_path(ctx, "data.spdt");
  Matrix points;
  const std::size_t n = ctx.config.nll.points;
  if (fs::exists(data_path)) {
    const Matrix data = tensor_to_samples(read_spdt(data_path));
    points = data.leftCols(std::min<Eigen::Index>(static_cast<Eigen::Index>(n), data.cols()));
  } else {
    auto rng = rng_stream(stream_seed(ctx, kNll), 1);
    points = data_mixture(ctx, group).sample(rng, n);
  }
  const ScoreModel score = build_score(ctx, group, static_cast<std::size_t>(points.rows()));
  const NllTable table = nll_table(ctx, points, group, score.field);
  write_text(out_path(ctx, "nll.csv"), table.csv);
  write_json(out_path(ctx, "nll.json"), stamp(ctx, {{"score_id", score.id},
                                                    {"points", points.cols()},
                                                    {"steps", ctx.config.nll.steps},
                                                    {"divergence", ctx.config.nll.divergence},
                                                    {"mean_nll", table.mean_nll},
                                                    {"max_invariance_gap", table.max_gap},
                                                    {"prior_bias_flag", table.prior_bias_flag}}));
  log_line(ctx, "nll finished");
}

void cmd_metrics(const CommandContext& ctx) {
  const auto group = point_group(ctx);
  const Matrix data = load_data(ctx);
  const std::string sample_path = out_path(ctx, "samples.spdt");
  if (!fs::exists(sample_path)) throw IoError("missing samples " + sample_path + " (run sample first)");
  const Matrix samples = tensor_to_samples(read_spdt(sample_path));
  if (samples.rows() != data.rows()) throw IoError("samples and data differ in dimension");
  const FeatureMap features({static_cast<std::size_t>(data.rows()), ctx.config.metrics.feature_dim,
                             stream_seed(ctx, kFeatures)});
  MetricCsv csv(ctx);
  json report;
  auto wants = [&](const std::string& m) {
    const auto& l = ctx.config.metrics.list;
    return std::find(l.begin(), l.end(), m) != l.end();
  };
  if (wants("energy")) {
    const auto e = energy_distance_test(samples, data, ctx.config.metrics.permutations, stream_seed(ctx, kEnergy));
    csv.add("energy.statistic", e.statistic);
    csv.add("energy.p_value", e.p_value);
    report["energy"] = {{"statistic", e.statistic}, {"p_value", e.p_value}, {"permutations", e.permutations}};
  }
  if (wants("fid")) {
    const FeatureStats ts = feature_stats(features.apply(samples));
    const double fid = frechet_distance(ts, feature_stats(features.apply(data)));
    csv.add("fid", fid);
    report["fid"] = fid;
    if (group) {
      const double fid_g = frechet_distance(ts, group_averaged_stats(data, *group, features));
      csv.add("fid_group_averaged", fid_g);
      report["fid_group_averaged"] = fid_g;
    }
  }
  if (wants("inv_fid") && group && group->size() > 1) {
    const double v = inv_fid(samples, *group, features);
    const double ref = inv_fid(data, *group, features);
    csv.add("inv_fid", v);
    csv.add("inv_fid.data", ref);
    report["inv_fid"] = v;
    report["inv_fid_data"] = ref;
  }
  if (wants("nll")) {
    const Matrix points =
        data.leftCols(std::min<Eigen::Index>(static_cast<Eigen::Index>(ctx.config.nll.points), data.cols()));
    const ScoreModel score = build_score(ctx, group, static_cast<std::size_t>(data.rows()));
    const NllTable table = nll_table(ctx, points, group, score.field);
    write_text(out_path(ctx, "nll_table.csv"), table.csv);
    csv.add("nll.mean", table.mean_nll);
    csv.add("nll.max_invariance_gap", table.max_gap);
    report["nll"] = {{"mean", table.mean_nll}, {"max_invariance_gap", table.max_gap}};
  }
  if (wants("delta_x0")) {
    const std::string manifest = out_path(ctx, "samples.json");
    if (fs::exists(manifest)) {
      const json m = read_json(manifest);
      if (m.contains("delta_x0")) {
        csv.add("delta_x0", m["delta_x0"].get<double>());
        report["delta_x0"] = m["delta_x0"];
      }
    }
  }
  csv.write("metrics.csv");
  write_json(out_path(ctx, "metrics.json"), stamp(ctx, report));

  if (data.rows() >= 2) {
    std::vector<std::size_t> orientation(static_cast<std::size_t>(samples.cols()), 0);
    if (group) {
      const Canonicalizer canon(*group);
      for (Eigen::Index j = 0; j < samples.cols(); ++j)
        orientation[static_cast<std::size_t>(j)] = canon.canonicalize(samples.col(j));
    }
    write_text(out_path(ctx, "scatter.svg"), svg_scatter(ctx, data, samples, orientation));
  }
  log_line(ctx, "metrics finished");
}

int run_command(const std::string& name, const CommandContext& ctx) {
  try {
    if (name == "gen-data")
      cmd_gen_data(ctx);
    else if (name == "train")
      cmd_train(ctx);
    else if (name == "sample")
      cmd_sample(ctx);
    else if (name == "bridge")
      cmd_bridge(ctx);
    else if (name == "nll")
      cmd_nll(ctx);
    else if (name == "metrics")
      cmd_metrics(ctx);
    else if (name == "verify")
      cmd_verify(ctx);
    else
      throw ConfigError("unknown command '" + name + "'");
    return 0;
  } catch (const VerificationFailed& e) {
    std::fprintf(stderr, "spdm: verification failed: %s\n", e.what());
    return 4;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "spdm: numerical failure: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "spdm: I/O error: %s\n", e.what());
    return 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "spdm: configuration error: %s\n", e.what());
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "spdm: malformed manifest: %s\n", e.what());
    return 1;
  }
}

}  // namespace spdm
