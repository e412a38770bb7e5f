#include "dsgd/config.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <string>

namespace dsgd {

using nlohmann::json;

std::string_view to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::Topology: return "topology";
    case ExperimentKind::Stability: return "stability";
    case ExperimentKind::GenGap: return "gengap";
    case ExperimentKind::Bound: return "bound";
    case ExperimentKind::Compare: return "compare";
    case ExperimentKind::ConsensusControl: return "consensus-control";
    case ExperimentKind::Gaussianity: return "gaussianity";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(std::string_view name) {
  for (auto kind : {ExperimentKind::Topology, ExperimentKind::Stability, ExperimentKind::GenGap,
                    ExperimentKind::Bound, ExperimentKind::Compare,
                    ExperimentKind::ConsensusControl, ExperimentKind::Gaussianity})
    if (to_string(kind) == name) return kind;
  throw InputError("experiment: unknown experiment '" + std::string(name) +
                   "' (expected topology, stability, gengap, bound, compare, consensus-control "
                   "or gaussianity)");
}

namespace {

const std::set<std::string> kKnownKeys = {
    "experiment", "kind",       "m",           "matrix_path",   "kinds",        "family",
    "d_x",        "hidden",     "noise_std",   "feature_var",   "n",            "T",
    "eta",        "schedule",   "snapshot_every", "R",          "pairs",        "mode",
    "p",          "gamma_sq",   "t_gamma",     "max_rounds",    "alpha",        "holder_pairs",
    "holder_radius", "mc_samples", "skew_tol", "kurt_tol",      "write_trace",  "output_dir",
    "seed",       "jobs"};

[[noreturn]] void bad(const std::string& key, const std::string& what) {
  throw InputError("config key '" + key + "': " + what);
}

std::size_t get_count(const json& doc, const std::string& key, std::size_t fallback) {
  if (!doc.contains(key)) return fallback;
  const auto& v = doc.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0) bad(key, "must be a non-negative integer");
  return v.get<std::size_t>();
}

double get_real(const json& doc, const std::string& key, double fallback) {
  if (!doc.contains(key)) return fallback;
  const auto& v = doc.at(key);
  if (!v.is_number()) bad(key, "must be a number");
  return v.get<double>();
}

std::string get_string(const json& doc, const std::string& key, const std::string& fallback) {
  if (!doc.contains(key)) return fallback;
  const auto& v = doc.at(key);
  if (!v.is_string()) bad(key, "must be a string");
  return v.get<std::string>();
}

template <typename Parse>
auto parse_named(const std::string& key, const std::string& value, Parse parse) {
  try {
    return parse(value);
  } catch (const InputError& e) {
    bad(key, e.what());
  }
}

void check_topology(const std::string& key, TopologyKind kind, std::size_t m) {
  if (kind == TopologyKind::Custom) bad(key, "'custom' requires matrix_path instead of a kind");
  try {
    check_structure(kind, m);
  } catch (const InputError& e) {
    bad(key, e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  const bool needs_topology = experiment != ExperimentKind::Compare;
  if (needs_topology && !matrix_path) check_topology("kind", kind, m);
  if (experiment == ExperimentKind::Compare) {
    if (kinds.empty()) bad("kinds", "compare needs at least one topology");
    for (auto k : kinds) check_topology("kinds", k, m);
  }
  if (m < 1) bad("m", "must be >= 1");
  if (experiment == ExperimentKind::Topology) return;

  if (d_x < 1) bad("d_x", "must be >= 1");
  if (family == LossFamily::TwoLayerMLP && hidden < 1) bad("hidden", "must be >= 1 for the mlp family");
  if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) bad("noise_std", "must be finite and >= 0");
  if (!(feature_var > 0.0) || !std::isfinite(feature_var)) bad("feature_var", "must be finite and > 0");
  if (n < 1) bad("n", "must be >= 1");
  if (T < 1) bad("T", "must be >= 1");
  if (!(eta >= 0.0) || !std::isfinite(eta)) bad("eta", "must be finite and >= 0");
  if (replicates < 2) bad("R", "must be >= 2");
  if (experiment == ExperimentKind::ConsensusControl && replicates < 5)
    bad("R", "consensus-control needs R >= 5");
  if (pairs < 1) bad("pairs", "must be >= 1");
  if (p && !(*p > 0.0)) bad("p", "must be positive (or \"optimize\")");
  if (!(gamma_sq > 0.0)) bad("gamma_sq", "must be positive (or \"inf\")");
  for (std::size_t i = 0; i < t_gamma.size(); ++i) {
    if (t_gamma[i] > T) bad("t_gamma", "values must satisfy 0 <= t_gamma <= T");
    if (i > 0 && t_gamma[i] < t_gamma[i - 1]) bad("t_gamma", "values must be sorted ascending");
  }
  if (!(alpha >= 0.0 && alpha <= 1.0)) bad("alpha", "must lie in [0, 1]");
  if (!(holder_radius > 0.0)) bad("holder_radius", "must be positive");
  if (mc_samples < 2) bad("mc_samples", "must be >= 2");
  if (!(skew_tol > 0.0)) bad("skew_tol", "must be positive");
  if (!(kurt_tol > 0.0)) bad("kurt_tol", "must be positive");
  if (jobs < 1) bad("jobs", "must be >= 1");
  if (experiment == ExperimentKind::Gaussianity &&
      replicates * pairs * m * task().model_dim() < 100)
    bad("R", "gaussianity needs at least 100 pooled coordinates (R * pairs * m * d)");
}

SyntheticTask ExperimentConfig::task() const {
  return make_isotropic_task(family, d_x, feature_var, noise_std, derive_seed(seed, "task"), hidden);
}

LossModel ExperimentConfig::model() const {
  return LossModel(family, d_x, family == LossFamily::TwoLayerMLP ? hidden : 0);
}

TrainConfig ExperimentConfig::train() const {
  TrainConfig cfg;
  cfg.T = T;
  cfg.eta = step_decay ? LearningRate::step_decay(eta, T) : LearningRate::constant(eta);
  cfg.snapshot_every = snapshot_every;
  return cfg;
}

std::uint64_t ExperimentConfig::experiment_seed() const {
  return derive_seed(seed, to_string(experiment));
}

StabilityOptions ExperimentConfig::stability_options() const {
  StabilityOptions opt;
  opt.replicates = replicates;
  opt.pairs = pairs;
  opt.mode = mode;
  opt.base_seed = experiment_seed();
  opt.jobs = jobs;
  return opt;
}

ExperimentConfig parse_config_json(const json& doc) {
  if (!doc.is_object()) throw InputError("config: top level must be a JSON object");
  for (const auto& [key, value] : doc.items())
    if (!kKnownKeys.contains(key)) throw InputError("config: unknown key '" + key + "'");

  ExperimentConfig c;
  if (!doc.contains("experiment")) bad("experiment", "is required");
  c.experiment = parse_named("experiment", get_string(doc, "experiment", ""), parse_experiment_kind);
  c.kind = parse_named("kind", get_string(doc, "kind", "ring"), parse_topology_kind);
  c.m = get_count(doc, "m", c.m);
  if (doc.contains("matrix_path")) {
    c.matrix_path = get_string(doc, "matrix_path", "");
    c.kind = TopologyKind::Custom;
    try {
      c.m = load_gossip_matrix(*c.matrix_path).size();
    } catch (const InputError& e) {
      bad("matrix_path", e.what());
    }
  }
  if (doc.contains("kinds")) {
    if (!doc.at("kinds").is_array()) bad("kinds", "must be an array of topology names");
    for (const auto& v : doc.at("kinds")) {
      if (!v.is_string()) bad("kinds", "must be an array of topology names");
      c.kinds.push_back(parse_named("kinds", v.get<std::string>(), parse_topology_kind));
    }
  } else if (c.experiment == ExperimentKind::Compare) {
    c.kinds = {TopologyKind::FullyConnected, TopologyKind::StaticExponential,
               TopologyKind::Grid2dTorus, TopologyKind::Ring};
  }

  c.family = parse_named("family", get_string(doc, "family", "linear"), parse_loss_family);
  c.d_x = get_count(doc, "d_x", c.d_x);
  c.hidden = get_count(doc, "hidden", c.hidden);
  c.noise_std = get_real(doc, "noise_std", c.noise_std);
  c.feature_var = get_real(doc, "feature_var", c.feature_var);
  c.n = get_count(doc, "n", c.n);
  c.T = get_count(doc, "T", c.T);
  c.eta = get_real(doc, "eta", c.eta);
  const auto schedule = get_string(doc, "schedule", "constant");
  if (schedule == "step_decay") c.step_decay = true;
  else if (schedule != "constant") bad("schedule", "must be \"constant\" or \"step_decay\"");
  c.snapshot_every = get_count(doc, "snapshot_every", c.snapshot_every);

  c.replicates = get_count(doc, "R", c.replicates);
  c.pairs = get_count(doc, "pairs", c.pairs);
  c.mode = parse_named("mode", get_string(doc, "mode", "synchronized"), parse_perturbation_mode);
  if (doc.contains("p") && doc.at("p").is_string()) {
    if (doc.at("p").get<std::string>() != "optimize") bad("p", "must be a number or \"optimize\"");
    c.p.reset();
  } else {
    c.p = get_real(doc, "p", 1.0);
  }
  if (doc.contains("gamma_sq") && doc.at("gamma_sq").is_string()) {
    if (doc.at("gamma_sq").get<std::string>() != "inf") bad("gamma_sq", "must be a number or \"inf\"");
    c.gamma_sq = std::numeric_limits<double>::infinity();
  } else {
    c.gamma_sq = get_real(doc, "gamma_sq", c.gamma_sq);
  }
  if (doc.contains("t_gamma")) {
    if (!doc.at("t_gamma").is_array()) bad("t_gamma", "must be an array of iterations");
    for (const auto& v : doc.at("t_gamma")) {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        bad("t_gamma", "entries must be non-negative integers");
      c.t_gamma.push_back(v.get<std::size_t>());
    }
  } else {
    c.t_gamma = {0, c.T / 4, c.T / 2, 3 * c.T / 4, c.T};
  }
  c.max_rounds = get_count(doc, "max_rounds", c.max_rounds);

  c.alpha = get_real(doc, "alpha", c.alpha);
  c.holder_pairs = get_count(doc, "holder_pairs", c.holder_pairs);
  c.holder_radius = get_real(doc, "holder_radius", c.holder_radius);
  c.mc_samples = get_count(doc, "mc_samples", c.mc_samples);
  c.skew_tol = get_real(doc, "skew_tol", c.skew_tol);
  c.kurt_tol = get_real(doc, "kurt_tol", c.kurt_tol);
  if (doc.contains("write_trace")) {
    if (!doc.at("write_trace").is_boolean()) bad("write_trace", "must be true or false");
    c.write_trace = doc.at("write_trace").get<bool>();
  }
  c.output_dir = get_string(doc, "output_dir", c.output_dir.string());
  if (doc.contains("seed")) {
    if (!doc.at("seed").is_number_unsigned()) bad("seed", "must be a non-negative integer");
    c.seed = doc.at("seed").get<std::uint64_t>();
  }
  c.jobs = get_count(doc, "jobs", c.jobs);
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("config: cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError("config: malformed JSON in '" + path.string() + "': " + e.what());
  }
  return parse_config_json(doc);
}

json to_json(const ExperimentConfig& c) {
  json j;
  j["experiment"] = std::string(to_string(c.experiment));
  j["kind"] = std::string(to_string(c.kind));
  j["m"] = c.m;
  if (c.matrix_path) j["matrix_path"] = c.matrix_path->string();
  json kinds = json::array();
  for (auto k : c.kinds) kinds.push_back(std::string(to_string(k)));
  j["kinds"] = kinds;
  j["family"] = std::string(to_string(c.family));
  j["d_x"] = c.d_x;
  j["hidden"] = c.hidden;
  j["noise_std"] = c.noise_std;
  j["feature_var"] = c.feature_var;
  j["n"] = c.n;
  j["T"] = c.T;
  j["eta"] = c.eta;
  j["schedule"] = c.step_decay ? "step_decay" : "constant";
  j["snapshot_every"] = c.train().snapshot_interval();
  j["R"] = c.replicates;
  j["pairs"] = c.pairs;
  j["mode"] = std::string(to_string(c.mode));
  if (c.p) j["p"] = *c.p;
  else j["p"] = "optimize";
  if (std::isinf(c.gamma_sq)) j["gamma_sq"] = "inf";
  else j["gamma_sq"] = c.gamma_sq;
  j["t_gamma"] = c.t_gamma;
  j["max_rounds"] = c.max_rounds;
  j["alpha"] = c.alpha;
  j["holder_pairs"] = c.holder_pairs;
  j["holder_radius"] = c.holder_radius;
  j["mc_samples"] = c.mc_samples;
  j["skew_tol"] = c.skew_tol;
  j["kurt_tol"] = c.kurt_tol;
  j["write_trace"] = c.write_trace;
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["jobs"] = c.jobs;
  return j;
}

}  // namespace dsgd
