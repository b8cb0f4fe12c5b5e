#include "beki/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <json.hpp>

namespace beki {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

std::string to_string(ModelKind m) { return m == ModelKind::kHeat1D ? "heat1d" : "darcy2d"; }

ModelKind parse_model(const std::string& s) {
  if (s == "heat1d") return ModelKind::kHeat1D;
  if (s == "darcy2d") return ModelKind::kDarcy2D;
  throw UsageError("unknown model '" + s + "' (expected heat1d or darcy2d)");
}

std::string to_string(ConstraintSpecKind k) {
  switch (k) {
    case ConstraintSpecKind::kNone: return "none";
    case ConstraintSpecKind::kNormBall: return "norm-ball";
    case ConstraintSpecKind::kBox: return "box";
  }
  return "none";
}

ConstraintSpecKind parse_constraint_kind(const std::string& s) {
  for (auto k : {ConstraintSpecKind::kNone, ConstraintSpecKind::kNormBall, ConstraintSpecKind::kBox}) {
    if (to_string(k) == s) return k;
  }
  throw UsageError("unknown constraint kind '" + s + "' (expected none, norm-ball or box)");
}

// Reads one JSON object and rejects keys that were never asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw UsageError(label() + " must be an object");
  }

  template <class F>
  void with(const char* key, F&& f) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    try {
      f(*it);
    } catch (const json::exception&) {
      throw UsageError("config key '" + path_ + key + "' has the wrong type");
    }
  }

  void get(const char* key, double& out) {
    with(key, [&](const json& v) {
      if (!v.is_number()) throw UsageError("config key '" + path_ + key + "' must be a number");
      out = v.get<double>();
    });
  }
  void get(const char* key, int& out) {
    with(key, [&](const json& v) {
      if (!v.is_number_integer()) throw UsageError("config key '" + path_ + key + "' must be an integer");
      out = v.get<int>();
    });
  }
  void get(const char* key, long& out) {
    with(key, [&](const json& v) {
      if (!v.is_number_integer()) throw UsageError("config key '" + path_ + key + "' must be an integer");
      out = v.get<long>();
    });
  }
  void get(const char* key, std::uint64_t& out) {
    with(key, [&](const json& v) {
      if (!v.is_number_unsigned()) {
        throw UsageError("config key '" + path_ + key + "' must be a nonnegative integer");
      }
      out = v.get<std::uint64_t>();
    });
  }
  void get(const char* key, bool& out) {
    with(key, [&](const json& v) {
      if (!v.is_boolean()) throw UsageError("config key '" + path_ + key + "' must be a boolean");
      out = v.get<bool>();
    });
  }
  void get(const char* key, std::string& out) {
    with(key, [&](const json& v) {
      if (!v.is_string()) throw UsageError("config key '" + path_ + key + "' must be a string");
      out = v.get<std::string>();
    });
  }
  void get(const char* key, std::vector<double>& out) {
    with(key, [&](const json& v) {
      if (!v.is_array()) throw UsageError("config key '" + path_ + key + "' must be an array");
      out.clear();
      for (const auto& e : v) {
        if (!e.is_number()) throw UsageError("config key '" + path_ + key + "' must hold numbers");
        out.push_back(e.get<double>());
      }
    });
  }
  /// Number or null (null = +inf).
  void get_or_inf(const char* key, double& out) {
    with(key, [&](const json& v) {
      if (v.is_null()) {
        out = kInf;
      } else if (v.is_number()) {
        out = v.get<double>();
      } else {
        throw UsageError("config key '" + path_ + key + "' must be a number or null");
      }
    });
  }
  template <class F>
  void object(const char* key, F&& f) {
    auto it = j_.find(key);
    if (it == j_.end()) return;
    seen_.insert(key);
    ObjectReader child(*it, path_ + key + ".");
    f(child);
    child.finish();
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw UsageError("unknown config key '" + path_ + item.key() + "'");
    }
  }

 private:
  std::string label() const {
    return path_.empty() ? std::string("config") : "config key '" + path_.substr(0, path_.size() - 1) + "'";
  }
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

json config_json(const ExperimentConfig& c) {
  json j;
  j["name"] = c.name;
  j["model"] = to_string(c.model);
  j["heat1d"] = {{"dx", c.heat1d.dx}, {"dt", c.heat1d.dt}, {"eps", c.heat1d.eps}};
  j["darcy2d"] = {{"n", c.darcy2d.n}, {"f", c.darcy2d.f}, {"k_obs", c.darcy2d.k_obs},
                  {"obs_seed", c.darcy2d.obs_seed}};
  j["prior"] = {{"sigma2", c.prior.sigma2}, {"length_scale", c.prior.length_scale},
                {"r", c.prior.r},           {"tau", c.prior.tau},
                {"alpha", c.prior.alpha},   {"s", c.prior.s},
                {"nugget", c.prior.nugget}};
  j["noise_sd"] = c.noise_sd;
  j["constraints"] = {{"kind", to_string(c.constraints.kind)},
                      {"radius_rule", c.constraints.radius_rule},
                      {"radius", c.constraints.radius},
                      {"lower", c.constraints.lower},
                      {"upper", c.constraints.upper},
                      {"slack", c.constraints.slack}};
  j["variant"] = to_string(c.variant);
  j["lambda"] = c.lambda;
  j["inflation"] = {{"kind", to_string(c.inflation.kind)},
                    {"rho0", c.inflation.rho0},
                    {"beta", c.inflation.beta}};
  j["penalty"] = {{"kind", to_string(c.penalty.kind)}, {"tau0", c.penalty.tau0}};
  j["ensemble_size"] = c.ensemble_size;
  j["pre_project"] = {{"enabled", c.pre_project.enabled}, {"shrink", c.pre_project.shrink}};
  const IntegratorConfig& ic = c.integrator;
  j["rtol"] = ic.rtol;
  j["atol"] = ic.atol;
  j["h0"] = ic.h0;
  j["h_min"] = ic.h_min;
  j["h_max"] = std::isinf(ic.h_max) ? json(nullptr) : json(ic.h_max);
  j["t_final"] = ic.t_final;
  j["safety"] = ic.safety;
  j["checkpoints"] = ic.checkpoints;
  j["max_feasibility_halvings"] = ic.max_feasibility_halvings;
  j["reference"] = {{"enabled", c.reference.enabled},
                    {"subspace", c.reference.subspace},
                    {"tau_ladder", c.reference.tau_ladder},
                    {"tol_grad", c.reference.tol_grad},
                    {"max_iter", c.reference.max_iter}};
  j["truth_seed"] = c.truth_seed;
  j["noise_seed"] = c.noise_seed;
  j["ensemble_seed"] = c.ensemble_seed;
  j["output_dir"] = c.output_dir;
  return j;
}

json number_json(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double number_from_json(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    if (s == "inf") return kInf;
    if (s == "-inf") return -kInf;
    if (s == "nan") return kNaN;
  }
  if (v.is_null()) return kNaN;
  throw InvalidInput("record value is not a number");
}

json vector_json(const Vector& v) {
  json a = json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(number_json(v(i)));
  return a;
}

struct FieldRef {
  const char* name;
  double CheckpointRow::*dbl;
  std::int64_t CheckpointRow::*cnt;
};

const std::vector<FieldRef>& all_fields() {
  static const std::vector<FieldRef> fields = {
      {"t", &CheckpointRow::t, nullptr},
      {"V_e", &CheckpointRow::v_e, nullptr},
      {"eta_min", &CheckpointRow::eta_min, nullptr},
      {"margin", &CheckpointRow::margin, nullptr},
      {"phi_reg", &CheckpointRow::phi_reg, nullptr},
      {"phi_b", &CheckpointRow::phi_b, nullptr},
      {"err_param", &CheckpointRow::err_param, nullptr},
      {"err_obs", &CheckpointRow::err_obs, nullptr},
      {"subspace_dist", &CheckpointRow::subspace_dist, nullptr},
      {"rho_t", &CheckpointRow::rho_t, nullptr},
      {"tau_t", &CheckpointRow::tau_t, nullptr},
      {"grad_flow_err", &CheckpointRow::grad_flow_err, nullptr},
      {"phi_misfit", &CheckpointRow::phi_misfit, nullptr},
      {"mean_norm", &CheckpointRow::mean_norm, nullptr},
      {"max_particle_norm", &CheckpointRow::max_particle_norm, nullptr},
      {"accepted", nullptr, &CheckpointRow::accepted},
      {"rejected_error", nullptr, &CheckpointRow::rejected_error},
      {"rejected_feasibility", nullptr, &CheckpointRow::rejected_feasibility},
      {"rhs_evals", nullptr, &CheckpointRow::rhs_evals},
  };
  return fields;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw InvalidInput("malformed number '" + s + "' in record");
  return v;
}

std::vector<double> default_ladder(const ExperimentConfig& cfg) {
  std::vector<double> ladder;
  const bool fixed = cfg.penalty.kind == PenaltyKind::kConstant;
  const double top = fixed ? std::max(1e6, cfg.penalty.tau0) : 1e6;
  for (double t = 1.0; t <= top * (1 + 1e-12); t *= 10.0) ladder.push_back(t);
  if (fixed) ladder.push_back(cfg.penalty.tau0);
  std::sort(ladder.begin(), ladder.end());
  ladder.erase(std::unique(ladder.begin(), ladder.end(),
                           [](double a, double b) { return std::abs(a - b) <= 1e-12 * b; }),
               ladder.end());
  return ladder;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (ensemble_size < 2) throw InvalidInput("ensemble_size must be at least 2");
  if (!(noise_sd > 0.0)) throw InvalidInput("noise_sd must be positive");
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be nonnegative");
  if (!(prior.nugget >= 0.0)) throw InvalidInput("prior.nugget must be nonnegative");
  if (model == ModelKind::kDarcy2D) {
    if (darcy2d.n < 3) throw InvalidInput("darcy2d.n must be at least 3");
    if (darcy2d.k_obs < 1) throw InvalidInput("darcy2d.k_obs must be positive");
    if (prior.s < 1 || prior.s > darcy2d.n * darcy2d.n) {
      throw InvalidInput("prior.s must lie in [1, n^2]");
    }
  } else if (prior.r < 1) {
    throw InvalidInput("prior.r must be positive");
  }
  switch (constraints.kind) {
    case ConstraintSpecKind::kNormBall:
      if (constraints.radius_rule == "fixed") {
        if (!(constraints.radius > 0.0)) throw InvalidInput("constraints.radius must be positive");
      } else if (constraints.radius_rule != "half_prior_norm_of_truth") {
        throw InvalidInput("constraints.radius_rule must be half_prior_norm_of_truth or fixed");
      }
      break;
    case ConstraintSpecKind::kBox:
      if (constraints.lower.size() != constraints.upper.size()) {
        throw InvalidInput("constraints.lower and constraints.upper differ in length");
      }
      if (constraints.lower.empty() && !(constraints.slack >= 0.0 && constraints.slack < 1.0)) {
        throw InvalidInput("constraints.slack must lie in [0, 1)");
      }
      break;
    case ConstraintSpecKind::kNone:
      break;
  }
  if (!(pre_project.shrink >= 0.0 && pre_project.shrink < 1.0)) {
    throw InvalidInput("pre_project.shrink must lie in [0, 1)");
  }
  const std::string& sub = reference.subspace;
  if (sub != "auto" && sub != "ensemble" && sub != "full") {
    throw InvalidInput("reference.subspace must be auto, ensemble or full");
  }
  if (!(reference.tol_grad > 0.0) || reference.max_iter < 1) {
    throw InvalidInput("reference.tol_grad and reference.max_iter must be positive");
  }
  integrator.validate();
}

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw UsageError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c;
  ObjectReader r(j, "");
  r.get("name", c.name);
  r.with("model", [&](const json& v) { c.model = parse_model(v.get<std::string>()); });
  r.object("heat1d", [&](ObjectReader& o) {
    o.get("dx", c.heat1d.dx);
    o.get("dt", c.heat1d.dt);
    o.get("eps", c.heat1d.eps);
  });
  r.object("darcy2d", [&](ObjectReader& o) {
    o.get("n", c.darcy2d.n);
    o.get("f", c.darcy2d.f);
    o.get("k_obs", c.darcy2d.k_obs);
    o.get("obs_seed", c.darcy2d.obs_seed);
  });
  r.object("prior", [&](ObjectReader& o) {
    o.get("sigma2", c.prior.sigma2);
    o.get("length_scale", c.prior.length_scale);
    o.get("r", c.prior.r);
    o.get("tau", c.prior.tau);
    o.get("alpha", c.prior.alpha);
    o.get("s", c.prior.s);
    o.get("nugget", c.prior.nugget);
  });
  r.get("noise_sd", c.noise_sd);
  r.object("constraints", [&](ObjectReader& o) {
    o.with("kind", [&](const json& v) { c.constraints.kind = parse_constraint_kind(v.get<std::string>()); });
    o.get("radius_rule", c.constraints.radius_rule);
    o.get("radius", c.constraints.radius);
    o.get("lower", c.constraints.lower);
    o.get("upper", c.constraints.upper);
    o.get("slack", c.constraints.slack);
  });
  r.with("variant", [&](const json& v) { c.variant = parse_flow_variant(v.get<std::string>()); });
  r.get("lambda", c.lambda);
  r.object("inflation", [&](ObjectReader& o) {
    o.with("kind", [&](const json& v) { c.inflation.kind = parse_inflation_kind(v.get<std::string>()); });
    o.get("rho0", c.inflation.rho0);
    o.get("beta", c.inflation.beta);
  });
  r.object("penalty", [&](ObjectReader& o) {
    o.with("kind", [&](const json& v) { c.penalty.kind = parse_penalty_kind(v.get<std::string>()); });
    o.get("tau0", c.penalty.tau0);
  });
  r.get("ensemble_size", c.ensemble_size);
  r.object("pre_project", [&](ObjectReader& o) {
    o.get("enabled", c.pre_project.enabled);
    o.get("shrink", c.pre_project.shrink);
  });
  IntegratorConfig& ic = c.integrator;
  r.get("rtol", ic.rtol);
  r.get("atol", ic.atol);
  r.get("h0", ic.h0);
  r.get("h_min", ic.h_min);
  r.get_or_inf("h_max", ic.h_max);
  r.get("t_final", ic.t_final);
  r.get("safety", ic.safety);
  r.get("checkpoints", ic.checkpoints);
  r.get("max_feasibility_halvings", ic.max_feasibility_halvings);
  r.object("reference", [&](ObjectReader& o) {
    o.get("enabled", c.reference.enabled);
    o.get("subspace", c.reference.subspace);
    o.get("tau_ladder", c.reference.tau_ladder);
    o.get("tol_grad", c.reference.tol_grad);
    o.get("max_iter", c.reference.max_iter);
  });
  r.get("truth_seed", c.truth_seed);
  r.get("noise_seed", c.noise_seed);
  r.get("ensemble_seed", c.ensemble_seed);
  r.get("output_dir", c.output_dir);
  r.finish();
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw UsageError(std::string("invalid config: ") + e.what());
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) { return parse_config(read_text_file(path)); }

std::string config_to_json(const ExperimentConfig& cfg) { return config_json(cfg).dump(2); }

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_json(cfg);
  j.erase("output_dir");
  const std::string text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

std::vector<std::string> preset_names() {
  return {"pseudolinear",          "pseudolinear-log",        "norm-ball-control",
          "darcy",                 "darcy-log",               "adaptive-tau",
          "adaptive-tau-fixed-1",  "adaptive-tau-fixed-10",   "adaptive-tau-fixed-100",
          "adaptive-tau-fixed-1000", "adaptive-tau-fixed-10000"};
}

std::string preset_description(const std::string& name) {
  if (name == "pseudolinear") {
    return "heat equation with sine perturbation, d=99, norm ball, barrier-mean, rho=0.8, tau=1e4, T=1e6";
  }
  if (name == "pseudolinear-log") return "pseudolinear with log-increasing inflation";
  if (name == "norm-ball-control") return "pseudolinear problem integrated with plain EKI (no barrier)";
  if (name == "darcy") return "Darcy flow, 32x32 mesh, box from truth (slack 0.3), rho=0.8, tau=1e4, T=1e6";
  if (name == "darcy-log") return "darcy with log-increasing inflation";
  if (name == "adaptive-tau") return "Darcy flow, 6x6 mesh, rho=0.7, tau(t)=t+1, T=1e5";
  if (name.rfind("adaptive-tau-fixed-", 0) == 0) {
    return "Darcy flow, 6x6 mesh, rho=0.7, fixed tau=" + name.substr(19) + ", T=1e5";
  }
  throw UsageError("unknown preset '" + name + "'");
}

ExperimentConfig preset(const std::string& name, bool desk) {
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    throw UsageError("unknown preset '" + name + "'");
  }
  ExperimentConfig c;
  c.name = name;
  if (name.rfind("pseudolinear", 0) == 0 || name == "norm-ball-control") {
    c.model = ModelKind::kHeat1D;
    c.constraints.kind = ConstraintSpecKind::kNormBall;
    c.inflation = {InflationKind::kConstant, 0.8, 0.0};
    if (name == "pseudolinear-log") c.inflation = {InflationKind::kLogIncreasing, 0.0, 0.0};
    if (name == "norm-ball-control") c.variant = FlowVariant::kPlainEki;
    c.integrator.t_final = desk ? 1e4 : 1e6;
  } else if (name.rfind("darcy", 0) == 0) {
    c.model = ModelKind::kDarcy2D;
    c.darcy2d.n = desk ? 8 : 32;
    c.constraints.kind = ConstraintSpecKind::kBox;
    c.pre_project.enabled = true;
    c.inflation = {InflationKind::kConstant, 0.8, 0.0};
    if (name == "darcy-log") c.inflation = {InflationKind::kLogIncreasing, 0.0, 0.0};
    c.integrator.t_final = desk ? 1e3 : 1e6;
  } else {
    c.model = ModelKind::kDarcy2D;
    c.darcy2d.n = 6;
    c.constraints.kind = ConstraintSpecKind::kBox;
    c.pre_project.enabled = true;
    c.inflation = {InflationKind::kConstant, 0.7, 0.0};
    if (name == "adaptive-tau") {
      c.penalty = {PenaltyKind::kLinear, 1.0};
    } else {
      c.penalty = {PenaltyKind::kConstant, std::stod(name.substr(19))};
    }
    c.integrator.t_final = desk ? 1e4 : 1e5;
  }
  return c;
}

Problem build_problem(const ExperimentConfig& cfg) {
  cfg.validate();
  Problem pb;
  std::shared_ptr<const SpdMatrix> c0;
  std::shared_ptr<const ForwardMap> map;
  Matrix particles;
  if (cfg.model == ModelKind::kHeat1D) {
    pb.heat = build_heat1d(cfg.heat1d.dx, cfg.heat1d.dt, cfg.heat1d.eps);
    const KLPrior1D prior =
        KLPrior1D::build(pb.heat->grid, cfg.prior.sigma2, cfg.prior.length_scale, cfg.prior.r);
    c0 = std::make_shared<SpdMatrix>(prior.covariance(cfg.prior.nugget));
    map = pb.heat->map();
    pb.truth = sample_kl_1d(prior, 1, cfg.truth_seed).col(0);
    particles = sample_kl_1d(prior, cfg.ensemble_size, cfg.ensemble_seed);
  } else {
    pb.darcy = std::make_shared<Darcy2DModel>(cfg.darcy2d.n, cfg.darcy2d.f, cfg.darcy2d.k_obs,
                                              cfg.darcy2d.obs_seed);
    const KLPrior2D prior =
        KLPrior2D::build(pb.darcy->node_coordinates(), cfg.prior.tau, cfg.prior.alpha, cfg.prior.s);
    c0 = std::make_shared<SpdMatrix>(prior.covariance(cfg.prior.nugget));
    map = pb.darcy;
    pb.truth = sample_kl_2d(prior, 1, cfg.truth_seed).col(0);
    particles = sample_kl_2d(prior, cfg.ensemble_size, cfg.ensemble_seed);
  }
  const Index k = map->output_dim();
  Rng rng(cfg.noise_seed);
  const Vector y = map->apply(pb.truth) + cfg.noise_sd * standard_normal(k, 1, rng).col(0);
  pb.model = ForwardModel{
      map, y, std::make_shared<SpdMatrix>(SpdMatrix::scaled_identity(k, cfg.noise_sd * cfg.noise_sd)),
      c0};
  pb.model.validate();

  const Index d = map->input_dim();
  switch (cfg.constraints.kind) {
    case ConstraintSpecKind::kNone:
      break;
    case ConstraintSpecKind::kNormBall: {
      const double radius = cfg.constraints.radius_rule == "fixed" ? cfg.constraints.radius
                                                                   : 0.5 * c0->inv_quad(pb.truth);
      pb.constraints = make_norm_ball(c0, radius);
      break;
    }
    case ConstraintSpecKind::kBox: {
      const auto& lo = cfg.constraints.lower;
      const auto& hi = cfg.constraints.upper;
      if (lo.empty()) {
        pb.box = make_box_from_truth(pb.truth, cfg.constraints.slack);
      } else if (lo.size() == 1) {
        pb.box = BoxBounds::uniform(d, lo[0], hi[0]);
      } else if (static_cast<Index>(lo.size()) == d) {
        BoxBounds b;
        b.lower = Eigen::Map<const Vector>(lo.data(), d);
        b.upper = Eigen::Map<const Vector>(hi.data(), d);
        for (Index i = 0; i < d; ++i) b.indices.push_back(i);
        pb.box = b;
      } else {
        throw InvalidInput("box bounds need one entry or one per parameter");
      }
      pb.box->validate();
      pb.constraints = make_box(*pb.box);
      break;
    }
  }

  if (cfg.pre_project.enabled && pb.box) {
    const Ensemble ens(particles);
    bool infeasible = !pb.constraints.strictly_feasible(ens.mean());
    if (cfg.variant == FlowVariant::kBarrierPerParticle) {
      for (Index j = 0; j < ens.size(); ++j) {
        infeasible = infeasible || !pb.constraints.strictly_feasible(ens.particle(j));
      }
    }
    if (infeasible) {
      particles = pre_project(ens, *pb.box, cfg.pre_project.shrink).particles();
      pb.pre_projected = true;
    }
  }
  pb.initial_particles = std::move(particles);
  return pb;
}

// ----- records ---------------------------------------------------------------

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {"t",       "V_e",       "eta_min", "margin",
                                                "phi_reg", "phi_b",     "err_param", "err_obs",
                                                "subspace_dist", "rho_t", "tau_t"};
  return cols;
}

std::vector<double> TrajectoryRecord::column(const std::string& field) const {
  for (const auto& f : all_fields()) {
    if (field != f.name) continue;
    std::vector<double> out;
    out.reserve(rows.size());
    for (const auto& r : rows) out.push_back(f.dbl ? r.*f.dbl : static_cast<double>(r.*f.cnt));
    return out;
  }
  throw InvalidInput("unknown record field '" + field + "'");
}

std::string record_to_csv(const TrajectoryRecord& rec) {
  std::string out;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out += (i ? "," : "") + cols[i];
  out += "\n";
  const auto& fields = all_fields();
  for (const auto& r : rec.rows) {
    for (std::size_t i = 0; i < cols.size(); ++i) {
      if (i) out += ",";
      out += format_double(r.*fields[i].dbl);
    }
    out += "\n";
  }
  return out;
}

TrajectoryRecord record_from_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty record");
  std::string expected;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) expected += (i ? "," : "") + cols[i];
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != expected) throw InvalidInput("record header does not match the expected columns");
  TrajectoryRecord rec;
  const auto& fields = all_fields();
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    CheckpointRow row;
    std::size_t i = 0;
    while (std::getline(ls, cell, ',')) {
      if (i >= cols.size()) throw InvalidInput("record row has too many cells");
      row.*fields[i].dbl = parse_double(cell);
      ++i;
    }
    if (i != cols.size()) throw InvalidInput("record row has too few cells");
    rec.rows.push_back(row);
  }
  return rec;
}

std::string record_to_json(const TrajectoryRecord& rec) {
  json meta = {{"version", rec.meta.version},
               {"name", rec.meta.name},
               {"config_hash", rec.meta.config_hash},
               {"variant", rec.meta.variant},
               {"reference_point", rec.meta.reference_point},
               {"seeds",
                {{"truth", rec.meta.truth_seed},
                 {"noise", rec.meta.noise_seed},
                 {"ensemble", rec.meta.ensemble_seed},
                 {"obs_points", rec.meta.obs_seed}}},
               {"runtime_seconds", number_json(rec.meta.runtime_seconds)}};
  if (rec.meta.abort) {
    const AbortInfo& a = *rec.meta.abort;
    meta["abort"] = {{"reason", a.reason},
                     {"message", a.message},
                     {"t", number_json(a.t)},
                     {"margin", number_json(a.margin)},
                     {"tau", number_json(a.tau)}};
  } else {
    meta["abort"] = nullptr;
  }
  json rows = json::array();
  for (const auto& r : rec.rows) {
    json row;
    for (const auto& f : all_fields()) {
      row[f.name] = f.dbl ? number_json(r.*f.dbl) : json(r.*f.cnt);
    }
    rows.push_back(std::move(row));
  }
  json j = {{"columns", csv_columns()}, {"metadata", meta}, {"rows", rows}};
  return j.dump(1);
}

TrajectoryRecord record_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("record is not valid JSON: ") + e.what());
  }
  TrajectoryRecord rec;
  try {
    const json& m = j.at("metadata");
    rec.meta.version = m.at("version").get<int>();
    rec.meta.name = m.at("name").get<std::string>();
    rec.meta.config_hash = m.at("config_hash").get<std::string>();
    rec.meta.variant = m.at("variant").get<std::string>();
    rec.meta.reference_point = m.at("reference_point").get<std::string>();
    const json& s = m.at("seeds");
    rec.meta.truth_seed = s.at("truth").get<std::uint64_t>();
    rec.meta.noise_seed = s.at("noise").get<std::uint64_t>();
    rec.meta.ensemble_seed = s.at("ensemble").get<std::uint64_t>();
    rec.meta.obs_seed = s.at("obs_points").get<std::uint64_t>();
    rec.meta.runtime_seconds = number_from_json(m.at("runtime_seconds"));
    if (m.contains("abort") && !m.at("abort").is_null()) {
      const json& a = m.at("abort");
      rec.meta.abort = AbortInfo{a.at("reason").get<std::string>(), a.at("message").get<std::string>(),
                                 number_from_json(a.at("t")), number_from_json(a.at("margin")),
                                 number_from_json(a.at("tau"))};
    }
    for (const json& rj : j.at("rows")) {
      CheckpointRow row;
      for (const auto& f : all_fields()) {
        if (f.dbl) {
          row.*f.dbl = number_from_json(rj.at(f.name));
        } else {
          row.*f.cnt = rj.at(f.name).get<std::int64_t>();
        }
      }
      rec.rows.push_back(row);
    }
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed record: ") + e.what());
  }
  return rec;
}

// ----- run -------------------------------------------------------------------

namespace {

std::optional<AffineSubspace> reference_subspace(const ExperimentConfig& cfg, const Ensemble& ens,
                                                 std::string& label) {
  const std::string& mode = cfg.reference.subspace;
  const bool use_ens = mode == "ensemble" || (mode == "auto" && ens.size() <= ens.dim());
  label = use_ens ? "ensemble" : "full";
  if (use_ens) return AffineSubspace::from_ensemble(ens);
  return std::nullopt;
}

ReferenceResult compute_reference(const ExperimentConfig& cfg, const Problem& pb) {
  ReferenceResult ref;
  const Ensemble ens(pb.initial_particles);
  const auto sub = reference_subspace(cfg, ens, ref.subspace);
  const RegularizedPotential pot{pb.model, cfg.lambda};
  BarrierSolveOptions opts;
  opts.tol_grad = cfg.reference.tol_grad;
  opts.max_iter = cfg.reference.max_iter;
  Vector x0 = ens.mean();
  if (sub) x0 = sub->project_point(x0);

  try {
    if (pb.constraints.empty()) {
      const BarrierSolveResult r = solve_barrier(BarrierPotential{pot, {}, 1.0}, x0, sub, opts);
      ref.stages.push_back(LadderStage{0.0, r, phi_reg(pot, r.minimizer)});
      if (!r.converged) {
        ref.error = "unconstrained reference stopped at gradient norm " + format_double(r.grad_norm);
        return ref;
      }
      ref.u_ref = r.minimizer;
      ref.available = true;
      return ref;
    }
    if (!pb.constraints.strictly_feasible(x0)) {
      ref.error = "initial ensemble mean is not strictly feasible; no reference start point";
      return ref;
    }
    const std::vector<double> ladder =
        cfg.reference.tau_ladder.empty() ? default_ladder(cfg) : cfg.reference.tau_ladder;
    try {
      ConstrainedSolveResult res = solve_constrained(pot, pb.constraints, x0, ladder, sub, opts);
      ref.stages = res.stages;
      ref.kkt = res.kkt;
      ref.u_star = res.kkt.point;
    } catch (const LadderFailure& e) {
      ref.stages = e.completed();
      ref.error = e.what();
    }
    if (cfg.penalty.kind == PenaltyKind::kConstant) {
      for (const auto& s : ref.stages) {
        if (s.tau == cfg.penalty.tau0) ref.u_star_tau = s.result.minimizer;
      }
      if (ref.u_star_tau) ref.u_ref = *ref.u_star_tau;
    } else if (ref.u_star) {
      ref.u_ref = *ref.u_star;
    }
    ref.available = ref.u_ref.size() > 0;
  } catch (const Error& e) {
    ref.error = e.what();
  }
  return ref;
}

std::string reference_point_label(const ExperimentConfig& cfg, const Problem& pb,
                                  const ReferenceResult& ref) {
  if (!ref.available) return "none";
  if (pb.constraints.empty()) return "unconstrained";
  return cfg.penalty.kind == PenaltyKind::kConstant ? "u_star_tau" : "u_star";
}

json stage_json(const LadderStage& s) {
  return {{"tau", s.tau},
          {"phi_reg", number_json(s.phi_reg)},
          {"objective", number_json(s.result.objective)},
          {"grad_norm", number_json(s.result.grad_norm)},
          {"iterations", s.result.iterations},
          {"converged", s.result.converged}};
}

json reference_json(const ReferenceResult& ref, const std::string& point) {
  json j;
  j["available"] = ref.available;
  j["error"] = ref.error;
  j["subspace"] = ref.subspace;
  j["reference_point"] = point;
  j["stages"] = json::array();
  for (const auto& s : ref.stages) j["stages"].push_back(stage_json(s));
  j["u_star_tau"] = ref.u_star_tau ? vector_json(*ref.u_star_tau) : json(nullptr);
  j["u_star"] = ref.u_star ? vector_json(*ref.u_star) : json(nullptr);
  if (ref.kkt) {
    j["kkt"] = {{"stationarity", number_json(ref.kkt->stationarity_norm)},
                {"complementarity", number_json(ref.kkt->complementarity)},
                {"primal_feasibility", number_json(ref.kkt->primal_feasibility)},
                {"multipliers_nonnegative", ref.kkt->multipliers_nonnegative},
                {"multipliers", vector_json(ref.kkt->multipliers)}};
  } else {
    j["kkt"] = nullptr;
  }
  return j;
}

json constants_json(const TheoryConstants& k) {
  return {{"sigma_min", number_json(k.sigma_min)}, {"sigma_max", number_json(k.sigma_max)},
          {"lambda_max", number_json(k.lambda_max)}, {"J", k.j},
          {"V_e0", number_json(k.v_e0)},           {"eta0", number_json(k.eta0)},
          {"c_lip", number_json(k.c_lip)},         {"a", number_json(k.a)},
          {"b", number_json(k.b)},                 {"c", number_json(k.c)},
          {"w", number_json(k.w)},                 {"k1", number_json(k.k1)},
          {"t_circ", number_json(k.t_circ)},       {"mu", number_json(k.mu)},
          {"L", number_json(k.L)}};
}

// Per-checkpoint diagnostics.
class Diagnostics {
 public:
  Diagnostics(const ExperimentConfig& cfg, const Problem& pb, const FlowSpec& spec,
              const AffineSubspace& sub, const Vector& u_ref)
      : cfg_(cfg), pb_(pb), spec_(spec), sub_(sub), u_ref_(u_ref) {
    if (u_ref_.size() > 0) g_ref_ = pb_.model.map->apply(u_ref_);
  }

  CheckpointRow row(double t, const Ensemble& ens, const IntegrationStats& st) const {
    const ForwardModel& m = pb_.model;
    const Matrix g = m.map->apply_columns(ens.particles());
    const EnsembleStats s = compute_stats(ens, g);
    const Vector& mean = s.mean;
    const ScheduleValues sv = eval_schedules(spec_.inflation, spec_.penalty, t);
    CheckpointRow r;
    r.t = t;
    r.v_e = s.spread;
    try {
      r.eta_min = min_eigenvalue_on_span(s, sub_);
    } catch (const DegenerateSpan&) {
      r.eta_min = 0.0;
    }
    r.margin = feasibility_margin(pb_.constraints, mean);
    const RegularizedPotential pot{m, cfg_.lambda};
    r.phi_reg = phi_reg(pot, mean);
    r.phi_b = pb_.constraints.empty() ? r.phi_reg
                                      : phi_barrier(BarrierPotential{pot, pb_.constraints, sv.tau}, mean);
    const Vector g_mean = m.map->apply(mean);
    if (u_ref_.size() > 0) {
      r.err_param = (mean - u_ref_).norm();
      r.err_obs = std::sqrt(m.noise_cov->inv_quad(g_mean - g_ref_));
    } else {
      r.err_param = kNaN;
      r.err_obs = kNaN;
    }
    r.subspace_dist = subspace_distance(ens, sub_);
    r.rho_t = sv.rho;
    r.tau_t = sv.tau;
    const Vector res = g_mean - m.y;
    r.phi_misfit = 0.5 * m.noise_cov->inv_quad(res);
    r.grad_flow_err = grad_flow_error(s, m);
    r.mean_norm = mean.norm();
    r.max_particle_norm = ens.particles().colwise().norm().maxCoeff();
    r.accepted = st.accepted;
    r.rejected_error = st.rejected_error;
    r.rejected_feasibility = st.rejected_feasibility;
    r.rhs_evals = st.rhs_evals;
    return r;
  }

 private:
  const ExperimentConfig& cfg_;
  const Problem& pb_;
  const FlowSpec& spec_;
  const AffineSubspace& sub_;
  Vector u_ref_;
  Vector g_ref_;
};

}  // namespace

TheoryConstants compute_theory_constants(const ExperimentConfig& cfg, const Problem& pb,
                                         const std::optional<Vector>& u_ref) {
  TheoryConstants k;
  const ForwardModel& m = pb.model;
  const Ensemble ens(pb.initial_particles);
  const EnsembleStats s = compute_stats(ens);
  const AffineSubspace sub = AffineSubspace::from_ensemble(ens);
  k.sigma_min = m.prior_cov->min_eigenvalue();
  k.sigma_max = m.prior_cov->max_eigenvalue();
  k.lambda_max = 1.0 / m.noise_cov->min_eigenvalue();
  k.j = ens.size();
  k.v_e0 = s.spread;
  k.eta0 = min_eigenvalue_on_span(s, sub);
  k.b = k.j / (2.0 * k.sigma_min * k.v_e0);
  k.c = 2.0 * k.sigma_max;
  if (pb.heat) {
    // Lipschitz constant of A u + ε sin(u): ‖A‖₂ + ε.
    Eigen::SelfAdjointEigenSolver<Matrix> es(pb.heat->a, Eigen::EigenvaluesOnly);
    k.c_lip = es.eigenvalues().cwiseAbs().maxCoeff() + std::abs(pb.heat->eps);
    k.t_circ = 0.0;
    const double rho = eval_schedules(cfg.inflation, cfg.penalty, k.t_circ).rho;
    k.a = (1.0 - rho) * k.c_lip * k.c_lip * k.lambda_max * k.j / k.sigma_min;
    k.w = 1.0 - k.a;
    k.k1 = ((1.0 - k.a) - k.eta0 * k.c * k.b) / ((1.0 - k.a) * std::pow(k.b, k.a) * k.eta0);
    if (u_ref) {
      // Hessian of Φ^reg at the reference point, restricted to the span.
      const Vector& u = *u_ref;
      const Matrix& a = pb.heat->a;
      const double eps = pb.heat->eps;
      Matrix jac = a;
      jac.diagonal().array() += eps * u.array().cos();
      const Vector wres = m.noise_cov->solve(Vector(m.map->apply(u) - m.y));
      Matrix h = jac.transpose() * m.noise_cov->solve(jac);
      h.diagonal().array() -= eps * u.array().sin() * wres.array();
      const Matrix& b = sub.basis;
      Matrix hb = b.transpose() * h * b + cfg.lambda * b.transpose() * m.prior_cov->solve(b);
      hb = 0.5 * (hb + hb.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Matrix> hs(hb, Eigen::EigenvaluesOnly);
      k.mu = hs.eigenvalues()(0);
      k.L = hs.eigenvalues()(hs.eigenvalues().size() - 1);
    }
  }
  return k;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  const auto start = std::chrono::steady_clock::now();
  cfg.validate();
  ExperimentResult out;
  out.config = cfg;
  const Problem pb = build_problem(cfg);
  const Ensemble ens0(pb.initial_particles);
  const AffineSubspace sub0 = AffineSubspace::from_ensemble(ens0);

  if (cfg.reference.enabled) {
    out.reference = compute_reference(cfg, pb);
  } else {
    out.reference.error = "reference disabled";
  }
  const std::string ref_label = reference_point_label(cfg, pb, out.reference);

  RecordMetadata& meta = out.record.meta;
  meta.name = cfg.name;
  meta.config_hash = config_hash(cfg);
  meta.variant = to_string(cfg.variant);
  meta.reference_point = ref_label;
  meta.truth_seed = cfg.truth_seed;
  meta.noise_seed = cfg.noise_seed;
  meta.ensemble_seed = cfg.ensemble_seed;
  meta.obs_seed = cfg.darcy2d.obs_seed;

  out.constants = compute_theory_constants(
      cfg, pb, out.reference.available ? std::optional<Vector>(out.reference.u_ref) : std::nullopt);

  FlowSpec spec;
  spec.variant = cfg.variant;
  spec.model = pb.model;
  spec.lambda = cfg.lambda;
  spec.constraints = pb.constraints;
  spec.inflation = cfg.inflation;
  spec.penalty = cfg.penalty;

  const Diagnostics diag(cfg, pb, spec, sub0, out.reference.u_ref);
  out.final_mean = ens0.mean();
  auto observer = [&](double t, const Ensemble& ens, const IntegrationStats& st) {
    out.record.rows.push_back(diag.row(t, ens, st));
    out.final_mean = ens.mean();
  };
  try {
    integrate(ens0, spec, cfg.integrator, observer);
  } catch (const StiffnessAbort& e) {
    meta.abort = AbortInfo{"stiffness", e.what(), e.time(), e.margin(), e.tau()};
  } catch (const DivergenceError& e) {
    const double tau = eval_schedules(cfg.inflation, cfg.penalty, e.time()).tau;
    meta.abort = AbortInfo{"divergence", e.what(), e.time(), kNaN, tau};
  } catch (const InvalidStart& e) {
    const double tau = eval_schedules(cfg.inflation, cfg.penalty, 0.0).tau;
    meta.abort = AbortInfo{"invalid-start", e.what(), 0.0,
                           feasibility_margin(pb.constraints, ens0.mean()), tau};
  } catch (const Error& e) {
    const double t = out.record.rows.empty() ? 0.0 : out.record.rows.back().t;
    meta.abort = AbortInfo{"error", e.what(), t, feasibility_margin(pb.constraints, out.final_mean),
                           eval_schedules(cfg.inflation, cfg.penalty, t).tau};
  }
  meta.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  if (!cfg.output_dir.empty()) {
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);
    write_text_file((dir / "config.json").string(), config_to_json(cfg) + "\n");
    write_text_file((dir / "record.csv").string(), record_to_csv(out.record));
    json rj = json::parse(record_to_json(out.record));
    rj["theory_constants"] = constants_json(out.constants);
    rj["pre_projected"] = pb.pre_projected;
    write_text_file((dir / "record.json").string(), rj.dump(1) + "\n");
    write_text_file((dir / "reference.json").string(),
                    reference_json(out.reference, ref_label).dump(1) + "\n");
    json pj = {{"truth", vector_json(pb.truth)},
               {"data", vector_json(pb.model.y)},
               {"initial_ensemble_mean", vector_json(ens0.mean())},
               {"noise_sd", cfg.noise_sd},
               {"constraints", to_string(cfg.constraints.kind)}};
    if (cfg.constraints.kind == ConstraintSpecKind::kNormBall) {
      pj["radius"] = static_cast<const NormBallConstraint&>(pb.constraints[0]).radius();
    }
    if (pb.box) pj["box"] = {{"lower", vector_json(pb.box->lower)}, {"upper", vector_json(pb.box->upper)}};
    if (pb.darcy) {
      const Matrix& p = pb.darcy->obs_points();
      json pts = json::array();
      for (Index i = 0; i < p.rows(); ++i) pts.push_back({p(i, 0), p(i, 1)});
      pj["obs_points"] = pts;
    }
    write_text_file((dir / "problem.json").string(), pj.dump(1) + "\n");
    if (meta.abort) {
      const AbortInfo& a = *meta.abort;
      json aj = {{"reason", a.reason},
                 {"message", a.message},
                 {"t", number_json(a.t)},
                 {"margin", number_json(a.margin)},
                 {"tau", number_json(a.tau)}};
      write_text_file((dir / "abort.json").string(), aj.dump(1) + "\n");
    }
  }
  return out;
}

// ----- overlays and fits -----------------------------------------------------

BoundOverlay collapse_bound_overlay(const TrajectoryRecord& rec, const TheoryConstants& k,
                                    double slack) {
  if (rec.rows.empty()) throw InvalidInput("empty record");
  BoundOverlay o;
  const double v0 = rec.rows.front().v_e;
  for (const auto& r : rec.rows) {
    const double bound = 1.0 / ((2.0 * k.sigma_min / static_cast<double>(k.j)) * r.t + 1.0 / v0);
    o.bound.push_back(bound);
    if (r.v_e > bound * (1.0 + slack)) ++o.violations;
  }
  return o;
}

double rate_estimate(const std::vector<double>& t, const std::vector<double>& values,
                     double window) {
  if (t.size() != values.size()) throw InvalidInput("time and value series differ in length");
  if (!(window > 0.0 && window <= 1.0)) throw InvalidInput("window must lie in (0, 1]");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] > 0.0) idx.push_back(i);
  }
  const auto take = static_cast<std::size_t>(std::ceil(window * static_cast<double>(idx.size())));
  if (take < 10) throw UndefinedRate("fewer than 10 points in the fit window");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  const double n = static_cast<double>(take);
  for (std::size_t q = idx.size() - take; q < idx.size(); ++q) {
    const double v = values[idx[q]];
    if (!(v > 0.0) || !std::isfinite(v)) throw UndefinedRate("nonpositive value in the fit window");
    const double x = std::log(t[idx[q]]);
    const double y = std::log(v);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double den = n * sxx - sx * sx;
  if (!(den > 0.0)) throw UndefinedRate("degenerate time window");
  return (n * sxy - sx * sy) / den;
}

double rate_estimate(const TrajectoryRecord& rec, const std::string& field, double window) {
  return rate_estimate(rec.column("t"), rec.column(field), window);
}

double grad_flow_error(const EnsembleStats& s, const ForwardModel& m) {
  if (!m.map->has_jacobian()) return kNaN;
  const Vector res = m.map->apply(s.mean) - m.y;
  const Vector grad = m.map->jacobian_transpose_apply(s.mean, m.noise_cov->solve(res));
  const Vector eki = s.cross_cov * m.noise_cov->solve(Vector(s.mean_g - m.y));
  return (eki - s.cov * grad).norm();
}

GradFlowScaling grad_flow_error_scaling(const TrajectoryRecord& rec) {
  GradFlowScaling out;
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : rec.rows) {
    if (!(r.t > 0.0) || !(r.grad_flow_err > 0.0) || !(r.v_e > 0.0)) continue;
    if (!std::isfinite(r.grad_flow_err)) continue;
    const double x = std::log(r.v_e);
    const double y = std::log(r.grad_flow_err);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++out.points;
    if (r.phi_misfit > 0.0) {
      out.max_ratio = std::max(out.max_ratio,
                               r.grad_flow_err / (std::sqrt(r.phi_misfit) * std::pow(r.v_e, 1.5)));
    }
  }
  if (out.points < 10) throw UndefinedRate("fewer than 10 positive error values");
  const double n = out.points;
  const double den = n * sxx - sx * sx;
  if (!(den > 0.0)) throw UndefinedRate("spread does not vary over the record");
  out.exponent = (n * sxy - sx * sy) / den;
  return out;
}

void write_text_file(const std::string& path, const std::string& text) {
  namespace fs = std::filesystem;
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw UsageError("cannot read '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace beki
