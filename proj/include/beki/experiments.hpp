#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "beki/dynamics.hpp"
#include "beki/forward_models.hpp"
#include "beki/integrator.hpp"
#include "beki/reference_solver.hpp"

namespace beki {

enum class ModelKind { kHeat1D, kDarcy2D };
enum class ConstraintSpecKind { kNone, kNormBall, kBox };

struct Heat1DConfig {
  double dx = 0.01;
  double dt = 0.05;
  double eps = 0.01;
};

struct Darcy2DConfig {
  int n = 8;
  double f = 1.0;
  int k_obs = 50;
  std::uint64_t obs_seed = 7;
};

/// Prior parameters for both models; the 1D model reads sigma2, length_scale
/// and r, the 2D model tau, alpha and s.
struct PriorConfig {
  double sigma2 = 10.0;
  double length_scale = 0.1;
  int r = 12;
  double tau = 0.01;
  double alpha = 2.0;
  int s = 25;
  /// C0 = prior covariance + nugget * λ_max(prior covariance) * I.
  double nugget = 1e-10;
};

struct ConstraintConfig {
  ConstraintSpecKind kind = ConstraintSpecKind::kNone;
  /// Norm ball: "half_prior_norm_of_truth" (r = ½‖u†‖²_{C0}) or "fixed".
  std::string radius_rule = "half_prior_norm_of_truth";
  double radius = 0.0;
  /// Box: explicit `lower`/`upper` (one entry = uniform) or from the truth.
  std::vector<double> lower;
  std::vector<double> upper;
  double slack = 0.3;
};

struct PreProjectConfig {
  bool enabled = false;
  double shrink = 0.1;
};

struct ReferenceConfig {
  bool enabled = true;
  /// "auto" (ensemble subspace when J <= d), "ensemble" or "full".
  std::string subspace = "auto";
  /// Empty: powers of ten from 1 to max(1e6, τ0), plus τ0.
  std::vector<double> tau_ladder;
  double tol_grad = 1e-8;
  long max_iter = 100000;
};

/// Everything that determines a run.  Serialized verbatim (with defaults
/// filled in) next to the results.
struct ExperimentConfig {
  std::string name = "custom";
  ModelKind model = ModelKind::kHeat1D;
  Heat1DConfig heat1d;
  Darcy2DConfig darcy2d;
  PriorConfig prior;
  double noise_sd = 0.1;
  ConstraintConfig constraints;
  FlowVariant variant = FlowVariant::kBarrierMean;
  double lambda = 0.01;
  InflationSchedule inflation{InflationKind::kConstant, 0.8, 0.0};
  PenaltySchedule penalty{PenaltyKind::kConstant, 1e4};
  int ensemble_size = 10;
  PreProjectConfig pre_project;
  IntegratorConfig integrator;
  ReferenceConfig reference;
  std::uint64_t truth_seed = 11;
  std::uint64_t noise_seed = 12;
  std::uint64_t ensemble_seed = 13;
  std::string output_dir;

  /// Throws InvalidInput on inconsistent values.
  void validate() const;
};

/// Parses a JSON config; unknown keys and malformed values throw UsageError.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::string& path);
/// Canonical JSON with every field present (sorted keys, 2-space indent).
std::string config_to_json(const ExperimentConfig& cfg);
/// FNV-1a 64-bit hash of the canonical JSON without `output_dir`, as 16 hex
/// digits.
std::string config_hash(const ExperimentConfig& cfg);

/// Preset names: pseudolinear, pseudolinear-log, norm-ball-control, darcy,
/// darcy-log, adaptive-tau and adaptive-tau-fixed-{1,10,100,1000,10000}.
std::vector<std::string> preset_names();
/// `desk` selects the shortened horizons and meshes used by `verify`.
/// Throws UsageError for unknown names.
ExperimentConfig preset(const std::string& name, bool desk = false);
std::string preset_description(const std::string& name);

/// Assembled inverse problem of a config.
struct Problem {
  ForwardModel model;
  Vector truth;
  ConstraintSet constraints;
  std::optional<BoxBounds> box;
  Matrix initial_particles;  ///< d x J, after optional pre-projection
  bool pre_projected = false;
  std::optional<Heat1DModel> heat;
  std::shared_ptr<const Darcy2DModel> darcy;
};

Problem build_problem(const ExperimentConfig& cfg);

/// One row per checkpoint.  The first eleven fields are the CSV columns.
struct CheckpointRow {
  double t = 0.0;
  double v_e = 0.0;
  double eta_min = 0.0;
  double margin = 0.0;
  double phi_reg = 0.0;
  double phi_b = 0.0;
  double err_param = 0.0;
  double err_obs = 0.0;
  double subspace_dist = 0.0;
  double rho_t = 0.0;
  double tau_t = 0.0;
  // JSON only.
  double grad_flow_err = 0.0;  ///< ‖Ĉ^{uG}Γ^{-1}(Ḡ - y) - Ĉ ∇Φ(ū)‖
  double phi_misfit = 0.0;     ///< Φ(ū)
  double mean_norm = 0.0;
  double max_particle_norm = 0.0;
  std::int64_t accepted = 0;
  std::int64_t rejected_error = 0;
  std::int64_t rejected_feasibility = 0;
  std::int64_t rhs_evals = 0;
};

struct AbortInfo {
  std::string reason;  ///< stiffness | divergence | invalid-start | error
  std::string message;
  double t = 0.0;
  double margin = 0.0;
  double tau = 0.0;
};

struct RecordMetadata {
  int version = 1;
  std::string name;
  std::string config_hash;
  std::string variant;
  std::string reference_point;  ///< u_star_tau | u_star | unconstrained | none
  std::uint64_t truth_seed = 0;
  std::uint64_t noise_seed = 0;
  std::uint64_t ensemble_seed = 0;
  std::uint64_t obs_seed = 0;
  std::optional<AbortInfo> abort;
  double runtime_seconds = 0.0;
};

struct TrajectoryRecord {
  RecordMetadata meta;
  std::vector<CheckpointRow> rows;

  /// Values of a CSV/JSON field by name; throws InvalidInput when unknown.
  std::vector<double> column(const std::string& field) const;
};

/// Fixed CSV column order.
const std::vector<std::string>& csv_columns();

std::string record_to_csv(const TrajectoryRecord& rec);
/// Restores the CSV columns (metadata and JSON-only fields stay default).
TrajectoryRecord record_from_csv(const std::string& text);
/// Non-finite numbers are stored as the strings "inf", "-inf" and "nan".
std::string record_to_json(const TrajectoryRecord& rec);
TrajectoryRecord record_from_json(const std::string& text);

struct ReferenceResult {
  bool available = false;
  std::string error;
  std::string subspace;  ///< ensemble | full
  std::vector<LadderStage> stages;
  std::optional<Vector> u_star_tau;
  std::optional<Vector> u_star;
  std::optional<KKTReport> kkt;
  Vector u_ref;  ///< point the error columns refer to (empty when unavailable)
};

/// Bound parameters of the collapse analysis for one run.
struct TheoryConstants {
  double sigma_min = 0.0;   ///< smallest eigenvalue of C0
  double sigma_max = 0.0;   ///< largest eigenvalue of C0
  double lambda_max = 0.0;  ///< largest eigenvalue of Γ^{-1}
  Index j = 0;
  double v_e0 = 0.0;
  double eta0 = 0.0;  ///< min eigenvalue of Ĉ(u_0) on the initial span
  double c_lip = std::numeric_limits<double>::quiet_NaN();
  double a = std::numeric_limits<double>::quiet_NaN();
  double b = 0.0;  ///< J / (2 σ_min V_e(0))
  double c = 0.0;  ///< 2 σ_max
  double w = std::numeric_limits<double>::quiet_NaN();
  double k1 = std::numeric_limits<double>::quiet_NaN();
  double t_circ = std::numeric_limits<double>::quiet_NaN();
  double mu = std::numeric_limits<double>::quiet_NaN();
  double L = std::numeric_limits<double>::quiet_NaN();
};

struct ExperimentResult {
  ExperimentConfig config;
  TrajectoryRecord record;
  ReferenceResult reference;
  TheoryConstants constants;
  Vector final_mean;
  bool aborted() const { return record.meta.abort.has_value(); }
};

/// Builds the problem, computes the reference solutions, integrates the
/// flow and (when output_dir is set) writes config.json, record.csv,
/// record.json, reference.json, problem.json and abort.json.  Integration
/// failures end up in record.meta.abort rather than propagating.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

TheoryConstants compute_theory_constants(const ExperimentConfig& cfg, const Problem& problem,
                                         const std::optional<Vector>& u_ref = std::nullopt);

struct BoundOverlay {
  std::vector<double> bound;
  int violations = 0;
};

/// V_e(t) <= 1 / ((2 σ_min / J) t + V_e(0)^{-1}) at each row; a violation is
/// V_e exceeding the bound by more than `slack` relative.
BoundOverlay collapse_bound_overlay(const TrajectoryRecord& rec, const TheoryConstants& k,
                                    double slack = 0.05);

/// Least-squares slope of log(field) against log(t) over the last `window`
/// fraction of the rows with t > 0.  Throws UndefinedRate with fewer than 10
/// points or nonpositive values.
double rate_estimate(const TrajectoryRecord& rec, const std::string& field,
                     double window = 0.3);
double rate_estimate(const std::vector<double>& t, const std::vector<double>& values,
                     double window = 0.3);

/// ‖Ĉ^{uG}Γ^{-1}(Ḡ - y) - Ĉ DG(ū)ᵀΓ^{-1}(G(ū) - y)‖ for statistics that
/// include the forward outputs; NaN when the map has no Jacobian.
double grad_flow_error(const EnsembleStats& stats, const ForwardModel& model);

struct GradFlowScaling {
  double exponent = 0.0;
  double max_ratio = 0.0;  ///< max Err / (√Φ(ū) V_e^{3/2})
  int points = 0;
};

/// Fits log Err against log V_e over the rows with t > 0 and Err > 0.
/// Throws UndefinedRate when fewer than 10 such rows exist.
GradFlowScaling grad_flow_error_scaling(const TrajectoryRecord& rec);

/// Writes `text` to `path`, creating parent directories.
void write_text_file(const std::string& path, const std::string& text);
/// Throws UsageError when the file cannot be read.
std::string read_text_file(const std::string& path);

}  // namespace beki
