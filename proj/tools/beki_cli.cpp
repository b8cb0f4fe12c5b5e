// Command-line front end: run experiments, list presets, run the acceptance
// suite and convert records.

#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "beki/acceptance.hpp"
#include "beki/experiments.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunError = 1;
constexpr int kExitVerifyFailed = 2;
constexpr int kExitUsage = 64;

int cmd_run(const std::string& target, bool desk, const std::string& out_dir, double t_final,
            int checkpoints) {
  beki::ExperimentConfig cfg;
  if (std::filesystem::is_regular_file(target)) {
    cfg = beki::load_config(target);
  } else {
    cfg = beki::preset(target, desk);
  }
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (t_final > 0.0) cfg.integrator.t_final = t_final;
  if (checkpoints > 0) cfg.integrator.checkpoints = checkpoints;
  if (cfg.output_dir.empty()) cfg.output_dir = "runs/" + cfg.name;

  const beki::ExperimentResult res = beki::run_experiment(cfg);
  const auto& rec = res.record;
  std::cout << "run " << cfg.name << " (" << rec.meta.config_hash << ") -> " << cfg.output_dir << "\n";
  if (!res.reference.error.empty()) std::cout << "reference: " << res.reference.error << "\n";
  if (!rec.rows.empty()) {
    const auto& last = rec.rows.back();
    std::cout << "t=" << last.t << " V_e=" << last.v_e << " margin=" << last.margin
              << " err_param=" << last.err_param << " err_obs=" << last.err_obs
              << " accepted=" << last.accepted << " rhs_evals=" << last.rhs_evals << "\n";
  }
  if (res.aborted()) {
    const auto& a = *rec.meta.abort;
    std::cerr << "run aborted (" << a.reason << ") at t=" << a.t << ": " << a.message << "\n";
    return kExitRunError;
  }
  return kExitOk;
}

int cmd_presets(const std::string& show, bool desk) {
  if (!show.empty()) {
    std::cout << beki::config_to_json(beki::preset(show, desk)) << "\n";
    return kExitOk;
  }
  for (const auto& name : beki::preset_names()) {
    std::cout << name << "\t" << beki::preset_description(name) << "\n";
  }
  return kExitOk;
}

int cmd_verify(const std::vector<std::string>& only) {
  beki::AcceptanceOptions opts;
  opts.only = only;
  opts.on_result = [](const beki::CriterionResult& r) { std::cout << beki::format_result(r) << std::endl; };
  const auto results = beki::run_acceptance(opts);
  int failed = 0;
  for (const auto& r : results) failed += r.passed ? 0 : 1;
  std::cout << "\n" << results.size() - failed << "/" << results.size() << " criteria passed\n";
  for (const auto& r : results) {
    std::cout << "  " << (r.passed ? "pass" : "FAIL") << "  " << r.id << "\n";
  }
  return failed == 0 ? kExitOk : kExitVerifyFailed;
}

int cmd_export(const std::string& path, const std::string& format, const std::string& output) {
  if (!std::filesystem::is_regular_file(path)) throw beki::UsageError("no such record: " + path);
  const std::string text = beki::read_text_file(path);
  const bool is_json = !text.empty() && text.find_first_not_of(" \t\r\n") != std::string::npos &&
                       text[text.find_first_not_of(" \t\r\n")] == '{';
  const beki::TrajectoryRecord rec =
      is_json ? beki::record_from_json(text) : beki::record_from_csv(text);
  const std::string out = format == "csv" ? beki::record_to_csv(rec) : beki::record_to_json(rec) + "\n";
  if (output.empty()) {
    std::cout << out;
  } else {
    beki::write_text_file(output, out);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained ensemble Kalman inversion experiments"};
  app.require_subcommand(1);

  std::string target, out_dir;
  bool run_desk = false;
  double t_final = 0.0;
  int checkpoints = 0;
  auto* run = app.add_subcommand("run", "Run a preset or a JSON config");
  run->add_option("config", target, "Preset name or path to a JSON config")->required();
  run->add_flag("--desk", run_desk, "Use the shortened desk-scale preset");
  run->add_option("--out", out_dir, "Output directory (default runs/<name>)");
  run->add_option("--t-final", t_final, "Override the integration horizon");
  run->add_option("--checkpoints", checkpoints, "Override the number of checkpoints");

  std::string show;
  bool show_desk = false;
  auto* presets = app.add_subcommand("presets", "List presets or print one as JSON");
  presets->add_option("--show", show, "Print the config of this preset");
  presets->add_flag("--desk", show_desk, "Print the desk-scale variant");

  std::vector<std::string> only;
  auto* verify = app.add_subcommand("verify", "Run the acceptance suite at desk scale");
  verify->add_option("--only", only, "Criterion ids to run (e.g. A1 A5)")->delimiter(',');

  std::string record, format = "csv", output;
  auto* exp = app.add_subcommand("export", "Convert a record between CSV and JSON");
  exp->add_option("record", record, "record.csv or record.json")->required();
  exp->add_option("--format", format, "Output format")->check(CLI::IsMember({"csv", "json"}));
  exp->add_option("--output,-o", output, "Output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*run) return cmd_run(target, run_desk, out_dir, t_final, checkpoints);
    if (*presets) return cmd_presets(show, show_desk);
    if (*verify) return cmd_verify(only);
    if (*exp) return cmd_export(record, format, output);
  } catch (const beki::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRunError;
  }
  return kExitUsage;
}
