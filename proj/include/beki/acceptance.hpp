#pragma once

#include <functional>
#include <string>
#include <vector>

namespace beki {

struct CriterionResult {
  std::string id;  ///< "A1" ... "A15"
  std::string title;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct AcceptanceOptions {
  /// Criterion ids to run; empty runs all of them.
  std::vector<std::string> only;
  /// Called as soon as a criterion finishes.
  std::function<void(const CriterionResult&)> on_result;
};

std::vector<std::string> acceptance_ids();

/// Runs the desk-scale acceptance checks.  Experiment runs shared between
/// criteria are computed once.  Exceptions inside a check turn into a failed
/// result carrying the message.
std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options = {});

/// "PASS A1  title  (detail) [12.3 s]"
std::string format_result(const CriterionResult& r);

}  // namespace beki
