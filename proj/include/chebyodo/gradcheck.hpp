#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace chebyodo {

// One parameter tensor (or layer input) verified against central differences.
struct GradCheckRow {
  std::string family;
  std::string tensor;
  int coords = 0;          // coordinates sampled
  double max_rel_err = 0.0;
  bool pass = false;
};

struct GradCheckReport {
  double tolerance = 0.0;
  std::vector<GradCheckRow> rows;

  bool all_pass() const;
};

// Families covered, in run order: chebykan, resblock, eksa_normalized,
// eksa_raw (output normalization off), head.
const std::vector<std::string>& gradcheck_families();

// Builds one small randomly initialized instance per family, runs one
// backward pass, and verifies every parameter tensor plus the layer input
// against central finite differences (h = 1e-5, up to 24 sampled coordinates
// per tensor, relative error |ad - fd| / max(|ad|, |fd|, 1e-3)).
//
// `inject_fault` may name a family; its first recorded backward result is
// then corrupted before the comparison, so the report demonstrably catches a
// wrong gradient end to end. Unknown names raise ContractError.
GradCheckReport run_gradcheck(double tolerance = 1e-4,
                              const std::string& inject_fault = "");

// One aligned row per tensor plus a PASS/FAIL summary line.
void print_gradcheck_report(const GradCheckReport& report, std::ostream& out);

}  // namespace chebyodo
