#pragma once

#include "p2r/matcher.hpp"
#include "p2r/rule.hpp"
#include "p2r/rulegen.hpp"

#include <string>
#include <vector>

namespace p2r {

struct RegressionSet {
  struct MustMatch {
    const AstDatabase *db;
    std::string function_name;
  };
  std::vector<MustMatch> must_match;
  std::vector<const AstDatabase *> must_not_match;
  int budget = 16;
};

struct RegressionOutcome {
  int tp = 0;
  int fp = 0;
  std::vector<std::string> verdicts; // one line per entry
};

RegressionOutcome regression_check(const Rule &rule, const RegressionSet &set);

struct RefineResult {
  Rule rule;
  std::vector<std::string> log;
  int checks = 0;
  bool residual_fp = false;
};

/// Greedy promote-then-simplify loop; never trades away a true
/// positive, flags "residual-fp" when the budget runs out.
RefineResult refine_rule(const Rule &rule, const RegressionSet &set);

} // namespace p2r
