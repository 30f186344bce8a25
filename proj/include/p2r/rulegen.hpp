#pragma once

#include "p2r/rule.hpp"
#include "p2r/treediff.hpp"

#include <map>
#include <string>
#include <vector>

namespace p2r {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationConfig {
  std::map<std::string, std::string> wrapper_substitutions;
  bool drop_noise = true;
  bool operand_symmetry = true;
  int max_dfg_hops = 4;

  void check() const; // throws ConfigError on substitution cycles
};

/// Accounting: every editscript op lands in a predicate or is logged
/// as dropped with a reason.
struct GenLog {
  struct Entry {
    std::string op;      // formatted op description
    std::string outcome; // predicate name or "dropped: <reason>"
  };
  std::vector<Entry> entries;
};

struct EmptyScriptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

Rule generate_raw_rule(const EditScript &script, GenLog *log = nullptr);
Rule enrich_cfg(Rule rule, const EditScript &script);
Rule enrich_dfg(Rule rule, const EditScript &script,
                const GenerationConfig &config);
Rule generalize(Rule rule, const GenerationConfig &config,
                GenLog *log = nullptr);

/// Promotion priority of a recorded candidate (lower first):
/// backward-assignment, forward-rvalue, controlling-condition,
/// sibling, outermost-expression, parent/sibling statements.
int candidate_priority(const std::string &origin);

} // namespace p2r
