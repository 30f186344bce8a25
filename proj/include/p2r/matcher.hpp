#pragma once

#include "p2r/frontend.hpp"
#include "p2r/rule.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace p2r {

struct AstDatabase {
  std::vector<std::shared_ptr<SourceUnit>> units;
  struct FunctionRef {
    const SourceUnit *unit;
    const AstTree *tree;
  };
  std::vector<FunctionRef> functions; // deterministic order
  // NodeKind -> postings of (function index, node id)
  std::map<NodeKind, std::vector<std::pair<uint32_t, NodeId>>> index;
  // callee name -> postings
  std::map<std::string, std::vector<std::pair<uint32_t, NodeId>>> callee_index;
  std::vector<Diagnostic> diagnostics;
};

/// Parse and index all paths (files or directories of .c files).
AstDatabase build_db(const std::vector<std::string> &paths);
AstDatabase build_db_from_units(std::vector<std::shared_ptr<SourceUnit>> units);

/// Binding of rule anchors to a function's declared variables.
using Binding = std::map<std::string, const DeclaredVar *>;

struct Witness {
  std::string predicate;
  NodeId node;
  Loc loc;
};

struct FunctionMatch {
  std::string function_name;
  std::string file;
  Loc loc;
  std::map<std::string, std::string> bindings; // anchor-id -> variable name
  std::vector<Witness> witnesses;              // one per must-exist predicate
};

struct MatchReport {
  std::string rule_id;
  std::vector<FunctionMatch> matches;
  double elapsed_ms = 0; // recorded when scan timing is enabled
};

/// Evaluate one predicate on one function under a fixed binding.
/// Returns the DFS-first witness tuple member for that predicate, with
/// `prior` supplying targets of already-witnessed predicates (for
/// occurs-before references).
std::optional<NodeId>
find_witness(const AstTree &tree, const Predicate &pred, const Binding &binding,
             const std::map<std::string, NodeId> &prior);

/// Full rule verdict on one function; when it matches, the DFS-first
/// witness assignment is returned.
std::optional<FunctionMatch> match_function(const AstTree &tree,
                                            const std::string &file,
                                            const Rule &rule);

MatchReport evaluate_rule(const AstDatabase &db, const Rule &rule);

struct ScanOptions {
  int workers = 1;
  bool record_timing = false;
};

std::vector<MatchReport> scan(const AstDatabase &db,
                              const std::vector<Rule> &rules,
                              const ScanOptions &opts = {});

std::string report_to_text(const MatchReport &report, bool with_timing);
std::string report_to_json(const std::vector<MatchReport> &reports,
                           bool with_timing);

} // namespace p2r
