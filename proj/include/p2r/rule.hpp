#pragma once

#include "p2r/ast.hpp"

#include <map>
#include <string>
#include <vector>

namespace p2r {

struct RuleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Rule-scoped variable identity. Matching binds parameters and locals
/// by declared type and storage, never by name; global references bind
/// by name (they cannot be alpha-renamed within a function).
struct VarAnchor {
  std::string anchor_id; // e.g. "vemail_525": name + declaration line
  std::string name;      // original name, binding hint for global-refs
  std::string declared_type;
  Storage storage = Storage::Local;
};

enum class CondKind : uint8_t {
  NodeKindIs,
  CalleeNameIs,
  FieldNameIs,
  OperatorIs,
  LiteralValueIs,
  ChildAtRole,
  ArgumentAt,
  TargetsAnchor,
  InstanceOf,
  OccursBefore,
  AnyOperand,
  Negated,
};
const char *cond_kind_name(CondKind k);

struct Condition {
  CondKind kind = CondKind::NodeKindIs;
  NodeKind node_kind = NodeKind::ExprStmt; // NodeKindIs / InstanceOf
  std::vector<std::string> names; // callee/field/operator/literal payload
  std::string role;               // ChildAtRole
  int index = -1;                 // ArgumentAt
  std::string anchor;             // TargetsAnchor
  std::string predicate;          // OccursBefore
  std::vector<Condition> sub;     // conjunction on the child subject

  static Condition node_kind_is(NodeKind k);
  static Condition instance_of(NodeKind k);
  static Condition callee_name(std::string name);
  static Condition field_name(std::string name);
  static Condition operator_is(std::string op);
  static Condition literal_value(std::string text);
  static Condition child_at_role(std::string role, std::vector<Condition> sub);
  static Condition argument_at(int index, std::vector<Condition> sub);
  static Condition targets_anchor(std::string anchor_id);
  static Condition occurs_before(std::string predicate_name);
  static Condition any_operand(std::vector<Condition> sub);
  static Condition negated(std::vector<Condition> sub);
};

enum class Polarity : uint8_t { MustExist, MustNotExist };

struct Predicate {
  std::string name; // func_0, func_1, ...
  NodeKind target_kind = NodeKind::ExprStmt;
  std::vector<std::string> params;     // anchor ids
  std::vector<Condition> conditions;   // conjunction
  Polarity polarity = Polarity::MustExist;
  // Provenance of the differential node this predicate describes;
  // enrichment walks outward from here. -1 when synthetic.
  int origin_node = -1;
  bool origin_pre = true;
};

struct AnchorConstraint {
  std::string declared_type;
  Storage storage = Storage::Local;
};

/// Context predicates recorded but not yet active; the refinement loop
/// promotes them in a fixed order.
struct CandidatePredicate {
  std::string origin; // backward-assignment, forward-rvalue, ...
  Predicate predicate;
  // occurs-before wiring applied at promotion time: when order_pred is
  // set, the source-earlier side gains the ordering condition.
  std::string order_pred;
  bool candidate_first = false;
};

struct Rule {
  std::string rule_id;
  std::string provenance;
  std::vector<VarAnchor> anchors;
  std::map<std::string, AnchorConstraint> anchor_constraints;
  std::vector<Predicate> predicates;
  std::vector<CandidatePredicate> candidates;
  std::vector<std::string> flags; // e.g. "residual-fp"

  const VarAnchor *find_anchor(const std::string &id) const;
};

struct RuleDiagnostic {
  enum class Severity { Warning, Error } severity;
  std::string message;
};

std::vector<RuleDiagnostic> validate_rule(const Rule &rule);

std::string serialize_rule(const Rule &rule);
Rule deserialize_rule(const std::string &doc);

/// Renders the rule as query text in the style of the underlying
/// engine's language. Deterministic bytes; refuses vacuous rules.
std::string emit_text(const Rule &rule);

} // namespace p2r
