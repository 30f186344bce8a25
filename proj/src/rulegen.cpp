#include "p2r/rulegen.hpp"

#include "p2r/matcher.hpp"

#include <algorithm>
#include <functional>
#include <set>
#include <sstream>

namespace p2r {

void GenerationConfig::check() const {
  for (const auto &[from, _] : wrapper_substitutions) {
    std::set<std::string> seen{from};
    std::string cur = from;
    while (true) {
      auto it = wrapper_substitutions.find(cur);
      if (it == wrapper_substitutions.end())
        break;
      cur = it->second;
      if (!seen.insert(cur).second)
        throw ConfigError("wrapper substitution cycle through " + cur);
    }
  }
}

int candidate_priority(const std::string &origin) {
  if (origin == "dfg-backward")
    return 0;
  if (origin == "dfg-forward")
    return 1;
  if (origin == "cfg-controlling-condition")
    return 2;
  if (origin == "cfg-sibling" || origin == "cfg-array-sibling")
    return 3;
  if (origin == "cfg-outermost")
    return 4;
  return 5; // parent/sibling statements and anything else
}

namespace {

std::string cond_fingerprint(const Condition &c) {
  std::ostringstream os;
  os << cond_kind_name(c.kind) << '(' << kind_name(c.node_kind) << ';';
  for (const auto &n : c.names)
    os << n << ',';
  os << c.role << ';' << c.index << ';' << c.anchor << ';' << c.predicate;
  for (const auto &s : c.sub)
    os << '[' << cond_fingerprint(s) << ']';
  os << ')';
  return os.str();
}

std::string conds_fingerprint(const std::vector<Condition> &conds) {
  std::string out;
  for (const auto &c : conds)
    out += cond_fingerprint(c) + "&";
  return out;
}

/// Roles recursed into when describing a node's shape. Statement lists
/// and bodies are deliberately skipped: they are context, not shape.
bool shape_role(const std::string &role) {
  static const std::set<std::string> roles = {
      "condition", "lhs",  "rhs",   "operand", "qualifier", "init",
      "expr",      "base", "index", "value",   "then-expr", "else-expr",
      "update",    "decl"};
  return roles.count(role) > 0;
}

class Generator {
public:
  Generator(const EditScript &script, GenLog *log)
      : script_(script), pre_(*script.pre), post_(*script.post), log_(log) {}

  Rule run() {
    if (script_.ops.empty())
      throw EmptyScriptError("no differential nodes");
    rule_.rule_id = pre_.function_name;
    plan_folds();
    for (size_t i = 0; i < script_.ops.size(); ++i)
      if (script_.ops[i].op != EditOpKind::Insert)
        handle_op(i);
    for (size_t i = 0; i < script_.ops.size(); ++i)
      if (script_.ops[i].op == EditOpKind::Insert)
        handle_op(i);
    if (rule_.predicates.empty())
      throw EmptyScriptError("no differential nodes survived generation");
    return std::move(rule_);
  }

private:
  void note(size_t op_idx, const std::string &outcome) {
    if (!log_)
      return;
    const EditOp &op = script_.ops[op_idx];
    std::ostringstream os;
    os << edit_op_name(op.op);
    const AstTree *t = op.op == EditOpKind::Insert ? &post_ : &pre_;
    NodeId id = op.op == EditOpKind::Insert ? op.post_node : op.pre_node;
    if (id != kInvalidNode) {
      os << " " << kind_name(t->node(id).kind);
      if (t->node(id).value)
        os << " \"" << *t->node(id).value << "\"";
      os << " line " << t->node(id).loc.start_line;
    }
    log_->entries.push_back({os.str(), outcome});
  }

  // --- anchors ---------------------------------------------------------
  std::string anchor_for(const std::string &name) {
    auto it = anchor_by_name_.find(name);
    if (it != anchor_by_name_.end())
      return it->second;
    const DeclaredVar *v = pre_.find_var(name);
    if (!v)
      v = post_.find_var(name);
    VarAnchor a;
    a.name = name;
    if (v) {
      a.declared_type = v->declared_type;
      a.storage = v->storage;
      a.anchor_id = "v" + name + "_" + std::to_string(v->decl_loc.start_line);
    } else {
      a.storage = Storage::GlobalRef;
      a.anchor_id = "v" + name + "_0";
    }
    rule_.anchors.push_back(a);
    rule_.anchor_constraints[a.anchor_id] = {a.declared_type, a.storage};
    anchor_by_name_[name] = a.anchor_id;
    return a.anchor_id;
  }

  // --- shape description -------------------------------------------------
  std::vector<Condition> describe(const AstTree &tree, NodeId id,
                                  std::set<std::string> &params) {
    std::vector<Condition> conds;
    const AstNode &n = tree.node(id);
    switch (n.kind) {
    case NodeKind::FunctionCall:
      conds.push_back(Condition::callee_name(*n.value));
      break;
    case NodeKind::VariableAccess: {
      std::string a = anchor_for(*n.value);
      params.insert(a);
      conds.push_back(Condition::targets_anchor(a));
      break;
    }
    case NodeKind::PointerFieldAccess:
    case NodeKind::DotFieldAccess:
      conds.push_back(Condition::field_name(*n.value));
      break;
    case NodeKind::AssignExpr:
    case NodeKind::BinaryExpr:
    case NodeKind::UnaryExpr:
      conds.push_back(Condition::operator_is(*n.value));
      break;
    case NodeKind::Literal:
    case NodeKind::StringLiteral:
      conds.push_back(Condition::literal_value(*n.value));
      break;
    case NodeKind::Parameter:
    case NodeKind::LocalVariable: {
      std::string a = anchor_for(*n.value);
      params.insert(a);
      conds.push_back(Condition::targets_anchor(a));
      break;
    }
    default:
      break;
    }
    for (NodeId c : n.children) {
      const AstNode &child = tree.node(c);
      if (child.role == "callee")
        continue; // carried by the call's name condition
      if (child.role.rfind("argument[", 0) == 0) {
        int idx = std::stoi(child.role.substr(9));
        std::vector<Condition> sub;
        sub.push_back(Condition::instance_of(child.kind));
        auto inner = describe(tree, c, params);
        sub.insert(sub.end(), inner.begin(), inner.end());
        conds.push_back(Condition::argument_at(idx, std::move(sub)));
        continue;
      }
      if (!shape_role(child.role))
        continue;
      std::vector<Condition> sub;
      sub.push_back(Condition::instance_of(child.kind));
      auto inner = describe(tree, c, params);
      sub.insert(sub.end(), inner.begin(), inner.end());
      conds.push_back(Condition::child_at_role(child.role, std::move(sub)));
    }
    return conds;
  }

  Predicate make_predicate(const AstTree &tree, NodeId id, Polarity polarity,
                           bool pre_side) {
    Predicate p;
    p.name = "func_" + std::to_string(next_id_++);
    p.target_kind = tree.node(id).kind;
    p.polarity = polarity;
    p.origin_node = static_cast<int>(id);
    p.origin_pre = pre_side;
    std::set<std::string> params;
    p.conditions = describe(tree, id, params);
    p.params.assign(params.begin(), params.end());
    return p;
  }

  // --- fold planning -----------------------------------------------------
  // delete(X) + insert(Y) of the same kind, in the same role, under a
  // matched parent pair: one must-exist predicate for X carrying a
  // negated condition distinguishing Y.
  void plan_folds() {
    for (size_t di = 0; di < script_.ops.size(); ++di) {
      const EditOp &del = script_.ops[di];
      if (del.op != EditOpKind::Delete)
        continue;
      NodeId pa = pre_.parent(del.pre_node);
      if (pa == kInvalidNode || !script_.matches.matched_pre(pa))
        continue;
      NodeId qa = script_.matches.pre_to_post[pa];
      const std::string &role = pre_.node(del.pre_node).role;
      for (size_t ii = 0; ii < script_.ops.size(); ++ii) {
        const EditOp &ins = script_.ops[ii];
        if (ins.op != EditOpKind::Insert)
          continue;
        if (post_.parent(ins.post_node) != qa)
          continue;
        if (post_.node(ins.post_node).role != role)
          continue;
        if (post_.node(ins.post_node).kind != pre_.node(del.pre_node).kind)
          continue;
        if (!distinguishing_condition(post_, ins.post_node))
          continue;
        fold_insert_[ii] = di;
        fold_delete_[di] = ii;
        break;
      }
    }
  }

  std::optional<Condition> distinguishing_condition(const AstTree &tree,
                                                    NodeId id) {
    const AstNode &n = tree.node(id);
    if (!n.value)
      return std::nullopt;
    switch (n.kind) {
    case NodeKind::FunctionCall:
      return Condition::callee_name(*n.value);
    case NodeKind::AssignExpr:
    case NodeKind::BinaryExpr:
    case NodeKind::UnaryExpr:
      return Condition::operator_is(*n.value);
    case NodeKind::Literal:
    case NodeKind::StringLiteral:
      return Condition::literal_value(*n.value);
    case NodeKind::PointerFieldAccess:
    case NodeKind::DotFieldAccess:
      return Condition::field_name(*n.value);
    default:
      return std::nullopt;
    }
  }

  // --- per-op handling ----------------------------------------------------
  bool inside_unmatched_pre(NodeId id) {
    NodeId p = pre_.parent(id);
    return p != kInvalidNode && !script_.matches.matched_pre(p);
  }

  bool inside_unmatched_post(NodeId id) {
    NodeId p = post_.parent(id);
    return p != kInvalidNode && !script_.matches.matched_post(p);
  }

  void handle_op(size_t i) {
    const EditOp &op = script_.ops[i];
    switch (op.op) {
    case EditOpKind::Insert:
      handle_insert(i);
      break;
    case EditOpKind::Delete:
      handle_delete(i);
      break;
    case EditOpKind::Update:
      handle_update(i);
      break;
    case EditOpKind::MoveReparent:
    case EditOpKind::MoveReorder:
      handle_move(i);
      break;
    }
  }

  void handle_insert(size_t i) {
    const EditOp &op = script_.ops[i];
    NodeId b = op.post_node;
    if (inside_unmatched_post(b)) {
      NodeId p = post_.parent(b);
      if (dropped_wrappers_.count(p)) {
        // Parent wrapper dropped; this child is its own insert root.
      } else {
        note(i, "absorbed into enclosing insert");
        return;
      }
    }
    if (auto fold = fold_insert_.find(i); fold != fold_insert_.end()) {
      note(i, "folded: negated condition on " +
                  pred_name_of_delete_[fold->second]);
      return;
    }
    const AstNode &n = post_.node(b);
    if (n.kind == NodeKind::BlockStmt) {
      dropped_wrappers_.insert(b);
      note(i, "dropped: structural wrapper");
      return;
    }
    Predicate p = make_predicate(post_, b, Polarity::MustNotExist, false);
    if (p.conditions.empty() && value_policy(n.kind) == ValuePolicy::Forbidden &&
        n.children.empty()) {
      note(i, "dropped: contentless insert");
      return;
    }
    // A must-not-exist pattern already present in the unpatched
    // function can never discriminate; the rule must match pre.
    if (witnessed_in_pre(p)) {
      note(i, "dropped: non-discriminating insert (present pre-patch)");
      return;
    }
    note(i, p.name);
    rule_.predicates.push_back(std::move(p));
  }

  bool witnessed_in_pre(const Predicate &pred) {
    Rule probe;
    probe.anchors = rule_.anchors;
    probe.anchor_constraints = rule_.anchor_constraints;
    Predicate neg = pred;
    neg.polarity = Polarity::MustNotExist;
    probe.predicates.push_back(std::move(neg));
    // Matches the pre function iff the pattern has no witness there.
    return !match_function(pre_, "", probe).has_value();
  }

  void handle_delete(size_t i) {
    const EditOp &op = script_.ops[i];
    NodeId a = op.pre_node;
    if (inside_unmatched_pre(a)) {
      note(i, "absorbed into enclosing delete");
      return;
    }
    Predicate p = make_predicate(pre_, a, Polarity::MustExist, true);
    if (auto fold = fold_delete_.find(i); fold != fold_delete_.end()) {
      NodeId b = script_.ops[fold->second].post_node;
      if (auto distinguishing = distinguishing_condition(post_, b))
        p.conditions.push_back(Condition::negated({*distinguishing}));
    }
    pred_name_of_delete_[i] = p.name;
    note(i, p.name);
    rule_.predicates.push_back(std::move(p));
  }

  void handle_update(size_t i) {
    const EditOp &op = script_.ops[i];
    NodeId a = op.pre_node;
    const AstNode &n = pre_.node(a);
    if (inside_unmatched_pre(a)) {
      note(i, "absorbed into enclosing delete");
      return;
    }
    if (a == pre_.root) {
      note(i, "dropped: function rename is not a matchable condition");
      return;
    }
    // A renamed callee child is the call's business.
    if (n.role == "callee") {
      NodeId call = pre_.parent(a);
      if (!script_.matches.matched_pre(call)) {
        note(i, "absorbed into the call's delete");
        return;
      }
      Predicate p = make_predicate(pre_, call, Polarity::MustExist, true);
      p.conditions.push_back(Condition::negated(
          {Condition::callee_name(op.new_value.value_or(""))}));
      note(i, p.name);
      rule_.predicates.push_back(std::move(p));
      return;
    }
    Predicate p = make_predicate(pre_, a, Polarity::MustExist, true);
    NodeId b = script_.matches.pre_to_post[a];
    if (auto distinguishing = distinguishing_condition(post_, b)) {
      p.conditions.push_back(Condition::negated({*distinguishing}));
      note(i, p.name);
      rule_.predicates.push_back(std::move(p));
      return;
    }
    // Value change not expressible as a condition: degrade to the
    // old-shape predicate plus a nonexistence pattern for the new one.
    note(i, p.name + " (new value inexpressible, kept old shape)");
    rule_.predicates.push_back(std::move(p));
  }

  void handle_move(size_t i) {
    const EditOp &op = script_.ops[i];
    NodeId a = op.pre_node;
    NodeId pa = pre_.parent(a);
    if (inside_unmatched_pre(a) ||
        (pa != kInvalidNode && !script_.matches.matched_pre(pa))) {
      note(i, "absorbed: moved out of a deleted context");
      return;
    }
    if (pa == kInvalidNode) {
      note(i, "dropped: root cannot be pinned");
      return;
    }
    // Pin the node at its pre-patch position: describe the parent with
    // the moved child's slot included.
    Predicate p;
    p.name = "func_" + std::to_string(next_id_++);
    p.target_kind = pre_.node(pa).kind;
    p.polarity = Polarity::MustExist;
    p.origin_node = static_cast<int>(a);
    p.origin_pre = true;
    std::set<std::string> params;
    p.conditions = describe(pre_, pa, params);
    const AstNode &moved = pre_.node(a);
    if (!shape_role(moved.role) && moved.role.rfind("argument[", 0) != 0) {
      std::vector<Condition> sub;
      sub.push_back(Condition::instance_of(moved.kind));
      auto inner = describe(pre_, a, params);
      sub.insert(sub.end(), inner.begin(), inner.end());
      p.conditions.push_back(
          Condition::child_at_role(moved.role, std::move(sub)));
    }
    p.params.assign(params.begin(), params.end());
    // Identical pins collapse (several children moving under one new
    // wrapper would otherwise repeat the same parent description).
    std::string fp = kind_name(p.target_kind) + conds_fingerprint(p.conditions);
    if (!seen_pins_.insert(fp).second) {
      note(i, "dropped: duplicate position pin");
      return;
    }
    note(i, p.name);
    rule_.predicates.push_back(std::move(p));
  }

  const EditScript &script_;
  const AstTree &pre_;
  const AstTree &post_;
  GenLog *log_;
  Rule rule_;
  int next_id_ = 0;
  std::map<std::string, std::string> anchor_by_name_;
  std::map<size_t, size_t> fold_insert_; // insert op -> delete op
  std::map<size_t, size_t> fold_delete_; // delete op -> insert op
  std::map<size_t, std::string> pred_name_of_delete_;
  std::set<NodeId> dropped_wrappers_;
  std::set<std::string> seen_pins_;
};

} // namespace

Rule generate_raw_rule(const EditScript &script, GenLog *log) {
  Generator gen(script, log);
  return gen.run();
}

namespace {

/// Shared helper for the enrichment passes: describe a node of a tree
/// against an existing rule's anchor table.
class Describer {
public:
  Describer(Rule &rule, const AstTree &pre, const AstTree &post)
      : rule_(rule), pre_(pre), post_(post) {
    for (const auto &a : rule.anchors)
      anchor_by_name_[a.name] = a.anchor_id;
  }

  std::string anchor_for(const std::string &name) {
    auto it = anchor_by_name_.find(name);
    if (it != anchor_by_name_.end())
      return it->second;
    const DeclaredVar *v = pre_.find_var(name);
    if (!v)
      v = post_.find_var(name);
    VarAnchor a;
    a.name = name;
    if (v) {
      a.declared_type = v->declared_type;
      a.storage = v->storage;
      a.anchor_id = "v" + name + "_" + std::to_string(v->decl_loc.start_line);
    } else {
      a.storage = Storage::GlobalRef;
      a.anchor_id = "v" + name + "_0";
    }
    rule_.anchors.push_back(a);
    rule_.anchor_constraints[a.anchor_id] = {a.declared_type, a.storage};
    anchor_by_name_[name] = a.anchor_id;
    return a.anchor_id;
  }

  std::vector<Condition> describe(const AstTree &tree, NodeId id,
                                  std::set<std::string> &params) {
    std::vector<Condition> conds;
    const AstNode &n = tree.node(id);
    switch (n.kind) {
    case NodeKind::FunctionCall:
      conds.push_back(Condition::callee_name(*n.value));
      break;
    case NodeKind::VariableAccess: {
      std::string a = anchor_for(*n.value);
      params.insert(a);
      conds.push_back(Condition::targets_anchor(a));
      break;
    }
    case NodeKind::PointerFieldAccess:
    case NodeKind::DotFieldAccess:
      conds.push_back(Condition::field_name(*n.value));
      break;
    case NodeKind::AssignExpr:
    case NodeKind::BinaryExpr:
    case NodeKind::UnaryExpr:
      conds.push_back(Condition::operator_is(*n.value));
      break;
    case NodeKind::Literal:
    case NodeKind::StringLiteral:
      conds.push_back(Condition::literal_value(*n.value));
      break;
    case NodeKind::Parameter:
    case NodeKind::LocalVariable: {
      std::string a = anchor_for(*n.value);
      params.insert(a);
      conds.push_back(Condition::targets_anchor(a));
      break;
    }
    default:
      break;
    }
    for (NodeId c : n.children) {
      const AstNode &child = tree.node(c);
      if (child.role == "callee")
        continue;
      if (child.role.rfind("argument[", 0) == 0) {
        int idx = std::stoi(child.role.substr(9));
        std::vector<Condition> sub;
        sub.push_back(Condition::instance_of(child.kind));
        auto inner = describe(tree, c, params);
        sub.insert(sub.end(), inner.begin(), inner.end());
        conds.push_back(Condition::argument_at(idx, std::move(sub)));
        continue;
      }
      if (!shape_role(child.role))
        continue;
      std::vector<Condition> sub;
      sub.push_back(Condition::instance_of(child.kind));
      auto inner = describe(tree, c, params);
      sub.insert(sub.end(), inner.begin(), inner.end());
      conds.push_back(Condition::child_at_role(child.role, std::move(sub)));
    }
    return conds;
  }

  Predicate make(const AstTree &tree, NodeId id, Polarity polarity,
                 bool pre_side, int name_id) {
    Predicate p;
    p.name = "func_" + std::to_string(name_id);
    p.target_kind = tree.node(id).kind;
    p.polarity = polarity;
    p.origin_node = static_cast<int>(id);
    p.origin_pre = pre_side;
    std::set<std::string> params;
    p.conditions = describe(tree, id, params);
    p.params.assign(params.begin(), params.end());
    return p;
  }

private:
  Rule &rule_;
  const AstTree &pre_;
  const AstTree &post_;
  std::map<std::string, std::string> anchor_by_name_;
};

int next_func_id(const Rule &rule) {
  int next = 0;
  auto bump = [&](const Predicate &p) {
    if (p.name.rfind("func_", 0) == 0) {
      int v = std::atoi(p.name.c_str() + 5);
      next = std::max(next, v + 1);
    }
  };
  for (const auto &p : rule.predicates)
    bump(p);
  for (const auto &c : rule.candidates)
    bump(c.predicate);
  return next;
}

std::set<std::string> shared_anchors(const Predicate &a, const Predicate &b) {
  std::set<std::string> pa(a.params.begin(), a.params.end());
  std::set<std::string> out;
  for (const auto &x : b.params)
    if (pa.count(x))
      out.insert(x);
  return out;
}

bool have_predicate_shape(const Rule &rule, const Predicate &p) {
  std::string fp = conds_fingerprint(p.conditions) + kind_name(p.target_kind);
  for (const auto &q : rule.predicates)
    if (conds_fingerprint(q.conditions) + kind_name(q.target_kind) == fp)
      return true;
  for (const auto &c : rule.candidates)
    if (conds_fingerprint(c.predicate.conditions) +
            kind_name(c.predicate.target_kind) ==
        fp)
      return true;
  return false;
}

/// Comparable source positions across the pair: post-side locations
/// are used when both nodes exist there, else pre-side.
struct PositionOracle {
  const EditScript &script;

  std::optional<Loc> post_loc(const Predicate &p) const {
    if (p.origin_node < 0)
      return std::nullopt;
    if (!p.origin_pre)
      return script.post->node(p.origin_node).loc;
    NodeId b = script.matches.pre_to_post[p.origin_node];
    if (b != kInvalidNode)
      return script.post->node(b).loc;
    return std::nullopt;
  }
  std::optional<Loc> pre_loc(const Predicate &p) const {
    if (p.origin_node < 0)
      return std::nullopt;
    if (p.origin_pre)
      return script.pre->node(p.origin_node).loc;
    NodeId a = script.matches.post_to_pre[p.origin_node];
    if (a != kInvalidNode)
      return script.pre->node(a).loc;
    return std::nullopt;
  }

  /// -1: a first, 1: b first, 0: unknown.
  int order(const Predicate &a, const Predicate &b) const {
    auto la = post_loc(a), lb = post_loc(b);
    if (la && lb)
      return la->starts_before(*lb) ? -1 : 1;
    la = pre_loc(a);
    lb = pre_loc(b);
    if (la && lb)
      return la->starts_before(*lb) ? -1 : 1;
    return 0;
  }
};

void link_order(Rule &rule, size_t earlier_idx, size_t later_idx) {
  Predicate &earlier = rule.predicates[earlier_idx];
  const Predicate &later = rule.predicates[later_idx];
  for (const auto &c : earlier.conditions)
    if (c.kind == CondKind::OccursBefore && c.predicate == later.name)
      return;
  earlier.conditions.push_back(Condition::occurs_before(later.name));
}

NodeId nearest_control_ancestor(const AstTree &tree, NodeId id) {
  NodeId p = tree.parent(id);
  while (p != kInvalidNode) {
    if (is_control_kind(tree.node(p).kind))
      return p;
    p = tree.parent(p);
  }
  return kInvalidNode;
}

bool within_role_subtree(const AstTree &tree, NodeId node, NodeId ancestor,
                         const char *role) {
  NodeId slot = kInvalidNode;
  for (NodeId c : tree.node(ancestor).children)
    if (tree.node(c).role == role)
      slot = c;
  if (slot == kInvalidNode)
    return false;
  NodeId cur = node;
  while (cur != kInvalidNode) {
    if (cur == slot)
      return true;
    cur = tree.parent(cur);
  }
  return false;
}

NodeId outermost_expression(const AstTree &tree, NodeId id) {
  NodeId cur = id;
  NodeId p = tree.parent(cur);
  while (p != kInvalidNode && is_expression_kind(tree.node(p).kind)) {
    cur = p;
    p = tree.parent(cur);
  }
  return cur;
}

NodeId enclosing_statement(const AstTree &tree, NodeId id) {
  NodeId cur = id;
  while (cur != kInvalidNode && !is_statement_kind(tree.node(cur).kind))
    cur = tree.parent(cur);
  return cur;
}

} // namespace

Rule enrich_cfg(Rule rule, const EditScript &script) {
  const AstTree &pre = *script.pre;
  const AstTree &post = *script.post;
  Describer describer(rule, pre, post);
  PositionOracle pos{script};
  int next_id = next_func_id(rule);

  size_t original_count = rule.predicates.size();
  for (size_t pi = 0; pi < original_count; ++pi) {
    // Copy the descriptors we need; the vector may grow below.
    const Polarity polarity = rule.predicates[pi].polarity;
    const int origin = rule.predicates[pi].origin_node;
    const bool origin_is_pre = rule.predicates[pi].origin_pre;
    if (origin < 0)
      continue;
    const AstTree &tree = origin_is_pre ? pre : post;
    NodeId n = static_cast<NodeId>(origin);

    // (a) condition-of-control / body-of-control references, eagerly
    // for must-exist predicates.
    NodeId ctrl = nearest_control_ancestor(tree, n);
    if (polarity == Polarity::MustExist && ctrl != kInvalidNode &&
        origin_is_pre) {
      if (within_role_subtree(tree, n, ctrl, "condition")) {
        // Reference the featured statement of the then/do body.
        NodeId body = kInvalidNode;
        for (NodeId c : tree.node(ctrl).children) {
          const std::string &r = tree.node(c).role;
          if (r == "then-body" || r == "body")
            body = c;
        }
        if (body != kInvalidNode) {
          NodeId featured = body;
          if (tree.node(body).kind == NodeKind::BlockStmt &&
              !tree.node(body).children.empty())
            featured = tree.node(body).children.front();
          Predicate ctx = describer.make(tree, featured, Polarity::MustExist,
                                         origin_is_pre, next_id);
          if (!ctx.conditions.empty() && !have_predicate_shape(rule, ctx)) {
            ++next_id;
            rule.predicates.push_back(ctx);
            size_t ci = rule.predicates.size() - 1;
            if (!shared_anchors(rule.predicates[pi], ctx).empty()) {
              int ord = pos.order(rule.predicates[pi], rule.predicates[ci]);
              if (ord < 0)
                link_order(rule, pi, ci);
              else if (ord > 0)
                link_order(rule, ci, pi);
            }
          }
        }
      } else if (nearest_control_ancestor(tree, n) != kInvalidNode &&
                 rule.predicates[pi].target_kind !=
                     tree.node(ctrl).kind) {
        // Inside a controlled body: reference the controlling
        // condition, unless the predicate already describes it.
        for (NodeId c : tree.node(ctrl).children) {
          if (tree.node(c).role != "condition")
            continue;
          Predicate ctx = describer.make(tree, c, Polarity::MustExist,
                                         origin_is_pre, next_id);
          if (!ctx.conditions.empty() && !have_predicate_shape(rule, ctx)) {
            ++next_id;
            rule.predicates.push_back(ctx);
          }
        }
      }
    }

    // (b)/(c) sibling references for operands of assignments,
    // comparisons and array expressions: recorded as candidates.
    if (origin_is_pre) {
      NodeId parent = tree.parent(n);
      if (parent != kInvalidNode) {
        const AstNode &pn = tree.node(parent);
        bool binaryish = pn.kind == NodeKind::AssignExpr ||
                         pn.kind == NodeKind::BinaryExpr;
        bool arrayish = pn.kind == NodeKind::ArraySubscript;
        if (binaryish || arrayish) {
          for (NodeId sib : pn.children) {
            if (sib == n)
              continue;
            Predicate ctx = describer.make(tree, sib, Polarity::MustExist,
                                           origin_is_pre, next_id);
            if (ctx.conditions.empty() || have_predicate_shape(rule, ctx))
              continue;
            ++next_id;
            rule.candidates.push_back(
                {arrayish ? "cfg-array-sibling" : "cfg-sibling", ctx, "", false});
          }
        }
      }

      // (d) outermost wrapping expression.
      if (is_expression_kind(tree.node(n).kind)) {
        NodeId outer = outermost_expression(tree, n);
        if (outer != n) {
          Predicate ctx = describer.make(tree, outer, Polarity::MustExist,
                                         origin_is_pre, next_id);
          if (!ctx.conditions.empty() && !have_predicate_shape(rule, ctx)) {
            ++next_id;
            rule.candidates.push_back({"cfg-outermost", ctx, "", false});
          }
        }
      }
    }

    // (e) parent and sibling statements. For inserted statements the
    // pre-side neighborhood of the insertion point is what a target
    // must still exhibit.
    NodeId stmt = enclosing_statement(tree, n);
    if (stmt != kInvalidNode && stmt != tree.root) {
      NodeId parent = tree.parent(stmt);
      if (parent != kInvalidNode &&
          tree.node(parent).kind == NodeKind::BlockStmt) {
        const auto &sibs = tree.node(parent).children;
        auto it = std::find(sibs.begin(), sibs.end(), stmt);
        auto consider = [&](NodeId sib) {
          // Map post-side siblings of an inserted statement back to
          // their pre-side counterparts.
          NodeId target = sib;
          const AstTree *t = &tree;
          if (!origin_is_pre) {
            NodeId a = script.matches.post_to_pre[sib];
            if (a == kInvalidNode)
              return;
            target = a;
            t = &pre;
          }
          Predicate ctx =
              describer.make(*t, target, Polarity::MustExist, true, next_id);
          if (ctx.conditions.empty() || have_predicate_shape(rule, ctx))
            return;
          ++next_id;
          rule.candidates.push_back({"cfg-sibling-stmt", ctx, "", false});
        };
        if (it != sibs.begin())
          consider(*(it - 1));
        if (it + 1 != sibs.end())
          consider(*(it + 1));
      }
    }
  }
  return rule;
}

namespace {

struct AccessEvent {
  uint32_t pos; // pre-order index in the pre tree
  std::string name;
  bool lvalue;
  NodeId access;   // the VariableAccess / LocalVariable node
  NodeId defining; // AssignExpr / Initializer for lvalues, outermost
                   // wrapping expression for rvalues
};

bool is_lvalue_access(const AstTree &tree, NodeId id) {
  NodeId cur = id;
  NodeId p = tree.parent(cur);
  while (p != kInvalidNode) {
    const AstNode &pn = tree.node(p);
    const std::string &role = tree.node(cur).role;
    if (pn.kind == NodeKind::AssignExpr)
      return role == "lhs";
    if (pn.kind == NodeKind::UnaryExpr &&
        (pn.value == "++" || pn.value == "--" || pn.value == "post++" ||
         pn.value == "post--"))
      return true;
    if ((pn.kind == NodeKind::PointerFieldAccess ||
         pn.kind == NodeKind::DotFieldAccess) &&
        role == "qualifier") {
      cur = p;
      p = tree.parent(cur);
      continue;
    }
    if (pn.kind == NodeKind::ArraySubscript && role == "base") {
      cur = p;
      p = tree.parent(cur);
      continue;
    }
    return false;
  }
  return false;
}

std::vector<AccessEvent> access_events(const AstTree &tree) {
  std::vector<AccessEvent> events;
  std::vector<NodeId> order;
  std::vector<NodeId> stack{tree.root};
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    order.push_back(id);
    const auto &c = tree.node(id).children;
    stack.insert(stack.end(), c.rbegin(), c.rend());
  }
  std::map<NodeId, uint32_t> pos;
  for (uint32_t i = 0; i < order.size(); ++i)
    pos[order[i]] = i;
  for (NodeId id : order) {
    const AstNode &n = tree.node(id);
    if (n.kind == NodeKind::LocalVariable && !n.children.empty()) {
      // declaration with initializer: a defining event
      events.push_back({pos[id], *n.value, true, id, n.children.front()});
    }
    if (n.kind != NodeKind::VariableAccess || n.role == "callee")
      continue;
    bool lv = is_lvalue_access(tree, id);
    NodeId defining;
    if (lv) {
      NodeId p = tree.parent(id);
      while (p != kInvalidNode && tree.node(p).kind != NodeKind::AssignExpr &&
             tree.node(p).kind != NodeKind::UnaryExpr)
        p = tree.parent(p);
      defining = p == kInvalidNode ? id : p;
    } else {
      defining = outermost_expression(tree, id);
    }
    events.push_back({pos[id], *n.value, lv, id, defining});
  }
  std::sort(events.begin(), events.end(),
            [](const AccessEvent &a, const AccessEvent &b) {
              return a.pos < b.pos;
            });
  return events;
}

} // namespace

Rule enrich_dfg(Rule rule, const EditScript &script,
                const GenerationConfig &config) {
  const AstTree &pre = *script.pre;
  const AstTree &post = *script.post;
  Describer describer(rule, pre, post);
  int next_id = next_func_id(rule);
  auto events = access_events(pre);

  // Pre-order positions of pre nodes, for mapping post-side origins.
  std::vector<NodeId> pre_order;
  {
    std::vector<NodeId> stack{pre.root};
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      pre_order.push_back(id);
      const auto &c = pre.node(id).children;
      stack.insert(stack.end(), c.rbegin(), c.rend());
    }
  }
  std::map<NodeId, uint32_t> pre_pos;
  for (uint32_t i = 0; i < pre_order.size(); ++i)
    pre_pos[pre_order[i]] = i;

  // Map a post node to a position in the pre ordering: the end of the
  // nearest preceding matched subtree.
  auto post_to_pre_pos = [&](NodeId b) -> double {
    std::vector<NodeId> post_order;
    std::vector<NodeId> stack{post.root};
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      post_order.push_back(id);
      const auto &c = post.node(id).children;
      stack.insert(stack.end(), c.rbegin(), c.rend());
    }
    std::map<NodeId, uint32_t> post_pos;
    for (uint32_t i = 0; i < post_order.size(); ++i)
      post_pos[post_order[i]] = i;
    for (int i = static_cast<int>(post_pos[b]); i >= 0; --i) {
      NodeId q = post_order[i];
      NodeId a = script.matches.post_to_pre[q];
      if (a == kInvalidNode)
        continue;
      return pre_pos[a] + pre.descendant_count(a) + 0.5;
    }
    return -0.5;
  };

  size_t original_count = rule.predicates.size();
  for (size_t pi = 0; pi < original_count; ++pi) {
    const int origin = rule.predicates[pi].origin_node;
    const bool origin_is_pre = rule.predicates[pi].origin_pre;
    if (origin < 0)
      continue;
    const AstTree &tree = origin_is_pre ? pre : post;
    NodeId n = static_cast<NodeId>(origin);

    // Accesses of anchored variables within the differential block.
    struct DiffAccess {
      std::string name;
      bool lvalue;
      double pos;
    };
    std::vector<DiffAccess> accesses;
    std::vector<NodeId> subtree{n};
    auto desc = dfs_traverse(tree, n);
    subtree.insert(subtree.end(), desc.begin(), desc.end());
    for (NodeId id : subtree) {
      const AstNode &node = tree.node(id);
      if (node.kind != NodeKind::VariableAccess || node.role == "callee")
        continue;
      double p = origin_is_pre ? static_cast<double>(pre_pos[id])
                               : post_to_pre_pos(id);
      accesses.push_back({*node.value, is_lvalue_access(tree, id), p});
    }

    for (const auto &acc : accesses) {
      const DeclaredVar *var = pre.find_var(acc.name);
      if (!var || var->storage == Storage::GlobalRef)
        continue;
      auto add_pred = [&](NodeId defining, const char *origin_tag,
                          bool eager) {
        Predicate ctx =
            describer.make(pre, defining, Polarity::MustExist, true, next_id);
        if (ctx.conditions.empty() || have_predicate_shape(rule, ctx))
          return;
        ++next_id;
        if (eager) {
          rule.predicates.push_back(ctx);
          size_t ci = rule.predicates.size() - 1;
          if (rule.predicates[pi].polarity == Polarity::MustExist &&
              !shared_anchors(rule.predicates[pi], rule.predicates[ci])
                   .empty()) {
            // The definition precedes the differential use.
            link_order(rule, ci, pi);
          }
        } else {
          CandidatePredicate cand{origin_tag, ctx, "", false};
          // Promoted forward uses sit after the differential node;
          // the primary predicate gains the ordering condition then.
          cand.order_pred = rule.predicates[pi].name;
          cand.candidate_first = false;
          rule.candidates.push_back(std::move(cand));
        }
      };

      if (!acc.lvalue) {
        // Backward: nearest lvalue wins unless a rvalue sits closer.
        const AccessEvent *best_lv = nullptr;
        const AccessEvent *best_rv = nullptr;
        int hops = 0;
        for (auto it = events.rbegin(); it != events.rend(); ++it) {
          if (it->name != acc.name || it->pos >= acc.pos)
            continue;
          if (++hops > config.max_dfg_hops)
            break;
          if (it->lvalue && !best_lv)
            best_lv = &*it;
          if (!it->lvalue && !best_rv)
            best_rv = &*it;
          if (best_lv)
            break; // events scanned nearest-first
        }
        if (best_lv && (!best_rv || best_rv->pos < best_lv->pos))
          add_pred(best_lv->defining, "dfg-backward", true);
        else if (best_rv)
          add_pred(best_rv->defining, "dfg-backward", true);
        // Forward: nearest reference, candidate when it reads.
        for (const auto &ev : events) {
          if (ev.name != acc.name || ev.pos <= acc.pos)
            continue;
          if (!ev.lvalue)
            add_pred(ev.defining, "dfg-forward", false);
          break;
        }
      } else {
        // Defined here: forward reads until the next write.
        int hops = 0;
        for (const auto &ev : events) {
          if (ev.name != acc.name || ev.pos <= acc.pos)
            continue;
          if (ev.lvalue)
            break;
          if (++hops > config.max_dfg_hops)
            break;
          add_pred(ev.defining, "dfg-forward", false);
        }
      }
    }
  }
  return rule;
}

namespace {

bool is_commutative(const std::string &op) {
  static const std::set<std::string> ops = {"==", "!=", "+", "*", "&",
                                            "|",  "^",  "&&", "||"};
  return ops.count(op) > 0;
}

void symmetrize(std::vector<Condition> &conds) {
  bool commutative = false;
  for (const auto &c : conds)
    if (c.kind == CondKind::OperatorIs && c.names.size() == 1 &&
        is_commutative(c.names[0]))
      commutative = true;
  for (auto &c : conds) {
    if (!c.sub.empty())
      symmetrize(c.sub);
    if (commutative && c.kind == CondKind::ChildAtRole &&
        (c.role == "lhs" || c.role == "rhs")) {
      Condition repl = Condition::any_operand(std::move(c.sub));
      c = std::move(repl);
    }
  }
}

void substitute_names(std::vector<Condition> &conds,
                      const std::map<std::string, std::string> &map) {
  for (auto &c : conds) {
    if (c.kind == CondKind::CalleeNameIs) {
      std::vector<std::string> extra;
      for (const auto &n : c.names) {
        auto it = map.find(n);
        if (it != map.end() &&
            std::find(c.names.begin(), c.names.end(), it->second) ==
                c.names.end())
          extra.push_back(it->second);
      }
      c.names.insert(c.names.end(), extra.begin(), extra.end());
    }
    substitute_names(c.sub, map);
  }
}

/// Shape of a negation/null-compare pair: !X dropped against
/// X == NULL / X == 0 (and the != variants).
const std::vector<Condition> *null_compare_operand(const Predicate &p) {
  if (p.target_kind != NodeKind::BinaryExpr)
    return nullptr;
  bool eq = false;
  for (const auto &c : p.conditions)
    if (c.kind == CondKind::OperatorIs &&
        (c.names == std::vector<std::string>{"=="} ||
         c.names == std::vector<std::string>{"!="}))
      eq = true;
  if (!eq)
    return nullptr;
  const std::vector<Condition> *operand = nullptr;
  bool null_side = false;
  for (const auto &c : p.conditions) {
    if (c.kind != CondKind::ChildAtRole && c.kind != CondKind::AnyOperand)
      continue;
    // A side is "null-ish" when it is the literal 0 or the NULL name.
    bool nullish = false;
    for (const auto &s : c.sub) {
      if (s.kind == CondKind::LiteralValueIs &&
          s.names == std::vector<std::string>{"0"})
        nullish = true;
      if (s.kind == CondKind::TargetsAnchor &&
          s.anchor.rfind("vNULL_", 0) == 0)
        nullish = true;
    }
    if (nullish)
      null_side = true;
    else
      operand = &c.sub;
  }
  return null_side ? operand : nullptr;
}

const std::vector<Condition> *negation_operand(const Predicate &p) {
  if (p.target_kind != NodeKind::UnaryExpr)
    return nullptr;
  bool negation = false;
  for (const auto &c : p.conditions)
    if (c.kind == CondKind::OperatorIs &&
        c.names == std::vector<std::string>{"!"})
      negation = true;
  if (!negation)
    return nullptr;
  for (const auto &c : p.conditions)
    if (c.kind == CondKind::ChildAtRole && c.role == "operand")
      return &c.sub;
  return nullptr;
}

std::string operand_shape_key(const std::vector<Condition> &conds) {
  // Ignore the leading instance-of so !x->f matches x->f == NULL.
  std::string out;
  for (const auto &c : conds) {
    if (c.kind == CondKind::InstanceOf)
      continue;
    out += cond_fingerprint(c);
  }
  return out;
}

} // namespace

Rule generalize(Rule rule, const GenerationConfig &config, GenLog *log) {
  config.check();

  if (config.drop_noise) {
    // negation <-> null/zero-compare rewrites are style, not substance.
    std::set<size_t> drop;
    for (size_t i = 0; i < rule.predicates.size(); ++i) {
      const auto *neg = negation_operand(rule.predicates[i]);
      if (!neg)
        continue;
      for (size_t j = 0; j < rule.predicates.size(); ++j) {
        if (i == j || rule.predicates[i].polarity ==
                          rule.predicates[j].polarity)
          continue;
        const auto *cmp = null_compare_operand(rule.predicates[j]);
        if (!cmp)
          continue;
        if (operand_shape_key(*neg) == operand_shape_key(*cmp)) {
          drop.insert(i);
          drop.insert(j);
        }
      }
    }
    if (!drop.empty()) {
      Rule pruned = rule;
      pruned.predicates.clear();
      std::set<std::string> dropped_names;
      for (size_t i = 0; i < rule.predicates.size(); ++i) {
        if (drop.count(i)) {
          dropped_names.insert(rule.predicates[i].name);
          if (log)
            log->entries.push_back(
                {rule.predicates[i].name,
                 "dropped: style change (negation vs null-compare)"});
          continue;
        }
        pruned.predicates.push_back(rule.predicates[i]);
      }
      // Ordering references into dropped predicates go with them.
      for (auto &p : pruned.predicates) {
        std::erase_if(p.conditions, [&](const Condition &c) {
          return c.kind == CondKind::OccursBefore &&
                 dropped_names.count(c.predicate);
        });
      }
      rule = std::move(pruned);
    }
  }

  if (config.operand_symmetry)
    for (auto &p : rule.predicates)
      symmetrize(p.conditions);

  if (!config.wrapper_substitutions.empty()) {
    for (auto &p : rule.predicates)
      substitute_names(p.conditions, config.wrapper_substitutions);
    for (auto &c : rule.candidates)
      substitute_names(c.predicate.conditions, config.wrapper_substitutions);
  }
  return rule;
}

} // namespace p2r
