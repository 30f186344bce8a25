#include "p2r/matcher.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <thread>

namespace p2r {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string normalize_type(const std::string &t) {
  std::string out;
  bool space = false;
  for (char c : t) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = true;
      continue;
    }
    if (space && !out.empty() && c != '*' && c != '[' && c != ']')
      out += ' ';
    if (space && !out.empty() && c == '*' && out.back() != '*')
      out += ' ';
    space = false;
    out += c;
  }
  return out;
}

} // namespace

AstDatabase build_db_from_units(std::vector<std::shared_ptr<SourceUnit>> units) {
  AstDatabase db;
  db.units = std::move(units);
  for (const auto &u : db.units)
    for (const auto &d : u->diagnostics)
      db.diagnostics.push_back(d);
  for (const auto &u : db.units)
    for (const auto &fn : u->functions)
      db.functions.push_back({u.get(), &fn});
  for (uint32_t fi = 0; fi < db.functions.size(); ++fi) {
    const AstTree &tree = *db.functions[fi].tree;
    for (const auto &n : tree.nodes) {
      db.index[n.kind].push_back({fi, n.id});
      if (n.kind == NodeKind::FunctionCall && n.value)
        db.callee_index[*n.value].push_back({fi, n.id});
    }
  }
  return db;
}

AstDatabase build_db(const std::vector<std::string> &paths) {
  std::vector<std::string> files;
  for (const auto &p : paths) {
    fs::path path(p);
    if (fs::is_directory(path)) {
      for (const auto &entry : fs::recursive_directory_iterator(path)) {
        if (!entry.is_regular_file())
          continue;
        auto ext = entry.path().extension().string();
        if (ext == ".c" || ext == ".h")
          files.push_back(entry.path().string());
      }
    } else {
      files.push_back(p);
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<std::shared_ptr<SourceUnit>> units;
  std::vector<Diagnostic> extra;
  for (const auto &f : files) {
    try {
      units.push_back(
          std::make_shared<SourceUnit>(parse_unit(f, read_file(f))));
    } catch (const std::exception &e) {
      extra.push_back({f, 0, 0, e.what()});
    }
  }
  AstDatabase db = build_db_from_units(std::move(units));
  for (auto &d : extra)
    db.diagnostics.push_back(std::move(d));
  if (db.functions.empty())
    db.diagnostics.push_back({"", 0, 0, "warning: no parseable functions"});
  return db;
}

namespace {

struct EvalContext {
  const AstTree *tree;
  const Binding *binding;
  const std::map<std::string, NodeId> *prior; // chosen witnesses by pred name
  bool defer_unresolved_order = false;
  bool *saw_deferred = nullptr;
};

bool eval_conditions(const EvalContext &ctx, NodeId node,
                     const std::vector<Condition> &conds);

bool eval_condition(const EvalContext &ctx, NodeId id, const Condition &c) {
  const AstTree &tree = *ctx.tree;
  const AstNode &n = tree.node(id);
  auto value_in = [&](const std::vector<std::string> &names) {
    return n.value &&
           std::find(names.begin(), names.end(), *n.value) != names.end();
  };
  switch (c.kind) {
  case CondKind::NodeKindIs:
  case CondKind::InstanceOf:
    return n.kind == c.node_kind;
  case CondKind::CalleeNameIs:
    return n.kind == NodeKind::FunctionCall && value_in(c.names);
  case CondKind::FieldNameIs:
    return (n.kind == NodeKind::PointerFieldAccess ||
            n.kind == NodeKind::DotFieldAccess) &&
           value_in(c.names);
  case CondKind::OperatorIs:
    return (n.kind == NodeKind::BinaryExpr || n.kind == NodeKind::UnaryExpr ||
            n.kind == NodeKind::AssignExpr) &&
           value_in(c.names);
  case CondKind::LiteralValueIs:
    return (n.kind == NodeKind::Literal || n.kind == NodeKind::StringLiteral) &&
           value_in(c.names);
  case CondKind::ChildAtRole:
    for (NodeId ch : n.children)
      if (tree.node(ch).role == c.role && eval_conditions(ctx, ch, c.sub))
        return true;
    return false;
  case CondKind::ArgumentAt: {
    if (n.kind != NodeKind::FunctionCall)
      return false;
    std::string want = "argument[" + std::to_string(c.index) + "]";
    for (NodeId ch : n.children)
      if (tree.node(ch).role == want && eval_conditions(ctx, ch, c.sub))
        return true;
    return false;
  }
  case CondKind::TargetsAnchor: {
    auto it = ctx.binding->find(c.anchor);
    if (it == ctx.binding->end() || !it->second)
      return false;
    const DeclaredVar &var = *it->second;
    switch (n.kind) {
    case NodeKind::VariableAccess:
      return n.role != "callee" && n.value && *n.value == var.name;
    case NodeKind::Parameter:
    case NodeKind::LocalVariable:
      return n.value && *n.value == var.name;
    case NodeKind::Initializer: {
      NodeId p = tree.parent(id);
      if (p == kInvalidNode)
        return false;
      const AstNode &owner = tree.node(p);
      return owner.kind == NodeKind::LocalVariable && owner.value &&
             *owner.value == var.name;
    }
    default:
      return false;
    }
  }
  case CondKind::OccursBefore: {
    auto it = ctx.prior->find(c.predicate);
    if (it == ctx.prior->end()) {
      if (ctx.defer_unresolved_order) {
        if (ctx.saw_deferred)
          *ctx.saw_deferred = true;
        return true; // verified once the full assignment is known
      }
      return false;
    }
    return n.loc.starts_before(tree.node(it->second).loc);
  }
  case CondKind::AnyOperand:
    for (NodeId ch : n.children) {
      const std::string &r = tree.node(ch).role;
      if ((r == "lhs" || r == "rhs" || r == "operand") &&
          eval_conditions(ctx, ch, c.sub))
        return true;
    }
    return false;
  case CondKind::Negated:
    return !eval_conditions(ctx, id, c.sub);
  }
  return false;
}

bool eval_conditions(const EvalContext &ctx, NodeId id,
                     const std::vector<Condition> &conds) {
  for (const auto &c : conds)
    if (!eval_condition(ctx, id, c))
      return false;
  return true;
}

std::vector<NodeId> kind_candidates(const AstTree &tree, NodeKind kind) {
  std::vector<NodeId> out;
  for (const auto &n : tree.nodes)
    if (n.kind == kind)
      out.push_back(n.id);
  std::sort(out.begin(), out.end()); // ids are DFS pre-order
  return out;
}

/// Anchors used by any must-exist predicate bind existentially; the
/// rest are universally quantified inside the negations.
std::set<std::string> positive_anchors(const Rule &rule) {
  std::set<std::string> out;
  for (const auto &p : rule.predicates)
    if (p.polarity == Polarity::MustExist)
      for (const auto &a : p.params)
        out.insert(a);
  return out;
}

std::vector<const DeclaredVar *> anchor_candidates(const AstTree &tree,
                                                   const Rule &rule,
                                                   const VarAnchor &anchor) {
  AnchorConstraint cons{anchor.declared_type, anchor.storage};
  auto it = rule.anchor_constraints.find(anchor.anchor_id);
  if (it != rule.anchor_constraints.end())
    cons = it->second;
  std::vector<const DeclaredVar *> out;
  for (const auto &v : tree.declared_vars) {
    if (v.storage != cons.storage)
      continue;
    if (cons.storage == Storage::GlobalRef) {
      if (v.name == anchor.name)
        out.push_back(&v);
      continue;
    }
    if (normalize_type(v.declared_type) == normalize_type(cons.declared_type))
      out.push_back(&v);
  }
  return out;
}

struct RuleEvaluator {
  const AstTree &tree;
  const Rule &rule;
  std::vector<const Predicate *> positives;
  std::vector<const Predicate *> negatives;

  RuleEvaluator(const AstTree &t, const Rule &r) : tree(t), rule(r) {
    for (const auto &p : rule.predicates)
      (p.polarity == Polarity::MustExist ? positives : negatives)
          .push_back(&p);
  }

  /// Does any witness exist for a must-not-exist predicate, under any
  /// extension over its unbound anchors?
  bool negative_has_witness(const Predicate &pred, Binding binding,
                            const std::map<std::string, NodeId> &prior,
                            size_t param_idx = 0) {
    for (size_t i = param_idx; i < pred.params.size(); ++i) {
      const std::string &a = pred.params[i];
      if (binding.count(a))
        continue;
      const VarAnchor *anchor = rule.find_anchor(a);
      if (!anchor)
        return false;
      for (const DeclaredVar *v : anchor_candidates(tree, rule, *anchor)) {
        binding[a] = v;
        if (negative_has_witness(pred, binding, prior, i + 1))
          return true;
        binding.erase(a);
      }
      return false; // no candidate can bind this anchor
    }
    EvalContext ctx{&tree, &binding, &prior, false, nullptr};
    for (NodeId id : kind_candidates(tree, pred.target_kind))
      if (eval_conditions(ctx, id, pred.conditions))
        return true;
    return false;
  }

  bool order_constraints_hold(const Binding &binding,
                              const std::map<std::string, NodeId> &witnesses) {
    for (const Predicate *p : positives) {
      EvalContext ctx{&tree, &binding, &witnesses, false, nullptr};
      auto it = witnesses.find(p->name);
      if (it == witnesses.end())
        return false;
      if (!eval_conditions(ctx, it->second, p->conditions))
        return false;
    }
    return true;
  }

  bool assign_witnesses(const Binding &binding, size_t idx,
                        std::map<std::string, NodeId> &witnesses) {
    if (idx == positives.size()) {
      if (!order_constraints_hold(binding, witnesses))
        return false;
      for (const Predicate *p : negatives)
        if (negative_has_witness(*p, binding, witnesses))
          return false;
      return true;
    }
    const Predicate &p = *positives[idx];
    bool deferred = false;
    EvalContext ctx{&tree, &binding, &witnesses, true, &deferred};
    for (NodeId id : kind_candidates(tree, p.target_kind)) {
      if (!eval_conditions(ctx, id, p.conditions))
        continue;
      witnesses[p.name] = id;
      if (assign_witnesses(binding, idx + 1, witnesses))
        return true;
      witnesses.erase(p.name);
    }
    return false;
  }

  std::optional<FunctionMatch> run(const std::string &file) {
    std::set<std::string> pos_anchor_set = positive_anchors(rule);
    std::vector<const VarAnchor *> pos_anchors;
    for (const auto &a : rule.anchors)
      if (pos_anchor_set.count(a.anchor_id))
        pos_anchors.push_back(&a);

    std::vector<std::vector<const DeclaredVar *>> candidates;
    for (const VarAnchor *a : pos_anchors) {
      candidates.push_back(anchor_candidates(tree, rule, *a));
      if (candidates.back().empty())
        return std::nullopt;
    }
    std::vector<size_t> pick(pos_anchors.size(), 0);
    std::function<bool(size_t, Binding &)> enumerate =
        [&](size_t i, Binding &binding) -> bool {
      if (i == pos_anchors.size()) {
        std::map<std::string, NodeId> witnesses;
        if (assign_witnesses(binding, 0, witnesses)) {
          FunctionMatch m;
          m.function_name = tree.function_name;
          m.file = file;
          m.loc = tree.node(tree.root).loc;
          for (const auto &[a, v] : binding)
            m.bindings[a] = v->name;
          for (const Predicate *p : positives)
            m.witnesses.push_back(
                {p->name, witnesses[p->name], tree.node(witnesses[p->name]).loc});
          result = std::move(m);
          return true;
        }
        return false;
      }
      for (const DeclaredVar *v : candidates[i]) {
        binding[pos_anchors[i]->anchor_id] = v;
        if (enumerate(i + 1, binding))
          return true;
        binding.erase(pos_anchors[i]->anchor_id);
      }
      return false;
    };
    Binding binding;
    if (enumerate(0, binding))
      return result;
    // A rule with no positive predicate still needs the negative
    // side checked (pathological but legal before refinement).
    if (positives.empty() && pos_anchors.empty()) {
      std::map<std::string, NodeId> witnesses;
      Binding empty;
      for (const Predicate *p : negatives)
        if (negative_has_witness(*p, empty, witnesses))
          return std::nullopt;
      FunctionMatch m;
      m.function_name = tree.function_name;
      m.file = file;
      m.loc = tree.node(tree.root).loc;
      return m;
    }
    return std::nullopt;
  }

  std::optional<FunctionMatch> result;
};

bool function_may_match(const AstDatabase &db, uint32_t fi, const Rule &rule) {
  for (const auto &p : rule.predicates) {
    if (p.polarity != Polarity::MustExist)
      continue;
    auto it = db.index.find(p.target_kind);
    auto has_fn = [&](const std::vector<std::pair<uint32_t, NodeId>> &postings) {
      auto lo = std::lower_bound(
          postings.begin(), postings.end(), std::make_pair(fi, NodeId(0)));
      return lo != postings.end() && lo->first == fi;
    };
    if (it == db.index.end() || !has_fn(it->second))
      return false;
    for (const auto &c : p.conditions) {
      if (c.kind != CondKind::CalleeNameIs)
        continue;
      bool any = false;
      for (const auto &name : c.names) {
        auto ci = db.callee_index.find(name);
        if (ci != db.callee_index.end() && has_fn(ci->second))
          any = true;
      }
      if (!any)
        return false;
    }
  }
  return true;
}

} // namespace

std::optional<NodeId> find_witness(const AstTree &tree, const Predicate &pred,
                                   const Binding &binding,
                                   const std::map<std::string, NodeId> &prior) {
  EvalContext ctx{&tree, &binding, &prior, false, nullptr};
  for (NodeId id : kind_candidates(tree, pred.target_kind))
    if (eval_conditions(ctx, id, pred.conditions))
      return id;
  return std::nullopt;
}

std::optional<FunctionMatch> match_function(const AstTree &tree,
                                            const std::string &file,
                                            const Rule &rule) {
  RuleEvaluator ev(tree, rule);
  return ev.run(file);
}

MatchReport evaluate_rule(const AstDatabase &db, const Rule &rule) {
  MatchReport report;
  report.rule_id = rule.rule_id;
  for (uint32_t fi = 0; fi < db.functions.size(); ++fi) {
    if (!function_may_match(db, fi, rule))
      continue;
    const auto &ref = db.functions[fi];
    if (auto m = match_function(*ref.tree, ref.unit->path, rule))
      report.matches.push_back(std::move(*m));
  }
  return report;
}

std::vector<MatchReport> scan(const AstDatabase &db,
                              const std::vector<Rule> &rules,
                              const ScanOptions &opts) {
  std::vector<MatchReport> reports(rules.size());
  int workers = std::max(1, opts.workers);
  std::atomic<size_t> next{0};
  auto work = [&]() {
    while (true) {
      size_t i = next.fetch_add(1);
      if (i >= rules.size())
        return;
      auto start = std::chrono::steady_clock::now();
      reports[i] = evaluate_rule(db, rules[i]);
      auto end = std::chrono::steady_clock::now();
      reports[i].elapsed_ms =
          std::chrono::duration<double, std::milli>(end - start).count();
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < workers; ++i)
      pool.emplace_back(work);
    for (auto &t : pool)
      t.join();
  }
  std::stable_sort(reports.begin(), reports.end(),
                   [](const MatchReport &a, const MatchReport &b) {
                     return a.rule_id < b.rule_id;
                   });
  return reports;
}

std::string report_to_text(const MatchReport &report, bool with_timing) {
  std::ostringstream os;
  os << "rule " << report.rule_id << ": " << report.matches.size()
     << (report.matches.size() == 1 ? " match" : " matches");
  if (with_timing)
    os << " (" << report.elapsed_ms << " ms)";
  os << "\n";
  for (const auto &m : report.matches) {
    os << "  " << m.file << ":" << m.loc.start_line << " " << m.function_name;
    if (!m.bindings.empty()) {
      os << " [";
      bool first = true;
      for (const auto &[a, v] : m.bindings) {
        if (!first)
          os << ", ";
        first = false;
        os << a << "=" << v;
      }
      os << "]";
    }
    os << "\n";
    for (const auto &w : m.witnesses)
      os << "    " << w.predicate << " at line " << w.loc.start_line << "\n";
  }
  return os.str();
}

std::string report_to_json(const std::vector<MatchReport> &reports,
                           bool with_timing) {
  json doc;
  doc["report-format"] = 1;
  json arr = json::array();
  for (const auto &r : reports) {
    json jr;
    jr["rule-id"] = r.rule_id;
    if (with_timing)
      jr["elapsed-ms"] = r.elapsed_ms;
    json matches = json::array();
    for (const auto &m : r.matches) {
      json jm;
      jm["function-name"] = m.function_name;
      jm["file"] = m.file;
      jm["line"] = m.loc.start_line;
      jm["bindings"] = m.bindings;
      json ws = json::array();
      for (const auto &w : m.witnesses) {
        json jw;
        jw["predicate"] = w.predicate;
        jw["line"] = w.loc.start_line;
        ws.push_back(std::move(jw));
      }
      jm["witnesses"] = std::move(ws);
      matches.push_back(std::move(jm));
    }
    jr["matches"] = std::move(matches);
    arr.push_back(std::move(jr));
  }
  doc["reports"] = std::move(arr);
  return doc.dump(2) + "\n";
}

} // namespace p2r
