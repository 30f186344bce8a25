#include "p2r/rule.hpp"

#include <json.hpp>

#include <functional>
#include <set>

namespace p2r {

using json = nlohmann::ordered_json;

const char *cond_kind_name(CondKind k) {
  switch (k) {
  case CondKind::NodeKindIs:
    return "node-kind-is";
  case CondKind::CalleeNameIs:
    return "callee-name-is";
  case CondKind::FieldNameIs:
    return "field-name-is";
  case CondKind::OperatorIs:
    return "operator-is";
  case CondKind::LiteralValueIs:
    return "literal-value-is";
  case CondKind::ChildAtRole:
    return "child-at-role";
  case CondKind::ArgumentAt:
    return "argument-at";
  case CondKind::TargetsAnchor:
    return "targets-anchor";
  case CondKind::InstanceOf:
    return "instance-of";
  case CondKind::OccursBefore:
    return "occurs-before";
  case CondKind::AnyOperand:
    return "any-operand";
  case CondKind::Negated:
    return "negated";
  }
  return "?";
}

namespace {
std::optional<CondKind> cond_kind_from_name(const std::string &s) {
  static const std::map<std::string, CondKind> map = {
      {"node-kind-is", CondKind::NodeKindIs},
      {"callee-name-is", CondKind::CalleeNameIs},
      {"field-name-is", CondKind::FieldNameIs},
      {"operator-is", CondKind::OperatorIs},
      {"literal-value-is", CondKind::LiteralValueIs},
      {"child-at-role", CondKind::ChildAtRole},
      {"argument-at", CondKind::ArgumentAt},
      {"targets-anchor", CondKind::TargetsAnchor},
      {"instance-of", CondKind::InstanceOf},
      {"occurs-before", CondKind::OccursBefore},
      {"any-operand", CondKind::AnyOperand},
      {"negated", CondKind::Negated},
  };
  auto it = map.find(s);
  if (it == map.end())
    return std::nullopt;
  return it->second;
}
} // namespace

Condition Condition::node_kind_is(NodeKind k) {
  Condition c;
  c.kind = CondKind::NodeKindIs;
  c.node_kind = k;
  return c;
}
Condition Condition::instance_of(NodeKind k) {
  Condition c;
  c.kind = CondKind::InstanceOf;
  c.node_kind = k;
  return c;
}
Condition Condition::callee_name(std::string name) {
  Condition c;
  c.kind = CondKind::CalleeNameIs;
  c.names.push_back(std::move(name));
  return c;
}
Condition Condition::field_name(std::string name) {
  Condition c;
  c.kind = CondKind::FieldNameIs;
  c.names.push_back(std::move(name));
  return c;
}
Condition Condition::operator_is(std::string op) {
  Condition c;
  c.kind = CondKind::OperatorIs;
  c.names.push_back(std::move(op));
  return c;
}
Condition Condition::literal_value(std::string text) {
  Condition c;
  c.kind = CondKind::LiteralValueIs;
  c.names.push_back(std::move(text));
  return c;
}
Condition Condition::child_at_role(std::string role, std::vector<Condition> sub) {
  Condition c;
  c.kind = CondKind::ChildAtRole;
  c.role = std::move(role);
  c.sub = std::move(sub);
  return c;
}
Condition Condition::argument_at(int index, std::vector<Condition> sub) {
  Condition c;
  c.kind = CondKind::ArgumentAt;
  c.index = index;
  c.sub = std::move(sub);
  return c;
}
Condition Condition::targets_anchor(std::string anchor_id) {
  Condition c;
  c.kind = CondKind::TargetsAnchor;
  c.anchor = std::move(anchor_id);
  return c;
}
Condition Condition::occurs_before(std::string predicate_name) {
  Condition c;
  c.kind = CondKind::OccursBefore;
  c.predicate = std::move(predicate_name);
  return c;
}
Condition Condition::any_operand(std::vector<Condition> sub) {
  Condition c;
  c.kind = CondKind::AnyOperand;
  c.sub = std::move(sub);
  return c;
}
Condition Condition::negated(std::vector<Condition> sub) {
  Condition c;
  c.kind = CondKind::Negated;
  c.sub = std::move(sub);
  return c;
}

const VarAnchor *Rule::find_anchor(const std::string &id) const {
  for (const auto &a : anchors)
    if (a.anchor_id == id)
      return &a;
  return nullptr;
}

namespace {

void walk_conditions(const std::vector<Condition> &conds,
                     const std::function<void(const Condition &, int)> &fn,
                     int depth = 0) {
  for (const auto &c : conds) {
    fn(c, depth);
    walk_conditions(c.sub, fn, depth + 1);
  }
}

} // namespace

std::vector<RuleDiagnostic> validate_rule(const Rule &rule) {
  std::vector<RuleDiagnostic> out;
  auto warn = [&](std::string m) {
    out.push_back({RuleDiagnostic::Severity::Warning, std::move(m)});
  };
  auto error = [&](std::string m) {
    out.push_back({RuleDiagnostic::Severity::Error, std::move(m)});
  };

  std::set<std::string> anchor_ids;
  for (const auto &a : rule.anchors)
    if (!anchor_ids.insert(a.anchor_id).second)
      error("duplicate anchor " + a.anchor_id);

  std::set<std::string> predicate_names;
  for (const auto &p : rule.predicates)
    if (!predicate_names.insert(p.name).second)
      error("duplicate predicate name " + p.name);

  std::set<std::string> referenced;
  for (const auto &p : rule.predicates) {
    std::set<std::string> params(p.params.begin(), p.params.end());
    for (const auto &param : p.params)
      if (!anchor_ids.count(param))
        error("predicate " + p.name + " parameter " + param +
              " has no anchor entry");
    walk_conditions(p.conditions, [&](const Condition &c, int depth) {
      if (c.kind == CondKind::TargetsAnchor) {
        referenced.insert(c.anchor);
        if (!params.count(c.anchor))
          error("predicate " + p.name + " references anchor " + c.anchor +
                " missing from its params");
      }
      if (c.kind == CondKind::OccursBefore) {
        if (!predicate_names.count(c.predicate))
          error("predicate " + p.name + " occurs-before names unknown target " +
                c.predicate);
      }
      if (c.kind == CondKind::Negated && depth > 0)
        warn("predicate " + p.name +
             " nests a negated condition below the top level");
    });
  }
  for (const auto &a : rule.anchors)
    if (!referenced.count(a.anchor_id)) {
      bool in_params = false;
      for (const auto &p : rule.predicates)
        for (const auto &param : p.params)
          if (param == a.anchor_id)
            in_params = true;
      if (!in_params)
        warn("unused anchor " + a.anchor_id);
    }
  for (const auto &[id, _] : rule.anchor_constraints)
    if (!anchor_ids.count(id))
      error("anchor-constraints entry for unknown anchor " + id);
  if (rule.predicates.empty())
    warn("vacuous rule: no predicates");
  return out;
}

namespace {

constexpr int kRuleFormat = 1;

json cond_to_json(const Condition &c) {
  json j;
  j["kind"] = cond_kind_name(c.kind);
  switch (c.kind) {
  case CondKind::NodeKindIs:
  case CondKind::InstanceOf:
    j["node-kind"] = kind_name(c.node_kind);
    break;
  case CondKind::CalleeNameIs:
  case CondKind::FieldNameIs:
  case CondKind::OperatorIs:
  case CondKind::LiteralValueIs:
    j["names"] = c.names;
    break;
  case CondKind::ChildAtRole:
    j["role"] = c.role;
    break;
  case CondKind::ArgumentAt:
    j["index"] = c.index;
    break;
  case CondKind::TargetsAnchor:
    j["anchor"] = c.anchor;
    break;
  case CondKind::OccursBefore:
    j["predicate"] = c.predicate;
    break;
  case CondKind::AnyOperand:
  case CondKind::Negated:
    break;
  }
  if (!c.sub.empty()) {
    json sub = json::array();
    for (const auto &s : c.sub)
      sub.push_back(cond_to_json(s));
    j["sub"] = std::move(sub);
  }
  return j;
}

Condition cond_from_json(const json &j) {
  Condition c;
  auto kind = cond_kind_from_name(j.at("kind").get<std::string>());
  if (!kind)
    throw RuleError("unknown condition kind " + j.at("kind").get<std::string>());
  c.kind = *kind;
  if (j.contains("node-kind")) {
    auto k = kind_from_name(j.at("node-kind").get<std::string>());
    if (!k)
      throw RuleError("unknown node kind in condition");
    c.node_kind = *k;
  }
  if (j.contains("names"))
    c.names = j.at("names").get<std::vector<std::string>>();
  if (j.contains("role"))
    c.role = j.at("role").get<std::string>();
  if (j.contains("index"))
    c.index = j.at("index").get<int>();
  if (j.contains("anchor"))
    c.anchor = j.at("anchor").get<std::string>();
  if (j.contains("predicate"))
    c.predicate = j.at("predicate").get<std::string>();
  if (j.contains("sub"))
    for (const auto &s : j.at("sub"))
      c.sub.push_back(cond_from_json(s));
  return c;
}

json predicate_to_json(const Predicate &p) {
  json j;
  j["name"] = p.name;
  j["target-kind"] = kind_name(p.target_kind);
  j["polarity"] =
      p.polarity == Polarity::MustExist ? "must-exist" : "must-not-exist";
  j["params"] = p.params;
  json conds = json::array();
  for (const auto &c : p.conditions)
    conds.push_back(cond_to_json(c));
  j["conditions"] = std::move(conds);
  if (p.origin_node >= 0) {
    j["origin-node"] = p.origin_node;
    j["origin-side"] = p.origin_pre ? "pre" : "post";
  }
  return j;
}

Predicate predicate_from_json(const json &j) {
  Predicate p;
  p.name = j.at("name").get<std::string>();
  auto k = kind_from_name(j.at("target-kind").get<std::string>());
  if (!k)
    throw RuleError("unknown target-kind");
  p.target_kind = *k;
  std::string pol = j.at("polarity").get<std::string>();
  if (pol == "must-exist")
    p.polarity = Polarity::MustExist;
  else if (pol == "must-not-exist")
    p.polarity = Polarity::MustNotExist;
  else
    throw RuleError("unknown polarity " + pol);
  p.params = j.at("params").get<std::vector<std::string>>();
  for (const auto &c : j.at("conditions"))
    p.conditions.push_back(cond_from_json(c));
  if (j.contains("origin-node")) {
    p.origin_node = j.at("origin-node").get<int>();
    p.origin_pre = j.at("origin-side").get<std::string>() == "pre";
  }
  return p;
}

} // namespace

std::string serialize_rule(const Rule &rule) {
  json doc;
  doc["rule-format"] = kRuleFormat;
  doc["rule-id"] = rule.rule_id;
  doc["provenance"] = rule.provenance;
  if (!rule.flags.empty())
    doc["flags"] = rule.flags;
  json anchors = json::array();
  for (const auto &a : rule.anchors) {
    json ja;
    ja["anchor-id"] = a.anchor_id;
    ja["name"] = a.name;
    ja["declared-type"] = a.declared_type;
    ja["storage"] = storage_name(a.storage);
    anchors.push_back(std::move(ja));
  }
  doc["anchors"] = std::move(anchors);
  json constraints = json::object();
  for (const auto &[id, c] : rule.anchor_constraints) {
    json jc;
    jc["declared-type"] = c.declared_type;
    jc["storage"] = storage_name(c.storage);
    constraints[id] = std::move(jc);
  }
  doc["anchor-constraints"] = std::move(constraints);
  json preds = json::array();
  for (const auto &p : rule.predicates)
    preds.push_back(predicate_to_json(p));
  doc["predicates"] = std::move(preds);
  json cands = json::array();
  for (const auto &c : rule.candidates) {
    json jc;
    jc["origin"] = c.origin;
    jc["predicate"] = predicate_to_json(c.predicate);
    if (!c.order_pred.empty()) {
      jc["order-pred"] = c.order_pred;
      jc["candidate-first"] = c.candidate_first;
    }
    cands.push_back(std::move(jc));
  }
  doc["candidates"] = std::move(cands);
  return doc.dump(2) + "\n";
}

Rule deserialize_rule(const std::string &text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw RuleError(std::string("malformed rule document: ") + e.what());
  }
  try {
    if (!doc.contains("rule-format") ||
        doc["rule-format"].get<int>() != kRuleFormat)
      throw RuleError("unsupported rule-format version");
    Rule rule;
    rule.rule_id = doc.at("rule-id").get<std::string>();
    rule.provenance = doc.at("provenance").get<std::string>();
    if (doc.contains("flags"))
      rule.flags = doc.at("flags").get<std::vector<std::string>>();
    for (const auto &ja : doc.at("anchors")) {
      VarAnchor a;
      a.anchor_id = ja.at("anchor-id").get<std::string>();
      a.name = ja.at("name").get<std::string>();
      a.declared_type = ja.at("declared-type").get<std::string>();
      auto st = storage_from_name(ja.at("storage").get<std::string>());
      if (!st)
        throw RuleError("unknown storage in anchor");
      a.storage = *st;
      rule.anchors.push_back(std::move(a));
    }
    for (const auto &[id, jc] : doc.at("anchor-constraints").items()) {
      AnchorConstraint c;
      c.declared_type = jc.at("declared-type").get<std::string>();
      auto st = storage_from_name(jc.at("storage").get<std::string>());
      if (!st)
        throw RuleError("unknown storage in anchor constraint");
      c.storage = *st;
      rule.anchor_constraints[id] = c;
    }
    for (const auto &jp : doc.at("predicates"))
      rule.predicates.push_back(predicate_from_json(jp));
    if (doc.contains("candidates"))
      for (const auto &jc : doc.at("candidates")) {
        CandidatePredicate c;
        c.origin = jc.at("origin").get<std::string>();
        c.predicate = predicate_from_json(jc.at("predicate"));
        if (jc.contains("order-pred")) {
          c.order_pred = jc.at("order-pred").get<std::string>();
          c.candidate_first = jc.at("candidate-first").get<bool>();
        }
        rule.candidates.push_back(std::move(c));
      }
    return rule;
  } catch (const nlohmann::json::exception &e) {
    throw RuleError(std::string("malformed rule document: ") + e.what());
  }
}

} // namespace p2r
