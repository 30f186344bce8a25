#include "p2r/rule.hpp"

#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace p2r {

namespace {

std::string ql_operator_class(NodeKind kind, const std::string &op) {
  static const std::map<std::string, std::string> binary = {
      {"+", "AddExpr"},      {"-", "SubExpr"},        {"*", "MulExpr"},
      {"/", "DivExpr"},      {"%", "RemExpr"},        {"==", "EQExpr"},
      {"!=", "NEExpr"},      {"<", "LTExpr"},         {">", "GTExpr"},
      {"<=", "LEExpr"},      {">=", "GEExpr"},        {"&&", "LogicalAndExpr"},
      {"||", "LogicalOrExpr"}, {"&", "BitwiseAndExpr"}, {"|", "BitwiseOrExpr"},
      {"^", "XorExpr"},      {"<<", "LShiftExpr"},    {">>", "RShiftExpr"},
  };
  static const std::map<std::string, std::string> unary = {
      {"!", "NotExpr"},          {"~", "ComplementExpr"},
      {"-", "UnaryMinusExpr"},   {"+", "UnaryPlusExpr"},
      {"*", "PointerDereferenceExpr"}, {"&", "AddressOfExpr"},
      {"++", "PrefixIncrExpr"},  {"--", "PrefixDecrExpr"},
      {"post++", "PostfixIncrExpr"}, {"post--", "PostfixDecrExpr"},
  };
  static const std::map<std::string, std::string> assign = {
      {"=", "AssignExpr"},    {"+=", "AssignAddExpr"}, {"-=", "AssignSubExpr"},
      {"*=", "AssignMulExpr"}, {"/=", "AssignDivExpr"}, {"%=", "AssignRemExpr"},
      {"&=", "AssignAndExpr"}, {"|=", "AssignOrExpr"},  {"^=", "AssignXorExpr"},
      {"<<=", "AssignLShiftExpr"}, {">>=", "AssignRShiftExpr"},
  };
  const std::map<std::string, std::string> *table = nullptr;
  if (kind == NodeKind::BinaryExpr)
    table = &binary;
  else if (kind == NodeKind::UnaryExpr)
    table = &unary;
  else if (kind == NodeKind::AssignExpr)
    table = &assign;
  if (table) {
    auto it = table->find(op);
    if (it != table->end())
      return it->second;
  }
  return "";
}

std::string ql_type(NodeKind kind, const std::string &op = "") {
  if (!op.empty()) {
    std::string cls = ql_operator_class(kind, op);
    if (!cls.empty())
      return cls;
  }
  switch (kind) {
  case NodeKind::ArraySubscript:
    return "ArrayExpr";
  case NodeKind::CastExpr:
    return "CStyleCast";
  case NodeKind::SizeofExpr:
    return "SizeofOperator";
  case NodeKind::BinaryExpr:
    return "BinaryOperation";
  case NodeKind::UnaryExpr:
    return "UnaryOperation";
  case NodeKind::AssignExpr:
    return "Assignment";
  default:
    return kind_name(kind);
  }
}

std::string quote(const std::string &s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\')
      out += '\\';
    out += c;
  }
  out += '"';
  return out;
}

std::string role_getter(const std::string &role) {
  static const std::map<std::string, std::string> map = {
      {"condition", ".getCondition()"}, {"then-body", ".getThen()"},
      {"else-body", ".getElse()"},      {"body", ".getStmt()"},
      {"lhs", ".getLeftOperand()"},     {"rhs", ".getRightOperand()"},
      {"operand", ".getOperand()"},     {"qualifier", ".getQualifier()"},
      {"init", ".getInitializer()"},    {"expr", ".getExpr()"},
      {"base", ".getArrayBase()"},      {"index", ".getArrayOffset()"},
      {"value", ".getExpr()"},          {"then-expr", ".getThen()"},
      {"else-expr", ".getElse()"},      {"stmt", ".getStmt()"},
      {"update", ".getUpdate()"},       {"decl", ".getADeclaration()"},
  };
  auto it = map.find(role);
  if (it != map.end())
    return it->second;
  return ".getAChild()";
}

/// Finds a type-determining condition (instance-of / node-kind-is /
/// operator-is) so the access path can carry an inline cast.
std::string cast_for(const std::vector<Condition> &conds,
                     std::set<const Condition *> &consumed) {
  const Condition *kind_cond = nullptr;
  const Condition *op_cond = nullptr;
  for (const auto &c : conds) {
    if ((c.kind == CondKind::InstanceOf || c.kind == CondKind::NodeKindIs) &&
        !kind_cond)
      kind_cond = &c;
    if (c.kind == CondKind::OperatorIs && !op_cond)
      op_cond = &c;
  }
  if (op_cond && kind_cond) {
    consumed.insert(kind_cond);
    consumed.insert(op_cond);
    return ".(" + ql_type(kind_cond->node_kind, op_cond->names.at(0)) + ")";
  }
  if (kind_cond) {
    consumed.insert(kind_cond);
    return ".(" + ql_type(kind_cond->node_kind) + ")";
  }
  return "";
}

class Emitter {
public:
  explicit Emitter(const Rule &rule) : rule_(rule) {
    for (size_t i = 0; i < rule.predicates.size(); ++i)
      target_name_[rule.predicates[i].name] =
          "target_" + std::to_string(i);
  }

  std::string run() {
    std::ostringstream os;
    os << "import cpp\n";
    for (size_t i = 0; i < rule_.predicates.size(); ++i)
      emit_predicate(os, rule_.predicates[i], i);
    emit_query(os);
    return os.str();
  }

private:
  std::string target_of(const std::string &pred_name) const {
    auto it = target_name_.find(pred_name);
    return it == target_name_.end() ? "target_unknown" : it->second;
  }

  std::string target_type(const Predicate &p) const {
    // An operator condition on the target refines its declared class.
    for (const auto &c : p.conditions)
      if (c.kind == CondKind::OperatorIs)
        return ql_type(p.target_kind, c.names.at(0));
    return ql_type(p.target_kind);
  }

  std::string anchor_ql_type(const std::string &anchor_id) const {
    const VarAnchor *a = rule_.find_anchor(anchor_id);
    if (a && a->storage == Storage::Parameter)
      return "Parameter";
    return "Variable";
  }

  /// Other predicates' targets this predicate mentions via
  /// occurs-before; they become extra parameters.
  std::vector<std::string> referenced_predicates(const Predicate &p) const {
    std::vector<std::string> out;
    std::function<void(const Condition &)> walk = [&](const Condition &c) {
      if (c.kind == CondKind::OccursBefore && c.predicate != p.name)
        out.push_back(c.predicate);
      for (const auto &s : c.sub)
        walk(s);
    };
    for (const auto &c : p.conditions)
      walk(c);
    return out;
  }

  void emit_predicate(std::ostringstream &os, const Predicate &p, size_t idx) {
    os << "\npredicate " << p.name << "(";
    bool first = true;
    for (const auto &a : p.params) {
      if (!first)
        os << ", ";
      first = false;
      os << anchor_ql_type(a) << " " << a;
    }
    for (const auto &ref : referenced_predicates(p)) {
      const Predicate *other = nullptr;
      for (const auto &q : rule_.predicates)
        if (q.name == ref)
          other = &q;
      if (!other)
        continue;
      if (!first)
        os << ", ";
      first = false;
      os << target_type(*other) << " " << target_of(ref);
    }
    std::string self = target_of(p.name);
    if (p.polarity == Polarity::MustExist) {
      if (!first)
        os << ", ";
      os << target_type(p) << " " << self;
      os << ") {\n";
      auto atoms = render_conjunction(self, p.conditions, p);
      emit_atoms(os, atoms, "\t");
      os << "}\n";
    } else {
      os << ") {\n";
      os << "\texists(" << target_type(p) << " " << self << " |\n";
      auto atoms = render_conjunction(self, p.conditions, p);
      emit_atoms(os, atoms, "\t\t");
      os << "\t)\n}\n";
    }
  }

  void emit_atoms(std::ostringstream &os, const std::vector<std::string> &atoms,
                  const char *indent) {
    if (atoms.empty()) {
      os << indent << "any()\n";
      return;
    }
    for (size_t i = 0; i < atoms.size(); ++i) {
      os << indent;
      if (i > 0)
        os << "and ";
      os << atoms[i] << "\n";
    }
  }

  std::vector<std::string> render_conjunction(const std::string &subject,
                                              const std::vector<Condition> &conds,
                                              const Predicate &pred) {
    std::vector<std::string> atoms;
    std::set<const Condition *> consumed;
    // Inline casts that were consumed by the subject still need their
    // remaining siblings rendered; here the subject is already typed,
    // so type conditions render as instanceof atoms instead.
    for (const auto &c : conds) {
      if (consumed.count(&c))
        continue;
      render_condition(subject, c, pred, atoms, /*subject_typed=*/true);
    }
    return atoms;
  }

  void render_condition(const std::string &subject, const Condition &c,
                        const Predicate &pred, std::vector<std::string> &atoms,
                        bool subject_typed) {
    switch (c.kind) {
    case CondKind::NodeKindIs:
    case CondKind::InstanceOf:
      if (!subject_typed)
        atoms.push_back(subject + " instanceof " + ql_type(c.node_kind));
      break;
    case CondKind::OperatorIs:
      if (!subject_typed)
        atoms.push_back(subject + ".getOperator()=" + quote(c.names.at(0)));
      break;
    case CondKind::CalleeNameIs: {
      std::string atom;
      if (c.names.size() == 1) {
        atom = subject + ".getTarget().hasName(" + quote(c.names[0]) + ")";
      } else {
        atom = "(";
        for (size_t i = 0; i < c.names.size(); ++i) {
          if (i)
            atom += " or ";
          atom += subject + ".getTarget().hasName(" + quote(c.names[i]) + ")";
        }
        atom += ")";
      }
      atoms.push_back(std::move(atom));
      break;
    }
    case CondKind::FieldNameIs:
      atoms.push_back(subject + ".getTarget().getName()=" + quote(c.names.at(0)));
      break;
    case CondKind::LiteralValueIs:
      atoms.push_back(subject + ".getValue()=" + quote(c.names.at(0)));
      break;
    case CondKind::TargetsAnchor:
      if (pred.target_kind == NodeKind::Initializer && subject_typed)
        atoms.push_back(c.anchor + ".getInitializer()=" + subject);
      else
        atoms.push_back(subject + ".getTarget()=" + c.anchor);
      break;
    case CondKind::OccursBefore:
      atoms.push_back(subject + ".getLocation().isBefore(" +
                      target_of(c.predicate) + ".getLocation())");
      break;
    case CondKind::ChildAtRole: {
      std::set<const Condition *> consumed;
      std::string child = subject + role_getter(c.role) +
                          cast_for(c.sub, consumed);
      render_children(child, c.sub, consumed, pred, atoms);
      break;
    }
    case CondKind::ArgumentAt: {
      std::set<const Condition *> consumed;
      std::string child = subject + ".getArgument(" + std::to_string(c.index) +
                          ")" + cast_for(c.sub, consumed);
      render_children(child, c.sub, consumed, pred, atoms);
      break;
    }
    case CondKind::AnyOperand: {
      std::set<const Condition *> consumed;
      std::string child =
          subject + ".getAnOperand()" + cast_for(c.sub, consumed);
      render_children(child, c.sub, consumed, pred, atoms);
      break;
    }
    case CondKind::Negated: {
      std::vector<std::string> inner;
      for (const auto &s : c.sub)
        render_condition(subject, s, pred, inner, subject_typed);
      if (inner.empty())
        break;
      std::string atom = "not (";
      for (size_t i = 0; i < inner.size(); ++i) {
        if (i)
          atom += " and ";
        atom += inner[i];
      }
      atom += ")";
      atoms.push_back(std::move(atom));
      break;
    }
    }
  }

  void render_children(const std::string &child,
                       const std::vector<Condition> &sub,
                       const std::set<const Condition *> &consumed,
                       const Predicate &pred, std::vector<std::string> &atoms) {
    bool rendered = false;
    for (const auto &s : sub) {
      if (consumed.count(&s))
        continue;
      size_t before = atoms.size();
      render_condition(child, s, pred, atoms, /*subject_typed=*/!consumed.empty());
      rendered |= atoms.size() > before;
    }
    if (!rendered)
      atoms.push_back("exists(" + child + ")");
  }

  void emit_query(std::ostringstream &os) {
    os << "\nfrom Function func";
    for (const auto &a : rule_.anchors)
      os << ", " << anchor_ql_type(a.anchor_id) << " " << a.anchor_id;
    for (size_t i = 0; i < rule_.predicates.size(); ++i)
      if (rule_.predicates[i].polarity == Polarity::MustExist)
        os << ", " << target_type(rule_.predicates[i]) << " "
           << target_of(rule_.predicates[i].name);
    os << "\nwhere\n";
    bool first = true;
    for (size_t i = 0; i < rule_.predicates.size(); ++i) {
      const Predicate &p = rule_.predicates[i];
      os << (first ? "" : "and ");
      first = false;
      if (p.polarity == Polarity::MustNotExist)
        os << "not ";
      os << p.name << "(";
      bool pf = true;
      for (const auto &a : p.params) {
        if (!pf)
          os << ", ";
        pf = false;
        os << a;
      }
      for (const auto &ref : referenced_predicates(p)) {
        if (!pf)
          os << ", ";
        pf = false;
        os << target_of(ref);
      }
      if (p.polarity == Polarity::MustExist) {
        if (!pf)
          os << ", ";
        os << target_of(p.name);
      }
      os << ")\n";
    }
    for (const auto &a : rule_.anchors) {
      auto it = rule_.anchor_constraints.find(a.anchor_id);
      const std::string type =
          it != rule_.anchor_constraints.end() ? it->second.declared_type
                                               : a.declared_type;
      Storage storage =
          it != rule_.anchor_constraints.end() ? it->second.storage : a.storage;
      if (!type.empty())
        os << "and " << a.anchor_id << ".getType().hasName(" << quote(type)
           << ")\n";
      switch (storage) {
      case Storage::Parameter:
        os << "and " << a.anchor_id << ".(Parameter).getFunction() = func\n";
        break;
      case Storage::Local:
        os << "and " << a.anchor_id << ".(LocalVariable).getFunction() = func\n";
        break;
      case Storage::GlobalRef:
        os << "and " << a.anchor_id << ".hasName(" << quote(a.name) << ")\n";
        break;
      }
    }
    os << "select func\n";
  }

  const Rule &rule_;
  std::map<std::string, std::string> target_name_;
};

} // namespace

std::string emit_text(const Rule &rule) {
  if (rule.predicates.empty())
    throw RuleError("vacuous rule: nothing to emit");
  return Emitter(rule).run();
}

} // namespace p2r
