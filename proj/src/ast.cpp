#include "p2r/ast.hpp"

#include <algorithm>
#include <array>
#include <map>

namespace p2r {

namespace {

struct KindInfo {
  NodeKind kind;
  const char *name;
  ValuePolicy value;
};

constexpr std::array<KindInfo, 30> kKinds{{
    {NodeKind::Function, "Function", ValuePolicy::Required},
    {NodeKind::Parameter, "Parameter", ValuePolicy::Required},
    {NodeKind::LocalVariable, "LocalVariable", ValuePolicy::Required},
    {NodeKind::BlockStmt, "BlockStmt", ValuePolicy::Forbidden},
    {NodeKind::IfStmt, "IfStmt", ValuePolicy::Forbidden},
    {NodeKind::SwitchStmt, "SwitchStmt", ValuePolicy::Forbidden},
    {NodeKind::ForStmt, "ForStmt", ValuePolicy::Forbidden},
    {NodeKind::WhileStmt, "WhileStmt", ValuePolicy::Forbidden},
    {NodeKind::ReturnStmt, "ReturnStmt", ValuePolicy::Forbidden},
    {NodeKind::ExprStmt, "ExprStmt", ValuePolicy::Forbidden},
    {NodeKind::DeclStmt, "DeclStmt", ValuePolicy::Forbidden},
    {NodeKind::Initializer, "Initializer", ValuePolicy::Forbidden},
    {NodeKind::FunctionCall, "FunctionCall", ValuePolicy::Required},
    {NodeKind::VariableAccess, "VariableAccess", ValuePolicy::Required},
    {NodeKind::PointerFieldAccess, "PointerFieldAccess", ValuePolicy::Required},
    {NodeKind::DotFieldAccess, "DotFieldAccess", ValuePolicy::Required},
    {NodeKind::ArraySubscript, "ArraySubscript", ValuePolicy::Forbidden},
    {NodeKind::AssignExpr, "AssignExpr", ValuePolicy::Required},
    {NodeKind::BinaryExpr, "BinaryExpr", ValuePolicy::Required},
    {NodeKind::UnaryExpr, "UnaryExpr", ValuePolicy::Required},
    {NodeKind::CastExpr, "CastExpr", ValuePolicy::Required},
    {NodeKind::Literal, "Literal", ValuePolicy::Required},
    {NodeKind::StringLiteral, "StringLiteral", ValuePolicy::Required},
    {NodeKind::SizeofExpr, "SizeofExpr", ValuePolicy::Optional},
    {NodeKind::CommaExpr, "CommaExpr", ValuePolicy::Forbidden},
    {NodeKind::ConditionalExpr, "ConditionalExpr", ValuePolicy::Forbidden},
    {NodeKind::LabelStmt, "LabelStmt", ValuePolicy::Required},
    {NodeKind::GotoStmt, "GotoStmt", ValuePolicy::Required},
    {NodeKind::BreakStmt, "BreakStmt", ValuePolicy::Forbidden},
    {NodeKind::ContinueStmt, "ContinueStmt", ValuePolicy::Forbidden},
}};

const KindInfo &info(NodeKind k) { return kKinds[static_cast<size_t>(k)]; }

// splitmix64 finalizer; good avalanche, cheap.
uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void fp_absorb(Fingerprint &fp, uint64_t v) {
  fp.hi = mix64(fp.hi ^ v);
  fp.lo = mix64(fp.lo + (v * 0xc2b2ae3d27d4eb4fULL) + 0x165667b19e3779f9ULL);
}

void fp_absorb_string(Fingerprint &fp, const std::string &s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  fp_absorb(fp, h);
  fp_absorb(fp, s.size());
}

} // namespace

const char *kind_name(NodeKind k) { return info(k).name; }

std::optional<NodeKind> kind_from_name(const std::string &name) {
  for (const auto &k : kKinds)
    if (name == k.name)
      return k.kind;
  return std::nullopt;
}

ValuePolicy value_policy(NodeKind k) { return info(k).value; }

bool is_statement_kind(NodeKind k) {
  switch (k) {
  case NodeKind::BlockStmt:
  case NodeKind::IfStmt:
  case NodeKind::SwitchStmt:
  case NodeKind::ForStmt:
  case NodeKind::WhileStmt:
  case NodeKind::ReturnStmt:
  case NodeKind::ExprStmt:
  case NodeKind::DeclStmt:
  case NodeKind::LabelStmt:
  case NodeKind::GotoStmt:
  case NodeKind::BreakStmt:
  case NodeKind::ContinueStmt:
    return true;
  default:
    return false;
  }
}

bool is_expression_kind(NodeKind k) {
  switch (k) {
  case NodeKind::FunctionCall:
  case NodeKind::VariableAccess:
  case NodeKind::PointerFieldAccess:
  case NodeKind::DotFieldAccess:
  case NodeKind::ArraySubscript:
  case NodeKind::AssignExpr:
  case NodeKind::BinaryExpr:
  case NodeKind::UnaryExpr:
  case NodeKind::CastExpr:
  case NodeKind::Literal:
  case NodeKind::StringLiteral:
  case NodeKind::SizeofExpr:
  case NodeKind::CommaExpr:
  case NodeKind::ConditionalExpr:
    return true;
  default:
    return false;
  }
}

bool is_control_kind(NodeKind k) {
  return k == NodeKind::IfStmt || k == NodeKind::SwitchStmt ||
         k == NodeKind::ForStmt || k == NodeKind::WhileStmt;
}

const char *storage_name(Storage s) {
  switch (s) {
  case Storage::Parameter:
    return "parameter";
  case Storage::Local:
    return "local";
  case Storage::GlobalRef:
    return "global-ref";
  }
  return "local";
}

std::optional<Storage> storage_from_name(const std::string &name) {
  if (name == "parameter")
    return Storage::Parameter;
  if (name == "local")
    return Storage::Local;
  if (name == "global-ref")
    return Storage::GlobalRef;
  return std::nullopt;
}

bool Loc::contains(const Loc &o) const {
  if (start_line > o.start_line ||
      (start_line == o.start_line && start_col > o.start_col))
    return false;
  if (end_line < o.end_line ||
      (end_line == o.end_line && end_col < o.end_col))
    return false;
  return true;
}

bool Loc::starts_before(const Loc &o) const {
  if (start_line != o.start_line)
    return start_line < o.start_line;
  return start_col < o.start_col;
}

void AstTree::ensure_index() const {
  if (parent_of_.size() == nodes.size() && !nodes.empty())
    return;
  rebuild_index();
}

void AstTree::rebuild_index() const {
  parent_of_.assign(nodes.size(), kInvalidNode);
  subtree_size_.assign(nodes.size(), 0);
  exact_fp_.assign(nodes.size(), Fingerprint{});
  shape_fp_.assign(nodes.size(), Fingerprint{});
  for (const auto &n : nodes)
    for (NodeId c : n.children) {
      if (c >= nodes.size())
        throw std::out_of_range("child id out of range");
      parent_of_[c] = n.id;
    }
  // Post-order pass for sizes and fingerprints.
  struct Frame {
    NodeId id;
    size_t next_child;
  };
  std::vector<Frame> stack;
  std::vector<char> done(nodes.size(), 0);
  for (NodeId start = 0; start < nodes.size(); ++start) {
    if (done[start] || parent_of_[start] != kInvalidNode)
      continue;
    stack.push_back({start, 0});
    while (!stack.empty()) {
      Frame &f = stack.back();
      const AstNode &n = nodes[f.id];
      if (f.next_child < n.children.size()) {
        stack.push_back({n.children[f.next_child++], 0});
        continue;
      }
      uint32_t sz = 1;
      Fingerprint ex, sh;
      fp_absorb(ex, static_cast<uint64_t>(n.kind) + 1);
      fp_absorb(sh, static_cast<uint64_t>(n.kind) + 1);
      if (n.value) {
        fp_absorb(ex, 0x76u);
        fp_absorb_string(ex, *n.value);
      } else {
        fp_absorb(ex, 0x30u);
      }
      fp_absorb(ex, n.children.size());
      fp_absorb(sh, n.children.size());
      for (NodeId c : n.children) {
        sz += subtree_size_[c];
        fp_absorb(ex, exact_fp_[c].hi);
        fp_absorb(ex, exact_fp_[c].lo);
        fp_absorb(sh, shape_fp_[c].hi);
        fp_absorb(sh, shape_fp_[c].lo);
      }
      subtree_size_[f.id] = sz;
      exact_fp_[f.id] = ex;
      shape_fp_[f.id] = sh;
      done[f.id] = 1;
      stack.pop_back();
    }
  }
}

NodeId AstTree::parent(NodeId id) const {
  if (id >= nodes.size())
    throw std::out_of_range("unknown node id " + std::to_string(id));
  ensure_index();
  return parent_of_[id];
}

size_t AstTree::descendant_count(NodeId id) const {
  node(id);
  ensure_index();
  return subtree_size_[id] - 1;
}

const DeclaredVar *AstTree::find_var(const std::string &name) const {
  for (const auto &v : declared_vars)
    if (v.name == name)
      return &v;
  return nullptr;
}

std::vector<NodeId> dfs_traverse(const AstTree &tree, NodeId from) {
  tree.node(from);
  std::vector<NodeId> out;
  out.reserve(tree.descendant_count(from));
  std::vector<NodeId> stack(tree.node(from).children.rbegin(),
                            tree.node(from).children.rend());
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    out.push_back(id);
    const auto &c = tree.node(id).children;
    stack.insert(stack.end(), c.rbegin(), c.rend());
  }
  return out;
}

Fingerprint subtree_hash(const AstTree &tree, NodeId node, HashMode mode) {
  tree.node(node);
  tree.ensure_index();
  return mode == HashMode::Exact ? tree.exact_fp_[node] : tree.shape_fp_[node];
}

bool subtree_equal(const AstTree &a, NodeId na, const AstTree &b, NodeId nb,
                   HashMode mode) {
  const AstNode &x = a.node(na);
  const AstNode &y = b.node(nb);
  if (x.kind != y.kind || x.children.size() != y.children.size())
    return false;
  if (mode == HashMode::Exact && x.value != y.value)
    return false;
  for (size_t i = 0; i < x.children.size(); ++i)
    if (!subtree_equal(a, x.children[i], b, y.children[i], mode))
      return false;
  return true;
}

namespace {
bool nodes_equal_rec(const AstTree &a, NodeId na, const AstTree &b, NodeId nb) {
  const AstNode &x = a.node(na);
  const AstNode &y = b.node(nb);
  if (x.kind != y.kind || x.value != y.value || x.role != y.role ||
      x.children.size() != y.children.size())
    return false;
  for (size_t i = 0; i < x.children.size(); ++i)
    if (!nodes_equal_rec(a, x.children[i], b, y.children[i]))
      return false;
  return true;
}
} // namespace

bool structurally_equal(const AstTree &a, const AstTree &b) {
  if (a.function_name != b.function_name)
    return false;
  if (a.nodes.empty() || b.nodes.empty())
    return a.nodes.empty() == b.nodes.empty();
  return nodes_equal_rec(a, a.root, b, b.root);
}

std::vector<std::string> validate_tree(const AstTree &tree) {
  std::vector<std::string> issues;
  auto complain = [&](std::string msg) { issues.push_back(std::move(msg)); };
  if (tree.nodes.empty()) {
    complain("tree has no nodes");
    return issues;
  }
  if (tree.root >= tree.nodes.size()) {
    complain("root id out of range");
    return issues;
  }
  if (tree.node(tree.root).kind != NodeKind::Function)
    complain("root is not a Function node");

  std::vector<int> parents(tree.nodes.size(), 0);
  for (const auto &n : tree.nodes) {
    if (n.id >= tree.nodes.size() || &tree.node(n.id) != &n)
      complain("node id mismatch at " + std::to_string(n.id));
    for (NodeId c : n.children) {
      if (c >= tree.nodes.size()) {
        complain("child id out of range under " + std::to_string(n.id));
        continue;
      }
      parents[c]++;
      if (!tree.node(n.id).loc.contains(tree.node(c).loc))
        complain("loc of child " + std::to_string(c) +
                 " not contained in parent " + std::to_string(n.id));
    }
    switch (value_policy(n.kind)) {
    case ValuePolicy::Required:
      if (!n.value)
        complain(std::string(kind_name(n.kind)) + " node " +
                 std::to_string(n.id) + " missing value");
      break;
    case ValuePolicy::Forbidden:
      if (n.value)
        complain(std::string(kind_name(n.kind)) + " node " +
                 std::to_string(n.id) + " carries unexpected value");
      break;
    case ValuePolicy::Optional:
      break;
    }
  }
  for (NodeId id = 0; id < tree.nodes.size(); ++id) {
    if (id == tree.root) {
      if (parents[id] != 0)
        complain("root has a parent");
    } else if (parents[id] != 1) {
      complain("node " + std::to_string(id) + " has " +
               std::to_string(parents[id]) + " parents");
    }
  }
  return issues;
}

} // namespace p2r
