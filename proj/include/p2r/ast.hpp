#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace p2r {

/// Closed, versioned node taxonomy. Unknown constructs degrade to
/// ExprStmt/BinaryExpr with the raw token spelling as value.
enum class NodeKind : uint8_t {
  Function,
  Parameter,
  LocalVariable,
  BlockStmt,
  IfStmt,
  SwitchStmt,
  ForStmt,
  WhileStmt,
  ReturnStmt,
  ExprStmt,
  DeclStmt,
  Initializer,
  FunctionCall,
  VariableAccess,
  PointerFieldAccess,
  DotFieldAccess,
  ArraySubscript,
  AssignExpr,
  BinaryExpr,
  UnaryExpr,
  CastExpr,
  Literal,
  StringLiteral,
  SizeofExpr,
  CommaExpr,
  ConditionalExpr,
  LabelStmt,
  GotoStmt,
  BreakStmt,
  ContinueStmt,
};

const char *kind_name(NodeKind k);
std::optional<NodeKind> kind_from_name(const std::string &name);

/// Whether nodes of this kind carry a value payload.
enum class ValuePolicy { Required, Forbidden, Optional };
ValuePolicy value_policy(NodeKind k);

bool is_statement_kind(NodeKind k);
bool is_expression_kind(NodeKind k);
/// If/Switch/For/While: the structures the CFG rules care about.
bool is_control_kind(NodeKind k);

using NodeId = uint32_t;
inline constexpr NodeId kInvalidNode = UINT32_MAX;

struct Loc {
  std::string file;
  int start_line = 0;
  int start_col = 0;
  int end_line = 0;
  int end_col = 0;

  bool operator==(const Loc &o) const = default;
  bool contains(const Loc &o) const;
  /// Lexicographic on (start_line, start_col).
  bool starts_before(const Loc &o) const;
};

struct AstNode {
  NodeId id = kInvalidNode;
  NodeKind kind = NodeKind::ExprStmt;
  std::optional<std::string> value;
  std::vector<NodeId> children;
  std::string role; // edge label from parent; empty on roots
  Loc loc;
};

enum class Storage : uint8_t { Parameter, Local, GlobalRef };
const char *storage_name(Storage s);
std::optional<Storage> storage_from_name(const std::string &name);

struct DeclaredVar {
  std::string name;
  std::string declared_type; // syntactic spelling; empty for global refs
  Loc decl_loc;
  Storage storage = Storage::Local;
};

/// 128-bit subtree fingerprint. Exact mode digests (kind, value,
/// child-count) recursively, shape mode digests (kind, child-count).
struct Fingerprint {
  uint64_t hi = 0;
  uint64_t lo = 0;
  bool operator==(const Fingerprint &) const = default;
  auto operator<=>(const Fingerprint &) const = default;
};
enum class HashMode { Exact, Shape };

struct AstTree {
  NodeId root = kInvalidNode;
  std::vector<AstNode> nodes; // indexed by NodeId, dense
  std::string function_name;
  std::vector<DeclaredVar> declared_vars;

  const AstNode &node(NodeId id) const {
    if (id >= nodes.size())
      throw std::out_of_range("unknown node id " + std::to_string(id));
    return nodes[id];
  }
  AstNode &node(NodeId id) {
    if (id >= nodes.size())
      throw std::out_of_range("unknown node id " + std::to_string(id));
    return nodes[id];
  }
  size_t size() const { return nodes.size(); }

  /// Parent of a node, kInvalidNode for the root. O(1) after indexing.
  NodeId parent(NodeId id) const;
  /// Number of descendants of `id` (excluding itself).
  size_t descendant_count(NodeId id) const;
  const DeclaredVar *find_var(const std::string &name) const;

  void rebuild_index() const;

private:
  mutable std::vector<NodeId> parent_of_;
  mutable std::vector<uint32_t> subtree_size_; // includes self
  mutable std::vector<Fingerprint> exact_fp_;
  mutable std::vector<Fingerprint> shape_fp_;
  void ensure_index() const;
  friend Fingerprint subtree_hash(const AstTree &, NodeId, HashMode);
};

/// Pre-order DFS of the subtree rooted at `from`, excluding `from`
/// itself: element N (1-based) is Des_N(from).
std::vector<NodeId> dfs_traverse(const AstTree &tree, NodeId from);

Fingerprint subtree_hash(const AstTree &tree, NodeId node, HashMode mode);

/// Structural equality: kind, value, role, child order; ids and
/// locations ignored.
bool structurally_equal(const AstTree &a, const AstTree &b);
bool subtree_equal(const AstTree &a, NodeId na, const AstTree &b, NodeId nb,
                   HashMode mode);

/// Check the AstTree/AstNode invariants; returns human-readable
/// violations, empty when the tree is well-formed.
std::vector<std::string> validate_tree(const AstTree &tree);

} // namespace p2r
