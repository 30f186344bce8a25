#pragma once

#include "p2r/ast.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace p2r {

struct MatchSet {
  // pre node -> post node and back; kInvalidNode when unmatched.
  std::vector<NodeId> pre_to_post;
  std::vector<NodeId> post_to_pre;
  // Level (1..6) of the stage that produced each pre-side pair.
  std::vector<uint8_t> level_of_pre;
  // Pairs the stages matched directly (subtree roots and singles), in
  // match order; descendants of a level<=3 match are not repeated here.
  struct RootPair {
    NodeId pre;
    NodeId post;
    uint8_t level;
  };
  std::vector<RootPair> roots;

  bool matched_pre(NodeId id) const {
    return id < pre_to_post.size() && pre_to_post[id] != kInvalidNode;
  }
  bool matched_post(NodeId id) const {
    return id < post_to_pre.size() && post_to_pre[id] != kInvalidNode;
  }
};

/// MatchUnit of Algorithm-style staged matching: 1..6, 0 = no relation.
int match_unit(const AstTree &pre, NodeId a, const AstTree &post, NodeId b);

struct MatchOptions {
  /// Context-resemblance threshold: candidates whose nearest enclosing
  /// control statements overlap less than this (dice over exact
  /// subtree fingerprints) are rejected. 0 disables the gate.
  double context_threshold = 0.45;
};

MatchSet match_trees(const AstTree &pre, const AstTree &post,
                     const MatchOptions &opts = {});

/// True when the (a, b) candidate survives the context gate.
bool context_compatible(const AstTree &pre, NodeId a, const AstTree &post,
                        NodeId b, double threshold);

enum class EditOpKind : uint8_t {
  Insert,
  Delete,
  Update,
  MoveReparent,
  MoveReorder,
};
const char *edit_op_name(EditOpKind k);

struct EditOp {
  EditOpKind op = EditOpKind::Insert;
  NodeId pre_node = kInvalidNode;  // delete/update/move
  NodeId post_node = kInvalidNode; // insert/update/move
  NodeId new_parent = kInvalidNode; // post-tree id; insert/move
  int new_index = -1;               // final ordinal under new parent
  std::optional<std::string> new_value; // update
  // Payload so that apply() is self-contained for inserts.
  NodeKind kind = NodeKind::ExprStmt;
  std::optional<std::string> value;
  std::string role;
  Loc loc;
};

struct EditScript {
  std::vector<EditOp> ops;
  std::shared_ptr<const AstTree> pre;
  std::shared_ptr<const AstTree> post;
  MatchSet matches;
};

EditScript derive_editscript(std::shared_ptr<const AstTree> pre,
                             std::shared_ptr<const AstTree> post,
                             MatchSet matches);
inline EditScript derive_editscript(const AstTree &pre, const AstTree &post) {
  auto p = std::make_shared<AstTree>(pre);
  auto q = std::make_shared<AstTree>(post);
  return derive_editscript(p, q, match_trees(*p, *q));
}

struct ApplyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Deterministic application; the soundness oracle for derive.
AstTree apply_editscript(const AstTree &pre, const EditScript &script);

/// One op per line, documented structured text.
std::string format_editscript(const EditScript &script);

} // namespace p2r
