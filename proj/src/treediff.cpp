#include "p2r/treediff.hpp"

#include <algorithm>
#include <cassert>
#include <map>
#include <set>
#include <sstream>

namespace p2r {

namespace {

/// Child-count comparison is meaningless for unbounded-arity
/// containers; without this exemption a container whose statement
/// count changed could never be paired at any level.
bool arity_exempt(NodeKind k) {
  return k == NodeKind::BlockStmt || k == NodeKind::CommaExpr ||
         k == NodeKind::Function;
}

struct TreeView {
  const AstTree *tree;
  std::vector<NodeId> dfs;          // pre-order including root
  std::vector<uint32_t> dfs_pos;    // node -> position in dfs
  std::vector<NodeId> ctx_of;       // nearest self-or-ancestor control stmt
  std::vector<Fingerprint> exact;
  std::vector<Fingerprint> shape;
  std::vector<uint32_t> size; // subtree size incl self

  explicit TreeView(const AstTree &t) : tree(&t) {
    size_t n = t.size();
    dfs.reserve(n);
    dfs_pos.assign(n, 0);
    ctx_of.assign(n, kInvalidNode);
    exact.resize(n);
    shape.resize(n);
    size.assign(n, 1);
    std::vector<NodeId> stack{t.root};
    while (!stack.empty()) {
      NodeId id = stack.back();
      stack.pop_back();
      dfs_pos[id] = static_cast<uint32_t>(dfs.size());
      dfs.push_back(id);
      const auto &c = t.node(id).children;
      stack.insert(stack.end(), c.rbegin(), c.rend());
    }
    for (NodeId id : dfs) {
      exact[id] = subtree_hash(t, id, HashMode::Exact);
      shape[id] = subtree_hash(t, id, HashMode::Shape);
      size[id] = static_cast<uint32_t>(t.descendant_count(id)) + 1;
      NodeId p = t.parent(id);
      if (is_control_kind(t.node(id).kind))
        ctx_of[id] = id;
      else if (p != kInvalidNode)
        ctx_of[id] = ctx_of[p];
    }
  }

  NodeId parent(NodeId id) const { return tree->parent(id); }
  const AstNode &node(NodeId id) const { return tree->node(id); }
};

bool node_eq(const AstNode &a, const AstNode &b) {
  if (a.kind != b.kind || a.value != b.value)
    return false;
  if (arity_exempt(a.kind))
    return true;
  return a.children.size() == b.children.size();
}

bool node_sim(const AstNode &a, const AstNode &b) {
  if (a.kind != b.kind)
    return false;
  if (arity_exempt(a.kind))
    return true;
  return a.children.size() == b.children.size();
}

int match_unit_impl(const TreeView &pre, NodeId a, const TreeView &post,
                    NodeId b) {
  const AstNode &na = pre.node(a);
  const AstNode &nb = post.node(b);
  bool sub_eq = pre.exact[a] == post.exact[b] && pre.size[a] == post.size[b];
  bool sub_sim = pre.shape[a] == post.shape[b] && pre.size[a] == post.size[b];
  NodeId pa = pre.parent(a);
  NodeId pb = post.parent(b);
  bool parent_eq, parent_sim;
  if (pa == kInvalidNode || pb == kInvalidNode) {
    parent_eq = parent_sim = (pa == kInvalidNode && pb == kInvalidNode);
  } else {
    parent_eq = node_eq(pre.node(pa), post.node(pb));
    parent_sim = node_sim(pre.node(pa), post.node(pb));
  }
  if (sub_eq && parent_eq)
    return 1;
  if (sub_eq)
    return 2;
  if (sub_sim)
    return 3;
  if (node_eq(na, nb) && parent_sim)
    return 4;
  if (node_eq(na, nb))
    return 5;
  if (node_sim(na, nb))
    return 6;
  return 0;
}

class ContextGate {
public:
  ContextGate(const TreeView &pre, const TreeView &post, double threshold)
      : pre_(pre), post_(post), threshold_(threshold) {}

  bool ok(NodeId a, NodeId b) {
    if (threshold_ <= 0)
      return true;
    NodeId ca = pre_.ctx_of[a];
    NodeId cb = post_.ctx_of[b];
    if (ca == kInvalidNode && cb == kInvalidNode)
      return true;
    if (ca == kInvalidNode || cb == kInvalidNode)
      return false;
    return dice(ca, cb) >= threshold_;
  }

private:
  double dice(NodeId ca, NodeId cb) {
    auto key = std::make_pair(ca, cb);
    auto it = cache_.find(key);
    if (it != cache_.end())
      return it->second;
    const auto &fa = fps(pre_, ca, pre_fps_);
    const auto &fb = fps(post_, cb, post_fps_);
    size_t common = 0, i = 0, j = 0;
    while (i < fa.size() && j < fb.size()) {
      if (fa[i] == fb[j]) {
        ++common;
        ++i;
        ++j;
      } else if (fa[i] < fb[j]) {
        ++i;
      } else {
        ++j;
      }
    }
    double denom = static_cast<double>(fa.size() + fb.size());
    double d = denom > 0 ? 2.0 * static_cast<double>(common) / denom : 1.0;
    cache_[key] = d;
    return d;
  }

  static const std::vector<Fingerprint> &
  fps(const TreeView &view, NodeId ctx,
      std::map<NodeId, std::vector<Fingerprint>> &store) {
    auto it = store.find(ctx);
    if (it != store.end())
      return it->second;
    std::vector<Fingerprint> out;
    for (NodeId d : dfs_traverse(*view.tree, ctx))
      out.push_back(view.exact[d]);
    std::sort(out.begin(), out.end());
    return store.emplace(ctx, std::move(out)).first->second;
  }

  const TreeView &pre_;
  const TreeView &post_;
  double threshold_;
  std::map<std::pair<NodeId, NodeId>, double> cache_;
  std::map<NodeId, std::vector<Fingerprint>> pre_fps_;
  std::map<NodeId, std::vector<Fingerprint>> post_fps_;
};

struct NodeKey {
  NodeKind kind;
  std::string value;
  int32_t arity; // -1 when exempt

  bool operator<(const NodeKey &o) const {
    if (kind != o.kind)
      return kind < o.kind;
    if (arity != o.arity)
      return arity < o.arity;
    return value < o.value;
  }
};

NodeKey eq_key(const AstNode &n) {
  return {n.kind, n.value.value_or(""),
          arity_exempt(n.kind) ? -1 : static_cast<int32_t>(n.children.size())};
}

NodeKey sim_key(const AstNode &n) {
  return {n.kind, "",
          arity_exempt(n.kind) ? -1 : static_cast<int32_t>(n.children.size())};
}

} // namespace

int match_unit(const AstTree &pre, NodeId a, const AstTree &post, NodeId b) {
  TreeView pv(pre), qv(post);
  return match_unit_impl(pv, a, qv, b);
}

bool context_compatible(const AstTree &pre, NodeId a, const AstTree &post,
                        NodeId b, double threshold) {
  TreeView pv(pre), qv(post);
  ContextGate gate(pv, qv, threshold);
  return gate.ok(a, b);
}

MatchSet match_trees(const AstTree &pre, const AstTree &post,
                     const MatchOptions &opts) {
  TreeView pv(pre), qv(post);
  ContextGate gate(pv, qv, opts.context_threshold);

  MatchSet m;
  m.pre_to_post.assign(pre.size(), kInvalidNode);
  m.post_to_pre.assign(post.size(), kInvalidNode);
  m.level_of_pre.assign(pre.size(), 0);

  // Candidate indexes over the post tree, posting lists in DFS order.
  std::map<Fingerprint, std::vector<NodeId>> by_exact, by_shape;
  std::map<NodeKey, std::vector<NodeId>> by_eq, by_sim;
  for (NodeId id : qv.dfs) {
    by_exact[qv.exact[id]].push_back(id);
    by_shape[qv.shape[id]].push_back(id);
    by_eq[eq_key(qv.node(id))].push_back(id);
    by_sim[sim_key(qv.node(id))].push_back(id);
  }

  auto subtree_pairs_compatible = [&](NodeId a, NodeId b,
                                      std::vector<std::pair<NodeId, NodeId>> &out) {
    if (pv.size[a] != qv.size[b])
      return false;
    auto da = dfs_traverse(pre, a);
    auto db = dfs_traverse(post, b);
    out.clear();
    out.push_back({a, b});
    for (size_t i = 0; i < da.size(); ++i)
      out.push_back({da[i], db[i]});
    for (auto [x, y] : out) {
      bool x_free = m.pre_to_post[x] == kInvalidNode;
      bool y_free = m.post_to_pre[y] == kInvalidNode;
      if (x_free && y_free)
        continue;
      if (m.pre_to_post[x] != y)
        return false;
    }
    return true;
  };

  std::vector<std::pair<NodeId, NodeId>> pairs;
  for (int stage = 1; stage <= 6; ++stage) {
    for (NodeId a : pv.dfs) {
      if (m.pre_to_post[a] != kInvalidNode)
        continue;
      const AstNode &na = pv.node(a);
      const std::vector<NodeId> *cands = nullptr;
      if (stage <= 2) {
        auto it = by_exact.find(pv.exact[a]);
        if (it != by_exact.end())
          cands = &it->second;
      } else if (stage == 3) {
        auto it = by_shape.find(pv.shape[a]);
        if (it != by_shape.end())
          cands = &it->second;
      } else if (stage <= 5) {
        auto it = by_eq.find(eq_key(na));
        if (it != by_eq.end())
          cands = &it->second;
      } else {
        auto it = by_sim.find(sim_key(na));
        if (it != by_sim.end())
          cands = &it->second;
      }
      if (!cands)
        continue;
      for (NodeId b : *cands) {
        if (m.post_to_pre[b] != kInvalidNode)
          continue;
        if (match_unit_impl(pv, a, qv, b) != stage)
          continue;
        if (!gate.ok(a, b))
          continue;
        if (stage <= 3) {
          if (!subtree_pairs_compatible(a, b, pairs))
            continue;
          for (auto [x, y] : pairs) {
            if (m.pre_to_post[x] != kInvalidNode)
              continue;
            m.pre_to_post[x] = y;
            m.post_to_pre[y] = x;
            m.level_of_pre[x] = static_cast<uint8_t>(stage);
          }
        } else {
          m.pre_to_post[a] = b;
          m.post_to_pre[b] = a;
          m.level_of_pre[a] = static_cast<uint8_t>(stage);
        }
        m.roots.push_back({a, b, static_cast<uint8_t>(stage)});
        break;
      }
    }
  }

  // The function pair itself is given by localization; if the staged
  // passes left the roots unmatched (e.g. rename plus arity change),
  // pair them so the editscript stays rooted.
  if (m.pre_to_post[pre.root] == kInvalidNode &&
      m.post_to_pre[post.root] == kInvalidNode) {
    m.pre_to_post[pre.root] = post.root;
    m.post_to_pre[post.root] = pre.root;
    m.level_of_pre[pre.root] = 6;
    m.roots.push_back({pre.root, post.root, 6});
  }
  return m;
}

const char *edit_op_name(EditOpKind k) {
  switch (k) {
  case EditOpKind::Insert:
    return "insert";
  case EditOpKind::Delete:
    return "delete";
  case EditOpKind::Update:
    return "update";
  case EditOpKind::MoveReparent:
    return "move-reparent";
  case EditOpKind::MoveReorder:
    return "move-reorder";
  }
  return "?";
}

EditScript derive_editscript(std::shared_ptr<const AstTree> pre_ptr,
                             std::shared_ptr<const AstTree> post_ptr,
                             MatchSet matches) {
  const AstTree &pre = *pre_ptr;
  const AstTree &post = *post_ptr;
  EditScript script;
  script.pre = pre_ptr;
  script.post = post_ptr;

  auto post_index_of = [&](NodeId b) {
    NodeId p = post.parent(b);
    const auto &ch = post.node(p).children;
    return static_cast<int>(std::find(ch.begin(), ch.end(), b) - ch.begin());
  };

  // Inserts: unmatched post nodes, parents before children.
  std::vector<NodeId> stack{post.root};
  std::vector<NodeId> post_dfs;
  while (!stack.empty()) {
    NodeId id = stack.back();
    stack.pop_back();
    post_dfs.push_back(id);
    const auto &c = post.node(id).children;
    stack.insert(stack.end(), c.rbegin(), c.rend());
  }
  for (NodeId b : post_dfs) {
    if (matches.matched_post(b))
      continue;
    const AstNode &n = post.node(b);
    EditOp op;
    op.op = EditOpKind::Insert;
    op.post_node = b;
    op.new_parent = post.parent(b);
    op.new_index = post_index_of(b);
    op.kind = n.kind;
    op.value = n.value;
    op.role = n.role;
    op.loc = n.loc;
    script.ops.push_back(std::move(op));
  }

  // Updates: pairs with differing value.
  for (NodeId a = 0; a < pre.size(); ++a) {
    NodeId b = matches.pre_to_post[a];
    if (b == kInvalidNode)
      continue;
    if (pre.node(a).value != post.node(b).value) {
      EditOp op;
      op.op = EditOpKind::Update;
      op.pre_node = a;
      op.post_node = b;
      op.new_value = post.node(b).value;
      script.ops.push_back(std::move(op));
    }
  }

  // Moves.
  for (NodeId a = 0; a < pre.size(); ++a) {
    NodeId b = matches.pre_to_post[a];
    if (b == kInvalidNode || a == pre.root || b == post.root)
      continue;
    NodeId pa = pre.parent(a);
    NodeId pb = post.parent(b);
    bool parents_paired = matches.pre_to_post[pa] == pb;
    if (!parents_paired) {
      EditOp op;
      op.op = EditOpKind::MoveReparent;
      op.pre_node = a;
      op.post_node = b;
      op.new_parent = pb;
      op.new_index = post_index_of(b);
      op.role = post.node(b).role;
      script.ops.push_back(std::move(op));
    }
  }

  // Reorders among kept children of each paired parent: pin everything
  // outside the longest increasing subsequence of post positions, and
  // any kept child whose edge role changed.
  for (NodeId p = 0; p < pre.size(); ++p) {
    NodeId q = matches.pre_to_post[p];
    if (q == kInvalidNode)
      continue;
    struct Kept {
      NodeId pre_child;
      NodeId post_child;
      int post_index;
    };
    std::vector<Kept> kept;
    const auto &pch = pre.node(p).children;
    const auto &qch = post.node(q).children;
    for (NodeId c : pch) {
      NodeId d = matches.pre_to_post[c];
      if (d == kInvalidNode)
        continue;
      auto it = std::find(qch.begin(), qch.end(), d);
      if (it == qch.end())
        continue; // reparented elsewhere
      kept.push_back({c, d, static_cast<int>(it - qch.begin())});
    }
    // LIS over post_index in pre order.
    std::vector<int> lis_prev(kept.size(), -1), tails;
    std::vector<int> tail_idx;
    for (size_t i = 0; i < kept.size(); ++i) {
      auto it = std::lower_bound(tails.begin(), tails.end(), kept[i].post_index);
      size_t pos = it - tails.begin();
      if (it == tails.end()) {
        tails.push_back(kept[i].post_index);
        tail_idx.push_back(static_cast<int>(i));
      } else {
        *it = kept[i].post_index;
        tail_idx[pos] = static_cast<int>(i);
      }
      lis_prev[i] = pos > 0 ? tail_idx[pos - 1] : -1;
    }
    std::set<size_t> in_lis;
    if (!tail_idx.empty()) {
      int cur = tail_idx.back();
      while (cur >= 0) {
        in_lis.insert(static_cast<size_t>(cur));
        cur = lis_prev[cur];
      }
    }
    for (size_t i = 0; i < kept.size(); ++i) {
      bool role_changed =
          pre.node(kept[i].pre_child).role != post.node(kept[i].post_child).role;
      if (in_lis.count(i) && !role_changed)
        continue;
      EditOp op;
      op.op = EditOpKind::MoveReorder;
      op.pre_node = kept[i].pre_child;
      op.post_node = kept[i].post_child;
      op.new_parent = q;
      op.new_index = kept[i].post_index;
      op.role = post.node(kept[i].post_child).role;
      script.ops.push_back(std::move(op));
    }
  }

  // Deletes: unmatched pre subtree roots.
  for (NodeId a = 0; a < pre.size(); ++a) {
    if (matches.matched_pre(a))
      continue;
    NodeId pa = pre.parent(a);
    if (pa != kInvalidNode && !matches.matched_pre(pa))
      continue; // folded into the ancestor's delete
    EditOp op;
    op.op = EditOpKind::Delete;
    op.pre_node = a;
    op.kind = pre.node(a).kind;
    op.value = pre.node(a).value;
    op.loc = pre.node(a).loc;
    script.ops.push_back(std::move(op));
  }

  script.matches = std::move(matches);
  return script;
}

AstTree apply_editscript(const AstTree &pre, const EditScript &script) {
  struct WorkNode {
    NodeKind kind;
    std::optional<std::string> value;
    std::string role;
    Loc loc;
    std::vector<uint32_t> children;
    bool deleted = false;
    bool detached = false;
  };
  std::vector<WorkNode> work;
  work.reserve(pre.size() + script.ops.size());
  for (const auto &n : pre.nodes)
    work.push_back({n.kind, n.value, n.role, n.loc, {}, false, false});
  for (NodeId a = 0; a < pre.size(); ++a)
    for (NodeId c : pre.node(a).children)
      work[a].children.push_back(c);

  // post node id -> work id (matched pre partner or freshly inserted)
  std::map<NodeId, uint32_t> post_map;
  if (!script.matches.post_to_pre.empty()) {
    for (NodeId b = 0; b < script.matches.post_to_pre.size(); ++b)
      if (script.matches.post_to_pre[b] != kInvalidNode)
        post_map[b] = script.matches.post_to_pre[b];
  }

  struct Pin {
    uint32_t work_id;
    int index;
    std::string role;
  };
  std::map<uint32_t, std::vector<Pin>> pins; // by target parent work id

  auto resolve_parent = [&](const EditOp &op, size_t idx) -> uint32_t {
    auto it = post_map.find(op.new_parent);
    if (it == post_map.end())
      throw ApplyError("op " + std::to_string(idx) +
                       " references unknown parent " +
                       std::to_string(op.new_parent));
    return it->second;
  };

  // 1. Materialize inserted nodes (post pre-order in ops order).
  for (size_t i = 0; i < script.ops.size(); ++i) {
    const EditOp &op = script.ops[i];
    if (op.op != EditOpKind::Insert)
      continue;
    WorkNode n;
    n.kind = op.kind;
    n.value = op.value;
    n.role = op.role;
    n.loc = op.loc;
    uint32_t id = static_cast<uint32_t>(work.size());
    work.push_back(std::move(n));
    if (op.post_node == kInvalidNode)
      throw ApplyError("insert op " + std::to_string(i) + " lacks post node");
    post_map[op.post_node] = id;
  }
  // Parents resolve after all inserts exist.
  for (size_t i = 0; i < script.ops.size(); ++i) {
    const EditOp &op = script.ops[i];
    if (op.op != EditOpKind::Insert)
      continue;
    pins[resolve_parent(op, i)].push_back(
        {post_map[op.post_node], op.new_index, op.role});
  }

  // 2. Updates.
  for (size_t i = 0; i < script.ops.size(); ++i) {
    const EditOp &op = script.ops[i];
    if (op.op != EditOpKind::Update)
      continue;
    if (op.pre_node >= pre.size())
      throw ApplyError("update op " + std::to_string(i) + " out of range");
    work[op.pre_node].value = op.new_value;
  }

  // 3. Moves detach their subject and pin it at the target.
  for (size_t i = 0; i < script.ops.size(); ++i) {
    const EditOp &op = script.ops[i];
    if (op.op != EditOpKind::MoveReparent && op.op != EditOpKind::MoveReorder)
      continue;
    if (op.pre_node >= pre.size())
      throw ApplyError("move op " + std::to_string(i) + " out of range");
    work[op.pre_node].detached = true;
    pins[resolve_parent(op, i)].push_back({op.pre_node, op.new_index, op.role});
  }

  // 4. Deletes remove the subtree that is still attached.
  for (size_t i = 0; i < script.ops.size(); ++i) {
    const EditOp &op = script.ops[i];
    if (op.op != EditOpKind::Delete)
      continue;
    if (op.pre_node >= pre.size())
      throw ApplyError("delete op " + std::to_string(i) + " out of range");
    work[op.pre_node].deleted = true;
  }

  // 5. Rebuild child lists bottom-up from pins + kept order.
  std::vector<char> moved_away(work.size(), 0);
  for (auto &[parent, plist] : pins)
    for (auto &pin : plist)
      moved_away[pin.work_id] = 1;

  for (uint32_t id = 0; id < work.size(); ++id) {
    auto pin_it = pins.find(id);
    std::vector<uint32_t> kept;
    for (uint32_t c : work[id].children) {
      if (work[c].deleted)
        continue;
      if (moved_away[c])
        continue; // re-pinned here or elsewhere
      kept.push_back(c);
    }
    if (pin_it == pins.end()) {
      work[id].children = std::move(kept);
      continue;
    }
    auto plist = pin_it->second;
    std::sort(plist.begin(), plist.end(),
              [](const Pin &a, const Pin &b) { return a.index < b.index; });
    size_t total = kept.size() + plist.size();
    std::vector<uint32_t> final_list(total, UINT32_MAX);
    for (const auto &pin : plist) {
      if (pin.index < 0 || static_cast<size_t>(pin.index) >= total)
        throw ApplyError("pin index out of range for parent " +
                         std::to_string(id));
      if (final_list[pin.index] != UINT32_MAX)
        throw ApplyError("conflicting pin index under parent " +
                         std::to_string(id));
      final_list[pin.index] = pin.work_id;
      work[pin.work_id].role = pin.role;
      work[pin.work_id].detached = false;
    }
    size_t k = 0;
    for (uint32_t c : kept) {
      while (k < total && final_list[k] != UINT32_MAX)
        ++k;
      if (k >= total)
        throw ApplyError("child placement overflow under parent " +
                         std::to_string(id));
      final_list[k] = c;
    }
    work[id].children = std::move(final_list);
  }

  if (work[pre.root].deleted)
    throw ApplyError("script deletes the root");

  // 6. Emit the applied tree in DFS order.
  AstTree out;
  std::vector<uint32_t> order;
  std::vector<NodeId> remap(work.size(), kInvalidNode);
  std::vector<uint32_t> stack{pre.root};
  while (!stack.empty()) {
    uint32_t id = stack.back();
    stack.pop_back();
    remap[id] = static_cast<NodeId>(order.size());
    order.push_back(id);
    const auto &c = work[id].children;
    stack.insert(stack.end(), c.rbegin(), c.rend());
  }
  out.nodes.resize(order.size());
  for (size_t i = 0; i < order.size(); ++i) {
    const WorkNode &w = work[order[i]];
    AstNode n;
    n.id = static_cast<NodeId>(i);
    n.kind = w.kind;
    n.value = w.value;
    n.role = w.role;
    n.loc = w.loc;
    for (uint32_t c : w.children) {
      if (remap[c] == kInvalidNode)
        throw ApplyError("dangling child after apply");
      n.children.push_back(remap[c]);
    }
    out.nodes[i] = std::move(n);
  }
  out.root = 0;
  out.nodes[0].role.clear();
  out.function_name = out.nodes[0].value.value_or("");
  return out;
}

std::string format_editscript(const EditScript &script) {
  std::ostringstream os;
  os << "editscript-format: 1\n";
  os << "function: " << script.pre->function_name << "\n";
  os << "ops: " << script.ops.size() << "\n";
  for (const auto &op : script.ops) {
    os << edit_op_name(op.op);
    auto describe = [&](const AstTree &t, NodeId id) {
      const AstNode &n = t.node(id);
      os << " kind=" << kind_name(n.kind);
      if (n.value)
        os << " value=\"" << *n.value << "\"";
      os << " line=" << n.loc.start_line;
    };
    switch (op.op) {
    case EditOpKind::Insert:
      describe(*script.post, op.post_node);
      os << " role=" << op.role << " index=" << op.new_index;
      break;
    case EditOpKind::Delete:
      describe(*script.pre, op.pre_node);
      break;
    case EditOpKind::Update:
      describe(*script.pre, op.pre_node);
      os << " new-value=\"" << op.new_value.value_or("") << "\"";
      break;
    case EditOpKind::MoveReparent:
    case EditOpKind::MoveReorder:
      describe(*script.pre, op.pre_node);
      os << " index=" << op.new_index;
      if (!op.role.empty())
        os << " role=" << op.role;
      break;
    }
    os << "\n";
  }
  return os.str();
}

} // namespace p2r
