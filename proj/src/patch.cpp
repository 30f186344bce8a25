#include "p2r/patch.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

namespace p2r {

namespace {

std::vector<std::string> split_lines(const std::string &text) {
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      lines.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty())
    lines.push_back(cur);
  return lines;
}

std::string strip_git_prefix(const std::string &path) {
  if (path.size() > 2 && (path[0] == 'a' || path[0] == 'b') && path[1] == '/')
    return path.substr(2);
  return path;
}

bool parse_range(const std::string &s, int &start, int &count) {
  // "529,17" or "529"
  size_t comma = s.find(',');
  try {
    if (comma == std::string::npos) {
      start = std::stoi(s);
      count = 1;
    } else {
      start = std::stoi(s.substr(0, comma));
      count = std::stoi(s.substr(comma + 1));
    }
  } catch (...) {
    return false;
  }
  return true;
}

} // namespace

std::vector<PatchHunk> parse_unified_diff(const std::string &text) {
  std::vector<PatchHunk> hunks;
  auto lines = split_lines(text);
  std::string current_file;
  for (size_t i = 0; i < lines.size(); ++i) {
    const std::string &line = lines[i];
    if (line.rfind("--- ", 0) == 0)
      continue;
    if (line.rfind("+++ ", 0) == 0) {
      std::string path = line.substr(4);
      size_t tab = path.find('\t');
      if (tab != std::string::npos)
        path = path.substr(0, tab);
      current_file = path == "/dev/null" ? "" : strip_git_prefix(path);
      continue;
    }
    if (line.rfind("@@", 0) == 0) {
      // @@ -old_start,old_count +new_start,new_count @@ trailer
      size_t minus = line.find('-');
      size_t plus = line.find('+', minus);
      size_t close = line.find("@@", 2);
      if (minus == std::string::npos || plus == std::string::npos ||
          close == std::string::npos)
        throw PatchError("malformed hunk header at line " +
                         std::to_string(i + 1));
      std::string old_part = line.substr(minus + 1, line.find(' ', minus) - minus - 1);
      std::string new_part = line.substr(plus + 1, line.find(' ', plus) - plus - 1);
      PatchHunk hunk;
      hunk.file = current_file;
      if (!parse_range(old_part, hunk.old_start, hunk.old_count) ||
          !parse_range(new_part, hunk.new_start, hunk.new_count))
        throw PatchError("malformed hunk header at line " +
                         std::to_string(i + 1));
      int olds = 0, news = 0;
      size_t j = i + 1;
      for (; j < lines.size(); ++j) {
        const std::string &b = lines[j];
        if (b.rfind("\\ No newline", 0) == 0)
          continue;
        if (olds >= hunk.old_count && news >= hunk.new_count)
          break;
        if (b.empty()) {
          // tolerated: an empty context line with the leading space trimmed
          hunk.lines.push_back({LineTag::Context, ""});
          ++olds;
          ++news;
          continue;
        }
        char tag = b[0];
        std::string body = b.substr(1);
        if (tag == ' ') {
          hunk.lines.push_back({LineTag::Context, body});
          ++olds;
          ++news;
        } else if (tag == '+') {
          hunk.lines.push_back({LineTag::Add, body});
          ++news;
        } else if (tag == '-') {
          hunk.lines.push_back({LineTag::Del, body});
          ++olds;
        } else {
          break;
        }
      }
      if (olds != hunk.old_count || news != hunk.new_count)
        throw PatchError("hunk at line " + std::to_string(i + 1) +
                         " is inconsistent with its ranges");
      hunks.push_back(std::move(hunk));
      i = j - 1;
    }
  }
  return hunks;
}

std::string apply_hunks(const std::string &pre_text,
                        const std::vector<PatchHunk> &hunks) {
  auto pre = split_lines(pre_text);
  std::vector<std::string> out;
  size_t cursor = 0; // index into pre
  std::vector<const PatchHunk *> ordered;
  for (const auto &h : hunks)
    ordered.push_back(&h);
  std::sort(ordered.begin(), ordered.end(),
            [](const PatchHunk *a, const PatchHunk *b) {
              return a->old_start < b->old_start;
            });
  for (const PatchHunk *h : ordered) {
    size_t hunk_begin = h->old_start > 0 ? h->old_start - 1 : 0;
    if (hunk_begin < cursor)
      throw PatchError("overlapping hunks");
    while (cursor < hunk_begin && cursor < pre.size())
      out.push_back(pre[cursor++]);
    for (const auto &l : h->lines) {
      switch (l.tag) {
      case LineTag::Context:
        if (cursor >= pre.size() || pre[cursor] != l.text)
          throw PatchError("context mismatch at pre line " +
                           std::to_string(cursor + 1));
        out.push_back(pre[cursor++]);
        break;
      case LineTag::Del:
        if (cursor >= pre.size() || pre[cursor] != l.text)
          throw PatchError("delete mismatch at pre line " +
                           std::to_string(cursor + 1));
        ++cursor;
        break;
      case LineTag::Add:
        out.push_back(l.text);
        break;
      }
    }
  }
  while (cursor < pre.size())
    out.push_back(pre[cursor++]);
  std::string joined;
  for (const auto &l : out) {
    joined += l;
    joined += '\n';
  }
  return joined;
}

std::vector<PatchHunk> compute_hunks(const std::string &file,
                                     const std::string &pre_text,
                                     const std::string &post_text) {
  auto a = split_lines(pre_text);
  auto b = split_lines(post_text);
  // Myers O(ND) over lines.
  const int n = static_cast<int>(a.size());
  const int m = static_cast<int>(b.size());
  const int max = n + m;
  std::vector<std::vector<int>> trace;
  std::vector<int> v(2 * max + 1, 0);
  auto at = [&](std::vector<int> &vv, int k) -> int & { return vv[k + max]; };
  int d_final = -1;
  for (int d = 0; d <= max; ++d) {
    trace.push_back(v);
    for (int k = -d; k <= d; k += 2) {
      int x;
      if (k == -d || (k != d && at(v, k - 1) < at(v, k + 1)))
        x = at(v, k + 1);
      else
        x = at(v, k - 1) + 1;
      int y = x - k;
      while (x < n && y < m && a[x] == b[y]) {
        ++x;
        ++y;
      }
      at(v, k) = x;
      if (x >= n && y >= m) {
        d_final = d;
        break;
      }
    }
    if (d_final >= 0)
      break;
  }
  // Backtrack into per-line ops.
  enum class Op { Keep, Del, Add };
  std::vector<Op> ops;
  {
    int x = n, y = m;
    for (int d = d_final; d > 0; --d) {
      auto &vv = trace[d];
      int k = x - y;
      int prev_k;
      if (k == -d || (k != d && at(vv, k - 1) < at(vv, k + 1)))
        prev_k = k + 1;
      else
        prev_k = k - 1;
      int prev_x = at(trace[d], prev_k);
      // walk the snake
      int snake_x = x, snake_y = y;
      int head_x = prev_k > k ? prev_x : prev_x + 1;
      int head_y = head_x - k;
      while (snake_x > head_x && snake_y > head_y) {
        ops.push_back(Op::Keep);
        --snake_x;
        --snake_y;
      }
      if (prev_k > k)
        ops.push_back(Op::Add);
      else
        ops.push_back(Op::Del);
      x = prev_x;
      y = prev_x - prev_k;
    }
    while (x > 0 && y > 0) {
      ops.push_back(Op::Keep);
      --x;
      --y;
    }
    while (x > 0) {
      ops.push_back(Op::Del);
      --x;
    }
    while (y > 0) {
      ops.push_back(Op::Add);
      --y;
    }
    std::reverse(ops.begin(), ops.end());
  }
  // Group into hunks with zero context (exact ranges).
  std::vector<PatchHunk> hunks;
  int ai = 0, bi = 0;
  size_t i = 0;
  while (i < ops.size()) {
    if (ops[i] == Op::Keep) {
      ++ai;
      ++bi;
      ++i;
      continue;
    }
    PatchHunk h;
    h.file = file;
    h.old_start = ai + 1;
    h.new_start = bi + 1;
    while (i < ops.size() && ops[i] != Op::Keep) {
      if (ops[i] == Op::Del) {
        h.lines.push_back({LineTag::Del, a[ai++]});
        ++h.old_count;
      } else {
        h.lines.push_back({LineTag::Add, b[bi++]});
        ++h.new_count;
      }
      ++i;
    }
    if (h.old_count == 0)
      h.old_start = ai; // insertion point convention
    if (h.new_count == 0)
      h.new_start = bi;
    hunks.push_back(std::move(h));
  }
  return hunks;
}

namespace {

/// Changed line numbers per side, over hunks of one file.
void changed_lines(const std::vector<PatchHunk> &hunks,
                   std::vector<int> &pre_lines, std::vector<int> &post_lines) {
  for (const auto &h : hunks) {
    int old_line = h.old_start;
    int new_line = h.new_start;
    for (const auto &l : h.lines) {
      switch (l.tag) {
      case LineTag::Context:
        ++old_line;
        ++new_line;
        break;
      case LineTag::Del:
        pre_lines.push_back(old_line++);
        break;
      case LineTag::Add:
        post_lines.push_back(new_line++);
        break;
      }
    }
  }
}

bool intersects(const AstTree &fn, const std::vector<int> &lines) {
  const Loc &loc = fn.node(fn.root).loc;
  for (int l : lines)
    if (l >= loc.start_line && l <= loc.end_line)
      return true;
  return false;
}

} // namespace

std::vector<FunctionPair>
locate_function_pairs(const SourceUnit &pre_unit, const SourceUnit &post_unit,
                      const std::vector<PatchHunk> &hunks,
                      const std::map<std::string, std::string> &renames,
                      std::vector<UnpairedFunction> *unpaired) {
  std::vector<int> pre_lines, post_lines;
  changed_lines(hunks, pre_lines, post_lines);

  struct Touched {
    const AstTree *tree;
    int start_line;
  };
  std::vector<Touched> pre_touched;
  for (const auto &fn : pre_unit.functions)
    if (intersects(fn, pre_lines))
      pre_touched.push_back({&fn, fn.node(fn.root).loc.start_line});
  std::vector<const AstTree *> post_touched;
  for (const auto &fn : post_unit.functions)
    if (intersects(fn, post_lines))
      post_touched.push_back(&fn);

  auto find_post = [&](const std::string &name) -> const AstTree * {
    for (const auto &fn : post_unit.functions)
      if (fn.function_name == name)
        return &fn;
    return nullptr;
  };

  std::sort(pre_touched.begin(), pre_touched.end(),
            [](const Touched &a, const Touched &b) {
              return a.start_line < b.start_line;
            });

  std::vector<FunctionPair> pairs;
  std::vector<std::string> paired_post;
  for (const auto &t : pre_touched) {
    std::string post_name = t.tree->function_name;
    std::string note;
    if (auto it = renames.find(post_name); it != renames.end()) {
      post_name = it->second;
      note = "renamed " + t.tree->function_name + "=" + post_name;
    }
    if (const AstTree *post = find_post(post_name)) {
      pairs.push_back({*t.tree, *post, note});
      paired_post.push_back(post_name);
    } else if (unpaired) {
      unpaired->push_back({t.tree->function_name, true});
    }
  }
  // Functions changed only on the post side pair with their same-name
  // pre peer when present.
  for (const AstTree *fn : post_touched) {
    if (std::find(paired_post.begin(), paired_post.end(), fn->function_name) !=
        paired_post.end())
      continue;
    const AstTree *pre = nullptr;
    for (const auto &p : pre_unit.functions)
      if (p.function_name == fn->function_name)
        pre = &p;
    if (pre) {
      pairs.push_back({*pre, *fn, ""});
      paired_post.push_back(fn->function_name);
    } else if (unpaired) {
      unpaired->push_back({fn->function_name, false});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const FunctionPair &a,
                                           const FunctionPair &b) {
    return a.pre.node(a.pre.root).loc.start_line <
           b.pre.node(b.pre.root).loc.start_line;
  });
  return pairs;
}

std::string normalize_identifiers(const std::string &line) {
  std::string out;
  size_t i = 0;
  while (i < line.size()) {
    char c = line[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t j = i;
      while (j < line.size() &&
             (std::isalnum(static_cast<unsigned char>(line[j])) || line[j] == '_'))
        ++j;
      out += "ID";
      i = j;
    } else {
      out += c;
      ++i;
    }
  }
  return out;
}

namespace {

struct ChangeBlock {
  std::vector<std::string> dels;
  std::vector<std::string> adds;
  std::string signature() const {
    std::vector<std::string> d, a;
    for (const auto &s : dels)
      d.push_back(normalize_identifiers(s));
    for (const auto &s : adds)
      a.push_back(normalize_identifiers(s));
    std::sort(d.begin(), d.end());
    std::sort(a.begin(), a.end());
    std::string sig = "-";
    for (const auto &s : d)
      sig += s + "\x01";
    sig += "+";
    for (const auto &s : a)
      sig += s + "\x01";
    return sig;
  }
};

/// Maximal runs of consecutive non-context lines within the hunks that
/// intersect one function's pre range, with their sub-hunk extraction.
struct BlockWithHunk {
  ChangeBlock block;
  PatchHunk hunk; // minimal hunk realizing just this block
};

std::vector<BlockWithHunk> function_blocks(const std::vector<PatchHunk> &hunks,
                                           int fn_start, int fn_end) {
  std::vector<BlockWithHunk> blocks;
  for (const auto &h : hunks) {
    int old_line = h.old_start;
    int new_line = h.new_start;
    size_t i = 0;
    while (i < h.lines.size()) {
      if (h.lines[i].tag == LineTag::Context) {
        ++old_line;
        ++new_line;
        ++i;
        continue;
      }
      BlockWithHunk b;
      b.hunk.file = h.file;
      b.hunk.old_start = old_line;
      b.hunk.new_start = new_line;
      int block_old_start = old_line;
      while (i < h.lines.size() && h.lines[i].tag != LineTag::Context) {
        b.hunk.lines.push_back(h.lines[i]);
        if (h.lines[i].tag == LineTag::Del) {
          b.block.dels.push_back(h.lines[i].text);
          ++b.hunk.old_count;
          ++old_line;
        } else {
          b.block.adds.push_back(h.lines[i].text);
          ++b.hunk.new_count;
          ++new_line;
        }
        ++i;
      }
      // A pure insertion block has old_count 0; anchor it by the
      // insertion point.
      if (b.hunk.old_count == 0)
        b.hunk.old_start = block_old_start;
      if (block_old_start >= fn_start && block_old_start <= fn_end)
        blocks.push_back(std::move(b));
    }
  }
  return blocks;
}

} // namespace

std::vector<PatchCase> split_patch(const PatchCase &c) {
  std::vector<PatchCase> out;
  if (c.pairs.empty()) {
    out.push_back(c);
    return out;
  }
  int pair_seq = 0;
  for (const auto &pair : c.pairs) {
    PatchCase per_fn;
    per_fn.id = c.pairs.size() == 1
                    ? c.id
                    : c.id + "#" + pair.pre.function_name;
    per_fn.provenance = c.provenance;
    per_fn.hunks = c.hunks;
    per_fn.pairs = {pair};
    per_fn.pre_unit = c.pre_unit;
    per_fn.post_unit = c.post_unit;
    ++pair_seq;

    // Redundancy analysis: k>=2 disjoint change blocks with identical
    // normalized add/del multisets become their own cases.
    if (c.pre_unit && !c.pre_unit->text.empty()) {
      const Loc &loc = pair.pre.node(pair.pre.root).loc;
      auto blocks = function_blocks(c.hunks, loc.start_line, loc.end_line);
      if (blocks.size() >= 2) {
        std::string sig = blocks[0].block.signature();
        bool all_same = true;
        for (const auto &b : blocks)
          if (b.block.signature() != sig)
            all_same = false;
        if (all_same) {
          int k = 0;
          bool ok = true;
          std::vector<PatchCase> splits;
          for (const auto &b : blocks) {
            PatchCase sub = per_fn;
            sub.id = per_fn.id + "#" + std::to_string(++k);
            sub.hunks = {b.hunk};
            // Re-derive the post tree with only this block applied.
            try {
              std::string post_text = apply_hunks(c.pre_unit->text, sub.hunks);
              SourceUnit post = parse_unit(c.pre_unit->path, post_text);
              auto pairs = locate_function_pairs(*c.pre_unit, post, sub.hunks);
              bool found = false;
              for (auto &p : pairs)
                if (p.pre.function_name == pair.pre.function_name) {
                  sub.pairs = {p};
                  found = true;
                }
              if (!found)
                ok = false;
              sub.post_unit = std::make_shared<SourceUnit>(std::move(post));
            } catch (const PatchError &) {
              ok = false;
            }
            splits.push_back(std::move(sub));
          }
          if (ok) {
            for (auto &s : splits)
              out.push_back(std::move(s));
            continue;
          }
        }
      }
    }
    out.push_back(std::move(per_fn));
  }
  return out;
}

} // namespace p2r
