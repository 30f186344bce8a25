#pragma once

#include "p2r/frontend.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace p2r {

enum class LineTag : uint8_t { Context, Add, Del };

struct HunkLine {
  LineTag tag = LineTag::Context;
  std::string text;
};

struct PatchHunk {
  std::string file;
  int old_start = 0;
  int old_count = 0;
  int new_start = 0;
  int new_count = 0;
  std::vector<HunkLine> lines;
};

struct PatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Parse a standard unified diff (git headers tolerated).
std::vector<PatchHunk> parse_unified_diff(const std::string &text);

/// Apply hunks of one file to its pre-image. Context mismatches throw.
std::string apply_hunks(const std::string &pre_text,
                        const std::vector<PatchHunk> &hunks);

/// Line-based Myers diff, used to merge multi-commit patches into one
/// effective hunk list.
std::vector<PatchHunk> compute_hunks(const std::string &file,
                                     const std::string &pre_text,
                                     const std::string &post_text);

struct FunctionPair {
  AstTree pre;
  AstTree post;
  std::string note; // e.g. rename annotation
};

struct PatchCase {
  std::string id;
  std::vector<PatchHunk> hunks;
  std::vector<FunctionPair> pairs;
  std::string provenance;
  // Source units the pairs were localized from; kept so that
  // split_patch can re-derive per-fix pairs.
  std::shared_ptr<const SourceUnit> pre_unit;
  std::shared_ptr<const SourceUnit> post_unit;
};

struct UnpairedFunction {
  std::string name;
  bool in_pre = false;
};

/// Functions whose loc range intersects a changed line on the
/// respective side, joined by name; ordered by pre start line.
std::vector<FunctionPair>
locate_function_pairs(const SourceUnit &pre_unit, const SourceUnit &post_unit,
                      const std::vector<PatchHunk> &hunks,
                      const std::map<std::string, std::string> &renames = {},
                      std::vector<UnpairedFunction> *unpaired = nullptr);

/// One case per function pair; repeated identical fix patterns within a
/// function additionally split into one case per occurrence.
std::vector<PatchCase> split_patch(const PatchCase &c);

/// Identifier-token normalization used by the redundancy analysis:
/// every identifier becomes ID, literals and punctuation kept.
std::string normalize_identifiers(const std::string &line);

} // namespace p2r
