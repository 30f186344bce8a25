#pragma once

#include "p2r/ast.hpp"

#include <string>
#include <vector>

namespace p2r {

struct Diagnostic {
  std::string file;
  int line = 0;
  int col = 0;
  std::string message;
  std::string to_string() const;
};

struct SourceUnit {
  std::string path;
  std::string text;
  std::vector<AstTree> functions;
  std::vector<Diagnostic> diagnostics;
};

/// Parse a macro-free C subset. Every parseable function definition
/// yields one AstTree; anything else is skipped or degraded, never a
/// crash.
SourceUnit parse_unit(const std::string &path, const std::string &text);

struct ArityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Convenience for fixtures: text must hold exactly one function.
AstTree parse_function(const std::string &text);

/// Renders a tree back to compilable-looking subset C. Test/debug aid;
/// expressions are fully parenthesized so reparsing is structure-stable.
std::string render_source(const AstTree &tree);

} // namespace p2r
