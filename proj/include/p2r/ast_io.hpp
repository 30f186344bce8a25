#pragma once

#include "p2r/ast.hpp"

#include <string>

namespace p2r {

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Interchange format, one tree per document. Versioned via an
/// "ast-format" header field; field names follow the domain types.
std::string serialize(const AstTree &tree);
AstTree deserialize(const std::string &doc);

} // namespace p2r
