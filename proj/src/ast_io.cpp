#include "p2r/ast_io.hpp"

#include <json.hpp>

namespace p2r {

using json = nlohmann::ordered_json;

namespace {

constexpr int kAstFormat = 1;

json loc_to_json(const Loc &loc) {
  json j;
  j["file"] = loc.file;
  j["start-line"] = loc.start_line;
  j["start-col"] = loc.start_col;
  j["end-line"] = loc.end_line;
  j["end-col"] = loc.end_col;
  return j;
}

Loc loc_from_json(const json &j) {
  Loc loc;
  loc.file = j.at("file").get<std::string>();
  loc.start_line = j.at("start-line").get<int>();
  loc.start_col = j.at("start-col").get<int>();
  loc.end_line = j.at("end-line").get<int>();
  loc.end_col = j.at("end-col").get<int>();
  return loc;
}

} // namespace

std::string serialize(const AstTree &tree) {
  json doc;
  doc["ast-format"] = kAstFormat;
  doc["function-name"] = tree.function_name;
  doc["root"] = tree.root;
  json vars = json::array();
  for (const auto &v : tree.declared_vars) {
    json jv;
    jv["name"] = v.name;
    jv["declared-type"] = v.declared_type;
    jv["decl-loc"] = loc_to_json(v.decl_loc);
    jv["storage"] = storage_name(v.storage);
    vars.push_back(std::move(jv));
  }
  doc["declared-vars"] = std::move(vars);
  json nodes = json::array();
  for (const auto &n : tree.nodes) {
    json jn;
    jn["id"] = n.id;
    jn["kind"] = kind_name(n.kind);
    if (n.value)
      jn["value"] = *n.value;
    if (!n.role.empty())
      jn["role"] = n.role;
    jn["children"] = n.children;
    jn["loc"] = loc_to_json(n.loc);
    nodes.push_back(std::move(jn));
  }
  doc["nodes"] = std::move(nodes);
  return doc.dump(2) + "\n";
}

AstTree deserialize(const std::string &text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const nlohmann::json::parse_error &e) {
    throw FormatError(std::string("malformed ast document: ") + e.what());
  }
  try {
    if (!doc.contains("ast-format") || doc["ast-format"].get<int>() != kAstFormat)
      throw FormatError("unsupported ast-format version");
    AstTree tree;
    tree.function_name = doc.at("function-name").get<std::string>();
    tree.root = doc.at("root").get<NodeId>();
    for (const auto &jv : doc.at("declared-vars")) {
      DeclaredVar v;
      v.name = jv.at("name").get<std::string>();
      v.declared_type = jv.at("declared-type").get<std::string>();
      v.decl_loc = loc_from_json(jv.at("decl-loc"));
      auto st = storage_from_name(jv.at("storage").get<std::string>());
      if (!st)
        throw FormatError("unknown storage class in declared-vars");
      v.storage = *st;
      tree.declared_vars.push_back(std::move(v));
    }
    const auto &jnodes = doc.at("nodes");
    tree.nodes.resize(jnodes.size());
    for (const auto &jn : jnodes) {
      AstNode n;
      n.id = jn.at("id").get<NodeId>();
      auto kind = kind_from_name(jn.at("kind").get<std::string>());
      if (!kind)
        throw FormatError("unknown NodeKind tag '" +
                          jn.at("kind").get<std::string>() +
                          "' (document from a newer format?)");
      n.kind = *kind;
      if (jn.contains("value"))
        n.value = jn.at("value").get<std::string>();
      if (jn.contains("role"))
        n.role = jn.at("role").get<std::string>();
      n.children = jn.at("children").get<std::vector<NodeId>>();
      n.loc = loc_from_json(jn.at("loc"));
      if (n.id >= tree.nodes.size())
        throw FormatError("node id out of range: " + std::to_string(n.id));
      tree.nodes[n.id] = std::move(n);
    }
    return tree;
  } catch (const nlohmann::json::exception &e) {
    throw FormatError(std::string("malformed ast document: ") + e.what());
  }
}

} // namespace p2r
