#pragma once

#include "p2r/matcher.hpp"
#include "p2r/patch.hpp"
#include "p2r/refine.hpp"
#include "p2r/rulegen.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace p2r {

struct CaseSpec {
  std::string id;
  std::vector<std::string> diffs;
  std::string pre_root;
  std::string post_root; // optional: synthesized from diffs when empty
  std::string provenance;
  std::vector<std::string> target_functions;
  bool expect_pre_match = true;
  bool expect_post_nonmatch = true;
  struct Cognate {
    std::string db;
    std::vector<std::string> functions;
  };
  std::vector<Cognate> cognates;
  std::map<std::string, std::string> renames;
};

struct CorpusManifest {
  GenerationConfig settings;
  std::vector<CaseSpec> cases;
  std::string base_dir;
};

CorpusManifest load_manifest(const std::string &path);
GenerationConfig parse_config_json(const std::string &text);

/// One generated rule with its paper trail.
struct CaseOutcome {
  std::string case_id;
  bool produced = false;
  std::string skip_reason;
  Rule rule;
  GenLog gen_log;
  std::vector<std::string> refine_log;
};

/// ingest -> diff -> generate -> enrich -> generalize -> refine for one
/// case; throws only on I/O-level failures.
std::vector<CaseOutcome> run_case(const CaseSpec &spec,
                                  const GenerationConfig &settings,
                                  const std::string &base_dir);

int cmd_parse(const std::string &file, const std::string &emit_ast,
              std::ostream &out, std::ostream &err);
int cmd_diff(const std::string &pre_file, const std::string &post_file,
             const std::string &function, std::ostream &out, std::ostream &err);
int cmd_gen(const std::string &manifest_path, const std::string &config_path,
            const std::string &out_dir, int workers, std::ostream &out,
            std::ostream &err);
int cmd_refine(const std::string &rule_path, const std::string &pre_db,
               const std::string &post_db, const std::string &extra_negative,
               const std::string &out_path, const std::string &log_path,
               std::ostream &out, std::ostream &err);
int cmd_scan(const std::vector<std::string> &db_paths,
             const std::string &rule_dir, const std::string &report_path,
             const std::string &format, int workers, bool timings,
             std::ostream &out, std::ostream &err);
int cmd_eval(const std::string &manifest_path, const std::string &rule_dir,
             const std::string &data_out, std::ostream &out, std::ostream &err);
int cmd_emit(const std::string &rule_path, const std::string &out_path,
             std::ostream &out, std::ostream &err);

} // namespace p2r
