#include "p2r/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

int main(int argc, char **argv) {
  CLI::App app{"p2r: turn C security patches into static-analysis rules "
               "and scan codebases for cognate defects"};
  app.require_subcommand(1);

  int workers = 1;
  if (const char *env = std::getenv("P2R_WORKERS")) {
    int v = std::atoi(env);
    if (v > 0)
      workers = v;
  }

  // parse
  auto *parse = app.add_subcommand("parse", "Parse a C file into ASTs");
  std::string parse_file, emit_ast;
  parse->add_option("file", parse_file, "C source file")->required();
  parse->add_option("--emit-ast", emit_ast, "Write interchange documents here");

  // diff
  auto *diff = app.add_subcommand("diff", "Editscript between two versions "
                                          "of a function");
  std::string diff_pre, diff_post, diff_function;
  diff->add_option("pre", diff_pre, "Pre-patch file")->required();
  diff->add_option("post", diff_post, "Post-patch file")->required();
  diff->add_option("--function", diff_function, "Function name");

  // gen
  auto *gen = app.add_subcommand("gen", "Generate rules from a case manifest");
  std::string gen_manifest, gen_config, gen_out;
  gen->add_option("--case", gen_manifest, "Case/corpus manifest")->required();
  gen->add_option("--config", gen_config, "Generation config override");
  gen->add_option("--out", gen_out, "Rule repository directory")->required();
  gen->add_option("--workers", workers, "Parallel workers");

  // refine
  auto *refine = app.add_subcommand("refine", "Regression-refine a rule");
  std::string ref_rule, ref_pre, ref_post, ref_extra, ref_out, ref_log;
  refine->add_option("--rule", ref_rule)->required();
  refine->add_option("--pre", ref_pre, "Pre-patch database path")->required();
  refine->add_option("--post", ref_post, "Post-patch database path")->required();
  refine->add_option("--extra-negative", ref_extra, "Extra must-not-match db");
  refine->add_option("--out", ref_out)->required();
  refine->add_option("--log", ref_log);

  // scan
  auto *scan = app.add_subcommand("scan", "Evaluate rules against a codebase");
  std::vector<std::string> scan_dbs;
  std::string scan_rules, scan_report, scan_format = "text";
  bool scan_timings = false;
  scan->add_option("--db", scan_dbs, "Files or directories to scan")
      ->required()
      ->expected(-1);
  scan->add_option("--rules", scan_rules, "Rule repository directory")
      ->required();
  scan->add_option("--report", scan_report, "Report output path");
  scan->add_option("--format", scan_format, "text|structured")
      ->check(CLI::IsMember({"text", "structured"}));
  scan->add_flag("--timings", scan_timings, "Record per-rule timing");
  scan->add_option("--workers", workers, "Parallel workers");

  // eval
  auto *eval = app.add_subcommand("eval", "Corpus recall/precision summary");
  std::string eval_manifest, eval_rules, eval_data;
  eval->add_option("--case", eval_manifest, "Corpus manifest")->required();
  eval->add_option("--rules", eval_rules, "Rule repository directory")
      ->required();
  eval->add_option("--data", eval_data, "Plot-ready TSV output");

  // emit
  auto *emit = app.add_subcommand("emit", "Render a rule as query text");
  std::string emit_rule, emit_out;
  emit->add_option("--rule", emit_rule)->required();
  emit->add_option("--out", emit_out);

  CLI11_PARSE(app, argc, argv);

  if (parse->parsed())
    return p2r::cmd_parse(parse_file, emit_ast, std::cout, std::cerr);
  if (diff->parsed())
    return p2r::cmd_diff(diff_pre, diff_post, diff_function, std::cout,
                         std::cerr);
  if (gen->parsed())
    return p2r::cmd_gen(gen_manifest, gen_config, gen_out, workers, std::cout,
                        std::cerr);
  if (refine->parsed())
    return p2r::cmd_refine(ref_rule, ref_pre, ref_post, ref_extra, ref_out,
                           ref_log, std::cout, std::cerr);
  if (scan->parsed())
    return p2r::cmd_scan(scan_dbs, scan_rules, scan_report, scan_format,
                         workers, scan_timings, std::cout, std::cerr);
  if (eval->parsed())
    return p2r::cmd_eval(eval_manifest, eval_rules, eval_data, std::cout,
                         std::cerr);
  if (emit->parsed())
    return p2r::cmd_emit(emit_rule, emit_out, std::cout, std::cerr);
  return 2;
}
