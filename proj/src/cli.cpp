#include "p2r/cli.hpp"

#include "p2r/ast_io.hpp"
#include "p2r/treediff.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

namespace p2r {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path &p, const std::string &text) {
  if (p.has_parent_path())
    fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + p.string());
  out << text;
}

std::string resolve(const std::string &base, const std::string &path) {
  if (path.empty() || fs::path(path).is_absolute())
    return path;
  return (fs::path(base) / path).string();
}

} // namespace

GenerationConfig parse_config_json(const std::string &text) {
  GenerationConfig cfg;
  json doc = json::parse(text);
  if (doc.contains("wrapper-substitutions"))
    cfg.wrapper_substitutions =
        doc["wrapper-substitutions"].get<std::map<std::string, std::string>>();
  if (doc.contains("drop-noise"))
    cfg.drop_noise = doc["drop-noise"].get<bool>();
  if (doc.contains("operand-symmetry"))
    cfg.operand_symmetry = doc["operand-symmetry"].get<bool>();
  if (doc.contains("max-dfg-hops"))
    cfg.max_dfg_hops = doc["max-dfg-hops"].get<int>();
  cfg.check();
  return cfg;
}

CorpusManifest load_manifest(const std::string &path) {
  CorpusManifest manifest;
  manifest.base_dir = fs::path(path).parent_path().string();
  json doc = json::parse(read_file(path));
  if (doc.contains("settings"))
    manifest.settings = parse_config_json(doc["settings"].dump());
  std::set<std::string> ids;
  for (const auto &jc : doc.at("cases")) {
    CaseSpec spec;
    spec.id = jc.at("id").get<std::string>();
    if (!ids.insert(spec.id).second)
      throw std::runtime_error("duplicate case id " + spec.id);
    spec.diffs = jc.at("diffs").get<std::vector<std::string>>();
    spec.pre_root = jc.at("pre-root").get<std::string>();
    if (jc.contains("post-root"))
      spec.post_root = jc.at("post-root").get<std::string>();
    if (jc.contains("provenance"))
      spec.provenance = jc.at("provenance").get<std::string>();
    if (jc.contains("target-functions"))
      spec.target_functions =
          jc.at("target-functions").get<std::vector<std::string>>();
    if (jc.contains("renames"))
      spec.renames = jc.at("renames").get<std::map<std::string, std::string>>();
    if (jc.contains("expected")) {
      const auto &je = jc.at("expected");
      if (je.contains("pre-match"))
        spec.expect_pre_match = je.at("pre-match").get<bool>();
      if (je.contains("post-nonmatch"))
        spec.expect_post_nonmatch = je.at("post-nonmatch").get<bool>();
      if (je.contains("cognates"))
        for (const auto &jg : je.at("cognates"))
          spec.cognates.push_back(
              {jg.at("db").get<std::string>(),
               jg.at("functions").get<std::vector<std::string>>()});
    }
    // Referenced paths must exist at load time.
    for (const auto &d : spec.diffs)
      if (!fs::exists(resolve(manifest.base_dir, d)))
        throw std::runtime_error("case " + spec.id + ": missing diff " + d);
    if (!fs::exists(resolve(manifest.base_dir, spec.pre_root)))
      throw std::runtime_error("case " + spec.id + ": missing pre-root " +
                               spec.pre_root);
    if (!spec.post_root.empty() &&
        !fs::exists(resolve(manifest.base_dir, spec.post_root)))
      throw std::runtime_error("case " + spec.id + ": missing post-root " +
                               spec.post_root);
    manifest.cases.push_back(std::move(spec));
  }
  return manifest;
}

namespace {

struct CaseMaterial {
  // pre/post text and units per patched file
  struct File {
    std::string rel_path;
    std::shared_ptr<SourceUnit> pre;
    std::shared_ptr<SourceUnit> post;
    std::vector<PatchHunk> hunks;
  };
  std::vector<File> files;
  AstDatabase pre_db;
  AstDatabase post_db;
};

CaseMaterial load_case_material(const CaseSpec &spec,
                                const std::string &base_dir) {
  CaseMaterial material;
  // Sequential application merges multi-commit fixes.
  std::vector<std::vector<PatchHunk>> parsed;
  for (const auto &d : spec.diffs)
    parsed.push_back(parse_unified_diff(read_file(resolve(base_dir, d))));
  std::set<std::string> touched;
  for (const auto &hunks : parsed)
    for (const auto &h : hunks)
      touched.insert(h.file);

  for (const auto &rel : touched) {
    CaseMaterial::File file;
    file.rel_path = rel;
    fs::path pre_path = fs::path(resolve(base_dir, spec.pre_root)) / rel;
    std::string pre_text = read_file(pre_path);
    std::string cur = pre_text;
    for (const auto &hunks : parsed) {
      std::vector<PatchHunk> mine;
      for (const auto &h : hunks)
        if (h.file == rel)
          mine.push_back(h);
      if (!mine.empty())
        cur = apply_hunks(cur, mine);
    }
    std::string post_text = cur;
    if (!spec.post_root.empty()) {
      fs::path post_path = fs::path(resolve(base_dir, spec.post_root)) / rel;
      post_text = read_file(post_path);
    }
    if (parsed.size() == 1 && spec.post_root.empty()) {
      for (const auto &h : parsed[0])
        if (h.file == rel)
          file.hunks.push_back(h);
    } else {
      file.hunks = compute_hunks(rel, pre_text, post_text);
    }
    file.pre = std::make_shared<SourceUnit>(parse_unit(rel, pre_text));
    file.post = std::make_shared<SourceUnit>(parse_unit(rel, post_text));
    material.files.push_back(std::move(file));
  }

  std::vector<std::shared_ptr<SourceUnit>> pre_units, post_units;
  for (const auto &f : material.files) {
    pre_units.push_back(f.pre);
    post_units.push_back(f.post);
  }
  material.pre_db = build_db_from_units(pre_units);
  material.post_db = build_db_from_units(post_units);
  return material;
}

} // namespace

std::vector<CaseOutcome> run_case(const CaseSpec &spec,
                                  const GenerationConfig &settings,
                                  const std::string &base_dir) {
  std::vector<CaseOutcome> outcomes;
  CaseMaterial material = load_case_material(spec, base_dir);

  std::vector<PatchCase> cases;
  for (const auto &file : material.files) {
    PatchCase raw;
    raw.id = spec.id;
    raw.hunks = file.hunks;
    raw.provenance = spec.provenance.empty() ? spec.id : spec.provenance;
    raw.pre_unit = file.pre;
    raw.post_unit = file.post;
    raw.pairs = locate_function_pairs(*file.pre, *file.post, file.hunks,
                                      spec.renames);
    if (raw.pairs.empty())
      continue;
    auto split = split_patch(raw);
    cases.insert(cases.end(), split.begin(), split.end());
  }
  if (cases.empty()) {
    CaseOutcome failure;
    failure.case_id = spec.id;
    failure.skip_reason = "no modified function pairs located";
    outcomes.push_back(std::move(failure));
    return outcomes;
  }

  for (const auto &c : cases) {
    CaseOutcome outcome;
    outcome.case_id = c.id;
    const FunctionPair &pair = c.pairs.front();
    if (!spec.target_functions.empty() &&
        std::find(spec.target_functions.begin(), spec.target_functions.end(),
                  pair.pre.function_name) == spec.target_functions.end() &&
        cases.size() > 1) {
      outcome.skip_reason = "not a target function";
      outcomes.push_back(std::move(outcome));
      continue;
    }
    try {
      auto pre_tree = std::make_shared<AstTree>(pair.pre);
      auto post_tree = std::make_shared<AstTree>(pair.post);
      MatchSet matches = match_trees(*pre_tree, *post_tree);
      EditScript script = derive_editscript(pre_tree, post_tree, matches);
      if (script.ops.empty()) {
        outcome.skip_reason = "no differential nodes";
        outcomes.push_back(std::move(outcome));
        continue;
      }
      Rule rule = generate_raw_rule(script, &outcome.gen_log);
      rule.rule_id = c.id;
      rule.provenance = c.provenance;
      rule = enrich_cfg(std::move(rule), script);
      rule = enrich_dfg(std::move(rule), script, settings);
      rule = generalize(std::move(rule), settings, &outcome.gen_log);

      RegressionSet reg;
      reg.must_match.push_back(
          {&material.pre_db, pair.pre.function_name});
      reg.must_not_match.push_back(&material.post_db);
      RefineResult refined = refine_rule(rule, reg);
      outcome.refine_log = refined.log;
      outcome.rule = std::move(refined.rule);
      outcome.produced = true;
    } catch (const EmptyScriptError &e) {
      outcome.skip_reason = e.what();
    } catch (const RuleError &e) {
      outcome.skip_reason = e.what();
    }
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

int cmd_parse(const std::string &file, const std::string &emit_ast,
              std::ostream &out, std::ostream &err) {
  SourceUnit unit;
  try {
    unit = parse_unit(file, read_file(file));
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  for (const auto &d : unit.diagnostics)
    err << d.to_string() << "\n";
  out << file << ": " << unit.functions.size() << " function(s)\n";
  for (const auto &fn : unit.functions)
    out << "  " << fn.function_name << " at line "
        << fn.node(fn.root).loc.start_line << ", " << fn.size() << " nodes\n";
  if (!emit_ast.empty()) {
    std::string all;
    for (const auto &fn : unit.functions)
      all += serialize(fn);
    write_file(emit_ast, all);
  }
  return 0;
}

int cmd_diff(const std::string &pre_file, const std::string &post_file,
             const std::string &function, std::ostream &out,
             std::ostream &err) {
  try {
    SourceUnit pre = parse_unit(pre_file, read_file(pre_file));
    SourceUnit post = parse_unit(post_file, read_file(post_file));
    auto pick = [&](SourceUnit &u, const char *side) -> AstTree * {
      if (function.empty()) {
        if (u.functions.size() != 1)
          throw std::runtime_error(std::string(side) +
                                   " file needs --function (multiple found)");
        return &u.functions[0];
      }
      for (auto &fn : u.functions)
        if (fn.function_name == function)
          return &fn;
      throw std::runtime_error("function '" + function + "' not found in " +
                               side);
    };
    auto pre_tree = std::make_shared<AstTree>(*pick(pre, "pre"));
    auto post_tree = std::make_shared<AstTree>(*pick(post, "post"));
    EditScript script = derive_editscript(
        pre_tree, post_tree, match_trees(*pre_tree, *post_tree));
    out << format_editscript(script);
    return 0;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

namespace {

std::string rule_filename(const Rule &rule) {
  std::string prov = rule.provenance.empty() ? "case" : rule.provenance;
  for (auto &c : prov)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.')
      c = '_';
  std::string id = rule.rule_id;
  for (auto &c : id)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '.')
      c = '_';
  return prov + "__" + id + ".rule";
}

} // namespace

int cmd_gen(const std::string &manifest_path, const std::string &config_path,
            const std::string &out_dir, int workers, std::ostream &out,
            std::ostream &err) {
  (void)workers;
  CorpusManifest manifest;
  try {
    manifest = load_manifest(manifest_path);
    if (!config_path.empty())
      manifest.settings = parse_config_json(read_file(config_path));
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  if (manifest.cases.empty())
    err << "warning: empty manifest, nothing to do\n";

  bool all_ok = true;
  json index;
  index["index-format"] = 1;
  json settings_echo;
  settings_echo["drop-noise"] = manifest.settings.drop_noise;
  settings_echo["operand-symmetry"] = manifest.settings.operand_symmetry;
  settings_echo["max-dfg-hops"] = manifest.settings.max_dfg_hops;
  settings_echo["wrapper-substitutions"] =
      manifest.settings.wrapper_substitutions;
  index["settings"] = settings_echo;
  json rules = json::array();

  for (const auto &spec : manifest.cases) {
    std::vector<CaseOutcome> outcomes;
    try {
      outcomes = run_case(spec, manifest.settings, manifest.base_dir);
    } catch (const std::exception &e) {
      err << spec.id << ": failed: " << e.what() << "\n";
      all_ok = false;
      continue;
    }
    for (const auto &o : outcomes) {
      if (!o.produced) {
        out << o.case_id << ": skipped (" << o.skip_reason << ")\n";
        json jr;
        jr["rule-id"] = o.case_id;
        jr["skipped"] = o.skip_reason;
        rules.push_back(std::move(jr));
        continue;
      }
      std::string fname = rule_filename(o.rule);
      write_file(fs::path(out_dir) / fname, serialize_rule(o.rule));
      write_file(fs::path(out_dir) / (fname + ".ql"), emit_text(o.rule));
      std::ostringstream logtext;
      for (const auto &e : o.gen_log.entries)
        logtext << e.op << " => " << e.outcome << "\n";
      for (const auto &line : o.refine_log)
        logtext << "refine: " << line << "\n";
      write_file(fs::path(out_dir) / (fname + ".log"), logtext.str());
      out << o.case_id << ": " << fname << " (" << o.rule.predicates.size()
          << " predicates)\n";
      json jr;
      jr["rule-id"] = o.rule.rule_id;
      jr["provenance"] = o.rule.provenance;
      jr["file"] = fname;
      if (!o.rule.flags.empty())
        jr["flags"] = o.rule.flags;
      rules.push_back(std::move(jr));
    }
  }
  index["rules"] = std::move(rules);
  try {
    write_file(fs::path(out_dir) / "index.json", index.dump(2) + "\n");
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return all_ok ? 0 : 2;
}

namespace {

std::vector<Rule> load_rules(const std::string &rule_dir,
                             std::vector<std::string> &problems) {
  std::vector<Rule> rules;
  std::vector<std::string> files;
  for (const auto &entry : fs::directory_iterator(rule_dir))
    if (entry.is_regular_file() && entry.path().extension() == ".rule")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  for (const auto &f : files) {
    try {
      Rule r = deserialize_rule(read_file(f));
      for (const auto &d : validate_rule(r))
        if (d.severity == RuleDiagnostic::Severity::Error)
          throw RuleError(d.message);
      rules.push_back(std::move(r));
    } catch (const std::exception &e) {
      problems.push_back(f + ": " + e.what());
    }
  }
  return rules;
}

} // namespace

int cmd_scan(const std::vector<std::string> &db_paths,
             const std::string &rule_dir, const std::string &report_path,
             const std::string &format, int workers, bool timings,
             std::ostream &out, std::ostream &err) {
  std::vector<std::string> problems;
  std::vector<Rule> rules;
  AstDatabase db;
  try {
    rules = load_rules(rule_dir, problems);
    db = build_db(db_paths);
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  for (const auto &p : problems)
    err << "rule error: " << p << "\n";
  if (!problems.empty())
    return 2;

  ScanOptions opts;
  opts.workers = workers;
  opts.record_timing = timings;
  auto reports = scan(db, rules, opts);

  std::string rendered;
  if (format == "structured") {
    rendered = report_to_json(reports, timings);
  } else {
    std::ostringstream os;
    for (const auto &r : reports)
      os << report_to_text(r, timings);
    rendered = os.str();
  }
  if (report_path.empty())
    out << rendered;
  else {
    try {
      write_file(report_path, rendered);
    } catch (const std::exception &e) {
      err << "error: " << e.what() << "\n";
      return 2;
    }
  }
  size_t total = 0;
  for (const auto &r : reports)
    total += r.matches.size();
  out << total << " match(es) across " << rules.size() << " rule(s)\n";
  return total > 0 ? 1 : 0;
}

int cmd_refine(const std::string &rule_path, const std::string &pre_db_path,
               const std::string &post_db_path,
               const std::string &extra_negative, const std::string &out_path,
               const std::string &log_path, std::ostream &out,
               std::ostream &err) {
  try {
    Rule rule = deserialize_rule(read_file(rule_path));
    AstDatabase pre_db = build_db({pre_db_path});
    AstDatabase post_db = build_db({post_db_path});
    AstDatabase extra_db;
    RegressionSet set;
    // Every function of the pre snapshot that the rule currently
    // matches is treated as the target set.
    std::vector<std::string> targets;
    for (const auto &ref : pre_db.functions)
      if (match_function(*ref.tree, ref.unit->path, rule))
        targets.push_back(ref.tree->function_name);
    if (targets.empty()) {
      err << "error: rule matches nothing in the pre database\n";
      return 2;
    }
    set.must_match.push_back({&pre_db, targets.front()});
    set.must_not_match.push_back(&post_db);
    if (!extra_negative.empty()) {
      extra_db = build_db({extra_negative});
      set.must_not_match.push_back(&extra_db);
    }
    RefineResult result = refine_rule(rule, set);
    write_file(out_path, serialize_rule(result.rule));
    if (!log_path.empty()) {
      std::ostringstream os;
      for (const auto &l : result.log)
        os << l << "\n";
      os << "checks: " << result.checks << "\n";
      write_file(log_path, os.str());
    }
    out << "refined rule written to " << out_path
        << (result.residual_fp ? " (residual-fp)" : "") << "\n";
    return 0;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

int cmd_eval(const std::string &manifest_path, const std::string &rule_dir,
             const std::string &data_out, std::ostream &out,
             std::ostream &err) {
  CorpusManifest manifest;
  std::vector<std::string> problems;
  std::vector<Rule> rules;
  try {
    manifest = load_manifest(manifest_path);
    rules = load_rules(rule_dir, problems);
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  for (const auto &p : problems)
    err << "rule error: " << p << "\n";

  int recalled = 0;
  int post_clean = 0;
  int cognates_expected = 0, cognates_found = 0;
  std::ostringstream table;
  std::ostringstream data;
  data << "case\trecalled\tpost-clean\tcognates-found\tcognates-expected\n";
  for (const auto &spec : manifest.cases) {
    std::vector<const Rule *> mine;
    for (const auto &r : rules)
      if (r.rule_id == spec.id || r.rule_id.rfind(spec.id + "#", 0) == 0)
        mine.push_back(&r);
    bool case_recalled = false;
    bool case_post_clean = true;
    int case_cog_found = 0, case_cog_expected = 0;
    if (mine.empty()) {
      table << spec.id << ": NO RULE (not recalled)\n";
      data << spec.id << "\t0\t0\t0\t0\n";
      continue;
    }
    try {
      CaseMaterial material = load_case_material(spec, manifest.base_dir);
      std::set<std::string> targets(spec.target_functions.begin(),
                                    spec.target_functions.end());
      if (targets.empty())
        for (const auto &f : material.pre_db.functions)
          targets.insert(f.tree->function_name);
      for (const Rule *r : mine) {
        MatchReport pre_report = evaluate_rule(material.pre_db, *r);
        for (const auto &m : pre_report.matches)
          if (targets.count(m.function_name))
            case_recalled = true;
        MatchReport post_report = evaluate_rule(material.post_db, *r);
        for (const auto &m : post_report.matches)
          if (targets.count(m.function_name))
            case_post_clean = false;
      }
      for (const auto &cog : spec.cognates) {
        AstDatabase cdb = build_db({resolve(manifest.base_dir, cog.db)});
        for (const auto &fn : cog.functions) {
          ++case_cog_expected;
          bool hit = false;
          for (const Rule *r : mine) {
            MatchReport rep = evaluate_rule(cdb, *r);
            for (const auto &m : rep.matches)
              if (m.function_name == fn)
                hit = true;
          }
          if (hit)
            ++case_cog_found;
        }
      }
    } catch (const std::exception &e) {
      err << spec.id << ": evaluation failed: " << e.what() << "\n";
    }
    recalled += case_recalled ? 1 : 0;
    post_clean += case_post_clean ? 1 : 0;
    cognates_found += case_cog_found;
    cognates_expected += case_cog_expected;
    table << spec.id << ": " << (case_recalled ? "recalled" : "MISSED")
          << ", post " << (case_post_clean ? "clean" : "MATCHED");
    if (case_cog_expected)
      table << ", cognates " << case_cog_found << "/" << case_cog_expected;
    table << "\n";
    data << spec.id << "\t" << (case_recalled ? 1 : 0) << "\t"
         << (case_post_clean ? 1 : 0) << "\t" << case_cog_found << "\t"
         << case_cog_expected << "\n";
  }
  size_t total = manifest.cases.size();
  out << table.str();
  out << "recall: " << recalled << "/" << total;
  if (total > 0)
    out << " (" << (100 * recalled / total) << "%)";
  out << "\npost-patch clean: " << post_clean << "/" << total << "\n";
  if (cognates_expected)
    out << "cognates: " << cognates_found << "/" << cognates_expected << "\n";
  if (!data_out.empty()) {
    try {
      write_file(data_out, data.str());
    } catch (const std::exception &e) {
      err << "error: " << e.what() << "\n";
      return 2;
    }
  }
  return recalled == static_cast<int>(total) ? 0 : 1;
}

int cmd_emit(const std::string &rule_path, const std::string &out_path,
             std::ostream &out, std::ostream &err) {
  try {
    Rule rule = deserialize_rule(read_file(rule_path));
    std::string text = emit_text(rule);
    if (out_path.empty())
      out << text;
    else
      write_file(out_path, text);
    return 0;
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
}

} // namespace p2r
