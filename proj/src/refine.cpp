#include "p2r/refine.hpp"

#include <algorithm>
#include <set>
#include <sstream>

namespace p2r {

RegressionOutcome regression_check(const Rule &rule, const RegressionSet &set) {
  RegressionOutcome out;
  for (const auto &mm : set.must_match) {
    MatchReport report = evaluate_rule(*mm.db, rule);
    bool hit = false;
    int extras = 0;
    for (const auto &m : report.matches) {
      if (m.function_name == mm.function_name)
        hit = true;
      else
        ++extras;
    }
    out.tp += hit ? 1 : 0;
    out.fp += extras;
    std::ostringstream os;
    os << "must-match " << mm.function_name << ": "
       << (hit ? "matched" : "MISSED");
    if (extras)
      os << " (+" << extras << " extra)";
    out.verdicts.push_back(os.str());
  }
  for (size_t i = 0; i < set.must_not_match.size(); ++i) {
    MatchReport report = evaluate_rule(*set.must_not_match[i], rule);
    out.fp += static_cast<int>(report.matches.size());
    std::ostringstream os;
    os << "must-not-match db " << i << ": " << report.matches.size()
       << " matches";
    out.verdicts.push_back(os.str());
  }
  return out;
}

namespace {

Rule promote(const Rule &rule, size_t candidate_idx) {
  Rule next = rule;
  CandidatePredicate cand = next.candidates[candidate_idx];
  next.candidates.erase(next.candidates.begin() + candidate_idx);
  next.predicates.push_back(cand.predicate);
  if (!cand.order_pred.empty()) {
    if (cand.candidate_first) {
      next.predicates.back().conditions.push_back(
          Condition::occurs_before(cand.order_pred));
    } else {
      for (auto &p : next.predicates) {
        if (p.name != cand.order_pred)
          continue;
        bool already = false;
        for (const auto &c : p.conditions)
          if (c.kind == CondKind::OccursBefore &&
              c.predicate == cand.predicate.name)
            already = true;
        if (!already)
          p.conditions.push_back(
              Condition::occurs_before(cand.predicate.name));
      }
    }
  }
  return next;
}

/// Drops a predicate plus any occurs-before references to it.
Rule without_predicate(const Rule &rule, size_t idx) {
  Rule next = rule;
  std::string name = next.predicates[idx].name;
  next.predicates.erase(next.predicates.begin() + idx);
  for (auto &p : next.predicates)
    std::erase_if(p.conditions, [&](const Condition &c) {
      return c.kind == CondKind::OccursBefore && c.predicate == name;
    });
  return next;
}

std::string cond_key(const Condition &c);
std::string conds_key(const std::vector<Condition> &v) {
  std::string out;
  for (const auto &c : v)
    out += cond_key(c) + ";";
  return out;
}
std::string cond_key(const Condition &c) {
  std::ostringstream os;
  os << cond_kind_name(c.kind) << "|" << kind_name(c.node_kind) << "|";
  for (const auto &n : c.names)
    os << n << ",";
  os << "|" << c.role << "|" << c.index << "|" << c.anchor << "|"
     << c.predicate << "|" << conds_key(c.sub);
  return os.str();
}

} // namespace

RefineResult refine_rule(const Rule &rule, const RegressionSet &set) {
  RefineResult result;
  result.rule = rule;
  auto &log = result.log;

  auto check = [&](const Rule &r) {
    ++result.checks;
    return regression_check(r, set);
  };

  RegressionOutcome base = check(result.rule);
  const int full_tp = static_cast<int>(set.must_match.size());
  if (base.tp != full_tp)
    throw RuleError("rule lost the target before refinement (tp=" +
                    std::to_string(base.tp) + "/" + std::to_string(full_tp) +
                    ")");

  // Candidate promotion order is fixed: data definitions first.
  auto next_candidate = [&](const std::set<std::string> &used)
      -> std::optional<size_t> {
    std::optional<size_t> best;
    int best_prio = INT32_MAX;
    for (size_t i = 0; i < result.rule.candidates.size(); ++i) {
      const auto &c = result.rule.candidates[i];
      if (used.count(c.predicate.name))
        continue;
      int prio = candidate_priority(c.origin);
      if (prio < best_prio) {
        best_prio = prio;
        best = i;
      }
    }
    return best;
  };

  std::set<std::string> attempted;
  int iterations = 0;
  while (base.fp > 0 && iterations < set.budget) {
    ++iterations;
    auto idx = next_candidate(attempted);
    if (!idx)
      break;
    const std::string cname = result.rule.candidates[*idx].predicate.name;
    const std::string origin = result.rule.candidates[*idx].origin;
    attempted.insert(cname);
    Rule promoted = promote(result.rule, *idx);
    RegressionOutcome outcome = check(promoted);
    if (outcome.tp < full_tp) {
      log.push_back("promotion " + cname + " (" + origin +
                    ") reverted: tp dropped to " + std::to_string(outcome.tp));
      continue;
    }
    log.push_back("promoted " + cname + " (" + origin + "): fp " +
                  std::to_string(base.fp) + " -> " +
                  std::to_string(outcome.fp));
    result.rule = std::move(promoted);
    base = outcome;
  }

  // Simplification: drop or merge structurally overlapping predicates
  // when that costs nothing.
  for (size_t i = 0; i < result.rule.predicates.size();) {
    if (result.rule.predicates.size() <= 1)
      break;
    Rule trimmed = without_predicate(result.rule, i);
    RegressionOutcome outcome = check(trimmed);
    if (outcome.tp == full_tp && outcome.fp <= base.fp) {
      log.push_back("removed redundant " + result.rule.predicates[i].name +
                    ": fp " + std::to_string(base.fp) + " -> " +
                    std::to_string(outcome.fp));
      result.rule = std::move(trimmed);
      base = outcome;
      continue; // same index now holds the next predicate
    }
    ++i;
  }
  for (size_t i = 0; i < result.rule.predicates.size(); ++i) {
    for (size_t j = i + 1; j < result.rule.predicates.size();) {
      Predicate &a = result.rule.predicates[i];
      Predicate &b = result.rule.predicates[j];
      bool mergeable = a.target_kind == b.target_kind &&
                       a.polarity == b.polarity &&
                       std::set<std::string>(a.params.begin(), a.params.end()) ==
                           std::set<std::string>(b.params.begin(),
                                                 b.params.end());
      if (mergeable) {
        std::set<std::string> have;
        for (const auto &c : a.conditions)
          have.insert(cond_key(c));
        bool overlap = false;
        for (const auto &c : b.conditions)
          if (have.count(cond_key(c)))
            overlap = true;
        if (overlap) {
          Rule merged = result.rule;
          for (const auto &c : b.conditions)
            if (!have.count(cond_key(c)))
              merged.predicates[i].conditions.push_back(c);
          merged.predicates.erase(merged.predicates.begin() + j);
          std::string bname = b.name;
          for (auto &p : merged.predicates)
            for (auto &c : p.conditions)
              if (c.kind == CondKind::OccursBefore && c.predicate == bname)
                c.predicate = merged.predicates[i].name;
          RegressionOutcome outcome = check(merged);
          if (outcome.tp == full_tp && outcome.fp <= base.fp) {
            log.push_back("merged " + bname + " into " +
                          result.rule.predicates[i].name);
            result.rule = std::move(merged);
            base = outcome;
            continue;
          }
        }
      }
      ++j;
    }
  }

  if (base.fp > 0) {
    result.residual_fp = true;
    if (std::find(result.rule.flags.begin(), result.rule.flags.end(),
                  "residual-fp") == result.rule.flags.end())
      result.rule.flags.push_back("residual-fp");
    log.push_back("budget exhausted with fp=" + std::to_string(base.fp) +
                  "; flagged residual-fp");
  }
  return result;
}

} // namespace p2r
