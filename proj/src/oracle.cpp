#include "efoent/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>

#include "efoent/errors.hpp"

namespace efoent {

namespace {

void require_grounded(const QueryAst& ast) {
  auto rs = relation_placeholders(ast);
  if (!rs.empty()) throw DataError("ungrounded placeholder r" + std::to_string(rs.front()));
  auto ss = constant_placeholders(ast);
  if (!ss.empty()) throw DataError("ungrounded placeholder s" + std::to_string(ss.front()));
}

void validate_ids(const KnowledgeGraph& kg, const LiteralConjunction& c) {
  for (const Atom& a : c.atoms) {
    if (a.relation.index < 0 || a.relation.index >= kg.num_relations())
      throw DataError("relation id out of range: " + a.relation.text());
    for (const Term* t : {&a.head, &a.tail})
      if (t->kind == Term::Kind::GroundedConstant &&
          (t->index < 0 || t->index >= kg.num_entities()))
        throw DataError("entity id out of range: " + t->text());
  }
}

std::vector<EntityId> intersect(const std::vector<EntityId>& a,
                                const std::vector<EntityId>& b) {
  std::vector<EntityId> out;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

std::vector<EntityId> all_entities(const KnowledgeGraph& kg) {
  std::vector<EntityId> out(size_t(kg.num_entities()));
  for (size_t i = 0; i < out.size(); ++i) out[i] = EntityId(i);
  return out;
}

// One literal with each endpoint resolved to a variable slot or a constant.
struct Lit {
  RelationId rel;
  int hv = -1, tv = -1;  // variable slots; -1 when the endpoint is constant
  EntityId hc = -1, tc = -1;
  bool negated = false;
};

// Backtracking evaluator for a single conjunction of literals. Candidate
// domains are seeded from the adjacency indices, variables are picked
// fewest-candidates-first, positive atoms propagate into unbound neighbor
// domains, and negated atoms filter once both endpoints are bound.
class ConjunctionSolver {
 public:
  ConjunctionSolver(const KnowledgeGraph& kg, const LiteralConjunction& conj) : kg_(kg) {
    validate_ids(kg, conj);
    std::map<int32_t, int> slots;  // 0 is the free variable, k>0 existential k
    auto slot = [&](const Term& t) -> int {
      int32_t key = t.kind == Term::Kind::Free ? 0 : t.index;
      auto [it, fresh] = slots.emplace(key, int(slots.size()));
      if (fresh && key == 0) f_slot_ = it->second;
      return it->second;
    };
    for (const Atom& a : conj.atoms) {
      Lit l;
      l.rel = a.relation.index;
      l.negated = a.negated;
      if (a.head.is_variable()) l.hv = slot(a.head); else l.hc = a.head.index;
      if (a.tail.is_variable()) l.tv = slot(a.tail); else l.tc = a.tail.index;
      if (l.hv < 0 && l.tv < 0) {
        bool in = kg.contains({l.hc, l.rel, l.tc});
        if (in == l.negated) trivially_false_ = true;
        continue;  // fully decided, nothing to search
      }
      lits_.push_back(l);
    }
    size_t nvars = slots.size();
    binding_.assign(nvars, -1);
    seed_domains(nvars);
    var_lits_.assign(nvars, {});
    for (size_t i = 0; i < lits_.size(); ++i) {
      const Lit& l = lits_[i];
      bool seed_enforced = !l.negated && (l.hv < 0 || l.tv < 0);
      if (seed_enforced) continue;  // positive single-variable atoms hold by seeding
      if (l.hv >= 0) var_lits_[l.hv].push_back(int(i));
      if (l.tv >= 0 && l.tv != l.hv) var_lits_[l.tv].push_back(int(i));
    }
  }

  // Inserts every f binding the conjunction admits; values already present
  // are skipped without re-deriving them.
  void collect(std::set<EntityId>& out) {
    if (trivially_false_) return;
    if (f_slot_ < 0) {
      if (exists()) for (EntityId e : all_entities(kg_)) out.insert(e);
      return;
    }
    auto saved = domains_;
    for (EntityId a : saved[f_slot_]) {
      if (out.count(a)) continue;
      binding_[f_slot_] = a;
      if (try_bind(f_slot_) && exists()) out.insert(a);
      binding_[f_slot_] = -1;
      domains_ = saved;
    }
  }

  bool admits(EntityId candidate) {
    if (trivially_false_) return false;
    if (f_slot_ < 0) return exists();
    if (!std::binary_search(domains_[f_slot_].begin(), domains_[f_slot_].end(), candidate))
      return false;
    auto saved = domains_;
    binding_[f_slot_] = candidate;
    bool ok = try_bind(f_slot_) && exists();
    binding_[f_slot_] = -1;
    domains_ = std::move(saved);
    return ok;
  }

 private:
  void seed_domains(size_t nvars) {
    domains_.assign(nvars, {});
    std::vector<bool> seeded(nvars, false);
    auto apply = [&](int v, const std::vector<EntityId>& s) {
      if (!seeded[v]) {
        domains_[v] = s;
        seeded[v] = true;
      } else {
        domains_[v] = intersect(domains_[v], s);
      }
    };
    for (const Lit& l : lits_) {
      if (l.negated) continue;
      if (l.hv >= 0 && l.tv < 0) {
        apply(l.hv, kg_.neighbors(l.tc, l.rel, Direction::Backward));
      } else if (l.hv < 0 && l.tv >= 0) {
        apply(l.tv, kg_.neighbors(l.hc, l.rel, Direction::Forward));
      } else if (l.hv >= 0 && l.tv >= 0) {
        apply(l.hv, kg_.heads_of(l.rel));
        apply(l.tv, kg_.tails_of(l.rel));
      }
    }
    for (size_t v = 0; v < nvars; ++v)
      if (!seeded[v]) domains_[v] = all_entities(kg_);
  }

  // Applies the consequences of the binding already written into binding_[v].
  // Literals with both endpoints known are tested; positive literals with one
  // open endpoint narrow that variable's domain. Returns false as soon as the
  // binding is inconsistent.
  bool try_bind(int v) {
    for (int idx : var_lits_[v]) {
      const Lit& l = lits_[idx];
      int64_t hval = l.hv >= 0 ? binding_[l.hv] : l.hc;
      int64_t tval = l.tv >= 0 ? binding_[l.tv] : l.tc;
      if (hval >= 0 && tval >= 0) {
        bool in = kg_.contains({EntityId(hval), l.rel, EntityId(tval)});
        if (in == l.negated) return false;
      } else if (!l.negated) {
        int other = hval < 0 ? l.hv : l.tv;
        EntityId anchor = EntityId(hval < 0 ? tval : hval);
        Direction dir = hval < 0 ? Direction::Backward : Direction::Forward;
        domains_[other] = intersect(domains_[other], kg_.neighbors(anchor, l.rel, dir));
        if (domains_[other].empty()) return false;
      }
    }
    return true;
  }

  bool exists() {
    int v = -1;
    for (size_t i = 0; i < binding_.size(); ++i)
      if (binding_[i] < 0 && (v < 0 || domains_[i].size() < domains_[v].size())) v = int(i);
    if (v < 0) return true;
    auto saved = domains_;
    for (EntityId a : saved[v]) {
      binding_[v] = a;
      if (try_bind(v) && exists()) {
        binding_[v] = -1;
        domains_ = std::move(saved);
        return true;
      }
      binding_[v] = -1;
      domains_ = saved;
    }
    binding_[v] = -1;
    domains_ = std::move(saved);
    return false;
  }

  const KnowledgeGraph& kg_;
  std::vector<Lit> lits_;
  std::vector<std::vector<int>> var_lits_;
  std::vector<std::vector<EntityId>> domains_;
  std::vector<int64_t> binding_;
  int f_slot_ = -1;
  bool trivially_false_ = false;
};

bool naive_admits(const KnowledgeGraph& kg, const LiteralConjunction& c,
                  const std::vector<int32_t>& exis, EntityId candidate) {
  std::map<int32_t, size_t> pos;
  for (size_t i = 0; i < exis.size(); ++i) pos.emplace(exis[i], i);
  std::vector<EntityId> assign(exis.size(), 0);
  EntityId ne = kg.num_entities();
  auto value = [&](const Term& t) -> EntityId {
    if (t.kind == Term::Kind::GroundedConstant) return t.index;
    if (t.kind == Term::Kind::Free) return candidate;
    return assign[pos.at(t.index)];
  };
  while (true) {
    bool ok = true;
    for (const Atom& a : c.atoms) {
      bool in = kg.contains({value(a.head), a.relation.index, value(a.tail)});
      if (in == a.negated) {
        ok = false;
        break;
      }
    }
    if (ok) return true;
    size_t i = 0;
    while (i < assign.size() && ++assign[i] == ne) {
      assign[i] = 0;
      ++i;
    }
    if (i == assign.size()) return false;
  }
}

}  // namespace

bool check_entailment(const KnowledgeGraph& kg, const QueryAst& ast, EntityId candidate) {
  require_grounded(ast);
  if (candidate < 0 || candidate >= kg.num_entities())
    throw DataError("entity id out of range: " + std::to_string(candidate));
  for (const LiteralConjunction& c : dnf_expand(ast))
    if (ConjunctionSolver(kg, c).admits(candidate)) return true;
  return false;
}

std::vector<EntityId> answer_set(const KnowledgeGraph& kg, const QueryAst& ast) {
  require_grounded(ast);
  std::set<EntityId> acc;
  for (const LiteralConjunction& c : dnf_expand(ast)) ConjunctionSolver(kg, c).collect(acc);
  return {acc.begin(), acc.end()};
}

std::vector<EntityId> answer_set_naive(const KnowledgeGraph& kg, const QueryAst& ast,
                                       uint64_t budget) {
  require_grounded(ast);
  auto conjs = dnf_expand(ast);
  std::vector<std::vector<int32_t>> exis;
  for (const LiteralConjunction& c : conjs) {
    validate_ids(kg, c);
    exis.push_back(existentials_of(c));
    double combos = std::pow(double(kg.num_entities()), double(exis.back().size()));
    if (combos > double(budget))
      throw BudgetError("existential enumeration over " + std::to_string(kg.num_entities()) +
                        "^" + std::to_string(exis.back().size()) +
                        " assignments exceeds budget " + std::to_string(budget));
  }
  std::vector<EntityId> out;
  for (EntityId a = 0; a < kg.num_entities(); ++a)
    for (size_t i = 0; i < conjs.size(); ++i)
      if (naive_admits(kg, conjs[i], exis[i], a)) {
        out.push_back(a);
        break;
      }
  return out;
}

AnswerSplit answer_split(const GraphSplit& splits, const QueryAst& ast) {
  AnswerSplit out;
  out.a_id = answer_set(splits.train, ast);
  std::vector<EntityId> on_test = answer_set(splits.test, ast);
  std::vector<EntityId> on_valid = answer_set(splits.valid, ast);
  std::set_difference(on_test.begin(), on_test.end(), on_valid.begin(), on_valid.end(),
                      std::back_inserter(out.a_ood));
  return out;
}

}  // namespace efoent
