#pragma once

#include <cstdint>
#include <vector>

#include "efoent/ast.hpp"
#include "efoent/kg.hpp"

namespace efoent {

inline constexpr uint64_t kDefaultNaiveBudget = 10'000'000;

// True iff some conjunction of the grounded query admits an assignment of its
// existentials such that every positive atom is an edge of `kg` and every
// negated atom is not, with the free variable bound to `candidate`.
bool check_entailment(const KnowledgeGraph& kg, const QueryAst& ast, EntityId candidate);

// Sorted set of all entities the graph entails as answers. Backtracking
// search seeded from the graph's adjacency indices; exact, not approximate.
std::vector<EntityId> answer_set(const KnowledgeGraph& kg, const QueryAst& ast);

// Same set by brute force: per candidate and per conjunction, enumerate every
// assignment of the existentials and test each literal by edge lookup alone.
// Kept deliberately primitive; it is the reference the optimized evaluator is
// tested against. Throws BudgetError when |E|^(#existentials) of any
// conjunction exceeds `budget`.
std::vector<EntityId> answer_set_naive(const KnowledgeGraph& kg, const QueryAst& ast,
                                       uint64_t budget = kDefaultNaiveBudget);

// Concept-shift labels: a_id holds the answers already derivable from the
// training graph, a_ood the answers that appear on the test graph but not on
// the validation graph.
struct AnswerSplit {
  std::vector<EntityId> a_id;
  std::vector<EntityId> a_ood;
};

AnswerSplit answer_split(const GraphSplit& splits, const QueryAst& ast);

}  // namespace efoent
