#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "efoent/kg.hpp"

namespace efoent {

// Terms appearing in an atom. Constants are either template placeholders
// (s1, s2, ...) or grounded entity ids (s:204). Existentials are e1, e2, ...
// and the single free variable is always written f.
struct Term {
  enum class Kind : uint8_t { PlaceholderConstant, GroundedConstant, Existential, Free };
  Kind kind = Kind::Free;
  int32_t index = 0;  // placeholder number, entity id, or existential number

  static Term placeholder(int32_t k) { return {Kind::PlaceholderConstant, k}; }
  static Term constant(EntityId e) { return {Kind::GroundedConstant, e}; }
  static Term existential(int32_t k) { return {Kind::Existential, k}; }
  static Term free() { return {Kind::Free, 0}; }

  bool is_constant() const {
    return kind == Kind::PlaceholderConstant || kind == Kind::GroundedConstant;
  }
  bool is_variable() const { return !is_constant(); }
  std::string text() const;

  friend bool operator==(const Term&, const Term&) = default;
};

// Relation symbol: placeholder r1, r2, ... or grounded id r:17.
struct RelRef {
  bool grounded = false;
  int32_t index = 0;

  static RelRef placeholder(int32_t k) { return {false, k}; }
  static RelRef id(RelationId r) { return {true, r}; }
  std::string text() const;

  friend bool operator==(const RelRef&, const RelRef&) = default;
};

struct Atom {
  RelRef relation;
  Term head;
  Term tail;
  bool negated = false;

  friend bool operator==(const Atom&, const Atom&) = default;
};

// Disjunction embedded inside a conjunction, e.g. the ((r1(s1,e1))|(r2(s2,e1)))
// prefix of `up`-style queries. Each branch is a conjunction of literals that
// shares exactly one variable with the enclosing formula.
struct UnionGroup {
  std::vector<std::vector<Atom>> branches;

  friend bool operator==(const UnionGroup&, const UnionGroup&) = default;
};

using Clause = std::variant<Atom, UnionGroup>;

struct Conjunction {
  std::vector<Clause> clauses;

  friend bool operator==(const Conjunction&, const Conjunction&) = default;
};

// A query in disjunctive surface form: one or more conjunctions, each a list
// of atoms, negated atoms, and union groups. Variable names are kept
// canonical (e1, e2, ... in first-use order; the free variable is f), so
// operator== is meaningful structural equality.
struct QueryAst {
  std::vector<Conjunction> disjuncts;

  friend bool operator==(const QueryAst&, const QueryAst&) = default;
};

// ---------------------------------------------------------------------------
// Parsing and serialization

QueryAst parse_efo(std::string_view text);
std::string serialize_efo(const QueryAst& ast);

// Restores the canonical-naming invariant of a hand-assembled tree and
// validates its shape (used by builders that do not go through parse_efo).
QueryAst canonicalized(QueryAst ast);

// ---------------------------------------------------------------------------
// Tokenization

enum class TokenKind : uint8_t {
  Parenthesis,
  Entity,       // constants, existential variables, and the free variable
  Relation,
  Conjunction,  // &
  Disjunction,  // |
  Negation,     // !
};
constexpr int kNumTokenKinds = 6;

struct Token {
  TokenKind kind;
  std::string text;        // surface symbol, e.g. "(", "r:17", "e1", "f"
  int32_t symbol = -1;     // grounded entity/relation id, existential number, or -1
  bool is_free = false;    // true exactly for free-variable tokens
  int32_t atom = -1;       // owning atom index for relation tokens
};

// Emits the surface symbols of serialize_efo(ast) in order, dropping the
// commas between atom arguments. Relation tokens carry the index of their
// atom in surface order.
std::vector<Token> tokenize(const QueryAst& ast);

// ---------------------------------------------------------------------------
// Structure manipulation

// Reorders the clauses of each conjunction by the given permutations
// (perms[i][j] = source position of clause j in conjunction i) and restores
// canonical variable naming. Answer semantics are unchanged.
QueryAst permute_atoms(const QueryAst& ast, const std::vector<std::vector<int>>& perms);

// permute_atoms with every conjunction reversed.
QueryAst reverse_permutation(const QueryAst& ast);

// ---------------------------------------------------------------------------
// Grounding

struct Grounding {
  std::map<int32_t, RelationId> relations;  // r<k>  -> relation id
  std::map<int32_t, EntityId> constants;    // s<k>  -> entity id
};

// Distinct placeholder numbers in first-appearance order.
std::vector<int32_t> relation_placeholders(const QueryAst& ast);
std::vector<int32_t> constant_placeholders(const QueryAst& ast);

bool is_grounded(const QueryAst& ast);

// Substitutes placeholders; every placeholder present in the query must be
// covered by the grounding.
QueryAst ground(const QueryAst& ast, const Grounding& g);

// ---------------------------------------------------------------------------
// Normal form used by evaluators

// One conjunction of plain literals (union groups expanded away).
struct LiteralConjunction {
  std::vector<Atom> atoms;
};

// Expands in-conjunction union groups by distribution, yielding the query's
// disjunctive normal form. Existential scope is per conjunction.
std::vector<LiteralConjunction> dnf_expand(const QueryAst& ast);

// Distinct existential variable numbers of one literal conjunction.
std::vector<int32_t> existentials_of(const LiteralConjunction& c);

// ---------------------------------------------------------------------------
// Lisp-style operator form (p / i / u / n over relation and constant leaves)

QueryAst parse_lisp(std::string_view text);

// Converts a tree-shaped query to operator form. Throws DataError with a
// "not expressible" message for queries outside the compatible fragment
// (cycles, variables consumed more than once, existential leaves, negation
// of a non-constant head).
std::string convert_to_lisp(const QueryAst& ast);

}  // namespace efoent
