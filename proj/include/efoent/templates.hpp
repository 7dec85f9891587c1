#pragma once

#include <optional>
#include <string>
#include <vector>

#include "efoent/ast.hpp"

namespace efoent {

// One benchmark query type. The 23 seen types are used for training; the
// remaining 32 appear only at evaluation time.
struct QueryType {
  int id;                  // 0..54, stable registry order
  std::string name;        // e.g. "2p", "inpu"
  bool multi_edge;         // parallel projection edges between two variables
  bool cyclic;             // cycle in the query graph
  bool existential_leaf;   // an existential with no incoming projection
  bool negation;           // contains a negated atom
  int depth;               // longest projection chain
  std::string formula;     // canonical surface form
  bool seen;               // in the training vocabulary of shapes
  QueryAst ast;            // parsed formula
};

// Full registry of the 55 query types, in id order. Built once.
const std::vector<QueryType>& query_types();

const QueryType& query_type(const std::string& name);
const QueryType* find_query_type(const std::string& name);

// Operator-form (Lisp-like) equivalents for the 25 tree-shaped types.
struct LispForm {
  std::string name;
  std::string efo;
  std::string lisp;
};
const std::vector<LispForm>& lisp_forms();

// Atom-order reversal fixtures: surface form before and after reversal.
struct ReversionCase {
  std::string name;
  std::string before;
  std::string after;
};
const std::vector<ReversionCase>& reversion_cases();

// Longest tokenization over every registered type; positional tables and
// relative-offset banks must cover at least this many positions.
int max_template_tokens();

// Largest existential variable number used by any registered type.
int max_template_existentials();

}  // namespace efoent
