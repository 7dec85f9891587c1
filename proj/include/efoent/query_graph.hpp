#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "efoent/ast.hpp"

namespace efoent {

enum class NodeKind : uint8_t { Constant, Existential, Free, Union, Relation, Negation };

std::string_view node_kind_name(NodeKind kind);

struct QueryGraphNode {
  NodeKind kind;
  std::string label;
};

// Graph view of a query with relations as nodes: a positive atom r(h,t)
// contributes h -> r -> t, a negated atom routes through an extra negation
// node as h -> r -> n -> t. Disjunction funnels the branches' shared variable
// through a union node that keeps a single outgoing edge to that variable, so
// every conjunctive subgraph still has exactly one sink for the answer.
class QueryGraph {
 public:
  QueryGraph() = default;  // empty graph, filled by assignment
  QueryGraph(std::vector<QueryGraphNode> nodes,
             std::vector<std::pair<int32_t, int32_t>> edges,
             std::map<std::string, int32_t> entity_nodes,
             std::vector<int32_t> atom_nodes);

  const std::vector<QueryGraphNode>& nodes() const { return nodes_; }
  const std::vector<std::pair<int32_t, int32_t>>& edges() const { return edges_; }

  // True when a == b or the nodes are directly connected in either direction.
  bool one_hop(int32_t a, int32_t b) const { return hop_[a][b]; }

  // Node carrying the entity term with this surface text, or -1.
  int32_t entity_node(const std::string& term_text) const;
  // Relation node of the atom at this surface position.
  int32_t relation_node(int32_t atom_index) const;

  // One "id kind label" line per node followed by one "src dst" line per edge.
  std::string dump() const;

 private:
  std::vector<QueryGraphNode> nodes_;
  std::vector<std::pair<int32_t, int32_t>> edges_;
  std::map<std::string, int32_t> entity_nodes_;
  std::vector<int32_t> atom_nodes_;
  std::vector<std::vector<bool>> hop_;
};

QueryGraph build_query_graph(const QueryAst& ast);

// mask[i][j] answers "may token i attend token j". Parenthesis and operator
// tokens keep full rows and columns; entity and relation tokens see exactly
// their node's one-hop neighborhood. The result is symmetric with a true
// diagonal.
std::vector<std::vector<bool>> adjacency_mask(const std::vector<Token>& tokens,
                                              const QueryGraph& graph);

}  // namespace efoent
