#include "efoent/query_graph.hpp"

#include <set>

#include "efoent/errors.hpp"

namespace efoent {

namespace {

// The variable a union group stands for: the single variable occurring both
// inside the group and elsewhere in the enclosing conjunction.
Term export_variable(const Conjunction& conj, const UnionGroup& group) {
  std::set<std::string> inside;
  for (const auto& branch : group.branches)
    for (const Atom& a : branch) {
      if (a.head.is_variable()) inside.insert(a.head.text());
      if (a.tail.is_variable()) inside.insert(a.tail.text());
    }
  std::map<std::string, Term> outside;
  for (const Clause& c : conj.clauses) {
    if (const auto* a = std::get_if<Atom>(&c)) {
      if (a->head.is_variable()) outside.emplace(a->head.text(), a->head);
      if (a->tail.is_variable()) outside.emplace(a->tail.text(), a->tail);
    } else if (&std::get<UnionGroup>(c) != &group) {
      for (const auto& branch : std::get<UnionGroup>(c).branches)
        for (const Atom& a2 : branch) {
          if (a2.head.is_variable()) outside.emplace(a2.head.text(), a2.head);
          if (a2.tail.is_variable()) outside.emplace(a2.tail.text(), a2.tail);
        }
    }
  }
  std::vector<Term> shared;
  for (const auto& [text, term] : outside)
    if (inside.count(text)) shared.push_back(term);
  if (shared.size() != 1)
    throw DataError(
        "union branches must share exactly one variable with the enclosing "
        "conjunction");
  return shared[0];
}

class GraphBuilder {
 public:
  explicit GraphBuilder(const QueryAst& ast) : ast_(ast) {}

  QueryGraph build() {
    collect_entities();
    allocate_nodes();
    connect();
    return QueryGraph(std::move(nodes_), std::move(edges_), std::move(entity_nodes_),
                      std::move(atom_nodes_));
  }

 private:
  void note_term(const Term& t) {
    std::string text = t.text();
    if (entity_nodes_.count(text)) return;
    entity_nodes_.emplace(text, 0);  // id assigned in allocate_nodes
    if (t.is_constant())
      constants_.push_back(text);
    else if (t.kind == Term::Kind::Existential)
      existentials_.push_back(text);
  }

  void collect_entities() {
    for (const Conjunction& conj : ast_.disjuncts)
      for (const Clause& c : conj.clauses) {
        if (const auto* a = std::get_if<Atom>(&c)) {
          note_term(a->head);
          note_term(a->tail);
          n_atoms_++;
          if (a->negated) n_negations_++;
        } else {
          for (const auto& branch : std::get<UnionGroup>(c).branches)
            for (const Atom& a2 : branch) {
              note_term(a2.head);
              note_term(a2.tail);
              n_atoms_++;
              if (a2.negated) n_negations_++;
            }
          n_groups_++;
        }
      }
  }

  int32_t add_node(NodeKind kind, std::string label) {
    nodes_.push_back({kind, std::move(label)});
    return int32_t(nodes_.size()) - 1;
  }

  void allocate_nodes() {
    for (const std::string& text : constants_)
      entity_nodes_[text] = add_node(NodeKind::Constant, text);
    for (const std::string& text : existentials_)
      entity_nodes_[text] = add_node(NodeKind::Existential, text);
    free_node_ = add_node(NodeKind::Free, "f");
    entity_nodes_["f"] = free_node_;
    if (ast_.disjuncts.size() > 1) top_union_ = add_node(NodeKind::Union, "u");
    for (int i = 0; i < n_groups_; ++i) group_unions_.push_back(add_node(NodeKind::Union, "u"));
    for (const Conjunction& conj : ast_.disjuncts)
      for (const Clause& c : conj.clauses) {
        if (const auto* a = std::get_if<Atom>(&c)) {
          atom_nodes_.push_back(add_node(NodeKind::Relation, a->relation.text()));
        } else {
          for (const auto& branch : std::get<UnionGroup>(c).branches)
            for (const Atom& a2 : branch)
              atom_nodes_.push_back(add_node(NodeKind::Relation, a2.relation.text()));
        }
      }
    for (int i = 0; i < n_negations_; ++i) negation_nodes_.push_back(add_node(NodeKind::Negation, "n"));
  }

  // Resolves a term to its node, diverting through a union substitution when
  // the term is the branch's exported variable or, under a top-level
  // disjunction, the free variable.
  int32_t resolve(const Term& t, const Term* subst_term, int32_t subst_node) const {
    if (subst_term && t == *subst_term) return subst_node;
    if (t.kind == Term::Kind::Free && top_union_ >= 0) return top_union_;
    return entity_nodes_.at(t.text());
  }

  void emit_atom(const Atom& a, const Term* subst_term, int32_t subst_node) {
    int32_t h = resolve(a.head, subst_term, subst_node);
    int32_t t = resolve(a.tail, subst_term, subst_node);
    int32_t r = atom_nodes_[next_atom_++];
    edges_.emplace_back(h, r);
    if (a.negated) {
      int32_t n = negation_nodes_[next_negation_++];
      edges_.emplace_back(r, n);
      edges_.emplace_back(n, t);
    } else {
      edges_.emplace_back(r, t);
    }
  }

  void connect() {
    int group = 0;
    for (const Conjunction& conj : ast_.disjuncts)
      for (const Clause& c : conj.clauses) {
        if (const auto* a = std::get_if<Atom>(&c)) {
          emit_atom(*a, nullptr, -1);
        } else {
          const auto& g = std::get<UnionGroup>(c);
          Term exported = export_variable(conj, g);
          int32_t u = group_unions_[group++];
          for (const auto& branch : g.branches)
            for (const Atom& a2 : branch) emit_atom(a2, &exported, u);
          edges_.emplace_back(u, resolve(exported, nullptr, -1));
        }
      }
    if (top_union_ >= 0) edges_.emplace_back(top_union_, free_node_);
  }

  const QueryAst& ast_;
  std::vector<std::string> constants_;
  std::vector<std::string> existentials_;
  int n_atoms_ = 0;
  int n_negations_ = 0;
  int n_groups_ = 0;

  std::vector<QueryGraphNode> nodes_;
  std::vector<std::pair<int32_t, int32_t>> edges_;
  std::map<std::string, int32_t> entity_nodes_;
  std::vector<int32_t> atom_nodes_;
  std::vector<int32_t> group_unions_;
  std::vector<int32_t> negation_nodes_;
  int32_t free_node_ = -1;
  int32_t top_union_ = -1;
  int next_atom_ = 0;
  int next_negation_ = 0;
};

}  // namespace

std::string_view node_kind_name(NodeKind kind) {
  switch (kind) {
    case NodeKind::Constant: return "constant";
    case NodeKind::Existential: return "existential";
    case NodeKind::Free: return "free";
    case NodeKind::Union: return "union";
    case NodeKind::Relation: return "relation";
    case NodeKind::Negation: return "negation";
  }
  return "?";
}

QueryGraph::QueryGraph(std::vector<QueryGraphNode> nodes,
                       std::vector<std::pair<int32_t, int32_t>> edges,
                       std::map<std::string, int32_t> entity_nodes,
                       std::vector<int32_t> atom_nodes)
    : nodes_(std::move(nodes)),
      edges_(std::move(edges)),
      entity_nodes_(std::move(entity_nodes)),
      atom_nodes_(std::move(atom_nodes)) {
  size_t n = nodes_.size();
  hop_.assign(n, std::vector<bool>(n, false));
  for (size_t i = 0; i < n; ++i) hop_[i][i] = true;
  for (const auto& [a, b] : edges_) {
    hop_[a][b] = true;
    hop_[b][a] = true;
  }
}

int32_t QueryGraph::entity_node(const std::string& term_text) const {
  auto it = entity_nodes_.find(term_text);
  return it == entity_nodes_.end() ? -1 : it->second;
}

int32_t QueryGraph::relation_node(int32_t atom_index) const {
  if (atom_index < 0 || atom_index >= int32_t(atom_nodes_.size())) return -1;
  return atom_nodes_[atom_index];
}

std::string QueryGraph::dump() const {
  std::string out;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    out += std::to_string(i);
    out += ' ';
    out += node_kind_name(nodes_[i].kind);
    out += ' ';
    out += nodes_[i].label;
    out += '\n';
  }
  for (const auto& [a, b] : edges_) {
    out += std::to_string(a);
    out += ' ';
    out += std::to_string(b);
    out += '\n';
  }
  return out;
}

QueryGraph build_query_graph(const QueryAst& ast) { return GraphBuilder(ast).build(); }

std::vector<std::vector<bool>> adjacency_mask(const std::vector<Token>& tokens,
                                              const QueryGraph& graph) {
  size_t n = tokens.size();
  std::vector<int32_t> node(n, -1);
  for (size_t i = 0; i < n; ++i) {
    if (tokens[i].kind == TokenKind::Entity)
      node[i] = graph.entity_node(tokens[i].text);
    else if (tokens[i].kind == TokenKind::Relation)
      node[i] = graph.relation_node(tokens[i].atom);
    else
      continue;
    if (node[i] < 0)
      throw DataError("token does not map to a query-graph node: " + tokens[i].text);
  }
  std::vector<std::vector<bool>> mask(n, std::vector<bool>(n, true));
  for (size_t i = 0; i < n; ++i)
    for (size_t j = 0; j < n; ++j)
      if (node[i] >= 0 && node[j] >= 0) mask[i][j] = graph.one_hop(node[i], node[j]);
  return mask;
}

}  // namespace efoent
