#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace efoent {

using EntityId = int32_t;
using RelationId = int32_t;

struct Triple {
  EntityId head;
  RelationId relation;
  EntityId tail;
  friend bool operator==(const Triple&, const Triple&) = default;
  friend auto operator<=>(const Triple&, const Triple&) = default;
};

// Bidirectional symbol table. Ids are assigned by first appearance so a file
// always maps to the same vocabulary.
class Vocab {
 public:
  int32_t intern(const std::string& name);
  std::optional<int32_t> find(const std::string& name) const;
  const std::string& name(int32_t id) const;
  int32_t size() const { return int32_t(names_.size()); }

 private:
  std::vector<std::string> names_;
  std::unordered_map<std::string, int32_t> ids_;
};

enum class Direction { Forward, Backward };

struct Edge {
  RelationId relation;
  EntityId other;
};

// Immutable indexed triple store. All query-time accessors are O(1) or
// O(log n); indices are built once at construction.
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;
  KnowledgeGraph(std::shared_ptr<const Vocab> entities,
                 std::shared_ptr<const Vocab> relations,
                 std::vector<Triple> triples);

  const Vocab& entities() const { return *entities_; }
  const Vocab& relations() const { return *relations_; }
  std::shared_ptr<const Vocab> entities_ptr() const { return entities_; }
  std::shared_ptr<const Vocab> relations_ptr() const { return relations_; }

  int32_t num_entities() const { return entities_->size(); }
  int32_t num_relations() const { return relations_->size(); }
  const std::vector<Triple>& triples() const { return triples_; }

  bool contains(const Triple& t) const;

  // Sorted, deduplicated neighbor set of `anchor` under `rel`. Forward walks
  // head->tail, backward walks tail->head. Ids out of range are a DataError.
  const std::vector<EntityId>& neighbors(EntityId anchor, RelationId rel,
                                         Direction dir) const;

  // All edges incident to an entity, in insertion order.
  const std::vector<Edge>& out_edges(EntityId e) const;
  const std::vector<Edge>& in_edges(EntityId e) const;

  // Sorted distinct heads/tails participating in a relation.
  const std::vector<EntityId>& heads_of(RelationId r) const;
  const std::vector<EntityId>& tails_of(RelationId r) const;

  // FNV-1a over the normalized triple list; stable across runs, used to tie
  // sampled datasets to the exact graph they came from.
  uint64_t checksum() const { return checksum_; }

 private:
  uint64_t pack(EntityId h, RelationId r, EntityId t) const;
  void check_entity(EntityId e) const;
  void check_relation(RelationId r) const;

  std::shared_ptr<const Vocab> entities_ = std::make_shared<Vocab>();
  std::shared_ptr<const Vocab> relations_ = std::make_shared<Vocab>();
  std::vector<Triple> triples_;
  std::unordered_set<uint64_t> triple_set_;
  std::unordered_map<uint64_t, std::vector<EntityId>> fwd_;
  std::unordered_map<uint64_t, std::vector<EntityId>> bwd_;
  std::vector<std::vector<Edge>> out_edges_;
  std::vector<std::vector<Edge>> in_edges_;
  std::vector<std::vector<EntityId>> heads_of_;
  std::vector<std::vector<EntityId>> tails_of_;
  uint64_t checksum_ = 0;
};

// Nested evaluation graphs: valid contains every train edge, test contains
// every valid edge. All three share one entity and one relation vocabulary.
struct GraphSplit {
  KnowledgeGraph train;
  KnowledgeGraph valid;
  KnowledgeGraph test;
};

// Load one or more tab-separated triple files (head<TAB>relation<TAB>tail,
// '#' starts a comment line). Duplicate triples collapse; ids are assigned by
// first appearance across the files in order.
KnowledgeGraph load_triples(const std::vector<std::string>& paths);
KnowledgeGraph load_triples(const std::string& path);

// Pre-split datasets ship as three disjoint edge files; the loader composes
// the cumulative graphs.
GraphSplit load_split_files(const std::string& train_path,
                            const std::string& valid_path,
                            const std::string& test_path);

// Deterministically shuffle and cut a single graph into nested splits.
// Fractions must each be positive and sum to 1 within 1e-9; the graph must
// have at least 3 triples.
GraphSplit build_splits(const KnowledgeGraph& all, double train_frac,
                        double valid_frac, double test_frac, uint64_t seed);

}  // namespace efoent
