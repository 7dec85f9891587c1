#include "efoent/kg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "efoent/errors.hpp"
#include "efoent/rng.hpp"

namespace efoent {

int32_t Vocab::intern(const std::string& name) {
  auto it = ids_.find(name);
  if (it != ids_.end()) return it->second;
  int32_t id = int32_t(names_.size());
  names_.push_back(name);
  ids_.emplace(name, id);
  return id;
}

std::optional<int32_t> Vocab::find(const std::string& name) const {
  auto it = ids_.find(name);
  if (it == ids_.end()) return std::nullopt;
  return it->second;
}

const std::string& Vocab::name(int32_t id) const {
  if (id < 0 || id >= size()) throw DataError("vocabulary id out of range: " + std::to_string(id));
  return names_[size_t(id)];
}

namespace {

uint64_t fnv1a(uint64_t h, const void* data, size_t n) {
  auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

void sort_unique(std::vector<EntityId>& v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
}

const std::vector<EntityId>& empty_entity_list() {
  static const std::vector<EntityId> empty;
  return empty;
}

}  // namespace

KnowledgeGraph::KnowledgeGraph(std::shared_ptr<const Vocab> entities,
                               std::shared_ptr<const Vocab> relations,
                               std::vector<Triple> triples)
    : entities_(std::move(entities)), relations_(std::move(relations)) {
  std::sort(triples.begin(), triples.end());
  triples.erase(std::unique(triples.begin(), triples.end()), triples.end());
  triples_ = std::move(triples);

  size_t ne = size_t(entities_->size());
  size_t nr = size_t(relations_->size());
  out_edges_.resize(ne);
  in_edges_.resize(ne);
  heads_of_.resize(nr);
  tails_of_.resize(nr);
  triple_set_.reserve(triples_.size() * 2);

  uint64_t h = 0xcbf29ce484222325ull;
  for (const Triple& t : triples_) {
    if (t.head < 0 || t.head >= int32_t(ne) || t.tail < 0 || t.tail >= int32_t(ne) ||
        t.relation < 0 || t.relation >= int32_t(nr)) {
      throw DataError("triple references id outside vocabulary");
    }
    triple_set_.insert(pack(t.head, t.relation, t.tail));
    fwd_[uint64_t(t.head) * nr + uint64_t(t.relation)].push_back(t.tail);
    bwd_[uint64_t(t.tail) * nr + uint64_t(t.relation)].push_back(t.head);
    out_edges_[size_t(t.head)].push_back({t.relation, t.tail});
    in_edges_[size_t(t.tail)].push_back({t.relation, t.head});
    heads_of_[size_t(t.relation)].push_back(t.head);
    tails_of_[size_t(t.relation)].push_back(t.tail);
    h = fnv1a(h, &t.head, sizeof t.head);
    h = fnv1a(h, &t.relation, sizeof t.relation);
    h = fnv1a(h, &t.tail, sizeof t.tail);
  }
  checksum_ = h;

  for (auto& [k, v] : fwd_) sort_unique(v);
  for (auto& [k, v] : bwd_) sort_unique(v);
  for (auto& v : heads_of_) sort_unique(v);
  for (auto& v : tails_of_) sort_unique(v);
}

uint64_t KnowledgeGraph::pack(EntityId h, RelationId r, EntityId t) const {
  uint64_t nr = uint64_t(relations_->size());
  uint64_t ne = uint64_t(entities_->size());
  return (uint64_t(h) * nr + uint64_t(r)) * ne + uint64_t(t);
}

void KnowledgeGraph::check_entity(EntityId e) const {
  if (e < 0 || e >= num_entities())
    throw DataError("entity id out of range: " + std::to_string(e));
}

void KnowledgeGraph::check_relation(RelationId r) const {
  if (r < 0 || r >= num_relations())
    throw DataError("relation id out of range: " + std::to_string(r));
}

bool KnowledgeGraph::contains(const Triple& t) const {
  check_entity(t.head);
  check_entity(t.tail);
  check_relation(t.relation);
  return triple_set_.count(pack(t.head, t.relation, t.tail)) != 0;
}

const std::vector<EntityId>& KnowledgeGraph::neighbors(EntityId anchor, RelationId rel,
                                                       Direction dir) const {
  check_entity(anchor);
  check_relation(rel);
  const auto& index = dir == Direction::Forward ? fwd_ : bwd_;
  auto it = index.find(uint64_t(anchor) * uint64_t(relations_->size()) + uint64_t(rel));
  if (it == index.end()) return empty_entity_list();
  return it->second;
}

const std::vector<Edge>& KnowledgeGraph::out_edges(EntityId e) const {
  check_entity(e);
  return out_edges_[size_t(e)];
}

const std::vector<Edge>& KnowledgeGraph::in_edges(EntityId e) const {
  check_entity(e);
  return in_edges_[size_t(e)];
}

const std::vector<EntityId>& KnowledgeGraph::heads_of(RelationId r) const {
  check_relation(r);
  return heads_of_[size_t(r)];
}

const std::vector<EntityId>& KnowledgeGraph::tails_of(RelationId r) const {
  check_relation(r);
  return tails_of_[size_t(r)];
}

namespace {

// Parses one file into the shared vocabularies, appending to `out`.
void read_triple_file(const std::string& path, Vocab& entities, Vocab& relations,
                      std::vector<Triple>& out) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open triple file: " + path);
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') continue;
    size_t tab1 = line.find('\t');
    size_t tab2 = tab1 == std::string::npos ? std::string::npos : line.find('\t', tab1 + 1);
    size_t tab3 = tab2 == std::string::npos ? std::string::npos : line.find('\t', tab2 + 1);
    if (tab1 == std::string::npos || tab2 == std::string::npos || tab3 != std::string::npos) {
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected head<TAB>relation<TAB>tail");
    }
    std::string h = line.substr(0, tab1);
    std::string r = line.substr(tab1 + 1, tab2 - tab1 - 1);
    std::string t = line.substr(tab2 + 1);
    if (h.empty() || r.empty() || t.empty()) {
      throw DataError(path + ":" + std::to_string(lineno) + ": empty field");
    }
    out.push_back({entities.intern(h), relations.intern(r), entities.intern(t)});
  }
}

}  // namespace

KnowledgeGraph load_triples(const std::vector<std::string>& paths) {
  auto entities = std::make_shared<Vocab>();
  auto relations = std::make_shared<Vocab>();
  std::vector<Triple> triples;
  for (const auto& p : paths) read_triple_file(p, *entities, *relations, triples);
  if (triples.empty()) throw DataError("no triples found");
  return KnowledgeGraph(std::move(entities), std::move(relations), std::move(triples));
}

KnowledgeGraph load_triples(const std::string& path) {
  return load_triples(std::vector<std::string>{path});
}

GraphSplit load_split_files(const std::string& train_path, const std::string& valid_path,
                            const std::string& test_path) {
  auto entities = std::make_shared<Vocab>();
  auto relations = std::make_shared<Vocab>();
  std::vector<Triple> train, valid_delta, test_delta;
  read_triple_file(train_path, *entities, *relations, train);
  read_triple_file(valid_path, *entities, *relations, valid_delta);
  read_triple_file(test_path, *entities, *relations, test_delta);
  if (train.empty()) throw DataError("no triples found in " + train_path);

  std::vector<Triple> valid = train;
  valid.insert(valid.end(), valid_delta.begin(), valid_delta.end());
  std::vector<Triple> test = valid;
  test.insert(test.end(), test_delta.begin(), test_delta.end());

  GraphSplit split;
  split.train = KnowledgeGraph(entities, relations, std::move(train));
  split.valid = KnowledgeGraph(entities, relations, std::move(valid));
  split.test = KnowledgeGraph(entities, relations, std::move(test));
  return split;
}

GraphSplit build_splits(const KnowledgeGraph& all, double train_frac, double valid_frac,
                        double test_frac, uint64_t seed) {
  if (train_frac <= 0.0 || valid_frac <= 0.0 || test_frac <= 0.0)
    throw DataError("split fractions must all be positive");
  if (std::abs(train_frac + valid_frac + test_frac - 1.0) > 1e-9)
    throw DataError("split fractions must sum to 1");
  size_t n = all.triples().size();
  if (n < 3) throw DataError("need at least 3 triples to split");

  std::vector<Triple> shuffled = all.triples();
  Rng rng(seed);
  rng.shuffle(shuffled);

  auto cut = [&](double frac) {
    auto c = size_t(std::llround(frac * double(n)));
    return std::min(c, n);
  };
  size_t c1 = std::max<size_t>(1, cut(train_frac));
  size_t c2 = std::max(c1 + 1, cut(train_frac + valid_frac));
  c2 = std::min(c2, n - 1);

  GraphSplit split;
  split.train = KnowledgeGraph(all.entities_ptr(), all.relations_ptr(),
                               {shuffled.begin(), shuffled.begin() + ptrdiff_t(c1)});
  split.valid = KnowledgeGraph(all.entities_ptr(), all.relations_ptr(),
                               {shuffled.begin(), shuffled.begin() + ptrdiff_t(c2)});
  split.test = KnowledgeGraph(all.entities_ptr(), all.relations_ptr(), shuffled);
  return split;
}

}  // namespace efoent
