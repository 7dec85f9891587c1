#pragma once

// Shared helpers for the test suites: synthetic graphs, random groundings,
// and a central-difference gradient checker.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "efoent/ast.hpp"
#include "efoent/kg.hpp"
#include "efoent/rng.hpp"
#include "efoent/tensor.hpp"

namespace testsup {

// Uniform random multigraph with exactly `edges` distinct triples.
inline efoent::KnowledgeGraph random_graph(int n_entities, int n_relations, int edges,
                                           uint64_t seed) {
  auto ents = std::make_shared<efoent::Vocab>();
  auto rels = std::make_shared<efoent::Vocab>();
  for (int i = 0; i < n_entities; ++i) ents->intern("n" + std::to_string(i));
  for (int i = 0; i < n_relations; ++i) rels->intern("p" + std::to_string(i));
  efoent::Rng rng(seed);
  std::set<efoent::Triple> set;
  while (int(set.size()) < edges) {
    set.insert({efoent::EntityId(rng.below(uint64_t(n_entities))),
                efoent::RelationId(rng.below(uint64_t(n_relations))),
                efoent::EntityId(rng.below(uint64_t(n_entities)))});
  }
  return efoent::KnowledgeGraph(ents, rels, {set.begin(), set.end()});
}

inline efoent::Grounding random_grounding(const efoent::QueryAst& ast,
                                          const efoent::KnowledgeGraph& kg, efoent::Rng& rng) {
  efoent::Grounding g;
  for (int32_t k : efoent::relation_placeholders(ast))
    g.relations[k] = efoent::RelationId(rng.below(uint64_t(kg.num_relations())));
  for (int32_t k : efoent::constant_placeholders(ast))
    g.constants[k] = efoent::EntityId(rng.below(uint64_t(kg.num_entities())));
  return g;
}

using LossFn = std::function<efoent::Tensor<double>(efoent::Tape<double>&)>;

// Central-difference check of d(loss)/d(param) for every element of every
// listed parameter. Returns the worst relative error.
inline double grad_check(std::vector<efoent::Tensor<double>*> params, const LossFn& fn,
                         double h = 1e-5) {
  for (auto* p : params) p->requires_grad = true;
  efoent::Tape<double> tape;
  efoent::Tensor<double> loss = fn(tape);
  tape.backward(loss);
  double worst = 0.0;
  for (auto* p : params) {
    const auto ana = tape.grad(*p);
    for (int64_t i = 0; i < p->numel(); ++i) {
      const double save = (*p)[i];
      (*p)[i] = save + h;
      efoent::Tape<double> t1;
      const double lp = fn(t1)[0];
      (*p)[i] = save - h;
      efoent::Tape<double> t2;
      const double lm = fn(t2)[0];
      (*p)[i] = save;
      const double num = (lp - lm) / (2 * h);
      const double a = ana[size_t(i)];
      const double rel = std::fabs(num - a) / std::max({1e-6, std::fabs(num), std::fabs(a)});
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Fresh directory under the system temp root, wiped on construction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) {
    path = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  std::string root() const { return path.string(); }
  std::string file(const std::string& leaf) const { return (path / leaf).string(); }
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace testsup
