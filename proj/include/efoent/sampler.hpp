#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "efoent/kg.hpp"
#include "efoent/oracle.hpp"
#include "efoent/rng.hpp"
#include "efoent/templates.hpp"

namespace efoent {

enum class Purpose { Train, Valid, Test };

std::string_view purpose_name(Purpose p);

struct QuerySample {
  std::string type_name;
  std::string efo_text;  // grounded query
  AnswerSplit split;
  std::string graph;  // graph the reverse walk ran on ("train" or "test")
  uint64_t seed = 0;  // rng stream that produced the sample
};

// Grounds one template by walking it backward from a uniformly chosen answer
// entity. Training samples are walked on the training graph and must come out
// with a_id nonempty; evaluation samples are walked on the test graph (the
// only graph that can supply out-of-distribution answers) and must come out
// with a_ood nonempty. Rejected candidates are resampled up to max_attempts
// times before a BudgetError naming the type and graph.
QuerySample sample_query(const GraphSplit& splits, const QueryType& qtype, Purpose purpose,
                         Rng& rng, int max_attempts = 500);

// One sample per distinct (head, relation) pair of the training graph, in
// ascending order, with a_id equal to the pair's forward neighbors.
std::vector<QuerySample> enumerate_1p(const KnowledgeGraph& train_graph);

struct DatasetProfile {
  std::string name = "desk";
  bool exhaustive_1p = false;  // enumerate every training 1p instead of sampling
  int train_per_type = 200;    // negative: twice the exhaustive 1p count
  int eval_per_type = 50;
  int max_attempts = 500;
  std::vector<std::string> type_filter;  // restrict to these type names when nonempty

  static DatasetProfile desk();
  static DatasetProfile paper(int eval_per_type = 5000);
};

// Writes train.jsonl (seen types only), valid.jsonl and test.jsonl (all
// types), and manifest.json into out_dir. Sample order within each file is a
// seeded shuffle; the whole build is a pure function of (splits, profile,
// seed). Returns the manifest path.
std::string build_dataset(const GraphSplit& splits, const DatasetProfile& profile,
                          uint64_t seed, const std::string& out_dir,
                          const std::string& graph_source = "");

}  // namespace efoent
