#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "efoent/ast.hpp"
#include "efoent/model.hpp"
#include "efoent/query_graph.hpp"

namespace efoent {

struct TrainConfig {
  double base_lr = 1e-4;
  int64_t warmup = 1000;
  double label_smoothing = 0.1;
  int batch_size = 64;
  int64_t max_steps = 0;
  uint64_t seed = 0;
  int64_t validate_every = 0;  // 0 disables periodic validation
  int threads = 1;             // worker cap for per-sample tapes
};

// One dataset line, preprocessed for the model: token sequence, query graph
// for the attention mask, and the two answer sets.
struct QueryInstance {
  std::string type_name;
  bool seen = true;
  std::vector<Token> tokens;
  QueryGraph graph;
  std::vector<EntityId> a_id;
  std::vector<EntityId> a_ood;
};

QueryInstance make_instance(const std::string& efo_text, const std::string& type_name,
                            std::vector<EntityId> a_id, std::vector<EntityId> a_ood);

// Reads a dataset JSONL file produced by build_dataset.
std::vector<QueryInstance> load_instances(const std::string& path);

// Mean reciprocal ranks of one evaluation slice, plus the six aggregate
// cells. Cells without any contributing query type stay empty.
struct TypeMrr {
  std::string type_name;
  bool seen = true;
  int id_count = 0;    // queries contributing an a_id component
  double id_mrr = 0.0;
  int ood_count = 0;
  double ood_mrr = 0.0;
};

struct EvalReport {
  std::string model_name;
  std::vector<TypeMrr> per_type;  // sorted by type name
  std::optional<double> id_id, id_ood, ood_id, ood_ood, all_id, all_ood;
  std::map<std::string, std::string> meta;

  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
};

// Filtered rank with tie averaging: 1 + #better + half the count of
// equal-scored others, ignoring excluded entities throughout.
double rank_answer(const std::vector<double>& scores, EntityId answer,
                   const std::vector<EntityId>& exclude);

template <class S>
struct TrainResult {
  int64_t steps = 0;
  double first_loss = 0.0;
  double last_loss = 0.0;
};

// Runs the optimization loop, writing one "step loss lr" line per step to
// loss_log. Throws DivergenceError when the loss stops being finite. When
// valid queries are supplied and validate_every > 0, logs the two all-type
// MRR cells to valid_log every validate_every steps.
template <class S>
TrainResult<S> train_model(Model<S>& model, const std::vector<QueryInstance>& data,
                           const TrainConfig& cfg, std::ostream& loss_log,
                           const std::vector<QueryInstance>* valid = nullptr,
                           std::ostream* valid_log = nullptr);

// Scores every query and aggregates the four-way generalization grid.
// Queries score independently on up to `threads` workers; aggregation order
// is fixed, so the report does not depend on the worker count.
template <class S>
EvalReport mrr_evaluate(const Model<S>& model, const std::vector<QueryInstance>& queries,
                        int threads = 1);

// Text table, one row per report, six fixed MRR% columns.
std::string report_table(const std::vector<EvalReport>& reports);

// Per-type breakdown table of a single report.
std::string report_per_type(const EvalReport& report);

// Grouped bar chart of the six cells per report.
std::string report_svg(const std::vector<EvalReport>& reports);

}  // namespace efoent
