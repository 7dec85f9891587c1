#include "efoent/train.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "efoent/errors.hpp"
#include "efoent/optim.hpp"
#include "efoent/templates.hpp"

namespace efoent {

QueryInstance make_instance(const std::string& efo_text, const std::string& type_name,
                            std::vector<EntityId> a_id, std::vector<EntityId> a_ood) {
  const QueryType* type = find_query_type(type_name);
  if (!type) throw DataError("unknown query type '" + type_name + "'");
  QueryAst ast = parse_efo(efo_text);
  QueryInstance inst;
  inst.type_name = type_name;
  inst.seen = type->seen;
  inst.tokens = tokenize(ast);
  inst.graph = build_query_graph(ast);
  inst.a_id = std::move(a_id);
  inst.a_ood = std::move(a_ood);
  std::sort(inst.a_id.begin(), inst.a_id.end());
  std::sort(inst.a_ood.begin(), inst.a_ood.end());
  return inst;
}

std::vector<QueryInstance> load_instances(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");
  std::vector<QueryInstance> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      out.push_back(make_instance(j.at("query").get<std::string>(),
                                  j.at("type_name").get<std::string>(),
                                  j.at("a_id").get<std::vector<EntityId>>(),
                                  j.at("a_ood").get<std::vector<EntityId>>()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad dataset line: " + e.what());
    }
  }
  return out;
}

double rank_answer(const std::vector<double>& scores, EntityId answer,
                   const std::vector<EntityId>& exclude) {
  if (answer < 0 || size_t(answer) >= scores.size()) {
    throw DataError("ranked answer " + std::to_string(answer) + " outside the " +
                    std::to_string(scores.size()) + "-entity score vector");
  }
  std::vector<EntityId> ex(exclude);
  std::sort(ex.begin(), ex.end());
  if (std::binary_search(ex.begin(), ex.end(), answer)) {
    throw UsageError("entity " + std::to_string(answer) +
                     " cannot be ranked while it is excluded");
  }
  const double s = scores[size_t(answer)];
  int64_t better = 0, equal = 0;
  for (size_t e = 0; e < scores.size(); ++e) {
    if (EntityId(e) == answer || std::binary_search(ex.begin(), ex.end(), EntityId(e))) continue;
    if (scores[e] > s) ++better;
    else if (scores[e] == s) ++equal;
  }
  return 1.0 + double(better) + 0.5 * double(equal);
}

namespace {

template <class S>
std::vector<double> score_query(const Model<S>& model, const QueryInstance& q) {
  Tape<S> tape;
  auto hidden = model.encode(tape, q.tokens, &q.graph, nullptr);
  auto pooled = model.pool_free(tape, hidden, Model<S>::free_positions(q.tokens));
  auto logits = model.score(tape, pooled);
  std::vector<double> out(size_t(logits.numel()));
  for (int64_t i = 0; i < logits.numel(); ++i) out[size_t(i)] = double(logits[i]);
  return out;
}

// Mean reciprocal filtered rank over one answer component of one query.
double component_mrr(const std::vector<double>& scores, const std::vector<EntityId>& answers,
                     const std::vector<EntityId>& filter_base) {
  double total = 0.0;
  for (EntityId v : answers) {
    std::vector<EntityId> exclude;
    exclude.reserve(filter_base.size());
    for (EntityId e : filter_base)
      if (e != v) exclude.push_back(e);
    total += 1.0 / rank_answer(scores, v, exclude);
  }
  return total / double(answers.size());
}

struct TypeAccum {
  bool seen = true;
  double id_sum = 0.0;
  int id_n = 0;
  double ood_sum = 0.0;
  int ood_n = 0;
};

// Runs fn(i) for every i in [0, n) on up to `threads` workers, each owning a
// strided share of the indices. Every index runs to completion; exceptions
// are collected and the lowest-index one is rethrown, so the reported error
// never depends on scheduling.
void run_indexed(size_t n, int threads, const std::function<void(size_t)>& fn) {
  const size_t workers = std::min<size_t>(size_t(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errs(n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (size_t i = w; i < n; i += workers) {
        try {
          fn(i);
        } catch (...) {
          errs[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

std::optional<double> cell_mean(const std::vector<TypeMrr>& types, int which_seen, bool ood) {
  // which_seen: 1 = seen types, 0 = unseen types, -1 = all
  double sum = 0.0;
  int n = 0;
  for (const TypeMrr& t : types) {
    if (which_seen == 1 && !t.seen) continue;
    if (which_seen == 0 && t.seen) continue;
    const int count = ood ? t.ood_count : t.id_count;
    if (count == 0) continue;
    sum += ood ? t.ood_mrr : t.id_mrr;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

}  // namespace

template <class S>
EvalReport mrr_evaluate(const Model<S>& model, const std::vector<QueryInstance>& queries,
                        int threads) {
  if (threads < 1) throw UsageError("threads must be positive");
  struct QueryMrr {
    std::optional<double> id;
    std::optional<double> ood;
  };
  std::vector<QueryMrr> per_query(queries.size());
  run_indexed(queries.size(), threads, [&](size_t i) {
    const QueryInstance& q = queries[i];
    const std::vector<double> scores = score_query(model, q);
    if (!q.a_id.empty()) per_query[i].id = component_mrr(scores, q.a_id, q.a_id);
    if (!q.a_ood.empty()) {
      std::vector<EntityId> known(q.a_id);
      known.insert(known.end(), q.a_ood.begin(), q.a_ood.end());
      std::sort(known.begin(), known.end());
      known.erase(std::unique(known.begin(), known.end()), known.end());
      per_query[i].ood = component_mrr(scores, q.a_ood, known);
    }
  });
  std::map<std::string, TypeAccum> accum;
  for (size_t i = 0; i < queries.size(); ++i) {
    TypeAccum& acc = accum[queries[i].type_name];
    acc.seen = queries[i].seen;
    if (per_query[i].id) {
      acc.id_sum += *per_query[i].id;
      ++acc.id_n;
    }
    if (per_query[i].ood) {
      acc.ood_sum += *per_query[i].ood;
      ++acc.ood_n;
    }
  }
  EvalReport report;
  for (const auto& [name, acc] : accum) {
    TypeMrr t;
    t.type_name = name;
    t.seen = acc.seen;
    t.id_count = acc.id_n;
    t.id_mrr = acc.id_n ? acc.id_sum / acc.id_n : 0.0;
    t.ood_count = acc.ood_n;
    t.ood_mrr = acc.ood_n ? acc.ood_sum / acc.ood_n : 0.0;
    report.per_type.push_back(std::move(t));
  }
  report.id_id = cell_mean(report.per_type, 1, false);
  report.id_ood = cell_mean(report.per_type, 1, true);
  report.ood_id = cell_mean(report.per_type, 0, false);
  report.ood_ood = cell_mean(report.per_type, 0, true);
  report.all_id = cell_mean(report.per_type, -1, false);
  report.all_ood = cell_mean(report.per_type, -1, true);
  report.meta["ranking"] = "filtered, ties averaged";
  return report;
}

template <class S>
TrainResult<S> train_model(Model<S>& model, const std::vector<QueryInstance>& data,
                           const TrainConfig& cfg, std::ostream& loss_log,
                           const std::vector<QueryInstance>* valid, std::ostream* valid_log) {
  if (cfg.max_steps <= 0) throw UsageError("max_steps must be positive");
  if (cfg.batch_size <= 0) throw UsageError("batch_size must be positive");
  if (!(cfg.base_lr > 0)) throw UsageError("base_lr must be positive");
  if (!(cfg.label_smoothing >= 0.0 && cfg.label_smoothing < 1.0)) {
    throw UsageError("label smoothing must lie in [0,1)");
  }
  if (cfg.threads < 1) throw UsageError("threads must be positive");
  if (data.empty()) throw DataError("the training dataset is empty");
  for (const QueryInstance& q : data) {
    if (q.a_id.empty()) {
      throw DataError("a training query of type " + q.type_name + " has no answers");
    }
    if (!q.seen) {
      throw DataError("query type " + q.type_name + " is evaluation-only and cannot be trained on");
    }
  }

  Adam<S> opt(cfg.base_lr, cfg.warmup);
  Rng root(cfg.seed);
  auto& params = model.params();
  std::vector<std::vector<S>> grads(params.size());
  for (size_t p = 0; p < params.size(); ++p) grads[p].assign(size_t(params[p].numel()), S(0));

  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  uint64_t epoch = 0;
  size_t pos = data.size();  // forces a shuffle before the first batch

  TrainResult<S> result;
  const S eps = S(cfg.label_smoothing);
  for (int64_t step = 1; step <= cfg.max_steps; ++step) {
    if (pos >= order.size()) {
      Rng shuffle_rng = root.split(0xB100000000000000ull + epoch);
      shuffle_rng.shuffle(order);
      ++epoch;
      pos = 0;
    }
    const size_t batch_end = std::min(pos + size_t(cfg.batch_size), order.size());
    const size_t batch_n = batch_end - pos;
    for (auto& g : grads) std::fill(g.begin(), g.end(), S(0));
    double loss_sum = 0.0;

    auto compute_slot = [&](size_t slot, Tape<S>& tape) -> double {
      const QueryInstance& q = data[order[pos + slot]];
      Rng drop = root.split(0xD000000000000000ull ^ (uint64_t(step) << 20) ^ uint64_t(slot));
      auto hidden = model.encode(tape, q.tokens, &q.graph, &drop);
      auto pooled = model.pool_free(tape, hidden, Model<S>::free_positions(q.tokens));
      auto logits = model.score(tape, pooled);
      std::vector<int> targets(q.a_id.begin(), q.a_id.end());
      auto loss = tape.label_smoothed_cross_entropy(logits, {targets}, eps);
      const double lval = double(loss[0]);
      if (!std::isfinite(lval)) {
        throw DivergenceError(step, "loss became non-finite at step " + std::to_string(step));
      }
      tape.backward(loss);
      return lval;
    };
    // Deterministic slot-order merge keeps runs reproducible regardless of
    // how per-sample tapes were scheduled.
    auto merge_slot = [&](Tape<S>& tape, double lval) {
      loss_sum += lval;
      for (size_t p = 0; p < params.size(); ++p) {
        const auto& g = tape.grad(params[p]);
        for (size_t i = 0; i < g.size(); ++i) grads[p][i] += g[i];
      }
    };

    const int workers = std::min<int>(std::max(cfg.threads, 1), int(batch_n));
    if (workers <= 1) {
      for (size_t slot = 0; slot < batch_n; ++slot) {
        Tape<S> tape;
        const double lval = compute_slot(slot, tape);
        merge_slot(tape, lval);
      }
    } else {
      // Tapes run concurrently over the shared read-only parameters; each
      // worker waits for its slot's turn before merging, so the accumulation
      // order (and therefore every bit of the result) matches the one-worker
      // path. A worker that hit an exception keeps advancing the turnstile
      // for its remaining slots or the others would wait forever.
      std::mutex mu;
      std::condition_variable cv;
      size_t next_merge = 0;
      std::vector<std::exception_ptr> slot_err(batch_n);
      std::vector<std::thread> pool;
      pool.reserve(size_t(workers));
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
          bool draining = false;
          for (size_t slot = size_t(w); slot < batch_n; slot += size_t(workers)) {
            Tape<S> tape;
            double lval = 0.0;
            bool ok = false;
            if (!draining) {
              try {
                lval = compute_slot(slot, tape);
                ok = true;
              } catch (...) {
                slot_err[slot] = std::current_exception();
                draining = true;
              }
            }
            {
              std::unique_lock<std::mutex> lk(mu);
              cv.wait(lk, [&] { return next_merge == slot; });
              if (ok) merge_slot(tape, lval);
              ++next_merge;
            }
            cv.notify_all();
          }
        });
      }
      for (auto& th : pool) th.join();
      for (auto& e : slot_err)
        if (e) std::rethrow_exception(e);
    }
    pos = batch_end;

    const S inv = S(1.0 / double(batch_n));
    for (auto& g : grads)
      for (auto& v : g) v *= inv;
    model.mask_frozen(grads[0]);
    opt.step(params, grads);

    const double mean_loss = loss_sum / double(batch_n);
    char line[96];
    std::snprintf(line, sizeof(line), "%lld %.9g %.9g\n", static_cast<long long>(step), mean_loss,
                  opt.last_lr());
    loss_log << line;
    if (step == 1) result.first_loss = mean_loss;
    result.last_loss = mean_loss;
    result.steps = step;

    if (valid && valid_log && cfg.validate_every > 0 && step % cfg.validate_every == 0) {
      EvalReport r = mrr_evaluate(model, *valid, cfg.threads);
      char vline[128];
      std::snprintf(vline, sizeof(vline), "valid step=%lld all_id=%s all_ood=%s\n",
                    static_cast<long long>(step),
                    r.all_id ? std::to_string(*r.all_id).c_str() : "-",
                    r.all_ood ? std::to_string(*r.all_ood).c_str() : "-");
      (*valid_log) << vline;
    }
  }
  return result;
}

template TrainResult<float> train_model<float>(Model<float>&, const std::vector<QueryInstance>&,
                                               const TrainConfig&, std::ostream&,
                                               const std::vector<QueryInstance>*, std::ostream*);
template TrainResult<double> train_model<double>(Model<double>&,
                                                 const std::vector<QueryInstance>&,
                                                 const TrainConfig&, std::ostream&,
                                                 const std::vector<QueryInstance>*, std::ostream*);
template EvalReport mrr_evaluate<float>(const Model<float>&, const std::vector<QueryInstance>&,
                                        int);
template EvalReport mrr_evaluate<double>(const Model<double>&, const std::vector<QueryInstance>&,
                                         int);

}  // namespace efoent
