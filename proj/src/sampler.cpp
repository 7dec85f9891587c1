#include "efoent/sampler.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>

#include "json.hpp"

#include "efoent/errors.hpp"

namespace efoent {

namespace {

// Mutable grounding state of one sampling attempt.
struct WalkState {
  std::map<int32_t, EntityId> vars;    // 0 is the free variable, k>0 existential k
  std::map<int32_t, RelationId> rels;  // relation placeholder values
  std::map<int32_t, EntityId> consts;  // constant placeholder values

  std::optional<EntityId> value(const Term& t) const {
    switch (t.kind) {
      case Term::Kind::GroundedConstant:
        return t.index;
      case Term::Kind::PlaceholderConstant: {
        auto it = consts.find(t.index);
        if (it == consts.end()) return std::nullopt;
        return it->second;
      }
      default: {
        auto it = vars.find(t.kind == Term::Kind::Free ? 0 : t.index);
        if (it == vars.end()) return std::nullopt;
        return it->second;
      }
    }
  }

  void bind(const Term& t, EntityId v) {
    if (t.kind == Term::Kind::PlaceholderConstant)
      consts[t.index] = v;
    else if (t.kind != Term::Kind::GroundedConstant)
      vars[t.kind == Term::Kind::Free ? 0 : t.index] = v;
  }

  std::optional<RelationId> rel_value(const RelRef& r) const {
    if (r.grounded) return r.index;
    auto it = rels.find(r.index);
    if (it == rels.end()) return std::nullopt;
    return it->second;
  }
};

template <class T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[v.size() == 1 ? 0 : rng.below(v.size())];
}

// The atoms one attempt must actually satisfy: every plain literal of one
// uniformly chosen disjunct plus one uniformly chosen branch per union group.
std::vector<Atom> active_atoms(const QueryAst& ast, Rng& rng) {
  const Conjunction& conj = pick(ast.disjuncts, rng);
  std::vector<Atom> out;
  for (const Clause& c : conj.clauses) {
    if (const auto* a = std::get_if<Atom>(&c)) {
      out.push_back(*a);
    } else {
      for (const Atom& a2 : pick(std::get<UnionGroup>(c).branches, rng)) out.push_back(a2);
    }
  }
  return out;
}

// Walks the active atoms backward from a uniformly drawn answer entity,
// binding relations, constants, and existentials along existing edges, then
// grounds each negated atom by proposing values whose exclusion holds.
// Returns false when the attempt dead-ends and must be restarted.
bool walk_attempt(const KnowledgeGraph& g, const QueryAst& ast, Rng& rng, WalkState& st) {
  std::vector<Atom> positives, negatives;
  for (const Atom& a : active_atoms(ast, rng)) (a.negated ? negatives : positives).push_back(a);

  st.bind(Term::free(), EntityId(rng.below(uint64_t(g.num_entities()))));

  std::vector<bool> done(positives.size(), false);
  for (size_t processed = 0; processed < positives.size(); ++processed) {
    int sel = -1;
    for (size_t i = 0; i < positives.size(); ++i)
      if (!done[i] && (st.value(positives[i].head) || st.value(positives[i].tail))) {
        sel = int(i);
        break;
      }
    if (sel < 0) {
      // No atom touches anything bound: anchor the next one anywhere.
      for (size_t i = 0; i < positives.size() && sel < 0; ++i)
        if (!done[i]) sel = int(i);
      st.bind(positives[sel].tail, EntityId(rng.below(uint64_t(g.num_entities()))));
    }
    done[sel] = true;
    const Atom& a = positives[sel];
    auto hv = st.value(a.head);
    auto tv = st.value(a.tail);
    auto rv = st.rel_value(a.relation);
    if (hv && tv) {
      // Cycle-closing atom: both endpoints already chosen.
      if (rv) {
        if (!g.contains({*hv, *rv, *tv})) return false;
      } else {
        std::vector<RelationId> linking;
        for (const Edge& e : g.out_edges(*hv))
          if (e.other == *tv) linking.push_back(e.relation);
        if (linking.empty()) return false;
        st.rels[a.relation.index] = pick(linking, rng);
      }
    } else if (tv) {
      if (rv) {
        const auto& cands = g.neighbors(*tv, *rv, Direction::Backward);
        if (cands.empty()) return false;
        st.bind(a.head, pick(cands, rng));
      } else {
        const auto& edges = g.in_edges(*tv);
        if (edges.empty()) return false;
        const Edge& e = pick(edges, rng);
        st.rels[a.relation.index] = e.relation;
        st.bind(a.head, e.other);
      }
    } else {
      if (rv) {
        const auto& cands = g.neighbors(*hv, *rv, Direction::Forward);
        if (cands.empty()) return false;
        st.bind(a.tail, pick(cands, rng));
      } else {
        const auto& edges = g.out_edges(*hv);
        if (edges.empty()) return false;
        const Edge& e = pick(edges, rng);
        st.rels[a.relation.index] = e.relation;
        st.bind(a.tail, e.other);
      }
    }
  }

  for (const Atom& a : negatives) {
    bool h_open = !st.value(a.head).has_value();
    bool t_open = !st.value(a.tail).has_value();
    bool r_open = !st.rel_value(a.relation).has_value();
    bool ok = false;
    for (int attempt = 0; attempt < 32 && !ok; ++attempt) {
      EntityId h = h_open ? EntityId(rng.below(uint64_t(g.num_entities()))) : *st.value(a.head);
      EntityId t = t_open ? EntityId(rng.below(uint64_t(g.num_entities()))) : *st.value(a.tail);
      RelationId r =
          r_open ? RelationId(rng.below(uint64_t(g.num_relations()))) : *st.rel_value(a.relation);
      if (!g.contains({h, r, t})) {
        if (h_open) st.bind(a.head, h);
        if (t_open) st.bind(a.tail, t);
        if (r_open) st.rels[a.relation.index] = r;
        ok = true;
      } else if (!h_open && !t_open && !r_open) {
        break;  // fully determined and present in the graph: unsalvageable
      }
    }
    if (!ok) return false;
  }
  return true;
}

// Placeholders in unchosen branches stay open after the walk; fill them
// uniformly. Whether they accidentally create more answers is irrelevant:
// the stored answer split is recomputed exactly afterwards.
void random_fill(const KnowledgeGraph& g, const QueryAst& ast, Rng& rng, WalkState& st) {
  for (int32_t k : relation_placeholders(ast))
    if (!st.rels.count(k)) st.rels[k] = RelationId(rng.below(uint64_t(g.num_relations())));
  for (int32_t k : constant_placeholders(ast))
    if (!st.consts.count(k)) st.consts[k] = EntityId(rng.below(uint64_t(g.num_entities())));
}

void write_jsonl(const std::string& path, const std::vector<QuerySample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (const QuerySample& s : samples) {
    nlohmann::json j{
        {"a_id", s.split.a_id},
        {"a_ood", s.split.a_ood},
        {"provenance", {{"graph", s.graph}, {"seed", s.seed}}},
        {"query", s.efo_text},
        {"type_name", s.type_name},
    };
    out << j.dump() << "\n";
  }
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

std::string_view purpose_name(Purpose p) {
  switch (p) {
    case Purpose::Train: return "train";
    case Purpose::Valid: return "valid";
    case Purpose::Test: return "test";
  }
  return "?";
}

QuerySample sample_query(const GraphSplit& splits, const QueryType& qtype, Purpose purpose,
                         Rng& rng, int max_attempts) {
  bool train = purpose == Purpose::Train;
  const KnowledgeGraph& g = train ? splits.train : splits.test;
  const char* graph_name = train ? "train" : "test";
  if (g.num_entities() == 0 || g.num_relations() == 0)
    throw DataError("cannot sample queries from an empty graph");
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    WalkState st;
    if (!walk_attempt(g, qtype.ast, rng, st)) continue;
    random_fill(g, qtype.ast, rng, st);
    QueryAst q = ground(qtype.ast, Grounding{st.rels, st.consts});
    AnswerSplit split = answer_split(splits, q);
    if (train ? split.a_id.empty() : split.a_ood.empty()) continue;
    QuerySample s;
    s.type_name = qtype.name;
    s.efo_text = serialize_efo(q);
    s.split = std::move(split);
    s.graph = graph_name;
    return s;
  }
  throw BudgetError("sampling budget exhausted after " + std::to_string(max_attempts) +
                    " attempts for type " + qtype.name + " on the " + graph_name + " graph");
}

std::vector<QuerySample> enumerate_1p(const KnowledgeGraph& train_graph) {
  const QueryType& t = query_type("1p");
  std::vector<QuerySample> out;
  for (EntityId h = 0; h < train_graph.num_entities(); ++h) {
    std::set<RelationId> rels;
    for (const Edge& e : train_graph.out_edges(h)) rels.insert(e.relation);
    for (RelationId r : rels) {
      Grounding gr;
      gr.relations[1] = r;
      gr.constants[1] = h;
      QuerySample s;
      s.type_name = "1p";
      s.efo_text = serialize_efo(ground(t.ast, gr));
      s.split.a_id = train_graph.neighbors(h, r, Direction::Forward);
      s.graph = "train";
      out.push_back(std::move(s));
    }
  }
  return out;
}

DatasetProfile DatasetProfile::desk() { return DatasetProfile{}; }

DatasetProfile DatasetProfile::paper(int eval_per_type) {
  DatasetProfile p;
  p.name = "paper";
  p.exhaustive_1p = true;
  p.train_per_type = -1;  // twice the enumerated 1p count
  p.eval_per_type = eval_per_type;
  return p;
}

std::string build_dataset(const GraphSplit& splits, const DatasetProfile& profile,
                          uint64_t seed, const std::string& out_dir,
                          const std::string& graph_source) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (const std::string& n : profile.type_filter)
    if (!find_query_type(n)) throw UsageError("unknown query type in filter: " + n);
  std::set<std::string> filter(profile.type_filter.begin(), profile.type_filter.end());
  auto selected = [&](const QueryType& t) { return filter.empty() || filter.count(t.name) > 0; };

  Rng master(seed);
  std::map<std::string, std::map<std::string, int>> counts;

  std::vector<QuerySample> train_samples;
  int n_1p = 0;
  if (profile.exhaustive_1p && selected(query_type("1p"))) {
    train_samples = enumerate_1p(splits.train);
    n_1p = int(train_samples.size());
  }
  auto draw = [&](const QueryType& t, Purpose purpose, int n, uint64_t purpose_code,
                  std::vector<QuerySample>& sink) {
    for (int i = 0; i < n; ++i) {
      uint64_t stream = (purpose_code << 56) + (uint64_t(t.id) << 32) + uint64_t(i);
      Rng r = master.split(stream);
      QuerySample s = sample_query(splits, t, purpose, r, profile.max_attempts);
      s.seed = stream;
      sink.push_back(std::move(s));
    }
    counts[t.name][std::string(purpose_name(purpose))] += n;
  };
  for (const QueryType& t : query_types()) {
    if (!t.seen || !selected(t)) continue;
    if (profile.exhaustive_1p && t.name == "1p") {
      counts["1p"]["train"] = n_1p;
      continue;
    }
    int n = profile.train_per_type >= 0 ? profile.train_per_type : 2 * n_1p;
    draw(t, Purpose::Train, n, 1, train_samples);
  }

  std::vector<QuerySample> valid_samples, test_samples;
  for (const QueryType& t : query_types()) {
    if (!selected(t)) continue;
    draw(t, Purpose::Valid, profile.eval_per_type, 2, valid_samples);
    draw(t, Purpose::Test, profile.eval_per_type, 3, test_samples);
  }

  master.split(uint64_t(0xF1) << 56).shuffle(train_samples);
  master.split(uint64_t(0xF2) << 56).shuffle(valid_samples);
  master.split(uint64_t(0xF3) << 56).shuffle(test_samples);

  write_jsonl((fs::path(out_dir) / "train.jsonl").string(), train_samples);
  write_jsonl((fs::path(out_dir) / "valid.jsonl").string(), valid_samples);
  write_jsonl((fs::path(out_dir) / "test.jsonl").string(), test_samples);

  nlohmann::json manifest;
  manifest["profile"] = {{"name", profile.name},
                         {"exhaustive_1p", profile.exhaustive_1p},
                         {"train_per_type", profile.train_per_type},
                         {"eval_per_type", profile.eval_per_type},
                         {"max_attempts", profile.max_attempts},
                         {"type_filter", profile.type_filter}};
  manifest["seed"] = seed;
  manifest["graph"] = {
      {"source", graph_source},
      {"entities", splits.test.num_entities()},
      {"relations", splits.test.num_relations()},
      {"checksum",
       {{"train", hex64(splits.train.checksum())},
        {"valid", hex64(splits.valid.checksum())},
        {"test", hex64(splits.test.checksum())}}},
      {"triples",
       {{"train", splits.train.triples().size()},
        {"valid", splits.valid.triples().size()},
        {"test", splits.test.triples().size()}}}};
  manifest["counts"] = counts;
  manifest["syntax_version"] = 1;
  manifest["notes"] = {
      "tokenization drops the commas between atom arguments; every other surface "
      "symbol (parentheses, &, |, !, relations, entities) is one token",
      "eval counts are interpreted per query type",
      "training samples are reverse-walked on the training graph and kept when a_id "
      "is nonempty; evaluation samples are reverse-walked on the test graph and kept "
      "when a_ood is nonempty",
      "existential variables are scoped per conjunction when answer sets are computed",
  };
  std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw DataError("cannot write " + manifest_path);
  out << manifest.dump(2) << "\n";
  return manifest_path;
}

}  // namespace efoent
