#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <limits>

#include "efoent/checkpoint.hpp"
#include "efoent/errors.hpp"
#include "efoent/model.hpp"
#include "efoent/query_graph.hpp"
#include "efoent/templates.hpp"
#include "support.hpp"

using namespace efoent;

namespace {

TokenVocab small_vocab() {
  TokenVocab v;
  v.n_entities = 40;
  v.n_relations = 4;
  v.n_existentials = max_template_existentials();
  return v;
}

ModelConfig tiny_config(PeKind kind) {
  ModelConfig cfg;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 4;
  cfg.dropout = 0.0;
  cfg.use_adjacency_mask = false;
  cfg.pe_kind = kind;
  return cfg;
}

template <class S>
void fill_zero_params(Model<S>& m, uint64_t seed) {
  // bias banks are the only zero-initialized parameters
  for (auto& p : m.params()) {
    bool all_zero = p.numel() > 0;
    for (int64_t i = 0; i < p.numel() && all_zero; ++i) all_zero = p[i] == S(0);
    if (all_zero) {
      Rng r(seed);
      for (int64_t i = 0; i < p.numel(); ++i) p[i] = S(r.next_normal() * 0.3);
    }
  }
}

}  // namespace

TEST_CASE("embedding rows partition into entity, relation, variable, and structural bands") {
  TokenVocab v = small_vocab();
  CHECK(v.size() == 40 + 4 + 3 + 6);
  CHECK(v.entity_row(0) == 0);
  CHECK(v.relation_row(0) == 40);
  CHECK(v.existential_row(1) == 44);
  CHECK(v.free_row() == 47);
  CHECK(v.structural_row('(') == 48);
  CHECK(v.structural_row('!') == 52);
  CHECK_THROWS_AS(v.entity_row(40), DataError);
  CHECK_THROWS_AS(v.existential_row(4), DataError);

  auto toks = tokenize(parse_efo("r:2(s:7,f)"));
  std::vector<int32_t> rows;
  for (const Token& t : toks) rows.push_back(v.row_of(t));
  CHECK(rows == std::vector<int32_t>{42, 48, 7, 47, 49});
  CHECK_THROWS_AS(v.row_of(tokenize(parse_efo("r1(s1,f)"))[0]), DataError);
}

TEST_CASE("invalid model dimensions are rejected up front") {
  TokenVocab v = small_vocab();
  ModelConfig cfg = tiny_config(PeKind::Absolute);
  cfg.n_heads = 5;  // 32 % 5 != 0
  CHECK_THROWS_AS(Model<double>(cfg, v, 1), UsageError);
  cfg = tiny_config(PeKind::Absolute);
  cfg.dropout = 1.0;
  CHECK_THROWS_AS(Model<double>(cfg, v, 1), UsageError);
  cfg = tiny_config(PeKind::Absolute);
  cfg.max_seq_len = 3;  // shorter than the longest registered template
  CHECK_THROWS_AS(Model<double>(cfg, v, 1), UsageError);
  CHECK_THROWS_AS(Model<double>(tiny_config(PeKind::Absolute), TokenVocab{}, 1), UsageError);
  CHECK_THROWS_AS(parse_pe_kind("fancy"), UsageError);
  CHECK(parse_pe_kind("logirpe") == PeKind::Logirpe);
  CHECK(parse_pooling("mean") == Pooling::Mean);
}

TEST_CASE("freshly initialized bias banks leave all encodings identical") {
  TokenVocab v = small_vocab();
  Model<double> ma(tiny_config(PeKind::Absolute), v, 9);
  Model<double> mr(tiny_config(PeKind::Relative), v, 9);
  Model<double> ml(tiny_config(PeKind::Logirpe), v, 9);
  Rng rng(3);
  auto x = randn<double>({7, 32}, rng, 0.5);
  std::vector<int> types = {0, 2, 1, 3, 1, 5, 0};

  Tape<double> t1, t2, t3;
  auto ya = ma.encode_from(t1, x, types, nullptr, nullptr);
  auto yr = mr.encode_from(t2, x, types, nullptr, nullptr);
  auto yl = ml.encode_from(t3, x, types, nullptr, nullptr);
  CHECK(std::memcmp(ya.ptr(), yr.ptr(), sizeof(double) * size_t(ya.numel())) == 0);
  CHECK(std::memcmp(ya.ptr(), yl.ptr(), sizeof(double) * size_t(ya.numel())) == 0);

  Tape<double> t4, t5, t6;
  auto ea = ma.head_scores(t4, x, 1, 2, types);
  auto er = mr.head_scores(t5, x, 1, 2, types);
  auto el = ml.head_scores(t6, x, 1, 2, types);
  CHECK(std::memcmp(ea.ptr(), er.ptr(), sizeof(double) * size_t(ea.numel())) == 0);
  CHECK(std::memcmp(ea.ptr(), el.ptr(), sizeof(double) * size_t(ea.numel())) == 0);
}

TEST_CASE("attention scores ignore absolute position under pairwise encodings") {
  for (PeKind kind : {PeKind::Relative, PeKind::Logirpe}) {
    CAPTURE(pe_kind_name(kind));
    ModelConfig cfg = tiny_config(kind);
    cfg.d_model = 24;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    Model<double> m(cfg, small_vocab(), 21);
    fill_zero_params(m, 99);

    Rng rng(4);
    const int n = 6, s = 3;
    auto x = randn<double>({n, 24}, rng, 0.7);
    std::vector<int> types = {1, 2, 1, 4, 0, 5};
    auto xpad = randn<double>({n + s, 24}, rng, 0.7);
    std::vector<int> tpad(n + s, 3);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 24; ++j) xpad[size_t(i + s) * 24 + j] = x[size_t(i) * 24 + j];
      tpad[size_t(i + s)] = types[size_t(i)];
    }
    Tape<double> ta, tb;
    auto e = m.head_scores(ta, x, 0, 1, types);
    auto ep = m.head_scores(tb, xpad, 0, 1, tpad);
    double worst = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        worst = std::max(worst,
                         std::fabs(e[size_t(i) * n + j] - ep[size_t(i + s) * (n + s) + (j + s)]));
    CHECK(worst == 0.0);
  }
}

TEST_CASE("bias lookups key on ordered type pairs and clamp long offsets") {
  ModelConfig cfg = tiny_config(PeKind::Logirpe);
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  TokenVocab v = small_vocab();
  Model<double> m(cfg, v, 8);
  auto& params = m.params();
  for (size_t p = 0; p < params.size(); ++p) {
    if (m.param_names()[p] == "layer0.pe.key") {
      for (int64_t i = 0; i < params[p].numel(); ++i) params[p][i] = double(i);
    }
  }
  const int L = m.config().max_seq_len;
  CHECK(m.lookup_bias(0, 'K', 1, 2, 4) != m.lookup_bias(0, 'K', 2, 1, 4));
  CHECK(m.lookup_bias(0, 'K', 1, 2, L + 100) == m.lookup_bias(0, 'K', 1, 2, L - 1));
  auto zero_row = m.lookup_bias(0, 'V', 3, 3, 0);
  for (double t : zero_row) CHECK(t == 0.0);
}

TEST_CASE("free-variable pooling selects exactly the free rows") {
  ModelConfig cfg = tiny_config(PeKind::Absolute);
  cfg.d_model = 8;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.pooling = Pooling::Sum;
  Model<double> m(cfg, small_vocab(), 5);
  Rng rng(6);
  auto h = randn<double>({5, 8}, rng, 1.0);

  Tape<double> t;
  auto one = m.pool_free(t, h, {2});
  for (int j = 0; j < 8; ++j) CHECK(one[j] == h[size_t(2) * 8 + j]);

  auto h2 = h;
  for (int j = 0; j < 8; ++j) h2[size_t(4) * 8 + j] = h2[size_t(1) * 8 + j];
  Tape<double> t2;
  auto sum2 = m.pool_free(t2, h2, {1, 4});
  for (int j = 0; j < 8; ++j) CHECK(sum2[j] == 2 * h2[size_t(1) * 8 + j]);

  Tape<double> t3;
  CHECK_THROWS_AS(m.pool_free(t3, h, {}), DataError);

  SUBCASE("gradient reaches only the pooled rows") {
    h.requires_grad = true;
    Tape<double> t4;
    auto pooled = m.pool_free(t4, h, {2, 3});
    t4.backward(t4.sum(pooled));
    const auto& gh = t4.grad(h);
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 8; ++j)
        CHECK(gh[size_t(i) * 8 + j] == ((i == 2 || i == 3) ? 1.0 : 0.0));
  }
  SUBCASE("mean and max modes") {
    ModelConfig cm = cfg;
    cm.pooling = Pooling::Mean;
    Model<double> mm(cm, small_vocab(), 5);
    Tape<double> tm;
    auto mean2 = mm.pool_free(tm, h2, {1, 4});
    for (int j = 0; j < 8; ++j) CHECK(mean2[j] == doctest::Approx(h2[size_t(1) * 8 + j]));
    cm.pooling = Pooling::Max;
    Model<double> mx(cm, small_vocab(), 5);
    Tape<double> tx;
    auto max2 = mx.pool_free(tx, h, {0, 3});
    for (int j = 0; j < 8; ++j)
      CHECK(max2[j] == std::max(h[size_t(0) * 8 + j], h[size_t(3) * 8 + j]));
  }
}

TEST_CASE("a zero query vector scores every entity identically") {
  ModelConfig cfg = tiny_config(PeKind::Absolute);
  cfg.d_model = 16;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  Model<double> m(cfg, small_vocab(), 7);
  Tape<double> t;
  auto logits = m.score(t, Tensor<double>::zeros({1, 16}));
  REQUIRE(logits.numel() == 40);
  for (int64_t i = 0; i < logits.numel(); ++i) CHECK(logits[i] == 0.0);
}

TEST_CASE("the full encoder differentiates end to end in 64-bit") {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 1;
  cfg.ffn_mult = 2;
  cfg.dropout = 0.0;
  cfg.pe_kind = PeKind::Logirpe;
  cfg.use_adjacency_mask = true;
  TokenVocab tiny;
  tiny.n_entities = 10;
  tiny.n_relations = 3;
  tiny.n_existentials = max_template_existentials();
  Model<double> m(cfg, tiny, 13);

  QueryAst ast = parse_efo("(r:1(s:3,e1))&(r:0(e1,f))");
  auto tokens = tokenize(ast);
  auto graph = build_query_graph(ast);
  std::vector<std::vector<int>> targets{{2, 5}};

  auto loss_of = [&](Tape<double>& tape) {
    auto hidden = m.encode(tape, tokens, &graph, nullptr);
    auto pooled = m.pool_free(tape, hidden, Model<double>::free_positions(tokens));
    auto logits = m.score(tape, pooled);
    return tape.label_smoothed_cross_entropy(logits, targets, 0.1);
  };

  Tape<double> tape;
  auto loss = loss_of(tape);
  tape.backward(loss);

  const double h = 1e-5;
  double worst = 0.0;
  bool untouched_zero = true;
  auto& params = m.params();
  for (size_t p = 0; p < params.size(); ++p) {
    const auto& ana = tape.grad(params[p]);
    const bool is_bank = m.param_names()[p].find("pe.") != std::string::npos;
    for (int64_t i = 0; i < params[p].numel(); ++i) {
      if (is_bank && ana[size_t(i)] == 0.0) {
        // probe a thin sample of the untouched bank rows
        if (i % 997 == 0) {
          const double save = params[p][i];
          params[p][i] = save + h;
          Tape<double> tp;
          const double lp = loss_of(tp)[0];
          params[p][i] = save;
          untouched_zero = untouched_zero && std::fabs(lp - loss[0]) < 1e-12;
        }
        continue;
      }
      const double save = params[p][i];
      params[p][i] = save + h;
      Tape<double> tp;
      const double lp = loss_of(tp)[0];
      params[p][i] = save - h;
      Tape<double> tm;
      const double lm = loss_of(tm)[0];
      params[p][i] = save;
      const double num = (lp - lm) / (2 * h);
      const double a = ana[size_t(i)];
      worst = std::max(worst, std::fabs(num - a) / std::max({1e-6, std::fabs(num), std::fabs(a)}));
    }
  }
  CHECK(worst < 1e-4);
  CHECK(untouched_zero);
}

TEST_CASE("checkpoints restore a model bit for bit") {
  ModelConfig cfg = tiny_config(PeKind::Logirpe);
  Model<float> m(cfg, small_vocab(), 1234);
  testsup::TempDir dir("efoent_model_ckpt");
  const std::string path = dir.root() + "/m.ckpt";
  m.save_checkpoint(path);
  auto m2 = Model<float>::load_checkpoint(path);
  REQUIRE(m2.params().size() == m.params().size());
  for (size_t p = 0; p < m.params().size(); ++p) CHECK(*m.params()[p].data == *m2.params()[p].data);
  CHECK(m2.config().d_model == cfg.d_model);
  CHECK(m2.config().pe_kind == cfg.pe_kind);
  CHECK(m2.vocab().n_entities == 40);
}

TEST_CASE("named embedding rows can be imported and pinned") {
  KnowledgeGraph g = testsup::random_graph(40, 4, 200, 11);
  TokenVocab v = small_vocab();
  ModelConfig cfg = tiny_config(PeKind::Logirpe);

  TensorFile ef;
  Tensor<float> rows({5, 32});
  std::vector<std::string> symbols;
  for (int i = 0; i < 5; ++i) {
    symbols.push_back("entity:" + g.entities().name(i));
    for (int j = 0; j < 32; ++j) rows[size_t(i) * 32 + j] = float(i + 1);
  }
  ef.put("embeddings", rows);
  ef.set_meta_list("symbols", symbols);

  Model<float> m(cfg, v, 77);
  m.load_frozen_embeddings(ef, g);
  CHECK(m.frozen_rows().size() == 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 32; ++j) CHECK(m.embeddings()[size_t(i) * 32 + j] == float(i + 1));

  SUBCASE("frozen rows zero out of gradient buffers") {
    std::vector<float> grad(size_t(v.size()) * 32, 1.0f);
    m.mask_frozen(grad);
    for (int row = 0; row < v.size(); ++row)
      for (int j = 0; j < 32; ++j)
        CHECK(grad[size_t(row) * 32 + j] == (row < 5 ? 0.0f : 1.0f));
  }
  SUBCASE("width mismatches are rejected") {
    TensorFile bad;
    Tensor<float> wrong({2, 16});
    bad.put("embeddings", wrong);
    bad.set_meta_list("symbols",
                      {"entity:" + g.entities().name(0), "entity:" + g.entities().name(1)});
    Model<float> mb(cfg, v, 1);
    CHECK_THROWS_AS(mb.load_frozen_embeddings(bad, g), DataError);
  }
  SUBCASE("unknown symbol names are rejected") {
    TensorFile bad;
    Tensor<float> one({1, 32});
    bad.put("embeddings", one);
    bad.set_meta_list("symbols", {"entity:not-a-node"});
    Model<float> mb(cfg, v, 1);
    CHECK_THROWS_AS(mb.load_frozen_embeddings(bad, g), DataError);
  }
}
