#include "efoent/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "json.hpp"

#include "efoent/errors.hpp"
#include "efoent/templates.hpp"

namespace efoent {

const char* pe_kind_name(PeKind k) {
  switch (k) {
    case PeKind::Absolute: return "absolute";
    case PeKind::Relative: return "relative";
    case PeKind::Logirpe: return "logirpe";
  }
  return "?";
}

const char* pooling_name(Pooling p) {
  switch (p) {
    case Pooling::Sum: return "sum";
    case Pooling::Mean: return "mean";
    case Pooling::Max: return "max";
  }
  return "?";
}

PeKind parse_pe_kind(const std::string& s) {
  if (s == "absolute") return PeKind::Absolute;
  if (s == "relative") return PeKind::Relative;
  if (s == "logirpe") return PeKind::Logirpe;
  throw UsageError("unknown positional encoding '" + s +
                   "' (expected absolute, relative, or logirpe)");
}

Pooling parse_pooling(const std::string& s) {
  if (s == "sum") return Pooling::Sum;
  if (s == "mean") return Pooling::Mean;
  if (s == "max") return Pooling::Max;
  throw UsageError("unknown pooling mode '" + s + "' (expected sum, mean, or max)");
}

int32_t TokenVocab::entity_row(EntityId e) const {
  if (e < 0 || e >= n_entities) {
    throw DataError("entity id " + std::to_string(e) + " outside vocabulary of " +
                    std::to_string(n_entities));
  }
  return e;
}

int32_t TokenVocab::relation_row(RelationId r) const {
  if (r < 0 || r >= n_relations) {
    throw DataError("relation id " + std::to_string(r) + " outside vocabulary of " +
                    std::to_string(n_relations));
  }
  return n_entities + r;
}

int32_t TokenVocab::existential_row(int k) const {
  if (k < 1 || k > n_existentials) {
    throw DataError("existential variable e" + std::to_string(k) +
                    " outside vocabulary (max e" + std::to_string(n_existentials) + ")");
  }
  return n_entities + n_relations + (k - 1);
}

int32_t TokenVocab::structural_row(char symbol) const {
  const int32_t base = n_entities + n_relations + n_existentials + 1;
  switch (symbol) {
    case '(': return base + 0;
    case ')': return base + 1;
    case '&': return base + 2;
    case '|': return base + 3;
    case '!': return base + 4;
  }
  throw DataError(std::string("no vocabulary row for symbol '") + symbol + "'");
}

int32_t TokenVocab::row_of(const Token& tok) const {
  switch (tok.kind) {
    case TokenKind::Parenthesis: return structural_row(tok.text[0]);
    case TokenKind::Conjunction: return structural_row('&');
    case TokenKind::Disjunction: return structural_row('|');
    case TokenKind::Negation: return structural_row('!');
    case TokenKind::Relation:
      if (tok.symbol < 0) {
        throw DataError("ungrounded relation token '" + tok.text + "' has no embedding row");
      }
      return relation_row(tok.symbol);
    case TokenKind::Entity:
      if (tok.is_free) return free_row();
      if (!tok.text.empty() && tok.text[0] == 'e') return existential_row(tok.symbol);
      if (tok.symbol < 0) {
        throw DataError("ungrounded entity token '" + tok.text + "' has no embedding row");
      }
      return entity_row(tok.symbol);
  }
  throw DataError("unrecognized token kind");
}

template <class S>
Model<S>::Model(ModelConfig cfg, TokenVocab vocab, uint64_t seed)
    : cfg_(cfg), vocab_(vocab) {
  if (cfg_.d_model <= 0 || cfg_.n_layers <= 0 || cfg_.n_heads <= 0 || cfg_.ffn_mult <= 0) {
    throw UsageError("model dimensions must be positive");
  }
  if (cfg_.d_model % cfg_.n_heads != 0) {
    throw UsageError("d_model " + std::to_string(cfg_.d_model) + " is not divisible by " +
                     std::to_string(cfg_.n_heads) + " heads");
  }
  if (!(cfg_.dropout >= 0.0 && cfg_.dropout < 1.0)) {
    throw UsageError("dropout must lie in [0,1)");
  }
  const int longest = max_template_tokens();
  if (cfg_.max_seq_len == 0) cfg_.max_seq_len = longest;
  if (cfg_.max_seq_len < longest) {
    throw UsageError("max_seq_len " + std::to_string(cfg_.max_seq_len) +
                     " is shorter than the longest query tokenization (" +
                     std::to_string(longest) + ")");
  }
  if (vocab_.n_entities <= 0 || vocab_.n_relations <= 0 || vocab_.n_existentials < 0) {
    throw UsageError("token vocabulary must contain entities and relations");
  }
  d_head_ = cfg_.d_model / cfg_.n_heads;

  // Weight matrices draw from the rng in a fixed order that does not depend
  // on pe_kind; bias banks are zero so every encoding variant starts from the
  // same shared weights.
  Rng rng(seed);
  const double stddev = 0.02;
  const int d = cfg_.d_model;
  const int f = cfg_.ffn_mult * d;
  add_param("embeddings", randn<S>({vocab_.size(), d}, rng, stddev));
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    LayerRef ref;
    ref.wq = add_param(p + "attn.wq", randn<S>({d, d}, rng, stddev));
    ref.wk = add_param(p + "attn.wk", randn<S>({d, d}, rng, stddev));
    ref.wv = add_param(p + "attn.wv", randn<S>({d, d}, rng, stddev));
    ref.wo = add_param(p + "attn.wo", randn<S>({d, d}, rng, stddev));
    ref.ln1_g = add_param(p + "ln1.gain", Tensor<S>::full({d}, S(1)));
    ref.ln1_b = add_param(p + "ln1.bias", Tensor<S>::zeros({d}));
    ref.ffn_w1 = add_param(p + "ffn.w1", randn<S>({d, f}, rng, stddev));
    ref.ffn_b1 = add_param(p + "ffn.b1", Tensor<S>::zeros({f}));
    ref.ffn_w2 = add_param(p + "ffn.w2", randn<S>({f, d}, rng, stddev));
    ref.ffn_b2 = add_param(p + "ffn.b2", Tensor<S>::zeros({d}));
    ref.ln2_g = add_param(p + "ln2.gain", Tensor<S>::full({d}, S(1)));
    ref.ln2_b = add_param(p + "ln2.bias", Tensor<S>::zeros({d}));
    if (cfg_.pe_kind == PeKind::Relative) {
      ref.pe_k = add_param(p + "pe.key", Tensor<S>::zeros({cfg_.max_seq_len, d_head_}));
      ref.pe_v = add_param(p + "pe.value", Tensor<S>::zeros({cfg_.max_seq_len, d_head_}));
    } else if (cfg_.pe_kind == PeKind::Logirpe) {
      const int rows = kNumTokenKinds * kNumTokenKinds * cfg_.max_seq_len;
      ref.pe_k = add_param(p + "pe.key", Tensor<S>::zeros({rows, d_head_}));
      ref.pe_v = add_param(p + "pe.value", Tensor<S>::zeros({rows, d_head_}));
    }
    layers_.push_back(ref);
  }

  sinusoid_ = Tensor<S>({cfg_.max_seq_len, d});
  for (int pos = 0; pos < cfg_.max_seq_len; ++pos) {
    for (int i = 0; 2 * i < d; ++i) {
      const double freq = std::pow(10000.0, -2.0 * i / d);
      sinusoid_[size_t(pos) * d + 2 * i] = S(std::sin(pos * freq));
      if (2 * i + 1 < d) sinusoid_[size_t(pos) * d + 2 * i + 1] = S(std::cos(pos * freq));
    }
  }
}

template <class S>
int Model<S>::add_param(const std::string& name, Tensor<S> t) {
  t.requires_grad = true;
  params_.push_back(std::move(t));
  names_.push_back(name);
  return int(params_.size()) - 1;
}

template <class S>
std::vector<int> Model<S>::free_positions(const std::vector<Token>& tokens) {
  std::vector<int> out;
  for (size_t i = 0; i < tokens.size(); ++i)
    if (tokens[i].is_free) out.push_back(int(i));
  return out;
}

template <class S>
std::vector<int> Model<S>::token_types(const std::vector<Token>& tokens) {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) out.push_back(int(t.kind));
  return out;
}

template <class S>
std::vector<uint8_t> Model<S>::dropout_mask(int64_t n, Rng& rng) const {
  std::vector<uint8_t> keep(size_t(n), 0);
  for (auto& k : keep) k = rng.next_double() >= cfg_.dropout ? 1 : 0;
  return keep;
}

template <class S>
Tensor<S> Model<S>::gathered_bias(Tape<S>& tape, int bank_index, const std::vector<int>& types) const {
  const int n = int(types.size());
  const int len = cfg_.max_seq_len;
  std::vector<int> rows(size_t(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int off = std::min(std::abs(i - j), len - 1);
      rows[size_t(i) * n + j] = cfg_.pe_kind == PeKind::Relative
                                    ? off
                                    : (types[size_t(i)] * kNumTokenKinds + types[size_t(j)]) * len + off;
    }
  }
  return tape.gather_rows(params_[size_t(bank_index)], rows);
}

template <class S>
Tensor<S> Model<S>::block(Tape<S>& tape, const Tensor<S>& x, int layer,
                          const std::vector<int>& types, const std::vector<uint8_t>* keep,
                          Rng* dropout_rng) const {
  const LayerRef& ref = layers_[size_t(layer)];
  const S inv_sqrt = S(1) / S(std::sqrt(double(d_head_)));
  const S ninf = -std::numeric_limits<S>::infinity();
  const bool use_dropout = dropout_rng != nullptr && cfg_.dropout > 0.0;
  const S keep_prob = S(1.0 - cfg_.dropout);

  auto qf = tape.matmul(x, params_[size_t(ref.wq)]);
  auto kf = tape.matmul(x, params_[size_t(ref.wk)]);
  auto vf = tape.matmul(x, params_[size_t(ref.wv)]);
  Tensor<S> gk, gv;
  const bool biased = cfg_.pe_kind != PeKind::Absolute;
  if (biased) {
    gk = gathered_bias(tape, ref.pe_k, types);
    gv = gathered_bias(tape, ref.pe_v, types);
  }

  std::vector<Tensor<S>> heads;
  heads.reserve(size_t(cfg_.n_heads));
  for (int h = 0; h < cfg_.n_heads; ++h) {
    auto q = tape.slice_cols(qf, h * d_head_, (h + 1) * d_head_);
    auto k = tape.slice_cols(kf, h * d_head_, (h + 1) * d_head_);
    auto v = tape.slice_cols(vf, h * d_head_, (h + 1) * d_head_);
    auto e = tape.matmul(q, tape.transpose(k));
    if (biased) e = tape.add(e, tape.bias_dot(q, gk));
    e = tape.scale(e, inv_sqrt);
    if (keep) e = tape.masked_fill(e, *keep, ninf);
    auto attn = tape.softmax(e, 1);
    if (use_dropout) attn = tape.dropout(attn, dropout_mask(attn.numel(), *dropout_rng), keep_prob);
    auto z = tape.matmul(attn, v);
    if (biased) z = tape.add(z, tape.attn_bias_mix(attn, gv));
    heads.push_back(std::move(z));
  }
  auto merged = tape.matmul(tape.concat(heads, 1), params_[size_t(ref.wo)]);
  auto x1 = tape.layer_norm(tape.add(x, merged), params_[size_t(ref.ln1_g)],
                            params_[size_t(ref.ln1_b)]);
  auto h1 = tape.gelu(tape.add(tape.matmul(x1, params_[size_t(ref.ffn_w1)]),
                               params_[size_t(ref.ffn_b1)]));
  if (use_dropout) h1 = tape.dropout(h1, dropout_mask(h1.numel(), *dropout_rng), keep_prob);
  auto h2 = tape.add(tape.matmul(h1, params_[size_t(ref.ffn_w2)]), params_[size_t(ref.ffn_b2)]);
  return tape.layer_norm(tape.add(x1, h2), params_[size_t(ref.ln2_g)],
                         params_[size_t(ref.ln2_b)]);
}

template <class S>
Tensor<S> Model<S>::encode_from(Tape<S>& tape, Tensor<S> x, const std::vector<int>& types,
                                const std::vector<uint8_t>* keep, Rng* dropout_rng) const {
  if (x.shape.size() != 2 || x.shape[1] != cfg_.d_model) {
    throw DataError("encoder input must be [n," + std::to_string(cfg_.d_model) + "], got " +
                    shape_str(x.shape));
  }
  const int n = x.shape[0];
  if (n > cfg_.max_seq_len) {
    throw DataError("sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " +
                    std::to_string(cfg_.max_seq_len));
  }
  if (int(types.size()) != n) {
    throw DataError("type list length " + std::to_string(types.size()) + " does not match " +
                    std::to_string(n) + " tokens");
  }
  for (int t : types) {
    if (t < 0 || t >= kNumTokenKinds) throw DataError("token type out of range");
  }
  if (keep && int64_t(keep->size()) != int64_t(n) * n) {
    throw DataError("attention mask size does not match sequence length");
  }
  for (int l = 0; l < cfg_.n_layers; ++l) {
    x = block(tape, x, l, types, keep, dropout_rng);
  }
  return x;
}

template <class S>
Tensor<S> Model<S>::encode(Tape<S>& tape, const std::vector<Token>& tokens,
                           const QueryGraph* mask_graph, Rng* dropout_rng) const {
  if (tokens.empty()) throw DataError("cannot encode an empty token sequence");
  const int n = int(tokens.size());
  std::vector<int> rows;
  rows.reserve(tokens.size());
  for (const Token& t : tokens) rows.push_back(vocab_.row_of(t));
  auto x = tape.gather_rows(params_[0], rows);
  if (cfg_.pe_kind == PeKind::Absolute) {
    if (n > cfg_.max_seq_len) {
      throw DataError("sequence of " + std::to_string(n) + " tokens exceeds max_seq_len " +
                      std::to_string(cfg_.max_seq_len));
    }
    Tensor<S> pe({n, cfg_.d_model});
    std::copy(sinusoid_.ptr(), sinusoid_.ptr() + size_t(n) * cfg_.d_model, pe.ptr());
    x = tape.add(x, pe);
  }
  std::vector<uint8_t> keep;
  if (cfg_.use_adjacency_mask) {
    if (!mask_graph) {
      throw UsageError("the adjacency mask is enabled but no query graph was supplied");
    }
    auto m = adjacency_mask(tokens, *mask_graph);
    keep.reserve(size_t(n) * n);
    for (const auto& row : m)
      for (bool b : row) keep.push_back(b ? 1 : 0);
  }
  return encode_from(tape, std::move(x), token_types(tokens), keep.empty() ? nullptr : &keep,
                     dropout_rng);
}

template <class S>
Tensor<S> Model<S>::head_scores(Tape<S>& tape, const Tensor<S>& x, int layer, int head,
                                const std::vector<int>& types) const {
  if (layer < 0 || layer >= cfg_.n_layers) throw UsageError("layer index out of range");
  if (head < 0 || head >= cfg_.n_heads) throw UsageError("head index out of range");
  const LayerRef& ref = layers_[size_t(layer)];
  const S inv_sqrt = S(1) / S(std::sqrt(double(d_head_)));
  auto q = tape.slice_cols(tape.matmul(x, params_[size_t(ref.wq)]), head * d_head_,
                           (head + 1) * d_head_);
  auto k = tape.slice_cols(tape.matmul(x, params_[size_t(ref.wk)]), head * d_head_,
                           (head + 1) * d_head_);
  auto e = tape.matmul(q, tape.transpose(k));
  if (cfg_.pe_kind != PeKind::Absolute) {
    e = tape.add(e, tape.bias_dot(q, gathered_bias(tape, ref.pe_k, types)));
  }
  return tape.scale(e, inv_sqrt);
}

template <class S>
std::vector<S> Model<S>::lookup_bias(int layer, char which, int type_i, int type_j,
                                     int offset) const {
  if (layer < 0 || layer >= cfg_.n_layers) throw UsageError("layer index out of range");
  if (which != 'K' && which != 'V') throw UsageError("bias bank selector must be 'K' or 'V'");
  if (type_i < 0 || type_i >= kNumTokenKinds || type_j < 0 || type_j >= kNumTokenKinds) {
    throw UsageError("token type out of range");
  }
  if (offset < 0) throw UsageError("offset must be non-negative");
  if (cfg_.pe_kind == PeKind::Absolute) return std::vector<S>(size_t(d_head_), S(0));
  const int off = std::min(offset, cfg_.max_seq_len - 1);
  const int row = cfg_.pe_kind == PeKind::Relative
                      ? off
                      : (type_i * kNumTokenKinds + type_j) * cfg_.max_seq_len + off;
  const LayerRef& ref = layers_[size_t(layer)];
  const Tensor<S>& bank = params_[size_t(which == 'K' ? ref.pe_k : ref.pe_v)];
  std::vector<S> out(size_t(d_head_), S(0));
  for (int t = 0; t < d_head_; ++t) out[size_t(t)] = bank[size_t(row) * d_head_ + t];
  return out;
}

template <class S>
Tensor<S> Model<S>::pool_free(Tape<S>& tape, const Tensor<S>& hidden,
                              const std::vector<int>& free_positions) const {
  if (free_positions.empty()) {
    throw DataError("free-variable pooling needs at least one free position");
  }
  auto rows = tape.gather_rows(hidden, free_positions);
  Reduce kind = cfg_.pooling == Pooling::Sum    ? Reduce::Sum
                : cfg_.pooling == Pooling::Mean ? Reduce::Mean
                                                : Reduce::Max;
  return tape.reshape(tape.reduce(rows, 0, kind), {1, cfg_.d_model});
}

template <class S>
Tensor<S> Model<S>::score(Tape<S>& tape, const Tensor<S>& pooled) const {
  std::vector<int> rows(size_t(vocab_.n_entities));
  for (int i = 0; i < vocab_.n_entities; ++i) rows[size_t(i)] = i;
  auto table = tape.gather_rows(params_[0], rows);
  return tape.matmul(pooled, tape.transpose(table));
}

template <class S>
void Model<S>::load_frozen_embeddings(const TensorFile& file, const KnowledgeGraph& kg) {
  Tensor<S> emb = file.template get<S>("embeddings");
  if (emb.shape.size() != 2 || emb.shape[1] != cfg_.d_model) {
    throw DataError("frozen embedding width " +
                    (emb.shape.size() == 2 ? std::to_string(emb.shape[1]) : shape_str(emb.shape)) +
                    " does not match d_model " + std::to_string(cfg_.d_model));
  }
  const auto symbols = file.meta_list("symbols");
  if (int64_t(symbols.size()) != emb.shape[0]) {
    throw DataError("frozen embedding file lists " + std::to_string(symbols.size()) +
                    " symbols for " + std::to_string(emb.shape[0]) + " rows");
  }
  Tensor<S>& table = params_[0];
  const int d = cfg_.d_model;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const std::string& sym = symbols[i];
    int32_t row;
    if (sym.rfind("entity:", 0) == 0) {
      auto id = kg.entities().find(sym.substr(7));
      if (!id) throw DataError("frozen embedding symbol '" + sym + "' is not in the graph");
      row = vocab_.entity_row(*id);
    } else if (sym.rfind("relation:", 0) == 0) {
      auto id = kg.relations().find(sym.substr(9));
      if (!id) throw DataError("frozen embedding symbol '" + sym + "' is not in the graph");
      row = vocab_.relation_row(*id);
    } else {
      throw DataError("frozen embedding symbol '" + sym +
                      "' must start with entity: or relation:");
    }
    for (int j = 0; j < d; ++j) table[size_t(row) * d + j] = emb[int64_t(i) * d + j];
    frozen_rows_.push_back(row);
  }
  std::sort(frozen_rows_.begin(), frozen_rows_.end());
  frozen_rows_.erase(std::unique(frozen_rows_.begin(), frozen_rows_.end()), frozen_rows_.end());
}

template <class S>
void Model<S>::mask_frozen(std::vector<S>& embedding_grad) const {
  const int d = cfg_.d_model;
  if (int64_t(embedding_grad.size()) != params_[0].numel()) {
    throw UsageError("embedding gradient size does not match the table");
  }
  for (int32_t row : frozen_rows_) {
    std::fill(embedding_grad.begin() + int64_t(row) * d,
              embedding_grad.begin() + int64_t(row + 1) * d, S(0));
  }
}

template <class S>
void Model<S>::save_checkpoint(const std::string& path) const {
  TensorFile file;
  nlohmann::json c;
  c["d_model"] = cfg_.d_model;
  c["n_layers"] = cfg_.n_layers;
  c["n_heads"] = cfg_.n_heads;
  c["ffn_mult"] = cfg_.ffn_mult;
  c["max_seq_len"] = cfg_.max_seq_len;
  c["pe_kind"] = pe_kind_name(cfg_.pe_kind);
  c["pooling"] = pooling_name(cfg_.pooling);
  c["use_adjacency_mask"] = cfg_.use_adjacency_mask;
  c["dropout"] = cfg_.dropout;
  file.set_meta("config", c.dump());
  nlohmann::json v;
  v["entities"] = vocab_.n_entities;
  v["relations"] = vocab_.n_relations;
  v["existentials"] = vocab_.n_existentials;
  file.set_meta("vocab", v.dump());
  file.set_meta("precision", sizeof(S) == 4 ? "f32" : "f64");
  std::vector<std::string> frozen;
  for (int32_t r : frozen_rows_) frozen.push_back(std::to_string(r));
  file.set_meta_list("frozen_rows", frozen);
  for (size_t i = 0; i < params_.size(); ++i) file.put(names_[i], params_[i]);
  file.save(path);
}

template <class S>
Model<S> Model<S>::load_checkpoint(const std::string& path) {
  TensorFile file = TensorFile::load(path);
  nlohmann::json c, v;
  try {
    c = nlohmann::json::parse(file.meta("config"));
    v = nlohmann::json::parse(file.meta("vocab"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "' has a corrupt config block: " + e.what());
  }
  ModelConfig cfg;
  cfg.d_model = c.at("d_model").get<int>();
  cfg.n_layers = c.at("n_layers").get<int>();
  cfg.n_heads = c.at("n_heads").get<int>();
  cfg.ffn_mult = c.at("ffn_mult").get<int>();
  cfg.max_seq_len = c.at("max_seq_len").get<int>();
  cfg.pe_kind = parse_pe_kind(c.at("pe_kind").get<std::string>());
  cfg.pooling = parse_pooling(c.at("pooling").get<std::string>());
  cfg.use_adjacency_mask = c.at("use_adjacency_mask").get<bool>();
  cfg.dropout = c.at("dropout").get<double>();
  TokenVocab vocab;
  vocab.n_entities = v.at("entities").get<int32_t>();
  vocab.n_relations = v.at("relations").get<int32_t>();
  vocab.n_existentials = v.at("existentials").get<int32_t>();

  Model model(cfg, vocab, 0);
  for (size_t i = 0; i < model.params_.size(); ++i) {
    const std::string& name = model.names_[i];
    if (!file.has(name)) throw DataError("checkpoint is missing tensor '" + name + "'");
    Tensor<S> t = file.get<S>(name);
    if (t.shape != model.params_[i].shape) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_str(t.shape) +
                      " but the config requires " + shape_str(model.params_[i].shape));
    }
    t.requires_grad = true;
    model.params_[i] = std::move(t);
  }
  for (const std::string& r : file.meta_list("frozen_rows")) {
    model.frozen_rows_.push_back(int32_t(std::stol(r)));
  }
  return model;
}

template class Model<float>;
template class Model<double>;

}  // namespace efoent
