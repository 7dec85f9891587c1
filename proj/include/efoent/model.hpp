#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "efoent/ast.hpp"
#include "efoent/checkpoint.hpp"
#include "efoent/kg.hpp"
#include "efoent/query_graph.hpp"
#include "efoent/rng.hpp"
#include "efoent/tensor.hpp"

namespace efoent {

enum class PeKind { Absolute, Relative, Logirpe };
enum class Pooling { Sum, Mean, Max };

const char* pe_kind_name(PeKind k);
const char* pooling_name(Pooling p);
PeKind parse_pe_kind(const std::string& s);      // UsageError on unknown
Pooling parse_pooling(const std::string& s);

struct ModelConfig {
  int d_model = 400;
  int n_layers = 3;
  int n_heads = 8;
  int ffn_mult = 4;
  // 0 resolves to the longest tokenization over every registered query type,
  // which also sizes the relative-offset axis of the bias banks, so the
  // distance clamp is a safety net rather than a working regime.
  int max_seq_len = 0;
  PeKind pe_kind = PeKind::Logirpe;
  Pooling pooling = Pooling::Sum;
  bool use_adjacency_mask = true;
  double dropout = 0.1;
};

// Row layout of the token embedding table: entities, relations, existential
// variables e1..eK, the free variable, then ( ) & | !.
struct TokenVocab {
  int32_t n_entities = 0;
  int32_t n_relations = 0;
  int32_t n_existentials = 0;

  int32_t size() const { return n_entities + n_relations + n_existentials + 6; }
  int32_t entity_row(EntityId e) const;
  int32_t relation_row(RelationId r) const;
  int32_t existential_row(int k) const;  // k is 1-based
  int32_t free_row() const { return n_entities + n_relations + n_existentials; }
  int32_t structural_row(char symbol) const;  // one of ( ) & | !
  int32_t row_of(const Token& tok) const;     // DataError on ungrounded tokens
};

// Transformer encoder over query token sequences with selectable positional
// encoding, plus free-variable pooling and weight-tied entity scoring.
template <class S>
class Model {
 public:
  Model(ModelConfig cfg, TokenVocab vocab, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const TokenVocab& vocab() const { return vocab_; }

  std::vector<Tensor<S>>& params() { return params_; }
  const std::vector<Tensor<S>>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }
  const Tensor<S>& embeddings() const { return params_[0]; }
  const std::vector<int32_t>& frozen_rows() const { return frozen_rows_; }

  // Full forward pass to final hidden states [n, d_model]. A query graph is
  // required when the adjacency mask is enabled. dropout_rng == nullptr runs
  // in eval mode (dropout off).
  Tensor<S> encode(Tape<S>& tape, const std::vector<Token>& tokens,
                   const QueryGraph* mask_graph, Rng* dropout_rng) const;

  // Layer stack over caller-supplied input rows; lets tests drive the
  // attention arithmetic directly.
  Tensor<S> encode_from(Tape<S>& tape, Tensor<S> x, const std::vector<int>& types,
                        const std::vector<uint8_t>* keep, Rng* dropout_rng) const;

  // Pre-softmax attention scores of one head, [n, n]; no mask applied.
  Tensor<S> head_scores(Tape<S>& tape, const Tensor<S>& x, int layer, int head,
                        const std::vector<int>& types) const;

  // Bias bank row for (type_i, type_j, |i-j|) with the clamp applied.
  std::vector<S> lookup_bias(int layer, char which, int type_i, int type_j, int offset) const;

  Tensor<S> pool_free(Tape<S>& tape, const Tensor<S>& hidden,
                      const std::vector<int>& free_positions) const;  // [1, d_model]
  Tensor<S> score(Tape<S>& tape, const Tensor<S>& pooled) const;      // [1, n_entities]

  static std::vector<int> free_positions(const std::vector<Token>& tokens);
  static std::vector<int> token_types(const std::vector<Token>& tokens);

  // Overwrites entity/relation rows from a name-keyed embedding file and
  // marks them frozen; structural rows stay trainable.
  void load_frozen_embeddings(const TensorFile& file, const KnowledgeGraph& kg);
  // Zeroes the frozen rows inside an embedding-table gradient buffer.
  void mask_frozen(std::vector<S>& embedding_grad) const;

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  struct LayerRef {
    int wq, wk, wv, wo;
    int ln1_g, ln1_b, ffn_w1, ffn_b1, ffn_w2, ffn_b2, ln2_g, ln2_b;
    int pe_k = -1, pe_v = -1;
  };

  int add_param(const std::string& name, Tensor<S> t);
  Tensor<S> block(Tape<S>& tape, const Tensor<S>& x, int layer, const std::vector<int>& types,
                  const std::vector<uint8_t>* keep, Rng* dropout_rng) const;
  Tensor<S> gathered_bias(Tape<S>& tape, int bank_index, const std::vector<int>& types) const;
  std::vector<uint8_t> dropout_mask(int64_t n, Rng& rng) const;

  ModelConfig cfg_;
  TokenVocab vocab_;
  int d_head_ = 0;
  std::vector<Tensor<S>> params_;
  std::vector<std::string> names_;
  std::vector<LayerRef> layers_;
  std::vector<int32_t> frozen_rows_;
  Tensor<S> sinusoid_;  // [max_seq_len, d_model], not trainable
};

}  // namespace efoent
