#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "efoent/rng.hpp"

namespace efoent {

// Dense row-major tensor, rank 1 or 2. Copies are shallow: they share the
// same storage, which is also how the tape identifies a tensor.
template <class S>
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<S>> data;
  bool requires_grad = false;

  Tensor() : data(std::make_shared<std::vector<S>>()) {}
  explicit Tensor(std::vector<int> shape_in);

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, S value);
  static Tensor from(std::vector<int> shape, std::vector<S> values);

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }
  int rows() const { return shape.empty() ? 0 : shape[0]; }
  int cols() const { return shape.size() < 2 ? 1 : shape[1]; }
  S* ptr() { return data->data(); }
  const S* ptr() const { return data->data(); }
  S& operator[](int64_t i) { return (*data)[size_t(i)]; }
  S operator[](int64_t i) const { return (*data)[size_t(i)]; }
};

// Gaussian init, mean zero.
template <class S>
Tensor<S> randn(std::vector<int> shape, Rng& rng, double stddev);

enum class Reduce { Sum, Mean, Max };

// Reverse-mode tape. Every operation returns a fresh tensor and, when any
// input participates in differentiation, records a closure that routes the
// output gradient back to the inputs. Gradient buffers live in the tape and
// are keyed by tensor storage, so independent tapes may run concurrently over
// the same read-only parameters.
template <class S>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // [n,k] x [k,m] -> [n,m]
  Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> transpose(const Tensor<S>& a);
  // Same shape, or b of shape [m] broadcast over the rows of a [n,m].
  Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b);
  Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b);  // elementwise
  Tensor<S> scale(const Tensor<S>& a, S k);
  Tensor<S> softmax(const Tensor<S>& a, int axis);
  // Row-wise normalization of a [n,m]; gamma, beta are [m].
  Tensor<S> layer_norm(const Tensor<S>& a, const Tensor<S>& gamma, const Tensor<S>& beta);
  Tensor<S> gelu(const Tensor<S>& a);
  // [V,d] table -> [rows.size(), d]; backward scatter-adds into the rows.
  Tensor<S> gather_rows(const Tensor<S>& table, const std::vector<int>& rows);
  Tensor<S> concat(const std::vector<Tensor<S>>& parts, int axis);
  Tensor<S> slice_cols(const Tensor<S>& a, int begin, int end);
  // Positions with keep[i]==0 are replaced by `value` and get zero gradient.
  Tensor<S> masked_fill(const Tensor<S>& a, const std::vector<uint8_t>& keep, S value);
  Tensor<S> reduce(const Tensor<S>& a, int axis, Reduce kind);  // [n,m] -> [m] or [n]
  Tensor<S> sum(const Tensor<S>& a);                            // -> scalar [1]
  Tensor<S> reshape(const Tensor<S>& a, std::vector<int> shape);  // same numel
  // Inverted-scaling dropout with a caller-supplied keep mask.
  Tensor<S> dropout(const Tensor<S>& a, const std::vector<uint8_t>& keep, S keep_prob);

  // Attention-bias contractions over a per-pair bias table laid out as
  // [n*n, d] with pair (i,j) at row i*n+j.
  // out[i,j] = <q_i, bias_{ij}>
  Tensor<S> bias_dot(const Tensor<S>& q, const Tensor<S>& bias);
  // out[i,:] = sum_j attn[i,j] * bias_{ij}
  Tensor<S> attn_bias_mix(const Tensor<S>& attn, const Tensor<S>& bias);

  // Mean over rows of the cross entropy between log-softmax(logits) and the
  // smoothed target that puts (1-eps)/|answers| on each answer plus eps/|E|
  // everywhere. Answer sets must be nonempty.
  Tensor<S> label_smoothed_cross_entropy(const Tensor<S>& logits,
                                         const std::vector<std::vector<int>>& targets, S eps);

  // Runs all recorded closures in reverse order, seeding d(loss)/d(loss)=1.
  void backward(const Tensor<S>& scalar_loss);

  // Gradient buffer of a tensor (zeros when nothing reached it).
  const std::vector<S>& grad(const Tensor<S>& t);

 private:
  std::vector<S>& grad_buf(const Tensor<S>& t);
  std::vector<S>* find_grad(const Tensor<S>& t);
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  static bool track(const Tensor<S>& t) { return t.requires_grad; }

  std::vector<std::function<void()>> nodes_;
  std::unordered_map<const void*, std::vector<S>> grads_;
};

std::string shape_str(const std::vector<int>& shape);

}  // namespace efoent
