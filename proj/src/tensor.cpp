#include "efoent/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "efoent/errors.hpp"

namespace efoent {

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace {

void check_rank(const std::vector<int>& shape, size_t rank, const char* op) {
  if (shape.size() != rank) {
    throw DataError(std::string(op) + ": expected rank " + std::to_string(rank) +
                    " tensor, got shape " + shape_str(shape));
  }
}

void check_same_shape(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
  if (a != b) {
    throw DataError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}

}  // namespace

template <class S>
Tensor<S>::Tensor(std::vector<int> shape_in) : shape(std::move(shape_in)) {
  int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw DataError("negative dimension in shape " + shape_str(shape));
    n *= d;
  }
  data = std::make_shared<std::vector<S>>(size_t(shape.empty() ? 0 : n), S(0));
}

template <class S>
Tensor<S> Tensor<S>::zeros(std::vector<int> shape) {
  return Tensor<S>(std::move(shape));
}

template <class S>
Tensor<S> Tensor<S>::full(std::vector<int> shape, S value) {
  Tensor<S> t(std::move(shape));
  std::fill(t.data->begin(), t.data->end(), value);
  return t;
}

template <class S>
Tensor<S> Tensor<S>::from(std::vector<int> shape, std::vector<S> values) {
  Tensor<S> t(std::move(shape));
  if (int64_t(values.size()) != t.numel()) {
    throw DataError("value count " + std::to_string(values.size()) + " does not fill shape " +
                    shape_str(t.shape));
  }
  *t.data = std::move(values);
  return t;
}

template <class S>
Tensor<S> randn(std::vector<int> shape, Rng& rng, double stddev) {
  Tensor<S> t(std::move(shape));
  for (auto& v : *t.data) v = S(rng.next_normal() * stddev);
  return t;
}

template <class S>
std::vector<S>& Tape<S>::grad_buf(const Tensor<S>& t) {
  auto it = grads_.find(t.data.get());
  if (it == grads_.end()) {
    it = grads_.emplace(t.data.get(), std::vector<S>(size_t(t.numel()), S(0))).first;
  }
  return it->second;
}

template <class S>
std::vector<S>* Tape<S>::find_grad(const Tensor<S>& t) {
  auto it = grads_.find(t.data.get());
  return it == grads_.end() ? nullptr : &it->second;
}

template <class S>
const std::vector<S>& Tape<S>::grad(const Tensor<S>& t) {
  return grad_buf(t);
}

template <class S>
void Tape<S>::backward(const Tensor<S>& scalar_loss) {
  if (scalar_loss.numel() != 1) {
    throw UsageError("backward expects a scalar loss, got shape " + shape_str(scalar_loss.shape));
  }
  grad_buf(scalar_loss)[0] = S(1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

template <class S>
Tensor<S> Tape<S>::matmul(const Tensor<S>& a, const Tensor<S>& b) {
  check_rank(a.shape, 2, "matmul");
  check_rank(b.shape, 2, "matmul");
  if (a.shape[1] != b.shape[0]) {
    throw DataError("matmul: inner dimensions disagree, " + shape_str(a.shape) + " x " +
                    shape_str(b.shape));
  }
  const int n = a.shape[0], k = a.shape[1], m = b.shape[1];
  Tensor<S> out({n, m});
  const S* pa = a.ptr();
  const S* pb = b.ptr();
  S* po = out.ptr();
  for (int i = 0; i < n; ++i) {
    for (int kk = 0; kk < k; ++kk) {
      const S aik = pa[size_t(i) * k + kk];
      const S* brow = pb + size_t(kk) * m;
      S* orow = po + size_t(i) * m;
      for (int j = 0; j < m; ++j) orow[j] += aik * brow[j];
    }
  }
  out.requires_grad = track(a) || track(b);
  if (out.requires_grad) {
    record([this, a, b, out, n, k, m]() {
      auto* go = find_grad(out);
      if (!go) return;
      if (a.requires_grad) {
        auto& ga = grad_buf(a);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) {
            const S g = (*go)[size_t(i) * m + j];
            const S* brow = b.ptr() + 0;
            for (int kk = 0; kk < k; ++kk) ga[size_t(i) * k + kk] += g * brow[size_t(kk) * m + j];
          }
      }
      if (b.requires_grad) {
        auto& gb = grad_buf(b);
        for (int kk = 0; kk < k; ++kk)
          for (int i = 0; i < n; ++i) {
            const S aik = a.ptr()[size_t(i) * k + kk];
            for (int j = 0; j < m; ++j) gb[size_t(kk) * m + j] += aik * (*go)[size_t(i) * m + j];
          }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::transpose(const Tensor<S>& a) {
  check_rank(a.shape, 2, "transpose");
  const int n = a.shape[0], m = a.shape[1];
  Tensor<S> out({m, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) out[size_t(j) * n + i] = a[size_t(i) * m + j];
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, n, m]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) ga[size_t(i) * m + j] += (*go)[size_t(j) * n + i];
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::add(const Tensor<S>& a, const Tensor<S>& b) {
  const bool broadcast = a.shape.size() == 2 && b.shape.size() == 1 && b.shape[0] == a.shape[1];
  if (!broadcast) check_same_shape(a.shape, b.shape, "add");
  Tensor<S> out(a.shape);
  const int64_t n = a.numel();
  const int64_t bn = b.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] + b[i % bn];
  out.requires_grad = track(a) || track(b);
  if (out.requires_grad) {
    record([this, a, b, out, n, bn]() {
      auto* go = find_grad(out);
      if (!go) return;
      if (a.requires_grad) {
        auto& ga = grad_buf(a);
        for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += (*go)[size_t(i)];
      }
      if (b.requires_grad) {
        auto& gb = grad_buf(b);
        for (int64_t i = 0; i < n; ++i) gb[size_t(i % bn)] += (*go)[size_t(i)];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::mul(const Tensor<S>& a, const Tensor<S>& b) {
  check_same_shape(a.shape, b.shape, "mul");
  Tensor<S> out(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
  out.requires_grad = track(a) || track(b);
  if (out.requires_grad) {
    record([this, a, b, out, n]() {
      auto* go = find_grad(out);
      if (!go) return;
      if (a.requires_grad) {
        auto& ga = grad_buf(a);
        for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += (*go)[size_t(i)] * b[i];
      }
      if (b.requires_grad) {
        auto& gb = grad_buf(b);
        for (int64_t i = 0; i < n; ++i) gb[size_t(i)] += (*go)[size_t(i)] * a[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::scale(const Tensor<S>& a, S k) {
  Tensor<S> out(a.shape);
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = a[i] * k;
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, k, n]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += (*go)[size_t(i)] * k;
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::softmax(const Tensor<S>& a, int axis) {
  check_rank(a.shape, 2, "softmax");
  if (axis != 0 && axis != 1) throw UsageError("softmax axis must be 0 or 1");
  const int n = a.shape[0], m = a.shape[1];
  const int lanes = axis == 1 ? n : m;     // independent distributions
  const int width = axis == 1 ? m : n;     // entries per distribution
  const auto at = [axis, m](int lane, int t) -> size_t {
    return axis == 1 ? size_t(lane) * m + t : size_t(t) * m + lane;
  };
  Tensor<S> out(a.shape);
  for (int l = 0; l < lanes; ++l) {
    S mx = -std::numeric_limits<S>::infinity();
    for (int t = 0; t < width; ++t) mx = std::max(mx, a[at(l, t)]);
    S z = 0;
    for (int t = 0; t < width; ++t) {
      const S e = std::exp(a[at(l, t)] - mx);
      out[at(l, t)] = e;
      z += e;
    }
    for (int t = 0; t < width; ++t) out[at(l, t)] /= z;
  }
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, lanes, width, at]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int l = 0; l < lanes; ++l) {
        S dot = 0;
        for (int t = 0; t < width; ++t) dot += (*go)[at(l, t)] * out[at(l, t)];
        for (int t = 0; t < width; ++t)
          ga[at(l, t)] += out[at(l, t)] * ((*go)[at(l, t)] - dot);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::layer_norm(const Tensor<S>& a, const Tensor<S>& gamma, const Tensor<S>& beta) {
  check_rank(a.shape, 2, "layer_norm");
  const int n = a.shape[0], m = a.shape[1];
  if (gamma.shape != std::vector<int>{m} || beta.shape != std::vector<int>{m}) {
    throw DataError("layer_norm: gamma/beta must be [" + std::to_string(m) + "], got " +
                    shape_str(gamma.shape) + " and " + shape_str(beta.shape));
  }
  const S eps = S(1e-5);
  Tensor<S> out(a.shape);
  Tensor<S> xhat(a.shape);     // normalized rows, reused in backward
  std::vector<S> inv_std(size_t(n), S(0));
  for (int i = 0; i < n; ++i) {
    S mean = 0;
    for (int j = 0; j < m; ++j) mean += a[size_t(i) * m + j];
    mean /= S(m);
    S var = 0;
    for (int j = 0; j < m; ++j) {
      const S d = a[size_t(i) * m + j] - mean;
      var += d * d;
    }
    var /= S(m);
    const S inv = S(1) / std::sqrt(var + eps);
    inv_std[size_t(i)] = inv;
    for (int j = 0; j < m; ++j) {
      const S xh = (a[size_t(i) * m + j] - mean) * inv;
      xhat[size_t(i) * m + j] = xh;
      out[size_t(i) * m + j] = xh * gamma[j] + beta[j];
    }
  }
  out.requires_grad = track(a) || track(gamma) || track(beta);
  if (out.requires_grad) {
    record([this, a, gamma, beta, out, xhat, inv_std, n, m]() {
      auto* go = find_grad(out);
      if (!go) return;
      if (gamma.requires_grad) {
        auto& gg = grad_buf(gamma);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j)
            gg[size_t(j)] += (*go)[size_t(i) * m + j] * xhat[size_t(i) * m + j];
      }
      if (beta.requires_grad) {
        auto& gb = grad_buf(beta);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < m; ++j) gb[size_t(j)] += (*go)[size_t(i) * m + j];
      }
      if (a.requires_grad) {
        auto& ga = grad_buf(a);
        for (int i = 0; i < n; ++i) {
          S mean_g = 0, mean_gx = 0;
          for (int j = 0; j < m; ++j) {
            const S g = (*go)[size_t(i) * m + j] * gamma[j];
            mean_g += g;
            mean_gx += g * xhat[size_t(i) * m + j];
          }
          mean_g /= S(m);
          mean_gx /= S(m);
          for (int j = 0; j < m; ++j) {
            const S g = (*go)[size_t(i) * m + j] * gamma[j];
            ga[size_t(i) * m + j] +=
                (g - mean_g - xhat[size_t(i) * m + j] * mean_gx) * inv_std[size_t(i)];
          }
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::gelu(const Tensor<S>& a) {
  // Exact form x * Phi(x) with the Gaussian CDF.
  Tensor<S> out(a.shape);
  const int64_t n = a.numel();
  const S inv_sqrt2 = S(0.7071067811865475244);
  for (int64_t i = 0; i < n; ++i) {
    const S x = a[i];
    out[i] = x * S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
  }
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, n, inv_sqrt2]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      const S inv_sqrt2pi = S(0.3989422804014326779);
      for (int64_t i = 0; i < n; ++i) {
        const S x = a[i];
        const S phi_cdf = S(0.5) * (S(1) + std::erf(x * inv_sqrt2));
        const S phi_pdf = inv_sqrt2pi * std::exp(S(-0.5) * x * x);
        ga[size_t(i)] += (*go)[size_t(i)] * (phi_cdf + x * phi_pdf);
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::gather_rows(const Tensor<S>& table, const std::vector<int>& rows) {
  check_rank(table.shape, 2, "gather_rows");
  const int v = table.shape[0], d = table.shape[1];
  for (int r : rows) {
    if (r < 0 || r >= v) {
      throw DataError("gather_rows: row " + std::to_string(r) + " out of range for table " +
                      shape_str(table.shape));
    }
  }
  const int n = int(rows.size());
  Tensor<S> out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out[size_t(i) * d + j] = table[size_t(rows[size_t(i)]) * d + j];
  out.requires_grad = track(table);
  if (out.requires_grad) {
    record([this, table, out, rows, n, d]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& gt = grad_buf(table);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
          gt[size_t(rows[size_t(i)]) * d + j] += (*go)[size_t(i) * d + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::concat(const std::vector<Tensor<S>>& parts, int axis) {
  if (parts.empty()) throw UsageError("concat of zero tensors");
  if (axis != 0 && axis != 1) throw UsageError("concat axis must be 0 or 1");
  for (const auto& p : parts) check_rank(p.shape, 2, "concat");
  const int fixed = axis == 0 ? parts[0].shape[1] : parts[0].shape[0];
  int total = 0;
  for (const auto& p : parts) {
    const int pf = axis == 0 ? p.shape[1] : p.shape[0];
    if (pf != fixed) {
      throw DataError("concat: incompatible shapes " + shape_str(parts[0].shape) + " vs " +
                      shape_str(p.shape));
    }
    total += axis == 0 ? p.shape[0] : p.shape[1];
  }
  const int n = axis == 0 ? total : fixed;
  const int m = axis == 0 ? fixed : total;
  Tensor<S> out({n, m});
  int offset = 0;
  for (const auto& p : parts) {
    const int pn = p.shape[0], pm = p.shape[1];
    for (int i = 0; i < pn; ++i)
      for (int j = 0; j < pm; ++j) {
        const size_t dst =
            axis == 0 ? size_t(offset + i) * m + j : size_t(i) * m + (offset + j);
        out[dst] = p[size_t(i) * pm + j];
      }
    offset += axis == 0 ? pn : pm;
  }
  bool any = false;
  for (const auto& p : parts) any = any || track(p);
  out.requires_grad = any;
  if (out.requires_grad) {
    record([this, parts, out, axis, m]() {
      auto* go = find_grad(out);
      if (!go) return;
      int off = 0;
      for (const auto& p : parts) {
        const int pn = p.shape[0], pm = p.shape[1];
        if (p.requires_grad) {
          auto& gp = grad_buf(p);
          for (int i = 0; i < pn; ++i)
            for (int j = 0; j < pm; ++j) {
              const size_t src =
                  axis == 0 ? size_t(off + i) * m + j : size_t(i) * m + (off + j);
              gp[size_t(i) * pm + j] += (*go)[src];
            }
        }
        off += axis == 0 ? pn : pm;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::slice_cols(const Tensor<S>& a, int begin, int end) {
  check_rank(a.shape, 2, "slice_cols");
  const int n = a.shape[0], m = a.shape[1];
  if (begin < 0 || end > m || begin >= end) {
    throw UsageError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_str(a.shape));
  }
  const int w = end - begin;
  Tensor<S> out({n, w});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out[size_t(i) * w + j] = a[size_t(i) * m + begin + j];
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, begin, n, m, w]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < w; ++j) ga[size_t(i) * m + begin + j] += (*go)[size_t(i) * w + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::masked_fill(const Tensor<S>& a, const std::vector<uint8_t>& keep, S value) {
  const int64_t n = a.numel();
  if (int64_t(keep.size()) != n) {
    throw DataError("masked_fill: mask size " + std::to_string(keep.size()) +
                    " does not match tensor " + shape_str(a.shape));
  }
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < n; ++i) out[i] = keep[size_t(i)] ? a[i] : value;
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, keep, n]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int64_t i = 0; i < n; ++i)
        if (keep[size_t(i)]) ga[size_t(i)] += (*go)[size_t(i)];
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::reduce(const Tensor<S>& a, int axis, Reduce kind) {
  check_rank(a.shape, 2, "reduce");
  if (axis != 0 && axis != 1) throw UsageError("reduce axis must be 0 or 1");
  const int n = a.shape[0], m = a.shape[1];
  const int lanes = axis == 0 ? m : n;
  const int width = axis == 0 ? n : m;
  if (width == 0) throw DataError("reduce over an empty axis of shape " + shape_str(a.shape));
  const auto at = [axis, m](int lane, int t) -> size_t {
    return axis == 0 ? size_t(t) * m + lane : size_t(lane) * m + t;
  };
  Tensor<S> out({lanes});
  std::vector<int> argmax(size_t(lanes), 0);
  for (int l = 0; l < lanes; ++l) {
    if (kind == Reduce::Max) {
      S best = a[at(l, 0)];
      int bi = 0;
      for (int t = 1; t < width; ++t)
        if (a[at(l, t)] > best) {
          best = a[at(l, t)];
          bi = t;
        }
      out[l] = best;
      argmax[size_t(l)] = bi;
    } else {
      S acc = 0;
      for (int t = 0; t < width; ++t) acc += a[at(l, t)];
      out[l] = kind == Reduce::Mean ? acc / S(width) : acc;
    }
  }
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, kind, lanes, width, at, argmax]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int l = 0; l < lanes; ++l) {
        const S g = (*go)[size_t(l)];
        if (kind == Reduce::Max) {
          ga[at(l, argmax[size_t(l)])] += g;
        } else {
          const S share = kind == Reduce::Mean ? g / S(width) : g;
          for (int t = 0; t < width; ++t) ga[at(l, t)] += share;
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::sum(const Tensor<S>& a) {
  Tensor<S> out({1});
  const int64_t n = a.numel();
  S acc = 0;
  for (int64_t i = 0; i < n; ++i) acc += a[i];
  out[0] = acc;
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, n]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += (*go)[0];
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::reshape(const Tensor<S>& a, std::vector<int> shape) {
  Tensor<S> out(std::move(shape));
  if (out.numel() != a.numel()) {
    throw DataError("reshape: cannot view " + shape_str(a.shape) + " as " + shape_str(out.shape));
  }
  *out.data = *a.data;
  out.requires_grad = track(a);
  if (out.requires_grad) {
    const int64_t n = a.numel();
    record([this, a, out, n]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int64_t i = 0; i < n; ++i) ga[size_t(i)] += (*go)[size_t(i)];
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::dropout(const Tensor<S>& a, const std::vector<uint8_t>& keep, S keep_prob) {
  const int64_t n = a.numel();
  if (int64_t(keep.size()) != n) {
    throw DataError("dropout: mask size " + std::to_string(keep.size()) +
                    " does not match tensor " + shape_str(a.shape));
  }
  if (!(keep_prob > S(0)) || keep_prob > S(1)) throw UsageError("dropout keep probability must be in (0,1]");
  const S inv = S(1) / keep_prob;
  Tensor<S> out(a.shape);
  for (int64_t i = 0; i < n; ++i) out[i] = keep[size_t(i)] ? a[i] * inv : S(0);
  out.requires_grad = track(a);
  if (out.requires_grad) {
    record([this, a, out, keep, inv, n]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& ga = grad_buf(a);
      for (int64_t i = 0; i < n; ++i)
        if (keep[size_t(i)]) ga[size_t(i)] += (*go)[size_t(i)] * inv;
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::bias_dot(const Tensor<S>& q, const Tensor<S>& bias) {
  check_rank(q.shape, 2, "bias_dot");
  check_rank(bias.shape, 2, "bias_dot");
  const int n = q.shape[0], d = q.shape[1];
  if (bias.shape[0] != n * n || bias.shape[1] != d) {
    throw DataError("bias_dot: bias must be [" + std::to_string(n * n) + "," + std::to_string(d) +
                    "], got " + shape_str(bias.shape));
  }
  Tensor<S> out({n, n});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      S acc = 0;
      for (int t = 0; t < d; ++t)
        acc += q[size_t(i) * d + t] * bias[(size_t(i) * n + j) * d + t];
      out[size_t(i) * n + j] = acc;
    }
  out.requires_grad = track(q) || track(bias);
  if (out.requires_grad) {
    record([this, q, bias, out, n, d]() {
      auto* go = find_grad(out);
      if (!go) return;
      if (q.requires_grad) {
        auto& gq = grad_buf(q);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const S g = (*go)[size_t(i) * n + j];
            for (int t = 0; t < d; ++t)
              gq[size_t(i) * d + t] += g * bias[(size_t(i) * n + j) * d + t];
          }
      }
      if (bias.requires_grad) {
        auto& gb = grad_buf(bias);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const S g = (*go)[size_t(i) * n + j];
            for (int t = 0; t < d; ++t)
              gb[(size_t(i) * n + j) * d + t] += g * q[size_t(i) * d + t];
          }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::attn_bias_mix(const Tensor<S>& attn, const Tensor<S>& bias) {
  check_rank(attn.shape, 2, "attn_bias_mix");
  check_rank(bias.shape, 2, "attn_bias_mix");
  const int n = attn.shape[0];
  const int d = bias.shape[1];
  if (attn.shape[1] != n || bias.shape[0] != n * n) {
    throw DataError("attn_bias_mix: expected attn [n,n] with bias [n*n,d], got " +
                    shape_str(attn.shape) + " and " + shape_str(bias.shape));
  }
  Tensor<S> out({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const S w = attn[size_t(i) * n + j];
      for (int t = 0; t < d; ++t)
        out[size_t(i) * d + t] += w * bias[(size_t(i) * n + j) * d + t];
    }
  out.requires_grad = track(attn) || track(bias);
  if (out.requires_grad) {
    record([this, attn, bias, out, n, d]() {
      auto* go = find_grad(out);
      if (!go) return;
      if (attn.requires_grad) {
        auto& ga = grad_buf(attn);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            S acc = 0;
            for (int t = 0; t < d; ++t)
              acc += (*go)[size_t(i) * d + t] * bias[(size_t(i) * n + j) * d + t];
            ga[size_t(i) * n + j] += acc;
          }
      }
      if (bias.requires_grad) {
        auto& gb = grad_buf(bias);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            const S w = attn[size_t(i) * n + j];
            for (int t = 0; t < d; ++t)
              gb[(size_t(i) * n + j) * d + t] += w * (*go)[size_t(i) * d + t];
          }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> Tape<S>::label_smoothed_cross_entropy(const Tensor<S>& logits,
                                                const std::vector<std::vector<int>>& targets,
                                                S eps) {
  check_rank(logits.shape, 2, "label_smoothed_cross_entropy");
  const int b = logits.shape[0], e = logits.shape[1];
  if (int(targets.size()) != b) {
    throw DataError("label_smoothed_cross_entropy: " + std::to_string(targets.size()) +
                    " target sets for " + std::to_string(b) + " rows");
  }
  if (!(eps >= S(0)) || eps >= S(1)) {
    throw UsageError("label smoothing must lie in [0,1)");
  }
  for (const auto& t : targets) {
    if (t.empty()) throw DataError("label_smoothed_cross_entropy: empty answer set");
    for (int id : t)
      if (id < 0 || id >= e)
        throw DataError("label_smoothed_cross_entropy: answer id " + std::to_string(id) +
                        " out of range for " + std::to_string(e) + " entities");
  }
  // Per row: loss = logsumexp(x) - sum_i p_i x_i with p the smoothed target.
  Tensor<S> probs({b, e});  // softmax rows, reused in backward
  Tensor<S> out({1});
  S total = 0;
  for (int i = 0; i < b; ++i) {
    const S* row = logits.ptr() + size_t(i) * e;
    S mx = row[0];
    for (int j = 1; j < e; ++j) mx = std::max(mx, row[j]);
    S z = 0;
    for (int j = 0; j < e; ++j) {
      const S ex = std::exp(row[j] - mx);
      probs[size_t(i) * e + j] = ex;
      z += ex;
    }
    for (int j = 0; j < e; ++j) probs[size_t(i) * e + j] /= z;
    const S lse = mx + std::log(z);
    const S base = eps / S(e);
    S expect = 0;
    for (int j = 0; j < e; ++j) expect += base * row[j];
    const S share = (S(1) - eps) / S(targets[size_t(i)].size());
    for (int id : targets[size_t(i)]) expect += share * row[id];
    total += lse - expect;
  }
  out[0] = total / S(b);
  out.requires_grad = track(logits);
  if (out.requires_grad) {
    record([this, logits, out, probs, targets, eps, b, e]() {
      auto* go = find_grad(out);
      if (!go) return;
      auto& gl = grad_buf(logits);
      const S g = (*go)[0] / S(b);
      const S base = eps / S(e);
      for (int i = 0; i < b; ++i) {
        const S share = (S(1) - eps) / S(targets[size_t(i)].size());
        for (int j = 0; j < e; ++j)
          gl[size_t(i) * e + j] += g * (probs[size_t(i) * e + j] - base);
        for (int id : targets[size_t(i)]) gl[size_t(i) * e + id] -= g * share;
      }
    });
  }
  return out;
}

template struct Tensor<float>;
template struct Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> randn<float>(std::vector<int>, Rng&, double);
template Tensor<double> randn<double>(std::vector<int>, Rng&, double);

}  // namespace efoent
