#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "easr/rng.hpp"
#include "easr/tensor.hpp"

namespace easr {

// A named trainable tensor with a persistent gradient accumulator.
// backward() adds into grad; the optimizer consumes and zeroes it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter(std::string n, Tensor v)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { std::fill(grad.values().begin(), grad.values().end(), 0.0); }
};

// Ordered registry of parameters. Creation order is the serialization order,
// so checkpoints are reproducible byte for byte.
class ParameterSet {
 public:
  Parameter& create(const std::string& name, std::vector<std::size_t> shape,
                    Rng& init, double lo = -0.1, double hi = 0.1) {
    return adopt(name, Tensor::uniform(std::move(shape), lo, hi, init));
  }

  Parameter& adopt(const std::string& name, Tensor value) {
    if (find(name) != nullptr) {
      throw std::runtime_error("duplicate parameter name: " + name);
    }
    items_.push_back(std::make_unique<Parameter>(name, std::move(value)));
    return *items_.back();
  }

  Parameter* find(const std::string& name) {
    for (auto& p : items_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  std::size_t size() const { return items_.size(); }
  Parameter& operator[](std::size_t i) { return *items_[i]; }
  const Parameter& operator[](std::size_t i) const { return *items_[i]; }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

  void zero_grad() {
    for (auto& p : items_) p->zero_grad();
  }

  // Deep copy of the current values, in registry order.
  std::vector<Tensor> snapshot() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& p : items_) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Tensor>& snap) {
    if (snap.size() != items_.size()) {
      throw std::runtime_error("snapshot size mismatch");
    }
    for (std::size_t i = 0; i < snap.size(); ++i) {
      require_same_shape(items_[i]->value, snap[i], "restore");
      items_[i]->value = snap[i];
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter>> items_;
};

class Tape;

// Handle to a value recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int index = -1;

  const Tensor& value() const;
  bool valid() const { return tape != nullptr && index >= 0; }
};

// Reverse-mode differentiation record. Forward operations append nodes;
// backward() walks the node list in exact reverse order, pulling output
// gradients back into the node's inputs and, for parameter leaves, into the
// parameter's accumulator.
class Tape {
 public:
  using Pull = std::function<void(Tape&, const Tensor&)>;

  Var input(Tensor v) { return emplace(std::move(v), nullptr); }

  Var param(Parameter& p) {
    return emplace(p.value, [pp = &p](Tape&, const Tensor& g) {
      for (std::size_t i = 0; i < g.size(); ++i) pp->grad.at(i) += g.at(i);
    });
  }

  Var emplace(Tensor value, Pull pull) {
    nodes_.push_back(Node{std::move(value), std::move(pull)});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Tensor& value(int index) const { return nodes_[index].value; }
  std::size_t node_count() const { return nodes_.size(); }

  // Accumulates d(output)/d(parameter) into every reachable parameter's
  // gradient accumulator. Repeated calls keep accumulating.
  void backward(const Var& output) {
    if (output.tape != this) {
      throw std::runtime_error("backward: output lives on another tape");
    }
    const Tensor& out = nodes_[output.index].value;
    if (out.size() != 1) {
      throw ShapeError("backward needs a scalar output, got shape " +
                       out.shape_str());
    }
    grads_.assign(nodes_.size(), Tensor());
    accumulate(output.index, Tensor({1, 1}, {1.0}));
    for (int i = output.index; i >= 0; --i) {
      if (grads_[i].size() > 0 && nodes_[i].pull) {
        nodes_[i].pull(*this, grads_[i]);
      }
    }
  }

  // Gradient of the last backward() output w.r.t. node `v`. Zero tensor if
  // the node was not reached.
  Tensor grad(const Var& v) const {
    if (v.index < static_cast<int>(grads_.size()) && grads_[v.index].size() > 0) {
      return grads_[v.index];
    }
    return Tensor(nodes_[v.index].value.shape());
  }

  void accumulate(int index, const Tensor& g) {
    Tensor& slot = grads_[index];
    if (slot.size() == 0) {
      slot = g;
    } else {
      require_same_shape(slot, g, "grad accumulate");
      for (std::size_t i = 0; i < g.size(); ++i) slot.at(i) += g.at(i);
    }
  }

 private:
  struct Node {
    Tensor value;
    Pull pull;  // null for leaves without gradient flow
  };

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

inline const Tensor& Var::value() const { return tape->value(index); }

namespace detail {

inline void require_same_tape(const Var& a, const Var& b, const char* op) {
  if (a.tape != b.tape) {
    throw std::runtime_error(std::string(op) + ": operands on different tapes");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementary operations. Each records its forward value on the tape and a
// pull closure implementing the local vector-Jacobian product.
// ---------------------------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + av.shape_str() + " vs " +
                     bv.shape_str());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = av.data() + i * k;
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aik = arow[p];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
  int ia = a.index, ib = b.index;
  return a.tape->emplace(
      std::move(out), [ia, ib, m, k, n](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        Tensor da({m, k});
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          double* drow = da.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = B.data() + p * n;
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            drow[p] = acc;
          }
        }
        Tensor db({k, n});
        for (std::size_t i = 0; i < m; ++i) {
          const double* arow = A.data() + i * k;
          const double* grow = g.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const double aik = arow[p];
            if (aik == 0.0) continue;
            double* drow = db.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) drow[j] += aik * grow[j];
          }
        }
        t.accumulate(ia, da);
        t.accumulate(ib, db);
      });
}

inline Var add(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "add");
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) += b.value().at(i);
  int ia = a.index, ib = b.index;
  return a.tape->emplace(std::move(out), [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    t.accumulate(ib, g);
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "sub");
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) -= b.value().at(i);
  int ia = a.index, ib = b.index;
  return a.tape->emplace(std::move(out), [ia, ib](Tape& t, const Tensor& g) {
    t.accumulate(ia, g);
    Tensor ng = g;
    for (auto& x : ng.values()) x = -x;
    t.accumulate(ib, ng);
  });
}

// Elementwise product.
inline Var mul(const Var& a, const Var& b) {
  detail::require_same_tape(a, b, "mul");
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) *= b.value().at(i);
  int ia = a.index, ib = b.index;
  return a.tape->emplace(std::move(out), [ia, ib](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    Tensor da = g, db = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da.at(i) *= B.at(i);
      db.at(i) *= A.at(i);
    }
    t.accumulate(ia, da);
    t.accumulate(ib, db);
  });
}

inline Var scale(const Var& a, double c) {
  Tensor out = a.value();
  for (auto& x : out.values()) x *= c;
  int ia = a.index;
  return a.tape->emplace(std::move(out), [ia, c](Tape& t, const Tensor& g) {
    Tensor da = g;
    for (auto& x : da.values()) x *= c;
    t.accumulate(ia, da);
  });
}

inline Var tanh(const Var& a) {
  Tensor out = a.value();
  for (auto& x : out.values()) x = std::tanh(x);
  int ia = a.index;
  int self = static_cast<int>(a.tape->node_count());
  return a.tape->emplace(std::move(out), [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor da = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da.at(i) *= 1.0 - y.at(i) * y.at(i);
    }
    t.accumulate(ia, da);
  });
}

inline Var sigmoid(const Var& a) {
  Tensor out = a.value();
  for (auto& x : out.values()) x = 1.0 / (1.0 + std::exp(-x));
  int ia = a.index;
  int self = static_cast<int>(a.tape->node_count());
  return a.tape->emplace(std::move(out), [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor da = g;
    for (std::size_t i = 0; i < g.size(); ++i) {
      da.at(i) *= y.at(i) * (1.0 - y.at(i));
    }
    t.accumulate(ia, da);
  });
}

inline Var exp(const Var& a) {
  Tensor out = a.value();
  for (auto& x : out.values()) x = std::exp(x);
  int ia = a.index;
  int self = static_cast<int>(a.tape->node_count());
  return a.tape->emplace(std::move(out), [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor da = g;
    for (std::size_t i = 0; i < g.size(); ++i) da.at(i) *= y.at(i);
    t.accumulate(ia, da);
  });
}

// Log-softmax over the last axis of a rank-2 tensor; each output row
// exponentiates and sums to one.
inline Var log_softmax(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) {
    throw ShapeError("log_softmax needs rank 2, got " + av.shape_str());
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < n; ++j) row[j] -= lse;
  }
  int ia = a.index;
  int self = static_cast<int>(a.tape->node_count());
  return a.tape->emplace(
      std::move(out), [ia, self, m, n](Tape& t, const Tensor& g) {
        const Tensor& y = t.value(self);
        Tensor da = g;
        for (std::size_t i = 0; i < m; ++i) {
          const double* grow = g.data() + i * n;
          const double* yrow = y.data() + i * n;
          double* drow = da.data() + i * n;
          double gsum = 0.0;
          for (std::size_t j = 0; j < n; ++j) gsum += grow[j];
          for (std::size_t j = 0; j < n; ++j) {
            drow[j] = grow[j] - std::exp(yrow[j]) * gsum;
          }
        }
        t.accumulate(ia, da);
      });
}

inline Var softmax(const Var& a) { return exp(log_softmax(a)); }

// Concatenate rank-2 tensors along `axis` (0 = stack rows, 1 = widen rows).
inline Var concat(const std::vector<Var>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape* tape = parts[0].tape;
  for (const auto& p : parts) detail::require_same_tape(parts[0], p, "concat");
  const std::size_t other = axis == 0 ? 1 : 0;
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    if (v.rank() != 2) throw ShapeError("concat needs rank 2 inputs");
    if (v.shape()[other] != parts[0].value().shape()[other]) {
      throw ShapeError("concat: extent mismatch " + v.shape_str() + " vs " +
                       parts[0].value().shape_str());
    }
    total += v.shape()[axis];
  }
  std::vector<std::size_t> shp = parts[0].value().shape();
  shp[axis] = total;
  Tensor out(shp);
  std::vector<int> idx;
  std::vector<std::size_t> extents;
  idx.reserve(parts.size());
  extents.reserve(parts.size());
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    const std::size_t pr = v.rows(), pc = v.cols();
    if (axis == 0) {
      std::copy(v.data(), v.data() + v.size(), out.data() + off * pc);
    } else {
      for (std::size_t i = 0; i < pr; ++i) {
        std::copy(v.data() + i * pc, v.data() + (i + 1) * pc,
                  out.data() + i * total + off);
      }
    }
    idx.push_back(p.index);
    extents.push_back(v.shape()[axis]);
    off += v.shape()[axis];
  }
  return tape->emplace(
      std::move(out),
      [idx, extents, axis, total](Tape& t, const Tensor& g) {
        std::size_t off = 0;
        for (std::size_t p = 0; p < idx.size(); ++p) {
          const Tensor& v = t.value(idx[p]);
          Tensor part(v.shape());
          const std::size_t pr = part.rows(), pc = part.cols();
          if (axis == 0) {
            std::copy(g.data() + off * pc, g.data() + (off + pr) * pc,
                      part.data());
          } else {
            for (std::size_t i = 0; i < pr; ++i) {
              std::copy(g.data() + i * total + off,
                        g.data() + i * total + off + pc, part.data() + i * pc);
            }
          }
          t.accumulate(idx[p], part);
          off += extents[p];
        }
      });
}

// Contiguous sub-block along `axis` of a rank-2 tensor.
inline Var slice(const Var& a, int axis, std::size_t start, std::size_t len) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("slice needs rank 2");
  const std::size_t m = av.rows(), n = av.cols();
  const std::size_t extent = axis == 0 ? m : n;
  if (start + len > extent) {
    throw ShapeError("slice out of range on " + av.shape_str());
  }
  Tensor out(axis == 0 ? std::vector<std::size_t>{len, n}
                       : std::vector<std::size_t>{m, len});
  if (axis == 0) {
    std::copy(av.data() + start * n, av.data() + (start + len) * n, out.data());
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      std::copy(av.data() + i * n + start, av.data() + i * n + start + len,
                out.data() + i * len);
    }
  }
  int ia = a.index;
  return a.tape->emplace(
      std::move(out), [ia, axis, start, len, m, n](Tape& t, const Tensor& g) {
        Tensor da({m, n});
        if (axis == 0) {
          std::copy(g.data(), g.data() + g.size(), da.data() + start * n);
        } else {
          for (std::size_t i = 0; i < m; ++i) {
            std::copy(g.data() + i * len, g.data() + (i + 1) * len,
                      da.data() + i * n + start);
          }
        }
        t.accumulate(ia, da);
      });
}

inline Var row(const Var& a, std::size_t r) { return slice(a, 0, r, 1); }

// Adds a 1 x n row vector to every row of an m x n tensor.
inline Var add_rowvec(const Var& a, const Var& r) {
  detail::require_same_tape(a, r, "add_rowvec");
  const Tensor& av = a.value();
  const Tensor& rv = r.value();
  if (av.rank() != 2 || rv.rank() != 2 || rv.rows() != 1 ||
      rv.cols() != av.cols()) {
    throw ShapeError("add_rowvec: shapes " + av.shape_str() + " vs " +
                     rv.shape_str());
  }
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = av;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += rv.at(0, j);
  }
  int ia = a.index, ir = r.index;
  return a.tape->emplace(std::move(out),
                         [ia, ir, m, n](Tape& t, const Tensor& g) {
                           t.accumulate(ia, g);
                           Tensor dr({1, n});
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < n; ++j) {
                               dr.at(0, j) += g.at(i, j);
                             }
                           }
                           t.accumulate(ir, dr);
                         });
}

// Sum of all elements, as a 1 x 1 tensor.
inline Var sum_all(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  int ia = a.index;
  return a.tape->emplace(Tensor({1, 1}, {s}), [ia](Tape& t, const Tensor& g) {
    Tensor da(t.value(ia).shape());
    for (auto& x : da.values()) x = g.at(0);
    t.accumulate(ia, da);
  });
}

// Single element as a 1 x 1 tensor.
inline Var pick(const Var& a, std::size_t i, std::size_t j) {
  return slice(slice(a, 0, i, 1), 1, j, 1);
}

inline Var transpose(const Var& a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw ShapeError("transpose needs rank 2");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  }
  int ia = a.index;
  return a.tape->emplace(std::move(out),
                         [ia, m, n](Tape& t, const Tensor& g) {
                           Tensor da({m, n});
                           for (std::size_t i = 0; i < m; ++i) {
                             for (std::size_t j = 0; j < n; ++j) {
                               da.at(i, j) = g.at(j, i);
                             }
                           }
                           t.accumulate(ia, da);
                         });
}

// Embed a 1 x len row into a zero-padded 1 x total row at `offset`.
inline Var scatter_row(const Var& a, std::size_t total, std::size_t offset) {
  const Tensor& av = a.value();
  if (av.rank() != 2 || av.rows() != 1 || offset + av.cols() > total) {
    throw ShapeError("scatter_row: shape " + av.shape_str() + " into 1x" +
                     std::to_string(total) + " at " + std::to_string(offset));
  }
  const std::size_t len = av.cols();
  Tensor out({1, total});
  std::copy(av.data(), av.data() + len, out.data() + offset);
  int ia = a.index;
  return a.tape->emplace(std::move(out),
                         [ia, offset, len](Tape& t, const Tensor& g) {
                           Tensor da({1, len});
                           std::copy(g.data() + offset, g.data() + offset + len,
                                     da.data());
                           t.accumulate(ia, da);
                         });
}

// 1-D convolution of a 1 x T row with K filters of width W (zero padding,
// same length). Output is T x K so it can feed a matmul directly.
inline Var conv1d_row(const Var& w, const Var& filters) {
  detail::require_same_tape(w, filters, "conv1d_row");
  const Tensor& wv = w.value();
  const Tensor& fv = filters.value();
  if (wv.rank() != 2 || wv.rows() != 1 || fv.rank() != 2) {
    throw ShapeError("conv1d_row: shapes " + wv.shape_str() + " vs " +
                     fv.shape_str());
  }
  const std::size_t T = wv.cols(), K = fv.rows(), W = fv.cols();
  const std::ptrdiff_t c = static_cast<std::ptrdiff_t>(W - 1) / 2;
  Tensor out({T, K});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      double acc = 0.0;
      for (std::size_t d = 0; d < W; ++d) {
        const std::ptrdiff_t s =
            static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(d) - c;
        if (s >= 0 && s < static_cast<std::ptrdiff_t>(T)) {
          acc += fv.at(k, d) * wv.at(0, static_cast<std::size_t>(s));
        }
      }
      out.at(t, k) = acc;
    }
  }
  int iw = w.index, ifi = filters.index;
  return w.tape->emplace(
      std::move(out), [iw, ifi, T, K, W, c](Tape& t, const Tensor& g) {
        const Tensor& wv = t.value(iw);
        const Tensor& fv = t.value(ifi);
        Tensor dw({1, T});
        Tensor df({K, W});
        for (std::size_t tt = 0; tt < T; ++tt) {
          for (std::size_t k = 0; k < K; ++k) {
            const double go = g.at(tt, k);
            if (go == 0.0) continue;
            for (std::size_t d = 0; d < W; ++d) {
              const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(tt) +
                                       static_cast<std::ptrdiff_t>(d) - c;
              if (s >= 0 && s < static_cast<std::ptrdiff_t>(T)) {
                df.at(k, d) += go * wv.at(0, static_cast<std::size_t>(s));
                dw.at(0, static_cast<std::size_t>(s)) += go * fv.at(k, d);
              }
            }
          }
        }
        t.accumulate(iw, dw);
        t.accumulate(ifi, df);
      });
}

// Inverted dropout on the tape: each element is zeroed with probability
// `rate` and survivors are scaled by 1/(1-rate). Identity when not training.
inline Var dropout(const Var& a, double rate, Rng& rng, bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must be in [0, 1), got " +
                                std::to_string(rate));
  }
  if (!training || rate == 0.0) return a;
  const Tensor& av = a.value();
  auto mask = std::make_shared<std::vector<double>>(av.size());
  const double keep_scale = 1.0 / (1.0 - rate);
  Tensor out = av;
  for (std::size_t i = 0; i < av.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? 0.0 : keep_scale;
    out.at(i) *= (*mask)[i];
  }
  int ia = a.index;
  return a.tape->emplace(std::move(out),
                         [ia, mask](Tape& t, const Tensor& g) {
                           Tensor da = g;
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             da.at(i) *= (*mask)[i];
                           }
                           t.accumulate(ia, da);
                         });
}

// One LSTM cell step, composed from tape primitives. Gate packing along the
// 4u columns of wx/wh/b is [input, forget, cell, output]. Standard cell, no
// peepholes.
struct LstmState {
  Var h;
  Var c;
};

// Precomputed input contribution variant: xw = x * wx (1 x 4u) is supplied by
// the caller so whole-sequence input projections can be batched.
inline LstmState lstm_cell_from_xw(const Var& xw, const LstmState& prev,
                                   const Var& wh, const Var& b) {
  const std::size_t units = prev.h.value().cols();
  Var gates = add_rowvec(add(xw, matmul(prev.h, wh)), b);
  if (gates.value().cols() != 4 * units) {
    throw ShapeError("lstm_cell: gate width " +
                     std::to_string(gates.value().cols()) + " != 4*" +
                     std::to_string(units));
  }
  Var gi = sigmoid(slice(gates, 1, 0, units));
  Var gf = sigmoid(slice(gates, 1, units, units));
  Var gc = tanh(slice(gates, 1, 2 * units, units));
  Var go = sigmoid(slice(gates, 1, 3 * units, units));
  Var c = add(mul(gf, prev.c), mul(gi, gc));
  Var h = mul(go, tanh(c));
  return LstmState{h, c};
}

inline LstmState lstm_cell(const Var& x, const LstmState& prev, const Var& wx,
                           const Var& wh, const Var& b) {
  return lstm_cell_from_xw(matmul(x, wx), prev, wh, b);
}

// ---------------------------------------------------------------------------
// Tensor-level stochastic transforms (no gradient flow).
// ---------------------------------------------------------------------------

// Adds elementwise N(0, std^2) noise. Bitwise identity when std == 0.
inline Tensor gaussian_noise(const Tensor& t, double std, Rng& rng) {
  if (std < 0.0) {
    throw std::invalid_argument("gaussian_noise: negative std " +
                                std::to_string(std));
  }
  if (std == 0.0) return t;
  Tensor out = t;
  for (auto& x : out.values()) x += std * rng.gaussian();
  return out;
}

// Tensor-level dropout with the same semantics as the tape op.
inline Tensor dropout_values(const Tensor& t, double rate, Rng& rng,
                             bool training) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout rate must be in [0, 1), got " +
                                std::to_string(rate));
  }
  if (!training || rate == 0.0) return t;
  Tensor out = t;
  const double keep_scale = 1.0 / (1.0 - rate);
  for (auto& x : out.values()) {
    x *= rng.uniform() < rate ? 0.0 : keep_scale;
  }
  return out;
}

}  // namespace easr
