#include "datml/compute/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "datml/error.hpp"

namespace datml::inline DATML_ABI::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

const NodePtr& node_of(const Tensor& t) {
  if (!t.defined()) throw ContractViolation("operation applied to an undefined tensor");
  return t.node();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ContractViolation(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                            " vs " + shape_string(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ContractViolation(std::string(op) + ": expected rank " + std::to_string(rank) +
                            ", got " + shape_string(t.shape()));
  }
}

/// Builds an interior node. Parents that do not require gradients are kept
/// out of the graph; with none left the result is a plain constant.
Tensor make_result(Shape shape, std::vector<Scalar> data, std::vector<NodePtr> parents,
                   std::function<void(Node&)> backward_fn) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (any) {
    node->requires_grad = true;
    node->parents = std::move(parents);
    node->backward = std::move(backward_fn);
  }
  return Tensor::wrap(std::move(node));
}

/// Gradient buffer of parent i, or an empty span when it is not tracked.
std::span<Scalar> parent_grad(Node& self, std::size_t i) {
  auto& p = *self.parents[i];
  if (!p.requires_grad) return {};
  return p.ensure_grad();
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k) {
      auto g = parent_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {node_of(a), node_of(b)}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * y[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * x[i];
  });
}

Tensor scale(const Tensor& a, Scalar factor) {
  const auto x = a.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return make_result(a.shape(), std::move(out), {node_of(a)}, [factor](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

Tensor scale_by(const Tensor& s, const Tensor& v) {
  if (s.numel() != 1) throw ContractViolation("scale_by: factor must hold one element");
  const Scalar f = s.data()[0];
  const auto x = v.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f * x[i];
  return make_result(v.shape(), std::move(out), {node_of(s), node_of(v)}, [](Node& self) {
    const Scalar f = self.parents[0]->data[0];
    const auto& x = self.parents[1]->data;
    auto gs = parent_grad(self, 0);
    if (!gs.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < x.size(); ++i) acc += double(self.grad[i]) * x[i];
      gs[0] += static_cast<Scalar>(acc);
    }
    auto gv = parent_grad(self, 1);
    for (std::size_t i = 0; i < gv.size(); ++i) gv[i] += self.grad[i] * f;
  });
}

Tensor one_minus(const Tensor& a) {
  const auto x = a.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Scalar(1) - x[i];
  return make_result(a.shape(), std::move(out), {node_of(a)}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
  });
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw ContractViolation("add_n: no terms");
  std::vector<NodePtr> parents;
  std::vector<double> acc(terms[0].numel(), 0.0);
  for (const auto& t : terms) {
    require_same_shape(terms[0], t, "add_n");
    const auto x = t.data();
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
    parents.push_back(node_of(t));
  }
  std::vector<Scalar> out(acc.begin(), acc.end());
  return make_result(terms[0].shape(), std::move(out), std::move(parents), [](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto g = parent_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ContractViolation("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {node_of(a)}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor matvec(const Tensor& w, const Tensor& x) {
  require_rank(w, 2, "matvec");
  require_rank(x, 1, "matvec");
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  if (x.dim(0) != cols) {
    throw ContractViolation("matvec: " + shape_string(w.shape()) + " x " + shape_string(x.shape()));
  }
  const auto wd = w.data(), xd = x.data();
  std::vector<Scalar> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = wd.data() + r * cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < cols; ++c) acc += double(row[c]) * xd[c];
    out[r] = static_cast<Scalar>(acc);
  }
  return make_result({rows}, std::move(out), {node_of(w), node_of(x)}, [rows, cols](Node& self) {
    const auto& wd = self.parents[0]->data;
    const auto& xd = self.parents[1]->data;
    auto gw = parent_grad(self, 0);
    if (!gw.empty()) {
      for (std::size_t r = 0; r < rows; ++r) {
        const Scalar g = self.grad[r];
        if (g == Scalar(0)) continue;
        Scalar* row = gw.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += g * xd[c];
      }
    }
    auto gx = parent_grad(self, 1);
    if (!gx.empty()) {
      std::vector<double> acc(cols, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        const double g = self.grad[r];
        const Scalar* row = wd.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) acc[c] += g * row[c];
      }
      for (std::size_t c = 0; c < cols; ++c) gx[c] += static_cast<Scalar>(acc[c]);
    }
  });
}

Tensor matvec_t(const Tensor& w, const Tensor& x) {
  require_rank(w, 2, "matvec_t");
  require_rank(x, 1, "matvec_t");
  const std::size_t rows = w.dim(0), cols = w.dim(1);
  if (x.dim(0) != rows) {
    throw ContractViolation("matvec_t: " + shape_string(w.shape()) + "ᵀ x " + shape_string(x.shape()));
  }
  const auto wd = w.data(), xd = x.data();
  std::vector<double> acc(cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const double xv = xd[r];
    const Scalar* row = wd.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) acc[c] += xv * row[c];
  }
  std::vector<Scalar> out(acc.begin(), acc.end());
  return make_result({cols}, std::move(out), {node_of(w), node_of(x)}, [rows, cols](Node& self) {
    const auto& wd = self.parents[0]->data;
    const auto& xd = self.parents[1]->data;
    auto gw = parent_grad(self, 0);
    if (!gw.empty()) {
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar* row = gw.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += xd[r] * self.grad[c];
      }
    }
    auto gx = parent_grad(self, 1);
    if (!gx.empty()) {
      for (std::size_t r = 0; r < rows; ++r) {
        const Scalar* row = wd.data() + r * cols;
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) acc += double(row[c]) * self.grad[c];
        gx[r] += static_cast<Scalar>(acc);
      }
    }
  });
}

Tensor linear(const Tensor& w, const Tensor& x, const Tensor& b) {
  Tensor y = matvec(w, x);
  if (!b.defined()) return y;
  return add(y, b);
}

namespace {

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto x = a.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), {node_of(a)}, [deriv](Node& self) {
    auto g = parent_grad(self, 0);
    const auto& x = self.parents[0]->data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * deriv(x[i], self.data[i]);
  });
}

Scalar stable_sigmoid(Scalar v) {
  if (v >= 0) return Scalar(1) / (Scalar(1) + std::exp(-v));
  const Scalar e = std::exp(v);
  return e / (Scalar(1) + e);
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary(a, [](Scalar v) { return std::tanh(v); },
               [](Scalar, Scalar y) { return Scalar(1) - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a, stable_sigmoid, [](Scalar, Scalar y) { return y * (Scalar(1) - y); });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](Scalar v) { return std::exp(v); }, [](Scalar, Scalar y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(a, [](Scalar v) { return std::log(v); }, [](Scalar x, Scalar) { return Scalar(1) / x; });
}

namespace {

/// Row-wise softmax over the last dimension into `out`.
void softmax_rows(std::span<const Scalar> x, std::size_t width, std::span<Scalar> out) {
  for (std::size_t base = 0; base < x.size(); base += width) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t i = 0; i < width; ++i) mx = std::max(mx, x[base + i]);
    double z = 0.0;
    for (std::size_t i = 0; i < width; ++i) z += std::exp(double(x[base + i]) - mx);
    for (std::size_t i = 0; i < width; ++i) {
      out[base + i] = static_cast<Scalar>(std::exp(double(x[base + i]) - mx) / z);
    }
  }
}

void softmax_backward(Node& self, std::size_t width) {
  auto g = parent_grad(self, 0);
  const auto& y = self.data;
  for (std::size_t base = 0; base < y.size(); base += width) {
    double dotp = 0.0;
    for (std::size_t i = 0; i < width; ++i) dotp += double(self.grad[base + i]) * y[base + i];
    for (std::size_t i = 0; i < width; ++i) {
      g[base + i] += static_cast<Scalar>(y[base + i] * (self.grad[base + i] - dotp));
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& logits) {
  const std::size_t width = last_dim(logits);
  std::vector<Scalar> out(logits.numel());
  softmax_rows(logits.data(), width, out);
  return make_result(logits.shape(), std::move(out), {node_of(logits)},
                     [width](Node& self) { softmax_backward(self, width); });
}

Tensor log_softmax(const Tensor& logits) {
  const std::size_t width = last_dim(logits);
  const auto x = logits.data();
  std::vector<Scalar> out(x.size());
  for (std::size_t base = 0; base < x.size(); base += width) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t i = 0; i < width; ++i) mx = std::max(mx, x[base + i]);
    double z = 0.0;
    for (std::size_t i = 0; i < width; ++i) z += std::exp(double(x[base + i]) - mx);
    const double lse = mx + std::log(z);
    for (std::size_t i = 0; i < width; ++i) out[base + i] = static_cast<Scalar>(x[base + i] - lse);
  }
  return make_result(logits.shape(), std::move(out), {node_of(logits)}, [width](Node& self) {
    auto g = parent_grad(self, 0);
    const auto& y = self.data;
    for (std::size_t base = 0; base < y.size(); base += width) {
      double gsum = 0.0;
      for (std::size_t i = 0; i < width; ++i) gsum += self.grad[base + i];
      for (std::size_t i = 0; i < width; ++i) {
        g[base + i] += static_cast<Scalar>(self.grad[base + i] - std::exp(double(y[base + i])) * gsum);
      }
    }
  });
}

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw ContractViolation("concat: no parts");
  std::vector<Scalar> out;
  std::vector<NodePtr> parents;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    require_rank(p, 1, "concat");
    out.insert(out.end(), p.data().begin(), p.data().end());
    parents.push_back(node_of(p));
    sizes.push_back(p.numel());
  }
  const std::size_t n = out.size();
  return make_result({n}, std::move(out), std::move(parents), [sizes](Node& self) {
    std::size_t offset = 0;
    for (std::size_t k = 0; k < sizes.size(); ++k) {
      auto g = parent_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offset + i];
      offset += sizes[k];
    }
  });
}

Tensor slice(const Tensor& v, std::size_t offset, std::size_t length) {
  require_rank(v, 1, "slice");
  if (length == 0 || offset + length > v.numel()) {
    throw ContractViolation("slice: range [" + std::to_string(offset) + ", " +
                            std::to_string(offset + length) + ") outside " + shape_string(v.shape()));
  }
  std::vector<Scalar> out(v.data().begin() + offset, v.data().begin() + offset + length);
  return make_result({length}, std::move(out), {node_of(v)}, [offset](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[offset + i] += self.grad[i];
  });
}

Tensor stack(std::span<const Tensor> rows) {
  if (rows.empty()) throw ContractViolation("stack: no rows");
  const std::size_t width = rows[0].numel();
  std::vector<Scalar> out;
  out.reserve(width * rows.size());
  std::vector<NodePtr> parents;
  for (const auto& r : rows) {
    require_rank(r, 1, "stack");
    if (r.numel() != width) throw ContractViolation("stack: ragged rows");
    out.insert(out.end(), r.data().begin(), r.data().end());
    parents.push_back(node_of(r));
  }
  return make_result({rows.size(), width}, std::move(out), std::move(parents), [width](Node& self) {
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      auto g = parent_grad(self, k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[k * width + i];
    }
  });
}

Tensor embedding(const Tensor& table, std::size_t id) {
  require_rank(table, 2, "embedding");
  if (id >= table.dim(0)) {
    throw ContractViolation("embedding: id " + std::to_string(id) + " outside table of " +
                            std::to_string(table.dim(0)) + " rows");
  }
  const std::size_t width = table.dim(1);
  std::vector<Scalar> out(table.data().begin() + id * width, table.data().begin() + (id + 1) * width);
  return make_result({width}, std::move(out), {node_of(table)}, [id, width](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < width; ++i) g[id * width + i] += self.grad[i];
  });
}

Tensor gru_cell(const Tensor& x, const Tensor& h, const Tensor& w_ih, const Tensor& w_hh,
                const Tensor& b_ih, const Tensor& b_hh) {
  require_rank(x, 1, "gru_cell");
  require_rank(h, 1, "gru_cell");
  const std::size_t in = x.numel(), hid = h.numel();
  if (w_ih.shape() != Shape{3 * hid, in} || w_hh.shape() != Shape{3 * hid, hid} ||
      b_ih.shape() != Shape{3 * hid} || b_hh.shape() != Shape{3 * hid}) {
    throw ContractViolation("gru_cell: parameter shapes do not match input " + std::to_string(in) +
                            " / hidden " + std::to_string(hid));
  }
  const auto xd = x.data(), hd = h.data(), wi = w_ih.data(), wh = w_hh.data();
  const auto bi = b_ih.data(), bh = b_hh.data();
  std::vector<double> gi(3 * hid), gh(3 * hid);
  for (std::size_t r = 0; r < 3 * hid; ++r) {
    double a = bi[r];
    const Scalar* row = wi.data() + r * in;
    for (std::size_t c = 0; c < in; ++c) a += double(row[c]) * xd[c];
    gi[r] = a;
    double b = bh[r];
    const Scalar* hrow = wh.data() + r * hid;
    for (std::size_t c = 0; c < hid; ++c) b += double(hrow[c]) * hd[c];
    gh[r] = b;
  }
  // Saved activations: reset, update, candidate, and the hidden-side candidate term.
  std::vector<Scalar> reset(hid), update(hid), cand(hid), gh_new(hid), out(hid);
  for (std::size_t j = 0; j < hid; ++j) {
    reset[j] = stable_sigmoid(static_cast<Scalar>(gi[j] + gh[j]));
    update[j] = stable_sigmoid(static_cast<Scalar>(gi[hid + j] + gh[hid + j]));
    gh_new[j] = static_cast<Scalar>(gh[2 * hid + j]);
    cand[j] = std::tanh(static_cast<Scalar>(gi[2 * hid + j] + double(reset[j]) * gh_new[j]));
    out[j] = (Scalar(1) - update[j]) * cand[j] + update[j] * hd[j];
  }
  return make_result(
      {hid}, std::move(out),
      {node_of(x), node_of(h), node_of(w_ih), node_of(w_hh), node_of(b_ih), node_of(b_hh)},
      [in, hid, reset = std::move(reset), update = std::move(update), cand = std::move(cand),
       gh_new = std::move(gh_new)](Node& self) {
        const auto& xd = self.parents[0]->data;
        const auto& hd = self.parents[1]->data;
        const auto& wi = self.parents[2]->data;
        const auto& wh = self.parents[3]->data;
        std::vector<double> dgi(3 * hid), dgh(3 * hid), dh_direct(hid);
        for (std::size_t j = 0; j < hid; ++j) {
          const double dout = self.grad[j];
          const double dn = dout * (1.0 - update[j]);
          const double du = dout * (double(hd[j]) - cand[j]);
          dh_direct[j] = dout * update[j];
          const double dn_pre = dn * (1.0 - double(cand[j]) * cand[j]);
          const double dr = dn_pre * gh_new[j];
          const double dr_pre = dr * reset[j] * (1.0 - reset[j]);
          const double du_pre = du * update[j] * (1.0 - update[j]);
          dgi[j] = dr_pre;
          dgh[j] = dr_pre;
          dgi[hid + j] = du_pre;
          dgh[hid + j] = du_pre;
          dgi[2 * hid + j] = dn_pre;
          dgh[2 * hid + j] = dn_pre * reset[j];
        }
        if (auto g = parent_grad(self, 2); !g.empty()) {
          for (std::size_t r = 0; r < 3 * hid; ++r) {
            Scalar* row = g.data() + r * in;
            const Scalar d = static_cast<Scalar>(dgi[r]);
            for (std::size_t c = 0; c < in; ++c) row[c] += d * xd[c];
          }
        }
        if (auto g = parent_grad(self, 3); !g.empty()) {
          for (std::size_t r = 0; r < 3 * hid; ++r) {
            Scalar* row = g.data() + r * hid;
            const Scalar d = static_cast<Scalar>(dgh[r]);
            for (std::size_t c = 0; c < hid; ++c) row[c] += d * hd[c];
          }
        }
        if (auto g = parent_grad(self, 4); !g.empty()) {
          for (std::size_t r = 0; r < 3 * hid; ++r) g[r] += static_cast<Scalar>(dgi[r]);
        }
        if (auto g = parent_grad(self, 5); !g.empty()) {
          for (std::size_t r = 0; r < 3 * hid; ++r) g[r] += static_cast<Scalar>(dgh[r]);
        }
        if (auto g = parent_grad(self, 0); !g.empty()) {
          std::vector<double> acc(in, 0.0);
          for (std::size_t r = 0; r < 3 * hid; ++r) {
            const Scalar* row = wi.data() + r * in;
            for (std::size_t c = 0; c < in; ++c) acc[c] += dgi[r] * row[c];
          }
          for (std::size_t c = 0; c < in; ++c) g[c] += static_cast<Scalar>(acc[c]);
        }
        if (auto g = parent_grad(self, 1); !g.empty()) {
          std::vector<double> acc(dh_direct);
          for (std::size_t r = 0; r < 3 * hid; ++r) {
            const Scalar* row = wh.data() + r * hid;
            for (std::size_t c = 0; c < hid; ++c) acc[c] += dgh[r] * row[c];
          }
          for (std::size_t c = 0; c < hid; ++c) g[c] += static_cast<Scalar>(acc[c]);
        }
      });
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p >= 1.0) throw ContractViolation("dropout: rate must lie in [0, 1)");
  if (!training || p == 0.0) return x;
  const Scalar keep_scale = static_cast<Scalar>(1.0 / (1.0 - p));
  std::vector<Scalar> mask(x.numel());
  for (auto& m : mask) m = uniform01(rng) < p ? Scalar(0) : keep_scale;
  const auto xd = x.data();
  std::vector<Scalar> out(xd.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] * mask[i];
  return make_result(x.shape(), std::move(out), {node_of(x)}, [mask = std::move(mask)](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += v;
  return make_result({1}, {static_cast<Scalar>(acc)}, {node_of(a)}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (auto& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  double acc = 0.0;
  for (auto v : a.data()) acc += v;
  const double n = static_cast<double>(a.numel());
  return make_result({1}, {static_cast<Scalar>(acc / n)}, {node_of(a)}, [n](Node& self) {
    auto g = parent_grad(self, 0);
    const Scalar d = static_cast<Scalar>(self.grad[0] / n);
    for (auto& v : g) v += d;
  });
}

Tensor dot(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "dot");
  double acc = 0.0;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) acc += double(x[i]) * y[i];
  return make_result({1}, {static_cast<Scalar>(acc)}, {node_of(a), node_of(b)}, [](Node& self) {
    const auto& x = self.parents[0]->data;
    const auto& y = self.parents[1]->data;
    const Scalar d = self.grad[0];
    auto ga = parent_grad(self, 0);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += d * y[i];
    auto gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += d * x[i];
  });
}

Tensor pick(const Tensor& v, std::size_t index) {
  if (index >= v.numel()) throw ContractViolation("pick: index out of range");
  return make_result({1}, {v.data()[index]}, {node_of(v)}, [index](Node& self) {
    parent_grad(self, 0)[index] += self.grad[0];
  });
}

Tensor cross_entropy(const Tensor& logits, std::size_t target) {
  require_rank(logits, 1, "cross_entropy");
  if (target >= logits.numel()) throw ContractViolation("cross_entropy: target out of range");
  const std::size_t n = logits.numel();
  std::vector<Scalar> probs(n);
  softmax_rows(logits.data(), n, probs);
  const auto x = logits.data();
  Scalar mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (auto v : x) z += std::exp(double(v) - mx);
  const double loss = -(double(x[target]) - mx - std::log(z));
  return make_result({1}, {static_cast<Scalar>(loss)}, {node_of(logits)},
                     [target, probs = std::move(probs)](Node& self) {
                       auto g = parent_grad(self, 0);
                       const Scalar d = self.grad[0];
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += d * probs[i];
                       g[target] -= d;
                     });
}

Tensor nll_of_probability(const Tensor& probs, std::size_t target) {
  if (target >= probs.numel()) throw ContractViolation("nll_of_probability: target out of range");
  const Scalar p = probs.data()[target];
  return make_result({1}, {-std::log(p)}, {node_of(probs)}, [target](Node& self) {
    const Scalar p = self.parents[0]->data[target];
    parent_grad(self, 0)[target] -= self.grad[0] / p;
  });
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, std::span<const Scalar> noise,
                      bool hard) {
  if (!(temperature > 0.0)) throw InvalidArgument("gumbel_softmax: temperature must be positive");
  if (noise.size() != logits.numel()) {
    throw ContractViolation("gumbel_softmax: noise size does not match logits");
  }
  const std::size_t width = last_dim(logits);
  const auto x = logits.data();
  std::vector<Scalar> perturbed(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    perturbed[i] = static_cast<Scalar>((double(x[i]) + noise[i]) / temperature);
  }
  std::vector<Scalar> soft(x.size());
  softmax_rows(perturbed, width, soft);
  std::vector<Scalar> out = soft;
  if (hard) {
    for (std::size_t base = 0; base < out.size(); base += width) {
      std::size_t best = base;
      for (std::size_t i = base + 1; i < base + width; ++i) {
        if (soft[i] > soft[best]) best = i;
      }
      for (std::size_t i = base; i < base + width; ++i) out[i] = i == best ? Scalar(1) : Scalar(0);
    }
  }
  const Scalar inv_t = static_cast<Scalar>(1.0 / temperature);
  return make_result(logits.shape(), std::move(out), {node_of(logits)},
                     [width, inv_t, soft = std::move(soft)](Node& self) {
                       auto g = parent_grad(self, 0);
                       for (std::size_t base = 0; base < soft.size(); base += width) {
                         double dotp = 0.0;
                         for (std::size_t i = 0; i < width; ++i) {
                           dotp += double(self.grad[base + i]) * soft[base + i];
                         }
                         for (std::size_t i = 0; i < width; ++i) {
                           g[base + i] += static_cast<Scalar>(
                               soft[base + i] * (self.grad[base + i] - dotp) * inv_t);
                         }
                       }
                     });
}

Tensor gumbel_softmax(const Tensor& logits, double temperature, Rng& rng, bool hard) {
  std::vector<Scalar> noise(logits.numel());
  for (auto& g : noise) g = static_cast<Scalar>(gumbel(rng));
  return gumbel_softmax(logits, temperature, noise, hard);
}

Tensor kl_categorical(const Tensor& q, const Tensor& p) {
  require_same_shape(q, p, "kl_categorical");
  const auto qd = q.data(), pd = p.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < qd.size(); ++i) {
    if (qd[i] <= Scalar(0)) continue;
    if (pd[i] <= Scalar(0)) throw InvalidArgument("kl_categorical: infinite divergence (q > 0 where p = 0)");
    acc += double(qd[i]) * (std::log(double(qd[i])) - std::log(double(pd[i])));
  }
  acc = std::max(acc, 0.0);
  return make_result({1}, {static_cast<Scalar>(acc)}, {node_of(q), node_of(p)}, [](Node& self) {
    const auto& qd = self.parents[0]->data;
    const auto& pd = self.parents[1]->data;
    const double d = self.grad[0];
    auto gq = parent_grad(self, 0);
    for (std::size_t i = 0; i < gq.size(); ++i) {
      if (qd[i] <= Scalar(0)) continue;
      gq[i] += static_cast<Scalar>(d * (std::log(double(qd[i])) - std::log(double(pd[i])) + 1.0));
    }
    auto gp = parent_grad(self, 1);
    for (std::size_t i = 0; i < gp.size(); ++i) {
      if (qd[i] <= Scalar(0)) continue;
      gp[i] -= static_cast<Scalar>(d * qd[i] / pd[i]);
    }
  });
}

Tensor scatter_add(const Tensor& v, std::span<const std::size_t> index, std::size_t size) {
  require_rank(v, 1, "scatter_add");
  if (index.size() != v.numel()) throw ContractViolation("scatter_add: index length mismatch");
  std::vector<double> acc(size, 0.0);
  const auto x = v.data();
  for (std::size_t j = 0; j < index.size(); ++j) {
    if (index[j] >= size) throw ContractViolation("scatter_add: index out of range");
    acc[index[j]] += x[j];
  }
  std::vector<Scalar> out(acc.begin(), acc.end());
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result({size}, std::move(out), {node_of(v)}, [idx = std::move(idx)](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t j = 0; j < idx.size(); ++j) g[j] += self.grad[idx[j]];
  });
}

Tensor zero_extend(const Tensor& v, std::size_t size) {
  require_rank(v, 1, "zero_extend");
  if (size < v.numel()) throw ContractViolation("zero_extend: target smaller than input");
  if (size == v.numel()) return v;
  std::vector<Scalar> out(size, Scalar(0));
  std::copy(v.data().begin(), v.data().end(), out.begin());
  return make_result({size}, std::move(out), {node_of(v)}, [](Node& self) {
    auto g = parent_grad(self, 0);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

}  // namespace datml::inline DATML_ABI::ops
