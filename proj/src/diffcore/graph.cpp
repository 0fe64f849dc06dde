#include "notifdt/diffcore/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace notifdt::diff {

template <typename S>
Graph<S>::Graph(const ParameterSet<S>& params, GradMode mode) : params_(&params), mode_(mode) {
  if (mode_ == GradMode::kRecord) {
    throw ContractError("recording graph requires a mutable ParameterSet");
  }
}

template <typename S>
Graph<S>::Graph(ParameterSet<S>& params, GradMode mode)
    : params_(&params), mutable_params_(&params), mode_(mode) {}

template <typename S>
Var Graph<S>::push(Tensor<S> value, const char* op, bool needs_grad, std::string label) {
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.label = std::move(label);
  n.needs_grad = needs_grad && mode_ == GradMode::kRecord;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename S>
void Graph<S>::set_back(Var v, std::function<void()> back) {
  if (nodes_[v.id].needs_grad) nodes_[v.id].back = std::move(back);
}

template <typename S>
Tensor<S>& Graph<S>::grad_buf(int id) {
  Node& n = nodes_[id];
  if (n.grad.data.empty()) n.grad = Tensor<S>(n.value.shape);
  return n.grad;
}

template <typename S>
const typename Graph<S>::Node& Graph<S>::node(Var v, const char* op) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractError(std::string(op) + ": variable does not belong to this graph");
  }
  return nodes_[v.id];
}

template <typename S>
void Graph<S>::shape_fail(const char* op, const std::string& detail) const {
  throw ShapeError(std::string(op) + " [node " + std::to_string(nodes_.size()) + "]: " + detail);
}

template <typename S>
Var Graph<S>::input(Tensor<S> value, std::string label) {
  return push(std::move(value), "input", false, std::move(label));
}

template <typename S>
Var Graph<S>::param(std::size_t index) {
  const auto& p = (*params_)[index];
  Var v = push(p.value, "param", p.trainable, p.name);
  nodes_[v.id].param = static_cast<int>(index);
  return v;
}

template <typename S>
Var Graph<S>::param(std::string_view name) {
  return param(params_->index_of(name));
}

template <typename S>
const Tensor<S>& Graph<S>::value(Var v) const {
  return node(v, "value").value;
}

template <typename S>
Tensor<S> Graph<S>::grad(Var v) const {
  const Node& n = node(v, "grad");
  if (n.grad.data.empty()) return Tensor<S>(n.value.shape);
  return n.grad;
}

template <typename S>
const std::string& Graph<S>::label(Var v) const {
  return node(v, "label").label;
}

// ---------------------------------------------------------------------------
// elementwise / structural

template <typename S>
Var Graph<S>::add(Var a, Var b) {
  const auto& va = node(a, "add").value;
  const auto& vb = node(b, "add").value;
  if (va.shape != vb.shape) shape_fail("add", shape_string(va.shape) + " vs " + shape_string(vb.shape));
  Tensor<S> out(va.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] + vb.data[i];
  Var o = push(std::move(out), "add", needs(a) || needs(b));
  set_back(o, [this, a, b, o] {
    const auto& g = nodes_[o.id].grad;
    for (Var x : {a, b}) {
      if (!needs(x)) continue;
      auto& gx = grad_buf(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::mul(Var a, Var b) {
  const auto& va = node(a, "mul").value;
  const auto& vb = node(b, "mul").value;
  if (va.shape != vb.shape) shape_fail("mul", shape_string(va.shape) + " vs " + shape_string(vb.shape));
  Tensor<S> out(va.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
  Var o = push(std::move(out), "mul", needs(a) || needs(b));
  set_back(o, [this, a, b, o] {
    const auto& g = nodes_[o.id].grad;
    const auto& xa = nodes_[a.id].value;
    const auto& xb = nodes_[b.id].value;
    if (needs(a)) {
      auto& ga = grad_buf(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * xb.data[i];
    }
    if (needs(b)) {
      auto& gb = grad_buf(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb.data[i] += g.data[i] * xa.data[i];
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::scale(Var a, S factor) {
  const auto& va = node(a, "scale").value;
  Tensor<S> out(va.shape);
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = va.data[i] * factor;
  Var o = push(std::move(out), "scale", needs(a));
  set_back(o, [this, a, o, factor] {
    const auto& g = nodes_[o.id].grad;
    auto& ga = grad_buf(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * factor;
  });
  return o;
}

template <typename S>
Var Graph<S>::add_bias(Var x, Var bias) {
  const auto& vx = node(x, "add_bias").value;
  const auto& vb = node(bias, "add_bias").value;
  const std::size_t n = vx.rows(), m = vx.cols();
  if (vb.size() != m) shape_fail("add_bias", shape_string(vx.shape) + " with bias " + shape_string(vb.shape));
  Tensor<S> out(vx.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const S* xr = vx.row(i);
    S* orow = out.row(i);
    for (std::size_t j = 0; j < m; ++j) orow[j] = xr[j] + vb.data[j];
  }
  Var o = push(std::move(out), "add_bias", needs(x) || needs(bias));
  set_back(o, [this, x, bias, o, n, m] {
    const auto& g = nodes_[o.id].grad;
    if (needs(x)) {
      auto& gx = grad_buf(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
    }
    if (needs(bias)) {
      auto& gb = grad_buf(bias.id);
      for (std::size_t i = 0; i < n; ++i) {
        const S* gr = g.row(i);
        for (std::size_t j = 0; j < m; ++j) gb.data[j] += gr[j];
      }
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::gelu(Var x) {
  constexpr S kC = static_cast<S>(0.7978845608028654);  // sqrt(2/pi)
  constexpr S kA = static_cast<S>(0.044715);
  const auto& vx = node(x, "gelu").value;
  Tensor<S> out(vx.shape);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const S z = vx.data[i];
    out.data[i] = S(0.5) * z * (S(1) + std::tanh(kC * (z + kA * z * z * z)));
  }
  Var o = push(std::move(out), "gelu", needs(x));
  set_back(o, [this, x, o] {
    const auto& g = nodes_[o.id].grad;
    const auto& xv = nodes_[x.id].value;
    auto& gx = grad_buf(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const S z = xv.data[i];
      const S t = std::tanh(kC * (z + kA * z * z * z));
      const S d = S(0.5) * (S(1) + t) + S(0.5) * z * (S(1) - t * t) * kC * (S(1) + S(3) * kA * z * z);
      gx.data[i] += g.data[i] * d;
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::sum(Var x) {
  const auto& vx = node(x, "sum").value;
  S total = 0;
  for (S v : vx.data) total += v;
  Var o = push(Tensor<S>::scalar(total), "sum", needs(x));
  set_back(o, [this, x, o] {
    const S g = nodes_[o.id].grad.data[0];
    auto& gx = grad_buf(x.id);
    for (auto& v : gx.data) v += g;
  });
  return o;
}

template <typename S>
Var Graph<S>::concat_cols(Var a, Var b) {
  const auto& va = node(a, "concat_cols").value;
  const auto& vb = node(b, "concat_cols").value;
  const std::size_t n = va.rows(), p = va.cols(), q = vb.cols();
  if (vb.rows() != n) shape_fail("concat_cols", shape_string(va.shape) + " vs " + shape_string(vb.shape));
  Tensor<S> out(Shape{n, p + q});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(va.row(i), p, out.row(i));
    std::copy_n(vb.row(i), q, out.row(i) + p);
  }
  Var o = push(std::move(out), "concat_cols", needs(a) || needs(b));
  set_back(o, [this, a, b, o, n, p, q] {
    const auto& g = nodes_[o.id].grad;
    if (needs(a)) {
      auto& ga = grad_buf(a.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < p; ++j) ga.data[i * p + j] += g.data[i * (p + q) + j];
    }
    if (needs(b)) {
      auto& gb = grad_buf(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < q; ++j) gb.data[i * q + j] += g.data[i * (p + q) + p + j];
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::gather_rows(Var x, std::vector<std::size_t> rows) {
  const auto& vx = node(x, "gather_rows").value;
  const std::size_t m = vx.cols();
  for (std::size_t r : rows) {
    if (r >= vx.rows()) shape_fail("gather_rows", "row " + std::to_string(r) + " of " + shape_string(vx.shape));
  }
  Tensor<S> out(Shape{rows.size(), m});
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(vx.row(rows[i]), m, out.row(i));
  Var o = push(std::move(out), "gather_rows", needs(x));
  set_back(o, [this, x, o, m, rows = std::move(rows)] {
    const auto& g = nodes_[o.id].grad;
    auto& gx = grad_buf(x.id);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const S* gr = g.row(i);
      S* dst = gx.data.data() + rows[i] * m;
      for (std::size_t j = 0; j < m; ++j) dst[j] += gr[j];
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::interleave_rows(const std::vector<Var>& parts) {
  if (parts.empty()) shape_fail("interleave_rows", "no parts");
  const auto& first = node(parts[0], "interleave_rows").value;
  const std::size_t n = first.rows(), d = first.cols(), k = parts.size();
  bool any = false;
  for (Var p : parts) {
    const auto& v = node(p, "interleave_rows").value;
    if (v.rows() != n || v.cols() != d) {
      shape_fail("interleave_rows", shape_string(v.shape) + " vs " + shape_string(first.shape));
    }
    any = any || needs(p);
  }
  Tensor<S> out(Shape{n * k, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t part = 0; part < k; ++part)
      std::copy_n(nodes_[parts[part].id].value.row(i), d, out.row(i * k + part));
  Var o = push(std::move(out), "interleave_rows", any);
  set_back(o, [this, parts, o, n, d, k] {
    const auto& g = nodes_[o.id].grad;
    for (std::size_t part = 0; part < k; ++part) {
      if (!needs(parts[part])) continue;
      auto& gp = grad_buf(parts[part].id);
      for (std::size_t i = 0; i < n; ++i) {
        const S* src = g.row(i * k + part);
        S* dst = gp.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    }
  });
  return o;
}

// ---------------------------------------------------------------------------
// dense

template <typename S>
Var Graph<S>::matmul(Var a, Var b) {
  const auto& va = node(a, "matmul").value;
  const auto& vb = node(b, "matmul").value;
  const std::size_t n = va.rows(), k = va.cols(), m = vb.cols();
  if (vb.rows() != k) {
    shape_fail("matmul", "lhs " + shape_string(va.shape) + " (" + nodes_[a.id].label + ") vs rhs " +
                             shape_string(vb.shape) + " (" + nodes_[b.id].label + ")");
  }
  Tensor<S> out(Shape{n, m});
  for (std::size_t i = 0; i < n; ++i) {
    S* crow = out.row(i);
    const S* arow = va.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const S av = arow[p];
      const S* brow = vb.row(p);
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  Var o = push(std::move(out), "matmul", needs(a) || needs(b));
  set_back(o, [this, a, b, o, n, k, m] {
    const auto& g = nodes_[o.id].grad;
    const auto& xa = nodes_[a.id].value;
    const auto& xb = nodes_[b.id].value;
    if (needs(a)) {
      auto& ga = grad_buf(a.id);
      for (std::size_t i = 0; i < n; ++i) {
        const S* grow = g.row(i);
        S* garow = ga.row(i);
        for (std::size_t p = 0; p < k; ++p) {
          const S* brow = xb.row(p);
          S acc = 0;
          for (std::size_t j = 0; j < m; ++j) acc += grow[j] * brow[j];
          garow[p] += acc;
        }
      }
    }
    if (needs(b)) {
      auto& gb = grad_buf(b.id);
      for (std::size_t i = 0; i < n; ++i) {
        const S* grow = g.row(i);
        const S* arow = xa.row(i);
        for (std::size_t p = 0; p < k; ++p) {
          const S av = arow[p];
          S* gbrow = gb.row(p);
          for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
  return o;
}

namespace {

template <typename S>
struct NormCache {
  std::vector<S> xhat;
  std::vector<S> inv_std;
};

template <typename S>
NormCache<S> normalize_rows(const Tensor<S>& x, S eps) {
  const std::size_t n = x.rows(), m = x.cols();
  NormCache<S> c{std::vector<S>(x.size()), std::vector<S>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const S* r = x.row(i);
    S mean = 0;
    for (std::size_t j = 0; j < m; ++j) mean += r[j];
    mean /= static_cast<S>(m);
    S var = 0;
    for (std::size_t j = 0; j < m; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<S>(m);
    const S inv = S(1) / std::sqrt(var + eps);
    c.inv_std[i] = inv;
    for (std::size_t j = 0; j < m; ++j) c.xhat[i * m + j] = (r[j] - mean) * inv;
  }
  return c;
}

// dx for y = xhat given dxhat, per row.
template <typename S>
void normalize_backward(const NormCache<S>& c, const S* dxhat, S* dx, std::size_t n, std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    const S* dh = dxhat + i * m;
    const S* xh = c.xhat.data() + i * m;
    S mean_d = 0, mean_dx = 0;
    for (std::size_t j = 0; j < m; ++j) {
      mean_d += dh[j];
      mean_dx += dh[j] * xh[j];
    }
    mean_d /= static_cast<S>(m);
    mean_dx /= static_cast<S>(m);
    for (std::size_t j = 0; j < m; ++j) dx[i * m + j] += c.inv_std[i] * (dh[j] - mean_d - xh[j] * mean_dx);
  }
}

}  // namespace

template <typename S>
Var Graph<S>::layernorm(Var x, Var gamma, Var beta, S eps) {
  const auto& vx = node(x, "layernorm").value;
  const auto& vg = node(gamma, "layernorm").value;
  const auto& vb = node(beta, "layernorm").value;
  const std::size_t n = vx.rows(), m = vx.cols();
  if (vg.size() != m || vb.size() != m) {
    shape_fail("layernorm", shape_string(vx.shape) + " with gamma " + shape_string(vg.shape) + " beta " +
                                shape_string(vb.shape));
  }
  auto cache = std::make_shared<NormCache<S>>(normalize_rows(vx, eps));
  Tensor<S> out(vx.shape);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out.data[i * m + j] = cache->xhat[i * m + j] * vg.data[j] + vb.data[j];
  Var o = push(std::move(out), "layernorm", needs(x) || needs(gamma) || needs(beta));
  set_back(o, [this, x, gamma, beta, o, n, m, cache] {
    const auto& g = nodes_[o.id].grad;
    const auto& gv = nodes_[gamma.id].value;
    if (needs(gamma)) {
      auto& gg = grad_buf(gamma.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gg.data[j] += g.data[i * m + j] * cache->xhat[i * m + j];
    }
    if (needs(beta)) {
      auto& gb = grad_buf(beta.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) gb.data[j] += g.data[i * m + j];
    }
    if (needs(x)) {
      std::vector<S> dxhat(n * m);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) dxhat[i * m + j] = g.data[i * m + j] * gv.data[j];
      normalize_backward(*cache, dxhat.data(), grad_buf(x.id).data.data(), n, m);
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::layernorm(Var x, S eps) {
  const auto& vx = node(x, "layernorm").value;
  const std::size_t n = vx.rows(), m = vx.cols();
  auto cache = std::make_shared<NormCache<S>>(normalize_rows(vx, eps));
  Tensor<S> out(vx.shape, cache->xhat);
  Var o = push(std::move(out), "layernorm", needs(x));
  set_back(o, [this, x, o, n, m, cache] {
    normalize_backward(*cache, nodes_[o.id].grad.data.data(), grad_buf(x.id).data.data(), n, m);
  });
  return o;
}

template <typename S>
Var Graph<S>::softmax_rows(Var x) {
  const auto& vx = node(x, "softmax_rows").value;
  const std::size_t n = vx.rows(), m = vx.cols();
  Tensor<S> out(vx.shape);
  for (std::size_t i = 0; i < n; ++i) {
    const S* r = vx.row(i);
    S* o = out.row(i);
    const S mx = *std::max_element(r, r + m);
    S z = 0;
    for (std::size_t j = 0; j < m; ++j) z += (o[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < m; ++j) o[j] /= z;
  }
  Var o = push(std::move(out), "softmax_rows", needs(x));
  set_back(o, [this, x, o, n, m] {
    const auto& g = nodes_[o.id].grad;
    const auto& y = nodes_[o.id].value;
    auto& gx = grad_buf(x.id);
    for (std::size_t i = 0; i < n; ++i) {
      S dot = 0;
      for (std::size_t j = 0; j < m; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < m; ++j) gx.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::causal_attention(Var q, Var k, Var v, std::size_t sequences, std::size_t seq_len, std::size_t heads,
                               std::vector<std::uint8_t> key_valid) {
  const auto& vq = node(q, "causal_attention").value;
  const auto& vk = node(k, "causal_attention").value;
  const auto& vv = node(v, "causal_attention").value;
  const std::size_t rows = sequences * seq_len, d = vq.cols();
  if (vq.rows() != rows || vk.shape != vq.shape || vv.shape != vq.shape) {
    shape_fail("causal_attention", "q " + shape_string(vq.shape) + " k " + shape_string(vk.shape) + " v " +
                                       shape_string(vv.shape) + " for " + std::to_string(sequences) + "x" +
                                       std::to_string(seq_len) + " rows");
  }
  if (heads == 0 || d % heads != 0) shape_fail("causal_attention", "width " + std::to_string(d) + " not divisible by heads");
  if (key_valid.size() != rows) shape_fail("causal_attention", "key mask length mismatch");
  const std::size_t dh = d / heads;
  const S inv_sqrt = S(1) / std::sqrt(static_cast<S>(dh));

  // probs[((b*heads + h)*L + i)*L + j]
  auto probs = std::make_shared<std::vector<S>>(sequences * heads * seq_len * seq_len, S(0));
  Tensor<S> out(Shape{rows, d});
  std::vector<S> scores(seq_len);
  for (std::size_t b = 0; b < sequences; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < seq_len; ++i) {
        const S* qi = vq.row(b * seq_len + i) + h * dh;
        S* p = probs->data() + ((b * heads + h) * seq_len + i) * seq_len;
        S mx = -std::numeric_limits<S>::infinity();
        bool any = false;
        for (std::size_t j = 0; j <= i; ++j) {
          if (!key_valid[b * seq_len + j]) continue;
          const S* kj = vk.row(b * seq_len + j) + h * dh;
          S s = 0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          scores[j] = s * inv_sqrt;
          mx = std::max(mx, scores[j]);
          any = true;
        }
        if (!any) continue;
        S z = 0;
        for (std::size_t j = 0; j <= i; ++j) {
          if (!key_valid[b * seq_len + j]) continue;
          p[j] = std::exp(scores[j] - mx);
          z += p[j];
        }
        S* oi = out.row(b * seq_len + i) + h * dh;
        for (std::size_t j = 0; j <= i; ++j) {
          if (!key_valid[b * seq_len + j]) continue;
          p[j] /= z;
          const S* vj = vv.row(b * seq_len + j) + h * dh;
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p[j] * vj[c];
        }
      }
    }
  }
  Var o = push(std::move(out), "causal_attention", needs(q) || needs(k) || needs(v));
  set_back(o, [this, q, k, v, o, sequences, seq_len, heads, dh, inv_sqrt, probs,
               key_valid = std::move(key_valid)] {
    const auto& g = nodes_[o.id].grad;
    const auto& xq = nodes_[q.id].value;
    const auto& xk = nodes_[k.id].value;
    const auto& xv = nodes_[v.id].value;
    Tensor<S>* gq = needs(q) ? &grad_buf(q.id) : nullptr;
    Tensor<S>* gk = needs(k) ? &grad_buf(k.id) : nullptr;
    Tensor<S>* gv = needs(v) ? &grad_buf(v.id) : nullptr;
    std::vector<S> dp(seq_len);
    for (std::size_t b = 0; b < sequences; ++b) {
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < seq_len; ++i) {
          const S* p = probs->data() + ((b * heads + h) * seq_len + i) * seq_len;
          const S* go = g.row(b * seq_len + i) + h * dh;
          S weighted = 0;
          for (std::size_t j = 0; j <= i; ++j) {
            if (!key_valid[b * seq_len + j]) continue;
            const S* vj = xv.row(b * seq_len + j) + h * dh;
            S s = 0;
            for (std::size_t c = 0; c < dh; ++c) s += go[c] * vj[c];
            dp[j] = s;
            weighted += p[j] * s;
            if (gv) {
              S* gvj = gv->row(b * seq_len + j) + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gvj[c] += p[j] * go[c];
            }
          }
          const S* qi = xq.row(b * seq_len + i) + h * dh;
          for (std::size_t j = 0; j <= i; ++j) {
            if (!key_valid[b * seq_len + j]) continue;
            const S ds = p[j] * (dp[j] - weighted) * inv_sqrt;
            if (ds == S(0)) continue;
            const S* kj = xk.row(b * seq_len + j) + h * dh;
            if (gq) {
              S* gqi = gq->row(b * seq_len + i) + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gqi[c] += ds * kj[c];
            }
            if (gk) {
              S* gkj = gk->row(b * seq_len + j) + h * dh;
              for (std::size_t c = 0; c < dh; ++c) gkj[c] += ds * qi[c];
            }
          }
        }
      }
    }
  });
  return o;
}

// ---------------------------------------------------------------------------
// losses

template <typename S>
Var Graph<S>::masked_cross_entropy(Var logits, std::vector<std::uint8_t> targets, std::vector<std::uint8_t> eligible,
                                   std::vector<S> weights) {
  const auto& vl = node(logits, "masked_cross_entropy").value;
  const std::size_t n = vl.rows(), c = vl.cols();
  if (targets.size() != n || eligible.size() != n || weights.size() != n) {
    shape_fail("masked_cross_entropy", "row metadata length mismatch for logits " + shape_string(vl.shape));
  }
  auto probs = std::make_shared<std::vector<S>>(n * c, S(0));
  S total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (weights[r] == S(0)) continue;
    const std::uint8_t mask = eligible[r];
    if (mask == 0) throw ContractError("masked_cross_entropy: row " + std::to_string(r) + " has no eligible class");
    if (targets[r] >= c || !((mask >> targets[r]) & 1u)) {
      throw ContractError("masked_cross_entropy: row " + std::to_string(r) + " target " +
                          std::to_string(targets[r]) + " is not eligible");
    }
    const S* l = vl.row(r);
    S mx = -std::numeric_limits<S>::infinity();
    for (std::size_t j = 0; j < c; ++j)
      if ((mask >> j) & 1u) mx = std::max(mx, l[j]);
    S z = 0;
    S* p = probs->data() + r * c;
    for (std::size_t j = 0; j < c; ++j)
      if ((mask >> j) & 1u) z += (p[j] = std::exp(l[j] - mx));
    for (std::size_t j = 0; j < c; ++j) p[j] /= z;
    total += weights[r] * (mx + std::log(z) - l[targets[r]]);
  }
  Var o = push(Tensor<S>::scalar(total), "masked_cross_entropy", needs(logits));
  set_back(o, [this, logits, o, n, c, probs, targets = std::move(targets), eligible = std::move(eligible),
               weights = std::move(weights)] {
    const S g = nodes_[o.id].grad.data[0];
    auto& gl = grad_buf(logits.id);
    for (std::size_t r = 0; r < n; ++r) {
      if (weights[r] == S(0)) continue;
      const S* p = probs->data() + r * c;
      for (std::size_t j = 0; j < c; ++j) {
        if (!((eligible[r] >> j) & 1u)) continue;
        gl.at(r, j) += g * weights[r] * (p[j] - (j == targets[r] ? S(1) : S(0)));
      }
    }
  });
  return o;
}

template <typename S>
Var Graph<S>::pinball(Var pred, Var target, std::vector<S> alphas, std::vector<S> weights) {
  const auto& vp = node(pred, "pinball").value;
  const auto& vt = node(target, "pinball").value;
  const std::size_t n = vp.rows(), m = alphas.size();
  if (m == 0) shape_fail("pinball", "empty quantile grid");
  const std::size_t nr = vt.cols();
  if (vt.rows() != n || vp.cols() != nr * m || weights.size() != n) {
    shape_fail("pinball", "pred " + shape_string(vp.shape) + " target " + shape_string(vt.shape) + " with " +
                              std::to_string(m) + " levels");
  }
  // Per-element derivative d rho / d pred, times the row weight.
  auto slope = std::make_shared<std::vector<S>>(n * nr * m, S(0));
  S total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (weights[r] == S(0)) continue;
    for (std::size_t i = 0; i < nr; ++i) {
      const S y = vt.at(r, i);
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t col = i * m + j;
        const S diff = y - vp.at(r, col);
        const S a = alphas[j];
        if (diff >= S(0)) {
          total += weights[r] * a * diff;
          (*slope)[r * nr * m + col] = -weights[r] * a;
          branch_trace_.push_back(1);
        } else {
          total += weights[r] * (a - S(1)) * diff;
          (*slope)[r * nr * m + col] = weights[r] * (S(1) - a);
          branch_trace_.push_back(0);
        }
      }
    }
  }
  Var o = push(Tensor<S>::scalar(total), "pinball", needs(pred) || needs(target));
  set_back(o, [this, pred, target, o, n, nr, m, slope] {
    const S g = nodes_[o.id].grad.data[0];
    if (needs(pred)) {
      auto& gp = grad_buf(pred.id);
      for (std::size_t e = 0; e < slope->size(); ++e) gp.data[e] += g * (*slope)[e];
    }
    if (needs(target)) {
      auto& gt = grad_buf(target.id);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t i = 0; i < nr; ++i)
          for (std::size_t j = 0; j < m; ++j) gt.at(r, i) -= g * (*slope)[r * nr * m + i * m + j];
    }
  });
  return o;
}

// ---------------------------------------------------------------------------

template <typename S>
void Graph<S>::backward(Var root) {
  if (mode_ != GradMode::kRecord || mutable_params_ == nullptr) {
    throw ContractError("backward: graph was built without gradient recording");
  }
  if (nodes_.empty()) throw ContractError("backward: no forward pass has been run on this graph");
  const Node& rn = node(root, "backward");
  if (rn.value.size() != 1) throw ContractError("backward: root must be a scalar, got " + shape_string(rn.value.shape));
  for (auto& n : nodes_) n.grad = Tensor<S>();
  if (!rn.needs_grad) return;
  grad_buf(root.id).data[0] = S(1);
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.data.empty()) continue;
    if (n.param >= 0) {
      auto& p = (*mutable_params_)[static_cast<std::size_t>(n.param)];
      if (!p.trainable) continue;
      for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad.data[k] += n.grad.data[k];
    } else if (n.back) {
      n.back();
    }
  }
}

template <typename S>
void Graph<S>::check_finite() const {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    for (S v : nodes_[i].value.data) {
      if (!std::isfinite(v)) {
        throw NumericError(std::string("non-finite value at node ") + std::to_string(i) + " (" + nodes_[i].op +
                           (nodes_[i].label.empty() ? "" : " '" + nodes_[i].label + "'") + ")");
      }
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace notifdt::diff
