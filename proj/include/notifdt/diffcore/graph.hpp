#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "notifdt/diffcore/parameters.hpp"
#include "notifdt/diffcore/tensor.hpp"

namespace notifdt::diff {

// Handle to a node on a Graph's tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

enum class GradMode { kRecord, kNone };

// Eager reverse-mode tape. Every operation computes its value immediately
// and, in kRecord mode, appends a backward closure. Nodes are stored in
// creation order, which is a topological order by construction.
//
// Parameter leaves read from the bound ParameterSet; backward() accumulates
// into Parameter::grad for trainable parameters only. Inputs never receive
// gradients that leave the graph.
//
// All matrix operations view tensors as [rows, cols].
template <typename S>
class Graph {
 public:
  explicit Graph(const ParameterSet<S>& params, GradMode mode = GradMode::kRecord);
  Graph(ParameterSet<S>& params, GradMode mode = GradMode::kRecord);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor<S> value, std::string label = {});
  Var param(std::size_t index);
  Var param(std::string_view name);

  const Tensor<S>& value(Var v) const;
  // Gradient of the last backward root with respect to v (zeros if v did not
  // participate).
  Tensor<S> grad(Var v) const;
  const std::string& label(Var v) const;

  // ---- elementwise / structural ----
  Var add(Var a, Var b);                 // same shape
  Var mul(Var a, Var b);                 // same shape, Hadamard
  Var scale(Var a, S factor);
  Var add_bias(Var x, Var bias);         // x [n,m] + bias [m] broadcast over rows
  Var gelu(Var x);                       // tanh approximation
  Var sum(Var x);                        // -> [1]
  Var concat_cols(Var a, Var b);         // [n,p] ++ [n,q] -> [n,p+q]
  Var gather_rows(Var x, std::vector<std::size_t> rows);
  // parts[k] is [n,d]; output row i*K+k is parts[k] row i.
  Var interleave_rows(const std::vector<Var>& parts);

  // ---- dense ----
  Var matmul(Var a, Var b);              // [n,k] x [k,m]
  Var linear(Var x, Var weight, Var bias) { return add_bias(matmul(x, weight), bias); }
  Var layernorm(Var x, Var gamma, Var beta, S eps = S(1e-5));
  Var layernorm(Var x, S eps = S(1e-5));  // no affine transform
  Var softmax_rows(Var x);

  // Multi-head causal self-attention over `sequences` back-to-back
  // sequences of `seq_len` rows each. q, k, v are [sequences*seq_len, d]
  // with d split into `heads` contiguous column blocks. Keys with
  // key_valid[row] == 0 are never attended to; a query with no valid key
  // yields a zero row.
  Var causal_attention(Var q, Var k, Var v, std::size_t sequences, std::size_t seq_len, std::size_t heads,
                       std::vector<std::uint8_t> key_valid);

  // ---- losses (scalar outputs) ----
  // Sum over rows with weight != 0 of weight * -log softmax(logits restricted
  // to eligible columns)[target]. eligible[r] is a column bitmask.
  Var masked_cross_entropy(Var logits, std::vector<std::uint8_t> targets, std::vector<std::uint8_t> eligible,
                           std::vector<S> weights);
  // pred is [n, R*M] laid out as R blocks of M quantile columns; target is
  // [n, R]. Sum over weighted rows, rewards and levels of the pinball loss
  // rho_alpha(pred, target). The subgradient at pred == target takes the
  // alpha branch (target >= pred).
  Var pinball(Var pred, Var target, std::vector<S> alphas, std::vector<S> weights);

  // Reverse sweep from a scalar root. Throws ContractError when the root is
  // not a live node of this graph or the graph was built without recording.
  void backward(Var root);

  std::size_t node_count() const { return nodes_.size(); }
  // One entry per piecewise-branch decision taken during the forward sweep
  // (currently the pinball case split). Used to detect kinks.
  const std::vector<std::uint8_t>& branch_trace() const { return branch_trace_; }
  // Throws NumericError naming the first node holding a non-finite value.
  void check_finite() const;

 private:
  struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    std::function<void()> back;
    const char* op = "";
    std::string label;
    int param = -1;
    bool needs_grad = false;
  };

  Var push(Tensor<S> value, const char* op, bool needs_grad, std::string label = {});
  void set_back(Var v, std::function<void()> back);
  Tensor<S>& grad_buf(int id);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  const Node& node(Var v, const char* op) const;
  [[noreturn]] void shape_fail(const char* op, const std::string& detail) const;

  const ParameterSet<S>* params_;
  ParameterSet<S>* mutable_params_ = nullptr;
  GradMode mode_;
  std::vector<Node> nodes_;
  std::vector<std::uint8_t> branch_trace_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace notifdt::diff
