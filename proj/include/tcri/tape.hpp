#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "tcri/tensor.hpp"

namespace tcri::diff {

enum class LossKind { squared, logistic };
enum class NormKind { l2, squared_l2 };
enum class PenaltyKind { hsic, cov };

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Nodes are appended in topological order; backward()
// walks them once in reverse and accumulates gradients (a value used twice
// receives the sum of both contributions). A Tape is single-threaded; run
// independent Tapes on independent threads.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool requires_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  const Tensor& value(Var v) const { return nodes_[check(v)].value; }
  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  // --- primitives ---------------------------------------------------------
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);               // elementwise
  Var scalar_mul(Var a, double c);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var relu(Var a);
  Var sigmoid(Var a);
  Var exp(Var a);
  Var log(Var a);                      // domain error on x <= 0
  Var square(Var a);
  Var softplus(Var a);
  Var sum(Var a);                      // -> scalar
  Var mean(Var a);                     // -> scalar
  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, std::size_t begin, std::size_t end);
  Var add_row(Var m, Var row);         // broadcast a row vector over rows

  // --- composite losses with hand-coded backward --------------------------

  // Mean squared error against fixed targets.
  Var squared_loss(Var predictions, const std::vector<double>& targets);
  // Mean logistic loss of raw scores against {0,1} targets (stable softplus).
  Var logistic_loss(Var scores, const std::vector<double>& targets);

  // || d/d(theta) risk(z theta [+ bias]) ||_2 for an elementwise loss over a
  // linear head. Exact second-order transport: gradients flow into z, theta
  // and bias. Returns the subgradient 0 at a zero-gradient point.
  Var grad_norm_linear_head(Var z, Var theta, std::optional<Var> bias,
                            const std::vector<double>& targets, LossKind loss,
                            NormKind norm);

  // Class-conditioned dependence between two representations: mean over
  // groups (with >= 2 rows) of HSIC(phi_k, psi_k) or of the squared Frobenius
  // norm of the conditional cross-covariance. Bandwidths use the per-slice
  // median heuristic and are constants for the gradient. Forward values agree
  // exactly with the standalone tcri::kern estimators.
  Var conditional_dependence(Var phi, Var psi, const std::vector<int>& groups,
                             int num_groups, PenaltyKind kind);

  // --- reverse pass -------------------------------------------------------

  // Backpropagates from a scalar loss. Afterwards grad() is valid for every
  // node that requires grad; parameters not on a path to the loss get zeros.
  void backward(Var loss);
  const Tensor& grad(Var v) const;

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::function<void(Tape&, int)> backprop;  // nullptr for leaves
  };

  int check(Var v) const;
  Var push(Tensor value, bool requires_grad,
           std::function<void(Tape&, int)> backprop);
  Tensor& grad_buffer(int id);
  void accumulate(int id, const Tensor& g);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> touched_;
};

}  // namespace tcri::diff
