#pragma once

// Dense 64-bit tensors (rank <= 2, row-major) with a reverse-mode tape.
//
// Every primitive below computes its value eagerly.  When at least one input
// requires a gradient the primitive also records a backward closure on the
// tape owning its inputs; Tape::backward replays those closures in reverse
// insertion order, which is a valid reverse topological order.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <array>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace gedi {

using Index = Eigen::Index;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using ColVector = Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

class Tape;

/// Handle to one value on a tape.  Cheap to copy; valid while its tape lives.
class Tensor {
 public:
  Tensor() = default;

  const Matrix& value() const;
  /// Accumulated gradient after Tape::backward.  Zeros when the tensor did not
  /// participate in the loss.
  Matrix grad() const;
  bool requires_grad() const;

  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  Index size() const { return value().size(); }
  double item() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor constant(Matrix value);
  Tensor variable(Matrix value);
  Tensor scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }

  /// Fills grad() of every tensor reachable from `loss`.  Gradients from
  /// earlier backward calls on this tape are discarded first.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  // --- primitive authoring -------------------------------------------------

  /// Appends a node.  `value` must be finite (NumericError naming `op`
  /// otherwise).  The closure is kept only if some input requires a gradient.
  Tensor record(const char* op, Matrix value, std::initializer_list<Tensor> inputs,
                Backward backward);
  Tensor record(const char* op, Matrix value, std::span<const Tensor> inputs,
                Backward backward);

  const Matrix& value(const Tensor& t) const { return nodes_[t.id_].value; }
  bool needs_grad(const Tensor& t) const { return nodes_[t.id_].requires_grad; }

  template <typename Derived>
  void accumulate(const Tensor& t, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[t.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }
  void accumulate(const Tensor& t, Matrix&& g) {
    Node& n = nodes_[t.id_];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0)
      n.grad = std::move(g);
    else
      n.grad += g;
  }

 private:
  friend class Tensor;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    const char* op = "";
    Backward backward;
  };

  std::deque<Node> nodes_;
};

/// Same-tape check shared by all primitives.
Tape& tape_of(std::initializer_list<Tensor> inputs);

// --- elementwise, with broadcasting of 1xN, Mx1 and 1x1 operands ----------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softplus(const Tensor& a);

// --- shape and contraction -------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
/// x W + b with a 1xN bias row.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& a, Index start, Index count);
/// Embedding lookup: output row r is input row indices[r].
Tensor gather_rows(const Tensor& a, std::span<const Index> indices);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Euclidean norm of each row as an Mx1 column.  Zero rows get a zero gradient.
Tensor row_l2_norm(const Tensor& a);

// --- normalization and attention -------------------------------------------

/// Softmax over each row restricted to entries with mask != 0.  Masked
/// entries are exactly 0; a fully masked row is all zeros.
Tensor masked_softmax(const Tensor& logits, const Matrix& mask);

inline constexpr double kLayerNormEpsilon = 1e-5;

/// Row-wise (x - mean) / sqrt(var + eps) * gain + bias, population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = kLayerNormEpsilon);

/// Multi-head scaled dot-product attention over groups of consecutive rows.
/// q, k, v are (groups*group_size) x width; key_mask is groups x group_size
/// and hides keys (and their values) with mask == 0.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const Matrix& key_mask, int heads);

/// x is (groups*group_size) x width, mask is groups x group_size.  Output row
/// g is the mean of the unmasked rows of group g, or zero if none.
Tensor masked_mean_pool(const Tensor& x, const Matrix& mask);

// --- losses ------------------------------------------------------------------

/// sum_i w_i * (logsumexp(logits_i) - logits_i[target_i]).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const Index> targets,
                             const ColVector& row_weights);

/// sum_i w_i * (softplus(l_i) - y_i * l_i) for an Mx1 logit column.
Tensor sigmoid_bce(const Tensor& logits, const ColVector& labels,
                   const ColVector& row_weights);

// --- sparse adjacency (values are an nnz x 1 column in the pattern's order) -

using SparsePattern = std::shared_ptr<const SparseMatrix>;

/// values_e = <a_i, a_j> for every stored (i, j) of the symmetric pattern.
Tensor pattern_gram(const Tensor& a, const SparsePattern& pattern);
/// Per-row sum of values, Bx1.
Tensor sparse_row_sum(const Tensor& values, const SparsePattern& pattern);
/// values_e / sqrt(degree_i * degree_j).
Tensor sparse_sym_normalize(const Tensor& values, const Tensor& degree,
                            const SparsePattern& pattern);
/// Sparse (values, pattern) times dense x.
Tensor spmm(const Tensor& values, const SparsePattern& pattern, const Tensor& x);

namespace debug {
/// Self-test switch: when on, relu's backward pass is deliberately wrong so the
/// gradient checker can demonstrate that it detects faults.
void set_faulty_relu_gradient(bool on);
bool faulty_relu_gradient();
}  // namespace debug

}  // namespace gedi
