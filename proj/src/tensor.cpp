#include "gedi/tensor.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>

#include "gedi/errors.hpp"

namespace gedi {

namespace {

std::atomic<bool> g_faulty_relu{false};

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

[[noreturn]] void dim_error(const char* op, const Matrix& a, const Matrix& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " +
                       shape_str(b));
}

Index broadcast_dim(const char* op, const Matrix& a, const Matrix& b, Index da, Index db) {
  if (da == db) return da;
  if (da == 1) return db;
  if (db == 1) return da;
  dim_error(op, a, b);
}

/// Calls f with `m` viewed as a rows x cols array, broadcasting lazily.
template <typename F>
Matrix with_broadcast(const Matrix& m, Index rows, Index cols, F&& f) {
  if (m.rows() == rows && m.cols() == cols) return f(m.array());
  if (m.size() == 1) return f(Matrix::Constant(rows, cols, m(0, 0)).array());
  if (m.rows() == 1) return f(m.array().replicate(rows, 1));
  return f(m.array().replicate(1, cols));
}

/// Sums a broadcast gradient back down to the operand's shape.
Matrix reduce_to(Matrix g, Index rows, Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, g.sum());
  if (rows == 1) return g.colwise().sum();
  return g.rowwise().sum();
}

template <typename Forward, typename GradA, typename GradB>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Forward fwd, GradA ga,
              GradB gb) {
  Tape& tape = tape_of({a, b});
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Index r = broadcast_dim(op, av, bv, av.rows(), bv.rows());
  const Index c = broadcast_dim(op, av, bv, av.cols(), bv.cols());
  Matrix out = with_broadcast(av, r, c, [&](const auto& x) {
    return with_broadcast(bv, r, c, [&](const auto& y) -> Matrix { return fwd(x, y).matrix(); });
  });
  return tape.record(op, std::move(out), {a, b},
                     [a, b, ga, gb, r, c](Tape& t, const Matrix& g) {
                       const auto ga_ = g.array();
                       const bool need_a = t.needs_grad(a);
                       const bool need_b = t.needs_grad(b);
                       Matrix da, db;
                       with_broadcast(a.value(), r, c, [&](const auto& x) {
                         return with_broadcast(b.value(), r, c, [&](const auto& y) -> Matrix {
                           if (need_a) da = ga(ga_, x, y).matrix();
                           if (need_b) db = gb(ga_, x, y).matrix();
                           return Matrix();
                         });
                       });
                       if (need_a) t.accumulate(a, reduce_to(std::move(da), a.rows(), a.cols()));
                       if (need_b) t.accumulate(b, reduce_to(std::move(db), b.rows(), b.cols()));
                     });
}

template <typename Forward, typename Deriv>
Tensor unary(const char* op, const Tensor& a, Forward fwd, Deriv deriv) {
  Tape& tape = tape_of({a});
  Matrix out = fwd(a.value().array()).matrix();
  return tape.record(op, std::move(out), {a}, [a, deriv](Tape& t, const Matrix& g) {
    t.accumulate(a, (g.array() * deriv(a.value().array())).matrix());
  });
}

}  // namespace

// --- Tensor / Tape ----------------------------------------------------------

const Matrix& Tensor::value() const {
  if (!tape_) throw UsageError("tensor handle is not bound to a tape");
  return tape_->nodes_[id_].value;
}

Matrix Tensor::grad() const {
  const auto& n = tape_->nodes_[id_];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

bool Tensor::requires_grad() const { return tape_ && tape_->nodes_[id_].requires_grad; }

double Tensor::item() const {
  const Matrix& v = value();
  if (v.size() != 1) throw DimensionError("item: tensor is " + shape_str(v) + ", not scalar");
  return v(0, 0);
}

Tensor Tape::constant(Matrix value) {
  if (!value.allFinite()) throw NumericError("constant: non-finite value");
  nodes_.push_back(Node{std::move(value), Matrix(), false, "constant", nullptr});
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::variable(Matrix value) {
  if (!value.allFinite()) throw NumericError("variable: non-finite value");
  nodes_.push_back(Node{std::move(value), Matrix(), true, "variable", nullptr});
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

Tensor Tape::record(const char* op, Matrix value, std::initializer_list<Tensor> inputs,
                    Backward backward) {
  return record(op, std::move(value), std::span<const Tensor>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Tensor Tape::record(const char* op, Matrix value, std::span<const Tensor> inputs,
                    Backward backward) {
  if (!value.allFinite()) throw NumericError(std::string(op) + ": non-finite result");
  bool rg = false;
  for (const Tensor& t : inputs) rg = rg || nodes_[t.id_].requires_grad;
  nodes_.push_back(Node{std::move(value), Matrix(), rg, op, rg ? std::move(backward) : nullptr});
  return Tensor(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape_ != this) throw UsageError("backward: tensor belongs to another tape");
  Node& root = nodes_[loss.id_];
  if (!root.requires_grad)
    throw UsageError("backward: loss was not produced from any tensor requiring grad");
  if (root.value.size() != 1) throw UsageError("backward: loss must be a scalar");
  for (Node& n : nodes_) n.grad.resize(0, 0);
  root.grad = Matrix::Ones(1, 1);
  for (int id = loss.id_; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
    n.backward(*this, n.grad);
  }
}

Tape& tape_of(std::initializer_list<Tensor> inputs) {
  Tape* tape = nullptr;
  for (const Tensor& t : inputs) {
    if (!t.valid()) throw UsageError("primitive received an unbound tensor");
    if (tape && t.tape() != tape) throw UsageError("primitive inputs live on different tapes");
    tape = t.tape();
  }
  return *tape;
}

// --- elementwise ----------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](const auto& x, const auto& y) { return x + y; },
      [](const auto& g, const auto&, const auto&) { return g; },
      [](const auto& g, const auto&, const auto&) { return g; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](const auto& x, const auto& y) { return x - y; },
      [](const auto& g, const auto&, const auto&) { return g; },
      [](const auto& g, const auto&, const auto&) { return -g; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](const auto& x, const auto& y) { return x * y; },
      [](const auto& g, const auto&, const auto& y) { return g * y; },
      [](const auto& g, const auto& x, const auto&) { return g * x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary(
      "div", a, b, [](const auto& x, const auto& y) { return x / y; },
      [](const auto& g, const auto&, const auto& y) { return g / y; },
      [](const auto& g, const auto& x, const auto& y) { return -g * x / (y * y); });
}

Tensor scale(const Tensor& a, double factor) {
  Tape& tape = tape_of({a});
  return tape.record("scale", a.value() * factor, {a}, [a, factor](Tape& t, const Matrix& g) {
    t.accumulate(a, g * factor);
  });
}

Tensor relu(const Tensor& a) {
  Tape& tape = tape_of({a});
  Matrix out = a.value().cwiseMax(0.0);
  return tape.record("relu", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    Matrix d = (a.value().array() > 0.0).select(g, 0.0);
    if (g_faulty_relu.load()) d *= 0.5;
    t.accumulate(a, d);
  });
}

Tensor exp(const Tensor& a) {
  return unary(
      "exp", a, [](const auto& x) { return x.exp(); }, [](const auto& x) { return x.exp(); });
}

Tensor log(const Tensor& a) {
  return unary(
      "log", a, [](const auto& x) { return x.log(); },
      [](const auto& x) { return x.inverse(); });
}

Tensor sigmoid(const Tensor& a) {
  auto fwd = [](const auto& x) { return (1.0 + (-x).exp()).inverse(); };
  return unary("sigmoid", a, fwd, [](const auto& x) {
    return x.unaryExpr([](double v) {
      const double s = 1.0 / (1.0 + std::exp(-v));
      return s * (1.0 - s);
    });
  });
}

Tensor softplus(const Tensor& a) {
  // log(1 + e^x) = max(x, 0) + log1p(e^-|x|)
  auto fwd = [](const auto& x) { return x.max(0.0) + (-x.abs()).exp().log1p(); };
  return unary("softplus", a, fwd, [](const auto& x) { return (1.0 + (-x).exp()).inverse(); });
}

// --- shape and contraction --------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  Tape& tape = tape_of({a, b});
  if (a.cols() != b.rows()) dim_error("matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  return tape.record("matmul", std::move(out), {a, b}, [a, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(a)) t.accumulate(a, g * b.value().transpose());
    if (t.needs_grad(b)) t.accumulate(b, a.value().transpose() * g);
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tape& tape = tape_of({x, w, b});
  if (x.cols() != w.rows()) dim_error("linear", x.value(), w.value());
  if (b.rows() != 1 || b.cols() != w.cols()) dim_error("linear", w.value(), b.value());
  Matrix out = x.value() * w.value();
  out.rowwise() += b.value().row(0);
  return tape.record("linear", std::move(out), {x, w, b}, [x, w, b](Tape& t, const Matrix& g) {
    if (t.needs_grad(x)) t.accumulate(x, Matrix(g * w.value().transpose()));
    if (t.needs_grad(w)) t.accumulate(w, Matrix(x.value().transpose() * g));
    if (t.needs_grad(b)) t.accumulate(b, Matrix(g.colwise().sum()));
  });
}

Tensor transpose(const Tensor& a) {
  Tape& tape = tape_of({a});
  Matrix out = a.value().transpose();
  return tape.record("transpose", std::move(out), {a},
                     [a](Tape& t, const Matrix& g) { t.accumulate(a, g.transpose()); });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& tape = *parts.front().tape();
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Tensor& p : parts) {
    if (p.tape() != &tape) throw UsageError("concat_cols: inputs live on different tapes");
    if (p.rows() != rows) dim_error("concat_cols", parts.front().value(), p.value());
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Tensor& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  std::vector<Tensor> keep(parts.begin(), parts.end());
  return tape.record("concat_cols", std::move(out), parts, [keep](Tape& t, const Matrix& g) {
    Index at = 0;
    for (const Tensor& p : keep) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleCols(at, p.cols()));
      at += p.cols();
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  Tape& tape = *parts.front().tape();
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Tensor& p : parts) {
    if (p.tape() != &tape) throw UsageError("concat_rows: inputs live on different tapes");
    if (p.cols() != cols) dim_error("concat_rows", parts.front().value(), p.value());
    rows += p.rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Tensor& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  std::vector<Tensor> keep(parts.begin(), parts.end());
  return tape.record("concat_rows", std::move(out), parts, [keep](Tape& t, const Matrix& g) {
    Index at = 0;
    for (const Tensor& p : keep) {
      if (t.needs_grad(p)) t.accumulate(p, g.middleRows(at, p.rows()));
      at += p.rows();
    }
  });
}

Tensor slice_cols(const Tensor& a, Index start, Index count) {
  Tape& tape = tape_of({a});
  if (start < 0 || count < 0 || start + count > a.cols())
    throw DimensionError("slice_cols: range out of bounds for " + shape_str(a.value()));
  Matrix out = a.value().middleCols(start, count);
  return tape.record("slice_cols", std::move(out), {a}, [a, start, count](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    d.middleCols(start, count) = g;
    t.accumulate(a, d);
  });
}

Tensor gather_rows(const Tensor& a, std::span<const Index> indices) {
  Tape& tape = tape_of({a});
  const Index n = static_cast<Index>(indices.size());
  Matrix out(n, a.cols());
  for (Index r = 0; r < n; ++r) {
    const Index src = indices[r];
    if (src < 0 || src >= a.rows())
      throw DimensionError("gather_rows: index " + std::to_string(src) + " out of range for " +
                           shape_str(a.value()));
    out.row(r) = a.value().row(src);
  }
  std::vector<Index> idx(indices.begin(), indices.end());
  return tape.record("gather_rows", std::move(out), {a}, [a, idx](Tape& t, const Matrix& g) {
    Matrix d = Matrix::Zero(a.rows(), a.cols());
    for (std::size_t r = 0; r < idx.size(); ++r) d.row(idx[r]) += g.row(static_cast<Index>(r));
    t.accumulate(a, d);
  });
}

Tensor sum(const Tensor& a) {
  Tape& tape = tape_of({a});
  return tape.record("sum", Matrix::Constant(1, 1, a.value().sum()), {a},
                     [a](Tape& t, const Matrix& g) {
                       t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0)));
                     });
}

Tensor mean(const Tensor& a) {
  Tape& tape = tape_of({a});
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  const double n = static_cast<double>(a.size());
  return tape.record("mean", Matrix::Constant(1, 1, a.value().sum() / n), {a},
                     [a, n](Tape& t, const Matrix& g) {
                       t.accumulate(a, Matrix::Constant(a.rows(), a.cols(), g(0, 0) / n));
                     });
}

Tensor row_l2_norm(const Tensor& a) {
  Tape& tape = tape_of({a});
  Matrix out = a.value().rowwise().norm();
  return tape.record("row_l2_norm", std::move(out), {a}, [a](Tape& t, const Matrix& g) {
    const Matrix& x = a.value();
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (Index i = 0; i < x.rows(); ++i) {
      const double n = x.row(i).norm();
      if (n > 0.0) d.row(i) = x.row(i) * (g(i, 0) / n);
    }
    t.accumulate(a, d);
  });
}

// --- normalization and attention ----------------------------------------------

namespace {

/// Softmax of one row over mask != 0; writes zeros for a fully masked row.
template <typename In, typename M, typename Out>
void masked_softmax_row(const In& logits, const M& mask, Out&& out) {
  double mx = -std::numeric_limits<double>::infinity();
  for (Index j = 0; j < logits.size(); ++j)
    if (mask(j) != 0.0) mx = std::max(mx, logits(j));
  if (mx == -std::numeric_limits<double>::infinity()) {
    out.setZero();
    return;
  }
  double total = 0.0;
  for (Index j = 0; j < logits.size(); ++j) {
    const double e = mask(j) != 0.0 ? std::exp(logits(j) - mx) : 0.0;
    out(j) = e;
    total += e;
  }
  out /= total;
}

}  // namespace

Tensor masked_softmax(const Tensor& logits, const Matrix& mask) {
  Tape& tape = tape_of({logits});
  const Matrix& x = logits.value();
  if (mask.rows() != x.rows() || mask.cols() != x.cols())
    dim_error("masked_softmax", x, mask);
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) masked_softmax_row(x.row(i), mask.row(i), out.row(i));
  Matrix saved = out;
  return tape.record("masked_softmax", std::move(out), {logits},
                     [logits, saved](Tape& t, const Matrix& g) {
                       // dx = p * (g - <g, p>) row-wise.
                       ColVector inner = (g.array() * saved.array()).rowwise().sum();
                       Matrix d = (saved.array() * (g.colwise() - inner).array()).matrix();
                       t.accumulate(logits, d);
                     });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  Tape& tape = tape_of({x, gain, bias});
  const Matrix& xv = x.value();
  const Index n = xv.cols();
  if (gain.rows() != 1 || gain.cols() != n) dim_error("layer_norm", xv, gain.value());
  if (bias.rows() != 1 || bias.cols() != n) dim_error("layer_norm", xv, bias.value());
  ColVector mu = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mu;
  ColVector var = centered.array().square().rowwise().mean();
  ColVector inv_std = (var.array() + eps).rsqrt();
  Matrix xhat = centered.array().colwise() * inv_std.array();
  Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return tape.record("layer_norm", std::move(out), {x, gain, bias},
                     [x, gain, bias, xhat, inv_std](Tape& t, const Matrix& g) {
                       if (t.needs_grad(gain))
                         t.accumulate(gain, (g.array() * xhat.array()).colwise().sum().matrix());
                       if (t.needs_grad(bias)) t.accumulate(bias, g.colwise().sum());
                       if (t.needs_grad(x)) {
                         Matrix dxhat = g.array().rowwise() * gain.value().row(0).array();
                         ColVector m1 = dxhat.rowwise().mean();
                         ColVector m2 = (dxhat.array() * xhat.array()).rowwise().mean();
                         Matrix d = dxhat;
                         d.colwise() -= m1;
                         d -= (xhat.array().colwise() * m2.array()).matrix();
                         d = d.array().colwise() * inv_std.array();
                         t.accumulate(x, d);
                       }
                     });
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        const Matrix& key_mask, int heads) {
  Tape& tape = tape_of({q, k, v});
  const Index groups = key_mask.rows();
  const Index gsize = key_mask.cols();
  const Index width = q.cols();
  if (q.rows() != groups * gsize || k.rows() != q.rows() || v.rows() != q.rows() ||
      k.cols() != width || v.cols() != width)
    dim_error("masked_attention", q.value(), key_mask);
  if (heads <= 0 || width % heads != 0)
    throw DimensionError("masked_attention: width " + std::to_string(width) +
                         " not divisible by head count " + std::to_string(heads));
  const Index hd = width / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));

  // probs holds one gsize x gsize block per (group, head), stacked by rows.
  Matrix probs(groups * heads * gsize, gsize);
  Matrix out(q.rows(), width);
  const Matrix& qv = q.value();
  const Matrix& kv = k.value();
  const Matrix& vv = v.value();
  Matrix scores(gsize, gsize);
  for (Index b = 0; b < groups; ++b) {
    const auto mask = key_mask.row(b);
    for (Index h = 0; h < heads; ++h) {
      const auto qb = qv.block(b * gsize, h * hd, gsize, hd);
      const auto kb = kv.block(b * gsize, h * hd, gsize, hd);
      scores.noalias() = (qb * kb.transpose()) * inv_sqrt;
      auto p = probs.middleRows((b * heads + h) * gsize, gsize);
      for (Index i = 0; i < gsize; ++i) masked_softmax_row(scores.row(i), mask, p.row(i));
      out.block(b * gsize, h * hd, gsize, hd).noalias() =
          p * vv.block(b * gsize, h * hd, gsize, hd);
    }
  }
  return tape.record(
      "masked_attention", std::move(out), {q, k, v},
      [q, k, v, probs, groups, gsize, heads, hd, inv_sqrt](Tape& t, const Matrix& g) {
        const Matrix& qv = q.value();
        const Matrix& kv = k.value();
        const Matrix& vv = v.value();
        Matrix dq = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dk = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dv = Matrix::Zero(qv.rows(), qv.cols());
        Matrix dp(gsize, gsize);
        Matrix ds(gsize, gsize);
        for (Index b = 0; b < groups; ++b) {
          for (Index h = 0; h < heads; ++h) {
            const auto p = probs.middleRows((b * heads + h) * gsize, gsize);
            const auto gb = g.block(b * gsize, h * hd, gsize, hd);
            const auto vb = vv.block(b * gsize, h * hd, gsize, hd);
            dv.block(b * gsize, h * hd, gsize, hd).noalias() += p.transpose() * gb;
            dp.noalias() = gb * vb.transpose();
            ColVector inner = (dp.array() * p.array()).rowwise().sum();
            ds = (p.array() * (dp.colwise() - inner).array()).matrix() * inv_sqrt;
            dq.block(b * gsize, h * hd, gsize, hd).noalias() +=
                ds * kv.block(b * gsize, h * hd, gsize, hd);
            dk.block(b * gsize, h * hd, gsize, hd).noalias() +=
                ds.transpose() * qv.block(b * gsize, h * hd, gsize, hd);
          }
        }
        t.accumulate(q, dq);
        t.accumulate(k, dk);
        t.accumulate(v, dv);
      });
}

Tensor masked_mean_pool(const Tensor& x, const Matrix& mask) {
  Tape& tape = tape_of({x});
  const Index groups = mask.rows();
  const Index gsize = mask.cols();
  if (x.rows() != groups * gsize) dim_error("masked_mean_pool", x.value(), mask);
  ColVector inv_count(groups);
  for (Index b = 0; b < groups; ++b) {
    double c = 0.0;
    for (Index j = 0; j < gsize; ++j) c += mask(b, j) != 0.0 ? 1.0 : 0.0;
    inv_count(b) = c > 0.0 ? 1.0 / c : 0.0;
  }
  const Matrix& xv = x.value();
  Matrix out = Matrix::Zero(groups, x.cols());
  for (Index b = 0; b < groups; ++b)
    for (Index j = 0; j < gsize; ++j)
      if (mask(b, j) != 0.0) out.row(b) += xv.row(b * gsize + j);
  out = out.array().colwise() * inv_count.array();
  return tape.record("masked_mean_pool", std::move(out), {x},
                     [x, mask, inv_count, groups, gsize](Tape& t, const Matrix& g) {
                       Matrix d = Matrix::Zero(x.rows(), x.cols());
                       for (Index b = 0; b < groups; ++b)
                         for (Index j = 0; j < gsize; ++j)
                           if (mask(b, j) != 0.0) d.row(b * gsize + j) = g.row(b) * inv_count(b);
                       t.accumulate(x, d);
                     });
}

// --- losses -----------------------------------------------------------------------

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const Index> targets,
                             const ColVector& row_weights) {
  Tape& tape = tape_of({logits});
  const Matrix& x = logits.value();
  if (static_cast<Index>(targets.size()) != x.rows() || row_weights.size() != x.rows())
    throw DimensionError("softmax_cross_entropy: " + std::to_string(targets.size()) +
                         " targets / " + std::to_string(row_weights.size()) + " weights for " +
                         shape_str(x) + " logits");
  Matrix probs(x.rows(), x.cols());
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const Index t = targets[i];
    if (t < 0 || t >= x.cols())
      throw DimensionError("softmax_cross_entropy: target " + std::to_string(t) +
                           " out of range");
    const double mx = x.row(i).maxCoeff();
    const double lse = mx + std::log((x.row(i).array() - mx).exp().sum());
    probs.row(i) = (x.row(i).array() - lse).exp();
    if (row_weights(i) != 0.0) total += row_weights(i) * (lse - x(i, t));
  }
  std::vector<Index> tg(targets.begin(), targets.end());
  return tape.record("softmax_cross_entropy", Matrix::Constant(1, 1, total), {logits},
                     [logits, probs, tg, row_weights](Tape& t, const Matrix& g) {
                       Matrix d = probs;
                       for (Index i = 0; i < d.rows(); ++i) {
                         d(i, tg[i]) -= 1.0;
                         d.row(i) *= row_weights(i) * g(0, 0);
                       }
                       t.accumulate(logits, d);
                     });
}

Tensor sigmoid_bce(const Tensor& logits, const ColVector& labels, const ColVector& row_weights) {
  Tape& tape = tape_of({logits});
  const Matrix& x = logits.value();
  if (x.cols() != 1 || labels.size() != x.rows() || row_weights.size() != x.rows())
    throw DimensionError("sigmoid_bce: expects an Mx1 logit column with M labels and weights");
  double total = 0.0;
  for (Index i = 0; i < x.rows(); ++i) {
    const double l = x(i, 0);
    const double sp = std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l)));
    total += row_weights(i) * (sp - labels(i) * l);
  }
  return tape.record("sigmoid_bce", Matrix::Constant(1, 1, total), {logits},
                     [logits, labels, row_weights](Tape& t, const Matrix& g) {
                       const Matrix& x = logits.value();
                       Matrix d(x.rows(), 1);
                       for (Index i = 0; i < x.rows(); ++i) {
                         const double s = 1.0 / (1.0 + std::exp(-x(i, 0)));
                         d(i, 0) = row_weights(i) * (s - labels(i)) * g(0, 0);
                       }
                       t.accumulate(logits, d);
                     });
}

// --- sparse adjacency -----------------------------------------------------------

namespace {

void check_pattern(const char* op, const SparsePattern& p, Index rows) {
  if (!p || p->rows() != p->cols() || p->rows() != rows || !p->isCompressed())
    throw DimensionError(std::string(op) + ": pattern does not match a " +
                         std::to_string(rows) + "-node graph");
}

void check_values(const char* op, const Tensor& values, const SparsePattern& p) {
  if (values.cols() != 1 || values.rows() != p->nonZeros())
    throw DimensionError(std::string(op) + ": expected " + std::to_string(p->nonZeros()) +
                         "x1 values, got " + shape_str(values.value()));
}

/// Dot product with a fixed operand order so (i, j) and (j, i) agree bitwise.
double sym_dot(const Matrix& a, Index i, Index j) {
  return i <= j ? a.row(i).dot(a.row(j)) : a.row(j).dot(a.row(i));
}

}  // namespace

Tensor pattern_gram(const Tensor& a, const SparsePattern& pattern) {
  Tape& tape = tape_of({a});
  check_pattern("pattern_gram", pattern, a.rows());
  const SparseMatrix& p = *pattern;
  const int* outer = p.outerIndexPtr();
  const int* inner = p.innerIndexPtr();
  Matrix out(p.nonZeros(), 1);
  for (Index i = 0; i < p.rows(); ++i)
    for (int e = outer[i]; e < outer[i + 1]; ++e) out(e, 0) = sym_dot(a.value(), i, inner[e]);
  return tape.record("pattern_gram", std::move(out), {a}, [a, pattern](Tape& t, const Matrix& g) {
    const SparseMatrix& p = *pattern;
    const int* outer = p.outerIndexPtr();
    const int* inner = p.innerIndexPtr();
    const Matrix& x = a.value();
    Matrix d = Matrix::Zero(x.rows(), x.cols());
    for (Index i = 0; i < p.rows(); ++i)
      for (int e = outer[i]; e < outer[i + 1]; ++e) {
        const Index j = inner[e];
        d.row(i) += g(e, 0) * x.row(j);
        d.row(j) += g(e, 0) * x.row(i);
      }
    t.accumulate(a, d);
  });
}

Tensor sparse_row_sum(const Tensor& values, const SparsePattern& pattern) {
  Tape& tape = tape_of({values});
  check_pattern("sparse_row_sum", pattern, pattern ? pattern->rows() : 0);
  check_values("sparse_row_sum", values, pattern);
  const int* outer = pattern->outerIndexPtr();
  Matrix out = Matrix::Zero(pattern->rows(), 1);
  for (Index i = 0; i < pattern->rows(); ++i)
    for (int e = outer[i]; e < outer[i + 1]; ++e) out(i, 0) += values.value()(e, 0);
  return tape.record("sparse_row_sum", std::move(out), {values},
                     [values, pattern](Tape& t, const Matrix& g) {
                       const int* outer = pattern->outerIndexPtr();
                       Matrix d(values.rows(), 1);
                       for (Index i = 0; i < pattern->rows(); ++i)
                         for (int e = outer[i]; e < outer[i + 1]; ++e) d(e, 0) = g(i, 0);
                       t.accumulate(values, d);
                     });
}

Tensor sparse_sym_normalize(const Tensor& values, const Tensor& degree,
                            const SparsePattern& pattern) {
  Tape& tape = tape_of({values, degree});
  check_pattern("sparse_sym_normalize", pattern, degree.rows());
  check_values("sparse_sym_normalize", values, pattern);
  const int* outer = pattern->outerIndexPtr();
  const int* inner = pattern->innerIndexPtr();
  const Matrix& v = values.value();
  const Matrix& deg = degree.value();
  Matrix out(v.rows(), 1);
  for (Index i = 0; i < pattern->rows(); ++i)
    for (int e = outer[i]; e < outer[i + 1]; ++e)
      out(e, 0) = v(e, 0) / std::sqrt(deg(i, 0) * deg(inner[e], 0));
  Matrix saved = out;
  return tape.record(
      "sparse_sym_normalize", std::move(out), {values, degree},
      [values, degree, pattern, saved](Tape& t, const Matrix& g) {
        const int* outer = pattern->outerIndexPtr();
        const int* inner = pattern->innerIndexPtr();
        const Matrix& deg = degree.value();
        Matrix dv(saved.rows(), 1);
        Matrix dd = Matrix::Zero(deg.rows(), 1);
        for (Index i = 0; i < pattern->rows(); ++i)
          for (int e = outer[i]; e < outer[i + 1]; ++e) {
            const Index j = inner[e];
            dv(e, 0) = g(e, 0) / std::sqrt(deg(i, 0) * deg(j, 0));
            const double half = -0.5 * g(e, 0) * saved(e, 0);
            dd(i, 0) += half / deg(i, 0);
            dd(j, 0) += half / deg(j, 0);
          }
        if (t.needs_grad(values)) t.accumulate(values, dv);
        if (t.needs_grad(degree)) t.accumulate(degree, dd);
      });
}

Tensor spmm(const Tensor& values, const SparsePattern& pattern, const Tensor& x) {
  Tape& tape = tape_of({values, x});
  check_pattern("spmm", pattern, x.rows());
  check_values("spmm", values, pattern);
  const int* outer = pattern->outerIndexPtr();
  const int* inner = pattern->innerIndexPtr();
  const Matrix& v = values.value();
  const Matrix& xv = x.value();
  Matrix out = Matrix::Zero(xv.rows(), xv.cols());
  for (Index i = 0; i < pattern->rows(); ++i)
    for (int e = outer[i]; e < outer[i + 1]; ++e) out.row(i) += v(e, 0) * xv.row(inner[e]);
  return tape.record("spmm", std::move(out), {values, x},
                     [values, pattern, x](Tape& t, const Matrix& g) {
                       const int* outer = pattern->outerIndexPtr();
                       const int* inner = pattern->innerIndexPtr();
                       const Matrix& v = values.value();
                       const Matrix& xv = x.value();
                       Matrix dv(v.rows(), 1);
                       Matrix dx = Matrix::Zero(xv.rows(), xv.cols());
                       for (Index i = 0; i < pattern->rows(); ++i)
                         for (int e = outer[i]; e < outer[i + 1]; ++e) {
                           const Index j = inner[e];
                           dv(e, 0) = g.row(i).dot(xv.row(j));
                           dx.row(j) += v(e, 0) * g.row(i);
                         }
                       if (t.needs_grad(values)) t.accumulate(values, dv);
                       if (t.needs_grad(x)) t.accumulate(x, dx);
                     });
}

namespace debug {
void set_faulty_relu_gradient(bool on) { g_faulty_relu.store(on); }
bool faulty_relu_gradient() { return g_faulty_relu.load(); }
}  // namespace debug

}  // namespace gedi
