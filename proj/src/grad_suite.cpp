#include "gedi/grad_suite.hpp"

#include <algorithm>
#include <functional>
#include <random>

#include "gedi/grad_check.hpp"
#include "gedi/trainer.hpp"

namespace gedi {

namespace {

using Params = std::vector<Matrix>;
using Maker = std::function<Params(Rng&)>;

Matrix uniform(Index rows, Index cols, Rng& rng, double lo = -2.0, double hi = 2.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// sum(x . R) with R fixed by `seed`, so every output coefficient is tested.
Tensor project(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(x, x.tape()->constant(uniform(x.rows(), x.cols(), rng, -1.0, 1.0))));
}

Maker shapes(std::vector<std::array<Index, 2>> dims, double lo = -2.0, double hi = 2.0) {
  return [=](Rng& rng) {
    Params p;
    for (auto [r, c] : dims) p.push_back(uniform(r, c, rng, lo, hi));
    return p;
  };
}

CheckResult check(const std::string& name, const ScalarFunction& f, const Maker& make,
                  const SuiteOptions& opt, std::uint64_t salt) {
  CheckResult r{name, 0.0, opt.tolerance, false};
  for (int s = 0; s < opt.seeds; ++s) {
    Rng rng(salt * 1000 + static_cast<std::uint64_t>(s) + 1);
    const Params p = make(rng);
    r.max_error = std::max(r.max_error, grad_check(f, p, opt.step));
  }
  r.passed = r.max_error < r.tolerance;
  return r;
}

ScalarFunction binary_op(Tensor (*op)(const Tensor&, const Tensor&)) {
  return [op](Tape&, std::span<const Tensor> p) { return project(op(p[0], p[1]), 11); };
}

ScalarFunction unary_op(Tensor (*op)(const Tensor&)) {
  return [op](Tape&, std::span<const Tensor> p) { return project(op(p[0]), 12); };
}

void primitive_checks(std::vector<CheckResult>& out, const SuiteOptions& opt) {
  std::uint64_t salt = 1;
  auto add_check = [&](const std::string& name, const ScalarFunction& f, const Maker& m) {
    out.push_back(check(name, f, m, opt, salt++));
  };
  add_check("matmul", binary_op(matmul), shapes({{3, 4}, {4, 2}}));
  add_check("linear",
            [](Tape&, std::span<const Tensor> p) { return project(linear(p[0], p[1], p[2]), 2); },
            shapes({{3, 4}, {4, 2}, {1, 2}}));
  add_check("add", binary_op(add), shapes({{3, 4}, {1, 4}}));
  add_check("sub", binary_op(sub), shapes({{3, 4}, {3, 1}}));
  add_check("mul", binary_op(mul), shapes({{3, 4}, {3, 4}}));
  add_check("div", binary_op(div), [](Rng& rng) {
    return Params{uniform(3, 4, rng), uniform(1, 1, rng, 0.5, 2.0)};
  });
  add_check("scale",
            [](Tape&, std::span<const Tensor> p) { return project(scale(p[0], -1.7), 3); },
            shapes({{2, 3}}));
  add_check("relu", unary_op(relu), shapes({{4, 5}}));
  add_check("exp", unary_op(exp), shapes({{4, 5}}));
  add_check("log", unary_op(log), shapes({{4, 5}}, 0.2, 2.0));
  add_check("sigmoid", unary_op(sigmoid), shapes({{4, 5}}));
  add_check("softplus", unary_op(softplus), shapes({{4, 5}}));
  add_check("transpose", unary_op(transpose), shapes({{3, 5}}));
  add_check("row_l2_norm", unary_op(row_l2_norm), shapes({{4, 3}}));
  add_check("sum", [](Tape&, std::span<const Tensor> p) { return sum(mul(p[0], p[0])); },
            shapes({{3, 3}}));
  add_check("mean", [](Tape&, std::span<const Tensor> p) { return mean(mul(p[0], p[0])); },
            shapes({{3, 3}}));
  add_check("concat",
            [](Tape&, std::span<const Tensor> p) {
              Tensor c = concat_cols(std::vector<Tensor>{p[0], p[1]});
              return project(concat_rows(std::vector<Tensor>{c, c}), 4);
            },
            shapes({{3, 2}, {3, 4}}));
  add_check("slice_cols",
            [](Tape&, std::span<const Tensor> p) { return project(slice_cols(p[0], 1, 2), 5); },
            shapes({{3, 4}}));
  add_check("gather_rows",
            [](Tape&, std::span<const Tensor> p) {
              const std::vector<Index> idx{2, 0, 2, 1};
              return project(gather_rows(p[0], idx), 6);
            },
            shapes({{3, 4}}));
  add_check("masked_softmax",
            [](Tape&, std::span<const Tensor> p) {
              Matrix mask = Matrix::Ones(3, 4);
              mask(0, 1) = mask(2, 3) = 0.0;
              return project(masked_softmax(p[0], mask), 7);
            },
            shapes({{3, 4}}));
  add_check("layer_norm",
            [](Tape&, std::span<const Tensor> p) {
              return project(layer_norm(p[0], p[1], p[2]), 8);
            },
            shapes({{3, 5}, {1, 5}, {1, 5}}));
  add_check("masked_attention",
            [](Tape&, std::span<const Tensor> p) {
              Matrix mask(2, 3);
              mask << 1, 0, 1, 0, 1, 1;
              return project(masked_attention(p[0], p[1], p[2], mask, 2), 9);
            },
            shapes({{6, 4}, {6, 4}, {6, 4}}));
  add_check("masked_mean_pool",
            [](Tape&, std::span<const Tensor> p) {
              Matrix mask(2, 3);
              mask << 1, 0, 1, 0, 1, 1;
              return project(masked_mean_pool(p[0], mask), 10);
            },
            shapes({{6, 4}}));
  add_check("softmax_cross_entropy",
            [](Tape&, std::span<const Tensor> p) {
              const std::vector<Index> targets{0, 3, 2};
              ColVector w(3);
              w << 0.5, 1.0, 0.25;
              return softmax_cross_entropy(p[0], targets, w);
            },
            shapes({{3, 4}}));
  add_check("sigmoid_bce",
            [](Tape&, std::span<const Tensor> p) {
              ColVector y(4), w(4);
              y << 1, 0, 1, 0;
              w << 0.25, 0.25, 0.5, 1.0;
              return sigmoid_bce(p[0], y, w);
            },
            shapes({{4, 1}}));

  auto pattern = [] {
    SparseMatrix pat(3, 3);
    std::vector<Eigen::Triplet<double>> t{{0, 0, 1}, {0, 2, 1}, {1, 1, 1}, {2, 0, 1}, {2, 2, 1}};
    pat.setFromTriplets(t.begin(), t.end());
    pat.makeCompressed();
    return std::make_shared<const SparseMatrix>(pat);
  }();
  add_check("sparse_graph",
            [pattern](Tape& tape, std::span<const Tensor> p) {
              Tensor vals = add(pattern_gram(p[0], pattern),
                                tape.constant(Matrix::Constant(5, 1, 20.0)));
              Tensor deg = sparse_row_sum(vals, pattern);
              return project(spmm(sparse_sym_normalize(vals, deg, pattern), pattern, p[1]), 13);
            },
            shapes({{3, 4}, {3, 2}}));
}

// --- model composites ---------------------------------------------------------

/// Small mixed-type batch: continuous, 3-category and count columns.
struct Fixture {
  TabularDataset data;
  MaskSet masks;
  Split split;
  ModelConfig config;
  ParamSet theta;
  ParamSet w;
};

Fixture make_fixture(Index n, const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  Fixture f;
  Schema& s = f.data.schema;
  ColumnSpec c0;
  c0.name = "a";
  ColumnSpec c1;
  c1.name = "b";
  c1.kind = FeatureKind::kCategorical;
  c1.categories = {"p", "q", "r"};
  ColumnSpec c2;
  c2.name = "c";
  c2.kind = FeatureKind::kCount;
  s.columns = {c0, c1, c2};
  f.data.x = uniform(n, 3, rng);
  std::uniform_int_distribution<int> cat(0, 2);
  std::bernoulli_distribution coin(0.7);
  f.data.mask = Matrix::Ones(n, 3);
  ColVector labels(n);
  for (Index i = 0; i < n; ++i) {
    f.data.x(i, 1) = cat(rng);
    for (Index j = 0; j < 3; ++j)
      if (!coin(rng)) f.data.mask(i, j) = 0.0;
    f.data.mask(i, i % 3) = 1.0;
    f.data.mask(i, (i + 1) % 3) = 1.0;
    labels(i) = static_cast<double>(i % 2);
  }
  f.data.x = zero_fill(f.data.x, f.data.mask);
  f.data.raw = f.data.x;
  f.data.labels = labels;
  f.masks.test = Matrix::Ones(n, 3);
  f.masks.valid = Matrix::Ones(n, 3);
  f.split.train_indicator = ColVector::Ones(n);
  for (Index i = 0; i < n; ++i) f.split.train.push_back(i);
  f.config = config;
  Rng init = substream(seed, "init");
  const FeatureLayout layout = FeatureLayout::from_schema(s);
  f.theta = init_model(layout, config, init);
  Rng winit = substream(seed, "init.wnet");
  f.w = init_weight_net(layout, winit);
  f.w["wnet.w"] = uniform(f.w.at("wnet.w").rows(), 1, winit, -0.5, 0.5);
  f.w["wnet.b"] = uniform(1, 1, winit, -0.5, 0.5);
  return f;
}

ModelConfig small_model() {
  ModelConfig c;
  c.encoder = {8, 2, 2, 16};
  c.graph.epsilon = 0.5;
  c.hidden = 8;
  return c;
}

/// Batch over all rows with a fixed training mask hiding roughly a third.
Batch fixture_batch(const Problem& pr, std::uint64_t seed) {
  const Index n = pr.data->rows();
  Rng rng(seed);
  std::bernoulli_distribution keep(0.65);
  Matrix mprime(n, pr.data->features());
  for (Index i = 0; i < mprime.size(); ++i) mprime.data()[i] = keep(rng) ? 1.0 : 0.0;
  // A row with no visible cell pools to zero and sits on a ReLU kink; a row
  // with no hidden cell leaves the imputation loss without a target.
  for (Index i = 0; i < n; ++i) {
    mprime(i, i % 3) = 1.0;
    mprime(i, (i + 1) % 3) = 0.0;
  }
  std::vector<Index> rows(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) rows[i] = i;
  return make_batch(pr, rows, mprime);
}

enum class Composite { kTransformer, kEncoder, kImputation, kTarget, kJoint };

CheckResult composite_check(const std::string& name, Composite which, const SuiteOptions& opt) {
  CheckResult r{name, 0.0, opt.tolerance, false};
  for (int s = 0; s < opt.seeds; ++s) {
    const std::uint64_t seed = 500 + static_cast<std::uint64_t>(s);
    const Fixture f = make_fixture(4, small_model(), seed);
    const Problem pr = make_problem(f.data, f.masks, &f.split);
    const Batch batch = fixture_batch(pr, seed);
    // Descriptors are detached, so they stay fixed at the unperturbed point.
    const LossValues base = evaluate_losses(f.theta, pr, f.config, batch);
    const Matrix desc = task_descriptors(pr.layout, base.target, base.features);
    const ScalarFunction fn = [&](Tape& tape, std::span<const Tensor> p) -> Tensor {
      const BoundParams bp(f.theta, p);
      switch (which) {
        case Composite::kTransformer: {
          Tensor e = embed_features(bp, pr.layout, zero_fill(batch.x, batch.input_mask));
          return project(transformer_layer(bp, 0, e, batch.input_mask, f.config.encoder), 21);
        }
        case Composite::kEncoder:
          return project(
              encode_observations(bp, pr.layout, f.config.encoder, batch.x, batch.input_mask), 22);
        default:
          break;
      }
      ModelOutput out = forward(bp, pr.layout, f.config, batch.x, batch.input_mask);
      ImputationLoss im = imputation_loss(out.pred, batch.x, batch.loss_mask, pr.layout);
      Tensor ta = target_loss(out.logits, batch.labels, batch.label_rows);
      if (which == Composite::kImputation) return sum(im.per_feature);
      if (which == Composite::kTarget) return ta;
      Tensor g = task_weights(BoundParams(tape, f.w, [](const std::string&) { return false; }),
                              desc);
      return joint_loss(ta, im.per_feature, g);
    };
    r.parameters = f.theta.total_size();
    const GradCheckReport rep = grad_check_report(fn, f.theta.values(), opt.step);
    r.max_error = std::max(r.max_error, rep.max_relative_error);
  }
  r.passed = r.max_error < r.tolerance;
  return r;
}

/// FD-HVP meta-gradient against coordinate central differences of the
/// look-ahead target loss over every weight-net coefficient.
CheckResult meta_check(const SuiteOptions& opt) {
  CheckResult r{"meta_gradient", 0.0, opt.meta_tolerance, false};
  ModelConfig c;
  c.encoder = {4, 2, 1, 8};
  c.graph.epsilon = 0.5;
  c.hidden = 4;
  const double alpha = 0.05;
  for (int s = 0; s < opt.seeds; ++s) {
    const std::uint64_t seed = 900 + static_cast<std::uint64_t>(s);
    const Fixture f = make_fixture(8, c, seed);
    const Problem pr = make_problem(f.data, f.masks, &f.split);
    const Batch batch = fixture_batch(pr, seed);
    const Batch train = restrict_rows(batch, {0, 1, 2, 3, 4});
    const Batch valid = restrict_rows(batch, {5, 6, 7});
    r.parameters = f.theta.total_size() + f.w.total_size();
    const MetaGradient mg = meta_gradient(f.theta, f.w, pr, c, train, valid, alpha);

    const auto objective = [&](const ParamSet& w) {
      const JointGradient jg = joint_gradient(f.theta, &w, pr, c, train);
      ParamSet look = f.theta;
      for (std::size_t i = 0; i < look.size(); ++i) look.value(i) -= alpha * jg.grads[i];
      return evaluate_losses(look, pr, c, valid).target;
    };
    std::vector<Matrix> fd;
    ParamSet w = f.w;
    for (std::size_t i = 0; i < w.size(); ++i) {
      Matrix g(w.value(i).rows(), w.value(i).cols());
      for (Index j = 0; j < g.size(); ++j) {
        double& x = w.value(i).data()[j];
        const double orig = x;
        x = orig + opt.step;
        const double up = objective(w);
        x = orig - opt.step;
        const double down = objective(w);
        x = orig;
        g.data()[j] = (up - down) / (2.0 * opt.step);
      }
      fd.push_back(std::move(g));
    }
    r.max_error = std::max(r.max_error, max_relative_error(mg.grad, fd));
  }
  r.passed = r.max_error < r.tolerance;
  return r;
}

}  // namespace

std::vector<CheckResult> run_gradient_suite(const SuiteOptions& options) {
  std::vector<CheckResult> out;
  primitive_checks(out, options);
  out.push_back(composite_check("transformer_layer", Composite::kTransformer, options));
  out.push_back(composite_check("encode_observations", Composite::kEncoder, options));
  out.push_back(composite_check("imputation_loss", Composite::kImputation, options));
  out.push_back(composite_check("target_loss", Composite::kTarget, options));
  out.push_back(composite_check("joint_loss", Composite::kJoint, options));
  if (options.include_meta) out.push_back(meta_check(options));
  return out;
}

}  // namespace gedi
