#include "gedi/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gedi/errors.hpp"
#include "gedi/metrics.hpp"

namespace gedi {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::kImpute:
      return "impute";
    case Mode::kTwoStep:
      return "two-step";
    case Mode::kDirect:
      return "direct";
    case Mode::kMultiTask:
      return "multi-task";
    case Mode::kMeta:
      return "meta";
  }
  return "?";
}

Mode parse_mode(const std::string& name) {
  for (Mode m : {Mode::kImpute, Mode::kTwoStep, Mode::kDirect, Mode::kMultiTask, Mode::kMeta})
    if (name == to_string(m)) return m;
  throw ConfigError("unknown mode '" + name +
                    "' (expected impute, two-step, direct, multi-task or meta)");
}

TrainConfig impute_defaults() {
  TrainConfig c;
  c.mode = Mode::kImpute;
  c.epochs = 10000;
  c.lr = 1e-3;
  c.batch_size = 5000;
  return c;
}

TrainConfig predict_defaults(Mode mode) {
  TrainConfig c;
  c.mode = mode;
  c.epochs = 5000;
  c.lr = 1e-3;
  c.meta_lr = 5e-3;
  c.batch_size = 2000;
  return c;
}

Problem make_problem(const TabularDataset& data, const MaskSet& masks, const Split* split) {
  const Index n = data.rows(), k = data.features();
  for (const Matrix* m : {&masks.test, &masks.valid})
    if (m->rows() != n || m->cols() != k) throw DimensionError("make_problem: mask shape");
  Problem p;
  p.data = &data;
  p.layout = FeatureLayout::from_schema(data.schema);
  p.inference_visible = data.mask.cwiseProduct(masks.test);
  p.train_visible = p.inference_visible.cwiseProduct(masks.valid);
  p.valid_eval = p.inference_visible.cwiseProduct((1.0 - masks.valid.array()).matrix());
  p.is_loss_row.assign(static_cast<std::size_t>(n), 0);
  if (split) {
    if (split->train_indicator.size() != n) throw DimensionError("make_problem: split size");
    p.loss_rows = split->train;
    p.validation_rows = split->validation;
  } else {
    p.loss_rows.resize(static_cast<std::size_t>(n));
    std::iota(p.loss_rows.begin(), p.loss_rows.end(), 0);
  }
  for (Index r : p.loss_rows) p.is_loss_row[r] = 1;
  return p;
}

Batch make_batch(const Problem& problem, std::vector<Index> rows, const Matrix& train_mask) {
  const TabularDataset& ds = *problem.data;
  const Index b = static_cast<Index>(rows.size()), k = ds.features();
  Batch batch;
  batch.x.resize(b, k);
  batch.input_mask.resize(b, k);
  batch.loss_mask.resize(b, k);
  batch.labels = ColVector::Zero(b);
  for (Index i = 0; i < b; ++i) {
    const Index r = rows[i];
    const auto vis = problem.train_visible.row(r);
    batch.x.row(i) = ds.x.row(r);
    batch.input_mask.row(i) = vis.cwiseProduct(train_mask.row(i));
    if (problem.is_loss_row[r]) {
      batch.loss_mask.row(i) = vis.array() * (1.0 - train_mask.row(i).array());
      batch.label_rows.push_back(i);
    } else {
      batch.loss_mask.row(i).setZero();
    }
    if (ds.labels) batch.labels(i) = (*ds.labels)(r);
  }
  batch.rows = std::move(rows);
  return batch;
}

Batch restrict_rows(const Batch& batch, const std::vector<Index>& positions) {
  Batch out = batch;
  std::vector<char> keep(static_cast<std::size_t>(batch.x.rows()), 0);
  for (Index i : positions) keep[i] = 1;
  for (Index i = 0; i < out.loss_mask.rows(); ++i)
    if (!keep[i]) out.loss_mask.row(i).setZero();
  out.label_rows = positions;
  std::sort(out.label_rows.begin(), out.label_rows.end());
  return out;
}

namespace {

const BoundParams::Predicate kFrozen = [](const std::string&) { return false; };

struct Pass {
  ModelOutput out;
  Tensor target;
  ImputationLoss imputation;
};

Pass run_pass(const BoundParams& p, const Problem& problem, const ModelConfig& config,
              const Batch& batch) {
  Pass pass;
  pass.out = forward(p, problem.layout, config, batch.x, batch.input_mask);
  pass.imputation = imputation_loss(pass.out.pred, batch.x, batch.loss_mask, problem.layout);
  if (batch.use_target && !batch.label_rows.empty())
    pass.target = target_loss(pass.out.logits, batch.labels, batch.label_rows);
  else
    pass.target = p.tape().scalar(0.0);
  return pass;
}

LossValues loss_values(const Pass& pass) {
  return {pass.target.item(), pass.imputation.per_feature.value().row(0)};
}

std::vector<Index> sample_rows(Index n, Index batch_size, Rng& rng) {
  std::vector<Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  if (batch_size >= n) return rows;
  for (Index i = 0; i < batch_size; ++i) {
    std::uniform_int_distribution<Index> pick(i, n - 1);
    std::swap(rows[i], rows[pick(rng)]);
  }
  rows.resize(static_cast<std::size_t>(batch_size));
  return rows;
}

Matrix draw_train_mask(Index rows, Index cols, double rate, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng) < rate ? 0.0 : 1.0;
  return m;
}

void axpy(ParamSet& out, const ParamSet& base, const std::vector<Matrix>& dir, double step) {
  out = base;
  for (std::size_t i = 0; i < out.size(); ++i) out.value(i) += step * dir[i];
}

}  // namespace

JointGradient joint_gradient(const ParamSet& theta, const ParamSet* w, const Problem& problem,
                             const ModelConfig& config, const Batch& batch) {
  Tape tape;
  BoundParams p(tape, theta);
  Pass pass = run_pass(p, problem, config, batch);
  JointGradient jg;
  jg.losses = loss_values(pass);
  jg.descriptors = task_descriptors(problem.layout, jg.losses.target, jg.losses.features);
  Tensor weights = w ? task_weights(BoundParams(tape, *w, kFrozen), jg.descriptors)
                     : tape.constant(Matrix::Ones(problem.layout.features() + 1, 1));
  Tensor loss = joint_loss(pass.target, pass.imputation.per_feature, weights);
  tape.backward(loss);
  jg.value = loss.item();
  jg.grads = p.grads();
  return jg;
}

LossValues evaluate_losses(const ParamSet& theta, const Problem& problem,
                           const ModelConfig& config, const Batch& batch) {
  Tape tape;
  BoundParams p(tape, theta, kFrozen);
  return loss_values(run_pass(p, problem, config, batch));
}

std::vector<Matrix> target_gradient(const ParamSet& theta, const Problem& problem,
                                    const ModelConfig& config, const Batch& batch,
                                    double* value) {
  Tape tape;
  BoundParams p(tape, theta);
  ModelOutput out = forward(p, problem.layout, config, batch.x, batch.input_mask);
  Tensor loss = target_loss(out.logits, batch.labels, batch.label_rows);
  tape.backward(loss);
  if (value) *value = loss.item();
  return p.grads();
}

Matrix weight_values(const ParamSet& w, const Matrix& descriptors) {
  Tape tape;
  return task_weights(BoundParams(tape, w, kFrozen), descriptors).value();
}

MetaGradient meta_gradient(const ParamSet& theta, const ParamSet& w, const Problem& problem,
                           const ModelConfig& config, const Batch& meta_train,
                           const Batch& meta_valid, double alpha) {
  const JointGradient jg = joint_gradient(theta, &w, problem, config, meta_train);
  ParamSet look;
  axpy(look, theta, jg.grads, -alpha);
  const std::vector<Matrix> u = target_gradient(look, problem, config, meta_valid);

  MetaGradient mg;
  double sq = 0.0;
  for (const Matrix& m : u) sq += m.squaredNorm();
  mg.u_norm = std::sqrt(sq);
  if (mg.u_norm == 0.0) {
    mg.skipped = true;
    for (std::size_t i = 0; i < w.size(); ++i)
      mg.grad.push_back(Matrix::Zero(w.value(i).rows(), w.value(i).cols()));
    return mg;
  }
  const double r = kHvpRadius / (mg.u_norm + 1e-12);
  ParamSet shifted;
  axpy(shifted, theta, u, r);
  const LossValues plus = evaluate_losses(shifted, problem, config, meta_train);
  axpy(shifted, theta, u, -r);
  const LossValues minus = evaluate_losses(shifted, problem, config, meta_train);

  // d/dw of L_joint(theta +- r u, w) is sum_i L_i(theta +- r u) dg_i/dw with the
  // descriptors frozen, so the difference folds into per-task coefficients.
  const Index k = problem.layout.features();
  Matrix coef(k + 1, 1);
  coef(0, 0) = (plus.target - minus.target) / (2.0 * r);
  for (Index j = 0; j < k; ++j) coef(j + 1, 0) = (plus.features(j) - minus.features(j)) / (2.0 * r);

  Tape tape;
  BoundParams wp(tape, w);
  Tensor g = task_weights(wp, jg.descriptors);
  tape.backward(sum(mul(g, tape.constant(coef))));
  mg.grad = wp.grads();
  for (Matrix& m : mg.grad) m *= -alpha;
  return mg;
}

MetaStats meta_step(ParamSet& theta, ParamSet& w, Adam& theta_opt, Adam& w_opt,
                    const Problem& problem, const TrainConfig& config, const Batch& batch,
                    Rng& folds_rng) {
  const int c = config.folds;
  if (c < 2) throw ConfigError("meta folds must be at least 2");
  if (static_cast<int>(batch.label_rows.size()) < c)
    throw DataError("meta_step: batch has " + std::to_string(batch.label_rows.size()) +
                    " labeled training rows, fewer than " + std::to_string(c) + " folds");
  std::vector<Index> order = batch.label_rows;
  std::shuffle(order.begin(), order.end(), folds_rng);

  MetaStats stats;
  std::vector<Matrix> total;
  for (int fold = 0; fold < c; ++fold) {
    std::vector<Index> train_pos, valid_pos;
    for (std::size_t i = 0; i < order.size(); ++i)
      (static_cast<int>(i % static_cast<std::size_t>(c)) == fold ? valid_pos : train_pos)
          .push_back(order[i]);
    const MetaGradient mg =
        meta_gradient(theta, w, problem, config.model, restrict_rows(batch, train_pos),
                      restrict_rows(batch, valid_pos), config.lr);
    if (mg.skipped) continue;
    if (total.empty())
      total = mg.grad;
    else
      for (std::size_t i = 0; i < total.size(); ++i) total[i] += mg.grad[i];
    ++stats.folds_used;
  }
  if (stats.folds_used > 0) {
    for (Matrix& m : total) m /= static_cast<double>(stats.folds_used);
    w_opt.step(w.values(), total, config.meta_lr);
    stats.w_updated = true;
  }
  stats.theta_step =
      joint_gradient(theta, config.pin_weights ? nullptr : &w, problem, config.model, batch);
  theta_opt.step(theta.values(), stats.theta_step.grads, config.lr);
  return stats;
}

Inference infer(const ParamSet& theta, const FeatureLayout& layout, const ModelConfig& config,
                const Matrix& x, const Matrix& visible, Index batch_size) {
  const Index n = x.rows();
  if (batch_size < 1) throw ConfigError("batch size must be positive");
  Inference inf;
  inf.imputed.resize(n, layout.head_total);
  inf.label_input.resize(n, layout.head_total);
  inf.logit.resize(n);
  inf.probability.resize(n);
  for (Index start = 0; start < n; start += batch_size) {
    const Index len = std::min(batch_size, n - start);
    Tape tape;
    BoundParams p(tape, theta, kFrozen);
    ModelOutput out = forward(p, layout, config, x.middleRows(start, len),
                              visible.middleRows(start, len));
    inf.imputed.middleRows(start, len) = out.pred.imputed.value();
    inf.label_input.middleRows(start, len) = out.label_input.value();
    inf.logit.segment(start, len) = out.logits.value().col(0);
  }
  inf.probability = (1.0 + (-inf.logit.array()).exp()).inverse().matrix();
  return inf;
}

namespace {

double mean_bce(const ColVector& logit, const ColVector& labels, const std::vector<Index>& rows) {
  if (rows.empty()) throw DataError("target loss over an empty row set");
  double total = 0.0;
  for (Index r : rows) {
    const double l = logit(r);
    total += std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l))) - labels(r) * l;
  }
  return total / static_cast<double>(rows.size());
}

}  // namespace

double dataset_target_loss(const ParamSet& theta, const Problem& problem,
                           const ModelConfig& config, const Matrix& visible,
                           const std::vector<Index>& rows, Index batch_size) {
  const TabularDataset& ds = *problem.data;
  if (!ds.labels) throw DataError("dataset has no labels");
  const Inference inf = infer(theta, problem.layout, config, ds.x, visible, batch_size);
  return mean_bce(inf.logit, *ds.labels, rows);
}

namespace {

using Score = std::optional<double>;  // higher is better; nullopt = undefined

Score imputation_score(const ParamSet& theta, const Problem& pr, const TrainConfig& cfg) {
  const TabularDataset& ds = *pr.data;
  const Inference inf = infer(theta, pr.layout, cfg.model, ds.x, pr.train_visible, cfg.batch_size);
  const Matrix completed = finalize_output(inf.imputed, ds.raw, pr.train_visible, ds.schema);
  const Metric m = imputation_errors(ds, completed, pr.valid_eval).mean;
  if (!m.defined) return std::nullopt;
  return -m.value;
}

Score auprc_score(const ColVector& probability, const Problem& pr) {
  const ColVector& labels = *pr.data->labels;
  ColVector s(static_cast<Index>(pr.validation_rows.size()));
  ColVector y(s.size());
  for (Index i = 0; i < s.size(); ++i) {
    s(i) = probability(pr.validation_rows[i]);
    y(i) = labels(pr.validation_rows[i]);
  }
  const Metric m = auprc(s, y);
  if (!m.defined) return std::nullopt;
  return m.value;
}

Score prediction_score(const ParamSet& theta, const Problem& pr, const TrainConfig& cfg) {
  const TabularDataset& ds = *pr.data;
  const Inference inf =
      infer(theta, pr.layout, cfg.model, ds.x, pr.inference_visible, cfg.batch_size);
  return auprc_score(inf.probability, pr);
}

/// Early-stopping bookkeeping shared by all loops.
struct Tracker {
  ParamSet best;
  Score best_score;
  int best_epoch = 0;

  /// Returns true when training should stop.
  bool update(const ParamSet& theta, Score score, int epoch, int patience) {
    if (!score || !best_score || *score > *best_score) {
      best = theta;
      best_score = score;
      best_epoch = epoch;
      return false;
    }
    return epoch - best_epoch >= patience;
  }
};

bool validation_due(int epoch, const TrainConfig& cfg) {
  return epoch == cfg.epochs || (cfg.validate_every > 0 && epoch % cfg.validate_every == 0);
}

void check_config(const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ConfigError("epochs must be non-negative");
  if (cfg.batch_size < 1) throw ConfigError("batch size must be positive");
  if (!(cfg.train_mask_rate >= 0.0 && cfg.train_mask_rate <= 1.0))
    throw ConfigError("train mask rate must lie in [0, 1]");
  if (cfg.lr < 0.0 || cfg.meta_lr < 0.0) throw ConfigError("learning rates must be non-negative");
  if (cfg.meta_every < 1) throw ConfigError("meta cadence must be positive");
  if (cfg.patience < 1) throw ConfigError("patience must be positive");
}

/// Shared epoch loop for every mode that updates the whole model.
TrainResult run_loop(const Problem& pr, const TrainConfig& cfg, Mode mode, ParamSet theta,
                     Rng& batch_rng, Rng& mask_rng) {
  const TabularDataset& ds = *pr.data;
  const Index k = ds.features();
  Rng init_w = substream(cfg.seed, "init.wnet");
  Rng folds_rng = substream(cfg.seed, "folds");
  ParamSet w = init_weight_net(pr.layout, init_w);
  const bool weighted = mode == Mode::kMultiTask || mode == Mode::kMeta;
  const ParamSet* w_ptr = cfg.pin_weights ? nullptr : &w;
  Adam theta_opt, w_opt;

  TrainResult res;
  res.task_weights = RowVector::Ones(k + 1);
  Tracker tracker;
  tracker.best = theta;
  const auto score = [&](const ParamSet& t) {
    return mode == Mode::kImpute ? imputation_score(t, pr, cfg) : prediction_score(t, pr, cfg);
  };

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<Index> rows = sample_rows(ds.rows(), cfg.batch_size, batch_rng);
    const Matrix mprime =
        draw_train_mask(static_cast<Index>(rows.size()), k, cfg.train_mask_rate, mask_rng);
    Batch batch = make_batch(pr, std::move(rows), mprime);
    batch.use_target = mode != Mode::kImpute;

    double objective = 0.0;
    if (mode == Mode::kDirect) {
      if (!batch.label_rows.empty()) {
        const std::vector<Matrix> g = target_gradient(theta, pr, cfg.model, batch, &objective);
        theta_opt.step(theta.values(), g, cfg.lr);
      }
    } else if (mode == Mode::kMeta && epoch % cfg.meta_every == 0) {
      const MetaStats st = meta_step(theta, w, theta_opt, w_opt, pr, cfg, batch, folds_rng);
      objective = st.theta_step.value;
      if (w_ptr) res.task_weights = weight_values(w, st.theta_step.descriptors).transpose();
      ++res.meta_steps;
    } else {
      const JointGradient jg =
          joint_gradient(theta, weighted ? w_ptr : nullptr, pr, cfg.model, batch);
      theta_opt.step(theta.values(), jg.grads, cfg.lr);
      objective = jg.value;
      if (weighted && w_ptr) res.task_weights = weight_values(w, jg.descriptors).transpose();
    }
    res.loss_history.push_back(objective);
    res.epochs_run = epoch;
    if (validation_due(epoch, cfg) && tracker.update(theta, score(theta), epoch, cfg.patience))
      break;
  }
  res.theta = tracker.best;
  res.best_epoch = tracker.best_epoch;
  res.best_validation = tracker.best_score;
  if (weighted) res.weight_net = w;
  return res;
}

/// Second stage of two-step: only the label head is fitted, on the frozen
/// imputer's completed features.
void fit_label_head(TrainResult& res, const Problem& pr, const TrainConfig& cfg, Rng& batch_rng) {
  const TabularDataset& ds = *pr.data;
  const Matrix train_input =
      infer(res.theta, pr.layout, cfg.model, ds.x, pr.train_visible, cfg.batch_size).label_input;
  const Matrix valid_input =
      infer(res.theta, pr.layout, cfg.model, ds.x, pr.inference_visible, cfg.batch_size)
          .label_input;
  const ColVector& labels = *ds.labels;
  const auto valid_score = [&](const ParamSet& t) {
    Tape tape;
    BoundParams p(tape, t, kFrozen);
    const ColVector logit = label_logits(p, tape.constant(valid_input)).value().col(0);
    return auprc_score((1.0 + (-logit.array()).exp()).inverse().matrix(), pr);
  };

  ParamSet theta = res.theta;
  Adam opt;
  Tracker tracker;
  tracker.best = theta;
  res.loss_history.clear();
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const std::vector<Index> rows = sample_rows(ds.rows(), cfg.batch_size, batch_rng);
    std::vector<Index> label_rows;
    Matrix input(static_cast<Index>(rows.size()), pr.layout.head_total);
    ColVector y(static_cast<Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      input.row(static_cast<Index>(i)) = train_input.row(rows[i]);
      y(static_cast<Index>(i)) = labels(rows[i]);
      if (pr.is_loss_row[rows[i]]) label_rows.push_back(static_cast<Index>(i));
    }
    double objective = 0.0;
    if (!label_rows.empty()) {
      Tape tape;
      BoundParams p(tape, theta, is_label_param);
      Tensor loss = target_loss(label_logits(p, tape.constant(std::move(input))), y, label_rows);
      tape.backward(loss);
      objective = loss.item();
      opt.step(theta.values(), p.grads(), cfg.lr);
    }
    res.loss_history.push_back(objective);
    if (validation_due(epoch, cfg) && tracker.update(theta, valid_score(theta), epoch, cfg.patience))
      break;
  }
  res.theta = tracker.best;
  res.best_epoch = tracker.best_epoch;
  res.best_validation = tracker.best_score;
}

ParamSet initial_model(const Problem& pr, const TrainConfig& cfg) {
  Rng init = substream(cfg.seed, "init");
  return init_model(pr.layout, cfg.model, init);
}

}  // namespace

TrainResult train_imputation(const TabularDataset& data, const MaskSet& masks,
                             const TrainConfig& config) {
  check_config(config);
  const Problem pr = make_problem(data, masks, nullptr);
  if (pr.train_visible.sum() == 0.0) throw DataError("no observed entries to train on");
  Rng batch_rng = substream(config.seed, "batch");
  Rng mask_rng = substream(config.seed, "mask");
  return run_loop(pr, config, Mode::kImpute, initial_model(pr, config), batch_rng, mask_rng);
}

TrainResult train_predict(const TabularDataset& data, const MaskSet& masks, const Split& split,
                          const TrainConfig& config) {
  check_config(config);
  if (!data.labels) throw DataError("label prediction needs a target column");
  if (config.mode == Mode::kImpute) throw ConfigError("train_predict called in impute mode");
  const Problem pr = make_problem(data, masks, &split);
  if (pr.loss_rows.empty()) throw DataError("no training rows");
  Rng batch_rng = substream(config.seed, "batch");
  Rng mask_rng = substream(config.seed, "mask");
  ParamSet theta = initial_model(pr, config);
  if (config.mode != Mode::kTwoStep)
    return run_loop(pr, config, config.mode, std::move(theta), batch_rng, mask_rng);

  if (pr.train_visible.sum() == 0.0) throw DataError("no observed entries to train on");
  TrainResult res = run_loop(pr, config, Mode::kImpute, std::move(theta), batch_rng, mask_rng);
  fit_label_head(res, pr, config, batch_rng);
  return res;
}

}  // namespace gedi
