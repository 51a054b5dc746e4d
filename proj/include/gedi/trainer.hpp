#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gedi/adam.hpp"
#include "gedi/model.hpp"
#include "gedi/weight_net.hpp"

namespace gedi {

enum class Mode { kImpute, kTwoStep, kDirect, kMultiTask, kMeta };

const char* to_string(Mode m);
Mode parse_mode(const std::string& name);

struct TrainConfig {
  Mode mode = Mode::kImpute;
  ModelConfig model;
  int epochs = 10000;
  double lr = 1e-3;             // alpha, model parameters
  double meta_lr = 5e-3;        // beta, weight net
  Index batch_size = 5000;
  double train_mask_rate = 0.1; // rate of M' per epoch
  int folds = 3;
  int meta_every = 5;
  int patience = 200;
  int validate_every = 10;
  /// Weight net replaced by the constant 1.
  bool pin_weights = false;
  std::uint64_t seed = 0;
};

TrainConfig impute_defaults();
TrainConfig predict_defaults(Mode mode);

/// Derived masks and row roles for one run.
///   train_visible     M . M_test . M_valid     (model input during training)
///   valid_eval        M . M_test . (1 - M_valid)
///   inference_visible M . M_test
struct Problem {
  const TabularDataset* data = nullptr;
  FeatureLayout layout;
  Matrix train_visible;
  Matrix valid_eval;
  Matrix inference_visible;
  std::vector<Index> loss_rows;        // rows allowed in any loss
  std::vector<char> is_loss_row;
  std::vector<Index> validation_rows;  // label early stopping (prediction only)
};

/// Without a split every row is a loss row.
Problem make_problem(const TabularDataset& data, const MaskSet& masks, const Split* split);

struct Batch {
  std::vector<Index> rows;       // dataset rows
  Matrix x;
  Matrix input_mask;             // train_visible . M'
  Matrix loss_mask;              // train_visible . (1 - M'), loss rows only
  ColVector labels;
  std::vector<Index> label_rows; // batch positions that are loss rows
  bool use_target = true;        // false: L_ta is the constant 0
};

Batch make_batch(const Problem& problem, std::vector<Index> rows, const Matrix& train_mask);

/// Same batch with losses limited to the given subset of `label_rows`.
Batch restrict_rows(const Batch& batch, const std::vector<Index>& positions);

struct LossValues {
  double target = 0.0;
  RowVector features;
};

struct JointGradient {
  double value = 0.0;
  LossValues losses;
  Matrix descriptors;
  std::vector<Matrix> grads;  // d L_joint / d theta
};

/// Value and theta-gradient of L_joint(theta; w).  The loss part of the task
/// descriptors is taken from this same pass and held constant.  `w` == nullptr
/// means all weights are 1.
JointGradient joint_gradient(const ParamSet& theta, const ParamSet* w, const Problem& problem,
                             const ModelConfig& config, const Batch& batch);

/// Task losses without gradients.
LossValues evaluate_losses(const ParamSet& theta, const Problem& problem,
                           const ModelConfig& config, const Batch& batch);

/// Gradient of L_ta over the batch's label rows.
std::vector<Matrix> target_gradient(const ParamSet& theta, const Problem& problem,
                                    const ModelConfig& config, const Batch& batch,
                                    double* value = nullptr);

/// Weights (k+1) x 1 for fixed descriptors.
Matrix weight_values(const ParamSet& w, const Matrix& descriptors);

/// HVP step is kHvpRadius / |u| along u.  Truncation error of the central
/// difference grows with the square of this step; round-off is negligible in
/// 64-bit down to ~1e-6.
inline constexpr double kHvpRadius = 1e-4;

struct MetaGradient {
  std::vector<Matrix> grad;  // in weight-net parameter order
  double u_norm = 0.0;
  bool skipped = false;      // target loss flat at the look-ahead point
};

/// Gradient over w of L_ta(theta - alpha grad_theta L_joint(theta, w)) with
/// L_joint on `meta_train` and L_ta on `meta_valid`.  The second-order term is
/// a central-difference Hessian-vector product with step kHvpRadius / |u|.
MetaGradient meta_gradient(const ParamSet& theta, const ParamSet& w, const Problem& problem,
                           const ModelConfig& config, const Batch& meta_train,
                           const Batch& meta_valid, double alpha);

struct MetaStats {
  int folds_used = 0;
  bool w_updated = false;
  JointGradient theta_step;  // the pass used for the final theta update
};

/// One bi-level round: fold meta-gradients averaged into an Adam step on w
/// (rate meta_lr), then one Adam step on theta with the updated weights.
MetaStats meta_step(ParamSet& theta, ParamSet& w, Adam& theta_opt, Adam& w_opt,
                    const Problem& problem, const TrainConfig& config, const Batch& batch,
                    Rng& folds_rng);

struct Inference {
  Matrix imputed;       // N x head_total
  Matrix label_input;   // N x head_total
  ColVector logit;
  ColVector probability;
};

/// Full-data forward pass in consecutive chunks of `batch_size` rows.
Inference infer(const ParamSet& theta, const FeatureLayout& layout, const ModelConfig& config,
                const Matrix& x, const Matrix& visible, Index batch_size);

/// Mean BCE over `rows` with inputs restricted to `visible`, no training mask.
double dataset_target_loss(const ParamSet& theta, const Problem& problem,
                           const ModelConfig& config, const Matrix& visible,
                           const std::vector<Index>& rows, Index batch_size);

struct TrainResult {
  ParamSet theta;
  std::optional<ParamSet> weight_net;
  std::vector<double> loss_history;   // training objective per epoch
  int epochs_run = 0;
  int best_epoch = 0;
  std::optional<double> best_validation;
  RowVector task_weights;             // (k+1), last epoch's descriptors
  int meta_steps = 0;
};

/// Impute mode: every row enters the losses; early stopping on the mean
/// imputation error of valid_eval entries.
TrainResult train_imputation(const TabularDataset& data, const MaskSet& masks,
                             const TrainConfig& config);

/// Label prediction in the configured mode.  Losses use split.train rows only;
/// early stopping on validation-row AUPRC.
TrainResult train_predict(const TabularDataset& data, const MaskSet& masks, const Split& split,
                          const TrainConfig& config);

}  // namespace gedi
