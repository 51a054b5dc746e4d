#include "gedi/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "gedi/baselines.hpp"
#include "gedi/checkpoint.hpp"
#include "gedi/errors.hpp"
#include "gedi/grad_suite.hpp"
#include "gedi/metrics.hpp"

namespace gedi {

using nlohmann::json;

namespace {

template <typename T>
json optional_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

json metric_json(const Metric& m) { return m.defined ? json(m.value) : json(nullptr); }

json errors_json(const ImputationErrors& e) {
  json per = json::array();
  for (const FeatureError& f : e.per_feature)
    per.push_back({{"name", f.name}, {"kind", to_string(f.kind)}, {"error", metric_json(f.error)}});
  return {{"per_feature", per}, {"mean", metric_json(e.mean)}};
}

json train_config_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  return {
      {"mode", to_string(c.mode)},
      {"epochs", c.epochs},
      {"lr", c.lr},
      {"meta_lr", c.meta_lr},
      {"batch_size", c.batch_size},
      {"train_mask_rate", c.train_mask_rate},
      {"folds", c.folds},
      {"meta_every", c.meta_every},
      {"patience", c.patience},
      {"validate_every", c.validate_every},
      {"pin_weights", c.pin_weights},
      {"seed", c.seed},
      {"model",
       {{"variant", to_string(m.variant)},
        {"width", m.encoder.width},
        {"heads", m.encoder.heads},
        {"layers", m.encoder.layers},
        {"ff_width", m.encoder.ff_width},
        {"hidden", m.hidden},
        {"epsilon", m.graph.epsilon},
        {"graph_layers", m.graph.layers}}},
  };
}

json training_json(const TrainResult& r) {
  return {{"epochs_run", r.epochs_run},
          {"best_epoch", r.best_epoch},
          {"best_validation", optional_json(r.best_validation)},
          {"final_objective", r.loss_history.empty() ? json(nullptr) : json(r.loss_history.back())},
          {"meta_steps", r.meta_steps}};
}

/// Averages of the similarity graphs built over the same consecutive chunks
/// the inference pass uses.
json graph_statistics(const ParamSet& theta, const FeatureLayout& layout, const ModelConfig& config,
                      const Matrix& x, const Matrix& visible, Index batch_size) {
  const Index n = x.rows();
  double density = 0.0, degree = 0.0;
  Index chunks = 0;
  for (Index start = 0; start < n; start += batch_size) {
    const Index len = std::min(batch_size, n - start);
    Tape tape;
    const BoundParams p(tape, theta, [](const std::string&) { return false; });
    const ModelOutput out = forward(p, layout, config, x.middleRows(start, len),
                                    visible.middleRows(start, len));
    density += out.graph->density();
    degree += static_cast<double>(out.graph->adjacency.nonZeros()) / static_cast<double>(len);
    ++chunks;
  }
  const double c = static_cast<double>(std::max<Index>(chunks, 1));
  return {{"epsilon", config.graph.epsilon},
          {"chunks", chunks},
          {"mean_density", density / c},
          {"mean_neighbours", degree / c}};
}

json base_report(const RunConfig& config) {
  return {{"version", kVersion}, {"command", config.command}, {"seed", config.seed},
          {"config", to_json(config)}};
}

ParamSet checkpoint_params(const TrainResult& r) {
  ParamSet all = r.theta;
  if (r.weight_net)
    for (std::size_t i = 0; i < r.weight_net->size(); ++i)
      all.add(r.weight_net->name(i), r.weight_net->value(i));
  return all;
}

/// Imputation outputs shared by impute and predict.
struct Completion {
  Matrix completed_raw;
  Inference inference;
  json report;
};

Completion complete_and_score(const TabularDataset& ds, const MaskSet& masks, const Problem& pr,
                              const TrainConfig& tc, const ParamSet& theta) {
  Completion c;
  c.inference = infer(theta, pr.layout, tc.model, ds.x, pr.inference_visible, tc.batch_size);
  c.completed_raw = finalize_output(c.inference.imputed, ds.raw, pr.inference_visible, ds.schema);
  const Matrix eval = ds.mask.cwiseProduct((1.0 - masks.test.array()).matrix());
  const double evaluated = eval.sum();
  c.report = errors_json(imputation_errors(ds, c.completed_raw, eval));
  c.report["evaluated_entries"] = static_cast<Index>(evaluated);
  c.report["no_evaluated_entries"] = evaluated == 0.0;
  return c;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

json to_json(const RunConfig& c) {
  return {
      {"command", c.command},
      {"data_path", c.data_path},
      {"schema_path", c.schema_path},
      {"synthetic_rows", c.synthetic_rows},
      {"missing_rate", c.missing_rate},
      {"seed", c.seed},
      {"mode", c.mode},
      {"variant", c.variant},
      {"epochs", optional_json(c.epochs)},
      {"batch_size", optional_json(c.batch_size)},
      {"epsilon", optional_json(c.epsilon)},
      {"lr", optional_json(c.lr)},
      {"meta_lr", optional_json(c.meta_lr)},
      {"patience", optional_json(c.patience)},
      {"pin_weights", c.pin_weights},
      {"variants", c.variants},
      {"modes", c.modes},
      {"seeds", c.seeds},
      {"faulty_relu", c.faulty_relu},
      {"out_path", c.out_path},
      {"report_path", c.report_path},
      {"checkpoint_path", c.checkpoint_path},
      {"timing", c.timing},
  };
}

TrainConfig resolve_train_config(const RunConfig& rc) {
  TrainConfig c;
  if (rc.command == "predict") {
    const Mode mode = parse_mode(rc.mode.empty() ? "meta" : rc.mode);
    if (mode == Mode::kImpute) throw ConfigError("predict needs a label mode, not 'impute'");
    c = predict_defaults(mode);
  } else {
    if (!rc.mode.empty() && rc.mode != "impute")
      throw ConfigError("impute does not take mode '" + rc.mode + "'");
    c = impute_defaults();
  }
  c.model.variant = parse_variant(rc.variant);
  c.seed = rc.seed;
  c.pin_weights = rc.pin_weights;
  if (rc.epochs) c.epochs = *rc.epochs;
  if (rc.batch_size) c.batch_size = *rc.batch_size;
  if (rc.epsilon) c.model.graph.epsilon = *rc.epsilon;
  if (rc.lr) c.lr = *rc.lr;
  if (rc.meta_lr) c.meta_lr = *rc.meta_lr;
  if (rc.patience) c.patience = *rc.patience;
  return c;
}

LoadedData load_run_data(const RunConfig& rc) {
  LoadedData d;
  if (rc.synthetic_rows > 0) {
    SyntheticTable t = generate_synthetic_table(rc.synthetic_rows, rc.seed);
    d.table = std::move(t.table);
    d.data = encode_table(d.table, std::move(t.schema));
    return d;
  }
  if (rc.data_path.empty() || rc.schema_path.empty())
    throw ConfigError("--data and --schema are required (or --synthetic N)");
  Schema schema = load_schema(rc.schema_path);
  d.table = read_csv(rc.data_path);
  d.data = encode_table(d.table, std::move(schema));
  return d;
}

MaskSet make_run_masks(const TabularDataset& data, double missing_rate, std::uint64_t seed) {
  MaskSet m;
  m.rate_test = missing_rate;
  m.rate_valid = kValidMaskRate;
  m.test = generate_mcar_mask(data.rows(), data.features(), missing_rate, seed, "mask.test");
  m.valid = generate_mcar_mask(data.rows(), data.features(), kValidMaskRate, seed, "mask.valid");
  return m;
}

Split make_run_split(const TabularDataset& data, std::uint64_t seed) {
  if (!data.train_indicator)
    return split_train_test(data.rows(), kTrainFraction, kValidFractionOfTrain, seed);
  Split s;
  s.train_indicator = *data.train_indicator;
  std::vector<Index> train;
  for (Index i = 0; i < data.rows(); ++i)
    (s.train_indicator(i) != 0.0 ? train : s.test).push_back(i);
  if (train.size() < 2) throw DataError("the train indicator marks fewer than 2 training rows");
  Rng rng = substream(seed, "split");
  std::shuffle(train.begin(), train.end(), rng);
  const Index n_train = static_cast<Index>(train.size());
  const Index n_valid = std::clamp<Index>(
      std::llround(static_cast<double>(n_train) * kValidFractionOfTrain), 1, n_train - 1);
  s.validation.assign(train.begin(), train.begin() + n_valid);
  s.train.assign(train.begin() + n_valid, train.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  return s;
}

CommandOutput cmd_impute(const RunConfig& rc) {
  const TrainConfig tc = resolve_train_config(rc);
  const LoadedData d = load_run_data(rc);
  const TabularDataset& ds = d.data;
  const MaskSet masks = make_run_masks(ds, rc.missing_rate, rc.seed);
  const TrainResult r = train_imputation(ds, masks, tc);
  const Problem pr = make_problem(ds, masks, nullptr);
  const Completion c = complete_and_score(ds, masks, pr, tc, r.theta);

  const Matrix eval = ds.mask.cwiseProduct((1.0 - masks.test.array()).matrix());
  json report = base_report(rc);
  report["resolved"] = train_config_json(tc);
  report["data"] = {{"rows", ds.rows()}, {"features", ds.features()}};
  report["imputation"] = c.report;
  report["baselines"] = {
      {"mean_mode",
       errors_json(imputation_errors(ds, baseline_mean_mode(ds, pr.inference_visible).completed,
                                     eval))},
      {"knn",
       errors_json(imputation_errors(ds, baseline_knn(ds, pr.inference_visible).completed, eval))}};
  report["training"] = training_json(r);
  if (tc.model.variant != Variant::kFeatureOnly)
    report["graph"] =
        graph_statistics(r.theta, pr.layout, tc.model, ds.x, pr.inference_visible, tc.batch_size);

  CommandOutput out;
  out.report = std::move(report);
  out.completed = render_completed(d.table, ds.schema, c.completed_raw, pr.inference_visible);
  out.checkpoint = checkpoint_params(r);
  return out;
}

CommandOutput cmd_predict(const RunConfig& rc) {
  const TrainConfig tc = resolve_train_config(rc);
  const LoadedData d = load_run_data(rc);
  const TabularDataset& ds = d.data;
  if (!ds.labels) throw DataError("predict needs a schema with a target column");
  const MaskSet masks = make_run_masks(ds, rc.missing_rate, rc.seed);
  const Split split = make_run_split(ds, rc.seed);
  const TrainResult r = train_predict(ds, masks, split, tc);
  const Problem pr = make_problem(ds, masks, &split);
  const Completion c = complete_and_score(ds, masks, pr, tc, r.theta);

  ColVector scores(static_cast<Index>(split.test.size())), labels(scores.size());
  for (std::size_t i = 0; i < split.test.size(); ++i) {
    scores(static_cast<Index>(i)) = c.inference.logit(split.test[i]);
    labels(static_cast<Index>(i)) = (*ds.labels)(split.test[i]);
  }
  json prediction = {
      {"mode", to_string(tc.mode)},
      {"test_rows", static_cast<Index>(split.test.size())},
      {"test_auprc", metric_json(auprc(scores, labels))},
      {"train_target_loss", dataset_target_loss(r.theta, pr, tc.model, pr.inference_visible,
                                                split.train, tc.batch_size)},
  };
  if (r.weight_net) {
    json w = {{"target", r.task_weights(0)}};
    for (Index j = 0; j < ds.features(); ++j)
      w[ds.schema.columns[static_cast<std::size_t>(j)].name] = r.task_weights(j + 1);
    prediction["task_weights"] = std::move(w);
  }

  json report = base_report(rc);
  report["resolved"] = train_config_json(tc);
  report["data"] = {{"rows", ds.rows()},
                    {"features", ds.features()},
                    {"train_rows", static_cast<Index>(split.train.size())},
                    {"validation_rows", static_cast<Index>(split.validation.size())}};
  report["imputation"] = c.report;
  report["prediction"] = std::move(prediction);
  report["training"] = training_json(r);
  if (tc.model.variant != Variant::kFeatureOnly)
    report["graph"] =
        graph_statistics(r.theta, pr.layout, tc.model, ds.x, pr.inference_visible, tc.batch_size);

  CommandOutput out;
  out.report = std::move(report);
  out.completed = render_completed(d.table, ds.schema, c.completed_raw, pr.inference_visible);
  out.checkpoint = checkpoint_params(r);
  return out;
}

CommandOutput cmd_ablate(const RunConfig& rc) {
  if (rc.seeds < 1) throw ConfigError("--seeds must be at least 1");
  const std::vector<std::string> variants =
      rc.variants.empty() ? std::vector<std::string>{"gedi", "gedi-f", "gedi-g"} : rc.variants;
  const std::vector<std::string> modes =
      rc.modes.empty() ? std::vector<std::string>{"impute"} : rc.modes;
  for (const std::string& v : variants) parse_variant(v);
  for (const std::string& m : modes) parse_mode(m);

  json cells = json::array();
  for (const std::string& mode : modes) {
    for (const std::string& variant : variants) {
      json runs = json::array();
      std::vector<double> errors, auprcs;
      for (int s = 0; s < rc.seeds; ++s) {
        RunConfig cell = rc;
        cell.command = mode == "impute" ? "impute" : "predict";
        cell.mode = mode == "impute" ? "" : mode;
        cell.variant = variant;
        cell.seed = rc.seed + static_cast<std::uint64_t>(s);
        json r = (mode == "impute" ? cmd_impute(cell) : cmd_predict(cell)).report;
        if (r["imputation"]["mean"].is_number()) errors.push_back(r["imputation"]["mean"]);
        if (r.contains("prediction") && r["prediction"]["test_auprc"].is_number())
          auprcs.push_back(r["prediction"]["test_auprc"]);
        runs.push_back(std::move(r));
      }
      json cell = {{"variant", variant}, {"mode", mode}, {"runs", std::move(runs)}};
      cell["median_mean_imputation_error"] = errors.empty() ? json(nullptr) : json(median(errors));
      if (mode != "impute")
        cell["median_test_auprc"] = auprcs.empty() ? json(nullptr) : json(median(auprcs));
      cells.push_back(std::move(cell));
    }
  }
  json report = base_report(rc);
  report["cells"] = std::move(cells);
  CommandOutput out;
  out.report = std::move(report);
  return out;
}

CommandOutput cmd_gradcheck(const RunConfig& rc) {
  struct FaultGuard {
    explicit FaultGuard(bool on) { debug::set_faulty_relu_gradient(on); }
    ~FaultGuard() { debug::set_faulty_relu_gradient(false); }
  } guard(rc.faulty_relu);

  bool passed = true;
  json checks = json::array();
  for (const CheckResult& c : run_gradient_suite()) {
    passed = passed && c.passed;
    checks.push_back({{"name", c.name},
                      {"max_error", c.max_error},
                      {"tolerance", c.tolerance},
                      {"passed", c.passed},
                      {"parameters", c.parameters}});
  }
  json report = base_report(rc);
  report["checks"] = std::move(checks);
  report["passed"] = passed;
  CommandOutput out;
  out.report = std::move(report);
  return out;
}

std::string format_report(const json& report) { return report.dump(2) + "\n"; }

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw DataError("failed writing '" + path + "'");
}

int dispatch(const RunConfig& rc, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  CommandOutput result;
  if (rc.command == "impute")
    result = cmd_impute(rc);
  else if (rc.command == "predict")
    result = cmd_predict(rc);
  else if (rc.command == "ablate")
    result = cmd_ablate(rc);
  else if (rc.command == "gradcheck")
    result = cmd_gradcheck(rc);
  else
    throw ConfigError("unknown command '" + rc.command + "'");
  if (rc.timing)
    result.report["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  if (!rc.out_path.empty()) {
    if (!result.completed) throw ConfigError("--out is not produced by " + rc.command);
    write_csv(rc.out_path, *result.completed);
  }
  if (!rc.checkpoint_path.empty()) {
    if (!result.checkpoint) throw ConfigError("--checkpoint is not produced by " + rc.command);
    save_checkpoint(rc.checkpoint_path, *result.checkpoint,
                    {{"version", kVersion}, {"config", to_json(rc)}});
  }
  const std::string text = format_report(result.report);
  if (rc.report_path.empty())
    out << text;
  else
    write_text(rc.report_path, text);

  const bool failed = result.report.contains("passed") && !result.report["passed"].get<bool>();
  return failed ? kExitCheckFailed : kExitOk;
}

}  // namespace

int run_command(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(rc, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ArgumentError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    // Schema, parse, dimension and data problems all trace back to the input.
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
}

}  // namespace gedi
