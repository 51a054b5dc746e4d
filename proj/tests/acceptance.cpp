// Acceptance suite: one PASS/FAIL line per criterion, measured values alongside.
// Exit status is non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "gedi/grad_suite.hpp"
#include "gedi/pipeline.hpp"

using namespace gedi;

namespace {

using Clock = std::chrono::steady_clock;
using json = nlohmann::json;

constexpr Index kRows = 1000;
constexpr Index kBatch = 256;
constexpr int kImputeEpochs = 1000;
constexpr int kPredictEpochs = 1000;
constexpr double kImputeMissingRate = 0.3;
constexpr std::uint64_t kSeeds[] = {1, 2, 3};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(const char* pattern, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), pattern, args...);
  return buf;
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

RunConfig synthetic_run(const std::string& command, std::uint64_t seed) {
  RunConfig rc;
  rc.command = command;
  rc.synthetic_rows = kRows;
  rc.seed = seed;
  rc.batch_size = kBatch;
  return rc;
}

// --- shared training runs ------------------------------------------------------

struct ImputeRun {
  json report;
  double seconds = 0.0;
};

std::map<std::pair<std::string, std::uint64_t>, ImputeRun> impute_cache;
std::map<std::pair<std::string, std::uint64_t>, json> predict_cache;

const ImputeRun& impute(const std::string& variant, std::uint64_t seed) {
  const auto key = std::pair{variant, seed};
  if (auto it = impute_cache.find(key); it != impute_cache.end()) return it->second;
  RunConfig rc = synthetic_run("impute", seed);
  rc.variant = variant;
  rc.epochs = kImputeEpochs;
  rc.missing_rate = kImputeMissingRate;
  const auto t0 = Clock::now();
  ImputeRun run{cmd_impute(rc).report, 0.0};
  run.seconds = seconds_since(t0);
  return impute_cache[key] = std::move(run);
}

const json& predict(const std::string& mode, std::uint64_t seed) {
  const auto key = std::pair{mode, seed};
  if (auto it = predict_cache.find(key); it != predict_cache.end()) return it->second;
  RunConfig rc = synthetic_run("predict", seed);
  rc.mode = mode;
  rc.epochs = kPredictEpochs;
  return predict_cache[key] = cmd_predict(rc).report;
}

double feature_error(const json& errors, const std::string& name) {
  for (const json& f : errors.at("per_feature"))
    if (f.at("name") == name) return f.at("error").get<double>();
  throw Error("feature " + name + " missing from report");
}

// --- criteria --------------------------------------------------------------------

std::vector<CheckResult> suite_results;
double suite_seconds = 0.0;

Verdict gradient_suite() {
  const auto t0 = Clock::now();
  suite_results = run_gradient_suite();
  suite_seconds = seconds_since(t0);
  double worst = 0.0;
  std::string failed;
  int count = 0;
  for (const CheckResult& r : suite_results) {
    if (r.name == "meta_gradient") continue;
    ++count;
    worst = std::max(worst, r.max_error);
    if (!(r.passed && r.max_error < 1e-4)) failed += " " + r.name;
  }
  bool composites = true;
  for (const char* name : {"imputation_loss", "target_loss", "joint_loss"})
    composites = composites && std::any_of(suite_results.begin(), suite_results.end(),
                                           [&](const CheckResult& r) { return r.name == name; });
  return {failed.empty() && composites && suite_seconds < 120.0,
          fmt("%d checks, 3 seeds, worst relative error %.2e, %.1f s", count, worst,
              suite_seconds) +
              (failed.empty() ? "" : ", failed:" + failed)};
}

Verdict mask_blindness() {
  const TabularDataset ds = generate_synthetic(kRows, 11);
  const MaskSet masks = make_run_masks(ds, kImputeMissingRate, 11);
  const Problem pr = make_problem(ds, masks, nullptr);
  Rng rng(12);
  std::vector<Index> rows(64);
  std::uniform_int_distribution<Index> pick(0, kRows - 1);
  for (Index& r : rows) r = pick(rng);
  std::bernoulli_distribution keep(0.9);
  Matrix mprime(64, ds.features());
  for (Index i = 0; i < mprime.size(); ++i) mprime.data()[i] = keep(rng) ? 1.0 : 0.0;
  const Batch batch = make_batch(pr, rows, mprime);

  int hidden_cells = 0;
  bool all_equal = true;
  for (Variant v : {Variant::kGedi, Variant::kFeatureOnly, Variant::kGraphOnly}) {
    ModelConfig cfg;
    cfg.variant = v;
    Rng init(13);
    const ParamSet theta = init_model(pr.layout, cfg, init);
    const auto run = [&](const Matrix& input) {
      Tape tape;
      const ModelOutput out = forward(BoundParams(tape, theta), pr.layout, cfg, input,
                                      batch.input_mask);
      const ImputationLoss il = imputation_loss(out.pred, batch.x, batch.loss_mask, pr.layout);
      Matrix xhat = out.pred.imputed.value();
      const double ta = target_loss(out.logits, batch.labels, batch.label_rows).item();
      return std::tuple{out.z.valid() ? out.z.value() : Matrix(), xhat, il.per_feature.value(), ta};
    };
    const auto [z0, x0, l0, t0] = run(batch.x);
    Matrix moved = batch.x;
    std::uniform_real_distribution<double> noise(-100.0, 100.0);
    hidden_cells = 0;
    for (Index i = 0; i < moved.rows(); ++i)
      for (Index j = 0; j < moved.cols(); ++j)
        if (batch.input_mask(i, j) == 0.0) {
          ++hidden_cells;
          moved(i, j) = pr.layout.numeric(j) ? noise(rng) : 0.0;
        }
    const auto [z1, x1, l1, t1] = run(moved);
    // Predictions are compared everywhere the model sees its input.
    bool xhat_equal = true;
    for (Index i = 0; i < x0.rows(); ++i)
      for (Index j = 0; j < pr.layout.features(); ++j)
        if (batch.input_mask(i, j) != 0.0)
          for (Index c = 0; c < pr.layout.head_width[j]; ++c)
            xhat_equal = xhat_equal && x0(i, pr.layout.head_offset[j] + c) ==
                                           x1(i, pr.layout.head_offset[j] + c);
    all_equal = all_equal && z0 == z1 && xhat_equal && l0 == l1 && t0 == t1;
  }
  return {all_equal, fmt("3 variants, 64-row batch, %d hidden input cells perturbed; Z, X-hat "
                         "and losses %s",
                         hidden_cells, all_equal ? "bit-identical" : "DIFFER")};
}

Verdict graph_properties() {
  const TabularDataset ds = generate_synthetic(kRows, 21);
  const FeatureLayout layout = FeatureLayout::from_schema(ds.schema);
  Rng rng(22);
  int graphs = 0;
  bool ok = true;
  double min_eig = 0.0, max_eig = 0.0, min_degree = 1e300;
  for (Index b : {Index{8}, Index{23}, Index{40}, Index{64}}) {
    for (double eps : {0.0, 0.5, 0.8, 0.95}) {
      ModelConfig cfg;
      cfg.graph.epsilon = eps;
      const ParamSet theta = init_model(layout, cfg, rng);
      std::uniform_int_distribution<Index> pick(0, kRows - 1);
      Matrix x(b, ds.features()), mask(b, ds.features());
      for (Index i = 0; i < b; ++i) {
        const Index r = pick(rng);
        x.row(i) = ds.x.row(r);
        mask.row(i) = ds.mask.row(r);
      }
      std::bernoulli_distribution keep(0.7);
      for (Index i = 0; i < mask.size(); ++i)
        if (!keep(rng)) mask.data()[i] = 0.0;
      Tape tape;
      const ModelOutput out = forward(BoundParams(tape, theta), layout, cfg, x, mask);
      const Matrix s =
          cosine_similarity_matrix(project_embeddings(out.z.value(), theta.at("graph.proj")));
      const Matrix a(out.graph->adjacency);
      ok = ok && a == a.transpose();
      for (Index i = 0; i < b; ++i)
        for (Index j = 0; j < b; ++j)
          if (i != j && s(i, j) <= eps) ok = ok && a(i, j) == 0.0;
      const Eigen::SelfAdjointEigenSolver<Matrix> es(a);
      min_eig = std::min(min_eig, es.eigenvalues().minCoeff());
      max_eig = std::max(max_eig, es.eigenvalues().maxCoeff());
      min_degree = std::min(min_degree, out.graph->degree.minCoeff());
      ++graphs;
    }
  }
  ok = ok && min_eig >= -1.0 - 1e-9 && max_eig <= 1.0 + 1e-9 && min_degree > 0.0;
  return {ok, fmt("%d graphs (B 8..64, epsilon 0..0.95): symmetric, thresholded, eigenvalues in "
                  "[%.6f, %.6f], min degree %.3f",
                  graphs, min_eig, max_eig, min_degree)};
}

Verdict meta_gradient_oracle() {
  for (const CheckResult& r : suite_results)
    if (r.name == "meta_gradient")
      return {r.passed && r.max_error < 1e-2 && r.parameters <= 500,
              fmt("%ld parameters, every weight-net coordinate, worst relative error %.2e",
                  r.parameters, r.max_error)};
  return {false, "meta-gradient check not run"};
}

Verdict synthetic_recovery() {
  const ImputeRun& run = impute("gedi", kSeeds[0]);
  const json& r = run.report;
  const double gedi = r.at("imputation").at("mean").get<double>();
  const double mean_mode = r.at("baselines").at("mean_mode").at("mean").get<double>();
  const double g_rule = feature_error(r.at("imputation"), kSyntheticRuleTarget);
  const double k_rule = feature_error(r.at("baselines").at("knn"), kSyntheticRuleTarget);
  const int epochs = r.at("training").at("epochs_run").get<int>();
  return {gedi <= 0.5 * mean_mode && g_rule < k_rule && run.seconds < 600.0,
          fmt("mean error %.4f vs mean/mode %.4f (ratio %.3f); %s error %.4f vs kNN %.4f; "
              "%d epochs, %.0f s",
              gedi, mean_mode, gedi / mean_mode, kSyntheticRuleTarget, g_rule, k_rule, epochs,
              run.seconds)};
}

Verdict end_to_end_ordering() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const double two = predict("two-step", seed).at("prediction").at("train_target_loss").get<double>();
    const double direct = predict("direct", seed).at("prediction").at("train_target_loss").get<double>();
    const double meta = predict("meta", seed).at("prediction").at("train_target_loss").get<double>();
    ok = ok && direct <= two && meta <= two;
    detail += fmt("%sseed %d: direct %.4f, meta %.4f, two-step %.4f", detail.empty() ? "" : "; ",
                  static_cast<int>(seed), direct, meta, two);
  }
  return {ok, detail};
}

Verdict meta_weight_focus() {
  int hits = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const json& w = predict("meta", seed).at("prediction").at("task_weights");
    std::vector<std::pair<double, std::string>> ranked;
    for (const auto& [name, value] : w.items())
      if (name != "target") ranked.emplace_back(value.get<double>(), name);
    std::sort(ranked.rbegin(), ranked.rend());
    int rank = 0;
    for (std::size_t i = 0; i < ranked.size(); ++i)
      if (ranked[i].second == kSyntheticLabelFeature) rank = static_cast<int>(i) + 1;
    hits += rank >= 1 && rank <= 2;
    detail += fmt("%sseed %d: %s weight %.3f rank %d of %zu", detail.empty() ? "" : "; ",
                  static_cast<int>(seed), kSyntheticLabelFeature,
                  w.at(kSyntheticLabelFeature).get<double>(), rank, ranked.size());
  }
  return {hits >= 2, detail};
}

Verdict ablation_ordering() {
  std::map<std::string, double> med;
  std::string detail;
  for (const char* v : {"gedi", "gedi-f", "gedi-g"}) {
    std::vector<double> e;
    for (std::uint64_t seed : kSeeds)
      e.push_back(impute(v, seed).report.at("imputation").at("mean").get<double>());
    med[v] = median(e);
    detail += fmt("%s%s median %.4f (%.4f %.4f %.4f)", detail.empty() ? "" : "; ", v, med[v],
                  e[0], e[1], e[2]);
  }
  return {med["gedi"] <= med["gedi-f"] && med["gedi"] <= med["gedi-g"], detail};
}

Verdict complexity() {
  const TabularDataset ds = generate_synthetic(1024, 31);
  const FeatureLayout layout = FeatureLayout::from_schema(ds.schema);
  const ModelConfig cfg;
  Rng init(32);
  const ParamSet theta = init_model(layout, cfg, init);
  const auto time_graph = [&](Index b) {
    Tape setup;
    const ModelOutput out =
        forward(BoundParams(setup, theta), layout, cfg, ds.x.topRows(b), ds.mask.topRows(b));
    const Matrix z = out.z.value();
    std::vector<double> reps;
    for (int rep = 0; rep < 9; ++rep) {
      Tape tape;
      const BoundParams p(tape, theta);
      const Tensor zt = tape.constant(z);
      const auto t0 = Clock::now();
      const GraphEncoding g = graph_encode(p, zt, cfg.graph);
      reps.push_back(seconds_since(t0));
      if (!g.output.value().allFinite()) throw NumericError("graph encoder output");
    }
    return median(reps);
  };
  time_graph(512);  // warm-up
  const double t512 = time_graph(512);
  const double t1024 = time_graph(1024);
  const double ratio = t1024 / t512;
  return {ratio >= 3.0 && ratio <= 6.0,
          fmt("graph encoder forward %.2f ms at B=512, %.2f ms at B=1024, ratio %.2f",
              1e3 * t512, 1e3 * t1024, ratio)};
}

Verdict determinism() {
  std::string detail;
  bool ok = true;
  for (const char* command : {"impute", "predict"}) {
    RunConfig rc = synthetic_run(command, 5);
    rc.epochs = 30;
    std::string text[2];
    for (std::string& t : text) {
      std::ostringstream out, err;
      if (run_command(rc, out, err) != kExitOk) throw Error(err.str());
      t = out.str();
    }
    ok = ok && text[0] == text[1];
    detail += fmt("%s%s %s (%zu bytes)", detail.empty() ? "" : "; ", command,
                  text[0] == text[1] ? "identical" : "DIFFERENT", text[0].size());
  }
  return {ok, detail};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Verdict()>> criteria[] = {
      {"gradient suite", gradient_suite},
      {"mask-blindness", mask_blindness},
      {"graph properties", graph_properties},
      {"meta-gradient oracle", meta_gradient_oracle},
      {"synthetic recovery", synthetic_recovery},
      {"end-to-end ordering", end_to_end_ordering},
      {"meta-weight focus", meta_weight_focus},
      {"ablation ordering", ablation_ordering},
      {"complexity", complexity},
      {"determinism", determinism},
  };
  int failures = 0, id = 0;
  for (const auto& [name, fn] : criteria) {
    ++id;
    const auto t0 = Clock::now();
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("%s %d %s: %s [%.0f s]\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d of %d criteria passed\n", id - failures, id);
  return failures == 0 ? 0 : 1;
}
