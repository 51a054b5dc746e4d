#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "gedi/baselines.hpp"
#include "gedi/errors.hpp"
#include "gedi/metrics.hpp"
#include "test_util.hpp"

using namespace gedi;

namespace {

ColVector vec(std::initializer_list<double> v) {
  ColVector c(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) c(i++) = x;
  return c;
}

TabularDataset table(const std::string& csv) {
  const Schema s = parse_schema(R"({"columns": [
    {"name": "a", "kind": "continuous"},
    {"name": "b", "kind": "continuous"},
    {"name": "c", "kind": "categorical", "categories": ["p", "q", "r"]}
  ]})");
  return encode_table(parse_csv(csv), s);
}

}  // namespace

TEST_CASE("nrmse cases") {
  CHECK(nrmse(vec({1, 2}), vec({1, 2}), vec({1, 1}), 3.0).value == 0.0);
  const Metric m = nrmse(vec({5}), vec({6}), vec({1}), 10.0);
  CHECK(m.defined);
  CHECK(m.value == doctest::Approx(0.1));
  CHECK(nrmse(vec({4, 4}), vec({5, 5}), vec({1, 1}), 0.0).value == doctest::Approx(1.0));
  CHECK_FALSE(nrmse(vec({1}), vec({2}), vec({0}), 1.0).defined);
}

TEST_CASE("accuracy error cases") {
  CHECK(accuracy_error(vec({0, 1, 2}), vec({0, 1, 2}), vec({1, 1, 1})).value == 0.0);
  CHECK(accuracy_error(vec({0, 1}), vec({1, 0}), vec({1, 1})).value == 1.0);
  CHECK(accuracy_error(vec({0, 1, 2, 1}), vec({0, 1, 2, 0}), vec({1, 1, 1, 1})).value ==
        doctest::Approx(0.25));
  CHECK_FALSE(accuracy_error(vec({0}), vec({0}), vec({0})).defined);
}

TEST_CASE("displacement error cases") {
  CHECK(displacement_error(vec({0, 3}), vec({0, 3}), vec({1, 1}), 5).value == 0.0);
  CHECK(displacement_error(vec({0, 4}), vec({4, 0}), vec({1, 1}), 5).value == 1.0);
  CHECK(displacement_error(vec({1}), vec({3}), vec({1}), 5).value == doctest::Approx(0.5));
  CHECK_THROWS_AS(displacement_error(vec({0}), vec({0}), vec({1}), 1), SchemaError);
}

TEST_CASE("auprc cases") {
  CHECK(auprc(vec({0.9, 0.8, 0.2, 0.1}), vec({1, 1, 0, 0})).value == doctest::Approx(1.0));
  // Step rule: 0.5 * 1 + 0.5 * (2/3).
  CHECK(auprc(vec({0.9, 0.8, 0.1}), vec({1, 0, 1})).value ==
        doctest::Approx(0.5 + 0.5 * 2.0 / 3.0).epsilon(1e-12));
  CHECK(auprc(vec({0.9, 0.8, 0.1}), vec({1, 0, 1})).value == doctest::Approx(0.83333).epsilon(1e-5));
  CHECK(auprc(vec({0.3, 0.1, 0.7}), vec({1, 1, 1})).value == doctest::Approx(1.0));
  CHECK_FALSE(auprc(vec({0.3, 0.1}), vec({0, 0})).defined);
  // Ties form one threshold: one step of recall 1 at precision 1/2.
  CHECK(auprc(vec({0.5, 0.5}), vec({1, 0})).value == doctest::Approx(0.5));
}

TEST_CASE("auprc is invariant to strictly monotone score transforms and lies in (0, 1]") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix s = gedi::testing::uniform(30, 1, rng);
    ColVector y(30);
    std::bernoulli_distribution b(0.4);
    for (Index i = 0; i < 30; ++i) y(i) = b(rng) ? 1.0 : 0.0;
    y(0) = 1.0;
    const ColVector scores = s.col(0);
    const Metric base = auprc(scores, y);
    const ColVector warped = (scores.array() * 3.0).exp() + 2.0;
    CHECK(auprc(warped, y).value == doctest::Approx(base.value).epsilon(1e-12));
    CHECK(base.value > 0.0);
    CHECK(base.value <= 1.0);
  }
}

TEST_CASE("imputation_errors: per-type metrics and mean over defined features") {
  const TabularDataset ds = table("a,b,c\n0,1,p\n10,3,q\n5,,r\n");
  Matrix completed = ds.raw;
  completed(2, 0) = 6.0;  // truth 5, range 10 -> 0.1
  completed(1, 2) = 0.0;  // truth q (1) -> wrong
  Matrix eval = Matrix::Zero(3, 3);
  eval(2, 0) = 1.0;
  eval(1, 2) = 1.0;
  eval(2, 1) = 1.0;  // not observed in truth: ignored
  const ImputationErrors e = imputation_errors(ds, completed, eval);
  CHECK(e.per_feature[0].error.value == doctest::Approx(0.1));
  CHECK_FALSE(e.per_feature[1].error.defined);
  CHECK(e.per_feature[2].error.value == 1.0);
  CHECK(e.mean.value == doctest::Approx(0.55));
}

TEST_CASE("mean/mode baseline fills hidden cells from visible statistics") {
  const TabularDataset ds = table("a,b,c\n1,0,p\n3,2,q\n9,4,q\n");
  Matrix visible = Matrix::Ones(3, 3);
  visible(2, 0) = 0.0;
  visible(0, 2) = 0.0;
  const BaselineResult r = baseline_mean_mode(ds, visible);
  CHECK(r.completed(2, 0) == doctest::Approx(2.0));
  CHECK(r.completed(0, 2) == 1.0);
  CHECK(r.completed(1, 1) == 2.0);

  Matrix none = visible;
  none.col(1).setZero();
  const BaselineResult f = baseline_mean_mode(ds, none);
  CHECK(f.fallback_feature[1]);
  CHECK(f.completed.col(1).isZero());
}

TEST_CASE("kNN: duplicate row wins, truncation to available rows") {
  const TabularDataset ds = table("a,b,c\n1,2,p\n1,2,p\n-3,5,r\n4,-1,q\n");
  Matrix visible = Matrix::Ones(4, 3);
  visible(0, 2) = 0.0;
  visible(0, 1) = 0.0;
  CHECK(baseline_knn(ds, visible, 1).completed(0, 1) == 2.0);
  CHECK(baseline_knn(ds, visible, 1).completed(0, 2) == 0.0);
  // k beyond the candidates averages every visible row.
  CHECK(baseline_knn(ds, visible, 50).completed(0, 1) == doctest::Approx((2.0 + 5.0 - 1.0) / 3.0));
}

TEST_CASE("kNN matches a brute-force nearest-neighbour oracle") {
  const TabularDataset ds = table("a,b,c\n0.5,2,p\n-1,3,q\n2,1,\n0,2.5,r\n");
  Matrix visible = Matrix::Ones(4, 3);
  visible(0, 0) = 0.0;
  visible(0, 2) = 0.0;
  const Matrix vis = ds.mask.cwiseProduct(visible);
  for (int neighbors : {1, 2}) {
    const BaselineResult r = baseline_knn(ds, visible, neighbors);
    for (Index j : {Index{0}, Index{2}}) {
      // Oracle: scaled distance over co-observed features, cells sorted by (distance, row).
      std::vector<std::pair<double, Index>> order;
      for (Index o = 1; o < 4; ++o) {
        if (vis(o, j) == 0.0) continue;
        double acc = 0.0;
        int shared = 0;
        for (Index f = 0; f < 3; ++f) {
          if (vis(0, f) == 0.0 || vis(o, f) == 0.0) continue;
          ++shared;
          acc += f < 2 ? std::pow(ds.x(0, f) - ds.x(o, f), 2) : (ds.raw(0, f) != ds.raw(o, f));
        }
        if (shared) order.emplace_back(std::sqrt(3.0 / shared * acc), o);
      }
      std::sort(order.begin(), order.end());
      order.resize(std::min<std::size_t>(order.size(), static_cast<std::size_t>(neighbors)));
      double want = 0.0;
      if (j == 0) {
        for (auto& [d, o] : order) want += ds.raw(o, j);
        want /= static_cast<double>(order.size());
      } else {
        std::vector<int> votes(3, 0);
        for (auto& [d, o] : order) ++votes[static_cast<std::size_t>(ds.raw(o, j))];
        want = static_cast<double>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      }
      INFO("neighbors " << neighbors << " feature " << j);
      CHECK(r.completed(0, j) == doctest::Approx(want).epsilon(1e-14));
    }
  }
}

TEST_CASE("kNN falls back to mean/mode when no row shares a feature") {
  const TabularDataset ds = table("a,b,c\n1,,\n,2,p\n,4,q\n");
  Matrix visible = Matrix::Ones(3, 3);
  const BaselineResult r = baseline_knn(ds, visible);
  CHECK(r.fallback_cells > 0);
  CHECK(r.completed(0, 1) == doctest::Approx(3.0));
}
