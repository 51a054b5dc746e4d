#include "gedi/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace gedi {

namespace {

/// Column statistics over visible cells: mean (numeric) or mode (class).
std::vector<double> column_fill(const TabularDataset& ds, const Matrix& vis,
                                std::vector<bool>& fallback) {
  std::vector<double> fill(static_cast<std::size_t>(ds.features()), 0.0);
  fallback.assign(fill.size(), false);
  for (Index j = 0; j < ds.features(); ++j) {
    const ColumnSpec& col = ds.schema.columns[j];
    if (is_numeric(col.kind)) {
      double total = 0.0, n = 0.0;
      for (Index i = 0; i < ds.rows(); ++i)
        if (vis(i, j) != 0.0) {
          total += ds.raw(i, j);
          n += 1.0;
        }
      if (n > 0.0)
        fill[j] = total / n;
      else
        fallback[j] = true;
    } else {
      std::vector<double> counts(static_cast<std::size_t>(col.cardinality()), 0.0);
      for (Index i = 0; i < ds.rows(); ++i)
        if (vis(i, j) != 0.0) counts[static_cast<std::size_t>(std::llround(ds.raw(i, j)))] += 1.0;
      const auto best = std::max_element(counts.begin(), counts.end());
      if (*best == 0.0) fallback[j] = true;
      fill[j] = static_cast<double>(best - counts.begin());
    }
  }
  return fill;
}

Matrix visible_mask(const TabularDataset& ds, const Matrix& visible) {
  return ds.mask.cwiseProduct(visible);
}

}  // namespace

BaselineResult baseline_mean_mode(const TabularDataset& ds, const Matrix& visible) {
  const Matrix vis = visible_mask(ds, visible);
  BaselineResult r;
  const std::vector<double> fill = column_fill(ds, vis, r.fallback_feature);
  r.completed = ds.raw;
  for (Index i = 0; i < ds.rows(); ++i)
    for (Index j = 0; j < ds.features(); ++j)
      if (vis(i, j) == 0.0) r.completed(i, j) = fill[j];
  return r;
}

BaselineResult baseline_knn(const TabularDataset& ds, const Matrix& visible, int neighbors) {
  const Matrix vis = visible_mask(ds, visible);
  BaselineResult r;
  const std::vector<double> fill = column_fill(ds, vis, r.fallback_feature);
  r.completed = ds.raw;
  const Index n = ds.rows();
  const Index k = ds.features();
  const double kf = static_cast<double>(k);

  std::vector<std::pair<double, Index>> cand;
  for (Index i = 0; i < n; ++i) {
    bool any_hidden = false;
    for (Index j = 0; j < k; ++j) any_hidden = any_hidden || vis(i, j) == 0.0;
    if (!any_hidden) continue;

    // Distances from row i to every other row, computed once per row.
    std::vector<double> dist(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
    for (Index other = 0; other < n; ++other) {
      if (other == i) continue;
      double acc = 0.0;
      int shared = 0;
      for (Index j = 0; j < k; ++j) {
        if (vis(i, j) == 0.0 || vis(other, j) == 0.0) continue;
        ++shared;
        if (is_numeric(ds.schema.columns[j].kind)) {
          const double d = ds.x(i, j) - ds.x(other, j);
          acc += d * d;
        } else if (std::llround(ds.raw(i, j)) != std::llround(ds.raw(other, j))) {
          acc += 1.0;
        }
      }
      if (shared > 0) dist[other] = std::sqrt(kf / shared * acc);
    }

    for (Index j = 0; j < k; ++j) {
      if (vis(i, j) != 0.0) continue;
      cand.clear();
      for (Index other = 0; other < n; ++other)
        if (other != i && vis(other, j) != 0.0 && std::isfinite(dist[other]))
          cand.emplace_back(dist[other], other);
      if (cand.empty()) {
        r.completed(i, j) = fill[j];
        ++r.fallback_cells;
        continue;
      }
      const std::size_t take = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(neighbors));
      std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(take), cand.end());
      const ColumnSpec& col = ds.schema.columns[j];
      if (is_numeric(col.kind)) {
        double total = 0.0;
        for (std::size_t t = 0; t < take; ++t) total += ds.raw(cand[t].second, j);
        r.completed(i, j) = total / static_cast<double>(take);
      } else {
        std::vector<int> votes(static_cast<std::size_t>(col.cardinality()), 0);
        for (std::size_t t = 0; t < take; ++t)
          ++votes[static_cast<std::size_t>(std::llround(ds.raw(cand[t].second, j)))];
        r.completed(i, j) =
            static_cast<double>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      }
    }
  }
  return r;
}

}  // namespace gedi
