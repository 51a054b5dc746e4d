#pragma once

#include <vector>

#include "gedi/data.hpp"

namespace gedi {

struct BaselineResult {
  /// N x k in raw units; visible entries copied from the data.
  Matrix completed;
  /// Features with no visible entry (filled with 0 / the first category).
  std::vector<bool> fallback_feature;
  /// kNN only: cells that fell back to mean/mode for lack of candidates.
  Index fallback_cells = 0;
};

/// Mean of visible numeric entries and mode of visible class entries,
/// written into every hidden cell (visible == 0).
BaselineResult baseline_mean_mode(const TabularDataset& ds, const Matrix& visible);

inline constexpr int kDefaultNeighbors = 50;

/// k-nearest-neighbour imputation.  The distance between two rows is
///   sqrt(k / |C| * sum_{j in C} d_j^2)
/// over the set C of features visible in both rows, with d_j the difference of
/// standardized values (numeric) or a 0/1 mismatch (class).  Rows sharing no
/// visible feature are not neighbours.  Hidden numeric cells take the mean of
/// the neighbours' values, class cells their plurality vote (ties to the lower
/// index).  Ties in distance go to the lower row index.
BaselineResult baseline_knn(const TabularDataset& ds, const Matrix& visible,
                            int neighbors = kDefaultNeighbors);

}  // namespace gedi
