#pragma once

// Batch-level similarity graph and GCN propagation.
//
//   Z* = ReLU(Z W)            S_ij = cos(z*_i, z*_j)
//   S*_ij = S_ij if S_ij > eps else 0
//   A = D^-1/2 S* D^-1/2      G <- ReLU(A G W_l), G(0) = Z
//
// Self-similarity (1 > eps) keeps every node's self-loop; rows of Z* that are
// entirely zero get similarity 0 to everything and an explicit unit self-loop.

#include <optional>
#include <span>

#include "gedi/params.hpp"

namespace gedi {

struct GraphConfig {
  double epsilon = 0.8;
  int layers = 1;
};

struct SimilarityGraph {
  SparseMatrix adjacency;  // normalized A
  double epsilon = 0.0;
  ColVector degree;        // row sums of S*

  Index nodes() const { return adjacency.rows(); }
  double density() const {
    const double n = static_cast<double>(nodes());
    return n > 0 ? static_cast<double>(adjacency.nonZeros()) / (n * n) : 0.0;
  }
};

/// ReLU(Z W).
template <typename DerivedZ, typename DerivedW>
Matrix project_embeddings(const Eigen::MatrixBase<DerivedZ>& z,
                          const Eigen::MatrixBase<DerivedW>& w) {
  return (z * w).cwiseMax(0.0);
}

/// Rows scaled to unit length; zero rows stay zero.
Matrix normalize_rows(const Matrix& z);

/// Pairwise cosine similarity; rows with zero norm have similarity 0 to every
/// row including themselves.  Exactly symmetric.
Matrix cosine_similarity_matrix(const Matrix& zstar);

/// Keeps S_ij > epsilon (ties are dropped) and adds a unit self-loop to any row
/// left without one.  Requires 0 <= epsilon < 1.
SparseMatrix sparsify(const Matrix& similarity, double epsilon);

/// A = D^-1/2 S* D^-1/2.  Throws DataError on a zero-degree row.
SimilarityGraph normalize_adjacency(const SparseMatrix& sparse_similarity, double epsilon);

/// Value-level composite: Z -> A.
SimilarityGraph build_similarity_graph(const Matrix& z, const Matrix& projection, double epsilon);

/// Value-level GCN: L rounds of ReLU(A G W).
Matrix gcn_forward(const Matrix& z, const SimilarityGraph& graph, std::span<const Matrix> weights);

/// Adds "graph.proj" (input_width x d) and "graph.gcn{l}" weights.
void init_graph_encoder(ParamSet& params, Index input_width, Index width,
                        const GraphConfig& config, Rng& rng);

struct GraphEncoding {
  Tensor output;           // G
  SimilarityGraph graph;   // value snapshot of A used in this pass
};

/// Differentiable graph encoder.  Gradients flow through the surviving
/// similarity values and the normalization; the keep/drop pattern is treated
/// as piecewise constant.
GraphEncoding graph_encode(const BoundParams& p, const Tensor& z, const GraphConfig& config);

}  // namespace gedi
