#include "gedi/graph_encoder.hpp"

#include <cmath>
#include <string>

#include "gedi/errors.hpp"

namespace gedi {

namespace {

double ordered_dot(const Matrix& n, Index i, Index j) {
  return i <= j ? n.row(i).dot(n.row(j)) : n.row(j).dot(n.row(i));
}

Matrix similarity_from_normalized(const Matrix& n) {
  const Index b = n.rows();
  Matrix s(b, b);
  for (Index i = 0; i < b; ++i)
    for (Index j = i; j < b; ++j) s(i, j) = s(j, i) = ordered_dot(n, i, j);
  return s;
}

}  // namespace

Matrix normalize_rows(const Matrix& z) {
  ColVector norms = z.rowwise().norm();
  ColVector guard = (norms.array() > 0.0).select(ColVector::Zero(norms.size()), 1.0);
  return z.array().colwise() / (norms + guard).array();
}

Matrix cosine_similarity_matrix(const Matrix& zstar) {
  return similarity_from_normalized(normalize_rows(zstar));
}

SparseMatrix sparsify(const Matrix& similarity, double epsilon) {
  if (!(epsilon >= 0.0 && epsilon < 1.0))
    throw ArgumentError("sparsify: epsilon must lie in [0, 1)");
  const Index b = similarity.rows();
  std::vector<Eigen::Triplet<double, int>> entries;
  for (Index i = 0; i < b; ++i) {
    bool self = false;
    for (Index j = 0; j < b; ++j) {
      if (similarity(i, j) > epsilon) {
        entries.emplace_back(static_cast<int>(i), static_cast<int>(j), similarity(i, j));
        self = self || i == j;
      }
    }
    if (!self) entries.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
  }
  SparseMatrix s(b, b);
  s.setFromTriplets(entries.begin(), entries.end());
  s.makeCompressed();
  return s;
}

SimilarityGraph normalize_adjacency(const SparseMatrix& sparse_similarity, double epsilon) {
  SimilarityGraph g;
  g.epsilon = epsilon;
  g.degree = ColVector::Zero(sparse_similarity.rows());
  for (Index i = 0; i < sparse_similarity.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(sparse_similarity, i); it; ++it) g.degree(i) += it.value();
  for (Index i = 0; i < g.degree.size(); ++i)
    if (!(g.degree(i) > 0.0))
      throw DataError("normalize_adjacency: node " + std::to_string(i) + " has zero degree");
  g.adjacency = sparse_similarity;
  for (Index i = 0; i < g.adjacency.outerSize(); ++i)
    for (SparseMatrix::InnerIterator it(g.adjacency, i); it; ++it)
      it.valueRef() = it.value() / std::sqrt(g.degree(i) * g.degree(it.col()));
  return g;
}

SimilarityGraph build_similarity_graph(const Matrix& z, const Matrix& projection, double epsilon) {
  return normalize_adjacency(sparsify(cosine_similarity_matrix(project_embeddings(z, projection)),
                                      epsilon),
                             epsilon);
}

Matrix gcn_forward(const Matrix& z, const SimilarityGraph& graph, std::span<const Matrix> weights) {
  Matrix g = z;
  for (const Matrix& w : weights) {
    Matrix ag = graph.adjacency * g;
    g = (ag * w).cwiseMax(0.0);
  }
  return g;
}

void init_graph_encoder(ParamSet& params, Index input_width, Index width,
                        const GraphConfig& config, Rng& rng) {
  params.add("graph.proj", glorot(input_width, width, rng));
  for (int l = 0; l < config.layers; ++l)
    params.add("graph.gcn" + std::to_string(l), glorot(l == 0 ? input_width : width, width, rng));
}

GraphEncoding graph_encode(const BoundParams& p, const Tensor& z, const GraphConfig& config) {
  Tape& tape = p.tape();
  Tensor zstar = relu(matmul(z, p["graph.proj"]));
  Tensor norms = row_l2_norm(zstar);
  Matrix guard = (norms.value().array() > 0.0).select(Matrix::Zero(norms.rows(), 1), 1.0);
  Tensor unit = div(zstar, add(norms, tape.constant(guard)));

  auto pattern = std::make_shared<const SparseMatrix>(
      sparsify(similarity_from_normalized(unit.value()), config.epsilon));
  // Unit self-loops for zero rows are constants on top of the gram values.
  Matrix loops = Matrix::Zero(pattern->nonZeros(), 1);
  const int* outer = pattern->outerIndexPtr();
  const int* inner = pattern->innerIndexPtr();
  for (Index i = 0; i < pattern->rows(); ++i) {
    if (guard(i, 0) == 0.0) continue;
    for (int e = outer[i]; e < outer[i + 1]; ++e)
      if (inner[e] == i) loops(e, 0) = 1.0;
  }
  Tensor values = add(pattern_gram(unit, pattern), tape.constant(std::move(loops)));
  Tensor degree = sparse_row_sum(values, pattern);
  Tensor adj = sparse_sym_normalize(values, degree, pattern);

  GraphEncoding out;
  Tensor g = z;
  for (int l = 0; l < config.layers; ++l)
    g = relu(matmul(spmm(adj, pattern, g), p["graph.gcn" + std::to_string(l)]));
  out.output = g;

  out.graph.epsilon = config.epsilon;
  out.graph.degree = degree.value().col(0);
  out.graph.adjacency = *pattern;
  std::copy(adj.value().data(), adj.value().data() + adj.rows(), out.graph.adjacency.valuePtr());
  return out;
}

}  // namespace gedi
