#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rppd/corpus.hpp"

namespace rppd {

// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) noexcept { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const noexcept {
    return std::span<const double>(values).subspan(r * cols, cols);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

Matrix to_matrix(std::span<const float> values, std::size_t rows, std::size_t cols);

// ---------------------------------------------------------------------------
// Principal component projection.

struct ReducedPoints {
  Matrix points;                              // n x out_dim, centered projections
  Matrix components;                          // out_dim x d, orthonormal rows
  std::vector<double> eigenvalues;            // covariance eigenvalues, descending
  std::vector<double> explained_variance_ratio;
  double total_variance = 0.0;                // trace of the covariance
};

enum class PcaSolver {
  automatic,  // dense Jacobi for d <= 256, subspace iteration above
  jacobi,
  subspace,
};

// Covariance uses the n - 1 denominator. Each component is sign-normalized so
// its largest-magnitude entry is positive. Throws Error{DegenerateInput} if
// n < 2, d < out_dim, or the covariance is zero.
ReducedPoints pca_reduce(const Matrix& data, std::size_t out_dim = 2, PcaSolver solver = PcaSolver::automatic);

// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns
// eigenvalues descending and matching unit eigenvectors as rows.
struct SymmetricEigen {
  std::vector<double> values;
  Matrix vectors;  // row i is the eigenvector of values[i]
};
SymmetricEigen jacobi_eigen(Matrix symmetric);

// ---------------------------------------------------------------------------
// k-means.

struct KMeansOptions {
  std::size_t k = 10;
  std::uint64_t seed = 0;
  std::size_t max_iter = 300;
  double tol = 1e-6;
  std::size_t restarts = 1;
};

struct ClusterAssignment {
  std::vector<std::uint32_t> labels;
  Matrix centroids;  // k x dim
  double inertia = 0.0;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  // Inertia after each assignment step of the winning run.
  std::vector<double> inertia_history;
};

// Greedy k-means++ seeding (2 + floor(ln k) candidates per step) from a
// seeded mt19937_64, then Lloyd iterations until every centroid moves less
// than tol or max_iter is reached. Empty clusters are reseeded with the point
// farthest from its centroid. Throws Error{TooFewPoints} if n < k and
// Error{InvalidArgument} if k == 0.
ClusterAssignment kmeans(const Matrix& points, const KMeansOptions& options);

double compute_inertia(const Matrix& points, std::span<const std::uint32_t> labels, const Matrix& centroids);

// ---------------------------------------------------------------------------
// Facet separation.

struct ClusterPurity {
  std::uint32_t cluster;
  std::size_t size;
  std::string majority;
  double share;
};

struct FacetPurityReport {
  std::string facet;
  std::vector<ClusterPurity> clusters;  // non-empty clusters, ascending id
  double purity = 1.0;                  // point-weighted majority share
};

// Throws Error{LengthMismatch}. Empty input yields purity 1 with no clusters.
FacetPurityReport facet_purity(std::span<const std::uint32_t> labels, std::span<const std::string> facet_values,
                               std::string facet_name);

// ---------------------------------------------------------------------------
// Plot-ready export.

struct ClusterRecord {
  ItemId id;
  double x;
  double y;
  std::uint32_t cluster;
  Language language;
  ImageKind image_kind;

  friend bool operator==(const ClusterRecord&, const ClusterRecord&) = default;
};

// Records follow `ids` order. Facets are looked up in the manifest.
// Throws Error{LengthMismatch} when lengths disagree or the reduction is not
// 2-D, Error{NotFound} when an id is missing from the manifest.
std::vector<ClusterRecord> cluster_export(const ReducedPoints& reduced, const ClusterAssignment& assignment,
                                          std::span<const ItemId> ids, const CorpusManifest& manifest);

// CSV "id,x,y,cluster,language,image_kind"; doubles use shortest
// round-trip formatting.
void write_cluster_csv(std::span<const ClusterRecord> records, std::ostream& sink);
std::vector<ClusterRecord> read_cluster_csv(std::istream& source);

std::string format_double(double value);

}  // namespace rppd
