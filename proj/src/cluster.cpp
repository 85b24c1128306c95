#include "rppd/cluster.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <unordered_map>

#include "rppd/error.hpp"

namespace rppd {

namespace {

constexpr std::size_t kJacobiMaxDim = 256;

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double diff = a[i] - b[i];
    acc += diff * diff;
  }
  return acc;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

// Columns of `basis` (d x p, row-major) made orthonormal in place by modified
// Gram-Schmidt. Columns that collapse are replaced by unit vectors.
void orthonormalize_columns(Matrix& basis) {
  const std::size_t d = basis.rows;
  const std::size_t p = basis.cols;
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t attempt = 0; attempt <= d; ++attempt) {
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t i = 0; i < j; ++i) {
          double proj = 0.0;
          for (std::size_t r = 0; r < d; ++r) proj += basis(r, i) * basis(r, j);
          for (std::size_t r = 0; r < d; ++r) basis(r, j) -= proj * basis(r, i);
        }
      }
      double norm = 0.0;
      for (std::size_t r = 0; r < d; ++r) norm += basis(r, j) * basis(r, j);
      norm = std::sqrt(norm);
      if (norm > 1e-10) {
        for (std::size_t r = 0; r < d; ++r) basis(r, j) /= norm;
        break;
      }
      for (std::size_t r = 0; r < d; ++r) basis(r, j) = r == (j + attempt) % d ? 1.0 : 0.0;
    }
  }
}

// out = C * basis where C = X^T X / (n - 1), without forming C.
Matrix apply_covariance(const Matrix& centered, const Matrix& basis) {
  const std::size_t n = centered.rows;
  const std::size_t d = centered.cols;
  const std::size_t p = basis.cols;
  Matrix projected(n, p);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = centered.row(r);
    for (std::size_t j = 0; j < p; ++j) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += x[c] * basis(c, j);
      projected(r, j) = acc;
    }
  }
  Matrix out(d, p);
  const double scale = 1.0 / static_cast<double>(n - 1);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = centered.row(r);
    for (std::size_t c = 0; c < d; ++c) {
      const double xc = x[c] * scale;
      for (std::size_t j = 0; j < p; ++j) out(c, j) += xc * projected(r, j);
    }
  }
  return out;
}

// Top `want` eigenpairs of the covariance via orthogonal iteration with
// Rayleigh-Ritz extraction.
SymmetricEigen subspace_eigen(const Matrix& centered, std::size_t want) {
  const std::size_t d = centered.cols;
  const std::size_t p = std::min(d, want + 8);
  Matrix basis(d, p);
  std::mt19937_64 rng(0x5eed);
  for (auto& v : basis.values) v = uniform01(rng) - 0.5;
  orthonormalize_columns(basis);

  SymmetricEigen ritz;
  for (int iter = 0; iter < 2000; ++iter) {
    Matrix image = apply_covariance(centered, basis);

    Matrix small(p, p);
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b) {
        double acc = 0.0;
        for (std::size_t r = 0; r < d; ++r) acc += basis(r, a) * image(r, b);
        small(a, b) = acc;
      }
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = a + 1; b < p; ++b) small(a, b) = small(b, a) = 0.5 * (small(a, b) + small(b, a));
    SymmetricEigen local = jacobi_eigen(small);

    // Ritz vectors v = basis * w, and residuals |C v - theta v| = |image w - theta basis w|.
    ritz.values = local.values;
    ritz.vectors = Matrix(p, d);
    double worst = 0.0;
    for (std::size_t i = 0; i < p; ++i) {
      double residual = 0.0;
      for (std::size_t r = 0; r < d; ++r) {
        double v = 0.0, cv = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
          v += basis(r, j) * local.vectors(i, j);
          cv += image(r, j) * local.vectors(i, j);
        }
        ritz.vectors(i, r) = v;
        const double diff = cv - local.values[i] * v;
        residual += diff * diff;
      }
      if (i < want) worst = std::max(worst, std::sqrt(residual));
    }
    const double scale = std::max(std::abs(ritz.values.front()), std::numeric_limits<double>::min());
    if (worst <= 1e-12 * scale) break;

    basis = std::move(image);
    orthonormalize_columns(basis);
  }
  ritz.values.resize(want);
  Matrix top(want, d);
  std::copy_n(ritz.vectors.values.begin(), want * d, top.values.begin());
  ritz.vectors = std::move(top);
  return ritz;
}

void normalize_sign(std::span<double> component) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < component.size(); ++i)
    if (std::abs(component[i]) > std::abs(component[best])) best = i;
  if (component[best] < 0)
    for (auto& v : component) v = -v;
}

struct Run {
  std::vector<std::uint32_t> labels;
  Matrix centroids;
  double inertia;
  std::size_t iterations;
  std::vector<double> history;
};

// Returns the index of the nearest centroid (lowest index on ties) and the
// squared distance to it.
std::pair<std::uint32_t, double> nearest(std::span<const double> x, const Matrix& centroids) {
  std::uint32_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < centroids.rows; ++j) {
    const double dist = squared_distance(x, centroids.row(j));
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<std::uint32_t>(j);
    }
  }
  return {best, best_d};
}

Matrix seed_kmeans_pp(const Matrix& points, std::size_t k, std::mt19937_64& rng) {
  const std::size_t n = points.rows;
  const std::size_t dim = points.cols;
  Matrix centroids(k, dim);
  std::vector<bool> chosen(n, false);

  auto place = [&](std::size_t slot, std::size_t idx) {
    std::copy_n(points.row(idx).begin(), dim, centroids.values.begin() + static_cast<std::ptrdiff_t>(slot * dim));
    chosen[idx] = true;
  };

  std::size_t first = std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n)));
  place(0, first);
  std::vector<double> closest(n);
  for (std::size_t i = 0; i < n; ++i) closest[i] = squared_distance(points.row(i), points.row(first));
  double potential = std::accumulate(closest.begin(), closest.end(), 0.0);

  const std::size_t trials = 2 + static_cast<std::size_t>(std::floor(std::log(static_cast<double>(k))));
  std::vector<double> scratch(n);
  for (std::size_t c = 1; c < k; ++c) {
    if (potential <= 0.0) {
      // Every remaining point coincides with a centroid.
      std::size_t idx = 0;
      while (idx < n && chosen[idx]) ++idx;
      place(c, std::min(idx, n - 1));
      continue;
    }
    std::size_t best_idx = 0;
    double best_potential = std::numeric_limits<double>::infinity();
    std::vector<double> best_closest;
    for (std::size_t t = 0; t < trials; ++t) {
      const double target = uniform01(rng) * potential;
      double cumulative = 0.0;
      std::size_t candidate = n;
      std::size_t last_positive = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (closest[i] > 0.0) last_positive = i;
        cumulative += closest[i];
        if (cumulative > target) {
          candidate = i;
          break;
        }
      }
      if (candidate == n) candidate = last_positive;

      double trial_potential = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        scratch[i] = std::min(closest[i], squared_distance(points.row(i), points.row(candidate)));
        trial_potential += scratch[i];
      }
      if (trial_potential < best_potential) {
        best_potential = trial_potential;
        best_idx = candidate;
        best_closest = scratch;
      }
    }
    place(c, best_idx);
    closest = std::move(best_closest);
    potential = best_potential;
  }
  return centroids;
}

Run lloyd(const Matrix& points, Matrix centroids, const KMeansOptions& options) {
  const std::size_t n = points.rows;
  const std::size_t dim = points.cols;
  const std::size_t k = centroids.rows;
  Run run{std::vector<std::uint32_t>(n, 0), std::move(centroids), 0.0, 0, {}};
  std::vector<double> dist(n);
  std::vector<std::size_t> counts(k);

  auto assign = [&] {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto [label, d2] = nearest(points.row(i), run.centroids);
      run.labels[i] = label;
      dist[i] = d2;
      ++counts[label];
    }
  };

  for (std::size_t iter = 0; iter < options.max_iter; ++iter) {
    assign();

    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[run.labels[i]] < 2) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      if (far == n || dist[far] == 0.0) break;  // fewer distinct points than clusters
      --counts[run.labels[far]];
      run.labels[far] = static_cast<std::uint32_t>(j);
      counts[j] = 1;
      dist[far] = 0.0;
      std::copy_n(points.row(far).begin(), dim, run.centroids.values.begin() + static_cast<std::ptrdiff_t>(j * dim));
    }
    run.history.push_back(std::accumulate(dist.begin(), dist.end(), 0.0));

    Matrix updated(k, dim);
    for (std::size_t i = 0; i < n; ++i) {
      auto x = points.row(i);
      for (std::size_t c = 0; c < dim; ++c) updated(run.labels[i], c) += x[c];
    }
    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t c = 0; c < dim; ++c)
        updated(j, c) = counts[j] == 0 ? run.centroids(j, c) : updated(j, c) / static_cast<double>(counts[j]);
      shift = std::max(shift, std::sqrt(squared_distance(updated.row(j), run.centroids.row(j))));
    }
    run.centroids = std::move(updated);
    run.iterations = iter + 1;
    if (shift < options.tol) break;
  }

  assign();
  run.inertia = compute_inertia(points, run.labels, run.centroids);
  run.history.push_back(run.inertia);
  return run;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    auto comma = line.find(',', start);
    fields.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line, const char* what) {
  T value{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(Errc::ParseError, "line " + std::to_string(line) + ": bad " + what + " '" + text + "'");
  return value;
}

}  // namespace

Matrix to_matrix(std::span<const float> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw Error(Errc::LengthMismatch, "matrix shape does not match value count");
  Matrix m(rows, cols);
  std::copy(values.begin(), values.end(), m.values.begin());
  return m;
}

SymmetricEigen jacobi_eigen(Matrix a) {
  const std::size_t d = a.rows;
  if (a.cols != d) throw Error(Errc::InvalidArgument, "jacobi_eigen needs a square matrix");
  Matrix v(d, d);
  for (std::size_t i = 0; i < d; ++i) v(i, i) = 1.0;

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0, diag = 0.0;
    for (std::size_t p = 0; p < d; ++p) {
      diag += a(p, p) * a(p, p);
      for (std::size_t q = p + 1; q < d; ++q) off += a(p, q) * a(p, q);
    }
    if (off <= 1e-32 * diag || off == 0.0) break;

    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });
  SymmetricEigen out{std::vector<double>(d), Matrix(d, d)};
  for (std::size_t i = 0; i < d; ++i) {
    out.values[i] = a(order[i], order[i]);
    for (std::size_t k = 0; k < d; ++k) out.vectors(i, k) = v(k, order[i]);
  }
  return out;
}

ReducedPoints pca_reduce(const Matrix& data, std::size_t out_dim, PcaSolver solver) {
  const std::size_t n = data.rows;
  const std::size_t d = data.cols;
  if (out_dim == 0) throw Error(Errc::InvalidArgument, "out_dim must be positive");
  if (n < 2) throw Error(Errc::DegenerateInput, "PCA needs at least 2 rows, got " + std::to_string(n));
  if (d < out_dim)
    throw Error(Errc::DegenerateInput, "PCA to " + std::to_string(out_dim) + " dims needs at least that many columns");

  std::vector<double> mean(d, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) mean[c] += data(r, c);
  for (auto& m : mean) m /= static_cast<double>(n);

  Matrix centered(n, d);
  double trace = 0.0;
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < d; ++c) {
      centered(r, c) = data(r, c) - mean[c];
      trace += centered(r, c) * centered(r, c);
    }
  trace /= static_cast<double>(n - 1);
  if (!(trace > 0.0)) throw Error(Errc::DegenerateInput, "all rows are identical; covariance is zero");

  if (solver == PcaSolver::automatic) solver = d <= kJacobiMaxDim ? PcaSolver::jacobi : PcaSolver::subspace;
  if (solver == PcaSolver::subspace && d <= out_dim + 8) solver = PcaSolver::jacobi;

  SymmetricEigen eig;
  if (solver == PcaSolver::jacobi) {
    Matrix cov(d, d);
    for (std::size_t r = 0; r < n; ++r) {
      auto x = centered.row(r);
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = a; b < d; ++b) cov(a, b) += x[a] * x[b];
    }
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov(b, a) = cov(a, b) = cov(a, b) / static_cast<double>(n - 1);
    eig = jacobi_eigen(std::move(cov));
  } else {
    eig = subspace_eigen(centered, out_dim);
  }

  ReducedPoints out;
  out.total_variance = trace;
  out.components = Matrix(out_dim, d);
  for (std::size_t i = 0; i < out_dim; ++i) {
    std::copy_n(eig.vectors.row(i).begin(), d, out.components.values.begin() + static_cast<std::ptrdiff_t>(i * d));
    normalize_sign(std::span<double>(out.components.values).subspan(i * d, d));
    const double lambda = std::max(0.0, eig.values[i]);
    out.eigenvalues.push_back(lambda);
    out.explained_variance_ratio.push_back(std::min(1.0, lambda / trace));
  }

  out.points = Matrix(n, out_dim);
  for (std::size_t r = 0; r < n; ++r) {
    auto x = centered.row(r);
    for (std::size_t i = 0; i < out_dim; ++i) {
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) acc += x[c] * out.components(i, c);
      out.points(r, i) = acc;
    }
  }
  return out;
}

double compute_inertia(const Matrix& points, std::span<const std::uint32_t> labels, const Matrix& centroids) {
  if (labels.size() != points.rows) throw Error(Errc::LengthMismatch, "labels and points differ in length");
  double total = 0.0;
  for (std::size_t i = 0; i < points.rows; ++i) {
    if (labels[i] >= centroids.rows) throw Error(Errc::InvalidArgument, "label out of range");
    total += squared_distance(points.row(i), centroids.row(labels[i]));
  }
  return total;
}

ClusterAssignment kmeans(const Matrix& points, const KMeansOptions& options) {
  if (options.k == 0) throw Error(Errc::InvalidArgument, "k must be positive");
  if (options.restarts == 0) throw Error(Errc::InvalidArgument, "restarts must be positive");
  if (points.rows < options.k)
    throw Error(Errc::TooFewPoints, "k-means with k=" + std::to_string(options.k) + " needs at least " +
                                        std::to_string(options.k) + " points, got " + std::to_string(points.rows));
  if (points.cols == 0) throw Error(Errc::InvalidArgument, "points must have at least one dimension");

  std::mt19937_64 rng(options.seed);
  std::optional<Run> best;
  for (std::size_t attempt = 0; attempt < options.restarts; ++attempt) {
    Run run = lloyd(points, seed_kmeans_pp(points, options.k, rng), options);
    if (!best || run.inertia < best->inertia) best = std::move(run);
  }

  ClusterAssignment out;
  out.labels = std::move(best->labels);
  out.centroids = std::move(best->centroids);
  out.inertia = best->inertia;
  out.k = options.k;
  out.seed = options.seed;
  out.iterations = best->iterations;
  out.inertia_history = std::move(best->history);
  return out;
}

FacetPurityReport facet_purity(std::span<const std::uint32_t> labels, std::span<const std::string> facet_values,
                               std::string facet_name) {
  if (labels.size() != facet_values.size())
    throw Error(Errc::LengthMismatch, "labels (" + std::to_string(labels.size()) + ") and facet values (" +
                                          std::to_string(facet_values.size()) + ") differ in length");
  FacetPurityReport report;
  report.facet = std::move(facet_name);
  if (labels.empty()) return report;

  std::map<std::uint32_t, std::map<std::string, std::size_t>> tallies;
  for (std::size_t i = 0; i < labels.size(); ++i) ++tallies[labels[i]][facet_values[i]];

  std::size_t majority_total = 0;
  for (const auto& [cluster, counts] : tallies) {
    std::size_t size = 0;
    const std::string* majority = nullptr;
    std::size_t majority_count = 0;
    for (const auto& [value, count] : counts) {
      size += count;
      if (count > majority_count) {
        majority_count = count;
        majority = &value;
      }
    }
    majority_total += majority_count;
    report.clusters.push_back(
        {cluster, size, *majority, static_cast<double>(majority_count) / static_cast<double>(size)});
  }
  report.purity = static_cast<double>(majority_total) / static_cast<double>(labels.size());
  return report;
}

std::vector<ClusterRecord> cluster_export(const ReducedPoints& reduced, const ClusterAssignment& assignment,
                                          std::span<const ItemId> ids, const CorpusManifest& manifest) {
  if (reduced.points.cols != 2) throw Error(Errc::LengthMismatch, "cluster export needs 2-D points");
  if (reduced.points.rows != ids.size() || assignment.labels.size() != ids.size()) {
    throw Error(Errc::LengthMismatch, "ids (" + std::to_string(ids.size()) + "), points (" +
                                          std::to_string(reduced.points.rows) + ") and labels (" +
                                          std::to_string(assignment.labels.size()) + ") must align");
  }
  std::unordered_map<std::string, const KnowledgeItem*> by_id;
  by_id.reserve(manifest.items.size());
  for (const auto& item : manifest.items) by_id.emplace(item.id.value(), &item);

  std::vector<ClusterRecord> records;
  records.reserve(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = by_id.find(ids[i].value());
    if (it == by_id.end()) throw Error(Errc::NotFound, "id " + ids[i].value() + " missing from manifest");
    records.push_back({ids[i], reduced.points(i, 0), reduced.points(i, 1), assignment.labels[i],
                       it->second->language, it->second->image_kind});
  }
  return records;
}

std::string format_double(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, ptr);
}

void write_cluster_csv(std::span<const ClusterRecord> records, std::ostream& sink) {
  sink << "id,x,y,cluster,language,image_kind\n";
  for (const auto& r : records) {
    sink << r.id.value() << ',' << format_double(r.x) << ',' << format_double(r.y) << ',' << r.cluster << ','
         << to_string(r.language) << ',' << to_string(r.image_kind) << '\n';
  }
  if (!sink) throw Error(Errc::IoFailure, "failed writing cluster CSV");
}

std::vector<ClusterRecord> read_cluster_csv(std::istream& source) {
  std::string line;
  if (!std::getline(source, line)) throw Error(Errc::ParseError, "cluster CSV is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "id,x,y,cluster,language,image_kind") throw Error(Errc::ParseError, "unexpected cluster CSV header");

  std::vector<ClusterRecord> records;
  std::size_t line_no = 1;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto f = split_csv_line(line);
    if (f.size() != 6) throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": expected 6 fields");
    if (!ItemId::is_valid(f[0])) throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": bad id");
    auto language = parse_language(f[4]);
    auto kind = parse_image_kind(f[5]);
    if (!language || !kind) throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": bad facet value");
    records.push_back({ItemId::parse(f[0]), parse_number<double>(f[1], line_no, "x"),
                       parse_number<double>(f[2], line_no, "y"), parse_number<std::uint32_t>(f[3], line_no, "cluster"),
                       *language, *kind});
  }
  return records;
}

}  // namespace rppd
