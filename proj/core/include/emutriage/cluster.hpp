#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emutriage/eval.hpp"
#include "emutriage/provenance.hpp"
#include "emutriage/rng.hpp"

namespace emutriage {

using Point = std::vector<double>;

/// A family's row of the averaged confusion matrix, scaled to sum to 1.
struct FamilyPoint {
  std::string family;
  Point vector;
};

/// Uses the first model's confusion_mean. Throws SchemaViolation for a
/// family with an all-zero row.
std::vector<FamilyPoint> family_points(const EvalReport& report);

double squared_distance(std::span<const double> a, std::span<const double> b);

/// D^2 seeding; the first centroid is uniform. When every remaining point
/// has distance 0 the pick is uniform among points not yet chosen.
/// Throws KTooLarge when k exceeds the point count.
std::vector<Point> kmeanspp_init(const std::vector<Point>& points, std::size_t k, Rng& rng);

struct KMeansResult {
  std::vector<std::uint32_t> labels;  // raw cluster id per point, may skip empty clusters
  std::vector<Point> centroids;       // k entries; empty clusters keep their last centroid
  std::vector<double> objective;      // within-cluster sum of squares after each assignment step
  std::size_t iterations = 0;
};

/// Lloyd iterations from k-means++ seeds; stops when no centroid moves more
/// than `tol` or after `max_iter`. Throws KTooLarge.
KMeansResult kmeans(const std::vector<Point>& points, std::size_t k, Rng& rng, std::size_t max_iter = 300,
                    double tol = 1e-6);

/// Mean silhouette; points in singleton clusters contribute 0.
/// Throws SingleCluster with fewer than two non-empty clusters.
double silhouette(const std::vector<Point>& points, std::span<const std::uint32_t> assignments);

struct Clustering {
  std::size_t k_requested = 0;
  std::vector<std::string> families;
  std::vector<std::uint32_t> assignments;     // group index per family
  std::vector<std::vector<std::string>> groups;  // non-empty, largest first, members sorted
  double silhouette = 0.0;
  std::vector<double> objective;
};

/// Keeps the lowest-objective run out of `n_init` k-means++ restarts drawn
/// from one seeded stream. Throws SingleCluster when every family lands in
/// one group.
Clustering cluster_families(const EvalReport& report, std::size_t k, std::uint64_t seed, std::size_t n_init = 10);

struct SweepRow {
  std::size_t k = 0;
  std::size_t groups = 0;
  std::optional<double> silhouette;  // empty when all families share one group
};

std::vector<SweepRow> sweep_k(const EvalReport& report, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                              std::size_t n_init = 10);

std::string clustering_to_json(const Clustering& clustering, const Provenance& provenance);
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

}  // namespace emutriage
