#include "emutriage/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "emutriage/error.hpp"
#include "json_util.hpp"

namespace emutriage {

using detail::Json;

std::vector<FamilyPoint> family_points(const EvalReport& report) {
  if (report.models.empty()) throw Error(ErrorCode::SchemaViolation, "eval report has no model results");
  const auto& confusion = report.models.front().confusion_mean;
  std::vector<FamilyPoint> out;
  for (std::size_t i = 0; i < report.classes.size(); ++i) {
    const auto& row = confusion.at(i);
    double sum = 0.0;
    for (double v : row) sum += v;
    if (sum <= 0.0) throw Error(ErrorCode::SchemaViolation, "no evaluated rows for " + report.classes[i]);
    FamilyPoint p{report.classes[i], {}};
    for (double v : row) p.vector.push_back(v / sum);
    out.push_back(std::move(p));
  }
  return out;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += (a[i] - b[i]) * (a[i] - b[i]);
  return sum;
}

std::vector<Point> kmeanspp_init(const std::vector<Point>& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.size();
  if (k == 0) throw Error(ErrorCode::ConfigError, "k must be >= 1");
  if (k > n) throw Error(ErrorCode::KTooLarge, std::to_string(k) + " clusters for " + std::to_string(n) + " points");
  std::vector<char> chosen(n, 0);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  std::vector<Point> centroids;

  auto take = [&](std::size_t i) {
    chosen[i] = 1;
    centroids.push_back(points[i]);
    for (std::size_t j = 0; j < n; ++j) d2[j] = std::min(d2[j], squared_distance(points[j], points[i]));
  };

  take(rng.uniform_index(n));
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) total += chosen[j] ? 0.0 : d2[j];
    std::size_t pick = n;
    if (total > 0.0) {
      double u = rng.uniform01() * total;
      for (std::size_t j = 0; j < n; ++j) {
        if (chosen[j] || d2[j] <= 0.0) continue;
        pick = j;
        if (u < d2[j]) break;
        u -= d2[j];
      }
    } else {
      std::vector<std::size_t> open;
      for (std::size_t j = 0; j < n; ++j) {
        if (!chosen[j]) open.push_back(j);
      }
      pick = open[rng.uniform_index(open.size())];
    }
    take(pick);
  }
  return centroids;
}

KMeansResult kmeans(const std::vector<Point>& points, std::size_t k, Rng& rng, std::size_t max_iter, double tol) {
  KMeansResult result;
  result.centroids = kmeanspp_init(points, k, rng);
  const std::size_t n = points.size();
  const std::size_t dim = points.front().size();
  result.labels.assign(n, 0);

  for (std::size_t iter = 0; iter < std::max<std::size_t>(1, max_iter); ++iter) {
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t best = 0;
      double best_d = squared_distance(points[i], result.centroids[0]);
      for (std::uint32_t c = 1; c < k; ++c) {
        const double d = squared_distance(points[i], result.centroids[c]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      result.labels[i] = best;
      objective += best_d;
    }
    result.objective.push_back(objective);
    ++result.iterations;

    std::vector<Point> sums(k, Point(dim, 0.0));
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[result.labels[i]];
      for (std::size_t d = 0; d < dim; ++d) sums[result.labels[i]][d] += points[i][d];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (auto& v : sums[c]) v /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(squared_distance(sums[c], result.centroids[c])));
      result.centroids[c] = std::move(sums[c]);
    }
    if (shift < tol) break;
  }
  return result;
}

double silhouette(const std::vector<Point>& points, std::span<const std::uint32_t> assignments) {
  if (points.size() != assignments.size()) throw Error(ErrorCode::LengthMismatch, "points vs assignments");
  std::map<std::uint32_t, std::size_t> sizes;
  for (auto a : assignments) ++sizes[a];
  if (sizes.size() < 2) throw Error(ErrorCode::SingleCluster, "silhouette needs two non-empty clusters");

  double total = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (sizes[assignments[i]] == 1) continue;
    std::map<std::uint32_t, double> dist_sum;
    for (std::size_t j = 0; j < points.size(); ++j) {
      if (j != i) dist_sum[assignments[j]] += std::sqrt(squared_distance(points[i], points[j]));
    }
    const double a = dist_sum[assignments[i]] / static_cast<double>(sizes[assignments[i]] - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [cluster, sum] : dist_sum) {
      if (cluster != assignments[i]) b = std::min(b, sum / static_cast<double>(sizes[cluster]));
    }
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(points.size());
}

namespace {

struct Grouped {
  std::vector<std::uint32_t> assignments;
  std::vector<std::vector<std::string>> groups;
};

Grouped group_families(const std::vector<FamilyPoint>& fp, const std::vector<std::uint32_t>& labels) {
  std::map<std::uint32_t, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  std::vector<std::vector<std::size_t>> order;
  for (auto& [id, m] : members) order.push_back(std::move(m));
  auto name_of = [&](const std::vector<std::size_t>& m) {
    std::string first = fp[m.front()].family;
    for (auto i : m) first = std::min(first, fp[i].family);
    return first;
  };
  std::sort(order.begin(), order.end(), [&](const auto& a, const auto& b) {
    if (a.size() != b.size()) return a.size() > b.size();
    return name_of(a) < name_of(b);
  });
  Grouped g;
  g.assignments.assign(labels.size(), 0);
  for (std::uint32_t gi = 0; gi < order.size(); ++gi) {
    std::vector<std::string> names;
    for (auto i : order[gi]) {
      g.assignments[i] = gi;
      names.push_back(fp[i].family);
    }
    std::sort(names.begin(), names.end());
    g.groups.push_back(std::move(names));
  }
  return g;
}

std::vector<Point> vectors_of(const std::vector<FamilyPoint>& fp) {
  std::vector<Point> out;
  for (const auto& p : fp) out.push_back(p.vector);
  return out;
}

KMeansResult best_of(const std::vector<Point>& points, std::size_t k, Rng& rng, std::size_t n_init) {
  if (n_init == 0) throw Error(ErrorCode::ConfigError, "n_init must be at least 1");
  auto best = kmeans(points, k, rng);
  for (std::size_t i = 1; i < n_init; ++i) {
    auto km = kmeans(points, k, rng);
    if (km.objective.back() < best.objective.back()) best = std::move(km);
  }
  return best;
}

}  // namespace

Clustering cluster_families(const EvalReport& report, std::size_t k, std::uint64_t seed, std::size_t n_init) {
  const auto fp = family_points(report);
  const auto points = vectors_of(fp);
  Rng rng(seed);
  const auto km = best_of(points, k, rng, n_init);
  auto grouped = group_families(fp, km.labels);
  Clustering c;
  c.k_requested = k;
  for (const auto& p : fp) c.families.push_back(p.family);
  c.silhouette = silhouette(points, grouped.assignments);
  c.assignments = std::move(grouped.assignments);
  c.groups = std::move(grouped.groups);
  c.objective = km.objective;
  return c;
}

std::vector<SweepRow> sweep_k(const EvalReport& report, std::size_t k_min, std::size_t k_max, std::uint64_t seed,
                              std::size_t n_init) {
  if (k_min == 0 || k_min > k_max) throw Error(ErrorCode::ConfigError, "sweep range must satisfy 1 <= lo <= hi");
  const auto fp = family_points(report);
  const auto points = vectors_of(fp);
  if (k_max > points.size()) {
    throw Error(ErrorCode::KTooLarge, std::to_string(k_max) + " clusters for " + std::to_string(points.size()) + " families");
  }
  std::vector<SweepRow> rows;
  for (std::size_t k = k_min; k <= k_max; ++k) {
    Rng rng(derive_seed(seed, 0xc1, k));
    const auto km = best_of(points, k, rng, n_init);
    const auto grouped = group_families(fp, km.labels);
    SweepRow row{k, grouped.groups.size(), std::nullopt};
    if (grouped.groups.size() >= 2) row.silhouette = silhouette(points, grouped.assignments);
    rows.push_back(row);
  }
  return rows;
}

std::string clustering_to_json(const Clustering& c, const Provenance& provenance) {
  Json j;
  j["provenance"] = detail::to_json(provenance);
  j["k_requested"] = c.k_requested;
  j["n_groups"] = c.groups.size();
  j["silhouette"] = c.silhouette;
  j["groups"] = c.groups;
  Json assignments = Json::object();
  for (std::size_t i = 0; i < c.families.size(); ++i) assignments[c.families[i]] = c.assignments[i];
  j["assignments"] = std::move(assignments);
  j["objective"] = c.objective;
  return j.dump(2) + "\n";
}

std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "k,groups,silhouette\n";
  for (const auto& r : rows) {
    out << r.k << ',' << r.groups << ',';
    if (r.silhouette) out << *r.silhouette;
    out << '\n';
  }
  return out.str();
}

}  // namespace emutriage
