#include "termadventure/analytics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

namespace ta {

namespace {

// Portable draws; the standard distributions are not specified bit-for-bit.
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(std::mt19937_64& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

void check_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw AnalyticsError("vectors have different dimensions");
}

void check_matrix(const Matrix& points) {
  if (points.empty()) throw AnalyticsError("no vectors given");
  for (const auto& p : points) {
    if (p.size() != points.front().size()) throw AnalyticsError("vectors have different dimensions");
  }
}

std::size_t distinct_count(const Matrix& points) { return std::set<std::vector<double>>(points.begin(), points.end()).size(); }

std::vector<std::size_t> assign(const Matrix& points, const Matrix& centroids, Distance distance) {
  std::vector<std::size_t> assignments(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = centroid_distance(distance, points[i], centroids[c]);
      if (d < best) {
        best = d;
        assignments[i] = c;
      }
    }
  }
  return assignments;
}

// Gives each empty cluster the point farthest from that cluster's centroid,
// taken only from clusters that can spare a member.
void reseed_empty(const Matrix& points, const Matrix& centroids, std::vector<std::size_t>& assignments,
                  Distance distance) {
  std::vector<std::size_t> sizes(centroids.size(), 0);
  for (const auto a : assignments) ++sizes[a];
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    if (sizes[c] != 0) continue;
    std::size_t chosen = points.size();
    double farthest = -1;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (sizes[assignments[i]] < 2) continue;
      const double d = centroid_distance(distance, points[i], centroids[c]);
      if (d > farthest) {
        farthest = d;
        chosen = i;
      }
    }
    if (chosen == points.size()) throw AnalyticsError("cannot fill an empty cluster");
    --sizes[assignments[chosen]];
    assignments[chosen] = c;
    sizes[c] = 1;
  }
}

Matrix squared_distances(const Matrix& x) {
  const std::size_t n = x.size();
  Matrix d(n, std::vector<double>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        const double diff = x[i][k] - x[j][k];
        s += diff * diff;
      }
      d[i][j] = d[j][i] = s;
    }
  }
  return d;
}

constexpr double probability_floor = 1e-12;

}  // namespace

std::vector<std::string> tokenize(std::string_view command) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < command.size()) {
    while (i < command.size() && std::isspace(static_cast<unsigned char>(command[i]))) ++i;
    const std::size_t start = i;
    while (i < command.size() && !std::isspace(static_cast<unsigned char>(command[i]))) ++i;
    if (i > start) tokens.emplace_back(command.substr(start, i - start));
  }
  return tokens;
}

Corpus vectorize(const std::vector<std::string>& solutions) {
  if (solutions.empty()) throw AnalyticsError("empty corpus");
  Corpus corpus;
  std::set<std::string> vocabulary;
  for (const auto& solution : solutions) {
    SolutionVector v;
    v.command = solution;
    v.tokens = tokenize(solution);
    vocabulary.insert(v.tokens.begin(), v.tokens.end());
    corpus.vectors.push_back(std::move(v));
  }
  corpus.vocabulary.assign(vocabulary.begin(), vocabulary.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < corpus.vocabulary.size(); ++i) index[corpus.vocabulary[i]] = i;
  for (auto& v : corpus.vectors) {
    v.vector.assign(corpus.vocabulary.size(), 0.0);
    for (const auto& token : v.tokens) v.vector[index[token]] = 1.0;
  }
  return corpus;
}

double jaccard_distance(std::span<const double> a, std::span<const double> b) {
  check_same_size(a, b);
  std::size_t both = 0;
  std::size_t either = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] != 0;
    const bool in_b = b[i] != 0;
    both += (in_a && in_b) ? 1 : 0;
    either += (in_a || in_b) ? 1 : 0;
  }
  if (either == 0) return 0.0;
  return 1.0 - static_cast<double>(both) / static_cast<double>(either);
}

double cosine_distance(std::span<const double> a, std::span<const double> b) {
  check_same_size(a, b);
  double dot = 0, norm_a = 0, norm_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    norm_a += a[i] * a[i];
    norm_b += b[i] * b[i];
  }
  if (norm_a == 0 || norm_b == 0) return 1.0;
  const double similarity = dot / (std::sqrt(norm_a) * std::sqrt(norm_b));
  return std::clamp(1.0 - similarity, 0.0, 2.0);
}

std::string_view to_string(Distance distance) { return distance == Distance::jaccard ? "jaccard" : "cosine"; }

Distance parse_distance(std::string_view text) {
  if (text == "jaccard") return Distance::jaccard;
  if (text == "cosine") return Distance::cosine;
  throw AnalyticsError("unknown distance '" + std::string(text) + "' (expected jaccard or cosine)");
}

double centroid_distance(Distance distance, std::span<const double> point, std::span<const double> centroid) {
  if (distance == Distance::cosine) return cosine_distance(point, centroid);
  std::vector<double> as_set(centroid.size());
  for (std::size_t i = 0; i < centroid.size(); ++i) as_set[i] = centroid[i] >= 0.5 ? 1.0 : 0.0;
  return jaccard_distance(point, as_set);
}

double clustering_objective(const Matrix& points, const std::vector<std::size_t>& assignments, const Matrix& centroids,
                            Distance distance) {
  double total = 0;
  for (std::size_t i = 0; i < points.size(); ++i) total += centroid_distance(distance, points[i], centroids[assignments[i]]);
  return total;
}

Matrix cluster_means(const Matrix& points, const std::vector<std::size_t>& assignments, std::size_t k) {
  const std::size_t dims = points.empty() ? 0 : points.front().size();
  Matrix means(k, std::vector<double>(dims, 0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    ++counts[assignments[i]];
    for (std::size_t d = 0; d < dims; ++d) means[assignments[i]][d] += points[i][d];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (auto& value : means[c]) value /= static_cast<double>(counts[c]);
  }
  return means;
}

namespace {

Clustering lloyd(const Matrix& points, std::size_t k, const KMeansOptions& options, std::mt19937_64& rng) {
  const std::size_t n = points.size();

  // Distance-weighted seeding: each further centre is drawn with probability
  // proportional to the squared distance to the nearest centre so far.
  Matrix centroids{points[rng() % n]};
  std::vector<double> nearest(n);
  while (centroids.size() < k) {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& c : centroids) best = std::min(best, centroid_distance(options.distance, points[i], c));
      nearest[i] = best * best;
      total += nearest[i];
    }
    std::size_t pick = n;
    if (total > 0) {
      const double target = uniform01(rng) * total;
      double running = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (nearest[i] <= 0) continue;
        running += nearest[i];
        pick = i;
        if (running > target) break;
      }
    } else {
      // Every point coincides with a centre under this distance; take the
      // first vector that is not literally a centre yet.
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (std::find(centroids.begin(), centroids.end(), points[i]) == centroids.end()) pick = i;
      }
    }
    centroids.push_back(points[pick]);
  }

  Clustering result;
  result.k = k;
  auto assignments = assign(points, centroids, options.distance);
  reseed_empty(points, centroids, assignments, options.distance);
  std::size_t iteration = 0;
  while (iteration < std::max<std::size_t>(options.max_iterations, 1)) {
    ++iteration;
    centroids = cluster_means(points, assignments, k);
    result.objective_history.push_back(clustering_objective(points, assignments, centroids, options.distance));
    auto next = assign(points, centroids, options.distance);
    reseed_empty(points, centroids, next, options.distance);
    if (next == assignments) break;
    assignments = std::move(next);
  }
  result.iterations_used = iteration;
  result.centroids = cluster_means(points, assignments, k);
  result.assignments = std::move(assignments);
  result.objective = clustering_objective(points, result.assignments, result.centroids, options.distance);
  return result;
}

}  // namespace

Clustering kmeans(const Matrix& points, std::size_t k, const KMeansOptions& options) {
  check_matrix(points);
  const std::size_t distinct = distinct_count(points);
  if (k < 1 || k > distinct) {
    throw AnalyticsError("k must be between 1 and the number of distinct vectors (" + std::to_string(distinct) + ")");
  }
  std::mt19937_64 rng(options.seed);
  Clustering best = lloyd(points, k, options, rng);
  for (std::size_t run = 1; run < options.restarts; ++run) {
    auto candidate = lloyd(points, k, options, rng);
    if (candidate.objective < best.objective) best = std::move(candidate);
  }
  return best;
}

ConditionalRow conditional_row(std::span<const double> row, std::size_t self, double beta) {
  ConditionalRow out;
  out.p.assign(row.size(), 0.0);
  double min_distance = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j != self) min_distance = std::min(min_distance, row[j]);
  }
  // Shifting by the smallest distance keeps the largest term at exp(0).
  double sum = 0;
  double weighted = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (j == self) continue;
    const double shifted = row[j] - min_distance;
    out.p[j] = std::exp(-beta * shifted);
    sum += out.p[j];
    weighted += shifted * out.p[j];
  }
  for (auto& p : out.p) p /= sum;
  out.entropy_bits = (std::log(sum) + beta * weighted / sum) / std::log(2.0);
  return out;
}

namespace {

double nearest_ties(const Matrix& distances) {
  std::size_t most = 0;
  for (std::size_t i = 0; i < distances.size(); ++i) {
    double nearest = std::numeric_limits<double>::infinity();
    std::size_t count = 0;
    for (std::size_t j = 0; j < distances.size(); ++j) {
      if (j == i) continue;
      if (distances[i][j] < nearest) {
        nearest = distances[i][j];
        count = 0;
      }
      count += distances[i][j] == nearest ? 1 : 0;
    }
    most = std::max(most, count);
  }
  return static_cast<double>(most);
}

}  // namespace

double minimum_perplexity(const Matrix& vectors) {
  check_matrix(vectors);
  return nearest_ties(squared_distances(vectors));
}

Projection2D tsne_project(const Matrix& vectors, const TsneOptions& options) {
  check_matrix(vectors);
  const std::size_t n = vectors.size();
  if (n < 3) throw AnalyticsError("t-SNE needs at least 3 vectors");
  if (!(options.perplexity >= 1) || !(options.perplexity <= static_cast<double>(n - 1))) {
    throw AnalyticsError("perplexity must be in [1, " + std::to_string(n - 1) + "] for " + std::to_string(n) + " vectors");
  }

  Projection2D projection;
  projection.points.assign(n, {0.0, 0.0});
  const Matrix distances = squared_distances(vectors);
  bool all_identical = true;
  for (const auto& row : distances) {
    for (const double d : row) all_identical = all_identical && d == 0;
  }
  if (all_identical) {
    projection.degenerate = true;
    projection.entropies.assign(n, std::log2(static_cast<double>(n - 1)));
    projection.betas.assign(n, 0.0);
    return projection;
  }
  if (const double floor = nearest_ties(distances); options.perplexity < floor) {
    throw AnalyticsError("perplexity infeasible: a point has " + std::to_string(static_cast<int>(floor)) +
                         " equally near neighbours, so the perplexity must be at least that");
  }

  // Per-point bandwidth by bisection so that the entropy of p(.|i) equals
  // log2(perplexity).
  const double target = std::log2(options.perplexity);
  Matrix conditional(n);
  projection.entropies.resize(n);
  projection.betas.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1.0;
    double low = 0.0;
    double high = std::numeric_limits<double>::infinity();
    ConditionalRow row = conditional_row(distances[i], i, beta);
    for (int step = 0; step < 2000 && std::abs(row.entropy_bits - target) > 1e-10; ++step) {
      double next = beta;
      if (row.entropy_bits > target) {
        low = beta;
        next = std::isinf(high) ? beta * 2 : (beta + high) / 2;
      } else {
        high = beta;
        next = (beta + low) / 2;
      }
      if (next == low || next == high || std::isinf(next)) break;
      beta = next;
      row = conditional_row(distances[i], i, beta);
    }
    projection.entropies[i] = row.entropy_bits;
    projection.betas[i] = beta;
    conditional[i] = std::move(row.p);
  }

  Matrix p(n, std::vector<double>(n, 0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i != j) p[i][j] = std::max((conditional[i][j] + conditional[j][i]) / (2.0 * static_cast<double>(n)), probability_floor);
    }
  }

  std::mt19937_64 rng(options.seed);
  std::vector<std::array<double, 2>> y(n), update(n, {0, 0}), gains(n, {1, 1}), gradient(n);
  for (auto& point : y) point = {standard_normal(rng) * 1e-4, standard_normal(rng) * 1e-4};

  Matrix numerator(n, std::vector<double>(n, 0));
  auto compute_numerators = [&] {
    double sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[i][0] - y[j][0];
        const double dy = y[i][1] - y[j][1];
        numerator[i][j] = numerator[j][i] = 1.0 / (1.0 + dx * dx + dy * dy);
        sum += 2 * numerator[i][j];
      }
    }
    return sum;
  };

  auto recentre = [&] {
    std::array<double, 2> mean{0, 0};
    for (const auto& point : y) {
      mean[0] += point[0];
      mean[1] += point[1];
    }
    for (auto& point : y) {
      point[0] -= mean[0] / static_cast<double>(n);
      point[1] -= mean[1] / static_cast<double>(n);
    }
  };
  // KL(P || Q) for the current layout, always against the unexaggerated P.
  auto divergence = [&] {
    const double sum = compute_numerators();
    double kl = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(numerator[i][j] / sum, probability_floor);
        kl += p[i][j] * std::log(p[i][j] / q);
      }
    }
    return kl;
  };

  for (std::size_t iteration = 0; iteration < options.iterations; ++iteration) {
    const double exaggeration = iteration < options.exaggeration_iterations ? options.exaggeration : 1.0;
    const double momentum = iteration < 250 ? 0.5 : 0.8;
    const double sum = compute_numerators();

    for (std::size_t i = 0; i < n; ++i) {
      gradient[i] = {0, 0};
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double q = std::max(numerator[i][j] / sum, probability_floor);
        const double factor = 4.0 * (exaggeration * p[i][j] - q) * numerator[i][j];
        gradient[i][0] += factor * (y[i][0] - y[j][0]);
        gradient[i][1] += factor * (y[i][1] - y[j][1]);
      }
    }
    const auto before = y;
    for (std::size_t i = 0; i < n; ++i) {
      for (int d = 0; d < 2; ++d) {
        const bool same_sign = (gradient[i][d] > 0) == (update[i][d] > 0);
        gains[i][d] = std::max(same_sign ? gains[i][d] * 0.8 : gains[i][d] + 0.2, 0.01);
        update[i][d] = momentum * update[i][d] - options.learning_rate * gains[i][d] * gradient[i][d];
        y[i][d] += update[i][d];
      }
    }
    recentre();
    double kl = divergence();

    // Once exaggeration is off, a step that raises KL is replaced by plain
    // gradient steps of shrinking size, and the momentum state is dropped.
    if (exaggeration == 1.0 && !projection.kl_history.empty() && kl > projection.kl_history.back()) {
      const double previous = projection.kl_history.back();
      for (auto& u : update) u = {0, 0};
      for (auto& g : gains) g = {1, 1};
      double step = options.learning_rate;
      bool improved = false;
      for (int halving = 0; halving < 40 && !improved; ++halving, step /= 2) {
        for (std::size_t i = 0; i < n; ++i) {
          for (int d = 0; d < 2; ++d) y[i][d] = before[i][d] - step * gradient[i][d];
        }
        recentre();
        kl = divergence();
        improved = kl <= previous;
      }
      if (!improved) {
        y = before;
        kl = divergence();
      }
    }
    projection.kl_history.push_back(kl);
  }
  projection.points = std::move(y);
  return projection;
}

SolutionGroups solution_groups(const std::vector<Solution>& solutions, const GroupOptions& options) {
  SolutionGroups groups;
  groups.k_requested = options.k;
  groups.solutions = solutions;
  if (options.k < 1) throw AnalyticsError("k must be at least 1");
  if (solutions.empty()) {
    groups.warnings.push_back("no solutions recorded for this level");
    return groups;
  }

  std::vector<std::string> commands;
  for (const auto& s : solutions) commands.push_back(s.command);
  const Corpus corpus = vectorize(commands);
  groups.vocabulary = corpus.vocabulary;
  Matrix points;
  for (const auto& v : corpus.vectors) points.push_back(v.vector);

  const std::size_t distinct = distinct_count(points);
  groups.k_used = std::min(options.k, distinct);
  if (groups.k_used < options.k) {
    groups.warnings.push_back("k reduced from " + std::to_string(options.k) + " to " + std::to_string(groups.k_used) +
                              ": only " + std::to_string(distinct) + " distinct solution(s)");
  }
  KMeansOptions kmeans_options;
  kmeans_options.distance = options.distance;
  kmeans_options.seed = options.seed;
  const Clustering clustering = kmeans(points, groups.k_used, kmeans_options);
  groups.assignments = clustering.assignments;
  groups.centroids = clustering.centroids;

  const std::size_t n = points.size();
  if (distinct == 1) {
    groups.degenerate = true;
    groups.points.assign(n, {0.0, 0.0});
    if (n > 1) groups.warnings.push_back("all solutions are identical; nothing to project");
    return groups;
  }
  if (n < 3) {
    groups.points = {{-0.5, 0.0}, {0.5, 0.0}};
    groups.warnings.push_back("too few solutions for t-SNE; points placed on a line");
    return groups;
  }
  TsneOptions tsne = options.tsne;
  tsne.seed = options.seed;
  const double limit = std::max(1.0, static_cast<double>(n - 1) / 3.0);
  if (tsne.perplexity > limit) {
    groups.warnings.push_back("perplexity reduced to " + std::to_string(limit) + " for " + std::to_string(n) +
                              " solutions");
    tsne.perplexity = limit;
  }
  tsne.perplexity = std::max(tsne.perplexity, 1.0);
  if (const double floor = minimum_perplexity(points); tsne.perplexity < floor) {
    groups.warnings.push_back("perplexity raised to " + std::to_string(floor) + ": some solutions have that many equally similar neighbours");
    tsne.perplexity = floor;
  }
  const auto projection = tsne_project(points, tsne);
  groups.points = projection.points;
  groups.degenerate = projection.degenerate;
  return groups;
}

}  // namespace ta
