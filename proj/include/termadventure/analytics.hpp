#pragma once

// Grouping of student solutions: bag-of-words vectors, Jaccard and cosine
// distances, K-means with a user-chosen K, and a t-SNE projection to 2D.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ta {

class AnalyticsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Whitespace split, no other normalisation (`-la` stays a token).
std::vector<std::string> tokenize(std::string_view command);

struct SolutionVector {
  std::string command;
  std::vector<std::string> tokens;
  std::vector<double> vector;  ///< token presence (0 or 1) over the vocabulary
};

struct Corpus {
  std::vector<std::string> vocabulary;  ///< sorted, distinct
  std::vector<SolutionVector> vectors;  ///< same order as the input
};

/// Throws AnalyticsError for an empty list.
Corpus vectorize(const std::vector<std::string>& solutions);

/// 1 - |A ∩ B| / |A ∪ B| over the non-zero coordinates; 0 when both are empty.
double jaccard_distance(std::span<const double> a, std::span<const double> b);
/// 1 - a·b / (|a| |b|); 1 when either vector is zero.
double cosine_distance(std::span<const double> a, std::span<const double> b);

enum class Distance { jaccard, cosine };
std::string_view to_string(Distance distance);
/// "jaccard" or "cosine"; throws AnalyticsError otherwise.
Distance parse_distance(std::string_view text);

/// Distance from a point to a centroid as K-means uses it. For Jaccard the
/// centroid is first turned into a set: coordinates >= 0.5 are members.
double centroid_distance(Distance distance, std::span<const double> point, std::span<const double> centroid);

using Matrix = std::vector<std::vector<double>>;

struct Clustering {
  std::size_t k = 0;
  std::vector<std::size_t> assignments;  ///< cluster index per input vector
  Matrix centroids;                      ///< coordinate-wise member means
  std::size_t iterations_used = 0;
  double objective = 0;                  ///< sum of member-to-centroid distances
  std::vector<double> objective_history; ///< after each update step of the winning run
};

/// Sum of centroid_distance(point, centroid of its cluster).
double clustering_objective(const Matrix& points, const std::vector<std::size_t>& assignments, const Matrix& centroids,
                            Distance distance);

/// Coordinate-wise means of each cluster's members.
Matrix cluster_means(const Matrix& points, const std::vector<std::size_t>& assignments, std::size_t k);

struct KMeansOptions {
  Distance distance = Distance::jaccard;
  std::size_t max_iterations = 100;
  std::uint64_t seed = 1;
  std::size_t restarts = 10;  ///< independent seedings; the lowest objective wins
};

/// Lloyd iterations from distance-weighted seeding. Assignment picks the
/// nearest centroid (ties: lowest index); a cluster left empty is re-seeded
/// with the point farthest from its former centroid. Throws AnalyticsError
/// unless 1 <= k <= number of distinct vectors.
Clustering kmeans(const Matrix& points, std::size_t k, const KMeansOptions& options = {});

struct TsneOptions {
  double perplexity = 5;
  std::size_t iterations = 500;
  std::size_t exaggeration_iterations = 100;
  double exaggeration = 4;
  double learning_rate = 100;
  std::uint64_t seed = 1;
};

struct Projection2D {
  std::vector<std::array<double, 2>> points;
  bool degenerate = false;            ///< all inputs identical; every point at the origin
  std::vector<double> entropies;      ///< bits, per point, after the bandwidth search
  std::vector<double> betas;          ///< the precision 1 / (2 sigma^2) found for each point
  std::vector<double> kl_history;     ///< KL(P || Q) after each iteration
};

/// The largest number of neighbours that share a point's smallest distance.
/// No bandwidth can push that point's conditional entropy below log2 of it,
/// so smaller perplexities cannot be matched.
double minimum_perplexity(const Matrix& vectors);

/// Exact t-SNE on squared Euclidean input distances. Throws AnalyticsError
/// for fewer than 3 vectors or a perplexity outside
/// [max(1, minimum_perplexity), n - 1]. All-identical input is returned as
/// a degenerate projection instead.
Projection2D tsne_project(const Matrix& vectors, const TsneOptions& options = {});

/// Conditional distribution p(j | i) for bandwidth `beta` over squared
/// distances `row` (entry `self` excluded), and its entropy in bits.
struct ConditionalRow {
  std::vector<double> p;
  double entropy_bits = 0;
};
ConditionalRow conditional_row(std::span<const double> row, std::size_t self, double beta);

struct Solution {
  std::string user;
  std::string command;
};

struct GroupOptions {
  std::size_t k = 2;
  Distance distance = Distance::jaccard;
  std::uint64_t seed = 1;
  TsneOptions tsne;
};

struct SolutionGroups {
  std::size_t k_requested = 0;
  std::size_t k_used = 0;
  std::vector<std::string> warnings;
  std::vector<std::string> vocabulary;
  std::vector<Solution> solutions;
  std::vector<std::size_t> assignments;
  Matrix centroids;
  std::vector<std::array<double, 2>> points;
  bool degenerate = false;
};

/// vectorize -> kmeans -> tsne_project, with K and the perplexity clamped
/// to what the data allows (each clamp adds a warning).
SolutionGroups solution_groups(const std::vector<Solution>& solutions, const GroupOptions& options);

}  // namespace ta
