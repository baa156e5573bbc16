#ifndef TDIST_KNN_HPP
#define TDIST_KNN_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tdist/distance.hpp"

namespace tdist {

struct NeighborExample {
  VectorXd image;
  int label = 0;
  double transform_param = 0.0;
  int source_index = -1;  // index of the originating example, for augmented entries
};

struct NeighborDatabase {
  std::vector<NeighborExample> examples;
  std::vector<VectorXd> feature_cache;  // per-example f(x); empty until built

  int size() const { return static_cast<int>(examples.size()); }
  void build_feature_cache(const FeatureSpace& f);
};

struct Neighbor {
  int index = 0;
  double distance = 0.0;
};

using DistanceFn = std::function<double(const VectorXd& db_example, const VectorXd& query)>;

// Which way the transforming distance runs in KNN. The default treats the
// stored exemplar as the source being transformed toward the query.
enum class TransformDirection { DatabaseToQuery, QueryToDatabase };

// Majority vote among the K nearest under precomputed distances. Ties between
// equal distances go to the lower index; ties between vote counts go to the
// tied class holding the nearest neighbour.
std::pair<int, std::vector<Neighbor>> knn_from_distances(const NeighborDatabase& db,
                                                         const std::vector<double>& distances,
                                                         int k);

std::pair<int, std::vector<Neighbor>> knn_classify(const NeighborDatabase& db,
                                                   const VectorXd& query, int k,
                                                   const DistanceFn& distance_fn);

std::pair<int, std::vector<Neighbor>> transforming_knn_classify(
    const NeighborDatabase& db, const VectorXd& query, int k, const FgrbmParams& model,
    const FeatureSpace& feature, const DistanceConfig& cfg,
    TransformDirection direction = TransformDirection::DatabaseToQuery);

// Enlarges the database with Gibbs samples from the model: each example seeds
// chains alternating hidden and target units, and the state after every
// chain_iters iterations is retained, factor-1 times, inheriting the source
// label. Output size is exactly factor * |db|, originals first, verbatim.
NeighborDatabase augment_database(const NeighborDatabase& db, const FgrbmParams& model, int factor,
                                  int chain_iters, std::mt19937_64& rng);

// Keeps ceil((1 - missing_rate) * |db|) uniformly chosen examples.
NeighborDatabase reduce_database(const NeighborDatabase& db, double missing_rate,
                                 std::mt19937_64& rng);

enum class EvalMode { Regular, Transforming, Augmented };

std::string to_string(EvalMode m);

struct EvalDeps {
  const FgrbmParams* model = nullptr;     // required for transforming/augmented
  const FeatureSpace* feature = nullptr;  // required; use IdentityFeature for pixels
  DistanceConfig distance;
  TransformDirection direction = TransformDirection::DatabaseToQuery;
  int augment_factor = 10;
  int chain_iters = 100;
};

struct QueryRecord {
  int query_id = 0;
  int true_label = 0;
  int predicted = 0;
  std::vector<Neighbor> neighbors;
};

struct EvalReport {
  double accuracy = 0.0;
  std::vector<QueryRecord> records;
  std::string mode;
  int k = 1;
  std::uint64_t seed = 0;
};

EvalReport evaluate(const NeighborDatabase& db, const std::vector<NeighborExample>& test_set,
                    EvalMode mode, int k, const EvalDeps& deps, std::uint64_t seed);

// Summary rows share one schema so plain evaluations and sweep cells land in
// the same file: mode,K,missing_rate,accuracy,seed
void append_summary_csv(const std::string& path, const EvalReport& report, double missing_rate);
void write_query_csv(const std::string& path, const EvalReport& report);

}  // namespace tdist

#endif  // TDIST_KNN_HPP
