#include "tdist/knn.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

namespace tdist {

void NeighborDatabase::build_feature_cache(const FeatureSpace& f) {
  feature_cache.resize(examples.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < size(); ++i) feature_cache[i] = encode(f, examples[i].image);
}

std::pair<int, std::vector<Neighbor>> knn_from_distances(const NeighborDatabase& db,
                                                         const std::vector<double>& distances,
                                                         int k) {
  require(db.size() > 0, "KNN requires a nonempty database");
  require(k >= 1, "K must be at least 1");
  require(k <= db.size(), "K exceeds the database size");
  require(distances.size() == static_cast<std::size_t>(db.size()),
          "distance count does not match database size");

  std::vector<int> order(db.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
    if (distances[a] != distances[b]) return distances[a] < distances[b];
    return a < b;  // equal distances: lower index wins
  });

  std::vector<Neighbor> neighbors(k);
  std::map<int, int> votes;
  for (int i = 0; i < k; ++i) {
    neighbors[i] = {order[i], distances[order[i]]};
    ++votes[db.examples[order[i]].label];
  }

  int best_votes = 0;
  for (const auto& [label, count] : votes) best_votes = std::max(best_votes, count);

  // Among vote-tied classes, the one owning the nearest neighbour wins; the
  // neighbour list is already in (distance, index) order.
  for (const auto& nb : neighbors) {
    const int label = db.examples[nb.index].label;
    if (votes[label] == best_votes) return {label, neighbors};
  }
  return {db.examples[neighbors[0].index].label, neighbors};  // unreachable
}

std::pair<int, std::vector<Neighbor>> knn_classify(const NeighborDatabase& db,
                                                   const VectorXd& query, int k,
                                                   const DistanceFn& distance_fn) {
  require(db.size() > 0, "KNN requires a nonempty database");
  std::vector<double> distances(db.size());
#pragma omp parallel for schedule(static)
  for (int i = 0; i < db.size(); ++i) distances[i] = distance_fn(db.examples[i].image, query);
  return knn_from_distances(db, distances, k);
}

std::pair<int, std::vector<Neighbor>> transforming_knn_classify(
    const NeighborDatabase& db, const VectorXd& query, int k, const FgrbmParams& model,
    const FeatureSpace& feature, const DistanceConfig& cfg, TransformDirection direction) {
  require(db.size() > 0, "KNN requires a nonempty database");

  std::vector<double> distances;
  if (direction == TransformDirection::DatabaseToQuery) {
    std::vector<VectorXd> sources;
    sources.reserve(db.examples.size());
    for (const auto& e : db.examples) sources.push_back(e.image);
    distances = batch_distances(model, feature, sources, query, cfg);
  } else {
    distances.resize(db.size());
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < db.size(); ++i)
      distances[i] = transforming_distance(model, feature, query, db.examples[i].image, cfg);
  }
  return knn_from_distances(db, distances, k);
}

NeighborDatabase augment_database(const NeighborDatabase& db, const FgrbmParams& model, int factor,
                                  int chain_iters, std::mt19937_64& rng) {
  require(db.size() > 0, "cannot augment an empty database");
  require(factor >= 2, "augmentation factor must be at least 2");
  require(chain_iters >= 1, "chain_iters must be at least 1");
  for (const auto& e : db.examples)
    require(e.image.size() == model.source_dim && model.source_dim == model.target_dim,
            "augmentation requires a model trained on this image dimensionality");

  NeighborDatabase out;
  out.examples = db.examples;
  out.examples.resize(static_cast<std::size_t>(db.size()) * factor);

  // One base seed from the caller's stream, one derived stream per example,
  // so parallel chains reproduce the sequential order exactly.
  const std::uint64_t base_seed = rng();
  const int samples_per_example = factor - 1;

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < db.size(); ++i) {
    std::mt19937_64 chain_rng = make_rng(mix_seed(base_seed ^ static_cast<std::uint64_t>(i)));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const NeighborExample& src = db.examples[i];

    VectorXd y = src.image;  // chain starts at the source itself
    for (int s = 0; s < samples_per_example; ++s) {
      for (int it = 0; it < chain_iters; ++it) {
        const VectorXd probs = infer_hidden(model, src.image, y);
        VectorXd h(probs.size());
        for (Eigen::Index m = 0; m < probs.size(); ++m)
          h[m] = unif(chain_rng) < probs[m] ? 1.0 : 0.0;
        y = sample_target(model, src.image, h, chain_rng);
      }
      NeighborExample sample;
      sample.image = y;
      sample.label = src.label;
      sample.transform_param = src.transform_param;
      sample.source_index = i;
      out.examples[static_cast<std::size_t>(db.size()) + static_cast<std::size_t>(i) *
                                                             samples_per_example +
                   s] = std::move(sample);
    }
  }
  return out;
}

NeighborDatabase reduce_database(const NeighborDatabase& db, double missing_rate,
                                 std::mt19937_64& rng) {
  require(missing_rate >= 0.0 && missing_rate < 1.0, "missing_rate must lie in [0, 1)");
  const int keep = static_cast<int>(std::ceil((1.0 - missing_rate) * db.size()));
  require(keep > 0, "missing_rate would empty the database");

  std::vector<int> order(db.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  order.resize(keep);
  std::sort(order.begin(), order.end());

  NeighborDatabase out;
  out.examples.reserve(keep);
  for (int i : order) out.examples.push_back(db.examples[i]);
  if (!db.feature_cache.empty()) {
    out.feature_cache.reserve(keep);
    for (int i : order) out.feature_cache.push_back(db.feature_cache[i]);
  }
  return out;
}

std::string to_string(EvalMode m) {
  switch (m) {
    case EvalMode::Regular: return "regular";
    case EvalMode::Transforming: return "transforming";
    case EvalMode::Augmented: return "augmented";
  }
  return "unknown";
}

EvalReport evaluate(const NeighborDatabase& db, const std::vector<NeighborExample>& test_set,
                    EvalMode mode, int k, const EvalDeps& deps, std::uint64_t seed) {
  require(db.size() > 0, "evaluate requires a nonempty database");
  require(!test_set.empty(), "evaluate requires a nonempty test set");
  require(deps.feature != nullptr, "evaluate requires a feature space");
  if (mode != EvalMode::Regular)
    require(deps.model != nullptr, "this evaluation mode requires a trained model");

  const FeatureSpace& feature = *deps.feature;

  NeighborDatabase working;
  const NeighborDatabase* active = &db;
  if (mode == EvalMode::Augmented) {
    std::mt19937_64 rng = make_rng(seed);
    working = augment_database(db, *deps.model, deps.augment_factor, deps.chain_iters, rng);
    working.build_feature_cache(feature);
    active = &working;
  } else if (mode == EvalMode::Regular && db.feature_cache.empty()) {
    working = db;
    working.build_feature_cache(feature);
    active = &working;
  }

  EvalReport report;
  report.mode = to_string(mode);
  report.k = k;
  report.seed = seed;
  report.records.resize(test_set.size());

  if (mode == EvalMode::Transforming) {
    for (std::size_t q = 0; q < test_set.size(); ++q) {
      auto [label, neighbors] = transforming_knn_classify(*active, test_set[q].image, k,
                                                          *deps.model, feature, deps.distance,
                                                          deps.direction);
      report.records[q] = {static_cast<int>(q), test_set[q].label, label, std::move(neighbors)};
    }
  } else {
    for (std::size_t q = 0; q < test_set.size(); ++q) {
      const VectorXd fq = encode(feature, test_set[q].image);
      std::vector<double> distances(active->size());
#pragma omp parallel for schedule(static)
      for (int i = 0; i < active->size(); ++i)
        distances[i] = (active->feature_cache[i] - fq).norm();
      auto [label, neighbors] = knn_from_distances(*active, distances, k);
      report.records[q] = {static_cast<int>(q), test_set[q].label, label, std::move(neighbors)};
    }
  }

  int correct = 0;
  for (const auto& r : report.records)
    if (r.predicted == r.true_label) ++correct;
  report.accuracy = static_cast<double>(correct) / static_cast<double>(test_set.size());
  return report;
}

void append_summary_csv(const std::string& path, const EvalReport& report, double missing_rate) {
  const std::filesystem::path fspath(path);
  if (fspath.has_parent_path()) std::filesystem::create_directories(fspath.parent_path());
  const bool fresh = !std::filesystem::exists(fspath) || std::filesystem::file_size(fspath) == 0;
  std::ofstream os(path, std::ios::app);
  if (!os) throw std::runtime_error("cannot open summary CSV: " + path);
  if (fresh) os << "mode,K,missing_rate,accuracy,seed\n";
  char line[160];
  std::snprintf(line, sizeof(line), "%s,%d,%.6g,%.6f,%llu\n", report.mode.c_str(), report.k,
                missing_rate, report.accuracy,
                static_cast<unsigned long long>(report.seed));
  os << line;
}

void write_query_csv(const std::string& path, const EvalReport& report) {
  const std::filesystem::path fspath(path);
  if (fspath.has_parent_path()) std::filesystem::create_directories(fspath.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open per-query CSV: " + path);
  os << "query_id,true,predicted";
  for (int i = 1; i <= report.k; ++i) os << ",dist" << i;
  os << "\n";
  for (const auto& r : report.records) {
    os << r.query_id << ',' << r.true_label << ',' << r.predicted;
    for (const auto& nb : r.neighbors) {
      char buf[40];
      std::snprintf(buf, sizeof(buf), ",%.9g", nb.distance);
      os << buf;
    }
    os << "\n";
  }
}

}  // namespace tdist
