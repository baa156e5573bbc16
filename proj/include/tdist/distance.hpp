#ifndef TDIST_DISTANCE_HPP
#define TDIST_DISTANCE_HPP

#include <vector>

#include "tdist/features.hpp"
#include "tdist/fgrbm.hpp"

namespace tdist {

// The transforming distance: descend on latent transformation logits so a
// learned transformation carries one image toward another before their
// feature-space Euclidean distance is measured. The cost being minimized is
//   L(z) = D + lambda * R
// where D compares transformed image(s) in feature space and R is the model
// free energy of the transformed image(s), keeping the search on
// transformations the model considers valid.

enum class TransformMode { Single, Dual };
enum class CodeInit { Inferred, Zeros };

// Real-valued logits z; the relaxed hidden configuration is sigmoid(z).
struct TransformCode {
  VectorXd logits;

  VectorXd activations() const {
    return logits.unaryExpr([](double v) { return sigmoid(v); });
  }
};

struct DistanceConfig {
  TransformMode mode = TransformMode::Single;
  double lambda = 1.0;
  int iterations = 30;
  double step_size = 0.1;
  double momentum = 0.9;
  CodeInit init = CodeInit::Inferred;
  bool record_transforms = false;  // keep the per-iteration transformed source images

  void validate() const;
};

struct CostBreakdown {
  double total = 0.0;        // L
  double distance = 0.0;     // D
  double regularizer = 0.0;  // R
};

struct DistanceRecord {
  double d_star = 0.0;
  int best_iteration = 0;
  std::vector<TransformCode> codes;            // best-seen codes; 1 (single) or 2 (dual)
  std::vector<CostBreakdown> cost_trajectory;  // length iterations + 1
  std::vector<VectorXd> transformed_trajectory;  // source-side transforms, if recorded
};

// D for the given codes: single compares f(t(x_a, h_a)) with f(x_b), dual
// compares f(t(x_a, h_a)) with f(t(x_b, h_b)). Euclidean in feature space.
double distance_term(const FgrbmParams& model, const FeatureSpace& feature, const VectorXd& x_a,
                     const VectorXd& x_b, const std::vector<TransformCode>& codes,
                     TransformMode mode);

// Free energy of the transformed image(s): F(t(x_a,h_a); x_a), plus the
// mirrored term in dual mode.
double regularizer(const FgrbmParams& model, const VectorXd& x_a, const VectorXd& x_b,
                   const std::vector<TransformCode>& codes, TransformMode mode);

CostBreakdown cost(const FgrbmParams& model, const FeatureSpace& feature, const VectorXd& x_a,
                   const VectorXd& x_b, const std::vector<TransformCode>& codes,
                   const DistanceConfig& cfg);

// Gradient of the cost with respect to each code's logits. At D = 0 the
// distance term's subgradient is taken as zero.
std::vector<VectorXd> cost_grad(const FgrbmParams& model, const FeatureSpace& feature,
                                const VectorXd& x_a, const VectorXd& x_b,
                                const std::vector<TransformCode>& codes,
                                const DistanceConfig& cfg);

// Fixed-iteration momentum descent on the logits. Returns the best-seen
// iterate (minimum L over the whole trajectory, initial point included).
// Throws NumericalFailure naming the iteration if the cost goes non-finite.
DistanceRecord optimize_code(const FgrbmParams& model, const FeatureSpace& feature,
                             const VectorXd& x_a, const VectorXd& x_b, const DistanceConfig& cfg);

double transforming_distance(const FgrbmParams& model, const FeatureSpace& feature,
                             const VectorXd& x_a, const VectorXd& x_b, const DistanceConfig& cfg);

// Distances from many sources to one target. Pairs are independent, so the
// loop is parallel; results are elementwise identical to sequential calls.
// Per-pair failures are rethrown, attributed to the smallest failing index.
std::vector<double> batch_distances(const FgrbmParams& model, const FeatureSpace& feature,
                                    const std::vector<VectorXd>& sources, const VectorXd& target,
                                    const DistanceConfig& cfg);

// Serial reference implementation of batch_distances, kept for the
// parallel-equivalence tests and the benchmark.
std::vector<double> batch_distances_serial(const FgrbmParams& model, const FeatureSpace& feature,
                                           const std::vector<VectorXd>& sources,
                                           const VectorXd& target, const DistanceConfig& cfg);

}  // namespace tdist

#endif  // TDIST_DISTANCE_HPP
