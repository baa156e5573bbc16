#include "tdist/distance.hpp"

#include <cmath>
#include <omp.h>

namespace tdist {

namespace {

constexpr double kZeroDistanceGuard = 1e-300;

int codes_expected(TransformMode mode) { return mode == TransformMode::Single ? 1 : 2; }

void check_codes(const FgrbmParams& model, const std::vector<TransformCode>& codes,
                 TransformMode mode) {
  require(static_cast<int>(codes.size()) == codes_expected(mode),
          "code count does not match transform mode");
  for (const auto& c : codes)
    require(c.logits.size() == model.hidden_dim, "transform code has wrong dimensionality");
}

// dF(y; x)/dy evaluated at y = t. Equals y minus the mean-field reconstruction
// from the inferred hidden probabilities.
VectorXd free_energy_target_grad(const FgrbmParams& model, const VectorXd& x, const VectorXd& y) {
  const VectorXd probs = infer_hidden(model, x, y);
  return y - transform(model, x, probs);
}

// (dt/dh)^T u = U (fx . (W^T u)), without materializing the J x M Jacobian.
VectorXd transform_hidden_vjp(const FgrbmParams& model, const VectorXd& x, const VectorXd& u) {
  const VectorXd fx = model.source_filters.transpose() * x;
  return model.hidden_filters * fx.cwiseProduct(model.target_filters.transpose() * u);
}

std::vector<TransformCode> initial_codes(const FgrbmParams& model, const VectorXd& x_a,
                                         const VectorXd& x_b, const DistanceConfig& cfg) {
  std::vector<TransformCode> codes;
  if (cfg.init == CodeInit::Zeros) {
    codes.push_back({VectorXd::Zero(model.hidden_dim)});
    if (cfg.mode == TransformMode::Dual) codes.push_back({VectorXd::Zero(model.hidden_dim)});
  } else {
    // Warm start from the model's own source->target inference; in dual mode
    // each side infers toward the other, which keeps the initializer
    // swap-symmetric.
    codes.push_back({hidden_preactivation(model, x_a, x_b)});
    if (cfg.mode == TransformMode::Dual) codes.push_back({hidden_preactivation(model, x_b, x_a)});
  }
  return codes;
}

}  // namespace

void DistanceConfig::validate() const {
  require(lambda >= 0.0, "lambda must be nonnegative");
  require(iterations >= 0, "iterations must be nonnegative");
  require(step_size > 0.0, "step_size must be positive");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
}

double distance_term(const FgrbmParams& model, const FeatureSpace& feature, const VectorXd& x_a,
                     const VectorXd& x_b, const std::vector<TransformCode>& codes,
                     TransformMode mode) {
  check_codes(model, codes, mode);
  const VectorXd t_a = transform(model, x_a, codes[0].activations());
  const VectorXd other = mode == TransformMode::Single
                             ? x_b
                             : transform(model, x_b, codes[1].activations());
  return (encode(feature, t_a) - encode(feature, other)).norm();
}

double regularizer(const FgrbmParams& model, const VectorXd& x_a, const VectorXd& x_b,
                   const std::vector<TransformCode>& codes, TransformMode mode) {
  check_codes(model, codes, mode);
  double r = free_energy(model, x_a, transform(model, x_a, codes[0].activations()));
  if (mode == TransformMode::Dual)
    r += free_energy(model, x_b, transform(model, x_b, codes[1].activations()));
  return r;
}

CostBreakdown cost(const FgrbmParams& model, const FeatureSpace& feature, const VectorXd& x_a,
                   const VectorXd& x_b, const std::vector<TransformCode>& codes,
                   const DistanceConfig& cfg) {
  CostBreakdown out;
  out.distance = distance_term(model, feature, x_a, x_b, codes, cfg.mode);
  out.regularizer = regularizer(model, x_a, x_b, codes, cfg.mode);
  out.total = out.distance + cfg.lambda * out.regularizer;
  return out;
}

std::vector<VectorXd> cost_grad(const FgrbmParams& model, const FeatureSpace& feature,
                                const VectorXd& x_a, const VectorXd& x_b,
                                const std::vector<TransformCode>& codes,
                                const DistanceConfig& cfg) {
  check_codes(model, codes, cfg.mode);

  const VectorXd h_a = codes[0].activations();
  const VectorXd t_a = transform(model, x_a, h_a);
  const EncodedWithJacobian enc_a = encode_with_jacobian(feature, t_a);

  std::vector<VectorXd> grads;
  if (cfg.mode == TransformMode::Single) {
    const VectorXd delta = enc_a.features - encode(feature, x_b);
    const double dist = delta.norm();

    VectorXd dL_dt = cfg.lambda * free_energy_target_grad(model, x_a, t_a);
    if (dist > kZeroDistanceGuard) dL_dt += enc_a.vjp(delta / dist);

    const VectorXd dL_dh = transform_hidden_vjp(model, x_a, dL_dt);
    grads.push_back(dL_dh.cwiseProduct(h_a.cwiseProduct(VectorXd::Ones(h_a.size()) - h_a)));
  } else {
    const VectorXd h_b = codes[1].activations();
    const VectorXd t_b = transform(model, x_b, h_b);
    const EncodedWithJacobian enc_b = encode_with_jacobian(feature, t_b);

    const VectorXd delta = enc_a.features - enc_b.features;
    const double dist = delta.norm();

    VectorXd dL_dta = cfg.lambda * free_energy_target_grad(model, x_a, t_a);
    VectorXd dL_dtb = cfg.lambda * free_energy_target_grad(model, x_b, t_b);
    if (dist > kZeroDistanceGuard) {
      const VectorXd unit = delta / dist;
      dL_dta += enc_a.vjp(unit);
      dL_dtb -= enc_b.vjp(unit);
    }

    const VectorXd dL_dha = transform_hidden_vjp(model, x_a, dL_dta);
    const VectorXd dL_dhb = transform_hidden_vjp(model, x_b, dL_dtb);
    grads.push_back(dL_dha.cwiseProduct(h_a.cwiseProduct(VectorXd::Ones(h_a.size()) - h_a)));
    grads.push_back(dL_dhb.cwiseProduct(h_b.cwiseProduct(VectorXd::Ones(h_b.size()) - h_b)));
  }
  return grads;
}

DistanceRecord optimize_code(const FgrbmParams& model, const FeatureSpace& feature,
                             const VectorXd& x_a, const VectorXd& x_b, const DistanceConfig& cfg) {
  cfg.validate();

  std::vector<TransformCode> codes = initial_codes(model, x_a, x_b, cfg);
  std::vector<VectorXd> velocity(codes.size(), VectorXd::Zero(model.hidden_dim));

  DistanceRecord record;
  record.cost_trajectory.reserve(cfg.iterations + 1);

  std::vector<TransformCode> best_codes = codes;
  double best_total = 0.0;
  double best_distance = 0.0;

  for (int iter = 0; iter <= cfg.iterations; ++iter) {
    const CostBreakdown c = cost(model, feature, x_a, x_b, codes, cfg);
    if (!std::isfinite(c.total))
      throw NumericalFailure("non-finite cost at iteration " + std::to_string(iter), iter);
    record.cost_trajectory.push_back(c);
    if (cfg.record_transforms)
      record.transformed_trajectory.push_back(transform(model, x_a, codes[0].activations()));

    if (iter == 0 || c.total < best_total) {
      best_total = c.total;
      best_distance = c.distance;
      best_codes = codes;
      record.best_iteration = iter;
    }
    if (iter == cfg.iterations) break;

    const std::vector<VectorXd> grads = cost_grad(model, feature, x_a, x_b, codes, cfg);
    for (std::size_t s = 0; s < codes.size(); ++s) {
      velocity[s] = cfg.momentum * velocity[s] - cfg.step_size * grads[s];
      codes[s].logits += velocity[s];
    }
  }

  record.d_star = best_distance;
  record.codes = std::move(best_codes);
  return record;
}

double transforming_distance(const FgrbmParams& model, const FeatureSpace& feature,
                             const VectorXd& x_a, const VectorXd& x_b, const DistanceConfig& cfg) {
  return optimize_code(model, feature, x_a, x_b, cfg).d_star;
}

std::vector<double> batch_distances_serial(const FgrbmParams& model, const FeatureSpace& feature,
                                           const std::vector<VectorXd>& sources,
                                           const VectorXd& target, const DistanceConfig& cfg) {
  require(!sources.empty(), "batch_distances requires at least one source");
  std::vector<double> out(sources.size());
  for (std::size_t i = 0; i < sources.size(); ++i) {
    try {
      out[i] = transforming_distance(model, feature, sources[i], target, cfg);
    } catch (const NumericalFailure& e) {
      throw NumericalFailure("pair " + std::to_string(i) + ": " + e.what(), e.iteration(),
                             static_cast<int>(i));
    }
  }
  return out;
}

std::vector<double> batch_distances(const FgrbmParams& model, const FeatureSpace& feature,
                                    const std::vector<VectorXd>& sources, const VectorXd& target,
                                    const DistanceConfig& cfg) {
  require(!sources.empty(), "batch_distances requires at least one source");
  const int n = static_cast<int>(sources.size());
  std::vector<double> out(n);
  int failed_index = -1;
  int failed_iteration = 0;

#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < n; ++i) {
    try {
      out[i] = transforming_distance(model, feature, sources[i], target, cfg);
    } catch (const NumericalFailure& e) {
#pragma omp critical
      {
        if (failed_index < 0 || i < failed_index) {
          failed_index = i;
          failed_iteration = e.iteration();
        }
      }
    }
  }

  if (failed_index >= 0)
    throw NumericalFailure("pair " + std::to_string(failed_index) +
                               ": non-finite cost at iteration " +
                               std::to_string(failed_iteration),
                           failed_iteration, failed_index);
  return out;
}

}  // namespace tdist
