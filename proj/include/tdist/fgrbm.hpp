#ifndef TDIST_FGRBM_HPP
#define TDIST_FGRBM_HPP

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tdist/common.hpp"

namespace tdist {

// Gaussian-Bernoulli factored gated RBM over a real-valued source x, a
// real-valued target y and binary hidden units h. Three filter banks project
// each group onto N shared factors where they interact multiplicatively:
//
//   E(y, h; x) = 1/2 sum_j (y_j - b_j)^2
//                - sum_n (V^T x)_n (W^T y)_n (U^T h)_n - c . h
//
// The target conditional is Gaussian with unit variance, the hidden
// conditional is Bernoulli. A trained model is immutable and safe to share
// across threads.
struct FgrbmParams {
  int source_dim = 0;  // I
  int target_dim = 0;  // J
  int hidden_dim = 0;  // M
  int factor_dim = 0;  // N

  MatrixXd source_filters;  // I x N
  MatrixXd target_filters;  // J x N
  MatrixXd hidden_filters;  // M x N
  VectorXd target_bias;     // J
  VectorXd hidden_bias;     // M
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double momentum = 0.9;
  int epochs = 200;
  int batch_size = 100;
  double weight_decay = 1e-4;  // applied to filters only, never biases
  int cd_steps = 1;
  bool sample_target_in_chain = false;  // false: negative phase uses the Gaussian mean
  std::uint64_t seed = 0;

  void validate() const;
};

// A set of (source, target) pairs stored row-wise.
struct PairBatch {
  MatrixXd sources;  // B x I
  MatrixXd targets;  // B x J

  int size() const { return static_cast<int>(sources.rows()); }
};

// Parameter-shaped container, used both for gradients and for momentum state.
struct FgrbmGrads {
  MatrixXd source_filters;
  MatrixXd target_filters;
  MatrixXd hidden_filters;
  VectorXd target_bias;
  VectorXd hidden_bias;

  static FgrbmGrads zeros_like(const FgrbmParams& p);
};

struct EpochStats {
  double reconstruction_error = 0.0;  // mean ||y+ - y-_mean||^2 over the epoch
  double mean_free_energy = 0.0;      // mean F(y; x) over training pairs
};

using TrainHistory = std::vector<EpochStats>;

FgrbmParams init_params(int source_dim, int target_dim, int hidden_dim, int factor_dim,
                        double scale, std::uint64_t seed);

// Pre-sigmoid hidden inputs a_m = sum_n u_mn (V^T x)_n (W^T y)_n + c_m.
VectorXd hidden_preactivation(const FgrbmParams& p, const VectorXd& x, const VectorXd& y);

// Energy of a full (y, h) configuration; h must be exactly binary.
double energy(const FgrbmParams& p, const VectorXd& x, const VectorXd& y, const VectorXd& h);

// F(y; x) = 1/2 ||y - b||^2 - sum_m softplus(a_m); satisfies
// exp(-F) = sum over all binary h of exp(-E).
double free_energy(const FgrbmParams& p, const VectorXd& x, const VectorXd& y);

// p(h_m = 1 | x, y) = sigmoid(a_m)
VectorXd infer_hidden(const FgrbmParams& p, const VectorXd& x, const VectorXd& y);

// Conditional Gaussian mean E[y | x, h]; h may be a relaxed point in [0,1]^M.
VectorXd transform(const FgrbmParams& p, const VectorXd& x, const VectorXd& h);

// Draws y ~ Normal(transform(p, x, h), identity).
VectorXd sample_target(const FgrbmParams& p, const VectorXd& x, const VectorXd& h,
                       std::mt19937_64& rng);

// Gradient of free_energy with respect to every parameter tensor.
FgrbmGrads free_energy_grad(const FgrbmParams& p, const VectorXd& x, const VectorXd& y);

// Batched row-wise versions used by training and the distance kernels.
MatrixXd hidden_preactivation_batch(const FgrbmParams& p, const MatrixXd& sources,
                                    const MatrixXd& targets);
MatrixXd transform_batch(const FgrbmParams& p, const MatrixXd& sources, const MatrixXd& hiddens);
VectorXd free_energy_batch(const FgrbmParams& p, const MatrixXd& sources, const MatrixXd& targets);

// CD gradient estimate (dF(y+)/dtheta - dF(y-)/dtheta averaged over rows).
// Exposed so the positive-equals-negative cancellation can be checked directly.
FgrbmGrads cd_gradient(const FgrbmParams& p, const MatrixXd& sources, const MatrixXd& targets_pos,
                       const MatrixXd& targets_neg);

// One contrastive-divergence step over a batch. Updates params and velocity in
// place; returns the mean squared reconstruction error against the mean-field
// reconstruction of the final chain step.
double cd_update(FgrbmParams& p, const PairBatch& batch, const TrainConfig& cfg,
                 std::mt19937_64& rng, FgrbmGrads& velocity);

// Full training loop: seeded shuffling, mini-batches, momentum and weight
// decay per TrainConfig. If checkpoint_path is non-empty the final parameters
// are written there in the binary checkpoint format.
TrainHistory train(FgrbmParams& p, const PairBatch& pairs, const TrainConfig& cfg,
                   const std::string& checkpoint_path = {});

// Checkpoint file: "FGRB" magic, u32 LE version, u32 LE I, J, M, N, then the
// filter banks and biases as row-major little-endian float32.
void save_checkpoint(const FgrbmParams& p, const std::string& path);
FgrbmParams load_checkpoint(const std::string& path);

}  // namespace tdist

#endif  // TDIST_FGRBM_HPP
