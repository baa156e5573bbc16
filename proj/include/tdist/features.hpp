#ifndef TDIST_FEATURES_HPP
#define TDIST_FEATURES_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <variant>

#include "tdist/common.hpp"

namespace tdist {

// ---------------------------------------------------------------------------
// Local contrast normalization
// ---------------------------------------------------------------------------

struct LcnConfig {
  int kernel_size = 9;     // odd, in pixels
  double epsilon = 1e-4;   // divisive floor

  void validate() const;
};

// Subtracts a Gaussian-weighted local mean, then divides by
// max(local std, image mean of local stds, epsilon). The Gaussian window uses
// sigma = kernel_size / 4 and is renormalized over in-bounds taps, so a
// constant image maps to exactly zero.
MatrixXd lcn(const MatrixXd& image, const LcnConfig& cfg);

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

struct PcaModel {
  VectorXd mean;        // D
  MatrixXd components;  // K x D, rows orthonormal, sorted by decreasing variance
};

// Top-K eigenvectors of the sample covariance of `data` (rows are samples).
PcaModel pca_fit(const MatrixXd& data, int num_components);
VectorXd pca_encode(const PcaModel& m, const VectorXd& x);
VectorXd pca_decode(const PcaModel& m, const VectorXd& code);

// ---------------------------------------------------------------------------
// Contractive autoencoder (tied weights, sigmoid encoder, linear decoder)
// ---------------------------------------------------------------------------

struct CaeModel {
  MatrixXd encoder_weights;  // Mf x D
  VectorXd encoder_bias;     // Mf
  VectorXd decoder_bias;     // D
  double contraction_weight = 0.1;
};

struct CaeTrainConfig {
  double learning_rate = 0.02;
  double momentum = 0.9;
  int epochs = 100;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

VectorXd cae_encode(const CaeModel& m, const VectorXd& x);
VectorXd cae_decode(const CaeModel& m, const VectorXd& code);

// Mean reconstruction error plus the contractive penalty
//   lambda_c * mean_over_batch sum_m (h_m (1 - h_m))^2 ||W_m||^2
// which is the squared Frobenius norm of the encoder Jacobian.
double cae_loss(const CaeModel& m, const MatrixXd& data);

struct CaeGrads {
  MatrixXd encoder_weights;
  VectorXd encoder_bias;
  VectorXd decoder_bias;
};

// Loss and its gradient over a batch; exposed for finite-difference checks.
std::pair<double, CaeGrads> cae_loss_grad(const CaeModel& m, const MatrixXd& data);

CaeModel cae_fit(const MatrixXd& data, int hidden_dim, double contraction_weight,
                 const CaeTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Feature space f(.)
// ---------------------------------------------------------------------------

struct IdentityFeature {};

using FeatureSpace = std::variant<IdentityFeature, PcaModel, CaeModel>;

VectorXd encode(const FeatureSpace& f, const VectorXd& x);
int feature_dim(const FeatureSpace& f, int input_dim);

// Features plus the Jacobian df/dx. The identity space keeps `jacobian`
// empty; vjp() then just returns its argument, with no materialized matrix.
struct EncodedWithJacobian {
  VectorXd features;
  std::optional<MatrixXd> jacobian;

  // J^T u, the pullback used when chaining distance gradients through f.
  VectorXd vjp(const VectorXd& u) const {
    return jacobian ? VectorXd(jacobian->transpose() * u) : u;
  }
};

EncodedWithJacobian encode_with_jacobian(const FeatureSpace& f, const VectorXd& x);

// Feature checkpoints: magic "FPCA"/"FCAE", u32 LE version, dims, row-major
// little-endian float32 tensors. The identity space has no checkpoint.
void save_feature_space(const FeatureSpace& f, const std::string& path);
FeatureSpace load_feature_space(const std::string& path);

}  // namespace tdist

#endif  // TDIST_FEATURES_HPP
