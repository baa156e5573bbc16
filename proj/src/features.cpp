#include "tdist/features.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "tdist/binary_io.hpp"

namespace tdist {

void LcnConfig::validate() const {
  require(kernel_size > 0 && kernel_size % 2 == 1, "LCN kernel size must be odd and positive");
  require(epsilon > 0.0, "LCN epsilon must be positive");
}

MatrixXd lcn(const MatrixXd& image, const LcnConfig& cfg) {
  cfg.validate();
  const int h = static_cast<int>(image.rows());
  const int w = static_cast<int>(image.cols());
  require(h >= cfg.kernel_size && w >= cfg.kernel_size, "LCN kernel larger than image");
  require(image.allFinite(), "LCN input must be finite");

  const int k = cfg.kernel_size;
  const int r = k / 2;
  const double sigma = static_cast<double>(k) / 4.0;
  MatrixXd window(k, k);
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      window(dy + r, dx + r) = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));

  // Weighted local mean with the window renormalized over in-bounds taps,
  // written as a sum of differences so constant images cancel exactly.
  MatrixXd centered(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, wsum = 0.0;
      for (int dy = std::max(-r, -y); dy <= std::min(r, h - 1 - y); ++dy)
        for (int dx = std::max(-r, -x); dx <= std::min(r, w - 1 - x); ++dx) {
          const double wt = window(dy + r, dx + r);
          acc += wt * (image(y, x) - image(y + dy, x + dx));
          wsum += wt;
        }
      centered(y, x) = acc / wsum;
    }

  MatrixXd local_sd(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0, wsum = 0.0;
      for (int dy = std::max(-r, -y); dy <= std::min(r, h - 1 - y); ++dy)
        for (int dx = std::max(-r, -x); dx <= std::min(r, w - 1 - x); ++dx) {
          const double wt = window(dy + r, dx + r);
          const double v = centered(y + dy, x + dx);
          acc += wt * v * v;
          wsum += wt;
        }
      local_sd(y, x) = std::sqrt(acc / wsum);
    }

  const double mean_sd = local_sd.mean();
  MatrixXd out(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      out(y, x) = centered(y, x) / std::max({local_sd(y, x), mean_sd, cfg.epsilon});
  return out;
}

PcaModel pca_fit(const MatrixXd& data, int num_components) {
  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  require(num_components >= 1, "PCA needs at least one component");
  require(num_components <= d, "PCA cannot retain more components than input dimensions");
  require(n >= num_components + 1, "PCA needs at least K+1 samples");

  PcaModel m;
  m.mean = data.colwise().mean();
  const MatrixXd centered = data.rowwise() - m.mean.transpose();
  const MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);
  require(solver.info() == Eigen::Success, "PCA eigendecomposition failed");

  // Eigen reports eigenvalues in increasing order; take the top K.
  m.components.resize(num_components, d);
  for (int kidx = 0; kidx < num_components; ++kidx) {
    VectorXd v = solver.eigenvectors().col(d - 1 - kidx);
    // Fix the sign so the largest-magnitude coefficient is positive.
    Eigen::Index imax;
    v.cwiseAbs().maxCoeff(&imax);
    if (v[imax] < 0.0) v = -v;
    m.components.row(kidx) = v.transpose();
  }
  return m;
}

VectorXd pca_encode(const PcaModel& m, const VectorXd& x) {
  require(x.size() == m.mean.size(), "PCA encode dimension mismatch");
  return m.components * (x - m.mean);
}

VectorXd pca_decode(const PcaModel& m, const VectorXd& code) {
  require(code.size() == m.components.rows(), "PCA decode dimension mismatch");
  return m.mean + m.components.transpose() * code;
}

VectorXd cae_encode(const CaeModel& m, const VectorXd& x) {
  require(x.size() == m.encoder_weights.cols(), "CAE encode dimension mismatch");
  return (m.encoder_weights * x + m.encoder_bias).unaryExpr([](double v) { return sigmoid(v); });
}

VectorXd cae_decode(const CaeModel& m, const VectorXd& code) {
  require(code.size() == m.encoder_weights.rows(), "CAE decode dimension mismatch");
  return m.encoder_weights.transpose() * code + m.decoder_bias;
}

std::pair<double, CaeGrads> cae_loss_grad(const CaeModel& m, const MatrixXd& data) {
  require(data.rows() > 0, "CAE loss needs a nonempty batch");
  require(data.cols() == m.encoder_weights.cols(), "CAE batch dimension mismatch");
  const int batch = static_cast<int>(data.rows());
  const VectorXd row_sq = m.encoder_weights.rowwise().squaredNorm();  // ||W_m||^2

  CaeGrads g;
  g.encoder_weights = MatrixXd::Zero(m.encoder_weights.rows(), m.encoder_weights.cols());
  g.encoder_bias = VectorXd::Zero(m.encoder_bias.size());
  g.decoder_bias = VectorXd::Zero(m.decoder_bias.size());

  double loss = 0.0;
  for (int rix = 0; rix < batch; ++rix) {
    const VectorXd x = data.row(rix).transpose();
    const VectorXd h = cae_encode(m, x);
    const VectorXd resid = cae_decode(m, h) - x;
    const VectorXd s = h.array() * (1.0 - h.array());  // sigmoid slope, also the Jacobian factor

    loss += resid.squaredNorm() +
            m.contraction_weight * (s.array().square() * row_sq.array()).sum();

    const VectorXd delta = 2.0 * (m.encoder_weights * resid).cwiseProduct(s);
    g.decoder_bias += 2.0 * resid;
    g.encoder_bias += delta;
    g.encoder_weights += delta * x.transpose() + 2.0 * h * resid.transpose();

    // Contractive penalty: d/dW_mj of s_m^2 ||W_m||^2, with s_m depending on W via h.
    const VectorXd s2 = s.array().square();
    const VectorXd pen_bias =
        2.0 * m.contraction_weight * (s2.array() * row_sq.array() * (1.0 - 2.0 * h.array()));
    g.encoder_bias += pen_bias;
    g.encoder_weights += 2.0 * m.contraction_weight * s2.asDiagonal() * m.encoder_weights +
                         pen_bias * x.transpose();
  }

  const double inv_b = 1.0 / static_cast<double>(batch);
  g.encoder_weights *= inv_b;
  g.encoder_bias *= inv_b;
  g.decoder_bias *= inv_b;
  return {loss * inv_b, g};
}

double cae_loss(const CaeModel& m, const MatrixXd& data) { return cae_loss_grad(m, data).first; }

CaeModel cae_fit(const MatrixXd& data, int hidden_dim, double contraction_weight,
                 const CaeTrainConfig& cfg) {
  require(data.rows() > 0, "cae_fit requires nonempty data");
  require(hidden_dim > 0, "cae_fit requires a positive hidden dimension");
  require(contraction_weight >= 0.0, "contraction weight must be nonnegative");

  const int n = static_cast<int>(data.rows());
  const int d = static_cast<int>(data.cols());
  std::mt19937_64 rng = make_rng(cfg.seed);
  std::normal_distribution<double> noise(0.0, std::sqrt(2.0 / (d + hidden_dim)));

  CaeModel m;
  m.contraction_weight = contraction_weight;
  m.encoder_weights.resize(hidden_dim, d);
  for (int r = 0; r < hidden_dim; ++r)
    for (int c = 0; c < d; ++c) m.encoder_weights(r, c) = noise(rng);
  m.encoder_bias = VectorXd::Zero(hidden_dim);
  m.decoder_bias = VectorXd::Zero(d);

  CaeGrads velocity;
  velocity.encoder_weights = MatrixXd::Zero(hidden_dim, d);
  velocity.encoder_bias = VectorXd::Zero(hidden_dim);
  velocity.decoder_bias = VectorXd::Zero(d);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, n - start);
      MatrixXd batch(b, d);
      for (int r = 0; r < b; ++r) batch.row(r) = data.row(order[start + r]);

      const auto [loss, grad] = cae_loss_grad(m, batch);
      (void)loss;
      velocity.encoder_weights =
          cfg.momentum * velocity.encoder_weights - cfg.learning_rate * grad.encoder_weights;
      velocity.encoder_bias =
          cfg.momentum * velocity.encoder_bias - cfg.learning_rate * grad.encoder_bias;
      velocity.decoder_bias =
          cfg.momentum * velocity.decoder_bias - cfg.learning_rate * grad.decoder_bias;
      m.encoder_weights += velocity.encoder_weights;
      m.encoder_bias += velocity.encoder_bias;
      m.decoder_bias += velocity.decoder_bias;
    }
  }
  return m;
}

VectorXd encode(const FeatureSpace& f, const VectorXd& x) {
  return std::visit(
      [&](const auto& space) -> VectorXd {
        using T = std::decay_t<decltype(space)>;
        if constexpr (std::is_same_v<T, IdentityFeature>)
          return x;
        else if constexpr (std::is_same_v<T, PcaModel>)
          return pca_encode(space, x);
        else
          return cae_encode(space, x);
      },
      f);
}

int feature_dim(const FeatureSpace& f, int input_dim) {
  return std::visit(
      [&](const auto& space) -> int {
        using T = std::decay_t<decltype(space)>;
        if constexpr (std::is_same_v<T, IdentityFeature>)
          return input_dim;
        else if constexpr (std::is_same_v<T, PcaModel>)
          return static_cast<int>(space.components.rows());
        else
          return static_cast<int>(space.encoder_weights.rows());
      },
      f);
}

EncodedWithJacobian encode_with_jacobian(const FeatureSpace& f, const VectorXd& x) {
  return std::visit(
      [&](const auto& space) -> EncodedWithJacobian {
        using T = std::decay_t<decltype(space)>;
        if constexpr (std::is_same_v<T, IdentityFeature>) {
          return {x, std::nullopt};
        } else if constexpr (std::is_same_v<T, PcaModel>) {
          return {pca_encode(space, x), space.components};
        } else {
          const VectorXd h = cae_encode(space, x);
          const VectorXd s = h.array() * (1.0 - h.array());
          return {h, MatrixXd(s.asDiagonal() * space.encoder_weights)};
        }
      },
      f);
}

void save_feature_space(const FeatureSpace& f, const std::string& path) {
  const std::filesystem::path fspath(path);
  if (fspath.has_parent_path()) std::filesystem::create_directories(fspath.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open feature checkpoint for writing: " + path);

  if (const auto* pca = std::get_if<PcaModel>(&f)) {
    os.write("FPCA", 4);
    bio::write_u32le(os, 1);
    bio::write_u32le(os, static_cast<std::uint32_t>(pca->components.rows()));
    bio::write_u32le(os, static_cast<std::uint32_t>(pca->components.cols()));
    bio::write_matrix_f32(os, pca->mean);
    bio::write_matrix_f32(os, pca->components);
  } else if (const auto* cae = std::get_if<CaeModel>(&f)) {
    os.write("FCAE", 4);
    bio::write_u32le(os, 1);
    bio::write_u32le(os, static_cast<std::uint32_t>(cae->encoder_weights.rows()));
    bio::write_u32le(os, static_cast<std::uint32_t>(cae->encoder_weights.cols()));
    bio::write_f32le(os, static_cast<float>(cae->contraction_weight));
    bio::write_matrix_f32(os, cae->encoder_weights);
    bio::write_matrix_f32(os, cae->encoder_bias);
    bio::write_matrix_f32(os, cae->decoder_bias);
  } else {
    throw std::invalid_argument("the identity feature space has no checkpoint format");
  }
  if (!os) throw std::runtime_error("failed writing feature checkpoint: " + path);
}

FeatureSpace load_feature_space(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open feature checkpoint: " + path);

  char magic[4] = {};
  is.read(magic, 4);
  const std::string tag(magic, 4);
  std::uint32_t version = 0;
  if (!is || !bio::read_u32le(is, version))
    throw std::runtime_error("truncated feature checkpoint: " + path);
  if (version != 1) throw std::runtime_error("unsupported feature checkpoint version in " + path);

  std::uint32_t rows = 0, cols = 0;
  if (!bio::read_u32le(is, rows) || !bio::read_u32le(is, cols))
    throw std::runtime_error("truncated feature checkpoint header: " + path);

  if (tag == "FPCA") {
    PcaModel m;
    m.mean = bio::read_vector_f32(is, cols, "PCA mean");
    m.components = bio::read_matrix_f32(is, rows, cols, "PCA components");
    return m;
  }
  if (tag == "FCAE") {
    CaeModel m;
    float cw = 0.0f;
    if (!bio::read_f32le(is, cw)) throw std::runtime_error("truncated feature checkpoint: " + path);
    m.contraction_weight = cw;
    m.encoder_weights = bio::read_matrix_f32(is, rows, cols, "CAE weights");
    m.encoder_bias = bio::read_vector_f32(is, rows, "CAE encoder bias");
    m.decoder_bias = bio::read_vector_f32(is, cols, "CAE decoder bias");
    return m;
  }
  throw std::runtime_error("not a feature checkpoint (bad magic): " + path);
}

}  // namespace tdist
