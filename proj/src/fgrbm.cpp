#include "tdist/fgrbm.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "tdist/binary_io.hpp"

namespace tdist {

namespace {

void check_source(const FgrbmParams& p, const VectorXd& x) {
  require(x.size() == p.source_dim, "source vector has dimension " + std::to_string(x.size()) +
                                        ", model expects " + std::to_string(p.source_dim));
}

void check_target(const FgrbmParams& p, const VectorXd& y) {
  require(y.size() == p.target_dim, "target vector has dimension " + std::to_string(y.size()) +
                                        ", model expects " + std::to_string(p.target_dim));
}

void check_hidden(const FgrbmParams& p, const VectorXd& h) {
  require(h.size() == p.hidden_dim, "hidden vector has dimension " + std::to_string(h.size()) +
                                        ", model expects " + std::to_string(p.hidden_dim));
}

MatrixXd softplus_mat(const MatrixXd& a) {
  return a.unaryExpr([](double v) { return softplus(v); });
}

// Sum over rows of dF(y_r; x_r)/dtheta, assembled from the batched factor
// projections. Used by both phases of the CD estimate.
FgrbmGrads free_energy_grad_sum(const FgrbmParams& p, const MatrixXd& X, const MatrixXd& Y) {
  const MatrixXd fx = X * p.source_filters;                                       // B x N
  const MatrixXd fy = Y * p.target_filters;                                       // B x N
  const MatrixXd act = (fx.array() * fy.array()).matrix() * p.hidden_filters.transpose();
  const MatrixXd s =
      (act.rowwise() + p.hidden_bias.transpose()).unaryExpr([](double v) { return sigmoid(v); });
  const MatrixXd g = s * p.hidden_filters;                                        // B x N

  FgrbmGrads out;
  out.source_filters = -X.transpose() * (fy.array() * g.array()).matrix();
  out.target_filters = -Y.transpose() * (fx.array() * g.array()).matrix();
  out.hidden_filters = -s.transpose() * (fx.array() * fy.array()).matrix();
  out.target_bias = -(Y.colwise().sum().transpose() -
                      static_cast<double>(Y.rows()) * p.target_bias);
  out.hidden_bias = -s.colwise().sum().transpose();
  return out;
}

void check_batch(const FgrbmParams& p, const MatrixXd& X, const MatrixXd& Y) {
  require(X.rows() == Y.rows(), "source and target batches have different row counts");
  require(X.cols() == p.source_dim, "source batch has wrong dimensionality");
  require(Y.cols() == p.target_dim, "target batch has wrong dimensionality");
}

}  // namespace

void TrainConfig::validate() const {
  require(learning_rate >= 0.0, "learning_rate must be nonnegative");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(epochs >= 0, "epochs must be nonnegative");
  require(batch_size > 0, "batch_size must be positive");
  require(weight_decay >= 0.0, "weight_decay must be nonnegative");
  require(cd_steps > 0, "cd_steps must be positive");
}

FgrbmGrads FgrbmGrads::zeros_like(const FgrbmParams& p) {
  FgrbmGrads g;
  g.source_filters = MatrixXd::Zero(p.source_dim, p.factor_dim);
  g.target_filters = MatrixXd::Zero(p.target_dim, p.factor_dim);
  g.hidden_filters = MatrixXd::Zero(p.hidden_dim, p.factor_dim);
  g.target_bias = VectorXd::Zero(p.target_dim);
  g.hidden_bias = VectorXd::Zero(p.hidden_dim);
  return g;
}

FgrbmParams init_params(int source_dim, int target_dim, int hidden_dim, int factor_dim,
                        double scale, std::uint64_t seed) {
  require(source_dim > 0 && target_dim > 0 && hidden_dim > 0 && factor_dim > 0,
          "all model dimensions must be positive");
  require(scale > 0.0, "init scale must be positive");

  std::mt19937_64 rng = make_rng(seed);
  std::normal_distribution<double> noise(0.0, scale);

  FgrbmParams p;
  p.source_dim = source_dim;
  p.target_dim = target_dim;
  p.hidden_dim = hidden_dim;
  p.factor_dim = factor_dim;
  p.source_filters.resize(source_dim, factor_dim);
  p.target_filters.resize(target_dim, factor_dim);
  p.hidden_filters.resize(hidden_dim, factor_dim);
  for (int r = 0; r < source_dim; ++r)
    for (int n = 0; n < factor_dim; ++n) p.source_filters(r, n) = noise(rng);
  for (int r = 0; r < target_dim; ++r)
    for (int n = 0; n < factor_dim; ++n) p.target_filters(r, n) = noise(rng);
  for (int r = 0; r < hidden_dim; ++r)
    for (int n = 0; n < factor_dim; ++n) p.hidden_filters(r, n) = noise(rng);
  p.target_bias = VectorXd::Zero(target_dim);
  p.hidden_bias = VectorXd::Zero(hidden_dim);
  return p;
}

VectorXd hidden_preactivation(const FgrbmParams& p, const VectorXd& x, const VectorXd& y) {
  check_source(p, x);
  check_target(p, y);
  const VectorXd fx = p.source_filters.transpose() * x;
  const VectorXd fy = p.target_filters.transpose() * y;
  return p.hidden_filters * fx.cwiseProduct(fy) + p.hidden_bias;
}

double energy(const FgrbmParams& p, const VectorXd& x, const VectorXd& y, const VectorXd& h) {
  check_source(p, x);
  check_target(p, y);
  check_hidden(p, h);
  for (Eigen::Index m = 0; m < h.size(); ++m)
    require(h[m] == 0.0 || h[m] == 1.0, "energy requires an exactly binary hidden vector");

  const VectorXd fx = p.source_filters.transpose() * x;
  const VectorXd fy = p.target_filters.transpose() * y;
  const VectorXd fh = p.hidden_filters.transpose() * h;
  return 0.5 * (y - p.target_bias).squaredNorm() - fx.cwiseProduct(fy).dot(fh) -
         p.hidden_bias.dot(h);
}

double free_energy(const FgrbmParams& p, const VectorXd& x, const VectorXd& y) {
  const VectorXd a = hidden_preactivation(p, x, y);
  double sp = 0.0;
  for (Eigen::Index m = 0; m < a.size(); ++m) sp += softplus(a[m]);
  return 0.5 * (y - p.target_bias).squaredNorm() - sp;
}

VectorXd infer_hidden(const FgrbmParams& p, const VectorXd& x, const VectorXd& y) {
  return hidden_preactivation(p, x, y).unaryExpr([](double v) { return sigmoid(v); });
}

VectorXd transform(const FgrbmParams& p, const VectorXd& x, const VectorXd& h) {
  check_source(p, x);
  check_hidden(p, h);
  const VectorXd fx = p.source_filters.transpose() * x;
  const VectorXd fh = p.hidden_filters.transpose() * h;
  return p.target_filters * fx.cwiseProduct(fh) + p.target_bias;
}

VectorXd sample_target(const FgrbmParams& p, const VectorXd& x, const VectorXd& h,
                       std::mt19937_64& rng) {
  VectorXd y = transform(p, x, h);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index j = 0; j < y.size(); ++j) y[j] += unit(rng);
  return y;
}

FgrbmGrads free_energy_grad(const FgrbmParams& p, const VectorXd& x, const VectorXd& y) {
  check_source(p, x);
  check_target(p, y);
  const VectorXd fx = p.source_filters.transpose() * x;
  const VectorXd fy = p.target_filters.transpose() * y;
  const VectorXd s = (p.hidden_filters * fx.cwiseProduct(fy) + p.hidden_bias)
                         .unaryExpr([](double v) { return sigmoid(v); });
  const VectorXd g = p.hidden_filters.transpose() * s;

  FgrbmGrads out;
  out.source_filters = -x * fy.cwiseProduct(g).transpose();
  out.target_filters = -y * fx.cwiseProduct(g).transpose();
  out.hidden_filters = -s * fx.cwiseProduct(fy).transpose();
  out.target_bias = -(y - p.target_bias);
  out.hidden_bias = -s;
  return out;
}

MatrixXd hidden_preactivation_batch(const FgrbmParams& p, const MatrixXd& sources,
                                    const MatrixXd& targets) {
  check_batch(p, sources, targets);
  const MatrixXd fx = sources * p.source_filters;
  const MatrixXd fy = targets * p.target_filters;
  MatrixXd a = (fx.array() * fy.array()).matrix() * p.hidden_filters.transpose();
  a.rowwise() += p.hidden_bias.transpose();
  return a;
}

MatrixXd transform_batch(const FgrbmParams& p, const MatrixXd& sources, const MatrixXd& hiddens) {
  require(sources.rows() == hiddens.rows(), "source and hidden batches have different row counts");
  require(sources.cols() == p.source_dim, "source batch has wrong dimensionality");
  require(hiddens.cols() == p.hidden_dim, "hidden batch has wrong dimensionality");
  const MatrixXd fx = sources * p.source_filters;
  const MatrixXd fh = hiddens * p.hidden_filters;
  MatrixXd t = (fx.array() * fh.array()).matrix() * p.target_filters.transpose();
  t.rowwise() += p.target_bias.transpose();
  return t;
}

VectorXd free_energy_batch(const FgrbmParams& p, const MatrixXd& sources, const MatrixXd& targets) {
  const MatrixXd a = hidden_preactivation_batch(p, sources, targets);
  const VectorXd quad =
      0.5 * (targets.rowwise() - p.target_bias.transpose()).rowwise().squaredNorm();
  return quad - softplus_mat(a).rowwise().sum();
}

FgrbmGrads cd_gradient(const FgrbmParams& p, const MatrixXd& sources, const MatrixXd& targets_pos,
                       const MatrixXd& targets_neg) {
  check_batch(p, sources, targets_pos);
  check_batch(p, sources, targets_neg);
  const double inv_b = 1.0 / static_cast<double>(sources.rows());
  const FgrbmGrads pos = free_energy_grad_sum(p, sources, targets_pos);
  const FgrbmGrads neg = free_energy_grad_sum(p, sources, targets_neg);

  FgrbmGrads out;
  out.source_filters = inv_b * (pos.source_filters - neg.source_filters);
  out.target_filters = inv_b * (pos.target_filters - neg.target_filters);
  out.hidden_filters = inv_b * (pos.hidden_filters - neg.hidden_filters);
  out.target_bias = inv_b * (pos.target_bias - neg.target_bias);
  out.hidden_bias = inv_b * (pos.hidden_bias - neg.hidden_bias);
  return out;
}

double cd_update(FgrbmParams& p, const PairBatch& batch, const TrainConfig& cfg,
                 std::mt19937_64& rng, FgrbmGrads& velocity) {
  require(batch.size() > 0, "cd_update requires a nonempty batch");
  cfg.validate();
  check_batch(p, batch.sources, batch.targets);

  const int b = batch.size();
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> unit(0.0, 1.0);

  // Alternate h ~ p(h|x,y), y <- mean (or sample) of p(y|x,h), starting at the data.
  MatrixXd chain_targets = batch.targets;
  MatrixXd chain_mean;
  for (int step = 0; step < cfg.cd_steps; ++step) {
    const MatrixXd probs = hidden_preactivation_batch(p, batch.sources, chain_targets)
                               .unaryExpr([](double v) { return sigmoid(v); });
    MatrixXd h(b, p.hidden_dim);
    for (int r = 0; r < b; ++r)
      for (int m = 0; m < p.hidden_dim; ++m) h(r, m) = unif(rng) < probs(r, m) ? 1.0 : 0.0;
    chain_mean = transform_batch(p, batch.sources, h);
    if (cfg.sample_target_in_chain) {
      chain_targets = chain_mean;
      for (int r = 0; r < b; ++r)
        for (int j = 0; j < p.target_dim; ++j) chain_targets(r, j) += unit(rng);
    } else {
      chain_targets = chain_mean;
    }
  }

  const FgrbmGrads grad = cd_gradient(p, batch.sources, batch.targets, chain_targets);

  const double lr = cfg.learning_rate;
  velocity.source_filters = cfg.momentum * velocity.source_filters -
                            lr * (grad.source_filters + cfg.weight_decay * p.source_filters);
  velocity.target_filters = cfg.momentum * velocity.target_filters -
                            lr * (grad.target_filters + cfg.weight_decay * p.target_filters);
  velocity.hidden_filters = cfg.momentum * velocity.hidden_filters -
                            lr * (grad.hidden_filters + cfg.weight_decay * p.hidden_filters);
  velocity.target_bias = cfg.momentum * velocity.target_bias - lr * grad.target_bias;
  velocity.hidden_bias = cfg.momentum * velocity.hidden_bias - lr * grad.hidden_bias;

  p.source_filters += velocity.source_filters;
  p.target_filters += velocity.target_filters;
  p.hidden_filters += velocity.hidden_filters;
  p.target_bias += velocity.target_bias;
  p.hidden_bias += velocity.hidden_bias;

  return (batch.targets - chain_mean).rowwise().squaredNorm().mean();
}

TrainHistory train(FgrbmParams& p, const PairBatch& pairs, const TrainConfig& cfg,
                   const std::string& checkpoint_path) {
  require(pairs.size() > 0, "train requires a nonempty pair set");
  cfg.validate();
  check_batch(p, pairs.sources, pairs.targets);

  const int total = pairs.size();
  std::mt19937_64 rng = make_rng(cfg.seed);
  FgrbmGrads velocity = FgrbmGrads::zeros_like(p);
  std::vector<int> order(total);
  std::iota(order.begin(), order.end(), 0);

  TrainHistory history;
  history.reserve(cfg.epochs);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);

    double recon_sum = 0.0;
    for (int start = 0; start < total; start += cfg.batch_size) {
      const int b = std::min(cfg.batch_size, total - start);
      PairBatch batch;
      batch.sources.resize(b, p.source_dim);
      batch.targets.resize(b, p.target_dim);
      for (int r = 0; r < b; ++r) {
        batch.sources.row(r) = pairs.sources.row(order[start + r]);
        batch.targets.row(r) = pairs.targets.row(order[start + r]);
      }
      recon_sum += static_cast<double>(b) * cd_update(p, batch, cfg, rng, velocity);
    }

    EpochStats stats;
    stats.reconstruction_error = recon_sum / total;
    stats.mean_free_energy = free_energy_batch(p, pairs.sources, pairs.targets).mean();
    require(std::isfinite(stats.reconstruction_error) && std::isfinite(stats.mean_free_energy),
            "training diverged at epoch " + std::to_string(epoch));
    history.push_back(stats);
  }

  if (!checkpoint_path.empty()) save_checkpoint(p, checkpoint_path);
  return history;
}

void save_checkpoint(const FgrbmParams& p, const std::string& path) {
  const std::filesystem::path fspath(path);
  if (fspath.has_parent_path()) std::filesystem::create_directories(fspath.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);

  os.write("FGRB", 4);
  bio::write_u32le(os, 1);  // format version
  bio::write_u32le(os, static_cast<std::uint32_t>(p.source_dim));
  bio::write_u32le(os, static_cast<std::uint32_t>(p.target_dim));
  bio::write_u32le(os, static_cast<std::uint32_t>(p.hidden_dim));
  bio::write_u32le(os, static_cast<std::uint32_t>(p.factor_dim));
  bio::write_matrix_f32(os, p.source_filters);
  bio::write_matrix_f32(os, p.target_filters);
  bio::write_matrix_f32(os, p.hidden_filters);
  bio::write_matrix_f32(os, p.target_bias);
  bio::write_matrix_f32(os, p.hidden_bias);
  if (!os) throw std::runtime_error("failed writing checkpoint: " + path);
}

FgrbmParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

  char magic[4] = {};
  is.read(magic, 4);
  if (!is || std::string(magic, 4) != "FGRB")
    throw std::runtime_error("not a model checkpoint (bad magic): " + path);
  std::uint32_t version = 0;
  if (!bio::read_u32le(is, version) || version != 1)
    throw std::runtime_error("unsupported checkpoint version in " + path);

  std::uint32_t dims[4];
  for (auto& d : dims)
    if (!bio::read_u32le(is, d)) throw std::runtime_error("truncated checkpoint header: " + path);

  FgrbmParams p;
  p.source_dim = static_cast<int>(dims[0]);
  p.target_dim = static_cast<int>(dims[1]);
  p.hidden_dim = static_cast<int>(dims[2]);
  p.factor_dim = static_cast<int>(dims[3]);
  p.source_filters = bio::read_matrix_f32(is, p.source_dim, p.factor_dim, "source filters");
  p.target_filters = bio::read_matrix_f32(is, p.target_dim, p.factor_dim, "target filters");
  p.hidden_filters = bio::read_matrix_f32(is, p.hidden_dim, p.factor_dim, "hidden filters");
  p.target_bias = bio::read_vector_f32(is, p.target_dim, "target bias");
  p.hidden_bias = bio::read_vector_f32(is, p.hidden_dim, "hidden bias");
  return p;
}

}  // namespace tdist
