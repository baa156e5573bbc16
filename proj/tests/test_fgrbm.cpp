#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "tdist/fgrbm.hpp"

using namespace tdist;

namespace {

FgrbmParams one_dim_unit_model() {
  FgrbmParams p;
  p.source_dim = p.target_dim = p.hidden_dim = p.factor_dim = 1;
  p.source_filters = MatrixXd::Ones(1, 1);
  p.target_filters = MatrixXd::Ones(1, 1);
  p.hidden_filters = MatrixXd::Ones(1, 1);
  p.target_bias = VectorXd::Zero(1);
  p.hidden_bias = VectorXd::Zero(1);
  return p;
}

FgrbmParams zero_weight_model(int source_dim, int target_dim, int hidden_dim, int factor_dim) {
  FgrbmParams p;
  p.source_dim = source_dim;
  p.target_dim = target_dim;
  p.hidden_dim = hidden_dim;
  p.factor_dim = factor_dim;
  p.source_filters = MatrixXd::Zero(source_dim, factor_dim);
  p.target_filters = MatrixXd::Zero(target_dim, factor_dim);
  p.hidden_filters = MatrixXd::Zero(hidden_dim, factor_dim);
  p.target_bias = VectorXd::Zero(target_dim);
  p.hidden_bias = VectorXd::Zero(hidden_dim);
  return p;
}

VectorXd vec1(double v) { return VectorXd::Constant(1, v); }

std::string file_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  return std::string(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

// Circularly shifted smooth 1-D signals; the shift is the transformation the
// model has to pick up.
PairBatch one_dim_shift_pairs(int n_signals, int dim, int max_shift, bool include_self,
                              std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> freq(1, 5);
  std::vector<VectorXd> signals;
  for (int s = 0; s < n_signals; ++s) {
    VectorXd base(dim);
    const int f1 = freq(rng), f2 = freq(rng);
    const double p1 = 2.0 * M_PI * unif(rng), p2 = 2.0 * M_PI * unif(rng);
    for (int i = 0; i < dim; ++i) {
      const double t = 2.0 * M_PI * i / dim;
      base[i] = std::sin(f1 * t + p1) + 0.5 * std::sin(f2 * t + p2);
    }
    signals.push_back(base);
  }

  std::vector<std::pair<VectorXd, VectorXd>> pairs;
  for (const auto& base : signals)
    for (int shift = -max_shift; shift <= max_shift; ++shift) {
      if (shift == 0 && !include_self) continue;
      VectorXd shifted(dim);
      for (int i = 0; i < dim; ++i) shifted[(i + shift + dim) % dim] = base[i];
      pairs.emplace_back(base, shifted);
    }

  PairBatch out;
  out.sources.resize(static_cast<int>(pairs.size()), dim);
  out.targets.resize(static_cast<int>(pairs.size()), dim);
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    out.sources.row(static_cast<int>(r)) = pairs[r].first.transpose();
    out.targets.row(static_cast<int>(r)) = pairs[r].second.transpose();
  }
  return out;
}

}  // namespace

TEST_CASE("init_params shapes, zero biases and rejection of bad arguments") {
  const FgrbmParams p = init_params(2, 2, 2, 4, 0.01, 7);
  CHECK(p.source_filters.rows() == 2);
  CHECK(p.source_filters.cols() == 4);
  CHECK(p.target_filters.rows() == 2);
  CHECK(p.target_filters.cols() == 4);
  CHECK(p.hidden_filters.rows() == 2);
  CHECK(p.hidden_filters.cols() == 4);
  CHECK(p.target_bias.size() == 2);
  CHECK(p.hidden_bias.size() == 2);
  CHECK(p.target_bias.isZero(0.0));
  CHECK(p.hidden_bias.isZero(0.0));
  CHECK(p.source_filters.allFinite());

  CHECK_THROWS_AS(init_params(1, 1, 1, 1, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_params(0, 1, 1, 1, 0.01, 1), std::invalid_argument);
  CHECK_THROWS_AS(init_params(1, 1, -2, 1, 0.01, 1), std::invalid_argument);
}

TEST_CASE("init_params is deterministic in the seed") {
  const FgrbmParams a = init_params(3, 4, 2, 5, 0.01, 42);
  const FgrbmParams b = init_params(3, 4, 2, 5, 0.01, 42);
  const FgrbmParams c = init_params(3, 4, 2, 5, 0.01, 43);
  CHECK(a.source_filters == b.source_filters);
  CHECK(a.target_filters == b.target_filters);
  CHECK(a.hidden_filters == b.hidden_filters);
  CHECK(a.source_filters != c.source_filters);
}

TEST_CASE("hidden_preactivation hand cases and naive-loop oracle") {
  FgrbmParams zero = zero_weight_model(2, 2, 2, 3);
  zero.hidden_bias << 0.5, -0.5;
  const VectorXd a = hidden_preactivation(zero, VectorXd::Ones(2), VectorXd::Ones(2));
  CHECK(a[0] == doctest::Approx(0.5));
  CHECK(a[1] == doctest::Approx(-0.5));

  const FgrbmParams unit = one_dim_unit_model();
  CHECK(hidden_preactivation(unit, vec1(2.0), vec1(3.0))[0] == doctest::Approx(6.0));

  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const FgrbmParams p = oracle::random_tiny_model(3, 4, 3, 5, seed);
    const VectorXd x = oracle::random_vector(3, seed + 100);
    const VectorXd y = oracle::random_vector(4, seed + 200);
    const VectorXd fast = hidden_preactivation(p, x, y);
    const VectorXd slow = oracle::naive_hidden_preactivation(p, x, y);
    CHECK((fast - slow).norm() <= 1e-12 * std::max(1.0, slow.norm()));
  }

  CHECK_THROWS_AS(hidden_preactivation(zero, VectorXd::Ones(3), VectorXd::Ones(2)),
                  std::invalid_argument);
}

TEST_CASE("energy hand computations and binary validation") {
  const FgrbmParams unit = one_dim_unit_model();
  CHECK(energy(unit, vec1(2.0), vec1(3.0), vec1(1.0)) == doctest::Approx(-1.5));
  CHECK(energy(unit, vec1(2.0), vec1(3.0), vec1(0.0)) == doctest::Approx(4.5));

  const FgrbmParams zero = zero_weight_model(2, 2, 2, 3);
  VectorXd y(2);
  y << 1.0, 0.0;
  VectorXd h0 = VectorXd::Zero(2), h1 = VectorXd::Ones(2);
  CHECK(energy(zero, VectorXd::Ones(2), y, h0) == doctest::Approx(0.5));
  CHECK(energy(zero, VectorXd::Ones(2), y, h1) == doctest::Approx(0.5));

  CHECK_THROWS_AS(energy(unit, vec1(2.0), vec1(3.0), vec1(0.5)), std::invalid_argument);
}

TEST_CASE("free_energy closed forms") {
  const FgrbmParams zero = zero_weight_model(3, 3, 4, 2);
  const VectorXd y = oracle::random_vector(3, 9);
  CHECK(free_energy(zero, VectorXd::Zero(3), y) ==
        doctest::Approx(0.5 * y.squaredNorm() - 4.0 * std::log(2.0)));

  const FgrbmParams unit = one_dim_unit_model();
  CHECK(free_energy(unit, vec1(2.0), vec1(3.0)) ==
        doctest::Approx(4.5 - std::log(1.0 + std::exp(6.0))));
}

TEST_CASE("free_energy equals the enumerated hidden marginal") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const int m = 1 + static_cast<int>(seed % 6);
    const FgrbmParams p = oracle::random_tiny_model(3, 3, m, 2 * m, seed, 0.4);
    const VectorXd x = oracle::random_vector(3, seed + 300);
    const VectorXd y = oracle::random_vector(3, seed + 400);
    const double log_sum = oracle::log_partition_over_hidden(p, x, y);
    // |exp(-F) - S| / S == |exp(-F - log S) - 1|
    CHECK(std::abs(std::exp(-free_energy(p, x, y) - log_sum) - 1.0) < 1e-8);
  }
}

TEST_CASE("infer_hidden matches closed forms and the enumeration conditional") {
  const FgrbmParams zero = zero_weight_model(2, 2, 3, 2);
  CHECK(infer_hidden(zero, VectorXd::Ones(2), VectorXd::Ones(2)).isApproxToConstant(0.5));

  const FgrbmParams unit = one_dim_unit_model();
  CHECK(infer_hidden(unit, vec1(2.0), vec1(3.0))[0] == doctest::Approx(0.997527).epsilon(1e-5));

  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const int m = 1 + static_cast<int>(seed % 5);
    const FgrbmParams p = oracle::random_tiny_model(2, 3, m, 2 * m, seed, 0.5);
    const VectorXd x = oracle::random_vector(2, seed + 500);
    const VectorXd y = oracle::random_vector(3, seed + 600);
    const VectorXd fast = infer_hidden(p, x, y);
    const VectorXd slow = oracle::hidden_conditional_by_enumeration(p, x, y);
    for (int i = 0; i < m; ++i)
      CHECK(std::abs(fast[i] - slow[i]) <= 1e-8 * std::max(1e-8, std::abs(slow[i])));
  }
}

TEST_CASE("transform hand cases and naive-loop oracle") {
  FgrbmParams zero = zero_weight_model(2, 3, 2, 2);
  zero.target_bias << 0.3, -0.7, 0.1;
  CHECK(transform(zero, VectorXd::Ones(2), VectorXd::Ones(2)) == zero.target_bias);

  const FgrbmParams unit = one_dim_unit_model();
  CHECK(transform(unit, vec1(2.0), vec1(1.0))[0] == doctest::Approx(2.0));
  CHECK(transform(unit, vec1(2.0), vec1(0.0))[0] == doctest::Approx(0.0));

  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const FgrbmParams p = oracle::random_tiny_model(4, 3, 2, 5, seed);
    const VectorXd x = oracle::random_vector(4, seed + 700);
    VectorXd h = oracle::random_vector(2, seed + 800);
    h = h.unaryExpr([](double v) { return sigmoid(v); });
    const VectorXd fast = transform(p, x, h);
    const VectorXd slow = oracle::naive_transform(p, x, h);
    CHECK((fast - slow).norm() <= 1e-12 * std::max(1.0, slow.norm()));
  }
}

TEST_CASE("sample_target is a unit-variance Gaussian around the transform") {
  const int n = 100000;

  SUBCASE("zero-weight model gives standard normal components") {
    const FgrbmParams zero = zero_weight_model(2, 2, 2, 2);
    std::mt19937_64 rng(11);
    VectorXd mean = VectorXd::Zero(2), sq = VectorXd::Zero(2);
    for (int s = 0; s < n; ++s) {
      const VectorXd y = sample_target(zero, VectorXd::Ones(2), VectorXd::Ones(2), rng);
      mean += y;
      sq += y.cwiseProduct(y);
    }
    mean /= n;
    sq /= n;
    for (int j = 0; j < 2; ++j) {
      CHECK(std::abs(mean[j]) < 0.01);
      CHECK(std::abs(sq[j] - mean[j] * mean[j] - 1.0) < 0.02);
    }
  }

  SUBCASE("sample mean tracks the transform output") {
    const FgrbmParams p = oracle::random_tiny_model(3, 3, 2, 4, 21, 0.5);
    const VectorXd x = oracle::random_vector(3, 22);
    VectorXd h(2);
    h << 1.0, 0.0;
    const VectorXd expected = transform(p, x, h);
    std::mt19937_64 rng(23);
    VectorXd mean = VectorXd::Zero(3);
    for (int s = 0; s < n; ++s) mean += sample_target(p, x, h, rng);
    mean /= n;
    for (int j = 0; j < 3; ++j) CHECK(std::abs(mean[j] - expected[j]) < 0.01);
  }

  SUBCASE("fixed rng seed reproduces the sample sequence") {
    const FgrbmParams p = oracle::random_tiny_model(3, 3, 2, 4, 31, 0.5);
    const VectorXd x = oracle::random_vector(3, 32);
    const VectorXd h = VectorXd::Ones(2);
    std::mt19937_64 rng_a(77), rng_b(77);
    for (int s = 0; s < 10; ++s) {
      const VectorXd ya = sample_target(p, x, h, rng_a);
      const VectorXd yb = sample_target(p, x, h, rng_b);
      CHECK(ya == yb);
    }
  }
}

TEST_CASE("free_energy_grad closed forms at zero weights") {
  const FgrbmParams zero = zero_weight_model(2, 3, 4, 2);
  const VectorXd x = oracle::random_vector(2, 41);
  const VectorXd y = oracle::random_vector(3, 42);
  const FgrbmGrads g = free_energy_grad(zero, x, y);
  CHECK((g.target_bias + y).norm() == doctest::Approx(0.0));  // -(y - b), b = 0
  CHECK(g.hidden_bias.isApproxToConstant(-0.5));
}

TEST_CASE("free_energy_grad matches central finite differences") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    FgrbmParams p = oracle::random_tiny_model(3, 3, 3, 6, seed, 0.5);
    const VectorXd x = oracle::random_vector(3, seed + 900);
    const VectorXd y = oracle::random_vector(3, seed + 950);

    const VectorXd analytic = oracle::pack(free_energy_grad(p, x, y));
    const VectorXd numeric = oracle::central_differences(
        [&](const VectorXd& theta) {
          FgrbmParams probe = p;
          oracle::unpack(probe, theta);
          return free_energy(probe, x, y);
        },
        oracle::pack(p), 1e-4);

    CHECK(oracle::gradient_disagreement(analytic, numeric) < 1e-4);
    ++checked;
  }
  CHECK(checked == 20);
}

TEST_CASE("cd_gradient vanishes when the negative phase equals the data") {
  const FgrbmParams p = oracle::random_tiny_model(4, 4, 3, 6, 51);
  MatrixXd x(5, 4), y(5, 4);
  for (int r = 0; r < 5; ++r) {
    x.row(r) = oracle::random_vector(4, 60 + r).transpose();
    y.row(r) = oracle::random_vector(4, 70 + r).transpose();
  }
  const FgrbmGrads g = cd_gradient(p, x, y, y);
  CHECK(oracle::pack(g).norm() == doctest::Approx(0.0));
}

TEST_CASE("cd_update with zero learning rate changes nothing") {
  FgrbmParams p = oracle::random_tiny_model(4, 4, 3, 6, 52);
  const FgrbmParams before = p;
  PairBatch batch;
  batch.sources = MatrixXd::Random(6, 4);
  batch.targets = MatrixXd::Random(6, 4);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.weight_decay = 0.0;
  FgrbmGrads velocity = FgrbmGrads::zeros_like(p);
  std::mt19937_64 rng(5);
  cd_update(p, batch, cfg, rng, velocity);
  CHECK(p.source_filters == before.source_filters);
  CHECK(p.target_filters == before.target_filters);
  CHECK(p.hidden_filters == before.hidden_filters);
  CHECK(p.target_bias == before.target_bias);
  CHECK(p.hidden_bias == before.hidden_bias);
  CHECK(oracle::pack(velocity).norm() == 0.0);

  PairBatch empty;
  empty.sources.resize(0, 4);
  empty.targets.resize(0, 4);
  CHECK_THROWS_AS(cd_update(p, empty, cfg, rng, velocity), std::invalid_argument);
}

TEST_CASE("contrastive divergence learns 1-D circular shifts") {
  const PairBatch pairs = one_dim_shift_pairs(12, 16, 2, true, 3);
  FgrbmParams p = init_params(16, 16, 8, 16, 0.05, 17);
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 20;
  cfg.learning_rate = 0.02;
  cfg.seed = 19;
  const TrainHistory history = train(p, pairs, cfg);
  REQUIRE(history.size() == 200);
  CHECK(history.back().reconstruction_error <= 0.5 * history.front().reconstruction_error);
}

TEST_CASE("identity codes reconstruct held-out signals after self-pair training") {
  const PairBatch pairs = one_dim_shift_pairs(60, 16, 1, true, 103);
  FgrbmParams p = init_params(16, 16, 16, 32, 0.05, 104);
  TrainConfig cfg;
  cfg.epochs = 400;
  cfg.batch_size = 50;
  cfg.learning_rate = 0.02;
  cfg.weight_decay = 0.0;
  cfg.seed = 105;
  train(p, pairs, cfg);

  const PairBatch held_out = one_dim_shift_pairs(20, 16, 0, true, 106);
  int ok = 0;
  for (int r = 0; r < held_out.size(); ++r) {
    const VectorXd x = held_out.sources.row(r).transpose();
    const VectorXd recon = transform(p, x, infer_hidden(p, x, x));
    if ((recon - x).norm() <= 0.25 * x.norm()) ++ok;
  }
  CHECK(ok >= static_cast<int>(0.9 * held_out.size()));
}

TEST_CASE("train with zero epochs is a no-op") {
  FgrbmParams p = init_params(4, 4, 2, 4, 0.01, 61);
  const FgrbmParams before = p;
  PairBatch pairs;
  pairs.sources = MatrixXd::Random(3, 4);
  pairs.targets = MatrixXd::Random(3, 4);
  TrainConfig cfg;
  cfg.epochs = 0;
  const TrainHistory history = train(p, pairs, cfg);
  CHECK(history.empty());
  CHECK(p.source_filters == before.source_filters);
  CHECK(p.target_bias == before.target_bias);
}

TEST_CASE("training is bit-reproducible and emits identical checkpoints") {
  const PairBatch pairs = one_dim_shift_pairs(4, 8, 1, true, 71);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.seed = 72;

  const auto out_dir = std::filesystem::temp_directory_path() / "tdist_fgrbm_test";
  std::filesystem::create_directories(out_dir);
  const std::string path_a = (out_dir / "run_a.fgrbm").string();
  const std::string path_b = (out_dir / "run_b.fgrbm").string();

  FgrbmParams pa = init_params(8, 8, 4, 8, 0.01, 73);
  FgrbmParams pb = init_params(8, 8, 4, 8, 0.01, 73);
  const TrainHistory ha = train(pa, pairs, cfg, path_a);
  const TrainHistory hb = train(pb, pairs, cfg, path_b);

  CHECK(file_bytes(path_a) == file_bytes(path_b));
  REQUIRE(ha.size() == hb.size());
  for (std::size_t e = 0; e < ha.size(); ++e) {
    CHECK(ha[e].reconstruction_error == hb[e].reconstruction_error);
    CHECK(ha[e].mean_free_energy == hb[e].mean_free_energy);
  }
}

TEST_CASE("checkpoint format and round trip") {
  FgrbmParams p = zero_weight_model(2, 3, 2, 4);
  p.source_filters(0, 0) = 0.5;
  p.source_filters(1, 3) = -0.25;
  p.target_filters(2, 1) = 1.5;
  p.hidden_filters(1, 2) = -2.0;
  p.target_bias << 0.125, -0.375, 1.0;
  p.hidden_bias << 4.0, -0.5;

  const auto out_dir = std::filesystem::temp_directory_path() / "tdist_fgrbm_test";
  std::filesystem::create_directories(out_dir);
  const std::string path = (out_dir / "format.fgrbm").string();
  save_checkpoint(p, path);

  const std::string bytes = file_bytes(path);
  REQUIRE(bytes.size() == 4 + 4 + 16 + 4u * (2 * 4 + 3 * 4 + 2 * 4 + 3 + 2));
  CHECK(bytes.substr(0, 4) == "FGRB");
  // version and dims, little endian
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[8]) == 2);   // I
  CHECK(static_cast<unsigned char>(bytes[12]) == 3);  // J
  CHECK(static_cast<unsigned char>(bytes[16]) == 2);  // M
  CHECK(static_cast<unsigned char>(bytes[20]) == 4);  // N

  const FgrbmParams q = load_checkpoint(path);
  CHECK(q.source_filters == p.source_filters);  // all values are exactly f32-representable
  CHECK(q.target_filters == p.target_filters);
  CHECK(q.hidden_filters == p.hidden_filters);
  CHECK(q.target_bias == p.target_bias);
  CHECK(q.hidden_bias == p.hidden_bias);

  CHECK_THROWS(load_checkpoint((out_dir / "does_not_exist.fgrbm").string()));
}
