#ifndef TDIST_COMMON_HPP
#define TDIST_COMMON_HPP

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace tdist {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Thrown when an optimization or training step produces a non-finite value.
/// Carries the iteration (and, for batched work, the pair index) it occurred at.
class NumericalFailure : public std::runtime_error {
 public:
  NumericalFailure(const std::string& what, int iteration, int pair_index = -1)
      : std::runtime_error(what), iteration_(iteration), pair_index_(pair_index) {}

  int iteration() const { return iteration_; }
  int pair_index() const { return pair_index_; }

 private:
  int iteration_;
  int pair_index_;
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// log(1 + exp(v)) without overflow for large |v|.
inline double softplus(double v) {
  return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
}

// splitmix64 mixer; used to derive independent per-item RNG streams from one seed
// so parallel loops stay bit-identical to their sequential order.
inline std::uint64_t mix_seed(std::uint64_t v) {
  v += 0x9e3779b97f4a7c15ULL;
  v = (v ^ (v >> 30)) * 0xbf58476d1ce4e5b9ULL;
  v = (v ^ (v >> 27)) * 0x94d049bb133111ebULL;
  return v ^ (v >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace tdist

#endif  // TDIST_COMMON_HPP
