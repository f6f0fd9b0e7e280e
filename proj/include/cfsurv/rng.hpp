#pragma once

#include <cstdint>
#include <random>

#include "cfsurv/dist.hpp"

namespace cfsurv {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

// One independent random stream per (master seed, stream id) pair.  Work
// units (replicates, bootstrap draws) each own a stream, so results do not
// depend on scheduling order.  Every variate is produced by inverting its
// CDF on a single uniform, which keeps draws reproducible across platforms
// that agree on libm.
class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
      : gen_(mix(master_seed, stream_id)) {}

  // Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1.0p-53;
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double normal() { return norm_quantile(uniform()); }
  double normal(double mu, double sd) { return mu + sd * normal(); }

  double logistic() {
    const double u = uniform();
    return std::log(u / (1.0 - u));
  }

  // Standard (max) Gumbel.
  double gumbel() { return -std::log(-std::log(uniform())); }

  double chisq3() {
    double s = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double z = normal();
      s += z * z;
    }
    return s;
  }

  bool bernoulli(double p) { return uniform() < p; }

 private:
  static std::uint64_t mix(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t s = master;
    const std::uint64_t a = detail::splitmix64(s);
    s = a ^ (0x9e3779b97f4a7c15ULL * (stream + 1));
    return detail::splitmix64(s);
  }

  std::mt19937_64 gen_;
};

}  // namespace cfsurv
