#include "belieflab/numkit/stats.hpp"

#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace belieflab::numkit {

double mean(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of an empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_sd(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double sq = 0.0;
  for (double x : xs) sq += (x - m) * (x - m);
  return std::sqrt(sq / static_cast<double>(xs.size() - 1));
}

double sem(std::span<const double> xs) {
  return xs.empty() ? 0.0 : sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
}

TTestResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw std::invalid_argument("t-test needs at least two values per sample");
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  const double va = std::pow(sample_sd(a), 2) / na;
  const double vb = std::pow(sample_sd(b), 2) / nb;
  const double diff = mean(a) - mean(b);
  TTestResult r;
  if (va + vb == 0.0) {
    r.df = na + nb - 2.0;
    if (diff == 0.0) return r;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), diff);
    r.p = 0.0;
    return r;
  }
  r.t = diff / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

}  // namespace belieflab::numkit
