#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "easr/tape.hpp"
#include "easr/tensor.hpp"

namespace easr {

// Target cannot be aligned in the given number of frames. Deliberately a
// distinct type (not a -inf loss) so trainers can skip and count such
// utterances.
struct UnalignableError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

namespace detail {

inline double logsumexp2(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double logsumexp3(double a, double b, double c) {
  return logsumexp2(logsumexp2(a, b), c);
}

}  // namespace detail

// Minimum frame count that can align `target`: one frame per label plus a
// separating blank frame per adjacent repeat.
inline std::size_t ctc_min_frames(std::span<const int> target) {
  std::size_t repeats = 0;
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++repeats;
  }
  return target.size() + repeats;
}

// Blank-augmented label lattice with inclusive forward/backward scores:
// log_alpha(t,s) and log_beta(t,s) both include the emission at frame t, so
// for every t, logsumexp over s of (alpha + beta - emission) recovers the
// total log-likelihood.
struct AlignmentLattice {
  std::vector<int> expanded;  // (blank, y1, blank, ..., yL, blank), 2L+1
  Tensor log_alpha;           // T x (2L+1)
  Tensor log_beta;            // T x (2L+1)
  double log_prob = kNegInf;

  void dump(std::ostream& os) const {
    os << "t\tstate\tlabel\tlog_alpha\tlog_beta\n";
    for (std::size_t t = 0; t < log_alpha.rows(); ++t) {
      for (std::size_t s = 0; s < log_alpha.cols(); ++s) {
        os << t << '\t' << s << '\t' << expanded[s] << '\t' << log_alpha.at(t, s)
           << '\t' << log_beta.at(t, s) << '\n';
      }
    }
  }
};

namespace detail {

inline void validate_ctc_inputs(const Tensor& logp, std::span<const int> target,
                                int blank) {
  if (logp.rank() != 2) {
    throw ShapeError("ctc: posteriors must be rank 2, got " + logp.shape_str());
  }
  if (blank != static_cast<int>(logp.cols()) - 1) {
    throw std::invalid_argument("ctc: blank must be the last class, got " +
                                std::to_string(blank) + " of " +
                                std::to_string(logp.cols()));
  }
  for (int y : target) {
    if (y < 0 || y >= blank) {
      throw std::invalid_argument("ctc: target symbol " + std::to_string(y) +
                                  " outside [0, " + std::to_string(blank) +
                                  ")");
    }
  }
  if (logp.rows() < ctc_min_frames(target)) {
    throw UnalignableError(
        "ctc: target of length " + std::to_string(target.size()) + " needs " +
        std::to_string(ctc_min_frames(target)) + " frames, got " +
        std::to_string(logp.rows()));
  }
}

}  // namespace detail

// Forward/backward scores for the marginal likelihood of `target` under
// frame log-posteriors `logp` (T x (V+1), blank last).
inline AlignmentLattice ctc_forward_backward(const Tensor& logp,
                                             std::span<const int> target,
                                             int blank) {
  detail::validate_ctc_inputs(logp, target, blank);
  const std::size_t T = logp.rows();
  const std::size_t L = target.size();
  const std::size_t S = 2 * L + 1;

  AlignmentLattice lat;
  lat.expanded.resize(S);
  for (std::size_t s = 0; s < S; ++s) {
    lat.expanded[s] = s % 2 == 0 ? blank : target[s / 2];
  }
  lat.log_alpha = Tensor::full(T, S, kNegInf);
  lat.log_beta = Tensor::full(T, S, kNegInf);

  auto em = [&](std::size_t t, std::size_t s) {
    return logp.at(t, static_cast<std::size_t>(lat.expanded[s]));
  };
  // A skip transition s-2 -> s is legal when s is a label state and differs
  // from the label two states back.
  auto can_skip = [&](std::size_t s) {
    return s >= 2 && lat.expanded[s] != blank &&
           lat.expanded[s] != lat.expanded[s - 2];
  };

  lat.log_alpha.at(0, 0) = em(0, 0);
  if (S > 1) lat.log_alpha.at(0, 1) = em(0, 1);
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = lat.log_alpha.at(t - 1, s);
      if (s >= 1) acc = detail::logsumexp2(acc, lat.log_alpha.at(t - 1, s - 1));
      if (can_skip(s)) {
        acc = detail::logsumexp2(acc, lat.log_alpha.at(t - 1, s - 2));
      }
      lat.log_alpha.at(t, s) = acc == kNegInf ? kNegInf : acc + em(t, s);
    }
  }

  lat.log_beta.at(T - 1, S - 1) = em(T - 1, S - 1);
  if (S > 1) lat.log_beta.at(T - 1, S - 2) = em(T - 1, S - 2);
  for (std::size_t ti = T - 1; ti-- > 0;) {
    for (std::size_t s = 0; s < S; ++s) {
      double acc = lat.log_beta.at(ti + 1, s);
      if (s + 1 < S) acc = detail::logsumexp2(acc, lat.log_beta.at(ti + 1, s + 1));
      if (s + 2 < S && can_skip(s + 2)) {
        acc = detail::logsumexp2(acc, lat.log_beta.at(ti + 1, s + 2));
      }
      lat.log_beta.at(ti, s) = acc == kNegInf ? kNegInf : acc + em(ti, s);
    }
  }

  double total = lat.log_alpha.at(T - 1, S - 1);
  if (S > 1) total = detail::logsumexp2(total, lat.log_alpha.at(T - 1, S - 2));
  lat.log_prob = total;
  return lat;
}

// Negative log marginal likelihood, Graves forward recursion in log space.
inline double ctc_loss(const Tensor& logp, std::span<const int> target,
                       int blank, AlignmentLattice* lattice_out = nullptr) {
  AlignmentLattice lat = ctc_forward_backward(logp, target, blank);
  const double loss = -lat.log_prob;
  if (lattice_out != nullptr) *lattice_out = std::move(lat);
  return loss;
}

// Posterior symbol occupancy gamma(t, k): probability that frame t is
// aligned to symbol k given the target. Rows sum to 1.
inline Tensor ctc_occupancy(const AlignmentLattice& lat, const Tensor& logp) {
  const std::size_t T = logp.rows();
  const std::size_t S = lat.expanded.size();
  if (lat.log_alpha.rows() != T) {
    throw ShapeError("ctc_occupancy: lattice built for " +
                     std::to_string(lat.log_alpha.rows()) + " frames, got " +
                     logp.shape_str());
  }
  Tensor gamma(std::vector<std::size_t>{T, logp.cols()});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      const int k = lat.expanded[s];
      const double a = lat.log_alpha.at(t, s);
      const double b = lat.log_beta.at(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      const double term =
          a + b - logp.at(t, static_cast<std::size_t>(k)) - lat.log_prob;
      gamma.at(t, static_cast<std::size_t>(k)) += std::exp(term);
    }
  }
  return gamma;
}

// Gradient of ctc_loss w.r.t. the frame log-probabilities: -gamma.
inline Tensor ctc_grad(const AlignmentLattice& lat, const Tensor& logp) {
  Tensor g = ctc_occupancy(lat, logp);
  for (auto& v : g.values()) v = -v;
  return g;
}

// Tape operation for the CTC loss. The pull scales -gamma by the upstream
// scalar gradient.
inline Var ctc_loss_op(const Var& logp, std::span<const int> target, int blank) {
  AlignmentLattice lat = ctc_forward_backward(logp.value(), target, blank);
  auto gamma = std::make_shared<Tensor>(ctc_occupancy(lat, logp.value()));
  const double loss = -lat.log_prob;
  int ip = logp.index;
  return logp.tape->emplace(Tensor({1, 1}, {loss}),
                            [ip, gamma](Tape& t, const Tensor& g) {
                              Tensor dp = *gamma;
                              const double up = g.at(0);
                              for (auto& v : dp.values()) v *= -up;
                              t.accumulate(ip, dp);
                            });
}

// Literal realization of the marginalization: enumerate every frame-level
// path, collapse (merge repeats, then drop blanks), and sum the
// probabilities of paths that collapse to `target`. Exponential; guarded to
// (V+1)^T <= 10^6. Returns +inf when no path collapses to the target.
inline double brute_force_ctc(const Tensor& logp, std::span<const int> target,
                              int blank) {
  if (logp.rank() != 2) {
    throw ShapeError("brute_force_ctc: posteriors must be rank 2");
  }
  const std::size_t T = logp.rows();
  const std::size_t C = logp.cols();
  double paths = std::pow(static_cast<double>(C), static_cast<double>(T));
  if (paths > 1e6) {
    throw std::invalid_argument("brute_force_ctc: instance too large (" +
                                std::to_string(paths) + " paths)");
  }
  std::vector<std::size_t> path(T, 0);
  double total = 0.0;
  while (true) {
    // Collapse: merge adjacent repeats, then remove blanks.
    std::vector<int> collapsed;
    for (std::size_t t = 0; t < T; ++t) {
      const int sym = static_cast<int>(path[t]);
      if (t > 0 && path[t] == path[t - 1]) continue;
      if (sym == blank) continue;
      collapsed.push_back(sym);
    }
    if (collapsed.size() == target.size() &&
        std::equal(collapsed.begin(), collapsed.end(), target.begin())) {
      double lp = 0.0;
      for (std::size_t t = 0; t < T; ++t) lp += logp.at(t, path[t]);
      total += std::exp(lp);
    }
    // Odometer increment.
    std::size_t pos = 0;
    while (pos < T && ++path[pos] == C) {
      path[pos] = 0;
      ++pos;
    }
    if (pos == T) break;
  }
  return -std::log(total);
}

// Best-path decode: per-frame argmax, collapse repeats, strip blanks.
inline std::vector<int> greedy_collapse(const Tensor& logp, int blank) {
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < logp.rows(); ++t) {
    int best = 0;
    for (std::size_t k = 1; k < logp.cols(); ++k) {
      if (logp.at(t, k) > logp.at(t, static_cast<std::size_t>(best))) {
        best = static_cast<int>(k);
      }
    }
    if (best != prev && best != blank) out.push_back(best);
    prev = best;
  }
  return out;
}

}  // namespace easr
