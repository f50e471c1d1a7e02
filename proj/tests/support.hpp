#pragma once

// Test-only reference computations. These deliberately avoid the library's
// target and oracle code: masses are built straight from the model
// conditionals and the raw potential, position by position.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <vector>

#include "rgsmc/model.hpp"
#include "rgsmc/potential.hpp"
#include "rgsmc/target.hpp"

namespace rgsmc::testing {

/// Linear-scale unnormalized mass of every canonical length-T sequence.
inline std::map<Sequence, double> brute_force_masses(const TargetSpec& spec) {
  const Vocabulary& v = spec.vocab();
  const std::size_t T = spec.horizon;
  std::map<Sequence, double> out;
  std::function<void(Sequence&, double)> rec = [&](Sequence& seq, double mass) {
    if (seq.size() == T) {
      out[seq] = mass;
      return;
    }
    if (!seq.empty() && seq.back() == v.eos()) {
      seq.push_back(v.eos());
      rec(seq, mass);
      seq.pop_back();
      return;
    }
    const Distribution d = spec.model->conditional(spec.prompt, seq);
    double norm = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) norm += std::pow(d.prob(static_cast<Token>(i)), spec.alpha);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const Token tok = static_cast<Token>(i);
      double m = std::pow(d.prob(tok), spec.alpha);
      if (spec.family == Family::kTempered) m /= norm;
      if (m == 0.0) continue;
      seq.push_back(tok);
      const double psi = std::exp(spec.potential->log_value(seq, spec.prompt, T));
      if (psi > 0.0) rec(seq, mass * m * psi);
      seq.pop_back();
    }
  };
  Sequence seq;
  rec(seq, 1.0);
  return out;
}

/// Linear-scale prefix mass prod_{s<=t} m_s psi_s for a canonical prefix.
inline double brute_prefix_gamma(const TargetSpec& spec, const Sequence& prefix) {
  const Vocabulary& v = spec.vocab();
  double g = 1.0;
  Sequence pre;
  for (Token tok : prefix) {
    if (!pre.empty() && pre.back() == v.eos()) {
      pre.push_back(tok);
      continue;
    }
    const Distribution d = spec.model->conditional(spec.prompt, pre);
    double norm = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) norm += std::pow(d.prob(static_cast<Token>(i)), spec.alpha);
    double m = std::pow(d.prob(tok), spec.alpha);
    if (spec.family == Family::kTempered) m /= norm;
    pre.push_back(tok);
    g *= m * std::exp(spec.potential->log_value(pre, spec.prompt, spec.horizon));
  }
  return g;
}

/// Full-horizon lookahead: completions' mass divided by the prefix mass.
inline double brute_lookahead(const TargetSpec& spec, const std::map<Sequence, double>& masses,
                              const Sequence& prefix) {
  double num = 0.0;
  for (const auto& [s, w] : masses) {
    if (std::equal(prefix.begin(), prefix.end(), s.begin())) num += w;
  }
  return num / brute_prefix_gamma(spec, prefix);
}

inline double total(const std::map<Sequence, double>& m) {
  double z = 0.0;
  for (const auto& [s, w] : m) z += w;
  return z;
}

inline std::map<Sequence, double> normalized(const std::map<Sequence, double>& m) {
  const double z = total(m);
  std::map<Sequence, double> out;
  for (const auto& [s, w] : m) out[s] = w / z;
  return out;
}

/// Mean and standard error of a sample.
struct Moments {
  double mean = 0.0;
  double sem = 0.0;
};

inline Moments moments(const std::vector<double>& xs) {
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  double v = 0.0;
  for (double x : xs) v += (x - m) * (x - m);
  v /= static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(v / static_cast<double>(xs.size()))};
}

}  // namespace rgsmc::testing
