#include "rgsmc/oracle.hpp"

#include <cmath>
#include <functional>
#include <iomanip>
#include <ostream>

namespace rgsmc {
namespace {

void check_size(const TargetSpec& spec, std::size_t max_states) {
  double states = 1.0;
  for (std::size_t t = 0; t < spec.horizon; ++t) {
    states *= static_cast<double>(spec.vocab().size());
    if (states > static_cast<double>(max_states)) {
      throw InstanceTooLarge("enumeration needs more than " + std::to_string(max_states) +
                             " states (|V|^T)");
    }
  }
}

// Visits every canonical length-T sequence: after eos only eos follows.
void for_each_sequence(const TargetSpec& spec, const std::function<void(const Sequence&)>& fn) {
  const std::size_t V = spec.vocab().size();
  const Token eos = spec.vocab().eos();
  Sequence cur;
  cur.reserve(spec.horizon);
  std::function<void(bool)> rec = [&](bool done) {
    if (cur.size() == spec.horizon) {
      fn(cur);
      return;
    }
    if (done) {
      cur.push_back(eos);
      rec(true);
      cur.pop_back();
      return;
    }
    for (std::size_t v = 0; v < V; ++v) {
      cur.push_back(static_cast<Token>(v));
      rec(static_cast<Token>(v) == eos);
      cur.pop_back();
    }
  };
  rec(false);
}

// log sum over the next `depth` tokens of prod m_s psi_s.
double suffix_log_sum(const TargetSpec& spec, Sequence& prefix, std::size_t depth) {
  if (depth == 0 || prefix.size() >= spec.horizon || is_terminated(spec.vocab(), prefix)) return 0.0;
  const std::vector<double> lm = log_transition_row(spec, prefix);
  std::vector<double> terms;
  terms.reserve(lm.size());
  for (std::size_t v = 0; v < lm.size(); ++v) {
    if (lm[v] == kNegInf) continue;
    prefix.push_back(static_cast<Token>(v));
    const double lp = log_potential(spec, prefix);
    if (lp != kNegInf) {
      const double rest = suffix_log_sum(spec, prefix, depth - 1);
      if (rest != kNegInf) terms.push_back(lm[v] + lp + rest);
    }
    prefix.pop_back();
  }
  return log_sum_exp(terms);
}

std::size_t depth_for(const TargetSpec& spec, std::size_t t, std::optional<std::size_t> horizon_blocks) {
  const std::size_t remaining = spec.horizon > t ? spec.horizon - t : 0;
  if (!horizon_blocks) return remaining;
  return std::min(remaining, *horizon_blocks * spec.block_size);
}

// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace

SequenceTable EnumeratedTarget::probabilities() const {
  SequenceTable out;
  for (const auto& [seq, lm] : log_masses) out.emplace(seq, std::exp(lm - log_Z));
  return out;
}

EnumeratedTarget enumerate(const TargetSpec& spec, std::size_t max_states) {
  spec.validate();
  check_size(spec, max_states);
  EnumeratedTarget out;
  out.spec = spec;
  std::vector<double> all;
  for_each_sequence(spec, [&](const Sequence& seq) {
    const double lm = unified_log_density(spec, seq);
    out.log_masses.emplace(seq, lm);
    all.push_back(lm);
  });
  out.log_Z = log_sum_exp(all);
  if (out.log_Z == kNegInf) throw DegenerateDistribution("target has zero total mass");
  return out;
}

SequenceTable oracle_marginal(const EnumeratedTarget& target, std::size_t t) {
  if (t > target.spec.horizon) throw InvalidParameter("marginal length exceeds horizon");
  std::map<Sequence, std::vector<double>> groups;
  for (const auto& [seq, lm] : target.log_masses) {
    groups[Sequence(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(t))].push_back(lm);
  }
  SequenceTable out;
  for (const auto& [prefix, lms] : groups) {
    out.emplace(prefix, std::exp(log_sum_exp(lms) - target.log_Z));
  }
  return out;
}

double oracle_log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                            std::optional<std::size_t> horizon_blocks) {
  Sequence work(prefix.begin(), prefix.end());
  return suffix_log_sum(spec, work, depth_for(spec, work.size(), horizon_blocks));
}

double oracle_lookahead(const EnumeratedTarget& target, std::span<const Token> prefix,
                        std::optional<std::size_t> horizon_blocks) {
  return std::exp(oracle_log_lookahead(target.spec, prefix, horizon_blocks));
}

std::size_t ExactLookahead::Hash::operator()(const Sequence& s) const {
  std::uint64_t h = 0x51ED27u;
  for (Token t : s) h = mix64(h, static_cast<std::uint64_t>(t));
  return static_cast<std::size_t>(h);
}

ExactLookahead::ExactLookahead(const TargetSpec& spec, std::optional<std::size_t> horizon_blocks,
                               std::size_t max_states)
    : family_(spec.family), alpha_(spec.alpha) {
  spec.validate();
  check_size(spec, max_states);
  const std::size_t V = spec.vocab().size();
  // Post-order walk over canonical prefixes shorter than T. With the full
  // horizon each value reuses its children's; truncated values are summed
  // afresh.
  Sequence cur;
  std::function<double()> visit = [&]() -> double {
    double value = 0.0;
    if (cur.size() < spec.horizon && !is_terminated(spec.vocab(), cur)) {
      if (horizon_blocks) {
        value = suffix_log_sum(spec, cur, depth_for(spec, cur.size(), horizon_blocks));
        for (std::size_t v = 0; v < V; ++v) {
          cur.push_back(static_cast<Token>(v));
          visit();
          cur.pop_back();
        }
      } else {
        const std::vector<double> lm = log_transition_row(spec, cur);
        std::vector<double> terms;
        for (std::size_t v = 0; v < V; ++v) {
          cur.push_back(static_cast<Token>(v));
          const double child = visit();
          if (lm[v] != kNegInf) {
            const double lp = log_potential(spec, cur);
            if (lp != kNegInf && child != kNegInf) terms.push_back(lm[v] + lp + child);
          }
          cur.pop_back();
        }
        value = log_sum_exp(terms);
      }
    }
    table_.emplace(cur, value);
    return value;
  };
  visit();
}

double ExactLookahead::log_value(std::span<const Token> prefix) const {
  auto it = table_.find(Sequence(prefix.begin(), prefix.end()));
  if (it == table_.end()) {
    // Non-canonical (tokens after eos) or longer than T: nothing remains.
    return 0.0;
  }
  return it->second;
}

LookaheadValue ExactLookahead::log_lookahead(const TargetSpec& spec, std::span<const Token> prefix,
                                             CounterRng&) const {
  if (spec.family != family_ || spec.alpha != alpha_) {
    throw InvalidParameter("exact lookahead was built for a different target");
  }
  return {log_value(prefix), 0};
}

MseReport oracle_mse_weights(const TargetSpec& spec, double proposal_tau, std::size_t t,
                             std::size_t max_states) {
  spec.validate();
  check_size(spec, max_states);
  if (t > spec.horizon) throw InvalidParameter("t exceeds horizon");
  if (!(proposal_tau > 0.0)) throw InvalidParameter("proposal temperature must be positive");
  const ExactLookahead lookahead(spec, std::nullopt, max_states);

  struct PrefixStats {
    CompensatedSum r, rw, rw2;
  };
  std::map<Sequence, PrefixStats> by_prefix;
  CompensatedSum mse_prefix, mse_look, excess;

  for_each_sequence(spec, [&](const Sequence& seq) {
    double log_r = 0.0;
    double log_w_prefix = 0.0;
    double log_w_full = 0.0;
    for (std::size_t s = 0; s < seq.size(); ++s) {
      const auto head = std::span<const Token>(seq).first(s);
      const Distribution q = temper(next_token_dist(*spec.model, spec.prompt, head), proposal_tau).dist;
      const double lr = q.log_prob(seq[s]);
      log_r += lr;
      if (log_r == kNegInf) return;  // the proposal never produces this path
      const double lm = log_transition(spec, head, seq[s]);
      const double lp = log_potential(spec, std::span<const Token>(seq).first(s + 1));
      const double inc = (lm == kNegInf || lp == kNegInf) ? kNegInf : lm - lr + lp;
      log_w_full = inc == kNegInf ? kNegInf : log_w_full + inc;
      if (s + 1 == t) log_w_prefix = log_w_full;
    }
    if (t == 0) log_w_prefix = 0.0;
    const auto prefix = std::span<const Token>(seq).first(t);
    const double r = std::exp(log_r);
    const double w_full = std::exp(log_w_full);
    const double w_prefix = std::exp(log_w_prefix);
    const double L = std::exp(lookahead.log_value(prefix));
    mse_prefix.add(r * (w_full - w_prefix) * (w_full - w_prefix));
    mse_look.add(r * (w_full - w_prefix * L) * (w_full - w_prefix * L));
    excess.add(r * w_prefix * w_prefix * (L - 1.0) * (L - 1.0));
    auto& ps = by_prefix[Sequence(prefix.begin(), prefix.end())];
    ps.r.add(r);
    ps.rw.add(r * w_full);
    ps.rw2.add(r * w_full * w_full);
  });

  MseReport rep;
  rep.mse_prefix = mse_prefix.value();
  rep.mse_lookahead = mse_look.value();
  rep.excess_prefix = excess.value();
  CompensatedSum ecv;
  for (const auto& [prefix, ps] : by_prefix) {
    const double r = ps.r.value();
    if (r <= 0.0) continue;
    ecv.add(ps.rw2.value() - ps.rw.value() * ps.rw.value() / r);
  }
  rep.expected_conditional_var = ecv.value();
  const double scale = std::max(rep.mse_prefix, 1e-300);
  rep.identity_residual = std::abs(rep.mse_prefix - rep.mse_lookahead - rep.excess_prefix) / scale;
  return rep;
}

double tv_distance(const SequenceTable& a, const SequenceTable& b) {
  std::optional<std::size_t> len;
  auto check = [&](const Sequence& s) {
    if (!len) len = s.size();
    if (s.size() != *len) throw InvalidParameter("tv_distance: sequences of different lengths");
  };
  double acc = 0.0;
  for (const auto& [s, pa] : a) {
    check(s);
    auto it = b.find(s);
    acc += std::abs(pa - (it == b.end() ? 0.0 : it->second));
  }
  for (const auto& [s, pb] : b) {
    check(s);
    if (!a.contains(s)) acc += std::abs(pb);
  }
  return 0.5 * acc;
}

double tv_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidParameter("tv_distance: support mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
  return 0.5 * acc;
}

std::string format_sequence(const Vocabulary& vocab, std::span<const Token> seq) {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += vocab.name(seq[i]);
  }
  return out;
}

void write_oracle_table(const EnumeratedTarget& target, std::ostream& out) {
  const Vocabulary& vocab = target.spec.vocab();
  out << "kind,sequence,mass,probability\n";
  out << std::setprecision(17);
  for (const auto& [seq, lm] : target.log_masses) {
    out << "full," << format_sequence(vocab, seq) << ',' << std::exp(lm) << ','
        << std::exp(lm - target.log_Z) << '\n';
  }
  for (std::size_t t = 1; t < target.spec.horizon; ++t) {
    for (const auto& [prefix, p] : oracle_marginal(target, t)) {
      out << "prefix," << format_sequence(vocab, prefix) << ",," << p << '\n';
    }
  }
}

}  // namespace rgsmc
