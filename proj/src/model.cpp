#include "rgsmc/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

namespace rgsmc {

Vocabulary::Vocabulary(std::vector<std::string> names, Token eos)
    : names_(std::move(names)), eos_(eos) {
  if (names_.size() < 2) throw InvalidParameter("vocabulary needs at least 2 tokens");
  if (!contains(eos_)) throw InvalidParameter("eos is not a member of the vocabulary");
  std::set<std::string> seen;
  for (const auto& n : names_) {
    if (!seen.insert(n).second) throw InvalidParameter("duplicate token name '" + n + "'");
  }
}

std::optional<Token> Vocabulary::find(const std::string& name) const {
  auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) return std::nullopt;
  return static_cast<Token>(it - names_.begin());
}

Distribution Distribution::point_mass(std::size_t vocab_size, Token t) {
  Distribution d{std::vector<double>(vocab_size, kNegInf)};
  d.log_probs.at(static_cast<std::size_t>(t)) = 0.0;
  return d;
}

Distribution Distribution::uniform(std::size_t vocab_size) {
  return Distribution{std::vector<double>(vocab_size, -std::log(static_cast<double>(vocab_size)))};
}

Distribution Distribution::from_probs(std::span<const double> probs) {
  Distribution d;
  d.log_probs.reserve(probs.size());
  for (double p : probs) d.log_probs.push_back(p > 0.0 ? std::log(p) : kNegInf);
  return d;
}

TabularModel::TabularModel(Vocabulary vocab, std::size_t order,
                           std::map<Context, Distribution> table,
                           std::optional<Distribution> default_row)
    : vocab_(std::move(vocab)),
      order_(order),
      table_(std::move(table)),
      default_(std::move(default_row)) {
  auto check = [&](const Distribution& d) {
    if (d.size() != vocab_.size()) throw InvalidParameter("row size does not match vocabulary");
    if (std::abs(log_sum_exp(d.log_probs)) > 1e-9) {
      throw InvalidParameter("row does not sum to 1");
    }
  };
  for (const auto& [ctx, row] : table_) {
    if (ctx.tokens.size() > order_) throw InvalidParameter("context longer than model order");
    for (Token t : ctx.tokens) {
      if (!vocab_.contains(t)) throw InvalidToken("context token out of range");
    }
    check(row);
  }
  if (default_) check(*default_);
}

Distribution TabularModel::conditional(const Prompt& prompt,
                                       std::span<const Token> prefix) const {
  const std::size_t n = std::min(order_, prefix.size());
  Sequence ctx(prefix.end() - static_cast<std::ptrdiff_t>(n), prefix.end());
  if (auto it = table_.find(Context{prompt, ctx}); it != table_.end()) return it->second;
  if (auto it = table_.find(Context{std::nullopt, ctx}); it != table_.end()) return it->second;
  if (default_) return *default_;
  throw InvalidParameter("no table row for context and no default row");
}

Distribution next_token_dist(const AutoregressiveModel& model, const Prompt& prompt,
                             std::span<const Token> prefix) {
  const Vocabulary& vocab = model.vocab();
  for (Token t : prefix) {
    if (!vocab.contains(t)) throw InvalidToken("token id " + std::to_string(t) + " not in vocabulary");
    if (t == vocab.eos()) return Distribution::point_mass(vocab.size(), vocab.eos());
  }
  return model.conditional(prompt, prefix);
}

Tempered temper(const Distribution& dist, double alpha) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    throw InvalidParameter("temper: alpha must be a positive finite number");
  }
  Tempered out;
  out.dist.log_probs.resize(dist.size());
  for (std::size_t i = 0; i < dist.size(); ++i) {
    out.dist.log_probs[i] = alpha * dist.log_probs[i];
  }
  const double log_z = log_sum_exp(out.dist.log_probs);
  if (log_z == kNegInf) throw DegenerateDistribution("temper: distribution has no mass");
  for (double& lp : out.dist.log_probs) lp -= log_z;
  out.log_normalizer = log_z;
  return out;
}

Token sample_token(const Distribution& dist, CounterRng& rng) {
  const double u = rng.uniform();
  double cdf = 0.0;
  Token last_positive = -1;
  for (std::size_t i = 0; i < dist.size(); ++i) {
    if (dist.log_probs[i] == kNegInf) continue;
    last_positive = static_cast<Token>(i);
    cdf += std::exp(dist.log_probs[i]);
    if (u < cdf) return last_positive;
  }
  if (last_positive < 0) throw DegenerateDistribution("sample_token: distribution has no mass");
  // u landed in the rounding gap above the accumulated CDF.
  return last_positive;
}

double SampledBlocks::total_log_prob() const {
  double s = 0.0;
  for (double lp : log_probs) s += lp;
  return s;
}

SampledBlocks sample_blocks(const AutoregressiveModel& model, const Prompt& prompt,
                            std::span<const Token> prefix, std::size_t blocks,
                            std::size_t block_size, double tau, CounterRng& rng) {
  if (!(tau > 0.0)) throw InvalidParameter("sample_blocks: tau must be positive");
  if (blocks < 1 || block_size < 1) throw InvalidParameter("sample_blocks: h and B must be >= 1");
  const Token eos = model.vocab().eos();
  SampledBlocks out;
  if (is_terminated(model.vocab(), prefix)) return out;
  Sequence work(prefix.begin(), prefix.end());
  const std::size_t budget = blocks * block_size;
  out.tokens.reserve(budget);
  out.log_probs.reserve(budget);
  for (std::size_t i = 0; i < budget; ++i) {
    const Tempered q = temper(next_token_dist(model, prompt, work), tau);
    const Token tok = sample_token(q.dist, rng);
    out.tokens.push_back(tok);
    out.log_probs.push_back(q.dist.log_prob(tok));
    if (tok == eos) break;
    work.push_back(tok);
  }
  return out;
}

double sequence_logprob(const AutoregressiveModel& model, const Prompt& prompt,
                        std::span<const Token> seq) {
  double total = 0.0;
  for (Token tok : seq) {
    if (!model.vocab().contains(tok)) throw InvalidToken("token id " + std::to_string(tok) + " not in vocabulary");
  }
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const Distribution d = model.conditional(prompt, seq.first(t));
    total += d.log_prob(seq[t]);
    if (seq[t] == model.vocab().eos()) break;
  }
  return total;
}

bool is_terminated(const Vocabulary& vocab, std::span<const Token> seq) {
  return std::find(seq.begin(), seq.end(), vocab.eos()) != seq.end();
}

Sequence pad_with_eos(const Vocabulary& vocab, std::span<const Token> seq, std::size_t length) {
  Sequence out(seq.begin(), seq.end());
  if (is_terminated(vocab, seq) && out.size() < length) out.resize(length, vocab.eos());
  return out;
}

namespace {

Distribution random_row(std::size_t non_eos, double concentration, double eos_mass,
                        CounterRng& rng) {
  std::vector<double> logits(non_eos);
  for (double& l : logits) {
    // Box-Muller; two uniforms per logit keeps the stream layout simple.
    const double u1 = 1.0 - rng.uniform();
    const double u2 = rng.uniform();
    l = concentration * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
  const double lz = log_sum_exp(logits);
  std::vector<double> probs(non_eos + 1);
  for (std::size_t i = 0; i < non_eos; ++i) probs[i] = (1.0 - eos_mass) * std::exp(logits[i] - lz);
  probs[non_eos] = eos_mass;
  Distribution d = Distribution::from_probs(probs);
  // Renormalize in log space so the row sums to 1 to working precision.
  const double norm = log_sum_exp(d.log_probs);
  for (double& lp : d.log_probs) lp -= norm;
  return d;
}

void all_contexts(std::size_t vocab_size, std::size_t max_len, Sequence& cur,
                  std::vector<Sequence>& out) {
  out.push_back(cur);
  if (cur.size() == max_len) return;
  for (std::size_t v = 0; v < vocab_size; ++v) {
    cur.push_back(static_cast<Token>(v));
    all_contexts(vocab_size, max_len, cur, out);
    cur.pop_back();
  }
}

}  // namespace

std::shared_ptr<TabularModel> random_tabular_model(const RandomModelOptions& options,
                                                   std::uint64_t seed) {
  if (options.non_eos_tokens < 1) throw InvalidParameter("need at least one non-eos token");
  if (options.eos_mass < 0.0 || options.eos_mass >= 1.0) {
    throw InvalidParameter("eos_mass must lie in [0, 1)");
  }
  std::vector<std::string> names;
  for (std::size_t i = 0; i < options.non_eos_tokens; ++i) names.push_back(std::to_string(i));
  names.push_back("eos");
  const Token eos = static_cast<Token>(options.non_eos_tokens);
  Vocabulary vocab(names, eos);

  // Contexts never contain eos: the absorbing extension handles those.
  std::vector<Sequence> contexts;
  Sequence cur;
  all_contexts(options.non_eos_tokens, options.order, cur, contexts);
  CounterRng rng(seed, Purpose::kFixture);
  std::map<TabularModel::Context, Distribution> table;
  for (const auto& ctx : contexts) {
    table.emplace(TabularModel::Context{std::nullopt, ctx},
                  random_row(options.non_eos_tokens, options.concentration, options.eos_mass, rng));
  }
  return std::make_shared<TabularModel>(std::move(vocab), options.order, std::move(table),
                                        std::nullopt);
}

}  // namespace rgsmc
