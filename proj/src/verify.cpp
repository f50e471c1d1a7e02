#include "rgsmc/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <ostream>

#include "rgsmc/checks.hpp"
#include "rgsmc/model_io.hpp"

namespace rgsmc {
namespace {

Fixture file_fixture(const std::filesystem::path& path, std::size_t horizon, std::uint64_t seed) {
  Fixture f;
  f.name = path.filename().string();
  try {
    f.model = load_tabular_model(path.string());
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("model '") + path.string() + "': " + e.what());
  }
  f.horizon = horizon;
  const Vocabulary& v = f.model->vocab();
  CounterRng rng(seed, Purpose::kFixture, 2);
  std::vector<StepScore::Rule> rules;
  for (std::size_t pos = 1; pos <= horizon; ++pos) {
    for (std::size_t tok = 0; tok < v.size(); ++tok) {
      if (static_cast<Token>(tok) == v.eos()) continue;
      rules.push_back({static_cast<Token>(tok), pos, std::log(2.0) * (2.0 * rng.uniform() - 1.0)});
    }
  }
  f.potential = std::make_shared<StepScore>(std::move(rules));
  return f;
}

class Runner {
 public:
  Runner(const VerifyOptions& opts, std::ostream& log) : opts_(opts), log_(log) {}

  void check(const std::string& suite, const std::string& name, double measured,
             const std::string& relation, double tolerance) {
    VerifyRow r{suite, name, measured, relation, tolerance, false};
    r.passed = relation == "<=" ? measured <= tolerance : measured >= tolerance;
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e %s %.3e", measured, relation.c_str(), tolerance);
    log_ << (r.passed ? "ok    " : "FAIL  ") << suite << " / " << name << ": " << buf << std::endl;
    rows_.push_back(std::move(r));
  }

  const VerifyOptions& opts() const { return opts_; }
  std::vector<VerifyRow> take() { return std::move(rows_); }

 private:
  const VerifyOptions& opts_;
  std::ostream& log_;
  std::vector<VerifyRow> rows_;
};

std::string label(const Fixture& f, Family fam, double alpha) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%s %s a=%g", f.name.c_str(), to_string(fam).c_str(), alpha);
  return buf;
}

constexpr Family kFamilies[] = {Family::kTempered, Family::kPowered};
constexpr double kAlphas[] = {1.0, 4.0};

std::vector<Fixture> oracle_fixtures(const VerifyOptions& o) {
  if (o.model) return {file_fixture(*o.model, o.horizon, o.seed)};
  return {worked_fixture(), random_fixture(1, 2, 3, 0.1), random_fixture(2, 2, 4, 0.1)};
}

void oracle_equivalence(Runner& r) {
  for (const Fixture& f : oracle_fixtures(r.opts())) {
    for (Family fam : kFamilies) {
      for (double alpha : kAlphas) {
        for (auto inter : {IntermediateTarget::kPrefix, IntermediateTarget::kLookahead}) {
          SMCConfig cfg;
          cfg.num_particles = 2048;
          cfg.resampling = ResamplingScheme::kMultinomial;
          cfg.intermediate_target = inter;
          cfg.lookahead.mode = LookaheadMode::kExactOracle;
          cfg.seed = r.opts().seed;
          const TvCheck tv = oracle_tv(f.spec(fam, alpha), cfg, 4, r.opts().workers);
          r.check("oracle-equivalence", label(f, fam, alpha) + " " + to_string(inter) + " mean TV",
                  tv.mean_tv, "<=", 0.06);
        }
      }
    }
  }
}

void mse_identity_suite(Runner& r) {
  for (const Fixture& f : oracle_fixtures(r.opts())) {
    for (Family fam : kFamilies) {
      for (double alpha : kAlphas) {
        const TargetSpec spec = f.spec(fam, alpha);
        const IdentityCheck c = mse_identity(spec, alpha);
        r.check("mse-identity", label(f, fam, alpha) + " identity residual", c.max_residual, "<=", 1e-9);
        r.check("mse-identity", label(f, fam, alpha) + " mse gap", c.min_relative_gap, ">=", -1e-12);
      }
    }
  }
}

void exact_marginals(Runner& r) {
  for (const Fixture& f : oracle_fixtures(r.opts())) {
    for (Family fam : kFamilies) {
      for (double alpha : kAlphas) {
        const MarginalCheck c = lookahead_marginals(f.spec(fam, alpha));
        r.check("exact-marginals", label(f, fam, alpha) + " marginal", c.max_marginal_error, "<=", 1e-9);
        r.check("exact-marginals", label(f, fam, alpha) + " conditional", c.max_conditional_error, "<=", 1e-9);
      }
    }
  }
}

void unbiasedness(Runner& r) {
  for (const Fixture& f : oracle_fixtures(r.opts())) {
    for (Family fam : kFamilies) {
      const double alpha = 4.0;
      const TargetSpec spec = f.spec(fam, alpha);
      const EnumeratedTarget e = enumerate(spec);
      const Sequence& first = e.log_masses.begin()->first;
      const Sequence& last = e.log_masses.rbegin()->first;
      for (const Sequence& prefix : {Sequence{}, Sequence(first.begin(), first.begin() + 1),
                                     Sequence(last.begin(), last.begin() + 1)}) {
        for (double tau : {1.0, alpha}) {
          LookaheadConfig lc;
          lc.rollouts = 2;
          lc.horizon_blocks = 1;
          lc.tau_roll = tau;
          const MeanCheck m = lookahead_unbiasedness(spec, prefix, lc, 20000, r.opts().seed);
          char name[128];
          std::snprintf(name, sizeof name, "%s prefix '%s' tau_roll=%g |z|", label(f, fam, alpha).c_str(),
                        format_sequence(spec.vocab(), prefix).c_str(), tau);
          r.check("unbiasedness", name, m.z(), "<=", 4.0);
        }
      }
    }
  }
}

void mh_invariance_suite(Runner& r) {
  struct MhCase {
    Fixture fixture;
    std::size_t block_size;
    std::vector<std::size_t> blocks;
  };
  std::vector<MhCase> cases;
  if (r.opts().model) {
    cases.push_back({file_fixture(*r.opts().model, r.opts().horizon, r.opts().seed), 1, {1, r.opts().horizon}});
  } else {
    cases.push_back({random_fixture(70, 2, 4, 0.1, 1.5), 1, {2, 4}});
    cases.push_back({random_fixture(71, 2, 3, 0.0, 2.0), 2, {1}});
  }
  for (const MhCase& c : cases) {
    const TargetSpec spec = c.fixture.spec(Family::kPowered, 2.0, c.block_size);
    for (auto kind : {IntermediateTarget::kPrefix, IntermediateTarget::kLookahead}) {
      for (std::size_t k : c.blocks) {
        SMCConfig cfg;
        cfg.mh_steps = 1;
        cfg.mh_target = kind;
        cfg.lookahead.mode = LookaheadMode::kExactOracle;
        cfg.invert_mh_lookahead_ratio = r.opts().tamper_mh;
        cfg.seed = r.opts().seed;
        const ChiSquareCheck x = mh_invariance(spec, cfg, k, 20000, r.opts().seed);
        char name[160];
        std::snprintf(name, sizeof name, "%s B=%zu %s k=%zu chi2 / critical (%zu cells)",
                      c.fixture.name.c_str(), c.block_size, to_string(kind).c_str(), k, x.cells);
        r.check("mh-invariance", name, x.statistic / x.critical, "<=", 1.0);
      }
    }
  }
}

void b_invariance(Runner& r) {
  for (const Fixture& f : oracle_fixtures(r.opts())) {
    for (Family fam : kFamilies) {
      SMCConfig cfg;
      cfg.num_particles = 64;
      cfg.seed = r.opts().seed;
      std::vector<std::size_t> bs;
      for (std::size_t b = 1; b <= f.horizon; ++b) bs.push_back(b);
      const double d = block_size_invariance(f, fam, 2.0, cfg, bs);
      r.check("b-invariance", label(f, fam, 2.0) + " max |dlog w|", d, "<=", 1e-9);
    }
  }
}

void normalizer(Runner& r) {
  const Fixture f = r.opts().model ? file_fixture(*r.opts().model, r.opts().horizon, r.opts().seed) : worked_fixture();
  SMCConfig cfg;
  cfg.num_particles = 4;
  cfg.resampling = ResamplingScheme::kMultinomial;
  cfg.ess_threshold = 4.0;
  cfg.seed = r.opts().seed;
  const MeanCheck m = normalizer_unbiasedness(f.spec(Family::kTempered, 1.0), cfg, 2000, r.opts().workers);
  r.check("normalizer", f.name + " mean Z-hat |z|", m.z(), "<=", 4.0);
}

void reductions(Runner& r) {
  for (const Fixture& base : oracle_fixtures(r.opts())) {
    Fixture f = base;
    f.potential = std::make_shared<ConstantPotential>();
    SMCConfig cfg;
    cfg.num_particles = 4096;
    cfg.resampling = ResamplingScheme::kMultinomial;
    cfg.seed = r.opts().seed;
    const TvCheck tv = oracle_tv(f.spec(Family::kTempered, 1.0), cfg, 3, r.opts().workers);
    r.check("reductions", f.name + " psi=1 a=1 mean TV", tv.mean_tv, "<=", 0.03);
    for (double alpha : kAlphas) {
      const std::size_t bad = tempered_weight_mismatches(base.spec(Family::kTempered, alpha), 256, r.opts().seed);
      r.check("reductions", label(base, Family::kTempered, alpha) + " weights != block Psi",
              static_cast<double>(bad), "<=", 0.0);
    }
  }
}

const std::vector<std::pair<std::string, std::function<void(Runner&)>>>& suite_table() {
  static const std::vector<std::pair<std::string, std::function<void(Runner&)>>> table{
      {"oracle-equivalence", oracle_equivalence},
      {"mse-identity", mse_identity_suite},
      {"exact-marginals", exact_marginals},
      {"unbiasedness", unbiasedness},
      {"mh-invariance", mh_invariance_suite},
      {"b-invariance", b_invariance},
      {"normalizer", normalizer},
      {"reductions", reductions},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, fn] : suite_table()) out.push_back(name);
    return out;
  }();
  return names;
}

std::vector<VerifyRow> run_verify(const VerifyOptions& opts, std::ostream& log) {
  if (opts.model) file_fixture(*opts.model, opts.horizon, opts.seed);  // fail early on a bad file
  Runner runner(opts, log);
  bool any = false;
  for (const auto& [name, fn] : suite_table()) {
    if (!opts.filter.empty() && name.find(opts.filter) == std::string::npos) continue;
    any = true;
    fn(runner);
  }
  if (!any) {
    std::string all;
    for (const auto& n : verify_suites()) all += (all.empty() ? "" : ", ") + n;
    throw ConfigError("no verify suite matches '" + opts.filter + "' (suites: " + all + ")");
  }
  return runner.take();
}

}  // namespace rgsmc
