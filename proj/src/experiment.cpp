#include "rgsmc/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "rgsmc/fixtures.hpp"
#include "rgsmc/model_io.hpp"
#include "rgsmc/oracle.hpp"
#include "rgsmc/parallel.hpp"

#ifndef RGSMC_VERSION
#define RGSMC_VERSION "unknown"
#endif

namespace rgsmc {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kOracleStateCap = 200'000;
constexpr const char* kFixtureDefault = "fixture default";

// Line of the only occurrence of "key" in the config text, or 0.
int line_of_key(const std::string& text, const std::string& key) {
  const std::string quoted = "\"" + key + "\"";
  const auto first = text.find(quoted);
  if (first == std::string::npos || text.find(quoted, first + 1) != std::string::npos) return 0;
  return 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(first), '\n'));
}

// Reads one JSON object, remembering which keys were used so that the rest
// can be reported as unknown.
class Reader {
 public:
  Reader(const json& j, std::string path, const std::string& text)
      : j_(j), path_(std::move(path)), text_(text) {
    if (!j_.is_object()) fail("expected an object");
  }

  [[noreturn]] void fail(const std::string& msg, const std::string& key = "") const {
    const std::string where = key.empty() ? path_ : join(key);
    throw ConfigError((where.empty() ? std::string("config") : where) + ": " + msg,
                      key.empty() ? 0 : line_of_key(text_, key));
  }

  bool has(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) && !j_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string string(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_string()) fail("expected a string", key);
    return v.get<std::string>();
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number()) fail("expected a number", key);
    const double d = v.get<double>();
    if (!std::isfinite(d)) fail("expected a finite number", key);
    return d;
  }

  std::optional<double> optional_number(const std::string& key) {
    if (!has(key)) return std::nullopt;
    return number(key, 0.0);
  }

  std::uint64_t integer(const std::string& key, std::uint64_t fallback, std::uint64_t min = 0) {
    if (!has(key)) return fallback;
    const json& v = j_.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      fail("expected a non-negative integer", key);
    }
    const auto u = v.get<std::uint64_t>();
    if (u < min) fail("must be >= " + std::to_string(min), key);
    return u;
  }

  Reader object(const std::string& key) {
    used_.insert(key);
    return Reader(j_.at(key), join(key), text_);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.contains(k)) fail("unknown key", k);
    }
  }

  std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  const std::string& text() const { return text_; }

 private:
  const json& j_;
  std::string path_;
  const std::string& text_;
  std::set<std::string> used_;
};

template <class F>
auto wrap_invalid(Reader& r, const std::string& key, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    r.fail(e.what(), key);
  }
}

Token token_named(Reader& r, const std::string& key, const Vocabulary& v) {
  const std::string name = r.string(key, "");
  auto tok = v.find(name);
  if (!tok) r.fail("unknown token '" + name + "'", key);
  return *tok;
}

std::shared_ptr<const RewardPotential> parse_potential(Reader r, const Vocabulary& v, json& resolved);

std::shared_ptr<const RewardPotential> parse_potential(Reader r, const Vocabulary& v, json& resolved) {
  const std::string type = r.string("type", "");
  resolved = json::object();
  resolved["type"] = type;
  std::shared_ptr<const RewardPotential> out;
  if (type == "constant") {
    out = std::make_shared<ConstantPotential>();
  } else if (type == "terminal") {
    const std::string pattern = r.string("pattern", "");
    const double eps = r.number("epsilon", 0.0);
    out = wrap_invalid(r, "pattern", [&] {
      return std::make_shared<TerminalIndicator>(TokenPattern(pattern, v), v.eos(), eps);
    });
    resolved["pattern"] = pattern;
    resolved["epsilon"] = eps;
  } else if (type == "step") {
    if (!r.has("rules") || !r.raw("rules").is_array()) r.fail("expected an array of rules", "rules");
    std::vector<StepScore::Rule> rules;
    resolved["rules"] = json::array();
    const json& arr = r.raw("rules");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      Reader rule(arr[i], r.join("rules[" + std::to_string(i) + "]"), r.text());
      StepScore::Rule x;
      x.token = token_named(rule, "token", v);
      x.position = rule.integer("position", 0);
      const double factor = rule.number("factor", 1.0);
      if (factor < 0.0) rule.fail("factor must be >= 0", "factor");
      x.log_factor = factor > 0.0 ? std::log(factor) : kNegInf;
      rule.finish();
      rules.push_back(x);
      resolved["rules"].push_back({{"token", v.name(x.token)}, {"position", x.position}, {"factor", factor}});
    }
    out = std::make_shared<StepScore>(std::move(rules));
  } else if (type == "progress") {
    const Token tok = token_named(r, "token", v);
    const auto cap = r.integer("cap", 1);
    const double factor = r.number("factor", 1.0);
    if (!(factor > 0.0)) r.fail("factor must be > 0", "factor");
    out = std::make_shared<CountProgress>(tok, cap, std::log(factor));
    resolved["token"] = v.name(tok);
    resolved["cap"] = cap;
    resolved["factor"] = factor;
  } else if (type == "product") {
    if (!r.has("parts") || !r.raw("parts").is_array()) r.fail("expected an array of potentials", "parts");
    std::vector<std::shared_ptr<const RewardPotential>> parts;
    resolved["parts"] = json::array();
    const json& arr = r.raw("parts");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      json sub;
      parts.push_back(parse_potential(Reader(arr[i], r.join("parts[" + std::to_string(i) + "]"), r.text()), v, sub));
      resolved["parts"].push_back(sub);
    }
    out = std::make_shared<ProductPotential>(std::move(parts));
  } else {
    r.fail("unknown potential type '" + type + "' (constant|terminal|step|progress|product)", "type");
  }
  r.finish();
  return out;
}

json fixture_potential_decl(const std::string& fixture) {
  if (fixture == "worked") {
    return {{"type", "step"}, {"rules", json::array({{{"token", "1"}, {"position", 2}, {"factor", 2.0}}})}};
  }
  if (fixture == "constraint") {
    return {{"type", "product"},
            {"parts", json::array({{{"type", "terminal"}, {"pattern", "* b b ? b"}, {"epsilon", 0.0}},
                                   {{"type", "progress"}, {"token", "b"}, {"cap", 3}, {"factor", 1.5}}})}};
  }
  return nullptr;
}

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

const std::vector<std::pair<std::string, std::string>>& summary_columns() {
  static const std::vector<std::pair<std::string, std::string>> cols{
      {"run", "string: run name from the config"},
      {"sweep_axis", "string: none, particles or alpha"},
      {"sweep_value", "number: value of the sweep axis for this row"},
      {"replication", "integer: replication index, 0-based"},
      {"seed", "integer: seed of this replication (shared across sweep values)"},
      {"particles", "integer: number of particles N"},
      {"alpha", "number: target exponent alpha"},
      {"extinct", "0/1: every particle reached zero weight"},
      {"best_success", "0/1 or empty: best particle satisfies the task predicate"},
      {"weighted_success", "number or empty: normalized weight on particles satisfying the task"},
      {"best_log_weight", "number: final log weight of the best particle"},
      {"best_log_reward", "number: sum of log psi along the best particle"},
      {"best_sequence", "string: token names of the best particle"},
      {"tv_to_oracle", "number or empty: TV distance of the weighted particles to the enumerated target"},
      {"tokens", "integer: tokens drawn (propagation, lookahead rollouts, MH proposals)"},
      {"log_Z_hat", "number: log normalizer estimate"},
      {"resamples", "integer: blocks at which resampling happened"},
      {"mh_proposals", "integer: MH proposals made"},
      {"mh_accepts", "integer: MH proposals accepted"},
  };
  return cols;
}

std::string read_file(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + what + " '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::kParticles:
      return "particles";
    case SweepAxis::kAlpha:
      return "alpha";
    default:
      return "none";
  }
}

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_file_atomic(const fs::path& path, const std::string& data) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write '" + tmp.string() + "'");
    out << data;
    if (!out.flush()) throw Error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto upto = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(upto), '\n'));
    throw ConfigError(std::string("malformed JSON: ") + e.what(), line);
  }
  Reader root(j, "", text);
  RunConfig cfg;
  json resolved = json::object();

  cfg.name = root.string("name", "run");
  if (cfg.name.empty() || cfg.name.find_first_of("/\\") != std::string::npos) root.fail("must be a plain non-empty name", "name");
  resolved["name"] = cfg.name;

  // Model: a bundled fixture or a model file.
  if (!root.has("model")) root.fail("missing required key", "model");
  std::shared_ptr<const TabularModel> model;
  std::optional<Fixture> fixture;
  {
    const json& m = root.raw("model");
    if (m.is_string()) {
      fs::path p = base_dir / m.get<std::string>();
      model = load_tabular_model(p.string());
      resolved["model"] = {{"file", fs::absolute(p).lexically_normal().string()}};
    } else {
      Reader mr = root.object("model");
      if (mr.has("file") == mr.has("fixture")) mr.fail("give exactly one of 'file' or 'fixture'");
      if (mr.has("file")) {
        fs::path p = base_dir / mr.string("file", "");
        model = load_tabular_model(p.string());
        resolved["model"] = {{"file", fs::absolute(p).lexically_normal().string()}};
      } else {
        const std::string name = mr.string("fixture", "");
        if (name == "worked") {
          fixture = worked_fixture();
          resolved["model"] = {{"fixture", name}};
        } else if (name == "constraint") {
          fixture = constraint_fixture();
          resolved["model"] = {{"fixture", name}};
        } else if (name == "random") {
          const auto seed = mr.integer("seed", 0);
          const auto tokens = mr.integer("tokens", 2, 1);
          const auto horizon = mr.integer("horizon", 3, 1);
          const double eos_mass = mr.number("eos_mass", 0.1);
          const double conc = mr.number("concentration", 1.0);
          fixture = wrap_invalid(mr, "fixture", [&] { return random_fixture(seed, tokens, horizon, eos_mass, conc); });
          resolved["model"] = {{"fixture", name}, {"seed", seed}, {"tokens", tokens}, {"horizon", horizon},
                               {"eos_mass", eos_mass}, {"concentration", conc}};
        } else {
          mr.fail("unknown fixture '" + name + "' (worked|constraint|random)", "fixture");
        }
        model = fixture->model;
      }
      mr.finish();
    }
  }
  const Vocabulary& vocab = model->vocab();
  resolved["model_hash"] = fnv1a_hex(format_tabular_model(*model));
  if (root.has("model_hash") && root.string("model_hash", "") != resolved["model_hash"].get<std::string>()) {
    root.fail("model differs from the one this config was resolved with", "model_hash");
  }

  // Potential: explicit, or the fixture's own.
  std::shared_ptr<const RewardPotential> potential;
  const bool fixture_default = root.has("potential") && root.raw("potential") == json(kFixtureDefault);
  if (root.has("potential") && !fixture_default) {
    json decl;
    potential = parse_potential(root.object("potential"), vocab, decl);
    resolved["potential"] = decl;
  } else if (fixture) {
    potential = fixture->potential;
    json decl = fixture_potential_decl(fixture->name);
    resolved["potential"] = decl.is_null() ? json(kFixtureDefault) : decl;
  } else {
    root.fail("missing required key (no fixture default)", "potential");
  }

  // Task predicate.
  if (root.has("task")) {
    if (!root.raw("task").is_string()) root.fail("expected a token pattern string", "task");
    const std::string pattern = root.raw("task").get<std::string>();
    cfg.task = wrap_invalid(root, "task", [&] {
      return std::make_shared<TerminalIndicator>(TokenPattern(pattern, vocab), vocab.eos(), 0.0);
    });
    resolved["task"] = pattern;
  } else if (fixture && fixture->task) {
    cfg.task = fixture->task;
    resolved["task"] = "* b b ? b";
  } else {
    resolved["task"] = nullptr;
  }

  // Target.
  {
    TargetSpec& t = cfg.target;
    t.model = model;
    t.potential = potential;
    if (root.has("target")) {
      Reader tr = root.object("target");
      const std::string fam = tr.string("family", "tempered");
      t.family = wrap_invalid(tr, "family", [&] { return family_from_string(fam); });
      t.alpha = tr.number("alpha", 1.0);
      t.horizon = tr.integer("horizon", fixture ? fixture->horizon : 0);
      t.block_size = tr.integer("block_size", 1);
      t.prompt = tr.string("prompt", "");
      tr.finish();
    } else {
      t.horizon = fixture ? fixture->horizon : 0;
    }
    if (t.horizon == 0) root.fail("target.horizon is required for a model file", "target");
    wrap_invalid(root, "target", [&] { t.validate(); return 0; });
    resolved["target"] = {{"family", to_string(t.family)}, {"alpha", t.alpha}, {"horizon", t.horizon},
                          {"block_size", t.block_size}, {"prompt", t.prompt}};
  }

  // Sampler.
  {
    SMCConfig& s = cfg.smc;
    json rs = json::object();
    if (root.has("smc")) {
      Reader sr = root.object("smc");
      s.num_particles = sr.integer("particles", 16, 1);
      cfg.ess_fraction = sr.number("ess_fraction", 0.5);
      if (cfg.ess_fraction < 0.0 || cfg.ess_fraction > 1.0) sr.fail("must lie in [0, 1]", "ess_fraction");
      const std::string res = sr.string("resampling", "systematic");
      s.resampling = wrap_invalid(sr, "resampling", [&] { return resampling_from_string(res); });
      const std::string inter = sr.string("intermediate", "prefix");
      s.intermediate_target = wrap_invalid(sr, "intermediate", [&] { return intermediate_from_string(inter); });
      s.mh_steps = sr.integer("mh_steps", 0);
      const std::string mht = sr.string("mh_target", "lookahead");
      s.mh_target = wrap_invalid(sr, "mh_target", [&] { return intermediate_from_string(mht); });
      if (sr.has("mh_family")) {
        const std::string f = sr.string("mh_family", "");
        s.mh_family = wrap_invalid(sr, "mh_family", [&] { return family_from_string(f); });
      }
      if (sr.has("reward_threshold")) s.reward_threshold = sr.number("reward_threshold", 0.0);
      s.proposal_tau = sr.optional_number("proposal_tau");
      if (sr.has("lookahead")) {
        Reader lr = sr.object("lookahead");
        s.lookahead.rollouts = lr.integer("rollouts", 2, 1);
        s.lookahead.horizon_blocks = lr.integer("horizon_blocks", 1, 1);
        s.lookahead.tau_roll = lr.number("tau_roll", 1.0);
        const std::string mode = lr.string("mode", "estimated");
        if (mode == "estimated") {
          s.lookahead.mode = LookaheadMode::kEstimated;
        } else if (mode == "exact") {
          s.lookahead.mode = LookaheadMode::kExactOracle;
        } else {
          lr.fail("expected 'estimated' or 'exact'", "mode");
        }
        lr.finish();
      }
      sr.finish();
    }
    s.ess_threshold = cfg.ess_fraction * static_cast<double>(s.num_particles);
    wrap_invalid(root, "smc", [&] { s.validate(); return 0; });
    rs["particles"] = s.num_particles;
    rs["ess_fraction"] = cfg.ess_fraction;
    rs["resampling"] = to_string(s.resampling);
    rs["intermediate"] = to_string(s.intermediate_target);
    rs["mh_steps"] = s.mh_steps;
    rs["mh_target"] = to_string(s.mh_target);
    rs["mh_family"] = to_string(s.mh_family.value_or(cfg.target.family));
    rs["reward_threshold"] = std::isinf(s.reward_threshold) ? json(nullptr) : json(s.reward_threshold);
    rs["proposal_tau"] = s.proposal_tau ? json(*s.proposal_tau) : json(nullptr);
    rs["lookahead"] = {{"rollouts", s.lookahead.rollouts},
                       {"horizon_blocks", s.lookahead.horizon_blocks},
                       {"tau_roll", s.lookahead.tau_roll},
                       {"mode", s.lookahead.mode == LookaheadMode::kExactOracle ? "exact" : "estimated"}};
    resolved["smc"] = rs;
  }

  // Sweep.
  if (root.has("sweep")) {
    Reader sw = root.object("sweep");
    const std::string axis = sw.string("axis", "");
    if (axis == "particles") {
      cfg.sweep_axis = SweepAxis::kParticles;
    } else if (axis == "alpha") {
      cfg.sweep_axis = SweepAxis::kAlpha;
    } else {
      sw.fail("expected 'particles' or 'alpha'", "axis");
    }
    if (!sw.has("values") || !sw.raw("values").is_array() || sw.raw("values").empty()) {
      sw.fail("expected a non-empty array", "values");
    }
    for (const json& v : sw.raw("values")) {
      if (!v.is_number()) sw.fail("expected numbers", "values");
      const double x = v.get<double>();
      if (cfg.sweep_axis == SweepAxis::kParticles && (!v.is_number_integer() || x < 1)) {
        sw.fail("particle counts must be positive integers", "values");
      }
      if (cfg.sweep_axis == SweepAxis::kAlpha && !(x > 0.0 && std::isfinite(x))) {
        sw.fail("alpha values must be positive", "values");
      }
      cfg.sweep_values.push_back(x);
    }
    sw.finish();
    json values = json::array();
    for (double x : cfg.sweep_values) {
      values.push_back(cfg.sweep_axis == SweepAxis::kParticles ? json(static_cast<std::uint64_t>(x)) : json(x));
    }
    resolved["sweep"] = {{"axis", axis}, {"values", values}};
  } else {
    cfg.sweep_values = {cfg.sweep_axis == SweepAxis::kNone ? static_cast<double>(cfg.smc.num_particles) : 0.0};
    resolved["sweep"] = nullptr;
  }

  cfg.replications = root.integer("replications", 1);
  cfg.seed = root.integer("seed", 0);
  cfg.out_dir = root.string("out", "");
  cfg.oracle = root.string("oracle", "auto");
  if (cfg.oracle != "auto" && cfg.oracle != "on" && cfg.oracle != "off") root.fail("expected auto|on|off", "oracle");
  root.finish();
  resolved["replications"] = cfg.replications;
  resolved["seed"] = cfg.seed;
  resolved["out"] = cfg.out_dir;
  resolved["oracle"] = cfg.oracle;
  cfg.resolved = resolved.dump(2);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  const std::string text = read_file(path, "config");
  try {
    return parse_run_config(text, path.parent_path().empty() ? fs::path(".") : path.parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::uint64_t replication_seed(std::uint64_t base_seed, std::size_t r) {
  return mix64(base_seed, static_cast<std::uint64_t>(r));
}

std::vector<ReplicationResult> run_replications(const RunConfig& cfg, std::size_t workers) {
  const std::size_t points = cfg.sweep_values.size();
  std::vector<TargetSpec> specs(points, cfg.target);
  std::vector<std::optional<SequenceTable>> oracles(points);
  for (std::size_t i = 0; i < points; ++i) {
    if (cfg.sweep_axis == SweepAxis::kAlpha) specs[i].alpha = cfg.sweep_values[i];
    if (cfg.oracle == "off") continue;
    try {
      oracles[i] = enumerate(specs[i], cfg.oracle == "on" ? kDefaultMaxStates : kOracleStateCap).probabilities();
    } catch (const InstanceTooLarge&) {
      if (cfg.oracle == "on") throw;
    }
  }

  std::vector<ReplicationResult> rows(points * cfg.replications);
  parallel_for(rows.size(), workers, [&](std::size_t job) {
    const std::size_t point = job / cfg.replications;
    const std::size_t rep = job % cfg.replications;
    const TargetSpec& spec = specs[point];
    SMCConfig sc = cfg.smc;
    if (cfg.sweep_axis == SweepAxis::kParticles) sc.num_particles = static_cast<std::size_t>(cfg.sweep_values[point]);
    sc.ess_threshold = cfg.ess_fraction * static_cast<double>(sc.num_particles);
    sc.seed = replication_seed(cfg.seed, rep);

    ReplicationResult& row = rows[job];
    row.sweep_index = point;
    row.sweep_value = cfg.sweep_values[point];
    row.replication = rep;
    row.seed = sc.seed;
    row.num_particles = sc.num_particles;
    row.alpha = spec.alpha;

    SmcEngine engine(spec, sc);
    try {
      const SMCResult r = engine.run();
      row.trace = r.trace;
      row.tokens = r.total_tokens;
      row.log_Z_hat = r.log_Z_hat;
      const std::size_t best = r.best_index();
      const Particle& bp = r.particles[best];
      row.best_log_weight = bp.log_weight;
      row.best_log_reward = bp.log_reward;
      row.best_sequence = format_sequence(spec.vocab(), bp.tokens);
      if (cfg.task) {
        row.best_success = std::isfinite(bp.log_weight) && cfg.task->satisfied(bp.tokens);
        const std::vector<double> w = r.normalized_weights();
        double ws = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
          if (w[i] > 0.0 && cfg.task->satisfied(r.particles[i].tokens)) ws += w[i];
        }
        row.weighted_success = ws;
      }
      if (oracles[point]) row.tv_to_oracle = tv_distance(weighted_distribution(r, spec), *oracles[point]);
    } catch (const PopulationExtinct&) {
      row.extinct = true;
      row.trace = engine.trace();
      row.tokens = row.trace.empty() ? 0 : row.trace.back().cumulative_tokens;
      if (cfg.task) {
        row.best_success = false;
        row.weighted_success = 0.0;
      }
    }
    for (const auto& t : row.trace) {
      row.resamples += t.resampled ? 1 : 0;
      row.mh_proposals += t.mh_proposals;
      row.mh_accepts += t.mh_accepts;
    }
  });
  return rows;
}

void write_summary_csv(const RunConfig& cfg, const std::vector<ReplicationResult>& rows,
                       std::ostream& out) {
  const auto& cols = summary_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i].first;
  out << '\n';
  for (const auto& r : rows) {
    out << csv_field(cfg.name) << ',' << to_string(cfg.sweep_axis) << ',' << format_number(r.sweep_value)
        << ',' << r.replication << ',' << r.seed << ',' << r.num_particles << ','
        << format_number(r.alpha) << ',' << (r.extinct ? 1 : 0) << ','
        << (r.best_success ? (*r.best_success ? "1" : "0") : "") << ','
        << (r.weighted_success ? format_number(*r.weighted_success) : "") << ','
        << format_number(r.best_log_weight) << ',' << format_number(r.best_log_reward) << ','
        << csv_field(r.best_sequence) << ','
        << (r.tv_to_oracle ? format_number(*r.tv_to_oracle) : "") << ',' << r.tokens << ','
        << format_number(r.log_Z_hat) << ',' << r.resamples << ',' << r.mh_proposals << ','
        << r.mh_accepts << '\n';
  }
}

void write_trace_jsonl(const std::vector<ReplicationResult>& rows, std::ostream& out) {
  for (const auto& r : rows) {
    for (const auto& t : r.trace) {
      json j = {{"sweep_value", r.sweep_value},
                {"replication", r.replication},
                {"k", t.k},
                {"ess", t.ess},
                {"resampled", t.resampled},
                {"duplicates", t.duplicates},
                {"mh_eligible", t.mh_eligible},
                {"mh_proposals", t.mh_proposals},
                {"mh_accepts", t.mh_accepts},
                {"mean_running_reward", std::isfinite(t.mean_running_reward) ? json(t.mean_running_reward) : json(nullptr)},
                {"tokens_this_block", t.tokens_this_block},
                {"cumulative_tokens", t.cumulative_tokens}};
      out << j.dump() << '\n';
    }
  }
}

void write_schema_csv(std::ostream& out) {
  out << "column,description\n";
  for (const auto& [name, desc] : summary_columns()) out << name << ',' << csv_field(desc) << '\n';
}

RunOutput cmd_run(RunConfig cfg, std::optional<std::uint64_t> seed,
                  std::optional<fs::path> out, std::size_t workers) {
  if (seed) {
    cfg.seed = *seed;
    json r = json::parse(cfg.resolved);
    r["seed"] = *seed;
    cfg.resolved = r.dump(2);
  }
  RunOutput res;
  res.dir = out ? *out : (!cfg.out_dir.empty() ? fs::path(cfg.out_dir) : fs::path("runs") / cfg.name);
  fs::create_directories(res.dir);
  res.config_hash = fnv1a_hex(cfg.resolved);

  const auto start = std::chrono::steady_clock::now();
  res.rows = run_replications(cfg, workers);
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::ostringstream summary, trace, schema;
  write_summary_csv(cfg, res.rows, summary);
  write_trace_jsonl(res.rows, trace);
  write_schema_csv(schema);
  write_file_atomic(res.dir / "summary.csv", summary.str());
  write_file_atomic(res.dir / "trace.jsonl", trace.str());
  write_file_atomic(res.dir / "schema.csv", schema.str());
  write_file_atomic(res.dir / "config.json", cfg.resolved + "\n");

  std::size_t total_tokens = 0;
  json seeds = json::array();
  for (std::size_t r = 0; r < cfg.replications; ++r) seeds.push_back(replication_seed(cfg.seed, r));
  for (const auto& row : res.rows) total_tokens += row.tokens;
  json manifest = {{"name", cfg.name},
                   {"config_hash", res.config_hash},
                   {"config", json::parse(cfg.resolved)},
                   {"version", RGSMC_VERSION},
                   {"base_seed", cfg.seed},
                   {"replication_seeds", seeds},
                   {"replications", cfg.replications},
                   {"sweep_axis", to_string(cfg.sweep_axis)},
                   {"sweep_values", cfg.sweep_values},
                   {"rows", res.rows.size()},
                   {"workers", workers},
                   {"wall_time_seconds", res.wall_seconds},
                   {"total_tokens", total_tokens},
                   {"files", {{"summary", "summary.csv"}, {"trace", "trace.jsonl"},
                              {"schema", "schema.csv"}, {"config", "config.json"}}}};
  write_file_atomic(res.dir / "manifest.json", manifest.dump(2) + "\n");
  return res;
}

namespace {

struct Stat {
  std::vector<double> xs;
  void add(const std::string& s) {
    if (s.empty()) return;
    const double x = std::stod(s);
    if (std::isfinite(x)) xs.push_back(x);
  }
  std::size_t n() const { return xs.size(); }
  double mean() const {
    double m = 0.0;
    for (double x : xs) m += x;
    return xs.empty() ? std::nan("") : m / static_cast<double>(xs.size());
  }
  double sd() const {
    if (xs.size() < 2) return xs.empty() ? std::nan("") : 0.0;
    const double m = mean();
    double v = 0.0;
    for (double x : xs) v += (x - m) * (x - m);
    return std::sqrt(v / static_cast<double>(xs.size() - 1));
  }
  double half_width() const {
    return xs.size() < 2 ? 0.0 : 1.96 * sd() / std::sqrt(static_cast<double>(xs.size()));
  }
};

struct Group {
  std::string run;
  double sweep_value = 0.0;
  std::string axis;
  std::size_t rows = 0;
  std::size_t duplicate_seeds = 0;
  std::set<std::string> seeds;
  Stat best_success, weighted_success, tv, tokens, log_z, best_reward;
};

}  // namespace

std::string cmd_report(const fs::path& dir, const std::string& format) {
  if (format != "csv" && format != "jsonl") throw ConfigError("unknown report format '" + format + "' (csv|jsonl)");
  if (!fs::is_directory(dir)) throw ConfigError("not a directory: '" + dir.string() + "'");
  std::vector<fs::path> manifests;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() == "manifest.json") manifests.push_back(e.path());
  }
  std::sort(manifests.begin(), manifests.end());
  if (manifests.empty()) throw ConfigError("no manifest.json found under '" + dir.string() + "'");

  std::map<std::pair<std::string, double>, Group> groups;
  for (const fs::path& mp : manifests) {
    json m;
    try {
      m = json::parse(read_file(mp, "manifest"));
      if (!m.is_object() || !m.contains("files") || !m.at("files").contains("summary")) {
        throw ConfigError("missing 'files.summary'");
      }
    } catch (const std::exception& e) {
      throw ConfigError("corrupt manifest '" + mp.string() + "': " + e.what());
    }
    const fs::path sp = mp.parent_path() / m["files"]["summary"].get<std::string>();
    std::istringstream in(read_file(sp, "summary"));
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("empty summary '" + sp.string() + "'");
    const std::vector<std::string> header = parse_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const auto& [name, desc] : summary_columns()) {
      if (!col.contains(name)) throw ConfigError("summary '" + sp.string() + "' lacks column '" + name + "'");
    }
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      const std::vector<std::string> f = parse_csv_line(line);
      if (f.size() != header.size()) throw ConfigError("summary '" + sp.string() + "': wrong field count", lineno);
      try {
        const double sv = std::stod(f[col["sweep_value"]]);
        Group& g = groups[{f[col["run"]], sv}];
        g.run = f[col["run"]];
        g.sweep_value = sv;
        g.axis = f[col["sweep_axis"]];
        g.rows += 1;
        if (!g.seeds.insert(f[col["seed"]]).second) g.duplicate_seeds += 1;
        g.best_success.add(f[col["best_success"]]);
        g.weighted_success.add(f[col["weighted_success"]]);
        g.tv.add(f[col["tv_to_oracle"]]);
        g.tokens.add(f[col["tokens"]]);
        g.log_z.add(f[col["log_Z_hat"]]);
        g.best_reward.add(f[col["best_log_reward"]]);
      } catch (const std::logic_error&) {  // invalid_argument or out_of_range from stod
        throw ConfigError("summary '" + sp.string() + "': bad number", lineno);
      }
    }
  }

  auto num = [](double x) { return format_number(x); };
  auto quality = [](const Group& g) {
    if (g.best_success.n()) return g.best_success.mean();
    if (g.tv.n()) return 1.0 - g.tv.mean();
    return g.best_reward.mean();
  };

  std::ostringstream agg;
  const std::vector<std::pair<std::string, const Stat Group::*>> stats{
      {"best_success", &Group::best_success}, {"weighted_success", &Group::weighted_success},
      {"tv_to_oracle", &Group::tv},           {"tokens", &Group::tokens},
      {"log_Z_hat", &Group::log_z}};
  if (format == "csv") {
    agg << "run,sweep_axis,sweep_value,rows,duplicate_seeds";
    for (const auto& [name, _] : stats) agg << ',' << name << "_mean," << name << "_std," << name << "_ci_low," << name << "_ci_high";
    agg << '\n';
  }
  for (const auto& [key, g] : groups) {
    if (format == "csv") {
      agg << csv_field(g.run) << ',' << g.axis << ',' << num(g.sweep_value) << ',' << g.rows << ','
          << g.duplicate_seeds;
      for (const auto& [name, field] : stats) {
        const Stat& s = g.*field;
        if (s.n() == 0) {
          agg << ",,,,";
        } else {
          agg << ',' << num(s.mean()) << ',' << num(s.sd()) << ',' << num(s.mean() - s.half_width()) << ','
              << num(s.mean() + s.half_width());
        }
      }
      agg << '\n';
    } else {
      json j = {{"run", g.run}, {"sweep_axis", g.axis}, {"sweep_value", g.sweep_value},
                {"rows", g.rows}, {"duplicate_seeds", g.duplicate_seeds}};
      for (const auto& [name, field] : stats) {
        const Stat& s = g.*field;
        if (s.n() == 0) {
          j[name] = nullptr;
        } else {
          j[name] = {{"mean", s.mean()}, {"std", s.sd()}, {"ci_low", s.mean() - s.half_width()},
                     {"ci_high", s.mean() + s.half_width()}};
        }
      }
      agg << j.dump() << '\n';
    }
  }

  // Two columns per run: mean tokens, quality. Runs are separated by a blank
  // line and introduced by a comment.
  std::ostringstream plot;
  plot << "# quality: mean best-particle success, else 1 - mean TV, else mean best log reward\n";
  std::string current;
  bool first = true;
  for (const auto& [key, g] : groups) {
    if (first || g.run != current) {
      if (!first) plot << '\n';
      plot << "# run " << g.run << "\ntokens,quality\n";
      current = g.run;
      first = false;
    }
    plot << num(g.tokens.mean()) << ',' << num(quality(g)) << '\n';
  }

  write_file_atomic(dir / (format == "csv" ? "aggregate.csv" : "aggregate.jsonl"), agg.str());
  write_file_atomic(dir / "plot_data.csv", plot.str());
  return agg.str();
}

}  // namespace rgsmc
