#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "rgsmc/experiment.hpp"
#include "rgsmc/fixtures.hpp"
#include "rgsmc/oracle.hpp"
#include "rgsmc/parallel.hpp"
#include "rgsmc/smc.hpp"
#include "rgsmc/verify.hpp"

namespace py = pybind11;
using namespace pybind11::literals;

namespace {

rgsmc::Fixture fixture_named(const std::string& name) {
  if (name == "worked") return rgsmc::worked_fixture();
  if (name == "constraint") return rgsmc::constraint_fixture();
  throw rgsmc::ConfigError("unknown fixture '" + name + "' (worked|constraint)");
}

py::dict row_dict(const rgsmc::ReplicationResult& r) {
  py::dict d;
  d["sweep_value"] = r.sweep_value;
  d["replication"] = r.replication;
  d["seed"] = r.seed;
  d["particles"] = r.num_particles;
  d["alpha"] = r.alpha;
  d["extinct"] = r.extinct;
  d["best_success"] = r.best_success;
  d["weighted_success"] = r.weighted_success;
  d["best_log_weight"] = r.best_log_weight;
  d["best_sequence"] = r.best_sequence;
  d["tv_to_oracle"] = r.tv_to_oracle;
  d["tokens"] = r.tokens;
  d["log_Z_hat"] = r.log_Z_hat;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reward-guided SMC over tabular language models";

  // Translators are tried newest first, so the base class goes first.
  py::register_exception<rgsmc::Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<rgsmc::ConfigError>(m, "ConfigError", PyExc_ValueError);

  m.attr("WORKERS_ENV") = rgsmc::kWorkersEnv;

  m.def(
      "oracle_probabilities",
      [](const std::string& fixture, const std::string& family, double alpha, std::size_t block_size) {
        const rgsmc::Fixture f = fixture_named(fixture);
        const rgsmc::TargetSpec spec = f.spec(rgsmc::family_from_string(family), alpha, block_size);
        std::map<std::string, double> out;
        for (const auto& [seq, p] : rgsmc::enumerate(spec).probabilities()) {
          out[rgsmc::format_sequence(spec.vocab(), seq)] = p;
        }
        return out;
      },
      "fixture"_a, "family"_a = "tempered", "alpha"_a = 1.0, "block_size"_a = 1,
      "Exact target probabilities of a bundled fixture, keyed by sequence.");

  m.def(
      "smc",
      [](const std::string& fixture, const std::string& family, double alpha, std::size_t particles,
         std::uint64_t seed, const std::string& intermediate, std::size_t mh_steps, std::size_t block_size) {
        const rgsmc::Fixture f = fixture_named(fixture);
        const rgsmc::TargetSpec spec = f.spec(rgsmc::family_from_string(family), alpha, block_size);
        rgsmc::SMCConfig cfg;
        cfg.num_particles = particles;
        cfg.seed = seed;
        cfg.intermediate_target = rgsmc::intermediate_from_string(intermediate);
        cfg.mh_steps = mh_steps;
        rgsmc::SMCResult r;
        {
          py::gil_scoped_release release;
          r = rgsmc::run_smc(spec, cfg);
        }
        std::vector<std::pair<std::string, double>> ps;
        for (const auto& p : r.particles) ps.emplace_back(rgsmc::format_sequence(spec.vocab(), p.tokens), p.log_weight);
        py::dict d;
        d["log_Z_hat"] = r.log_Z_hat;
        d["tokens"] = r.total_tokens;
        d["particles"] = ps;
        d["distribution"] = [&] {
          std::map<std::string, double> out;
          for (const auto& [seq, p] : rgsmc::weighted_distribution(r, spec)) {
            out[rgsmc::format_sequence(spec.vocab(), seq)] = p;
          }
          return out;
        }();
        return d;
      },
      "fixture"_a, "family"_a = "tempered", "alpha"_a = 1.0, "particles"_a = 64, "seed"_a = 0,
      "intermediate"_a = "prefix", "mh_steps"_a = 0, "block_size"_a = 1,
      "One SMC run on a bundled fixture.");

  m.def(
      "run",
      [](const std::filesystem::path& config, std::optional<std::uint64_t> seed,
         std::optional<std::filesystem::path> out, std::optional<std::size_t> workers) {
        const rgsmc::RunConfig cfg = rgsmc::load_run_config(config);
        const std::size_t w = workers ? *workers : rgsmc::worker_count();
        rgsmc::RunOutput r;
        {
          py::gil_scoped_release release;
          r = rgsmc::cmd_run(cfg, seed, out, w);
        }
        py::list rows;
        for (const auto& row : r.rows) rows.append(row_dict(row));
        return py::dict("dir"_a = r.dir, "config_hash"_a = r.config_hash, "rows"_a = rows);
      },
      "config"_a, "seed"_a = py::none(), "out"_a = py::none(), "workers"_a = py::none(),
      "Runs a JSON config and writes its output directory, like `rgsmc run`.");

  m.def("report", &rgsmc::cmd_report, "dir"_a, "format"_a = "csv",
        "Aggregates finished runs under `dir`, like `rgsmc report`.");

  m.def(
      "verify",
      [](const std::string& filter, std::uint64_t seed) {
        rgsmc::VerifyOptions opts;
        opts.filter = filter;
        opts.seed = seed;
        std::ostringstream log;
        std::vector<rgsmc::VerifyRow> rows;
        {
          py::gil_scoped_release release;
          rows = rgsmc::run_verify(opts, log);
        }
        py::list out;
        for (const auto& r : rows) {
          out.append(py::dict("suite"_a = r.suite, "check"_a = r.check, "measured"_a = r.measured,
                              "relation"_a = r.relation, "tolerance"_a = r.tolerance, "passed"_a = r.passed));
        }
        return out;
      },
      "filter"_a = "", "seed"_a = 1, "Oracle checks, like `rgsmc verify`.");
}
