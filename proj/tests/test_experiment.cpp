#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "rgsmc/experiment.hpp"
#include "rgsmc/fixtures.hpp"
#include "rgsmc/model_io.hpp"

using namespace rgsmc;
namespace fs = std::filesystem;

namespace {

const fs::path kData = RGSMC_DATA_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("rgsmc-test-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" + std::string(RGSMC_CLI) + "' " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

const char* const kSmall = R"({
  "name": "small",
  "model": {"fixture": "constraint"},
  "target": {"family": "tempered", "alpha": 2, "block_size": 2},
  "smc": {"particles": 8, "intermediate": "lookahead", "mh_steps": 1},
  "sweep": {"axis": "particles", "values": [4, 8]},
  "replications": 3,
  "seed": 5
})";

}  // namespace

TEST_CASE("bundled model files match the fixtures") {
  CHECK(format_tabular_model(*load_tabular_model((kData / "worked.model").string())) ==
        format_tabular_model(*worked_fixture().model));
  CHECK(format_tabular_model(*load_tabular_model((kData / "constraint.model").string())) ==
        format_tabular_model(*constraint_fixture().model));
}

TEST_CASE("config defaults come from the fixture") {
  const RunConfig c = parse_run_config(R"({"model": {"fixture": "constraint"}})");
  CHECK(c.target.horizon == 6);
  CHECK(c.target.alpha == 1.0);
  CHECK(c.task != nullptr);
  CHECK(c.smc.num_particles == 16);
  CHECK(c.sweep_axis == SweepAxis::kNone);
  CHECK(c.sweep_values.size() == 1);
}

TEST_CASE("the resolved config parses back to the same config") {
  const RunConfig a = parse_run_config(kSmall);
  const RunConfig b = parse_run_config(a.resolved);
  CHECK(a.resolved == b.resolved);
  for (const char* name : {"worked.json", "alpha_sweep.json", "sweep_full.json"}) {
    const RunConfig file = load_run_config(kData / "configs" / name);
    CHECK(parse_run_config(file.resolved).resolved == file.resolved);
  }
}

TEST_CASE("config errors name the key and line") {
  auto message = [](const std::string& text) -> std::string {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return e.what();
    }
    return "";
  };
  const std::string unknown = message("{\n  \"model\": {\"fixture\": \"worked\"},\n  \"partcles\": 3\n}");
  CHECK(unknown.find("line 3") != std::string::npos);
  CHECK(unknown.find("partcles") != std::string::npos);
  CHECK(message("{\"model\": {\"fixture\": \"worked\"}, \"smc\": {\"particles\": 0}}").find("smc.particles") !=
        std::string::npos);
  CHECK(message("{\"model\": {\"fixture\": \"worked\"}, \"target\": {\"alpha\": -1}}").find("target") !=
        std::string::npos);
  CHECK(message("{\"model\": {\"fixture\": \"nope\"}}").find("model.fixture") != std::string::npos);
  CHECK(message("{\"model\": {\"fixture\": \"worked\"}, \"smc\": {\"resampling\": \"stratified\"}}") != "");
  CHECK(message("{\"model\": {\"fixture\": \"worked\"}, \"task\": \"* z\"}").find("task") != std::string::npos);
  CHECK(message("{\"model\": {\"fixture\": \"worked\"},\n\n \"seed\": }").find("line 3") != std::string::npos);
  CHECK(message("{}").find("model") != std::string::npos);
  CHECK(message("{\"model\": {\"file\": \"/nonexistent.model\"}, \"target\": {\"horizon\": 2}}") != "");
}

TEST_CASE("potential declarations build the fixture potential") {
  const RunConfig c = parse_run_config(R"({
    "model": {"file": "constraint.model"},
    "potential": {"type": "product", "parts": [
      {"type": "terminal", "pattern": "* b b ? b"},
      {"type": "progress", "token": "b", "cap": 3, "factor": 1.5}]},
    "task": "* b b ? b",
    "target": {"horizon": 6}
  })", kData);
  const Fixture f = constraint_fixture();
  const Vocabulary& v = f.model->vocab();
  for (const char* s : {"a b b a b", "b b b", "a a", "b b a b a b"}) {
    Sequence seq;
    std::istringstream in(s);
    for (std::string t; in >> t;) seq.push_back(*v.find(t));
    seq.push_back(v.eos());
    for (std::size_t t = 1; t <= seq.size(); ++t) {
      const std::span<const Token> pre(seq.data(), t);
      CHECK(c.target.potential->log_value(pre, {}, 6) == f.potential->log_value(pre, {}, 6));
    }
  }
}

TEST_CASE("same seed gives identical rows at any worker count") {
  const RunConfig cfg = parse_run_config(kSmall);
  std::ostringstream a, b;
  write_summary_csv(cfg, run_replications(cfg, 1), a);
  write_summary_csv(cfg, run_replications(cfg, 4), b);
  CHECK(a.str() == b.str());
  RunConfig other = cfg;
  other.seed = 6;
  std::ostringstream c;
  write_summary_csv(other, run_replications(other, 1), c);
  CHECK(a.str() != c.str());
}

TEST_CASE("rows are ordered and seeds are shared across sweep points") {
  const RunConfig cfg = parse_run_config(kSmall);
  const auto rows = run_replications(cfg, 2);
  REQUIRE(rows.size() == 6);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].sweep_index == i / 3);
    CHECK(rows[i].replication == i % 3);
    CHECK(rows[i].num_particles == (i < 3 ? 4u : 8u));
    CHECK(rows[i].seed == replication_seed(5, i % 3));
  }
}

TEST_CASE("token counts equal the sum over the trace") {
  const RunConfig cfg = parse_run_config(kSmall);
  for (const auto& r : run_replications(cfg, 1)) {
    std::size_t sum = 0;
    for (const auto& t : r.trace) sum += t.tokens_this_block;
    CHECK(r.tokens == sum);
    if (!r.trace.empty()) CHECK(r.trace.back().cumulative_tokens == sum);
  }
}

TEST_CASE("zero replications writes headers only") {
  const fs::path dir = scratch("zero");
  RunConfig cfg = parse_run_config(kSmall);
  cfg.replications = 0;
  const RunOutput out = cmd_run(cfg, std::nullopt, dir, 1);
  CHECK(out.rows.empty());
  const std::string csv = slurp(dir / "summary.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1);
  CHECK(fs::exists(dir / "manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("run writes every declared file and the manifest records the config") {
  const fs::path dir = scratch("files");
  const RunOutput out = cmd_run(parse_run_config(kSmall), 17, dir, 1);
  const auto m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m["base_seed"] == 17);
  CHECK(m["config_hash"] == out.config_hash);
  for (const auto& [key, file] : m["files"].items()) CHECK(fs::exists(dir / file.get<std::string>()));
  CHECK(parse_run_config(slurp(dir / "config.json")).seed == 17);
  // Header of summary.csv matches schema.csv.
  std::istringstream schema(slurp(dir / "schema.csv"));
  std::string line, header;
  std::getline(schema, line);
  while (std::getline(schema, line)) header += (header.empty() ? "" : ",") + line.substr(0, line.find(','));
  const std::string csv = slurp(dir / "summary.csv");
  CHECK(csv.substr(0, csv.find('\n')) == header);
  fs::remove_all(dir);
}

TEST_CASE("report aggregates runs and flags duplicate seeds") {
  const fs::path dir = scratch("report");
  const RunConfig cfg = parse_run_config(kSmall);
  cmd_run(cfg, std::nullopt, dir / "one", 1);
  cmd_run(cfg, std::nullopt, dir / "two", 1);  // same seeds again
  const std::string agg = cmd_report(dir, "csv");
  std::istringstream in(agg);
  std::string header, row;
  std::getline(in, header);
  CHECK(header.rfind("run,sweep_axis,sweep_value,rows,duplicate_seeds,", 0) == 0);
  int rows = 0;
  while (std::getline(in, row)) {
    ++rows;
    CHECK(row.rfind("small,particles,", 0) == 0);
    CHECK(row.find(",6,3,") != std::string::npos);  // 6 rows, 3 repeated seeds
  }
  CHECK(rows == 2);
  CHECK(fs::exists(dir / "aggregate.csv"));
  CHECK(fs::exists(dir / "plot_data.csv"));

  const std::string jsonl = cmd_report(dir, "jsonl");
  std::istringstream jl(jsonl);
  std::string line;
  std::getline(jl, line);
  const auto j = nlohmann::json::parse(line);
  CHECK(j["duplicate_seeds"] == 3);
  CHECK(j.contains("tokens"));

  CHECK_THROWS_AS(cmd_report(dir, "xml"), ConfigError);
  std::ofstream(dir / "one" / "manifest.json") << "{ not json";
  try {
    cmd_report(dir, "csv");
    FAIL("expected a ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("one") != std::string::npos);
  }
  fs::remove_all(dir);
  CHECK_THROWS_AS(cmd_report(dir, "csv"), ConfigError);
}

TEST_CASE("cli exit codes") {
  const fs::path dir = scratch("cli");
  const std::string cfg = (kData / "configs" / "worked.json").string();
  CHECK(run_cli("run --config '" + cfg + "' --out '" + (dir / "a").string() + "'") == 0);
  CHECK(fs::exists(dir / "a" / "summary.csv"));
  CHECK(run_cli("report '" + dir.string() + "' --format jsonl") == 0);
  CHECK(run_cli("report '" + (dir / "missing").string() + "'") == 2);
  CHECK(run_cli("run --config /nonexistent.json") == 2);
  CHECK(run_cli("run") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("run --config '" + cfg + "' --out '" + (dir / "b").string() + "'", "RGSMC_WORKERS=zero") == 2);
  std::ofstream(dir / "bad.model") << "vocab: a eos*\norder: 1\n() -> a:0.5 eos:0.2\n";
  CHECK(run_cli("verify --filter exact-marginals --model '" + (dir / "bad.model").string() + "'") == 2);
  CHECK(run_cli("verify --filter exact-marginals") == 0);
  CHECK(run_cli("verify --filter mh-invariance --tamper-mh") == 1);
  CHECK(run_cli("verify --filter nothing-matches") == 2);
  fs::remove_all(dir);
}

TEST_CASE("reward-free config reproduces the base model") {
  const RunConfig cfg = parse_run_config(R"({
    "model": {"fixture": "worked"},
    "potential": {"type": "constant"},
    "smc": {"particles": 1024},
    "seed": 3
  })");
  const auto rows = run_replications(cfg, 1);
  REQUIRE(rows.size() == 1);
  REQUIRE(rows[0].tv_to_oracle.has_value());
  CHECK(*rows[0].tv_to_oracle < 0.05);
  CHECK_FALSE(rows[0].best_success.has_value());
}

TEST_CASE("report of a single replication equals the run's own values") {
  const fs::path dir = scratch("single");
  RunConfig cfg = parse_run_config(R"({"name": "one", "model": {"fixture": "worked"}, "smc": {"particles": 64}})");
  const RunOutput out = cmd_run(cfg, 8, dir / "r", 1);
  REQUIRE(out.rows.size() == 1);
  const auto j = nlohmann::json::parse(cmd_report(dir, "jsonl"));
  CHECK(j["rows"] == 1);
  CHECK(j["duplicate_seeds"] == 0);
  CHECK(j["log_Z_hat"]["mean"].get<double>() == out.rows[0].log_Z_hat);
  CHECK(j["log_Z_hat"]["std"].get<double>() == 0.0);
  CHECK(j["tv_to_oracle"]["mean"].get<double>() == *out.rows[0].tv_to_oracle);
  fs::remove_all(dir);
}
