#include "rgsmc/fixtures.hpp"

#include <cmath>

#include "rgsmc/model_io.hpp"

namespace rgsmc {

TargetSpec Fixture::spec(Family family, double alpha, std::size_t block_size) const {
  TargetSpec s;
  s.family = family;
  s.alpha = alpha;
  s.horizon = horizon;
  s.block_size = block_size;
  s.model = model;
  s.potential = potential;
  s.validate();
  return s;
}

const char* const kWorkedModelText = R"(# Two-token worked fixture. eos is never emitted.
vocab: 0 1 eos*
order: 1
() -> 0:0.2 1:0.8
default -> 0:0.4 1:0.6
)";

Fixture worked_fixture() {
  Fixture f;
  f.name = "worked";
  f.model = parse_tabular_model(kWorkedModelText);
  f.horizon = 2;
  const Token one = *f.model->vocab().find("1");
  f.potential = std::make_shared<StepScore>(std::vector<StepScore::Rule>{{one, 2, std::log(2.0)}});
  return f;
}

const char* const kConstraintModelText = R"(# Constraint task: 'b' is the less likely token and the task needs three of them.
vocab: a b eos*
order: 1
() -> a:0.55 b:0.4 eos:0.05
a -> a:0.55 b:0.4 eos:0.05
b -> a:0.5 b:0.45 eos:0.05
)";

Fixture constraint_fixture() {
  Fixture f;
  f.name = "constraint";
  f.model = parse_tabular_model(kConstraintModelText);
  f.horizon = 6;
  const Vocabulary& v = f.model->vocab();
  f.task = std::make_shared<TerminalIndicator>(TokenPattern("* b b ? b", v), v.eos(), 0.0);
  auto progress = std::make_shared<CountProgress>(*v.find("b"), 3, std::log(1.5));
  f.potential = std::make_shared<ProductPotential>(
      std::vector<std::shared_ptr<const RewardPotential>>{f.task, progress});
  return f;
}

Fixture random_fixture(std::uint64_t seed, std::size_t non_eos, std::size_t horizon,
                       double eos_mass, double concentration) {
  Fixture f;
  f.name = "random-" + std::to_string(seed);
  RandomModelOptions opts;
  opts.non_eos_tokens = non_eos;
  opts.order = 1;
  opts.concentration = concentration;
  opts.eos_mass = eos_mass;
  f.model = random_tabular_model(opts, seed);
  f.horizon = horizon;
  // Step rewards in [1/2, 2] for every (token, position).
  CounterRng rng(seed, Purpose::kFixture, 1);
  std::vector<StepScore::Rule> rules;
  for (std::size_t pos = 1; pos <= horizon; ++pos) {
    for (std::size_t tok = 0; tok < non_eos; ++tok) {
      rules.push_back({static_cast<Token>(tok), pos, std::log(2.0) * (2.0 * rng.uniform() - 1.0)});
    }
  }
  f.potential = std::make_shared<StepScore>(std::move(rules));
  return f;
}

}  // namespace rgsmc
