#pragma once

// Bundled desk-scale instances. Model texts mirror the files under data/.

#include <memory>
#include <string>

#include "rgsmc/model.hpp"
#include "rgsmc/potential.hpp"
#include "rgsmc/target.hpp"

namespace rgsmc {

struct Fixture {
  std::string name;
  std::shared_ptr<const TabularModel> model;
  std::shared_ptr<const RewardPotential> potential;
  std::size_t horizon = 1;
  /// Success predicate of the task, when it has one.
  std::shared_ptr<const TerminalIndicator> task;

  TargetSpec spec(Family family, double alpha, std::size_t block_size = 1) const;
};

/// Two-token worked example: p(x1=1) = 0.8, p(x2=1 | x1) = 0.6,
/// psi_2 = 2 iff x2 = 1, T = 2. Enumerated Z = 1.6 at alpha = 1.
extern const char* const kWorkedModelText;
Fixture worked_fixture();

/// Vocab-3 (a, b, eos), T = 6 constraint task with a sparse terminal
/// indicator and a process-reward style step score.
extern const char* const kConstraintModelText;
Fixture constraint_fixture();

/// Seeded random order-1 table over `non_eos` tokens plus eos, with a
/// random step-score potential. Used for fuzzing against the oracle.
Fixture random_fixture(std::uint64_t seed, std::size_t non_eos, std::size_t horizon,
                       double eos_mass = 0.1, double concentration = 1.0);

}  // namespace rgsmc
