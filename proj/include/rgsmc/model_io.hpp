#pragma once

// Text format for tabular models:
//
//   # comment
//   vocab: 0 1 eos*          token names; the one marked '*' is eos
//   order: 1                 optional; defaults to the longest context
//   () -> 0:0.2 1:0.8        row for the empty context (start of sequence)
//   0 -> 0:0.4 1:0.6         row for context "0"
//   [q1] 1 -> 0:1            row only for prompt q1
//   default -> 0:0.5 1:0.5   fallback row
//
// Tokens missing from a row have probability 0. Every row must sum to 1
// within 1e-9.

#include <iosfwd>
#include <memory>
#include <string>

#include "rgsmc/model.hpp"

namespace rgsmc {

std::shared_ptr<TabularModel> parse_tabular_model(const std::string& text);
std::shared_ptr<TabularModel> load_tabular_model(const std::string& path);
std::string format_tabular_model(const TabularModel& model);

}  // namespace rgsmc
