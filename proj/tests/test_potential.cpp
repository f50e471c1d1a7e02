#include <cmath>
#include <regex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "rgsmc/potential.hpp"

using namespace rgsmc;

namespace {

const Vocabulary kVocab({"a", "b", "c", "eos"}, 3);

Sequence seq(const std::string& s) {
  Sequence out;
  for (char ch : s) out.push_back(ch == '$' ? 3 : ch - 'a');
  return out;
}

// Reference matcher: translate the token pattern into a regex over letters.
bool regex_matches(const std::string& pattern, const std::string& letters) {
  std::string re;
  std::istringstream in(pattern);
  for (std::string w; in >> w;) re += w == "*" ? ".*" : w == "?" ? "." : w;
  return std::regex_match(letters, std::regex(re));
}

}  // namespace

TEST_CASE("token patterns agree with a regex reference") {
  const std::vector<std::string> patterns{"* b b ? b", "a *", "* c", "?", "*", "a ? * c", "* * b", ""};
  std::vector<std::string> words{""};
  for (int len = 1; len <= 6; ++len) {
    std::vector<std::string> next;
    for (const auto& w : words) {
      if (static_cast<int>(w.size()) == len - 1) {
        for (char ch : std::string("abc")) next.push_back(w + ch);
      }
    }
    words.insert(words.end(), next.begin(), next.end());
  }
  for (const auto& p : patterns) {
    TokenPattern tp(p, kVocab);
    for (const auto& w : words) {
      INFO(p << " vs " << w);
      CHECK(tp.matches(seq(w)) == regex_matches(p, w));
    }
  }
  CHECK_THROWS_AS(TokenPattern("a d", kVocab), InvalidParameter);
}

TEST_CASE("terminal indicator fires only at completion") {
  TerminalIndicator ind(TokenPattern("* b b", kVocab), kVocab.eos(), 0.0);
  CHECK(ind.log_value(seq("ab"), "", 4) == 0.0);
  CHECK(ind.log_value(seq("abc"), "", 4) == 0.0);
  CHECK(ind.log_value(seq("abca"), "", 4) == kNegInf);
  CHECK(ind.log_value(seq("acbb"), "", 4) == 0.0);
  CHECK(ind.log_value(seq("bb$"), "", 4) == 0.0);
  CHECK(ind.log_value(seq("ba$"), "", 4) == kNegInf);
  CHECK(ind.satisfied(seq("abb$$")));
  TerminalIndicator soft(TokenPattern("* b b", kVocab), kVocab.eos(), 0.25);
  CHECK(soft.log_value(seq("abca"), "", 4) == doctest::Approx(std::log(0.25)));
  CHECK_THROWS_AS(TerminalIndicator(TokenPattern("a", kVocab), 3, 1.5), InvalidParameter);
}

TEST_CASE("log_psi pins post-eos positions to one") {
  TerminalIndicator ind(TokenPattern("b", kVocab), kVocab.eos(), 0.0);
  CHECK(log_psi(ind, kVocab, seq("a$"), "", 4) == kNegInf);
  CHECK(log_psi(ind, kVocab, seq("a$$"), "", 4) == 0.0);
  CHECK(log_psi(ind, kVocab, seq("a$$$"), "", 4) == 0.0);
}

TEST_CASE("step score and progress values") {
  StepScore s({{1, 2, std::log(2.0)}, {0, 0, std::log(0.5)}});
  CHECK(s.log_value(seq("ab"), "", 3) == doctest::Approx(std::log(2.0)));
  CHECK(s.log_value(seq("b"), "", 3) == 0.0);
  CHECK(s.log_value(seq("ba"), "", 3) == doctest::Approx(std::log(0.5)));
  StepScore zero({{2, 0, kNegInf}});
  CHECK(zero.log_value(seq("c"), "", 3) == kNegInf);

  CountProgress p(1, 2, std::log(1.5));
  CHECK(p.log_value(seq("b"), "", 5) == doctest::Approx(std::log(1.5)));
  CHECK(p.log_value(seq("bb"), "", 5) == doctest::Approx(std::log(1.5)));
  CHECK(p.log_value(seq("bbb"), "", 5) == 0.0);
  CHECK(p.log_value(seq("ba"), "", 5) == 0.0);
}

TEST_CASE("product potential multiplies and short-circuits zero") {
  auto a = std::make_shared<StepScore>(std::vector<StepScore::Rule>{{0, 0, std::log(3.0)}});
  auto b = std::make_shared<CountProgress>(0, 5, std::log(2.0));
  ProductPotential prod({a, b});
  CHECK(prod.log_value(seq("a"), "", 3) == doctest::Approx(std::log(6.0)));
  auto never = std::make_shared<TerminalIndicator>(TokenPattern("c", kVocab), 3, 0.0);
  ProductPotential gated({never, a});
  CHECK(gated.log_value(seq("aaa"), "", 3) == kNegInf);
  CHECK(gated.log_value(seq("aa"), "", 3) == doctest::Approx(std::log(3.0)));
}

TEST_CASE("memoized potential matches its inner potential across threads") {
  auto inner = std::make_shared<CountProgress>(1, 3, std::log(1.5));
  MemoizedPotential memo(inner);
  std::vector<std::thread> pool;
  std::vector<int> mismatches(4, 0);
  for (int w = 0; w < 4; ++w) {
    pool.emplace_back([&, w] {
      for (int i = 0; i < 500; ++i) {
        Sequence s;
        for (int j = 0, x = i; j < 5; ++j, x /= 3) s.push_back(x % 3);
        if (memo.log_value(s, "", 5) != inner->log_value(s, "", 5)) ++mismatches[w];
      }
    });
  }
  for (auto& t : pool) t.join();
  for (int m : mismatches) CHECK(m == 0);
  CHECK(memo.cache_size() == 243);
}
