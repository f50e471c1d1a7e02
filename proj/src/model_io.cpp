#include "rgsmc/model_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace rgsmc {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_ws(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

std::string describe_context(const TabularModel::Context& ctx, const Vocabulary& vocab) {
  std::string out;
  if (ctx.prompt) out += "[" + *ctx.prompt + "] ";
  if (ctx.tokens.empty()) return out + "()";
  for (std::size_t i = 0; i < ctx.tokens.size(); ++i) {
    if (i) out += ' ';
    out += vocab.name(ctx.tokens[i]);
  }
  return out;
}

}  // namespace

std::shared_ptr<TabularModel> parse_tabular_model(const std::string& text) {
  std::istringstream in(text);
  std::optional<Vocabulary> vocab;
  std::optional<std::size_t> order;
  std::map<TabularModel::Context, Distribution> table;
  std::optional<Distribution> default_row;
  std::size_t longest = 0;

  int lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;

    if (line.rfind("vocab:", 0) == 0) {
      if (vocab) throw ConfigError("duplicate vocab line", lineno);
      std::vector<std::string> names;
      std::optional<Token> eos;
      for (auto w : split_ws(line.substr(6))) {
        if (w.size() > 1 && w.back() == '*') {
          if (eos) throw ConfigError("more than one token marked as eos", lineno);
          w.pop_back();
          eos = static_cast<Token>(names.size());
        }
        names.push_back(w);
      }
      if (!eos) throw ConfigError("no eos token marked with '*' in vocab line", lineno);
      try {
        vocab.emplace(std::move(names), *eos);
      } catch (const Error& e) {
        throw ConfigError(e.what(), lineno);
      }
      continue;
    }
    if (line.rfind("order:", 0) == 0) {
      const std::string v = trim(line.substr(6));
      std::size_t n = 0;
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), n);
      if (ec != std::errc() || p != v.data() + v.size()) {
        throw ConfigError("order must be a non-negative integer", lineno);
      }
      order = n;
      continue;
    }
    if (!vocab) throw ConfigError("row before the vocab header", lineno);

    const auto arrow = line.find("->");
    if (arrow == std::string::npos) throw ConfigError("expected 'context -> token:prob ...'", lineno);
    std::string lhs = trim(line.substr(0, arrow));
    const std::string rhs = line.substr(arrow + 2);

    TabularModel::Context ctx;
    bool is_default = false;
    if (!lhs.empty() && lhs.front() == '[') {
      const auto close = lhs.find(']');
      if (close == std::string::npos) throw ConfigError("unterminated prompt '['", lineno);
      ctx.prompt = lhs.substr(1, close - 1);
      lhs = trim(lhs.substr(close + 1));
    }
    if (lhs == "default") {
      if (ctx.prompt) throw ConfigError("default row cannot be prompt-specific", lineno);
      is_default = true;
    } else if (lhs != "()") {
      for (const auto& w : split_ws(lhs)) {
        auto tok = vocab->find(w);
        if (!tok) throw ConfigError("unknown token '" + w + "' in context", lineno);
        ctx.tokens.push_back(*tok);
      }
      if (ctx.tokens.empty()) throw ConfigError("empty context; write () for start of sequence", lineno);
    }

    std::vector<double> probs(vocab->size(), 0.0);
    std::vector<bool> seen(vocab->size(), false);
    for (const auto& item : split_ws(rhs)) {
      const auto colon = item.rfind(':');
      if (colon == std::string::npos) throw ConfigError("expected token:prob, got '" + item + "'", lineno);
      auto tok = vocab->find(item.substr(0, colon));
      if (!tok) throw ConfigError("unknown token '" + item.substr(0, colon) + "'", lineno);
      const auto idx = static_cast<std::size_t>(*tok);
      if (seen[idx]) throw ConfigError("token '" + item.substr(0, colon) + "' listed twice", lineno);
      seen[idx] = true;
      const std::string num = item.substr(colon + 1);
      char* end = nullptr;
      const double p = std::strtod(num.c_str(), &end);
      if (num.empty() || *end != '\0' || !(p >= 0.0) || p > 1.0) {
        throw ConfigError("bad probability '" + num + "'", lineno);
      }
      probs[idx] = p;
    }
    double sum = 0.0;
    for (double p : probs) sum += p;
    const std::string where = is_default ? std::string("default") : describe_context(ctx, *vocab);
    if (std::abs(sum - 1.0) > 1e-9) {
      std::ostringstream msg;
      msg << std::setprecision(12) << "row for context '" << where << "' sums to " << sum
          << ", expected 1";
      throw ConfigError(msg.str(), lineno);
    }
    Distribution row = Distribution::from_probs(probs);
    const double norm = log_sum_exp(row.log_probs);
    for (double& lp : row.log_probs) lp -= norm;

    if (is_default) {
      if (default_row) throw ConfigError("duplicate default row", lineno);
      default_row = std::move(row);
    } else {
      longest = std::max(longest, ctx.tokens.size());
      if (!table.emplace(ctx, std::move(row)).second) {
        throw ConfigError("duplicate row for context '" + where + "'", lineno);
      }
    }
  }
  if (!vocab) throw ConfigError("missing 'vocab:' header");
  const std::size_t n = order.value_or(longest);
  if (n < longest) throw ConfigError("declared order is shorter than the longest context");
  return std::make_shared<TabularModel>(std::move(*vocab), n, std::move(table),
                                        std::move(default_row));
}

std::shared_ptr<TabularModel> load_tabular_model(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open model file '" + path + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_tabular_model(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string format_tabular_model(const TabularModel& model) {
  const Vocabulary& vocab = model.vocab();
  std::ostringstream out;
  out << std::setprecision(17);
  out << "vocab:";
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    out << ' ' << vocab.name(static_cast<Token>(i));
    if (static_cast<Token>(i) == vocab.eos()) out << '*';
  }
  out << "\norder: " << model.order() << '\n';
  auto row = [&](const Distribution& d) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (d.log_probs[i] == kNegInf) continue;
      out << ' ' << vocab.name(static_cast<Token>(i)) << ':' << std::exp(d.log_probs[i]);
    }
    out << '\n';
  };
  for (const auto& [ctx, d] : model.table()) {
    out << describe_context(ctx, vocab) << " ->";
    row(d);
  }
  if (model.default_row()) {
    out << "default ->";
    row(*model.default_row());
  }
  return out.str();
}

}  // namespace rgsmc
