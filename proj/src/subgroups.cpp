#include "itmle/subgroups.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <set>
#include <sstream>

#include "itmle/stats.hpp"

namespace itmle {

const char* effect_name(EffectKind e) {
  switch (e) {
    case EffectKind::Risk: return "risk";
    case EffectKind::Ard: return "ard";
    case EffectKind::Rr: return "rr";
    case EffectKind::Or: return "or";
  }
  return "?";
}

EffectKind effect_from_name(const std::string& name) {
  if (name == "risk") return EffectKind::Risk;
  if (name == "ard") return EffectKind::Ard;
  if (name == "rr") return EffectKind::Rr;
  if (name == "or") return EffectKind::Or;
  throw ValidationError("unknown effect '" + name + "' (expected risk|ard|rr|or)");
}

void EstimationConfig::validate() const {
  if (max_iterations < 1) throw ValidationError("config: max_iterations must be >= 1");
  if (!(score_tolerance > 0)) throw ValidationError("config: score_tolerance must be > 0");
  if (gamma_tolerance < 0) throw ValidationError("config: gamma_tolerance must be >= 0");
  if (!(propensity_floor > 0 && propensity_floor < 0.5)) {
    throw ValidationError("config: propensity_floor must lie in (0, 0.5)");
  }
  if (!(outcome_clip > 0 && outcome_clip < 0.5)) {
    throw ValidationError("config: outcome_clip must lie in (0, 0.5)");
  }
  if (!(alpha > 0 && alpha < 1)) throw ValidationError("config: alpha must lie in (0,1)");
  if (mc_draws < 100) throw ValidationError("config: mc_draws must be >= 100");
  if (folds < 1) throw ValidationError("config: folds must be >= 1");
  if (threads < 1) throw ValidationError("config: threads must be >= 1");
}

SubgroupFamily make_family(const ObservedSample& sample, Eigen::MatrixXd masks,
                           std::vector<std::string> labels) {
  if (masks.rows() != sample.n()) {
    throw ValidationError("subgroups: mask rows do not match the sample size");
  }
  if (static_cast<Eigen::Index>(labels.size()) != masks.cols()) {
    throw ValidationError("subgroups: label count does not match the mask count");
  }
  if (masks.cols() == 0) throw ValidationError("subgroups: at least one subgroup is required");
  {
    std::set<std::string> seen;
    for (const auto& l : labels) {
      if (l.empty()) throw ValidationError("subgroups: empty label");
      if (!seen.insert(l).second) throw ValidationError("subgroups: duplicate label '" + l + "'");
    }
  }
  for (Eigen::Index j = 0; j < masks.cols(); ++j) {
    long members = 0, treated = 0, control = 0;
    for (Eigen::Index i = 0; i < masks.rows(); ++i) {
      const double m = masks(i, j);
      if (m != 0.0 && m != 1.0) {
        throw ValidationError("subgroups: mask '" + labels[static_cast<std::size_t>(j)] +
                              "' holds a value other than 0/1");
      }
      if (m == 1.0) {
        ++members;
        (sample.t[i] == 1 ? treated : control)++;
      }
    }
    if (members == 0) {
      throw ValidationError("subgroups: subgroup '" + labels[static_cast<std::size_t>(j)] +
                            "' is empty");
    }
    if (treated == 0 || control == 0) {
      throw ValidationError("subgroups: subgroup '" + labels[static_cast<std::size_t>(j)] +
                            "' has no units in arm " + (treated == 0 ? "1" : "0"));
    }
  }
  SubgroupFamily fam;
  fam.masks = std::move(masks);
  fam.labels = std::move(labels);
  fam.share = fam.masks.colwise().mean();
  return fam;
}

SubgroupFamily family_from_masks(const ObservedSample& sample, const Eigen::MatrixXd& masks,
                                 const std::vector<std::string>& labels) {
  return make_family(sample, masks, labels);
}

namespace {

struct Term {
  double coef;
  std::string var;
};

struct Comparison {
  std::vector<Term> terms;
  std::string op;       // <, <=, >, >=
  bool quantile_bound;  // bound is qP of the linear form
  double bound;         // number, or P when quantile_bound
};

struct ParsedExpr {
  bool everyone = false;
  std::vector<Comparison> comparisons;
};

class Lexer {
 public:
  explicit Lexer(const std::string& s) : s_(s) {}

  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool done() {
    skip_ws();
    return pos_ >= s_.size();
  }
  char peek() {
    skip_ws();
    return pos_ < s_.size() ? s_[pos_] : '\0';
  }
  bool accept(char c) {
    skip_ws();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  std::string take_op() {
    skip_ws();
    if (pos_ >= s_.size() || (s_[pos_] != '<' && s_[pos_] != '>')) return "";
    std::string op(1, s_[pos_++]);
    if (pos_ < s_.size() && s_[pos_] == '=') op += s_[pos_++];
    return op;
  }
  bool take_number(double* out) {
    skip_ws();
    const char* start = s_.c_str() + pos_;
    char* end = nullptr;
    const double v = std::strtod(start, &end);
    if (end == start) return false;
    pos_ += static_cast<std::size_t>(end - start);
    *out = v;
    return true;
  }
  std::string take_identifier() {
    skip_ws();
    std::size_t b = pos_;
    if (b < s_.size() &&
        (std::isalpha(static_cast<unsigned char>(s_[b])) || s_[b] == '_')) {
      std::size_t e = b + 1;
      while (e < s_.size() &&
             (std::isalnum(static_cast<unsigned char>(s_[e])) || s_[e] == '_')) {
        ++e;
      }
      pos_ = e;
      return s_.substr(b, e - b);
    }
    return "";
  }
  std::string rest() { return s_.substr(pos_); }

  std::size_t position() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  const std::string& s_;
  std::size_t pos_ = 0;
};

[[noreturn]] void parse_fail(const std::string& label, const std::string& what) {
  throw ValidationError("subgroups: definition '" + label + "': " + what);
}

ParsedExpr parse_expression(const std::string& label, const std::string& expr) {
  Lexer lex(expr);
  ParsedExpr parsed;
  {
    Lexer probe(expr);
    const std::string word = probe.take_identifier();
    if (word == "all" && probe.done()) {
      parsed.everyone = true;
      return parsed;
    }
  }
  for (;;) {
    Comparison cmp;
    double sign = 1.0;
    for (;;) {
      double coef = 1.0;
      if (lex.peek() == '-' || lex.peek() == '+') {
        // leading sign on the first term
        sign = lex.accept('-') ? -1.0 : (lex.accept('+'), 1.0);
      }
      double num;
      std::string var;
      const std::size_t save = lex.position();
      if (lex.take_number(&num)) {
        if (lex.accept('*')) {
          coef = num;
          var = lex.take_identifier();
          if (var.empty()) parse_fail(label, "expected covariate after '" + std::to_string(num) + "*'");
        } else {
          lex.seek(save);
          var = "";
        }
      } else {
        var = lex.take_identifier();
        if (var.empty()) parse_fail(label, "expected a term near '" + lex.rest() + "'");
      }
      if (var.empty()) parse_fail(label, "a bare number cannot stand on the left side");
      cmp.terms.push_back({sign * coef, var});
      sign = 1.0;
      if (lex.accept('+')) {
        continue;
      }
      if (lex.peek() == '-') {
        lex.accept('-');
        sign = -1.0;
        continue;
      }
      break;
    }
    cmp.op = lex.take_op();
    if (cmp.op.empty()) parse_fail(label, "expected one of < <= > >= near '" + lex.rest() + "'");
    const std::size_t save = lex.position();
    const std::string ident = lex.take_identifier();
    if (ident.size() >= 2 && ident[0] == 'q' &&
        (std::isdigit(static_cast<unsigned char>(ident[1])))) {
      // Quantile bound written as qP with P in [0,1] (e.g. q0.1). The lexer
      // stopped at '.', so re-lex the number from just after 'q'.
      lex.seek(save);
      lex.accept('q');
      double p;
      if (!lex.take_number(&p) || p < 0.0 || p > 1.0) {
        parse_fail(label, "quantile bound must be q<number in [0,1]>");
      }
      cmp.quantile_bound = true;
      cmp.bound = p;
    } else {
      lex.seek(save);
      double b;
      if (!lex.take_number(&b)) parse_fail(label, "expected a bound near '" + lex.rest() + "'");
      cmp.quantile_bound = false;
      cmp.bound = b;
    }
    parsed.comparisons.push_back(std::move(cmp));
    if (lex.done()) break;
    if (!lex.accept('&')) parse_fail(label, "expected '&' near '" + lex.rest() + "'");
  }
  return parsed;
}

}  // namespace

std::vector<SubgroupSpec> parse_subgroup_specs(const std::string& text) {
  std::vector<SubgroupSpec> specs;
  std::stringstream ss(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto colon = line.find(':');
    bool blank = std::all_of(line.begin(), line.end(),
                             [](unsigned char c) { return std::isspace(c); });
    if (blank) continue;
    if (colon == std::string::npos) {
      throw ValidationError("subgroups: line " + std::to_string(line_no) +
                            " is missing the 'label:' prefix");
    }
    SubgroupSpec spec;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    spec.label = trim(line.substr(0, colon));
    spec.expression = trim(line.substr(colon + 1));
    if (spec.label.empty()) {
      throw ValidationError("subgroups: line " + std::to_string(line_no) + " has an empty label");
    }
    if (spec.expression.empty()) {
      throw ValidationError("subgroups: line " + std::to_string(line_no) +
                            " has an empty definition");
    }
    specs.push_back(std::move(spec));
  }
  if (specs.empty()) throw ValidationError("subgroups: no definitions found");
  return specs;
}

SubgroupFamily build_subgroups(const ObservedSample& sample,
                               const std::vector<SubgroupSpec>& specs) {
  const Eigen::Index n = sample.n();
  Eigen::MatrixXd masks = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(specs.size()));
  std::vector<std::string> labels;
  labels.reserve(specs.size());
  for (std::size_t s = 0; s < specs.size(); ++s) {
    const ParsedExpr parsed = parse_expression(specs[s].label, specs[s].expression);
    Eigen::ArrayXd keep = Eigen::ArrayXd::Ones(n);
    for (const Comparison& cmp : parsed.comparisons) {
      Eigen::VectorXd lin = Eigen::VectorXd::Zero(n);
      for (const Term& term : cmp.terms) {
        const auto it = std::find(sample.x_names.begin(), sample.x_names.end(), term.var);
        if (it == sample.x_names.end()) {
          parse_fail(specs[s].label, "unknown covariate '" + term.var + "'");
        }
        const auto col = static_cast<Eigen::Index>(it - sample.x_names.begin());
        lin += term.coef * sample.x.col(col);
      }
      double bound = cmp.bound;
      if (cmp.quantile_bound) {
        std::vector<double> values(lin.data(), lin.data() + n);
        bound = quantile_type7_of(std::move(values), cmp.bound);
      }
      for (Eigen::Index i = 0; i < n; ++i) {
        const double v = lin[i];
        const bool ok = cmp.op == "<"    ? v < bound
                        : cmp.op == "<=" ? v <= bound
                        : cmp.op == ">"  ? v > bound
                                         : v >= bound;
        if (!ok) keep[i] = 0.0;
      }
    }
    if (!parsed.everyone) {
      masks.col(static_cast<Eigen::Index>(s)) = keep.matrix();
    } else {
      masks.col(static_cast<Eigen::Index>(s)).setOnes();
    }
    labels.push_back(specs[s].label);
  }
  return make_family(sample, std::move(masks), std::move(labels));
}

Eigen::MatrixXd decile_masks(const Eigen::VectorXd& values) {
  const Eigen::Index n = values.size();
  std::vector<double> sorted(values.data(), values.data() + n);
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cut(11);
  cut[0] = -std::numeric_limits<double>::infinity();
  cut[10] = std::numeric_limits<double>::infinity();
  for (int k = 1; k <= 9; ++k) cut[static_cast<std::size_t>(k)] = quantile_type7(sorted, k / 10.0);
  Eigen::MatrixXd masks = Eigen::MatrixXd::Zero(n, 10);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < 10; ++j) {
      if (values[i] > cut[static_cast<std::size_t>(j)] &&
          values[i] < cut[static_cast<std::size_t>(j + 1)]) {
        masks(i, j) = 1.0;
      }
    }
  }
  return masks;
}

}  // namespace itmle
