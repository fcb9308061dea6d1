#pragma once

// Minimal arithmetic expressions for configuration files:
//   numbers, variables, named constants, + - * / ^, unary minus,
//   parentheses, and the functions sgn, exp, abs, sqrt, log.
// Expressions are compiled once into a postfix program and evaluated on
// doubles or on second-order jets.

#include "zsde/errors.hpp"
#include "zsde/jet.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace zsde {

class Expression {
 public:
  Expression() = default;

  /// Compiles `text`. `variables` names the positional inputs; `constants`
  /// are substituted by value at compile time.
  static Expression compile(const std::string& text, const std::vector<std::string>& variables,
                            const std::map<std::string, double>& constants = {}) {
    Parser parser(text, variables, constants);
    Expression e;
    e.text_ = text;
    e.nvars_ = static_cast<int>(variables.size());
    e.program_ = parser.parse();
    e.max_depth_ = stack_depth(e.program_);
    if (e.max_depth_ > kMaxStack)
      throw ConfigError("expression nests too deeply: '" + text + "'");
    return e;
  }

  const std::string& text() const noexcept { return text_; }
  int variable_count() const noexcept { return nvars_; }
  bool empty() const noexcept { return program_.empty(); }

  double operator()(std::span<const double> x) const { return run<double>(x, [](double v) { return v; }); }

  double operator()(const Vec& x) const {
    return (*this)(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
  }

  /// Value, gradient and Hessian with respect to all variables.
  Jet jet(const Vec& x) const {
    const int n = static_cast<int>(x.size());
    std::array<Jet, kMaxDim> seeds;
    for (int i = 0; i < n && i < kMaxDim; ++i) seeds[static_cast<std::size_t>(i)] = Jet::variable(x(i), i, n);
    return run_jet(seeds, n);
  }

 private:
  static constexpr int kMaxStack = 48;

  enum class Op { constant, variable, add, sub, mul, div, pow, neg, sgn, exp, abs, sqrt, log };

  struct Instr {
    Op op;
    double value = 0.0;
    int index = 0;
  };

  std::string text_;
  int nvars_ = 0;
  int max_depth_ = 0;
  std::vector<Instr> program_;

  static int stack_depth(const std::vector<Instr>& program) {
    int depth = 0;
    int best = 0;
    for (const auto& in : program) {
      switch (in.op) {
        case Op::constant:
        case Op::variable:
          ++depth;
          break;
        case Op::add:
        case Op::sub:
        case Op::mul:
        case Op::div:
        case Op::pow:
          --depth;
          break;
        default:
          break;
      }
      best = std::max(best, depth);
    }
    return best;
  }

  template <class T, class Lift>
  T run(std::span<const double> x, Lift lift) const {
    if (static_cast<int>(x.size()) < nvars_)
      throw InputError("expression '" + text_ + "' expects " + std::to_string(nvars_) + " variables");
    thread_local std::vector<T> storage(kMaxStack);
    T* stack = storage.data();
    int top = 0;
    for (const auto& in : program_) {
      switch (in.op) {
        case Op::constant:
          stack[static_cast<std::size_t>(top++)] = lift(in.value);
          break;
        case Op::variable:
          stack[static_cast<std::size_t>(top++)] = lift(x[static_cast<std::size_t>(in.index)]);
          break;
        default:
          apply<T>(in.op, stack, top);
      }
    }
    return stack[0];
  }

  Jet run_jet(const std::array<Jet, kMaxDim>& seeds, int n) const {
    if (n < nvars_) throw InputError("expression '" + text_ + "' expects " + std::to_string(nvars_) + " variables");
    thread_local std::vector<Jet> storage(kMaxStack);
    Jet* stack = storage.data();
    int top = 0;
    for (const auto& in : program_) {
      switch (in.op) {
        case Op::constant:
          stack[static_cast<std::size_t>(top++)] = Jet::constant(in.value, n);
          break;
        case Op::variable:
          stack[static_cast<std::size_t>(top++)] = seeds[static_cast<std::size_t>(in.index)];
          break;
        default:
          apply<Jet>(in.op, stack, top);
      }
    }
    return stack[0];
  }

  template <class T>
  static void apply(Op op, T* stack, int& top) {
    using std::abs;
    using std::exp;
    using std::log;
    using std::pow;
    using std::sqrt;
    auto& a = stack[static_cast<std::size_t>(top - 1)];
    switch (op) {
      case Op::neg:
        a = -a;
        return;
      case Op::sgn:
        a = sgn(a);
        return;
      case Op::exp:
        a = exp(a);
        return;
      case Op::abs:
        a = abs(a);
        return;
      case Op::sqrt:
        a = sqrt(a);
        return;
      case Op::log:
        a = log(a);
        return;
      default:
        break;
    }
    auto& lhs = stack[static_cast<std::size_t>(top - 2)];
    const auto& rhs = a;
    switch (op) {
      case Op::add:
        lhs = lhs + rhs;
        break;
      case Op::sub:
        lhs = lhs - rhs;
        break;
      case Op::mul:
        lhs = lhs * rhs;
        break;
      case Op::div:
        lhs = lhs / rhs;
        break;
      case Op::pow:
        lhs = pow(lhs, rhs);
        break;
      default:
        break;
    }
    --top;
  }

  class Parser {
   public:
    Parser(const std::string& text, const std::vector<std::string>& variables,
           const std::map<std::string, double>& constants)
        : text_(text), variables_(variables), constants_(constants) {}

    std::vector<Instr> parse() {
      skip_space();
      if (pos_ >= text_.size()) fail("empty expression");
      parse_sum();
      skip_space();
      if (pos_ != text_.size()) fail("unexpected character");
      return std::move(out_);
    }

   private:
    const std::string& text_;
    const std::vector<std::string>& variables_;
    const std::map<std::string, double>& constants_;
    std::size_t pos_ = 0;
    std::vector<Instr> out_;

    [[noreturn]] void fail(const std::string& why) const {
      throw ConfigError("cannot parse expression '" + text_ + "' at offset " + std::to_string(pos_) + ": " + why);
    }

    void skip_space() {
      while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c) {
      skip_space();
      if (pos_ < text_.size() && text_[pos_] == c) {
        ++pos_;
        return true;
      }
      return false;
    }

    void parse_sum() {
      parse_product();
      for (;;) {
        if (accept('+')) {
          parse_product();
          out_.push_back({Op::add});
        } else if (accept('-')) {
          parse_product();
          out_.push_back({Op::sub});
        } else {
          return;
        }
      }
    }

    void parse_product() {
      parse_unary();
      for (;;) {
        if (accept('*')) {
          parse_unary();
          out_.push_back({Op::mul});
        } else if (accept('/')) {
          parse_unary();
          out_.push_back({Op::div});
        } else {
          return;
        }
      }
    }

    void parse_unary() {
      if (accept('-')) {
        parse_unary();
        out_.push_back({Op::neg});
      } else if (accept('+')) {
        parse_unary();
      } else {
        parse_power();
      }
    }

    void parse_power() {
      parse_primary();
      if (accept('^')) {
        parse_unary();  // right-associative, allows 2^-1
        out_.push_back({Op::pow});
      }
    }

    void parse_primary() {
      skip_space();
      if (pos_ >= text_.size()) fail("unexpected end of input");
      const char c = text_[pos_];
      if (c == '(') {
        ++pos_;
        parse_sum();
        if (!accept(')')) fail("expected ')'");
        return;
      }
      if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
        const char* begin = text_.c_str() + pos_;
        char* end = nullptr;
        const double value = std::strtod(begin, &end);
        if (end == begin) fail("bad number");
        pos_ += static_cast<std::size_t>(end - begin);
        out_.push_back({Op::constant, value});
        return;
      }
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        const std::size_t start = pos_;
        while (pos_ < text_.size() &&
               (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
          ++pos_;
        const std::string name = text_.substr(start, pos_ - start);
        if (accept('(')) {
          parse_sum();
          if (!accept(')')) fail("expected ')' after argument of " + name);
          out_.push_back({function_op(name)});
          return;
        }
        for (std::size_t i = 0; i < variables_.size(); ++i) {
          if (variables_[i] == name) {
            out_.push_back({Op::variable, 0.0, static_cast<int>(i)});
            return;
          }
        }
        if (auto it = constants_.find(name); it != constants_.end()) {
          out_.push_back({Op::constant, it->second});
          return;
        }
        fail("unknown name '" + name + "'");
      }
      fail(std::string("unexpected character '") + c + "'");
    }

    Op function_op(const std::string& name) const {
      if (name == "sgn") return Op::sgn;
      if (name == "exp") return Op::exp;
      if (name == "abs") return Op::abs;
      if (name == "sqrt") return Op::sqrt;
      if (name == "log") return Op::log;
      fail("unknown function '" + name + "'");
    }
  };
};

/// Variable names x1..xd.
inline std::vector<std::string> coordinate_names(int dim) {
  std::vector<std::string> names;
  for (int i = 1; i <= dim; ++i) names.push_back("x" + std::to_string(i));
  return names;
}

}  // namespace zsde
