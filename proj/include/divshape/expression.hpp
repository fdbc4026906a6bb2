#pragma once

#include <span>
#include <string>
#include <vector>

namespace divshape {

/// Scalar arithmetic expression over named variables, compiled to a stack
/// program. Supports + - * / ^, unary minus, the constant pi and the
/// functions sin cos tan exp log sqrt abs min max pow.
class Expression {
 public:
  Expression() = default;
  /// Throws ConfigError naming the column of a syntax error or an unknown name.
  static Expression parse(const std::string& text, const std::vector<std::string>& variables);

  /// Values are given in the order of the variable list.
  double operator()(std::span<const double> values) const;
  const std::string& text() const { return text_; }
  bool empty() const { return program_.empty(); }
  /// True when the named variable occurs in the expression.
  bool uses(const std::string& variable) const;

  enum class Op : unsigned char { Const, Var, Neg, Add, Sub, Mul, Div, Pow, Call1, Min, Max };
  struct Instr {
    Op op;
    double value = 0.0;  ///< constant
    int index = 0;       ///< variable index or unary function id
  };

 private:
  std::string text_;
  std::vector<std::string> variables_;
  std::vector<Instr> program_;
  int max_stack_ = 0;
};

}  // namespace divshape
