#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "elcell/grid.hpp"

namespace elcell {

/// Small arithmetic expression evaluator for user-defined coefficient
/// models. Grammar: + - * / with the usual precedence, unary minus,
/// parentheses, the functions sin, cos, exp, numeric literals, and the
/// variables p1..pM (species concentrations), s (temperature or potential
/// slot, depending on the model it feeds), x1..x3 (position).
///
/// Expressions compile to a flat postfix program once; evaluation allocates
/// nothing and is safe to call concurrently.
class Expression {
 public:
  Expression() = default;

  /// Throws std::invalid_argument with a character position on bad input.
  static Expression parse(const std::string& text);

  double eval(std::span<const double> conc, double temp,
              const Point& pos) const;

  /// Highest p-index referenced (1-based); 0 when no concentration appears.
  int species_used() const { return species_used_; }
  bool empty() const { return program_ == nullptr; }
  const std::string& text() const { return text_; }

 private:
  struct Op;
  std::shared_ptr<const std::vector<Op>> program_;
  std::string text_;
  int species_used_ = 0;
  int stack_need_ = 0;

  friend class ExprParser;
};

} // namespace elcell
