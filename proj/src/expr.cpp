#include "elcell/expr.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

namespace elcell {

enum class OpCode {
  push_number,
  push_conc,  // index = species slot (0-based)
  push_temp,
  push_pos,  // index = axis
  add,
  sub,
  mul,
  div,
  neg,
  fn_sin,
  fn_cos,
  fn_exp,
};

struct Expression::Op {
  OpCode code;
  double number = 0.0;
  int index = 0;
};

namespace {

[[noreturn]] void fail(const std::string& text, std::size_t pos,
                       const std::string& what) {
  throw std::invalid_argument("expression error at position " +
                              std::to_string(pos) + " in \"" + text +
                              "\": " + what);
}

} // namespace

// Recursive-descent parser emitting postfix ops.
class ExprParser {
 public:
  ExprParser(const std::string& text, std::vector<Expression::Op>& out)
      : text_(text), out_(out) {}

  void run() {
    parse_sum();
    skip_space();
    if (pos_ != text_.size()) fail(text_, pos_, "unexpected trailing input");
    if (out_.empty()) fail(text_, 0, "empty expression");
  }

  int species_used = 0;
  int max_depth = 0;

 private:
  const std::string& text_;
  std::vector<Expression::Op>& out_;
  std::size_t pos_ = 0;
  int depth_ = 0;

  void emit(OpCode code, double number = 0.0, int index = 0) {
    out_.push_back({code, number, index});
    switch (code) {
      case OpCode::push_number:
      case OpCode::push_conc:
      case OpCode::push_temp:
      case OpCode::push_pos:
        ++depth_;
        max_depth = std::max(max_depth, depth_);
        break;
      case OpCode::add:
      case OpCode::sub:
      case OpCode::mul:
      case OpCode::div:
        --depth_;
        break;
      default:
        break;  // unary ops keep the depth
    }
  }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_])))
      ++pos_;
  }

  bool eat(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void parse_sum() {
    parse_term();
    for (;;) {
      if (eat('+')) {
        parse_term();
        emit(OpCode::add);
      } else if (eat('-')) {
        parse_term();
        emit(OpCode::sub);
      } else {
        return;
      }
    }
  }

  void parse_term() {
    parse_unary();
    for (;;) {
      if (eat('*')) {
        parse_unary();
        emit(OpCode::mul);
      } else if (eat('/')) {
        parse_unary();
        emit(OpCode::div);
      } else {
        return;
      }
    }
  }

  void parse_unary() {
    if (eat('-')) {
      parse_unary();
      emit(OpCode::neg);
      return;
    }
    parse_primary();
  }

  void parse_primary() {
    skip_space();
    if (pos_ >= text_.size()) fail(text_, pos_, "unexpected end of input");
    const char c = text_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      parse_number();
      return;
    }
    if (std::isalpha(static_cast<unsigned char>(c))) {
      parse_name();
      return;
    }
    if (c == '(') {
      ++pos_;
      parse_sum();
      if (!eat(')')) fail(text_, pos_, "expected ')'");
      return;
    }
    fail(text_, pos_, std::string("unexpected character '") + c + "'");
  }

  void parse_number() {
    const char* start = text_.c_str() + pos_;
    char* end = nullptr;
    const double value = std::strtod(start, &end);
    if (end == start) fail(text_, pos_, "bad numeric literal");
    pos_ += static_cast<std::size_t>(end - start);
    emit(OpCode::push_number, value);
  }

  void parse_name() {
    const std::size_t start = pos_;
    while (pos_ < text_.size() &&
           (std::isalnum(static_cast<unsigned char>(text_[pos_])) ||
            text_[pos_] == '_'))
      ++pos_;
    const std::string name = text_.substr(start, pos_ - start);

    if (name == "s") {
      emit(OpCode::push_temp);
      return;
    }
    if (name.size() >= 2 && name[0] == 'p') {
      const int idx = parse_positive_index(name.substr(1), start);
      if (idx > 0) {
        species_used = std::max(species_used, idx);
        emit(OpCode::push_conc, 0.0, idx - 1);
        return;
      }
    }
    if (name.size() == 2 && name[0] == 'x' && name[1] >= '1' && name[1] <= '3') {
      emit(OpCode::push_pos, 0.0, name[1] - '1');
      return;
    }
    if (name == "sin" || name == "cos" || name == "exp") {
      if (!eat('(')) fail(text_, pos_, "expected '(' after " + name);
      parse_sum();
      if (!eat(')')) fail(text_, pos_, "expected ')'");
      emit(name == "sin"   ? OpCode::fn_sin
           : name == "cos" ? OpCode::fn_cos
                           : OpCode::fn_exp);
      return;
    }
    fail(text_, start, "unknown identifier '" + name + "'");
  }

  int parse_positive_index(const std::string& digits, std::size_t at) {
    if (digits.empty()) return 0;
    int v = 0;
    for (char d : digits) {
      if (!std::isdigit(static_cast<unsigned char>(d))) return 0;
      v = v * 10 + (d - '0');
      if (v > 64) fail(text_, at, "species index out of range");
    }
    return v;
  }
};

Expression Expression::parse(const std::string& text) {
  auto program = std::make_shared<std::vector<Op>>();
  ExprParser parser(text, *program);
  parser.run();
  Expression e;
  e.program_ = std::move(program);
  e.text_ = text;
  e.species_used_ = parser.species_used;
  e.stack_need_ = parser.max_depth;
  if (e.stack_need_ > 64)
    fail(text, 0, "expression too deeply nested");
  return e;
}

double Expression::eval(std::span<const double> conc, double temp,
                        const Point& pos) const {
  if (program_ == nullptr)
    throw std::logic_error("Expression: eval on an empty expression");
  if (species_used_ > static_cast<int>(conc.size()))
    throw std::invalid_argument(
        "Expression: references p" + std::to_string(species_used_) +
        " but only " + std::to_string(conc.size()) + " species supplied");

  double stack[64];
  int top = -1;
  for (const Op& op : *program_) {
    switch (op.code) {
      case OpCode::push_number: stack[++top] = op.number; break;
      case OpCode::push_conc:   stack[++top] = conc[op.index]; break;
      case OpCode::push_temp:   stack[++top] = temp; break;
      case OpCode::push_pos:    stack[++top] = pos[op.index]; break;
      case OpCode::add: --top; stack[top] += stack[top + 1]; break;
      case OpCode::sub: --top; stack[top] -= stack[top + 1]; break;
      case OpCode::mul: --top; stack[top] *= stack[top + 1]; break;
      case OpCode::div: --top; stack[top] /= stack[top + 1]; break;
      case OpCode::neg:    stack[top] = -stack[top]; break;
      case OpCode::fn_sin: stack[top] = std::sin(stack[top]); break;
      case OpCode::fn_cos: stack[top] = std::cos(stack[top]); break;
      case OpCode::fn_exp: stack[top] = std::exp(stack[top]); break;
    }
  }
  return stack[0];
}

} // namespace elcell
