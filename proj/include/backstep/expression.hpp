#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace backstep {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

// Arithmetic over the variables t and x.
// Precedence: ^ (right-assoc) > unary minus > * / > + -.
class Expression {
 public:
  enum class Op { Const, VarT, VarX, Add, Sub, Mul, Div, Pow, Neg, Exp, Log, Sin, Cos };

  struct Node {
    Op op = Op::Const;
    double value = 0.0;
    std::shared_ptr<const Node> lhs, rhs;
  };

  Expression();
  explicit Expression(double constant);

  static Expression parse(std::string_view text);

  double operator()(double t, double x) const;

  // Fully parenthesized; parse(str()) reproduces the tree.
  std::string str() const;

  bool depends_on_t() const { return uses_t_; }
  bool depends_on_x() const { return uses_x_; }
  std::optional<double> constant() const;

  const Node& root() const { return *root_; }

  friend bool operator==(const Expression& a, const Expression& b);

 private:
  explicit Expression(std::shared_ptr<const Node> root);
  void compile();

  struct Instr {
    Op op;
    double value;
  };

  std::shared_ptr<const Node> root_;
  std::vector<Instr> code_;
  int max_stack_ = 0;
  bool uses_t_ = false;
  bool uses_x_ = false;
};

Expression parse_expression(std::string_view text);

}  // namespace backstep
