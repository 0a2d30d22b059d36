#include "backstep/expression.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace backstep {

namespace {

using Node = Expression::Node;
using Op = Expression::Op;
using NodePtr = std::shared_ptr<const Node>;

NodePtr make(Op op, NodePtr a = nullptr, NodePtr b = nullptr, double v = 0.0) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->value = v;
  n->lhs = std::move(a);
  n->rhs = std::move(b);
  return n;
}

class Parser {
 public:
  explicit Parser(std::string_view s) : s_(s) {}

  NodePtr run() {
    auto e = expr();
    skip();
    if (pos_ != s_.size()) throw ParseError("unexpected character '" + std::string(1, s_[pos_]) + "'", pos_);
    return e;
  }

 private:
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  NodePtr expr() {
    auto lhs = term();
    for (;;) {
      if (eat('+'))
        lhs = make(Op::Add, lhs, term());
      else if (eat('-'))
        lhs = make(Op::Sub, lhs, term());
      else
        return lhs;
    }
  }

  NodePtr term() {
    auto lhs = unary();
    for (;;) {
      if (eat('*'))
        lhs = make(Op::Mul, lhs, unary());
      else if (eat('/'))
        lhs = make(Op::Div, lhs, unary());
      else
        return lhs;
    }
  }

  NodePtr unary() {
    if (eat('-')) return make(Op::Neg, unary());
    if (eat('+')) return unary();
    return power();
  }

  NodePtr power() {
    auto base = primary();
    if (eat('^')) return make(Op::Pow, base, unary());
    return base;
  }

  NodePtr primary() {
    skip();
    if (pos_ >= s_.size()) throw ParseError("unexpected end of input", pos_);
    const char c = s_[pos_];
    if (c == '(') {
      ++pos_;
      auto e = expr();
      if (!eat(')')) throw ParseError("expected ')'", pos_);
      return e;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return identifier();
    throw ParseError("unexpected character '" + std::string(1, c) + "'", pos_);
  }

  NodePtr number() {
    const std::size_t start = pos_;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s_.data() + pos_, s_.data() + s_.size(), v);
    if (ec != std::errc()) throw ParseError("malformed number", start);
    pos_ = static_cast<std::size_t>(ptr - s_.data());
    return make(Op::Const, nullptr, nullptr, v);
  }

  NodePtr identifier() {
    const std::size_t start = pos_;
    while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
    const std::string_view id = s_.substr(start, pos_ - start);
    if (id == "t") return make(Op::VarT);
    if (id == "x") return make(Op::VarX);
    if (id == "pi") return make(Op::Const, nullptr, nullptr, std::numbers::pi);
    Op fn;
    if (id == "exp")
      fn = Op::Exp;
    else if (id == "log")
      fn = Op::Log;
    else if (id == "sin")
      fn = Op::Sin;
    else if (id == "cos")
      fn = Op::Cos;
    else
      throw ParseError("unknown identifier '" + std::string(id) + "'", start);
    if (!eat('(')) throw ParseError("expected '(' after " + std::string(id), pos_);
    auto arg = expr();
    if (!eat(')')) throw ParseError("expected ')'", pos_);
    return make(fn, arg);
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

std::string fmt_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void print(const Node& n, std::string& out) {
  switch (n.op) {
    case Op::Const:
      if (n.value < 0 || std::signbit(n.value)) {
        out += "(-" + fmt_number(-n.value) + ")";
      } else {
        out += fmt_number(n.value);
      }
      return;
    case Op::VarT: out += "t"; return;
    case Op::VarX: out += "x"; return;
    case Op::Neg:
      out += "(-";
      print(*n.lhs, out);
      out += ")";
      return;
    case Op::Exp:
    case Op::Log:
    case Op::Sin:
    case Op::Cos:
      out += n.op == Op::Exp ? "exp(" : n.op == Op::Log ? "log(" : n.op == Op::Sin ? "sin(" : "cos(";
      print(*n.lhs, out);
      out += ")";
      return;
    default: break;
  }
  const char* sym = n.op == Op::Add ? " + " : n.op == Op::Sub ? " - " : n.op == Op::Mul ? " * " : n.op == Op::Div ? " / " : " ^ ";
  out += "(";
  print(*n.lhs, out);
  out += sym;
  print(*n.rhs, out);
  out += ")";
}

bool equal(const Node& a, const Node& b) {
  if (a.op != b.op) return false;
  if (a.op == Op::Const) return a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
  if (static_cast<bool>(a.lhs) != static_cast<bool>(b.lhs)) return false;
  if (static_cast<bool>(a.rhs) != static_cast<bool>(b.rhs)) return false;
  if (a.lhs && !equal(*a.lhs, *b.lhs)) return false;
  if (a.rhs && !equal(*a.rhs, *b.rhs)) return false;
  return true;
}

}  // namespace

Expression::Expression() : Expression(0.0) {}

Expression::Expression(double constant) : Expression(make(Op::Const, nullptr, nullptr, constant)) {}

Expression::Expression(std::shared_ptr<const Node> root) : root_(std::move(root)) { compile(); }

Expression Expression::parse(std::string_view text) { return Expression(Parser(text).run()); }

Expression parse_expression(std::string_view text) { return Expression::parse(text); }

void Expression::compile() {
  code_.clear();
  uses_t_ = uses_x_ = false;
  int depth = 0;
  max_stack_ = 0;
  auto emit = [&](auto&& self, const Node& n) -> void {
    if (n.lhs) self(self, *n.lhs);
    if (n.rhs) self(self, *n.rhs);
    code_.push_back({n.op, n.value});
    if (n.op == Op::VarT) uses_t_ = true;
    if (n.op == Op::VarX) uses_x_ = true;
    if (!n.lhs)
      ++depth;
    else if (n.rhs)
      --depth;
    max_stack_ = std::max(max_stack_, depth);
  };
  emit(emit, *root_);
}

double Expression::operator()(double t, double x) const {
  constexpr int kInline = 32;
  double inline_stack[kInline] = {};
  std::vector<double> heap;
  double* st = inline_stack;
  if (max_stack_ > kInline) {
    heap.resize(static_cast<std::size_t>(max_stack_));
    st = heap.data();
  }
  int sp = 0;
  for (const Instr& in : code_) {
    switch (in.op) {
      case Op::Const: st[sp++] = in.value; break;
      case Op::VarT: st[sp++] = t; break;
      case Op::VarX: st[sp++] = x; break;
      case Op::Add: --sp; st[sp - 1] += st[sp]; break;
      case Op::Sub: --sp; st[sp - 1] -= st[sp]; break;
      case Op::Mul: --sp; st[sp - 1] *= st[sp]; break;
      case Op::Div: --sp; st[sp - 1] /= st[sp]; break;
      case Op::Pow: --sp; st[sp - 1] = std::pow(st[sp - 1], st[sp]); break;
      case Op::Neg: st[sp - 1] = -st[sp - 1]; break;
      case Op::Exp: st[sp - 1] = std::exp(st[sp - 1]); break;
      case Op::Log: st[sp - 1] = std::log(st[sp - 1]); break;
      case Op::Sin: st[sp - 1] = std::sin(st[sp - 1]); break;
      case Op::Cos: st[sp - 1] = std::cos(st[sp - 1]); break;
    }
  }
  return st[0];
}

std::string Expression::str() const {
  std::string out;
  print(*root_, out);
  return out;
}

std::optional<double> Expression::constant() const {
  if (uses_t_ || uses_x_) return std::nullopt;
  return (*this)(0.0, 0.0);
}

bool operator==(const Expression& a, const Expression& b) { return equal(*a.root_, *b.root_); }

}  // namespace backstep
