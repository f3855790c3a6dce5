#pragma once

// Coefficient expressions over the variables x1..xd.
//
//   expr    := term (("+"|"-") term)*
//   term    := signed (("*"|"/") signed)*
//   signed  := "-" signed | power
//   power   := primary ("^" signed)?
//   primary := number | "x"digits | func "(" expr ("," expr)* ")" | "(" expr ")"
//
// Unary minus binds looser than "^", so -x1^2 is -(x1^2). Functions:
// exp ln sqrt abs sin cos min max pow norm2. norm2(x) is the Euclidean norm
// of the whole variable vector; norm2(e1, ..., ek) the norm of its arguments.
//
// An Expr is immutable. Evaluation runs a flat postfix program compiled once
// at construction and is generic over the scalar type, so the same program
// yields values (double), first derivatives (Dual<double>) and second
// derivatives (Dual<Dual<double>>).

#include <array>
#include <cctype>
#include <charconv>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sdelab/dual.hpp"
#include "sdelab/errors.hpp"

namespace sdelab {

inline constexpr int kMaxDim = 16;

enum class NodeKind { constant, variable, negate, add, sub, mul, div, pow, call };
enum class Func { exp, ln, sqrt, abs, sin, cos, min, max, pow, norm2 };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind = NodeKind::constant;
  double value = 0.0;  // constant
  int var = 0;         // variable, 0-based
  Func func = Func::exp;
  bool all_variables = false;  // norm2(x)
  std::vector<NodePtr> args;
};

inline bool structurally_equal(const Node& a, const Node& b) {
  if (a.kind != b.kind || a.args.size() != b.args.size()) return false;
  switch (a.kind) {
    case NodeKind::constant:
      if (a.value != b.value) return false;
      break;
    case NodeKind::variable:
      if (a.var != b.var) return false;
      break;
    case NodeKind::call:
      if (a.func != b.func || a.all_variables != b.all_variables) return false;
      break;
    default:
      break;
  }
  for (std::size_t i = 0; i < a.args.size(); ++i)
    if (!structurally_equal(*a.args[i], *b.args[i])) return false;
  return true;
}

namespace detail {

inline const char* func_name(Func f) {
  switch (f) {
    case Func::exp: return "exp";
    case Func::ln: return "ln";
    case Func::sqrt: return "sqrt";
    case Func::abs: return "abs";
    case Func::sin: return "sin";
    case Func::cos: return "cos";
    case Func::min: return "min";
    case Func::max: return "max";
    case Func::pow: return "pow";
    case Func::norm2: return "norm2";
  }
  return "?";
}

inline bool lookup_func(std::string_view name, Func& out) {
  static constexpr std::pair<std::string_view, Func> table[] = {
      {"exp", Func::exp},   {"ln", Func::ln},   {"sqrt", Func::sqrt},
      {"abs", Func::abs},   {"sin", Func::sin}, {"cos", Func::cos},
      {"min", Func::min},   {"max", Func::max}, {"pow", Func::pow},
      {"norm2", Func::norm2}};
  for (const auto& [n, f] : table)
    if (n == name) {
      out = f;
      return true;
    }
  return false;
}

class Parser {
 public:
  Parser(std::string_view src, int dim) : src_(src), dim_(dim) {}

  NodePtr parse() {
    skip_ws();
    if (at_end()) fail("empty expression");
    NodePtr e = expr();
    skip_ws();
    if (!at_end()) fail(std::string("unexpected '") + peek() + "'");
    return e;
  }

 private:
  std::string_view src_;
  int dim_;
  std::size_t pos_ = 0;

  bool at_end() const { return pos_ >= src_.size(); }
  char peek() const { return at_end() ? '\0' : src_[pos_]; }

  [[noreturn]] void fail(const std::string& msg) const { fail_at(msg, pos_); }
  [[noreturn]] void fail_at(const std::string& msg, std::size_t at) const {
    int line = 1, col = 1;
    for (std::size_t i = 0; i < at && i < src_.size(); ++i) {
      if (src_[i] == '\n') {
        ++line;
        col = 1;
      } else {
        ++col;
      }
    }
    throw ParseError(msg, line, col);
  }

  void skip_ws() {
    while (!at_end() && std::isspace(static_cast<unsigned char>(peek()))) ++pos_;
  }
  bool accept(char c) {
    skip_ws();
    if (peek() == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  void expect(char c) {
    if (!accept(c)) fail(std::string("expected '") + c + "'");
  }

  static NodePtr make(NodeKind k, std::vector<NodePtr> args) {
    auto n = std::make_shared<Node>();
    n->kind = k;
    n->args = std::move(args);
    return n;
  }

  NodePtr expr() {
    NodePtr lhs = term();
    for (;;) {
      skip_ws();
      if (accept('+'))
        lhs = make(NodeKind::add, {lhs, term()});
      else if (accept('-'))
        lhs = make(NodeKind::sub, {lhs, term()});
      else
        return lhs;
    }
  }

  NodePtr term() {
    NodePtr lhs = signed_factor();
    for (;;) {
      skip_ws();
      if (accept('*'))
        lhs = make(NodeKind::mul, {lhs, signed_factor()});
      else if (accept('/'))
        lhs = make(NodeKind::div, {lhs, signed_factor()});
      else
        return lhs;
    }
  }

  NodePtr signed_factor() {
    if (accept('-')) return make(NodeKind::negate, {signed_factor()});
    return power();
  }

  NodePtr power() {
    NodePtr base = primary();
    if (accept('^')) return make(NodeKind::pow, {base, signed_factor()});
    return base;
  }

  NodePtr number() {
    const std::size_t start = pos_;
    while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    if (peek() == '.') {
      ++pos_;
      while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
    }
    if (peek() == 'e' || peek() == 'E') {
      std::size_t save = pos_++;
      if (peek() == '+' || peek() == '-') ++pos_;
      if (!std::isdigit(static_cast<unsigned char>(peek()))) {
        pos_ = save;
      } else {
        while (!at_end() && std::isdigit(static_cast<unsigned char>(peek()))) ++pos_;
      }
    }
    std::string_view text = src_.substr(start, pos_ - start);
    if (text == ".") fail_at("malformed number", start);
    double v = 0.0;
    auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size())
      fail_at("malformed number '" + std::string(text) + "'", start);
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::constant;
    n->value = v;
    return n;
  }

  NodePtr primary() {
    skip_ws();
    if (at_end()) fail("unexpected end of expression");
    const char c = peek();
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return number();
    if (accept('(')) {
      NodePtr e = expr();
      expect(')');
      return e;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (!at_end() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_'))
        ++pos_;
      std::string_view name = src_.substr(start, pos_ - start);
      if (name.size() > 1 && name[0] == 'x' &&
          name.find_first_not_of("0123456789", 1) == std::string_view::npos) {
        long idx = 0;
        std::from_chars(name.data() + 1, name.data() + name.size(), idx);
        if (idx < 1 || idx > dim_)
          fail_at("variable index out of range: " + std::string(name) +
                      " (dimension " + std::to_string(dim_) + ")",
                  start);
        auto n = std::make_shared<Node>();
        n->kind = NodeKind::variable;
        n->var = static_cast<int>(idx - 1);
        return n;
      }
      Func f;
      if (!lookup_func(name, f))
        fail_at("unknown identifier '" + std::string(name) + "'", start);
      return call(f, start);
    }
    fail(std::string("unexpected '") + c + "'");
  }

  NodePtr call(Func f, std::size_t start) {
    expect('(');
    auto n = std::make_shared<Node>();
    n->kind = NodeKind::call;
    n->func = f;
    if (f == Func::norm2) {
      skip_ws();
      std::size_t save = pos_;
      if (peek() == 'x') {
        ++pos_;
        skip_ws();
        if (peek() == ')') {
          ++pos_;
          n->all_variables = true;
          return n;
        }
        pos_ = save;
      }
    }
    n->args.push_back(expr());
    while (accept(',')) n->args.push_back(expr());
    expect(')');
    const std::size_t k = n->args.size();
    switch (f) {
      case Func::min:
      case Func::max:
        if (k < 2) fail_at(std::string(func_name(f)) + " needs at least two arguments", start);
        break;
      case Func::pow:
        if (k != 2) fail_at("pow takes two arguments", start);
        break;
      case Func::norm2:
        break;
      default:
        if (k != 1) fail_at(std::string(func_name(f)) + " takes one argument", start);
    }
    return n;
  }
};

inline int precedence(const Node& n) {
  switch (n.kind) {
    case NodeKind::add:
    case NodeKind::sub: return 1;
    case NodeKind::mul:
    case NodeKind::div: return 2;
    case NodeKind::negate: return 3;
    case NodeKind::pow: return 4;
    case NodeKind::constant: return n.value < 0.0 ? 0 : 5;
    default: return 5;
  }
}

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void print(const Node& n, std::string& out) {
  auto sub = [&out](const Node& c, bool parens) {
    if (parens) out += '(';
    print(c, out);
    if (parens) out += ')';
  };
  switch (n.kind) {
    case NodeKind::constant:
      out += format_double(n.value);
      return;
    case NodeKind::variable:
      out += 'x';
      out += std::to_string(n.var + 1);
      return;
    case NodeKind::negate:
      out += '-';
      sub(*n.args[0], precedence(*n.args[0]) < 3);
      return;
    case NodeKind::add:
    case NodeKind::sub:
    case NodeKind::mul:
    case NodeKind::div: {
      const int p = precedence(n);
      const char* op = n.kind == NodeKind::add   ? " + "
                       : n.kind == NodeKind::sub ? " - "
                       : n.kind == NodeKind::mul ? " * "
                                                 : " / ";
      sub(*n.args[0], precedence(*n.args[0]) < p);
      out += op;
      sub(*n.args[1], precedence(*n.args[1]) <= p);
      return;
    }
    case NodeKind::pow:
      sub(*n.args[0], precedence(*n.args[0]) < 5);
      out += '^';
      sub(*n.args[1], precedence(*n.args[1]) < 3);
      return;
    case NodeKind::call:
      out += func_name(n.func);
      out += '(';
      if (n.all_variables) out += 'x';
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i) out += ", ";
        print(*n.args[i], out);
      }
      out += ')';
      return;
  }
}

inline bool has_variables(const Node& n) {
  if (n.kind == NodeKind::variable) return true;
  if (n.kind == NodeKind::call && n.all_variables) return true;
  for (const auto& a : n.args)
    if (has_variables(*a)) return true;
  return false;
}

enum class Op : std::uint8_t {
  push_const, push_var, neg, add, sub, mul, div, pow_const, pow,
  exp, ln, sqrt, abs, sin, cos, min, max, sumsq, sumsq_vars
};

struct Instr {
  Op op;
  std::uint16_t arg = 0;
  double value = 0.0;
};

}  // namespace detail

class Expr {
 public:
  Expr() = default;

  /// Parses `source` over the variables x1..x`dim`.
  static Expr parse(std::string_view source, int dim) {
    if (dim < 1 || dim > kMaxDim)
      throw ConfigError("dimension must be in [1, " + std::to_string(kMaxDim) + "]");
    return Expr(detail::Parser(source, dim).parse(), dim);
  }

  static Expr constant(double value, int dim) {
    auto n = std::make_shared<Node>();
    n->value = value;
    return Expr(n, dim);
  }

  Expr(NodePtr root, int dim) : root_(std::move(root)), dim_(dim) { compile(*root_); }

  int dim() const noexcept { return dim_; }
  bool valid() const noexcept { return root_ != nullptr; }
  const Node& root() const { return *root_; }
  bool is_constant() const { return !detail::has_variables(*root_); }

  std::string str() const {
    std::string s;
    detail::print(*root_, s);
    return s;
  }

  friend bool operator==(const Expr& a, const Expr& b) {
    return a.dim_ == b.dim_ && structurally_equal(*a.root_, *b.root_);
  }

  /// Value at x. Throws DomainError outside the domain.
  double eval(std::span<const double> x) const {
    check_point(x);
    const double r = run<double>(x.data());
    if (!std::isfinite(r)) throw DomainError("non-finite value of " + str());
    return r;
  }

  /// Exact partial derivative d/dx_j (0-based j) by one dual pass.
  double derive(std::span<const double> x, int j) const {
    check_point(x);
    check_index(j);
    using D = Dual<double>;
    std::array<D, kMaxDim> xs;
    for (int k = 0; k < dim_; ++k) xs[k] = D(x[k], k == j ? 1.0 : 0.0);
    const D r = run<D>(xs.data());
    if (!all_finite(r)) throw DomainError("not differentiable: " + str());
    return r.d;
  }

  /// Exact mixed partial d^2/dx_i dx_j (0-based) by a nested dual pass.
  /// Symmetric by construction: the pass always seeds (min(i,j), max(i,j)).
  double derive2(std::span<const double> x, int i, int j) const {
    check_point(x);
    check_index(i);
    check_index(j);
    if (i > j) std::swap(i, j);
    return second_pass(x, i, j).d.d;
  }

  /// Gradient into `grad` (size dim). Returns the value.
  double gradient(std::span<const double> x, std::span<double> grad) const {
    check_point(x);
    using D = Dual<double>;
    std::array<D, kMaxDim> xs;
    double value = 0.0;
    for (int j = 0; j < dim_; ++j) {
      for (int k = 0; k < dim_; ++k) xs[k] = D(x[k], k == j ? 1.0 : 0.0);
      const D r = run<D>(xs.data());
      if (!all_finite(r)) throw DomainError("not differentiable: " + str());
      grad[j] = r.d;
      value = r.v;
    }
    return value;
  }

  /// Gradient and row-major Hessian (dim*dim). Returns the value.
  double hessian(std::span<const double> x, std::span<double> grad,
                 std::span<double> hess) const {
    check_point(x);
    double value = 0.0;
    for (int i = 0; i < dim_; ++i) {
      for (int j = i; j < dim_; ++j) {
        const auto r = second_pass(x, i, j);
        value = r.v.v;
        if (i == j) grad[i] = r.v.d;
        hess[i * dim_ + j] = r.d.d;
        hess[j * dim_ + i] = r.d.d;
      }
    }
    return value;
  }

  /// Generic evaluation; no domain post-check on the result.
  template <class T>
  T evaluate(std::span<const T> x) const {
    check_point(x);
    return run<T>(x.data());
  }

 private:
  NodePtr root_;
  int dim_ = 0;
  std::vector<detail::Instr> code_;
  std::size_t depth_ = 0;

  static constexpr std::size_t kInlineStack = 24;

  template <class T>
  void check_point(std::span<const T> x) const {
    if (!root_) throw ConfigError("evaluation of an empty expression");
    if (static_cast<int>(x.size()) != dim_)
      throw ConfigError("point has dimension " + std::to_string(x.size()) +
                        ", expression has " + std::to_string(dim_));
  }
  void check_index(int j) const {
    if (j < 0 || j >= dim_) throw ConfigError("derivative index out of range");
  }

  Dual<Dual<double>> second_pass(std::span<const double> x, int i, int j) const {
    using D = Dual<double>;
    using DD = Dual<D>;
    std::array<DD, kMaxDim> xs;
    for (int k = 0; k < dim_; ++k)
      xs[k] = DD(D(x[k], k == i ? 1.0 : 0.0), D(k == j ? 1.0 : 0.0, 0.0));
    const DD r = run<DD>(xs.data());
    if (!all_finite(r)) throw DomainError("not twice differentiable: " + str());
    return r;
  }

  void emit(detail::Op op, std::uint16_t arg = 0, double value = 0.0, int delta = 0) {
    code_.push_back({op, arg, value});
    stack_ += delta;
    if (stack_ > static_cast<long>(depth_)) depth_ = static_cast<std::size_t>(stack_);
  }
  long stack_ = 0;

  static double fold(const Node& n) {
    return Expr(std::make_shared<Node>(n), 1).run<double>(nullptr);
  }

  void emit_norm_squared(const Node& n) {
    using detail::Op;
    if (n.all_variables) {
      emit(Op::sumsq_vars, 0, 0.0, +1);
    } else {
      for (const auto& a : n.args) compile(*a);
      emit(Op::sumsq, static_cast<std::uint16_t>(n.args.size()), 0.0,
           1 - static_cast<int>(n.args.size()));
    }
  }

  void compile(const Node& n) {
    using detail::Op;
    switch (n.kind) {
      case NodeKind::constant:
        emit(Op::push_const, 0, n.value, +1);
        return;
      case NodeKind::variable:
        emit(Op::push_var, static_cast<std::uint16_t>(n.var), 0.0, +1);
        return;
      case NodeKind::negate:
        compile(*n.args[0]);
        emit(Op::neg);
        return;
      case NodeKind::add:
      case NodeKind::sub:
      case NodeKind::mul:
      case NodeKind::div:
        compile(*n.args[0]);
        compile(*n.args[1]);
        emit(n.kind == NodeKind::add   ? Op::add
             : n.kind == NodeKind::sub ? Op::sub
             : n.kind == NodeKind::mul ? Op::mul
                                       : Op::div,
             0, 0.0, -1);
        return;
      case NodeKind::pow:
        compile_pow(*n.args[0], *n.args[1]);
        return;
      case NodeKind::call:
        break;
    }
    switch (n.func) {
      case Func::pow:
        compile_pow(*n.args[0], *n.args[1]);
        return;
      case Func::norm2:
        emit_norm_squared(n);
        emit(Op::sqrt);
        return;
      case Func::min:
      case Func::max:
        for (const auto& a : n.args) compile(*a);
        emit(n.func == Func::min ? Op::min : Op::max,
             static_cast<std::uint16_t>(n.args.size()), 0.0,
             1 - static_cast<int>(n.args.size()));
        return;
      default:
        compile(*n.args[0]);
        emit(n.func == Func::exp    ? Op::exp
             : n.func == Func::ln   ? Op::ln
             : n.func == Func::sqrt ? Op::sqrt
             : n.func == Func::abs  ? Op::abs
             : n.func == Func::sin  ? Op::sin
                                    : Op::cos);
    }
  }

  // A constant exponent becomes pow_const; a norm raised to a constant
  // power is evaluated as (sum of squares)^(c/2) so that even powers of the
  // norm stay smooth at the origin.
  void compile_pow(const Node& base, const Node& exponent) {
    using detail::Op;
    if (!detail::has_variables(exponent)) {
      const double c = fold(exponent);
      if (base.kind == NodeKind::call && base.func == Func::norm2) {
        emit_norm_squared(base);
        emit(Op::pow_const, 0, 0.5 * c);
      } else {
        compile(base);
        emit(Op::pow_const, 0, c);
      }
      return;
    }
    compile(base);
    compile(exponent);
    emit(Op::pow, 0, 0.0, -1);
  }

  template <class T>
  T run(const T* x) const {
    std::array<T, kInlineStack> inline_stack;
    std::vector<T> heap;
    T* s = inline_stack.data();
    if (depth_ > kInlineStack) {
      heap.resize(depth_);
      s = heap.data();
    }
    std::size_t top = 0;  // number of live entries
    using detail::Op;
    for (const auto& in : code_) {
      switch (in.op) {
        case Op::push_const:
          s[top++] = T(in.value);
          break;
        case Op::push_var:
          s[top++] = x[in.arg];
          break;
        case Op::neg:
          s[top - 1] = -s[top - 1];
          break;
        case Op::add:
          --top;
          s[top - 1] = s[top - 1] + s[top];
          break;
        case Op::sub:
          --top;
          s[top - 1] = s[top - 1] - s[top];
          break;
        case Op::mul:
          --top;
          s[top - 1] = s[top - 1] * s[top];
          break;
        case Op::div:
          --top;
          if (primal(s[top]) == 0.0) throw DomainError("division by zero");
          s[top - 1] = s[top - 1] / s[top];
          break;
        case Op::pow_const:
          s[top - 1] = pow_const(s[top - 1], in.value);
          break;
        case Op::pow:
          --top;
          s[top - 1] = pow(s[top - 1], s[top]);
          break;
        case Op::exp:
          s[top - 1] = exp(s[top - 1]);
          break;
        case Op::ln:
          s[top - 1] = log(s[top - 1]);
          break;
        case Op::sqrt:
          s[top - 1] = sqrt(s[top - 1]);
          break;
        case Op::abs:
          s[top - 1] = abs(s[top - 1]);
          break;
        case Op::sin:
          s[top - 1] = sin(s[top - 1]);
          break;
        case Op::cos:
          s[top - 1] = cos(s[top - 1]);
          break;
        case Op::min:
        case Op::max: {
          // Ties keep the first argument.
          const std::size_t first = top - in.arg;
          std::size_t best = first;
          for (std::size_t k = first + 1; k < top; ++k) {
            const double pk = primal(s[k]), pb = primal(s[best]);
            if (in.op == Op::min ? pk < pb : pk > pb) best = k;
          }
          s[first] = s[best];
          top = first + 1;
          break;
        }
        case Op::sumsq: {
          const std::size_t first = top - in.arg;
          T acc = s[first] * s[first];
          for (std::size_t k = first + 1; k < top; ++k) acc = acc + s[k] * s[k];
          s[first] = acc;
          top = first + 1;
          break;
        }
        case Op::sumsq_vars: {
          T acc = x[0] * x[0];
          for (int k = 1; k < dim_; ++k) acc = acc + x[k] * x[k];
          s[top++] = acc;
          break;
        }
      }
    }
    return s[0];
  }
};

}  // namespace sdelab
