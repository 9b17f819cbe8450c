#include "panelq/basis.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

namespace panelq {

double norm_pdf(double x) {
  static const double inv_sqrt2pi = 0.3989422804014326779;
  return inv_sqrt2pi * std::exp(-0.5 * x * x);
}

double norm_quantile(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0) return std::numeric_limits<double>::quiet_NaN();
  if (p == 0.0) return -HUGE_VAL;
  if (p == 1.0) return HUGE_VAL;

  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  static const double plow = 0.02425;

  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p > 1.0 - plow) {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  if (std::abs(x) < 30.0) {  // one Halley step; cdf residual evaluated in the nearer tail
    const double e = (p < 0.5) ? 0.5 * std::erfc(-x * M_SQRT1_2) - p
                               : (1.0 - p) - 0.5 * std::erfc(x * M_SQRT1_2);
    const double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

namespace {

bool is_const(const NodePtr& n, double v) {
  return n->kind == NodeKind::Const && n->num == v;
}

NodePtr raw(NodeKind k, double num, NodePtr a = nullptr, NodePtr b = nullptr) {
  auto n = std::make_shared<Node>();
  n->kind = k;
  n->num = num;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

}  // namespace

double eval_ast(const NodePtr& n, double t) {
  switch (n->kind) {
    case NodeKind::Const: return n->num;
    case NodeKind::Var: return t;
    case NodeKind::Add: return eval_ast(n->a, t) + eval_ast(n->b, t);
    case NodeKind::Sub: return eval_ast(n->a, t) - eval_ast(n->b, t);
    case NodeKind::Mul: return eval_ast(n->a, t) * eval_ast(n->b, t);
    case NodeKind::Div: return eval_ast(n->a, t) / eval_ast(n->b, t);
    case NodeKind::Neg: return -eval_ast(n->a, t);
    case NodeKind::Pow: return std::pow(eval_ast(n->a, t), n->num);
    case NodeKind::Log: return std::log(eval_ast(n->a, t));
    case NodeKind::Exp: return std::exp(eval_ast(n->a, t));
    case NodeKind::Sqrt: return std::sqrt(eval_ast(n->a, t));
    case NodeKind::Qnorm: return norm_quantile(eval_ast(n->a, t));
    case NodeKind::Sin: return std::sin(eval_ast(n->a, t));
    case NodeKind::Cos: return std::cos(eval_ast(n->a, t));
    case NodeKind::Plin: {
      const double w = eval_ast(n->a, t) - n->num;
      return w > 0.0 ? w : 0.0;
    }
    case NodeKind::Step: return eval_ast(n->a, t) > n->num ? 1.0 : 0.0;
    case NodeKind::XLogX: {
      const double w = eval_ast(n->a, t);
      return w > 0.0 ? w * std::log(w) : 0.0;
    }
  }
  return std::numeric_limits<double>::quiet_NaN();
}

NodePtr nconst(double v) { return raw(NodeKind::Const, v); }
NodePtr nvar() { return raw(NodeKind::Var, 0.0); }

namespace {

bool all_const(const NodePtr& a) { return a->kind == NodeKind::Const; }

NodePtr fold_or(NodePtr n) {
  // collapse constant subtrees when the value is finite
  if ((!n->a || all_const(n->a)) && (!n->b || all_const(n->b)) &&
      n->kind != NodeKind::Const && n->kind != NodeKind::Var) {
    const double v = eval_ast(n, 0.0);
    if (std::isfinite(v)) return nconst(v);
  }
  return n;
}

}  // namespace

NodePtr nadd(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  return fold_or(raw(NodeKind::Add, 0.0, std::move(a), std::move(b)));
}

NodePtr nsub(NodePtr a, NodePtr b) {
  if (is_const(b, 0.0)) return a;
  if (is_const(a, 0.0)) return nneg(std::move(b));
  return fold_or(raw(NodeKind::Sub, 0.0, std::move(a), std::move(b)));
}

NodePtr nmul(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0) || is_const(b, 0.0)) return nconst(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  return fold_or(raw(NodeKind::Mul, 0.0, std::move(a), std::move(b)));
}

NodePtr ndiv(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0) && !is_const(b, 0.0)) return nconst(0.0);
  if (is_const(b, 1.0)) return a;
  return fold_or(raw(NodeKind::Div, 0.0, std::move(a), std::move(b)));
}

NodePtr nneg(NodePtr a) {
  if (a->kind == NodeKind::Const) return nconst(-a->num);
  if (a->kind == NodeKind::Neg) return a->a;
  return raw(NodeKind::Neg, 0.0, std::move(a));
}

NodePtr npow(NodePtr base, double expo) {
  if (expo == 0.0) return nconst(1.0);
  if (expo == 1.0) return base;
  return fold_or(raw(NodeKind::Pow, expo, std::move(base)));
}

NodePtr nfun(NodeKind k, NodePtr a) { return fold_or(raw(k, 0.0, std::move(a))); }
NodePtr nplin(NodePtr a, double knot) { return fold_or(raw(NodeKind::Plin, knot, std::move(a))); }
NodePtr nstep(NodePtr a, double knot) { return fold_or(raw(NodeKind::Step, knot, std::move(a))); }

bool structurally_equal(const NodePtr& x, const NodePtr& y) {
  if (x == y) return true;
  if (!x || !y) return false;
  if (x->kind != y->kind || x->num != y->num) return false;
  if (static_cast<bool>(x->a) != static_cast<bool>(y->a)) return false;
  if (static_cast<bool>(x->b) != static_cast<bool>(y->b)) return false;
  if (x->a && !structurally_equal(x->a, y->a)) return false;
  if (x->b && !structurally_equal(x->b, y->b)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// parser

namespace {

enum class Tok : std::uint8_t { Num, Ident, Plus, Minus, Star, Slash, Caret, LParen, RParen, Comma, End };

struct Token {
  Tok kind;
  double num = 0.0;
  std::string ident;
  std::size_t off = 0;
};

struct Lexer {
  const std::string& s;
  std::size_t i = 0;

  Token next() {
    while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
    const std::size_t off = i;
    if (i >= s.size()) return {Tok::End, 0.0, "", off};
    const char c = s[i];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t j = i;
      while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '.')) ++j;
      if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < s.size() && (s[k] == '+' || s[k] == '-')) ++k;
        if (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) {
          ++k;
          while (k < s.size() && std::isdigit(static_cast<unsigned char>(s[k]))) ++k;
          j = k;
        }
      }
      const std::string text = s.substr(i, j - i);
      char* endp = nullptr;
      const double v = std::strtod(text.c_str(), &endp);
      if (endp != text.c_str() + text.size()) throw ParseError("bad number '" + text + "'", off);
      i = j;
      return {Tok::Num, v, "", off};
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      std::size_t j = i;
      while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      Token t{Tok::Ident, 0.0, s.substr(i, j - i), off};
      i = j;
      return t;
    }
    ++i;
    switch (c) {
      case '+': return {Tok::Plus, 0.0, "", off};
      case '-': return {Tok::Minus, 0.0, "", off};
      case '*': return {Tok::Star, 0.0, "", off};
      case '/': return {Tok::Slash, 0.0, "", off};
      case '^': return {Tok::Caret, 0.0, "", off};
      case '(': return {Tok::LParen, 0.0, "", off};
      case ')': return {Tok::RParen, 0.0, "", off};
      case ',': return {Tok::Comma, 0.0, "", off};
      default: throw ParseError(std::string("unexpected character '") + c + "'", off);
    }
  }
};

struct Parser {
  Lexer lex;
  Token cur;
  char var_seen = 0;

  explicit Parser(const std::string& s) : lex{s} { cur = lex.next(); }

  void advance() { cur = lex.next(); }

  void expect(Tok k, const char* what) {
    if (cur.kind != k) throw ParseError(std::string("expected ") + what, cur.off);
    advance();
  }

  NodePtr expr() {
    bool neg = false;
    if (cur.kind == Tok::Minus) {
      neg = true;
      advance();
    }
    NodePtr n = term();
    if (neg) n = nneg(std::move(n));
    while (cur.kind == Tok::Plus || cur.kind == Tok::Minus) {
      const bool plus = cur.kind == Tok::Plus;
      advance();
      NodePtr rhs = term();
      n = plus ? nadd(std::move(n), std::move(rhs)) : nsub(std::move(n), std::move(rhs));
    }
    return n;
  }

  NodePtr term() {
    NodePtr n = factor();
    while (cur.kind == Tok::Star || cur.kind == Tok::Slash) {
      const bool mul = cur.kind == Tok::Star;
      advance();
      NodePtr rhs = factor();
      n = mul ? nmul(std::move(n), std::move(rhs)) : ndiv(std::move(n), std::move(rhs));
    }
    return n;
  }

  NodePtr factor() {
    NodePtr n = atom();
    if (cur.kind == Tok::Caret) {
      advance();
      if (cur.kind != Tok::Num) throw ParseError("exponent must be a number", cur.off);
      const double e = cur.num;
      advance();
      n = npow(std::move(n), e);
    }
    return n;
  }

  NodePtr atom() {
    if (cur.kind == Tok::Num) {
      const double v = cur.num;
      advance();
      return nconst(v);
    }
    if (cur.kind == Tok::LParen) {
      advance();
      NodePtr n = expr();
      expect(Tok::RParen, "')'");
      return n;
    }
    if (cur.kind == Tok::Ident) {
      const std::string name = cur.ident;
      const std::size_t off = cur.off;
      advance();
      if (name == "pi") return nconst(M_PI);
      if (name == "u" || name == "v") {
        const char c = name[0];
        if (var_seen && var_seen != c)
          throw ParseError("more than one free variable (u and v)", off);
        var_seen = c;
        return nvar();
      }
      NodeKind fk;
      if (name == "log") fk = NodeKind::Log;
      else if (name == "exp") fk = NodeKind::Exp;
      else if (name == "sqrt") fk = NodeKind::Sqrt;
      else if (name == "qnorm") fk = NodeKind::Qnorm;
      else if (name == "sin") fk = NodeKind::Sin;
      else if (name == "cos") fk = NodeKind::Cos;
      else if (name == "plin") fk = NodeKind::Plin;
      else throw ParseError("unknown identifier '" + name + "'", off);
      expect(Tok::LParen, "'('");
      NodePtr arg = expr();
      if (fk == NodeKind::Plin) {
        expect(Tok::Comma, "',' (plin takes a knot argument)");
        NodePtr knot = expr();
        if (knot->kind != NodeKind::Const)
          throw ParseError("plin knot must be a constant", off);
        expect(Tok::RParen, "')'");
        return nplin(std::move(arg), knot->num);
      }
      expect(Tok::RParen, "')'");
      return nfun(fk, std::move(arg));
    }
    throw ParseError("expected expression", cur.off);
  }
};

int precedence(NodeKind k) {
  switch (k) {
    case NodeKind::Add:
    case NodeKind::Sub:
    case NodeKind::Neg: return 1;
    case NodeKind::Mul:
    case NodeKind::Div: return 2;
    case NodeKind::Pow: return 3;
    default: return 4;
  }
}

std::string fmt_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string render_prec(const NodePtr& n, int need) {
  const int p = precedence(n->kind);
  std::string s;
  switch (n->kind) {
    case NodeKind::Const:
      s = fmt_num(n->num);
      if (n->num < 0.0) s = "(" + s + ")";
      return s;  // already atomic (possibly parenthesized)
    case NodeKind::Var: return "u";  // caller substitutes per-level name
    case NodeKind::Add: s = render_prec(n->a, 1) + "+" + render_prec(n->b, 2); break;
    case NodeKind::Sub: s = render_prec(n->a, 1) + "-" + render_prec(n->b, 2); break;
    case NodeKind::Mul: s = render_prec(n->a, 2) + "*" + render_prec(n->b, 3); break;
    case NodeKind::Div: s = render_prec(n->a, 2) + "/" + render_prec(n->b, 3); break;
    case NodeKind::Neg: s = "-" + render_prec(n->a, 2); break;
    case NodeKind::Pow: s = render_prec(n->a, 4) + "^" + fmt_num(n->num); break;
    case NodeKind::Log: return "log(" + render_prec(n->a, 1) + ")";
    case NodeKind::Exp: return "exp(" + render_prec(n->a, 1) + ")";
    case NodeKind::Sqrt: return "sqrt(" + render_prec(n->a, 1) + ")";
    case NodeKind::Qnorm: return "qnorm(" + render_prec(n->a, 1) + ")";
    case NodeKind::Sin: return "sin(" + render_prec(n->a, 1) + ")";
    case NodeKind::Cos: return "cos(" + render_prec(n->a, 1) + ")";
    case NodeKind::Plin:
      return "plin(" + render_prec(n->a, 1) + "," + fmt_num(n->num) + ")";
    case NodeKind::Step:
      return "step(" + render_prec(n->a, 1) + "," + fmt_num(n->num) + ")";
    case NodeKind::XLogX: return "xlogx(" + render_prec(n->a, 1) + ")";
  }
  if (p < need) s = "(" + s + ")";
  return s;
}

}  // namespace

std::string render(const NodePtr& n) { return render_prec(n, 1); }

BasisExpr parse_basis(const std::string& text) {
  if (text.empty()) throw ParseError("empty expression", 0);
  Parser p(text);
  NodePtr ast = p.expr();
  if (p.cur.kind != Tok::End) throw ParseError("unexpected trailing input", p.cur.off);
  return BasisExpr{std::move(ast), text, p.var_seen};
}

}  // namespace panelq
