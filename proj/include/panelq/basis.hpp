#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace panelq {

struct ParseError : std::runtime_error {
  std::size_t offset;
  ParseError(const std::string& msg, std::size_t off)
      : std::runtime_error(msg + " at offset " + std::to_string(off)), offset(off) {}
};

struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Standard normal quantile (rational approximation + one Halley refinement,
// |abs err| <= 1e-12 well into the tails) and density.
double norm_quantile(double p);
double norm_pdf(double x);

enum class NodeKind : std::uint8_t {
  Const, Var, Add, Sub, Mul, Div, Neg, Pow,
  Log, Exp, Sqrt, Qnorm, Sin, Cos, Plin,
  Step,   // 1{arg > knot}; appears only in derivative trees
  XLogX,  // arg*log(arg), 0 at arg<=0; appears only in antiderivative trees
};

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  NodeKind kind;
  double num = 0.0;  // Const value; Pow exponent; Plin/Step knot
  NodePtr a, b;
};

// Folding constructors: any all-constant subtree collapses to Const.
NodePtr nconst(double v);
NodePtr nvar();
NodePtr nadd(NodePtr a, NodePtr b);
NodePtr nsub(NodePtr a, NodePtr b);
NodePtr nmul(NodePtr a, NodePtr b);
NodePtr ndiv(NodePtr a, NodePtr b);
NodePtr nneg(NodePtr a);
NodePtr npow(NodePtr base, double expo);
NodePtr nfun(NodeKind k, NodePtr a);            // Log/Exp/Sqrt/Qnorm/Sin/Cos/XLogX
NodePtr nplin(NodePtr a, double knot);
NodePtr nstep(NodePtr a, double knot);

struct BasisExpr {
  NodePtr ast;
  std::string source;
  char var = 0;  // 'u', 'v', or 0 for constant expressions
};

// Parses the basis grammar:
//   expr := ["-"] term (("+"|"-") term)*
//   term := factor (("*"|"/") factor)*
//   factor := atom ("^" number)?
//   atom := number | var | "pi" | func "(" args ")" | "(" expr ")"
//   func in {log, exp, sqrt, qnorm, sin, cos, plin}
// plin takes (expr, constant knot); all other functions take one argument.
BasisExpr parse_basis(const std::string& text);

std::string render(const NodePtr& n);
bool structurally_equal(const NodePtr& x, const NodePtr& y);
NodePtr differentiate(const NodePtr& n);
// Closed-form \int_0^t, or nullptr when no rule applies.
NodePtr try_antideriv(const NodePtr& n);
double eval_ast(const NodePtr& n, double t);

// Flat postfix program; much faster to evaluate than AST recursion.
class Program {
 public:
  static Program compile(const NodePtr& n);
  double operator()(double t) const;
  bool empty() const { return code_.empty(); }

 private:
  static constexpr int kStackMax = 64;
  struct Instr {
    NodeKind op;
    std::int8_t ipow = 0;  // nonzero: integer exponent fast path for Pow
    double imm = 0.0;
  };
  std::vector<Instr> code_;
};

// Ordered basis b(.) or c(.): values, two symbolic derivatives, antiderivatives
// anchored at 0, and their means over (0,1). Immutable after build().
class BasisSet {
 public:
  BasisSet() = default;

  // var is 'u' (level 1) or 'v' (level 2); every element must use it (or be constant).
  static BasisSet build(const std::vector<std::string>& exprs, char var);

  int size() const { return static_cast<int>(elems_.size()); }
  char var() const { return var_; }
  const std::vector<BasisExpr>& elements() const { return elems_; }
  const NodePtr& deriv_ast(int k, int order) const { return order == 1 ? d1_[k] : d2_[k]; }
  bool antideriv_analytic(int k) const { return static_cast<bool>(anti_ast_[k]); }
  const NodePtr& antideriv_ast(int k) const { return anti_ast_[k]; }

  // Hot-path evaluation, no checks, no allocation. out has size() entries.
  void eval_into(double t, double* out) const;
  void deriv1_into(double t, double* out) const;
  void deriv2_into(double t, double* out) const;
  void antideriv_into(double t, double* out) const;
  const std::vector<double>& antideriv_mean() const { return mean_; }

  // Checked variants (public operation semantics: non-finite => DomainError).
  std::vector<double> eval(double t) const;
  std::vector<double> deriv(double t, int order) const;
  std::vector<double> antideriv(double t) const;

 private:
  char var_ = 'u';
  std::vector<BasisExpr> elems_;
  std::vector<NodePtr> d1_, d2_;
  std::vector<NodePtr> anti_ast_;       // null => quadrature fallback
  std::vector<Program> pval_, pd1_, pd2_, panti_;
  std::vector<double> mean_;
};

}  // namespace panelq
