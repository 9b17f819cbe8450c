#include "panelq/basis.hpp"
#include "panelq/quadrature.hpp"

#include <cmath>
#include <cstdio>

namespace panelq {

NodePtr differentiate(const NodePtr& n) {
  switch (n->kind) {
    case NodeKind::Const: return nconst(0.0);
    case NodeKind::Var: return nconst(1.0);
    case NodeKind::Add: return nadd(differentiate(n->a), differentiate(n->b));
    case NodeKind::Sub: return nsub(differentiate(n->a), differentiate(n->b));
    case NodeKind::Mul:
      return nadd(nmul(differentiate(n->a), n->b), nmul(n->a, differentiate(n->b)));
    case NodeKind::Div:
      return ndiv(nsub(nmul(differentiate(n->a), n->b), nmul(n->a, differentiate(n->b))),
                  nmul(n->b, n->b));
    case NodeKind::Neg: return nneg(differentiate(n->a));
    case NodeKind::Pow:
      return nmul(nconst(n->num), nmul(npow(n->a, n->num - 1.0), differentiate(n->a)));
    case NodeKind::Log: return ndiv(differentiate(n->a), n->a);
    case NodeKind::Exp: return nmul(differentiate(n->a), nfun(NodeKind::Exp, n->a));
    case NodeKind::Sqrt:
      return ndiv(differentiate(n->a), nmul(nconst(2.0), nfun(NodeKind::Sqrt, n->a)));
    case NodeKind::Qnorm:
      // d qnorm(f) = f' * sqrt(2*pi) * exp(qnorm(f)^2 / 2)
      return nmul(differentiate(n->a),
                  nmul(nconst(std::sqrt(2.0 * M_PI)),
                       nfun(NodeKind::Exp,
                            ndiv(npow(nfun(NodeKind::Qnorm, n->a), 2.0), nconst(2.0)))));
    case NodeKind::Sin: return nmul(differentiate(n->a), nfun(NodeKind::Cos, n->a));
    case NodeKind::Cos: return nneg(nmul(differentiate(n->a), nfun(NodeKind::Sin, n->a)));
    case NodeKind::Plin: return nmul(differentiate(n->a), nstep(n->a, n->num));
    case NodeKind::Step: return nconst(0.0);  // a.e.
    case NodeKind::XLogX:
      return nmul(differentiate(n->a), nadd(nfun(NodeKind::Log, n->a), nconst(1.0)));
  }
  return nullptr;
}

namespace {

double xlogx_val(double w) { return w > 0.0 ? w * std::log(w) : 0.0; }

// n == a*t + b exactly?
bool linear_of(const NodePtr& n, double& a, double& b) {
  switch (n->kind) {
    case NodeKind::Const: a = 0.0; b = n->num; return true;
    case NodeKind::Var: a = 1.0; b = 0.0; return true;
    case NodeKind::Add: {
      double a1, b1, a2, b2;
      if (!linear_of(n->a, a1, b1) || !linear_of(n->b, a2, b2)) return false;
      a = a1 + a2; b = b1 + b2; return true;
    }
    case NodeKind::Sub: {
      double a1, b1, a2, b2;
      if (!linear_of(n->a, a1, b1) || !linear_of(n->b, a2, b2)) return false;
      a = a1 - a2; b = b1 - b2; return true;
    }
    case NodeKind::Neg: {
      double a1, b1;
      if (!linear_of(n->a, a1, b1)) return false;
      a = -a1; b = -b1; return true;
    }
    case NodeKind::Mul: {
      double a1, b1, a2, b2;
      if (!linear_of(n->a, a1, b1) || !linear_of(n->b, a2, b2)) return false;
      if (a1 != 0.0 && a2 != 0.0) return false;
      a = a1 * b2 + a2 * b1; b = b1 * b2; return true;
    }
    case NodeKind::Div: {
      double a1, b1, a2, b2;
      if (!linear_of(n->a, a1, b1) || !linear_of(n->b, a2, b2)) return false;
      if (a2 != 0.0 || b2 == 0.0) return false;
      a = a1 / b2; b = b1 / b2; return true;
    }
    default: return false;
  }
}

bool is_integer(double v) { return std::isfinite(v) && v == std::rint(v); }

}  // namespace

// Antiderivative F(t) = \int_0^t f(s) ds as a closed-form AST, or nullptr when no
// rule applies (numeric fallback handles that case).
NodePtr try_antideriv(const NodePtr& n) {
  double a, b;
  if (linear_of(n, a, b)) {
    // \int_0^t (a s + b) ds = a t^2/2 + b t
    return nadd(nmul(nconst(0.5 * a), npow(nvar(), 2.0)), nmul(nconst(b), nvar()));
  }
  switch (n->kind) {
    case NodeKind::Add: {
      NodePtr fa = try_antideriv(n->a), fb = try_antideriv(n->b);
      if (!fa || !fb) return nullptr;
      return nadd(std::move(fa), std::move(fb));
    }
    case NodeKind::Sub: {
      NodePtr fa = try_antideriv(n->a), fb = try_antideriv(n->b);
      if (!fa || !fb) return nullptr;
      return nsub(std::move(fa), std::move(fb));
    }
    case NodeKind::Neg: {
      NodePtr fa = try_antideriv(n->a);
      return fa ? nneg(std::move(fa)) : nullptr;
    }
    case NodeKind::Mul: {
      double ca, cb;
      if (linear_of(n->a, ca, cb) && ca == 0.0) {
        NodePtr fb = try_antideriv(n->b);
        return fb ? nmul(nconst(cb), std::move(fb)) : nullptr;
      }
      if (linear_of(n->b, ca, cb) && ca == 0.0) {
        NodePtr fa = try_antideriv(n->a);
        return fa ? nmul(nconst(cb), std::move(fa)) : nullptr;
      }
      return nullptr;
    }
    case NodeKind::Div: {
      double ca, cb;
      if (linear_of(n->b, ca, cb) && ca == 0.0 && cb != 0.0) {
        NodePtr fa = try_antideriv(n->a);
        return fa ? ndiv(std::move(fa), nconst(cb)) : nullptr;
      }
      return nullptr;
    }
    case NodeKind::Pow: {
      const double nu = n->num;
      if (!linear_of(n->a, a, b) || a == 0.0) return nullptr;
      if (nu == -1.0) return nullptr;
      const bool nonneg_on_01 = b >= 0.0 && a + b >= 0.0;
      if (!((is_integer(nu) && nu >= 0.0) || (nu > -1.0 && nonneg_on_01))) return nullptr;
      // [l(t)^(nu+1) - b^(nu+1)] / (a (nu+1))
      return ndiv(nsub(npow(n->a, nu + 1.0), nconst(std::pow(b, nu + 1.0))),
                  nconst(a * (nu + 1.0)));
    }
    case NodeKind::Sqrt: {
      if (!linear_of(n->a, a, b) || a == 0.0) return nullptr;
      if (!(b >= 0.0 && a + b >= 0.0)) return nullptr;
      return ndiv(nsub(npow(n->a, 1.5), nconst(std::pow(b, 1.5))), nconst(a * 1.5));
    }
    case NodeKind::Log: {
      if (!linear_of(n->a, a, b) || a == 0.0) return nullptr;
      if (!(b >= 0.0 && a + b >= 0.0)) return nullptr;
      // \int_0^t log(a s + b) ds = [xlogx(l) - l - (xlogx(b) - b)] / a
      const double c0 = xlogx_val(b) - b;
      return ndiv(nsub(nsub(nfun(NodeKind::XLogX, n->a), n->a), nconst(c0)), nconst(a));
    }
    case NodeKind::Sin: {
      if (!linear_of(n->a, a, b) || a == 0.0) return nullptr;
      return ndiv(nsub(nconst(std::cos(b)), nfun(NodeKind::Cos, n->a)), nconst(a));
    }
    case NodeKind::Cos: {
      if (!linear_of(n->a, a, b) || a == 0.0) return nullptr;
      return ndiv(nsub(nfun(NodeKind::Sin, n->a), nconst(std::sin(b))), nconst(a));
    }
    case NodeKind::Plin: {
      if (n->a->kind != NodeKind::Var) return nullptr;
      // \int_0^t plin(s,k) ds = [plin(t,k)^2 - plin(0,k)^2] / 2
      const double p0 = -n->num > 0.0 ? -n->num : 0.0;
      return nmul(nconst(0.5),
                  nsub(npow(nplin(nvar(), n->num), 2.0), nconst(p0 * p0)));
    }
    case NodeKind::Qnorm: {
      if (n->a->kind != NodeKind::Var) return nullptr;
      // \int_0^t qnorm(s) ds = -phi(qnorm(t)); evaluates to 0 at both endpoints
      return nneg(ndiv(nfun(NodeKind::Exp,
                            nneg(ndiv(npow(nfun(NodeKind::Qnorm, nvar()), 2.0), nconst(2.0)))),
                       nconst(std::sqrt(2.0 * M_PI))));
    }
    default: return nullptr;
  }
}

// ---------------------------------------------------------------------------
// Program

Program Program::compile(const NodePtr& root) {
  Program p;
  int depth = 0, max_depth = 0;
  const auto walk = [&](auto&& self, const NodePtr& n) -> void {
    if (n->a) self(self, n->a);
    if (n->b) self(self, n->b);
    Instr in{};
    in.op = n->kind;
    in.imm = n->num;
    in.ipow = 0;
    if (n->kind == NodeKind::Pow && is_integer(n->num) && std::abs(n->num) <= 16.0)
      in.ipow = static_cast<std::int8_t>(n->num);
    p.code_.push_back(in);
    const int pop = (n->b ? 2 : (n->a ? 1 : 0));
    depth += 1 - pop;
    if (depth > max_depth) max_depth = depth;
  };
  walk(walk, root);
  if (max_depth > kStackMax) throw std::runtime_error("basis expression too deep to compile");
  return p;
}

double Program::operator()(double t) const {
  double st[kStackMax];
  int sp = -1;
  for (const Instr& in : code_) {
    switch (in.op) {
      case NodeKind::Const: st[++sp] = in.imm; break;
      case NodeKind::Var: st[++sp] = t; break;
      case NodeKind::Add: --sp; st[sp] += st[sp + 1]; break;
      case NodeKind::Sub: --sp; st[sp] -= st[sp + 1]; break;
      case NodeKind::Mul: --sp; st[sp] *= st[sp + 1]; break;
      case NodeKind::Div: --sp; st[sp] /= st[sp + 1]; break;
      case NodeKind::Neg: st[sp] = -st[sp]; break;
      case NodeKind::Pow: {
        const double x = st[sp];
        if (in.ipow != 0) {
          int m = in.ipow < 0 ? -in.ipow : in.ipow;
          double base = in.ipow < 0 ? 1.0 / x : x, r = 1.0;
          while (m) {
            if (m & 1) r *= base;
            base *= base;
            m >>= 1;
          }
          st[sp] = r;
        } else if (in.imm == 0.5) {
          st[sp] = std::sqrt(x);
        } else {
          st[sp] = std::pow(x, in.imm);
        }
        break;
      }
      case NodeKind::Log: st[sp] = std::log(st[sp]); break;
      case NodeKind::Exp: st[sp] = std::exp(st[sp]); break;
      case NodeKind::Sqrt: st[sp] = std::sqrt(st[sp]); break;
      case NodeKind::Qnorm: st[sp] = norm_quantile(st[sp]); break;
      case NodeKind::Sin: st[sp] = std::sin(st[sp]); break;
      case NodeKind::Cos: st[sp] = std::cos(st[sp]); break;
      case NodeKind::Plin: {
        const double w = st[sp] - in.imm;
        st[sp] = w > 0.0 ? w : 0.0;
        break;
      }
      case NodeKind::Step: st[sp] = st[sp] > in.imm ? 1.0 : 0.0; break;
      case NodeKind::XLogX: {
        const double w = st[sp];
        st[sp] = w > 0.0 ? w * std::log(w) : 0.0;
        break;
      }
    }
  }
  return st[0];
}

// ---------------------------------------------------------------------------
// BasisSet

BasisSet BasisSet::build(const std::vector<std::string>& exprs, char var) {
  if (var != 'u' && var != 'v') throw DomainError("basis variable must be 'u' or 'v'");
  if (exprs.empty()) throw DomainError("basis must have at least one element");
  BasisSet bs;
  bs.var_ = var;
  for (const std::string& text : exprs) {
    BasisExpr e = parse_basis(text);
    if (e.var != 0 && e.var != var)
      throw DomainError("basis element '" + text + "' uses variable '" +
                        std::string(1, e.var) + "' but this basis is in '" +
                        std::string(1, var) + "'");
    bs.elems_.push_back(std::move(e));
  }
  const std::size_t K = bs.elems_.size();
  bs.d1_.resize(K);
  bs.d2_.resize(K);
  bs.anti_ast_.resize(K);
  bs.pval_.resize(K);
  bs.pd1_.resize(K);
  bs.pd2_.resize(K);
  bs.panti_.resize(K);
  bs.mean_.resize(K);
  for (std::size_t k = 0; k < K; ++k) {
    const NodePtr& f = bs.elems_[k].ast;
    bs.d1_[k] = differentiate(f);
    bs.d2_[k] = differentiate(bs.d1_[k]);
    bs.anti_ast_[k] = try_antideriv(f);
    bs.pval_[k] = Program::compile(f);
    bs.pd1_[k] = Program::compile(bs.d1_[k]);
    bs.pd2_[k] = Program::compile(bs.d2_[k]);
    if (bs.anti_ast_[k]) bs.panti_[k] = Program::compile(bs.anti_ast_[k]);

    static const double probe[] = {1e-6, 1e-4, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5,
                                   0.6,  0.7,  0.8,  0.9,  0.95, 0.99, 1.0 - 1e-4, 1.0 - 1e-6};
    for (double t : probe) {
      if (!std::isfinite(bs.pval_[k](t)))
        throw DomainError("basis element '" + bs.elems_[k].source +
                          "' is not finite on (0,1)");
    }

    // mean of the antiderivative over (0,1): \int_0^1 F = \int_0^1 (1-s) f(s) ds
    const Program& pv = bs.pval_[k];
    quad::Result r = quad::adaptive([&pv](double s) { return (1.0 - s) * pv(s); },
                                    0.0, 1.0, 1e-12, 1e-12);
    if (!r.converged) {
      char msg[160];
      std::snprintf(msg, sizeof(msg),
                    "antiderivative mean integration failed for element '%s' (err=%.3g)",
                    bs.elems_[k].source.c_str(), r.err);
      throw DomainError(msg);
    }
    bs.mean_[k] = r.value;
  }
  return bs;
}

void BasisSet::eval_into(double t, double* out) const {
  for (std::size_t k = 0; k < elems_.size(); ++k) out[k] = pval_[k](t);
}

void BasisSet::deriv1_into(double t, double* out) const {
  for (std::size_t k = 0; k < elems_.size(); ++k) out[k] = pd1_[k](t);
}

void BasisSet::deriv2_into(double t, double* out) const {
  for (std::size_t k = 0; k < elems_.size(); ++k) out[k] = pd2_[k](t);
}

void BasisSet::antideriv_into(double t, double* out) const {
  for (std::size_t k = 0; k < elems_.size(); ++k) {
    if (anti_ast_[k]) {
      out[k] = panti_[k](t);
    } else {
      if (t == 0.0) {
        out[k] = 0.0;
        continue;
      }
      const Program& pv = pval_[k];
      quad::Result r = quad::adaptive([&pv](double s) { return pv(s); }, 0.0, t, 1e-11, 1e-11);
      if (!r.converged) {
        char msg[160];
        std::snprintf(msg, sizeof(msg),
                      "antiderivative integration failed for element '%s' (err=%.3g)",
                      elems_[k].source.c_str(), r.err);
        throw DomainError(msg);
      }
      out[k] = r.value;
    }
  }
}

namespace {

void check_finite(const char* what, const std::vector<BasisExpr>& elems,
                  const std::vector<double>& out, double t) {
  for (std::size_t k = 0; k < out.size(); ++k) {
    if (!std::isfinite(out[k])) {
      char msg[160];
      std::snprintf(msg, sizeof(msg), "%s of element '%s' is not finite at t=%.17g", what,
                    elems[k].source.c_str(), t);
      throw DomainError(msg);
    }
  }
}

}  // namespace

std::vector<double> BasisSet::eval(double t) const {
  std::vector<double> out(size());
  eval_into(t, out.data());
  check_finite("value", elems_, out, t);
  return out;
}

std::vector<double> BasisSet::deriv(double t, int order) const {
  if (order != 1 && order != 2) throw DomainError("derivative order must be 1 or 2");
  std::vector<double> out(size());
  if (order == 1) {
    deriv1_into(t, out.data());
    check_finite("derivative", elems_, out, t);
  } else {
    deriv2_into(t, out.data());
    check_finite("second derivative", elems_, out, t);
  }
  return out;
}

std::vector<double> BasisSet::antideriv(double t) const {
  std::vector<double> out(size());
  antideriv_into(t, out.data());
  check_finite("antiderivative", elems_, out, t);
  return out;
}

}  // namespace panelq
