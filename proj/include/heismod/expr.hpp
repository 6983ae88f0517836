#pragma once

// Immutable complex-valued expression trees over z, zb (= conj z), t and the
// real foliation parameters s, p1, p2. Differentiation is symbolic and treats
// z and zb as independent (Wirtinger calculus).

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <complex>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "heismod/error.hpp"
#include "heismod/heis_core.hpp"

namespace heismod {

enum class Var : std::uint8_t { z = 0, zb, t, s, p1, p2 };

inline constexpr int kVarCount = 6;

using VarMask = std::uint8_t;

constexpr VarMask mask_of(Var v) noexcept { return static_cast<VarMask>(1u << static_cast<unsigned>(v)); }

inline constexpr VarMask kHeisenbergVars = mask_of(Var::z) | mask_of(Var::zb) | mask_of(Var::t);
inline constexpr VarMask kParameterVars = mask_of(Var::s) | mask_of(Var::p1) | mask_of(Var::p2);

constexpr std::string_view var_name(Var v) noexcept
{
    constexpr std::array<std::string_view, kVarCount> names{"z", "zb", "t", "s", "p1", "p2"};
    return names[static_cast<std::size_t>(v)];
}

/// The variable that plays the role of conj(v): z <-> zb, real variables fixed.
constexpr Var conjugate_var(Var v) noexcept
{
    if (v == Var::z) return Var::zb;
    if (v == Var::zb) return Var::z;
    return v;
}

enum class Op : std::uint8_t {
    Const, Var, Add, Sub, Mul, Div, Neg, PowR, Sqrt, Exp, Log, Sin, Cos, Im, Re, Abs2
};

namespace detail {
struct Node;
}

class Expr {
public:
    /// The constant 0.
    Expr();

    static Expr constant(cplx c);
    static Expr variable(Var v);

    Op op() const noexcept;
    cplx value() const noexcept;
    Var var() const noexcept;
    double exponent() const noexcept;
    Expr arg() const noexcept;
    Expr lhs() const noexcept { return arg(); }
    Expr rhs() const noexcept;
    VarMask free_vars() const noexcept;

    bool is_constant() const noexcept { return op() == Op::Const; }
    bool is_zero() const noexcept { return is_constant() && value() == cplx{}; }
    bool is_one() const noexcept { return is_constant() && value() == cplx{1.0}; }

    const detail::Node* id() const noexcept { return node_.get(); }

    /// Raw node construction, no simplification.
    static Expr make(Op op, const Expr& a, const Expr* b = nullptr, double exponent = 0.0);
    static Expr make(Op op, const Expr& a, const Expr& b) { return make(op, a, &b); }

private:
    explicit Expr(std::shared_ptr<const detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<const detail::Node> node_;
};

namespace detail {
struct Node {
    Op op = Op::Const;
    cplx value{};
    Var var = Var::z;
    double exponent = 0.0;
    VarMask vars = 0;
    std::shared_ptr<const Node> a;
    std::shared_ptr<const Node> b;
};
} // namespace detail

inline Expr::Expr()
{
    static const std::shared_ptr<const detail::Node> zero = std::make_shared<const detail::Node>();
    node_ = zero;
}

inline Expr Expr::constant(cplx c)
{
    auto n = std::make_shared<detail::Node>();
    n->op = Op::Const;
    n->value = c;
    return Expr(std::move(n));
}

inline Expr Expr::variable(Var v)
{
    auto n = std::make_shared<detail::Node>();
    n->op = Op::Var;
    n->var = v;
    n->vars = mask_of(v);
    return Expr(std::move(n));
}

inline Expr Expr::make(Op op, const Expr& a, const Expr* b, double exponent)
{
    auto n = std::make_shared<detail::Node>();
    n->op = op;
    n->exponent = exponent;
    n->vars = a.free_vars();
    n->a = a.node_;
    if (b) {
        n->vars = static_cast<VarMask>(n->vars | b->free_vars());
        n->b = b->node_;
    }
    // re, im and abs2 see conj(u) as well, so they depend on both z and zb
    constexpr VarMask zpair = mask_of(Var::z) | mask_of(Var::zb);
    if ((op == Op::Re || op == Op::Im || op == Op::Abs2) && (n->vars & zpair) != 0)
        n->vars = static_cast<VarMask>(n->vars | zpair);
    return Expr(std::move(n));
}

inline Op Expr::op() const noexcept { return node_->op; }
inline cplx Expr::value() const noexcept { return node_->value; }
inline Var Expr::var() const noexcept { return node_->var; }
inline double Expr::exponent() const noexcept { return node_->exponent; }
inline Expr Expr::arg() const noexcept { return Expr(node_->a); }
inline Expr Expr::rhs() const noexcept { return Expr(node_->b); }
inline VarMask Expr::free_vars() const noexcept { return node_->vars; }

// ---------------------------------------------------------------------------
// Scalar kernels shared by tree evaluation and compiled tapes.

struct EvalDiagnostics {
    bool branch_cut = false;
};

inline constexpr double kDivisionFloor = 1e-300;

namespace detail {

inline bool on_negative_real_axis(cplx x) noexcept { return x.imag() == 0.0 && x.real() < 0.0; }

inline cplx int_pow(cplx x, long n)
{
    const bool invert = n < 0;
    unsigned long k = static_cast<unsigned long>(invert ? -n : n);
    cplx result{1.0};
    cplx base = x;
    while (k != 0) {
        if (k & 1u) result *= base;
        base *= base;
        k >>= 1u;
    }
    if (invert) {
        if (std::abs(result) < kDivisionFloor)
            throw Error(ErrorKind::DivisionNearZero, "negative integer power of a value near zero");
        return 1.0 / result;
    }
    return result;
}

inline cplx apply_unary(Op op, cplx x, double exponent, EvalDiagnostics* diag)
{
    switch (op) {
    case Op::Neg: return -x;
    case Op::PowR: {
        if (exponent == std::trunc(exponent) && std::abs(exponent) <= 64.0)
            return int_pow(x, static_cast<long>(exponent));
        if (x == cplx{}) {
            if (exponent > 0.0) return {};
            throw Error(ErrorKind::DivisionNearZero, "negative power of zero");
        }
        if (diag && on_negative_real_axis(x)) diag->branch_cut = true;
        return std::pow(x, exponent);
    }
    case Op::Sqrt:
        if (diag && on_negative_real_axis(x)) diag->branch_cut = true;
        return std::sqrt(x);
    case Op::Exp: return std::exp(x);
    case Op::Log:
        if (std::abs(x) < kDivisionFloor) throw Error(ErrorKind::DivisionNearZero, "log of a value near zero");
        if (diag && on_negative_real_axis(x)) diag->branch_cut = true;
        return std::log(x);
    case Op::Sin: return std::sin(x);
    case Op::Cos: return std::cos(x);
    case Op::Re: return {x.real(), 0.0};
    case Op::Im: return {x.imag(), 0.0};
    case Op::Abs2: return {std::norm(x), 0.0};
    default: break;
    }
    return x;
}

inline cplx apply_binary(Op op, cplx a, cplx b)
{
    switch (op) {
    case Op::Add: return a + b;
    case Op::Sub: return a - b;
    case Op::Mul: return a * b;
    case Op::Div:
        if (std::abs(b) < kDivisionFloor) throw Error(ErrorKind::DivisionNearZero, "denominator near zero");
        return a / b;
    default: break;
    }
    return {};
}

inline bool is_binary(Op op) noexcept
{
    return op == Op::Add || op == Op::Sub || op == Op::Mul || op == Op::Div;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Smart constructors: constant folding plus x*0, x*1, x+0 elimination.

inline Expr operator+(const Expr& a, const Expr& b)
{
    if (a.is_constant() && b.is_constant()) return Expr::constant(a.value() + b.value());
    if (a.is_zero()) return b;
    if (b.is_zero()) return a;
    return Expr::make(Op::Add, a, b);
}

inline Expr operator-(const Expr& a)
{
    if (a.is_constant()) return Expr::constant(-a.value());
    if (a.op() == Op::Neg) return a.arg();
    return Expr::make(Op::Neg, a);
}

inline Expr operator-(const Expr& a, const Expr& b)
{
    if (a.is_constant() && b.is_constant()) return Expr::constant(a.value() - b.value());
    if (b.is_zero()) return a;
    if (a.is_zero()) return -b;
    return Expr::make(Op::Sub, a, b);
}

inline Expr operator*(const Expr& a, const Expr& b)
{
    if (a.is_constant() && b.is_constant()) return Expr::constant(a.value() * b.value());
    if (a.is_zero() || b.is_zero()) return Expr::constant(0.0);
    if (a.is_one()) return b;
    if (b.is_one()) return a;
    return Expr::make(Op::Mul, a, b);
}

inline Expr operator/(const Expr& a, const Expr& b)
{
    if (a.is_constant() && b.is_constant() && std::abs(b.value()) >= kDivisionFloor)
        return Expr::constant(a.value() / b.value());
    if (a.is_zero()) return Expr::constant(0.0);
    if (b.is_one()) return a;
    return Expr::make(Op::Div, a, b);
}

inline Expr operator+(const Expr& a, cplx c) { return a + Expr::constant(c); }
inline Expr operator+(cplx c, const Expr& a) { return Expr::constant(c) + a; }
inline Expr operator-(const Expr& a, cplx c) { return a - Expr::constant(c); }
inline Expr operator-(cplx c, const Expr& a) { return Expr::constant(c) - a; }
inline Expr operator*(cplx c, const Expr& a) { return Expr::constant(c) * a; }
inline Expr operator*(const Expr& a, cplx c) { return a * Expr::constant(c); }
inline Expr operator/(const Expr& a, cplx c) { return a / Expr::constant(c); }
inline Expr operator/(cplx c, const Expr& a) { return Expr::constant(c) / a; }

namespace detail {
inline Expr unary(Op op, const Expr& a, double exponent = 0.0)
{
    if (a.is_constant()) {
        try {
            const cplx v = apply_unary(op, a.value(), exponent, nullptr);
            if (std::isfinite(v.real()) && std::isfinite(v.imag()) && !(op == Op::PowR && on_negative_real_axis(a.value())))
                return Expr::constant(v);
        } catch (const Error&) {
            // leave unevaluated; evaluation reports the error at the call site
        }
    }
    return Expr::make(op, a, nullptr, exponent);
}
} // namespace detail

inline Expr pow(const Expr& a, double exponent)
{
    if (exponent == 0.0) return Expr::constant(1.0);
    if (exponent == 1.0) return a;
    return detail::unary(Op::PowR, a, exponent);
}
inline Expr sqrt(const Expr& a) { return detail::unary(Op::Sqrt, a); }
inline Expr exp(const Expr& a) { return detail::unary(Op::Exp, a); }
inline Expr log(const Expr& a) { return detail::unary(Op::Log, a); }
inline Expr sin(const Expr& a) { return detail::unary(Op::Sin, a); }
inline Expr cos(const Expr& a) { return detail::unary(Op::Cos, a); }
inline Expr re(const Expr& a) { return detail::unary(Op::Re, a); }
inline Expr im(const Expr& a) { return detail::unary(Op::Im, a); }
inline Expr abs2(const Expr& a) { return detail::unary(Op::Abs2, a); }

inline Expr var(Var v) { return Expr::variable(v); }
inline Expr cst(cplx c) { return Expr::constant(c); }

// ---------------------------------------------------------------------------
// Bindings

class Binding {
public:
    Binding& set(Var v, cplx value)
    {
        values_[static_cast<std::size_t>(v)] = value;
        mask_ = static_cast<VarMask>(mask_ | mask_of(v));
        return *this;
    }

    bool has(Var v) const noexcept { return (mask_ & mask_of(v)) != 0; }
    cplx get(Var v) const noexcept { return values_[static_cast<std::size_t>(v)]; }
    VarMask mask() const noexcept { return mask_; }

    static Binding heisenberg(const HPoint& p)
    {
        Binding b;
        b.set(Var::z, p.z).set(Var::zb, std::conj(p.z)).set(Var::t, p.t);
        return b;
    }

    /// Planar point w bound as z (and its conjugate as zb).
    static Binding plane(cplx w)
    {
        Binding b;
        b.set(Var::z, w).set(Var::zb, std::conj(w));
        return b;
    }

    static Binding params(double s, double p1, double p2 = 0.0)
    {
        Binding b;
        b.set(Var::s, s).set(Var::p1, p1).set(Var::p2, p2);
        return b;
    }

    /// Throws unless every variable in `needed` is bound and zb = conj(z) when both are.
    void validate(VarMask needed) const
    {
        if ((needed & ~mask_) != 0) {
            for (int i = 0; i < kVarCount; ++i) {
                const Var v = static_cast<Var>(i);
                if ((needed & mask_of(v)) && !has(v))
                    throw Error(ErrorKind::UnboundVariable, std::string("variable '") + std::string(var_name(v)) + "' is not bound");
            }
        }
        if (has(Var::z) && has(Var::zb)) {
            const cplx z = get(Var::z);
            const cplx zb = get(Var::zb);
            if (std::abs(zb - std::conj(z)) > 1e-12 * (1.0 + std::abs(z)))
                throw Error(ErrorKind::InconsistentBinding, "zb must equal conj(z)");
        }
        for (int i = 0; i < kVarCount; ++i) {
            const Var v = static_cast<Var>(i);
            if (!(needed & mask_of(v))) continue;
            const cplx x = get(v);
            if (!std::isfinite(x.real()) || !std::isfinite(x.imag()))
                throw Error(ErrorKind::NonFinite, std::string("variable '") + std::string(var_name(v)) + "' is not finite");
        }
    }

private:
    std::array<cplx, kVarCount> values_{};
    VarMask mask_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {
inline cplx eval_node(const Expr& e, const Binding& b, EvalDiagnostics* diag)
{
    switch (e.op()) {
    case Op::Const: return e.value();
    case Op::Var: return b.get(e.var());
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div:
        return apply_binary(e.op(), eval_node(e.lhs(), b, diag), eval_node(e.rhs(), b, diag));
    default:
        return apply_unary(e.op(), eval_node(e.arg(), b, diag), e.exponent(), diag);
    }
}
} // namespace detail

inline cplx eval(const Expr& e, const Binding& b, EvalDiagnostics* diag = nullptr)
{
    b.validate(e.free_vars());
    return detail::eval_node(e, b, diag);
}

/// Flat register tape for hot loops. Shared subtrees are evaluated once.
class CompiledExpr {
public:
    CompiledExpr() : CompiledExpr(Expr{}) {}

    explicit CompiledExpr(const Expr& e) : CompiledExpr(std::vector<Expr>{e}) {}

    /// One tape for several roots; subtrees shared between roots are evaluated once.
    explicit CompiledExpr(const std::vector<Expr>& roots)
    {
        std::unordered_map<const detail::Node*, std::uint32_t> slots;
        for (const Expr& e : roots) {
            vars_ = static_cast<VarMask>(vars_ | e.free_vars());
            outputs_.push_back(emit(e, slots));
        }
    }

    VarMask free_vars() const noexcept { return vars_; }

    cplx operator()(const Binding& b, EvalDiagnostics* diag = nullptr) const
    {
        b.validate(vars_);
        return run(b, diag);
    }

    /// Skips binding validation; callers guarantee a complete, consistent binding.
    cplx run(const Binding& b, EvalDiagnostics* diag = nullptr) const
    {
        const std::vector<cplx>& regs = execute(b, diag);
        return regs[outputs_.front()];
    }

    /// Evaluates every root; out must hold outputs() values.
    void run_all(const Binding& b, cplx* out, EvalDiagnostics* diag = nullptr) const
    {
        const std::vector<cplx>& regs = execute(b, diag);
        for (std::size_t k = 0; k < outputs_.size(); ++k) out[k] = regs[outputs_[k]];
    }

    std::size_t outputs() const noexcept { return outputs_.size(); }
    std::size_t size() const noexcept { return code_.size(); }

private:
    struct Instr {
        Op op;
        Var var;
        std::uint32_t a;
        std::uint32_t b;
        cplx value;
        double exponent;
    };

    const std::vector<cplx>& execute(const Binding& b, EvalDiagnostics* diag) const
    {
        thread_local std::vector<cplx> regs;
        if (regs.size() < code_.size()) regs.resize(code_.size());
        for (std::size_t i = 0; i < code_.size(); ++i) {
            const Instr& in = code_[i];
            switch (in.op) {
            case Op::Const: regs[i] = in.value; break;
            case Op::Var: regs[i] = b.get(in.var); break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div: regs[i] = detail::apply_binary(in.op, regs[in.a], regs[in.b]); break;
            default: regs[i] = detail::apply_unary(in.op, regs[in.a], in.exponent, diag); break;
            }
        }
        return regs;
    }

    std::uint32_t emit(const Expr& e, std::unordered_map<const detail::Node*, std::uint32_t>& slots)
    {
        if (auto it = slots.find(e.id()); it != slots.end()) return it->second;
        Instr in{e.op(), e.var(), 0, 0, e.value(), e.exponent()};
        if (e.op() != Op::Const && e.op() != Op::Var) {
            in.a = emit(e.arg(), slots);
            if (detail::is_binary(e.op())) in.b = emit(e.rhs(), slots);
        }
        code_.push_back(in);
        const auto slot = static_cast<std::uint32_t>(code_.size() - 1);
        slots.emplace(e.id(), slot);
        return slot;
    }

    std::vector<Instr> code_;
    std::vector<std::uint32_t> outputs_;
    VarMask vars_ = 0;
};

// ---------------------------------------------------------------------------
// Structural conjugation and symbolic differentiation

namespace detail {
using Memo = std::unordered_map<const Node*, Expr>;

inline Expr conj_rec(const Expr& e, Memo& memo)
{
    if (auto it = memo.find(e.id()); it != memo.end()) return it->second;
    Expr out;
    switch (e.op()) {
    case Op::Const: out = Expr::constant(std::conj(e.value())); break;
    case Op::Var: out = Expr::variable(conjugate_var(e.var())); break;
    case Op::Add: out = conj_rec(e.lhs(), memo) + conj_rec(e.rhs(), memo); break;
    case Op::Sub: out = conj_rec(e.lhs(), memo) - conj_rec(e.rhs(), memo); break;
    case Op::Mul: out = conj_rec(e.lhs(), memo) * conj_rec(e.rhs(), memo); break;
    case Op::Div: out = conj_rec(e.lhs(), memo) / conj_rec(e.rhs(), memo); break;
    case Op::Re:
    case Op::Im:
    case Op::Abs2: out = e; break;
    default: out = unary(e.op(), conj_rec(e.arg(), memo), e.exponent()); break;
    }
    memo.emplace(e.id(), out);
    return out;
}
} // namespace detail

/// Structural complex conjugate: swaps z and zb, conjugates constants.
inline Expr conj_expr(const Expr& e)
{
    detail::Memo memo;
    return detail::conj_rec(e, memo);
}

namespace detail {
inline Expr diff_rec(const Expr& e, Var v, Memo& memo, Memo& conj_memo, Memo& bar_memo);

// d_v of conj(u) equals conj(d_{conj v} u).
inline Expr diff_of_conj(const Expr& u, Var v, Memo& memo, Memo& conj_memo, Memo& bar_memo)
{
    const Var vb = conjugate_var(v);
    if (vb == v) return conj_rec(diff_rec(u, v, memo, conj_memo, bar_memo), conj_memo);
    // memo tables swap roles when differentiating w.r.t. the conjugate variable
    return conj_rec(diff_rec(u, vb, bar_memo, conj_memo, memo), conj_memo);
}

inline Expr diff_rec(const Expr& e, Var v, Memo& memo, Memo& conj_memo, Memo& bar_memo)
{
    if ((e.free_vars() & mask_of(v)) == 0) return Expr::constant(0.0);
    if (auto it = memo.find(e.id()); it != memo.end()) return it->second;

    auto d = [&](const Expr& x) { return diff_rec(x, v, memo, conj_memo, bar_memo); };
    const Expr a = e.arg();
    Expr out;
    switch (e.op()) {
    case Op::Const: out = Expr::constant(0.0); break;
    case Op::Var: out = Expr::constant(e.var() == v ? 1.0 : 0.0); break;
    case Op::Add: out = d(a) + d(e.rhs()); break;
    case Op::Sub: out = d(a) - d(e.rhs()); break;
    case Op::Mul: out = d(a) * e.rhs() + a * d(e.rhs()); break;
    case Op::Div: {
        const Expr b = e.rhs();
        if ((b.free_vars() & mask_of(v)) == 0)
            out = d(a) / b;
        else
            out = (d(a) * b - a * d(b)) / pow(b, 2.0);
        break;
    }
    case Op::Neg: out = -d(a); break;
    case Op::PowR: {
        const double k = e.exponent();
        out = Expr::constant(k) * pow(a, k - 1.0) * d(a);
        break;
    }
    case Op::Sqrt: out = d(a) / (Expr::constant(2.0) * e); break;
    case Op::Exp: out = e * d(a); break;
    case Op::Log: out = d(a) / a; break;
    case Op::Sin: out = cos(a) * d(a); break;
    case Op::Cos: out = -(sin(a) * d(a)); break;
    case Op::Re: {
        if (conjugate_var(v) == v) {
            out = re(d(a));
        } else {
            out = (d(a) + diff_of_conj(a, v, memo, conj_memo, bar_memo)) / Expr::constant(2.0);
        }
        break;
    }
    case Op::Im: {
        if (conjugate_var(v) == v) {
            out = im(d(a));
        } else {
            out = (d(a) - diff_of_conj(a, v, memo, conj_memo, bar_memo)) / Expr::constant(cplx{0.0, 2.0});
        }
        break;
    }
    case Op::Abs2: {
        const Expr ab = conj_rec(a, conj_memo);
        if (conjugate_var(v) == v) {
            out = Expr::constant(2.0) * re(ab * d(a));
        } else {
            out = d(a) * ab + a * diff_of_conj(a, v, memo, conj_memo, bar_memo);
        }
        break;
    }
    }
    memo.emplace(e.id(), out);
    return out;
}
} // namespace detail

/// Exact partial derivative with all six variables treated as independent.
inline Expr diff(const Expr& e, Var v)
{
    detail::Memo memo;
    detail::Memo conj_memo;
    detail::Memo bar_memo;
    return detail::diff_rec(e, v, memo, conj_memo, bar_memo);
}

inline Expr d_z(const Expr& e) { return diff(e, Var::z); }
inline Expr d_zb(const Expr& e) { return diff(e, Var::zb); }
inline Expr d_t(const Expr& e) { return diff(e, Var::t); }

enum class Field { Z, Zbar, T };

/// Z = d_z + i zb d_t, Zbar = d_zb - i z d_t, T = d_t (Reeb field of dt - i zb dz + i z dzb).
inline Expr apply_field(const Expr& e, Field field)
{
    if ((e.free_vars() & ~kHeisenbergVars) != 0)
        throw Error(ErrorKind::VariableMismatch, "CR vector fields act on expressions in z, zb, t only");
    const Expr i = Expr::constant(cplx{0.0, 1.0});
    switch (field) {
    case Field::Z: return d_z(e) + i * var(Var::zb) * d_t(e);
    case Field::Zbar: return d_zb(e) - i * var(Var::z) * d_t(e);
    case Field::T: return d_t(e);
    }
    return {};
}

// ---------------------------------------------------------------------------
// Printing (re-parseable)

namespace detail {
inline std::string format_double(double x)
{
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x);
    return std::string(buf.data(), res.ptr);
}

inline std::string format_const(cplx c)
{
    if (c.imag() == 0.0) {
        const std::string r = format_double(c.real());
        return c.real() < 0.0 || std::signbit(c.real()) ? "(" + r + ")" : r;
    }
    const std::string imag = c.imag() == 1.0 ? std::string("i") : "(" + format_double(c.imag()) + "*i)";
    if (c.real() == 0.0) return imag;
    return "(" + format_double(c.real()) + " + " + imag + ")";
}

inline void print_rec(const Expr& e, std::string& out)
{
    auto fn = [&](std::string_view name) {
        out += name;
        out += '(';
        print_rec(e.arg(), out);
        out += ')';
    };
    auto bin = [&](std::string_view sym) {
        out += '(';
        print_rec(e.lhs(), out);
        out += sym;
        print_rec(e.rhs(), out);
        out += ')';
    };
    switch (e.op()) {
    case Op::Const: out += format_const(e.value()); break;
    case Op::Var: out += var_name(e.var()); break;
    case Op::Add: bin(" + "); break;
    case Op::Sub: bin(" - "); break;
    case Op::Mul: bin("*"); break;
    case Op::Div: bin("/"); break;
    case Op::Neg:
        out += "(-";
        print_rec(e.arg(), out);
        out += ')';
        break;
    case Op::PowR:
        out += '(';
        print_rec(e.arg(), out);
        out += ")^(";
        out += format_double(e.exponent());
        out += ')';
        break;
    case Op::Sqrt: fn("sqrt"); break;
    case Op::Exp: fn("exp"); break;
    case Op::Log: fn("log"); break;
    case Op::Sin: fn("sin"); break;
    case Op::Cos: fn("cos"); break;
    case Op::Re: fn("re"); break;
    case Op::Im: fn("im"); break;
    case Op::Abs2: fn("abs2"); break;
    }
}
} // namespace detail

inline std::string to_string(const Expr& e)
{
    std::string out;
    detail::print_rec(e, out);
    return out;
}

// ---------------------------------------------------------------------------
// Parser
//
//   expr   := term (('+'|'-') term)*
//   term   := factor (('*'|'/') factor)*
//   factor := unary ('^' literal)?
//   unary  := '-' unary | atom
//   atom   := number | 'i' | 'pi' | ident | ident '(' expr ')' | '(' expr ')'
//   literal:= ['-'] number | '(' ['-'] number ['/' number] ')'

namespace detail {
class Parser {
public:
    explicit Parser(std::string_view text) : text_(text) {}

    Expr parse()
    {
        Expr e = expr();
        skip_ws();
        if (pos_ != text_.size()) fail("unexpected trailing input");
        return e;
    }

private:
    [[noreturn]] void fail(const std::string& msg, ErrorKind kind = ErrorKind::SyntaxError) const
    {
        throw Error(kind, msg, pos_);
    }

    void skip_ws()
    {
        while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    bool accept(char c)
    {
        skip_ws();
        if (pos_ < text_.size() && text_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }

    void expect(char c)
    {
        if (!accept(c)) fail(std::string("expected '") + c + "'");
    }

    char peek()
    {
        skip_ws();
        return pos_ < text_.size() ? text_[pos_] : '\0';
    }

    Expr expr()
    {
        Expr e = term();
        for (;;) {
            if (accept('+'))
                e = Expr::make(Op::Add, e, term());
            else if (accept('-'))
                e = Expr::make(Op::Sub, e, term());
            else
                return e;
        }
    }

    Expr term()
    {
        Expr e = factor();
        for (;;) {
            if (accept('*'))
                e = Expr::make(Op::Mul, e, factor());
            else if (accept('/'))
                e = Expr::make(Op::Div, e, factor());
            else
                return e;
        }
    }

    Expr factor()
    {
        Expr base = unary();
        if (accept('^')) return Expr::make(Op::PowR, base, nullptr, exponent_literal());
        return base;
    }

    Expr unary()
    {
        if (accept('-')) return Expr::make(Op::Neg, unary());
        return atom();
    }

    bool at_number()
    {
        const char c = peek();
        return std::isdigit(static_cast<unsigned char>(c)) || c == '.';
    }

    double number()
    {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isdigit(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '.')) ++pos_;
        if (pos_ < text_.size() && (text_[pos_] == 'e' || text_[pos_] == 'E')) {
            std::size_t look = pos_ + 1;
            if (look < text_.size() && (text_[look] == '+' || text_[look] == '-')) ++look;
            if (look < text_.size() && std::isdigit(static_cast<unsigned char>(text_[look]))) {
                pos_ = look;
                while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
            }
        }
        double value = 0.0;
        const auto res = std::from_chars(text_.data() + start, text_.data() + pos_, value);
        if (res.ec != std::errc{} || res.ptr != text_.data() + pos_) {
            pos_ = start;
            fail("malformed number");
        }
        return value;
    }

    double signed_number()
    {
        double sign = 1.0;
        if (accept('-'))
            sign = -1.0;
        else
            accept('+');
        if (!at_number()) fail("exponent must be a numeric literal", ErrorKind::NonLiteralExponent);
        return sign * number();
    }

    double exponent_literal()
    {
        if (accept('(')) {
            double value = signed_number();
            if (accept('/')) {
                if (!at_number()) fail("exponent must be a numeric literal", ErrorKind::NonLiteralExponent);
                const double den = number();
                if (den == 0.0) fail("zero denominator in exponent");
                value /= den;
            }
            if (!accept(')')) fail("exponent must be a numeric literal", ErrorKind::NonLiteralExponent);
            return value;
        }
        return signed_number();
    }

    std::string_view identifier()
    {
        skip_ws();
        const std::size_t start = pos_;
        while (pos_ < text_.size() && (std::isalnum(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_')) ++pos_;
        return text_.substr(start, pos_ - start);
    }

    Expr atom()
    {
        if (at_number()) return Expr::constant(number());
        if (accept('(')) {
            Expr e = expr();
            expect(')');
            return e;
        }
        const char c = peek();
        if (!(std::isalpha(static_cast<unsigned char>(c)) || c == '_')) fail(c == '\0' ? "unexpected end of input" : "unexpected character");
        const std::size_t start = pos_;
        const std::string_view id = identifier();

        static const std::array<std::pair<std::string_view, Op>, 9> functions{{
            {"sqrt", Op::Sqrt}, {"exp", Op::Exp}, {"log", Op::Log}, {"sin", Op::Sin}, {"cos", Op::Cos},
            {"re", Op::Re}, {"im", Op::Im}, {"abs2", Op::Abs2}, {"conj", Op::Const},
        }};
        for (const auto& [name, op] : functions) {
            if (id != name) continue;
            expect('(');
            Expr inner = expr();
            expect(')');
            if (name == "conj") return conj_expr(inner);
            return Expr::make(op, inner);
        }
        if (id == "i") return Expr::constant(cplx{0.0, 1.0});
        if (id == "pi") return Expr::constant(3.14159265358979323846);
        for (int k = 0; k < kVarCount; ++k) {
            const Var v = static_cast<Var>(k);
            if (id == var_name(v)) return Expr::variable(v);
        }
        pos_ = start;
        fail("unknown identifier '" + std::string(id) + "'", ErrorKind::UnknownIdentifier);
    }

    std::string_view text_;
    std::size_t pos_ = 0;
};
} // namespace detail

/// Parses the expression grammar above; conj(...) is applied structurally at parse time.
inline Expr parse(std::string_view text) { return detail::Parser(text).parse(); }

} // namespace heismod
