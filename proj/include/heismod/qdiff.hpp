#pragma once

// Quadratic differentials [q dz^2] on domains of H and the residuals of the
// operators B2, D2' and D2''.

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "heismod/error.hpp"
#include "heismod/expr.hpp"
#include "heismod/foliation.hpp"
#include "heismod/heis_core.hpp"

namespace heismod {

enum class Operator { B2, D2prime, D2doubleprime };

constexpr std::string_view to_string(Operator op) noexcept
{
    switch (op) {
    case Operator::B2: return "b2";
    case Operator::D2prime: return "d2prime";
    case Operator::D2doubleprime: return "d2doubleprime";
    }
    return "?";
}

struct OperatorResidual {
    cplx value{};
    HPoint point{};
    Operator tag = Operator::B2;
    /// Sum of the moduli of the summands; zero residual is meaningful relative to this.
    double scale = 0.0;

    double relative() const noexcept { return std::abs(value) / (1.0 + scale); }
};

class QuadDiff {
public:
    explicit QuadDiff(Expr coeff) : coeff_(std::move(coeff))
    {
        if ((coeff_.free_vars() & kParameterVars) != 0)
            throw Error(ErrorKind::VariableMismatch, "q may only use z, zb, t");
        q_ = std::make_shared<const CompiledExpr>(coeff_);
        for (Operator op : {Operator::B2, Operator::D2prime, Operator::D2doubleprime})
            tapes_[static_cast<std::size_t>(op)] = std::make_shared<const CompiledExpr>(terms(op));
    }

    static QuadDiff parse(std::string_view text) { return QuadDiff(heismod::parse(text)); }

    const Expr& coeff() const noexcept { return coeff_; }

    cplx operator()(const HPoint& p) const { return q_->run(Binding::heisenberg(p)); }

    /// Summands of the operator, in the order they enter its combination.
    std::vector<Expr> terms(Operator op) const
    {
        const Expr& q = coeff_;
        const Expr Zbq = apply_field(q, Field::Zbar);
        switch (op) {
        case Operator::B2: {
            const Expr qb = conj_expr(q);
            return {apply_field(q * qb, Field::Zbar), qb * Zbq};
        }
        case Operator::D2prime: {
            const Expr Zq = apply_field(q, Field::Z);
            return {cst(2.0) * q * apply_field(Zbq, Field::Z), Zq * Zbq,
                    cst(cplx{0.0, 4.0}) * q * apply_field(q, Field::T)};
        }
        case Operator::D2doubleprime:
            return {cst(2.0) * q * apply_field(Zbq, Field::Zbar), Zbq * Zbq};
        }
        return {};
    }

    OperatorResidual residual(Operator op, const HPoint& p) const
    {
        const CompiledExpr& tape = tape_for(op);
        std::array<cplx, 3> t{};
        tape.run_all(Binding::heisenberg(p), t.data());
        OperatorResidual r;
        r.point = p;
        r.tag = op;
        switch (op) {
        case Operator::B2: r.value = t[0] + t[1]; break;
        case Operator::D2prime: r.value = t[0] - t[1] - t[2]; break;
        case Operator::D2doubleprime: r.value = t[0] - t[1]; break;
        }
        for (std::size_t k = 0; k < tape.outputs(); ++k) r.scale += std::abs(t[k]);
        return r;
    }

private:
    const CompiledExpr& tape_for(Operator op) const { return *tapes_[static_cast<std::size_t>(op)]; }

    Expr coeff_;
    std::shared_ptr<const CompiledExpr> q_;
    std::array<std::shared_ptr<const CompiledExpr>, 3> tapes_;
};

inline cplx eval_q(const QuadDiff& q, const HPoint& p)
{
    require_finite(p);
    return q(p);
}

inline constexpr double kLegendrianTol = 1e-8;

/// q(p) (dz)^2 for a legendrian tangent; q is only defined modulo the contact form.
inline cplx q_on_tangent(const QuadDiff& q, const HPoint& p, const HTangent& v)
{
    require_finite(v);
    const double res = legendrian_residual(p.z, v);
    const double scale = 1.0 + std::abs(v.dt) + 2.0 * std::abs(p.z) * std::abs(v.dz);
    if (std::abs(res) > kLegendrianTol * scale)
        throw Error(ErrorKind::NonLegendrianTangent, "legendrian residual " + std::to_string(res));
    return eval_q(q, p) * v.dz * v.dz;
}

enum class Direction { Horizontal, Vertical, Neither, Zero };

inline Direction classify(cplx value, double rel_tol = kLegendrianTol)
{
    const double mag = std::abs(value);
    if (mag == 0.0) return Direction::Zero;
    if (std::abs(value.imag()) > rel_tol * mag) return Direction::Neither;
    return value.real() > 0.0 ? Direction::Horizontal : Direction::Vertical;
}

inline cplx b2_residual(const QuadDiff& q, const HPoint& p) { return q.residual(Operator::B2, p).value; }
inline cplx d2prime_residual(const QuadDiff& q, const HPoint& p) { return q.residual(Operator::D2prime, p).value; }
inline cplx d2doubleprime_residual(const QuadDiff& q, const HPoint& p)
{
    return q.residual(Operator::D2doubleprime, p).value;
}

/// Domain predicate: a point is inside iff Re(expr) > 0 there and the expression evaluates.
class DomainGuard {
public:
    DomainGuard() = default;
    explicit DomainGuard(const Expr& e) : tape_(std::make_shared<const CompiledExpr>(e))
    {
        if ((e.free_vars() & kParameterVars) != 0)
            throw Error(ErrorKind::VariableMismatch, "domain guards may only use z, zb, t");
    }

    bool active() const noexcept { return static_cast<bool>(tape_); }

    bool contains(const HPoint& p) const
    {
        if (!is_finite(p)) return false;
        if (!tape_) return true;
        try {
            return tape_->run(Binding::heisenberg(p)).real() > 0.0;
        } catch (const Error&) {
            return false;
        }
    }

private:
    std::shared_ptr<const CompiledExpr> tape_;
};

/// (q o Phi)(u) for a QuadDiff composed with a foliation.
inline QField compose(const QuadDiff& q, const Foliation& F)
{
    return [q, F](const Param& u) { return q(F.point(u)); };
}

/// Evenly spaced interior sample points of the parameter box (cell midpoints).
inline std::vector<Param> parameter_grid(const Foliation& F, std::size_t ns, std::size_t np1, std::size_t np2)
{
    std::vector<Param> out;
    out.reserve(ns * np1 * np2);
    auto at = [](Interval iv, std::size_t k, std::size_t n) {
        return iv.lo + (static_cast<double>(k) + 0.5) * iv.width() / static_cast<double>(n);
    };
    for (std::size_t a = 0; a < np1; ++a)
        for (std::size_t b = 0; b < np2; ++b)
            for (std::size_t c = 0; c < ns; ++c)
                out.push_back({at(F.s_range(), c, ns), at(F.p1_range(), a, np1), at(F.p2_range(), b, np2)});
    return out;
}

/// q_f = f / (d_s Phi1)^2 in parameter coordinates, so that q_f(gamma') = f along leaves.
class PulledBackQ {
public:
    PulledBackQ(Foliation F, Expr f, std::size_t grid = 7)
        : F_(std::move(F)), f_(std::move(f)), tape_(std::make_shared<const CompiledExpr>(f_))
    {
        if ((f_.free_vars() & kHeisenbergVars) != 0)
            throw Error(ErrorKind::VariableMismatch, "f may only use s, p1, p2");
        for (const Param& u : parameter_grid(F_, grid, grid, grid)) {
            const cplx v = tape_->run(bind(u));
            if (!(v.real() > 0.0) || std::abs(v.imag()) > kHorizontalTol * std::abs(v))
                throw Error(ErrorKind::PreconditionFailed, "f must be real-positive on the parameter box");
            (void)(*this)(u);
        }
    }

    const Foliation& foliation() const noexcept { return F_; }

    cplx operator()(const Param& u) const
    {
        const cplx v = F_.jet(u).f1_s;
        if (std::abs(v) < 1e-150) throw Error(ErrorKind::ZeroVelocity, "d_s Phi1 vanishes");
        return tape_->run(bind(u)) / (v * v);
    }

    QField field() const
    {
        return [self = *this](const Param& u) { return self(u); };
    }

    /// Newton solve of Phi(u) = p seeded from the best point of a parameter grid.
    Param invert(const HPoint& p, std::size_t seeds = 10) const
    {
        auto residual = [&](const FoliationJet& j) {
            return std::array<double, 3>{j.f1.real() - p.z.real(), j.f1.imag() - p.z.imag(), j.f2 - p.t};
        };
        auto norm3 = [](const std::array<double, 3>& r) { return std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2]); };
        Param u;
        double best = std::numeric_limits<double>::infinity();
        for (const Param& g : parameter_grid(F_, seeds, seeds, seeds)) {
            double r;
            try {
                r = norm3(residual(F_.jet(g)));
            } catch (const Error&) {
                continue;
            }
            if (r < best) {
                best = r;
                u = g;
            }
        }
        const double goal = 1e-12 * (1.0 + std::abs(p.z) + std::abs(p.t));
        for (int it = 0; it < 60 && std::isfinite(best); ++it) {
            const FoliationJet j = F_.jet(u);
            const auto r = residual(j);
            const double rn = norm3(r);
            if (rn <= goal) return checked_inside(u);
            const double m[3][3] = {{j.f1_s.real(), j.f1_p1.real(), j.f1_p2.real()},
                                    {j.f1_s.imag(), j.f1_p1.imag(), j.f1_p2.imag()},
                                    {j.f2_s, j.f2_p1, j.f2_p2}};
            const double det = jac_det(j);
            if (!(std::abs(det) > 0.0)) break;
            // Cramer's rule for m * d = -r
            std::array<double, 3> d{};
            for (int col = 0; col < 3; ++col) {
                double mc[3][3];
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b) mc[a][b] = (b == col) ? -r[a] : m[a][b];
                d[col] = (mc[0][0] * (mc[1][1] * mc[2][2] - mc[1][2] * mc[2][1]) -
                          mc[0][1] * (mc[1][0] * mc[2][2] - mc[1][2] * mc[2][0]) +
                          mc[0][2] * (mc[1][0] * mc[2][1] - mc[1][1] * mc[2][0])) /
                         det;
            }
            double step = 1.0;
            bool moved = false;
            for (int half = 0; half < 30; ++half, step *= 0.5) {
                const Param trial{u.s + step * d[0], u.p1 + step * d[1], u.p2 + step * d[2]};
                try {
                    if (norm3(residual(F_.jet(trial))) < rn) {
                        u = trial;
                        moved = true;
                        break;
                    }
                } catch (const Error&) {
                }
            }
            if (!moved) break;
        }
        throw Error(ErrorKind::InversionFailure, "Newton iteration did not converge");
    }

    /// q_f at a point of H through numerical inversion of Phi.
    cplx at(const HPoint& p) const { return (*this)(invert(p)); }

private:
    Param checked_inside(const Param& u) const
    {
        auto inside = [](Interval iv, double x) {
            const double slack = 1e-9 * iv.width();
            return x >= iv.lo - slack && x <= iv.hi + slack;
        };
        if (!inside(F_.s_range(), u.s) || !inside(F_.p1_range(), u.p1) || !inside(F_.p2_range(), u.p2))
            throw Error(ErrorKind::InversionFailure, "preimage lies outside the parameter box");
        return u;
    }

    Foliation F_;
    Expr f_;
    std::shared_ptr<const CompiledExpr> tape_;
};

inline PulledBackQ q_from_foliation(const Foliation& F, const Expr& f) { return PulledBackQ(F, f); }

} // namespace heismod
