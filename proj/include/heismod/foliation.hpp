#pragma once

// Parametrized foliations Phi(s, p1, p2) = (Phi1, Phi2) of domains in H by
// s-curves, with symbolic first partials compiled into one tape.

#include <array>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "heismod/error.hpp"
#include "heismod/expr.hpp"
#include "heismod/heis_core.hpp"
#include "heismod/quadrature.hpp"

namespace heismod {

/// A point (s, p1, p2) of the parameter box I x Lambda.
struct Param {
    double s = 0.0;
    double p1 = 0.0;
    double p2 = 0.0;
};

inline Binding bind(const Param& u) { return Binding::params(u.s, u.p1, u.p2); }

/// Phi and its first partials at one parameter point.
struct FoliationJet {
    cplx f1, f1_s, f1_p1, f1_p2;
    double f2, f2_s, f2_p1, f2_p2;
};

/// Pullback of a coefficient field to parameter space, u -> (q o Phi)(u).
using QField = std::function<cplx(const Param&)>;

class Foliation {
public:
    Foliation(Expr phi1, Expr phi2, Interval s, Interval p1, Interval p2)
        : phi1_(std::move(phi1)), phi2_(std::move(phi2)), s_(s), p1_(p1), p2_(p2)
    {
        if (((phi1_.free_vars() | phi2_.free_vars()) & kHeisenbergVars) != 0)
            throw Error(ErrorKind::VariableMismatch, "foliation coordinates may only use s, p1, p2");
        if (!(s.hi > s.lo) || !(p1.hi > p1.lo) || !(p2.hi > p2.lo))
            throw Error(ErrorKind::PreconditionFailed, "foliation ranges must be nonempty");
        std::vector<Expr> roots;
        for (const Expr& e : {phi1_, phi2_})
            for (Expr d : {e, diff(e, Var::s), diff(e, Var::p1), diff(e, Var::p2)}) roots.push_back(std::move(d));
        tape_ = std::make_shared<const CompiledExpr>(roots);
    }

    const Expr& phi1() const noexcept { return phi1_; }
    const Expr& phi2() const noexcept { return phi2_; }
    Interval s_range() const noexcept { return s_; }
    Interval p1_range() const noexcept { return p1_; }
    Interval p2_range() const noexcept { return p2_; }

    FoliationJet jet(const Param& u) const
    {
        std::array<cplx, 8> v;
        tape_->run_all(bind(u), v.data());
        return {v[0], v[1], v[2], v[3], v[4].real(), v[5].real(), v[6].real(), v[7].real()};
    }

    HPoint point(const Param& u) const
    {
        const FoliationJet j = jet(u);
        return {j.f1, j.f2};
    }

    HTangent tangent(const Param& u) const
    {
        const FoliationJet j = jet(u);
        return {j.f1_s, j.f2_s};
    }

private:
    Expr phi1_;
    Expr phi2_;
    Interval s_, p1_, p2_;
    std::shared_ptr<const CompiledExpr> tape_;
};

inline double legendrian_residual_grid(const Foliation& F, const Param& u)
{
    const FoliationJet j = F.jet(u);
    return legendrian_residual(j.f1, HTangent{j.f1_s, j.f2_s});
}

/// Scale of the two terms of the legendrian residual, for relative tests.
inline double legendrian_scale(const FoliationJet& j)
{
    return std::abs(j.f2_s) + 2.0 * std::abs(j.f1) * std::abs(j.f1_s);
}

/// Jacobian through the contact identity; valid only where Phi is legendrian.
inline double jac_via_A(const FoliationJet& j)
{
    const cplx A = j.f2_p1 * j.f1_p2 - j.f2_p2 * j.f1_p1 + 2.0 * j.f1 * std::imag(j.f1_p1 * std::conj(j.f1_p2));
    return -std::imag(std::conj(j.f1_s) * A);
}

inline double jac_via_A(const Foliation& F, const Param& u) { return jac_via_A(F.jet(u)); }

/// Plain 3x3 determinant of d(Re Phi1, Im Phi1, Phi2)/d(s, p1, p2).
inline double jac_det(const FoliationJet& j)
{
    const double a[3][3] = {
        {j.f1_s.real(), j.f1_p1.real(), j.f1_p2.real()},
        {j.f1_s.imag(), j.f1_p1.imag(), j.f1_p2.imag()},
        {j.f2_s, j.f2_p1, j.f2_p2},
    };
    return a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
           a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
}

inline double jac_det(const Foliation& F, const Param& u) { return jac_det(F.jet(u)); }

inline constexpr double kQFloor = 1e-12;
inline constexpr double kHorizontalTol = 1e-8;

/// Returns mu^2 = (q o Phi)(d_s Phi1)^2 as a positive real, or 0 at a zero of q.
/// Throws NegativeQ when it is not real-positive within tolerance.
inline double horizontal_mu2(cplx q, cplx velocity, double q_floor = kQFloor)
{
    if (std::abs(q) < q_floor) return 0.0;
    const cplx mu2 = q * velocity * velocity;
    const double mag = std::abs(mu2);
    if (!(mu2.real() > 0.0) || std::abs(mu2.imag()) > kHorizontalTol * mag)
        throw Error(ErrorKind::NegativeQ, "q(gamma') = (" + std::to_string(mu2.real()) + ", " +
                                              std::to_string(mu2.imag()) + ") is not real-positive");
    return mu2.real();
}

/// l_q of the leaf through (p1, p2): integral of sqrt|q o Phi| |d_s Phi1| over I.
inline QuadResult leaf_length(const QField& q, const Foliation& F, double p1, double p2, Tolerance tol = {},
                              double q_floor = kQFloor)
{
    auto integrand = [&](double s) {
        const Param u{s, p1, p2};
        const cplx qv = q(u);
        return std::sqrt(horizontal_mu2(qv, F.jet(u).f1_s, q_floor));
    };
    return integrate_1d(integrand, F.s_range(), tol);
}

/// lambda = mu^3 J / |d_s Phi1|^4 with mu the positive root of (q o Phi)(d_s Phi1)^2.
inline double lambda_field(const QField& q, const Foliation& F, const Param& u)
{
    const FoliationJet j = F.jet(u);
    const double mu = std::sqrt(horizontal_mu2(q(u), j.f1_s, 0.0));
    const double v2 = std::norm(j.f1_s);
    return mu * mu * mu * jac_via_A(j) / (v2 * v2);
}

} // namespace heismod
