#pragma once

// The complex-plane analogue: M2 modulus of a foliated family of curves in a
// planar domain with a holomorphic quadratic differential q(w) dw^2.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "heismod/error.hpp"
#include "heismod/expr.hpp"
#include "heismod/foliation.hpp"
#include "heismod/modulus.hpp"
#include "heismod/quadrature.hpp"

namespace heismod {

struct PlanarJet {
    cplx phi, phi_s, phi_p;
};

/// Phi(s, p1) with leaves the s-curves; p2 must not appear.
class PlanarFoliation {
public:
    PlanarFoliation(Expr phi, Interval s, Interval p) : phi_(std::move(phi)), s_(s), p_(p)
    {
        const VarMask bad = static_cast<VarMask>(kHeisenbergVars | mask_of(Var::p2));
        if ((phi_.free_vars() & bad) != 0)
            throw Error(ErrorKind::VariableMismatch, "planar foliations may only use s and p1");
        if (!(s.hi > s.lo) || !(p.hi > p.lo))
            throw Error(ErrorKind::PreconditionFailed, "foliation ranges must be nonempty");
        tape_ = std::make_shared<const CompiledExpr>(std::vector<Expr>{phi_, diff(phi_, Var::s), diff(phi_, Var::p1)});
    }

    const Expr& phi() const noexcept { return phi_; }
    Interval s_range() const noexcept { return s_; }
    Interval p_range() const noexcept { return p_; }

    PlanarJet jet(double s, double p) const
    {
        std::array<cplx, 3> v;
        tape_->run_all(Binding::params(s, p), v.data());
        return {v[0], v[1], v[2]};
    }

    cplx point(double s, double p) const { return jet(s, p).phi; }

private:
    Expr phi_;
    Interval s_, p_;
    std::shared_ptr<const CompiledExpr> tape_;
};

/// q(w) dw^2 with w bound as z.
class PlanarQD {
public:
    explicit PlanarQD(Expr q) : q_(std::move(q))
    {
        const VarMask bad = static_cast<VarMask>(kParameterVars | mask_of(Var::t));
        if ((q_.free_vars() & bad) != 0) throw Error(ErrorKind::VariableMismatch, "planar q may only use z and zb");
        tape_ = std::make_shared<const CompiledExpr>(std::vector<Expr>{q_, d_zb(q_)});
    }

    static PlanarQD parse(std::string_view text) { return PlanarQD(heismod::parse(text)); }

    const Expr& coeff() const noexcept { return q_; }

    cplx operator()(cplx w) const { return tape_->run(Binding::plane(w)); }

    cplx d_wbar(cplx w) const
    {
        std::array<cplx, 2> v;
        tape_->run_all(Binding::plane(w), v.data());
        return v[1];
    }

private:
    Expr q_;
    std::shared_ptr<const CompiledExpr> tape_;
};

inline cplx holomorphy_residual(const PlanarQD& q, cplx w) { return q.d_wbar(w); }

inline double planar_jacobian(const PlanarJet& j) { return std::imag(std::conj(j.phi_s) * j.phi_p); }

inline double planar_jacobian(const PlanarFoliation& F, double s, double p) { return planar_jacobian(F.jet(s, p)); }

/// d(Re Phi, Im Phi)/d(s, p) as a plain determinant.
inline double planar_jacobian_det(const PlanarJet& j)
{
    return j.phi_s.real() * j.phi_p.imag() - j.phi_p.real() * j.phi_s.imag();
}

/// mu J / |d_s Phi|^2 with mu the positive root of (q o Phi)(d_s Phi)^2.
inline double lambda_field_2d(const PlanarQD& q, const PlanarFoliation& F, double s, double p)
{
    const PlanarJet j = F.jet(s, p);
    const double mu = std::sqrt(horizontal_mu2(q(j.phi), j.phi_s, 0.0));
    return mu * planar_jacobian(j) / std::norm(j.phi_s);
}

/// Smallest pairwise distance of Phi over an n x n grid of cell midpoints, relative to the image diameter.
inline double injectivity_margin(const PlanarFoliation& F, std::size_t n = 12)
{
    std::vector<cplx> pts;
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b) {
            const double s = F.s_range().lo + (a + 0.5) * F.s_range().width() / n;
            const double p = F.p_range().lo + (b + 0.5) * F.p_range().width() / n;
            pts.push_back(F.point(s, p));
        }
    double dmin = std::numeric_limits<double>::infinity();
    double diam = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        for (std::size_t k = i + 1; k < pts.size(); ++k) {
            const double d = std::abs(pts[i] - pts[k]);
            dmin = std::min(dmin, d);
            diam = std::max(diam, d);
        }
    return diam > 0.0 ? dmin / diam : 0.0;
}

inline std::shared_ptr<LeafTable> make_planar_leaf_table(const PlanarQD& q, const PlanarFoliation& F, Tolerance tol,
                                                         double q_floor = kQFloor)
{
    auto length = [q, F, q_floor](double s, double p, double) {
        const PlanarJet j = F.jet(s, p);
        return std::sqrt(horizontal_mu2(q(j.phi), j.phi_s, q_floor));
    };
    auto area = [q, F](double s, double p, double) {
        const PlanarJet j = F.jet(s, p);
        return std::abs(q(j.phi)) * std::abs(planar_jacobian(j));
    };
    return std::make_shared<LeafTable>(F.s_range(), length, area, tol);
}

/// Integral over J of l(p)^-2 times the leaf q-area. `volume` in the report holds Area_q.
inline ModulusReport modulus_m2(const PlanarQD& q, const PlanarFoliation& F, const ModulusOptions& opt = {})
{
    const auto t0 = std::chrono::steady_clock::now();
    if (injectivity_margin(F) < 1e-9) throw Error(ErrorKind::PreconditionFailed, "Phi is not injective on the box");
    for (std::size_t a = 0; a < 2 * opt.spot_grid + 1; ++a)
        for (std::size_t b = 0; b < opt.spot_grid; ++b) {
            const double s = F.s_range().lo + (a + 0.5) * F.s_range().width() / (2 * opt.spot_grid + 1);
            const double p = F.p_range().lo + (b + 0.5) * F.p_range().width() / opt.spot_grid;
            const PlanarJet j = F.jet(s, p);
            try {
                (void)horizontal_mu2(q(j.phi), j.phi_s, opt.q_floor);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NegativeQ) throw;
                throw Error(ErrorKind::NotHorizontal, std::string("leaves are not horizontal for q: ") + e.what());
            }
        }
    auto table = make_planar_leaf_table(q, F, opt.leaf_tol(), opt.q_floor);

    auto leaf_modulus = [&](double p) {
        const double l = table->length(p, 0.0).value;
        if (!(l > 0.0)) throw Error(ErrorKind::ZeroLeafLength, "leaf of zero q-length");
        return table->volume(p, 0.0).value / (l * l);
    };
    const QuadResult m = integrate_1d(leaf_modulus, F.p_range(), opt.tol);

    ModulusReport rep;
    rep.modulus = m.value;
    // a relative error e in l moves l^-2 by about 2e
    double leaf_err = 0.0;
    {
        QuadOptions o;
        o.max_intervals = 1;
        o.max_panels = 0;
        o.throw_on_failure = false;
        auto err = [&](double p) {
            const QuadResult l = table->length(p, 0.0);
            const QuadResult a = table->volume(p, 0.0);
            return (a.error + 2.0 * std::abs(a.value) * l.error / l.value) / (l.value * l.value);
        };
        leaf_err = std::abs(integrate_1d(err, F.p_range(), Tolerance{0.0, 1.0}, o).value);
    }
    rep.error_estimate = m.error + leaf_err;
    rep.leaf_length = table->length_stats();
    if (rep.leaf_length.relative_spread() <= opt.constant_length_tol) {
        QuadOptions soft;
        soft.throw_on_failure = false;
        const QuadResult area =
            integrate_1d([&](double p) { return table->volume(p, 0.0).value; }, F.p_range(), opt.tol, soft);
        rep.volume = area.value;
        rep.volume_error = area.error;
        const double c = rep.leaf_length.mean;
        rep.constant_length_modulus = area.value / (c * c);
        rep.consistency_gap = std::abs(rep.modulus - *rep.constant_length_modulus);
    }
    rep.evaluations = table->evaluations();
    rep.seconds = detail::elapsed_since(t0);
    return rep;
}

} // namespace heismod
