#pragma once

// M4 modulus of a foliated family of legendrian curves, q-volume, the
// extremal density and probes of its minimality. Every integral is taken in
// parameter coordinates with the Jacobian of Phi.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "heismod/error.hpp"
#include "heismod/expr.hpp"
#include "heismod/foliation.hpp"
#include "heismod/qdiff.hpp"
#include "heismod/quadrature.hpp"

namespace heismod {

struct LeafLengthStats {
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;
    std::size_t count = 0;

    double relative_spread() const noexcept { return mean > 0.0 ? (max - min) / mean : 0.0; }
};

struct ModulusReport {
    double modulus = 0.0;
    double error_estimate = 0.0;
    LeafLengthStats leaf_length;
    double volume = 0.0;
    double volume_error = 0.0;
    /// Vol / C^k when every leaf has the same length C, otherwise empty.
    std::optional<double> constant_length_modulus;
    /// |modulus - constant_length_modulus| when the latter exists.
    std::optional<double> consistency_gap;
    /// max relative |B2 q| over the spot grid; empty when q is only known on leaves.
    std::optional<double> residual_max;
    bool residual_check_overridden = false;
    std::size_t evaluations = 0;
    double seconds = 0.0;
};

struct ModulusOptions {
    Tolerance tol{0.0, 1e-9};
    double q_floor = kQFloor;
    /// Report a failed B2 spot check instead of throwing.
    bool override_b2_check = false;
    double b2_tol = 1e-8;
    std::size_t spot_grid = 5;
    double constant_length_tol = 1e-9;

    Tolerance leaf_tol() const noexcept { return {0.0, 0.1 * tol.rel}; }
};

/// Memoized per-leaf integrals over I for a fixed parameter p = (p1, p2).
class LeafTable {
public:
    using Integrand = std::function<double(double s, double p1, double p2)>;

    LeafTable(Interval s_range, Integrand length, Integrand volume, Tolerance tol)
        : s_(s_range), length_(std::move(length)), volume_(std::move(volume)), tol_(tol)
    {
        // leaves near a degenerate edge of the box may sit at the rounding floor;
        // their error estimates are folded into the reported totals instead
        quad_.throw_on_failure = false;
    }

    QuadResult length(double p1, double p2) { return lookup(lengths_, length_, p1, p2); }
    QuadResult volume(double p1, double p2) { return lookup(volumes_, volume_, p1, p2); }

    LeafLengthStats length_stats() const
    {
        std::lock_guard lock(mutex_);
        LeafLengthStats st;
        st.min = std::numeric_limits<double>::infinity();
        st.max = -std::numeric_limits<double>::infinity();
        double sum = 0.0;
        for (const auto& [key, r] : lengths_) {
            st.min = std::min(st.min, r.value);
            st.max = std::max(st.max, r.value);
            sum += r.value;
        }
        st.count = lengths_.size();
        if (st.count == 0) return {};
        st.mean = sum / static_cast<double>(st.count);
        return st;
    }

    std::size_t evaluations() const
    {
        std::lock_guard lock(mutex_);
        return evaluations_;
    }

    Interval s_range() const noexcept { return s_; }

private:
    using Table = std::map<std::pair<double, double>, QuadResult>;

    QuadResult lookup(Table& table, const Integrand& f, double p1, double p2)
    {
        const auto key = std::make_pair(p1, p2);
        {
            std::lock_guard lock(mutex_);
            if (auto it = table.find(key); it != table.end()) return it->second;
        }
        const QuadResult r = integrate_1d([&](double s) { return f(s, p1, p2); }, s_, tol_, quad_);
        std::lock_guard lock(mutex_);
        evaluations_ += r.evaluations;
        table.emplace(key, r);
        return r;
    }

    Interval s_;
    Integrand length_;
    Integrand volume_;
    Tolerance tol_;
    QuadOptions quad_;
    mutable std::mutex mutex_;
    Table lengths_;
    Table volumes_;
    std::size_t evaluations_ = 0;
};

inline std::shared_ptr<LeafTable> make_leaf_table(const QField& q, const Foliation& F, Tolerance tol,
                                                  double q_floor = kQFloor)
{
    auto length = [q, F, q_floor](double s, double p1, double p2) {
        const Param u{s, p1, p2};
        return std::sqrt(horizontal_mu2(q(u), F.jet(u).f1_s, q_floor));
    };
    auto volume = [q, F](double s, double p1, double p2) {
        const Param u{s, p1, p2};
        const FoliationJet j = F.jet(u);
        return std::norm(q(u)) * std::abs(jac_det(j));
    };
    return std::make_shared<LeafTable>(F.s_range(), length, volume, tol);
}

namespace detail {

inline double elapsed_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void require_legendrian(const Foliation& F, std::size_t n)
{
    for (const Param& u : parameter_grid(F, 2 * n + 1, n, n)) {
        const FoliationJet j = F.jet(u);
        const double res = legendrian_residual(j.f1, {j.f1_s, j.f2_s});
        if (std::abs(res) > kLegendrianTol * (1.0 + legendrian_scale(j)))
            throw Error(ErrorKind::PreconditionFailed, "foliation is not legendrian (residual " + std::to_string(res) +
                                                           " at s=" + std::to_string(u.s) + ")");
    }
}

inline void require_horizontal(const QField& q, const Foliation& F, std::size_t n, double q_floor)
{
    for (const Param& u : parameter_grid(F, 2 * n + 1, n, n)) {
        try {
            (void)horizontal_mu2(q(u), F.jet(u).f1_s, q_floor);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NegativeQ) throw;
            throw Error(ErrorKind::NotHorizontal, std::string("leaves are not horizontal for q: ") + e.what());
        }
    }
}

/// Single 15x15 Gauss-Kronrod pass over Lambda, for folding leaf errors into totals.
/// Its nodes are the first nodes of every adaptive pass, so cached leaves are reused.
template <class Fn>
double coarse_2d(Fn&& f, const Foliation& F)
{
    QuadOptions o;
    o.max_intervals = 1;
    o.max_panels = 0;
    o.throw_on_failure = false;
    return std::abs(integrate_2d(f, F.p1_range(), F.p2_range(), Tolerance{0.0, 1.0}, o).value);
}

/// Max relative B2 residual at Phi of the spot grid.
inline double b2_spot_check(const QuadDiff& q, const Foliation& F, std::size_t n)
{
    double worst = 0.0;
    for (const Param& u : parameter_grid(F, n, n, n))
        worst = std::max(worst, q.residual(Operator::B2, F.point(u)).relative());
    return worst;
}

} // namespace detail

/// Integral over Lambda of l(p)^-4 times the leaf volume, with a shared leaf table.
inline ModulusReport modulus_m4(const QField& q, const Foliation& F, const ModulusOptions& opt,
                                std::shared_ptr<LeafTable> table = nullptr)
{
    const auto t0 = std::chrono::steady_clock::now();
    detail::require_legendrian(F, opt.spot_grid);
    detail::require_horizontal(q, F, opt.spot_grid, opt.q_floor);
    if (!table) table = make_leaf_table(q, F, opt.leaf_tol(), opt.q_floor);

    auto leaf_modulus = [&](double p1, double p2) {
        const double l = table->length(p1, p2).value;
        if (!(l > 0.0)) throw Error(ErrorKind::ZeroLeafLength, "leaf of zero q-length");
        const double l2 = l * l;
        return table->volume(p1, p2).value / (l2 * l2);
    };
    // a relative error e in l moves l^-4 by about 4e
    auto leaf_modulus_error = [&](double p1, double p2) {
        const QuadResult l = table->length(p1, p2);
        const QuadResult v = table->volume(p1, p2);
        const double l4 = std::pow(l.value, 4);
        return (v.error + 4.0 * std::abs(v.value) * l.error / l.value) / l4;
    };
    const QuadResult m = integrate_2d(leaf_modulus, F.p1_range(), F.p2_range(), opt.tol);
    ModulusReport rep;
    rep.modulus = m.value;
    rep.error_estimate = m.error + detail::coarse_2d(leaf_modulus_error, F);
    rep.leaf_length = table->length_stats();
    if (rep.leaf_length.relative_spread() <= opt.constant_length_tol) {
        QuadOptions soft;
        soft.throw_on_failure = false;
        const QuadResult vol = integrate_2d([&](double p1, double p2) { return table->volume(p1, p2).value; },
                                            F.p1_range(), F.p2_range(), opt.tol, soft);
        rep.volume = vol.value;
        rep.volume_error =
            vol.error + detail::coarse_2d([&](double p1, double p2) { return table->volume(p1, p2).error; }, F);
        const double c2 = rep.leaf_length.mean * rep.leaf_length.mean;
        rep.constant_length_modulus = rep.volume / (c2 * c2);
        rep.consistency_gap = std::abs(rep.modulus - *rep.constant_length_modulus);
    }
    rep.evaluations = table->evaluations();
    rep.seconds = detail::elapsed_since(t0);
    return rep;
}

/// As above for a differential given on H; spot-checks B2 q = 0 first.
inline ModulusReport modulus_m4(const QuadDiff& q, const Foliation& F, const ModulusOptions& opt = {})
{
    const double b2 = detail::b2_spot_check(q, F, opt.spot_grid);
    const bool failed = !(b2 <= opt.b2_tol);
    if (failed && !opt.override_b2_check)
        throw Error(ErrorKind::PreconditionFailed, "B2 q does not vanish on the foliated domain (relative residual " +
                                                       std::to_string(b2) + ")");
    ModulusReport rep = modulus_m4(compose(q, F), F, opt);
    rep.residual_max = b2;
    rep.residual_check_overridden = failed;
    return rep;
}

/// Vol_q = integral of |q|^2 over the foliated domain.
inline QuadResult q_volume(const QField& q, const Foliation& F, Tolerance tol = {0.0, 1e-9})
{
    auto table = make_leaf_table(q, F, Tolerance{0.0, 0.1 * tol.rel});
    QuadResult r = integrate_2d([&](double p1, double p2) { return table->volume(p1, p2).value; }, F.p1_range(),
                                F.p2_range(), tol);
    r.error += detail::coarse_2d([&](double p1, double p2) { return table->volume(p1, p2).error; }, F);
    r.evaluations = table->evaluations();
    return r;
}

inline QuadResult q_volume(const QuadDiff& q, const Foliation& F, Tolerance tol = {0.0, 1e-9})
{
    return q_volume(compose(q, F), F, tol);
}

/// Vol_q / C^4 for families whose leaves share the q-length C.
inline ModulusReport modulus_constant_length(const QField& q, const Foliation& F, const ModulusOptions& opt = {},
                                             std::size_t leaf_samples = 5, double rel_tol = 1e-6)
{
    const auto t0 = std::chrono::steady_clock::now();
    detail::require_horizontal(q, F, opt.spot_grid, opt.q_floor);
    auto table = make_leaf_table(q, F, opt.leaf_tol(), opt.q_floor);
    for (const Param& u : parameter_grid(F, 1, leaf_samples, leaf_samples)) (void)table->length(u.p1, u.p2);
    const LeafLengthStats st = table->length_stats();
    if (st.relative_spread() > rel_tol)
        throw Error(ErrorKind::ConstantLengthViolated,
                    "leaf lengths range over [" + std::to_string(st.min) + ", " + std::to_string(st.max) + "]");
    if (!(st.mean > 0.0)) throw Error(ErrorKind::ZeroLeafLength, "leaves have zero q-length");
    const QuadResult vol =
        integrate_2d([&](double p1, double p2) { return table->volume(p1, p2).value; }, F.p1_range(), F.p2_range(), opt.tol);
    ModulusReport rep;
    const double c2 = st.mean * st.mean;
    rep.modulus = vol.value / (c2 * c2);
    rep.volume = vol.value;
    rep.volume_error = vol.error + detail::coarse_2d([&](double p1, double p2) { return table->volume(p1, p2).error; }, F);
    rep.error_estimate = rep.volume_error / (c2 * c2) + 4.0 * (st.max - st.min + st.mean * opt.leaf_tol().rel) / st.mean * rep.modulus;
    rep.leaf_length = st;
    rep.constant_length_modulus = rep.modulus;
    rep.evaluations = table->evaluations();
    rep.seconds = detail::elapsed_since(t0);
    return rep;
}

inline ModulusReport modulus_constant_length(const QuadDiff& q, const Foliation& F, const ModulusOptions& opt = {})
{
    return modulus_constant_length(compose(q, F), F, opt);
}

/// A density through its pullback rho o Phi on the parameter box.
class Density {
public:
    using Fn = std::function<double(const Param&)>;

    explicit Density(Fn f) : f_(std::move(f)) {}

    double operator()(const Param& u) const { return f_(u); }

    Density scaled(double c) const
    {
        return Density([f = f_, c](const Param& u) { return c * f(u); });
    }

private:
    Fn f_;
};

/// rho_0 o Phi = sqrt|q o Phi| / l(p).
inline Density extremal_density(const QField& q, const Foliation& F, std::shared_ptr<LeafTable> table)
{
    const Interval a = F.p1_range();
    const Interval b = F.p2_range();
    if (!(table->length(a.mid(), b.mid()).value > 0.0))
        throw Error(ErrorKind::ZeroLeafLength, "central leaf has zero q-length");
    return Density([q, table](const Param& u) {
        const double l = table->length(u.p1, u.p2).value;
        if (!(l > 0.0)) throw Error(ErrorKind::ZeroLeafLength, "leaf has zero q-length");
        return std::sqrt(std::abs(q(u))) / l;
    });
}

inline Density extremal_density(const QField& q, const Foliation& F, Tolerance leaf_tol = {0.0, 1e-10})
{
    return extremal_density(q, F, make_leaf_table(q, F, leaf_tol));
}

struct LeafIntegral {
    double p1 = 0.0;
    double p2 = 0.0;
    double value = 0.0;
};

struct AdmissibilityResult {
    double min_integral = 0.0;
    std::vector<LeafIntegral> leaves;

    bool admissible(double tol = 1e-8) const noexcept { return min_integral >= 1.0 - tol; }
};

/// Line integrals of rho along about `leaf_sample_count` leaves on a regular grid of Lambda.
inline AdmissibilityResult admissibility_check(const Density& rho, const Foliation& F, std::size_t leaf_sample_count,
                                               Tolerance tol = {0.0, 1e-10})
{
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(std::max<std::size_t>(leaf_sample_count, 1)))));
    AdmissibilityResult out;
    out.min_integral = std::numeric_limits<double>::infinity();
    for (const Param& leaf : parameter_grid(F, 1, side, side)) {
        auto f = [&](double s) {
            const Param u{s, leaf.p1, leaf.p2};
            return rho(u) * std::abs(F.jet(u).f1_s);
        };
        const double v = integrate_1d(f, F.s_range(), tol).value;
        out.leaves.push_back({leaf.p1, leaf.p2, v});
        out.min_integral = std::min(out.min_integral, v);
    }
    return out;
}

/// Integral of rho^4 over the domain.
inline QuadResult density_energy(const Density& rho, const Foliation& F, Tolerance tol = {0.0, 1e-9})
{
    double inner_err = 0.0;
    auto leaf = [&](double p1, double p2) {
        auto f = [&](double s) {
            const Param u{s, p1, p2};
            const double r = rho(u);
            const double r2 = r * r;
            return r2 * r2 * std::abs(jac_det(F.jet(u)));
        };
        const QuadResult r = integrate_1d(f, F.s_range(), Tolerance{0.0, 0.1 * tol.rel});
        inner_err = std::max(inner_err, r.value != 0.0 ? r.error / std::abs(r.value) : 0.0);
        return r.value;
    };
    QuadResult res = integrate_2d(leaf, F.p1_range(), F.p2_range(), tol);
    res.error += inner_err * std::abs(res.value);
    return res;
}

struct ProbeResult {
    double energy = 0.0;
    double energy_error = 0.0;
    double reference_modulus = 0.0;
    double reference_error = 0.0;
    /// Smallest renormalization factor met; positive for every admissible probe.
    double min_normalizer = 0.0;

    double gap() const noexcept { return energy - reference_modulus; }
};

/// Energy of rho_0 (1 + eps g) renormalized leaf by leaf to unit line integral.
inline ProbeResult perturbation_probe(const QField& q, const Foliation& F, const Expr& g, double eps,
                                      const ModulusOptions& opt = {}, std::shared_ptr<LeafTable> table = nullptr)
{
    if ((g.free_vars() & kHeisenbergVars) != 0)
        throw Error(ErrorKind::VariableMismatch, "perturbations may only use s, p1, p2");
    if (!table) table = make_leaf_table(q, F, opt.leaf_tol(), opt.q_floor);
    const CompiledExpr gc(g);
    auto factor = [&](const Param& u) { return 1.0 + eps * gc.run(bind(u)).real(); };
    for (const Param& u : parameter_grid(F, 9, 5, 5))
        if (!(factor(u) > 0.0)) throw Error(ErrorKind::PreconditionFailed, "1 + eps g must stay positive");

    ProbeResult out;
    const ModulusReport ref = modulus_m4(q, F, opt, table);
    out.reference_modulus = ref.modulus;
    out.reference_error = ref.error_estimate;

    const Density rho0 = extremal_density(q, F, table);
    const Tolerance leaf_tol = opt.leaf_tol();
    double min_norm = std::numeric_limits<double>::infinity();
    double inner_err = 0.0;
    auto leaf = [&](double p1, double p2) {
        auto line = [&](double s) {
            const Param u{s, p1, p2};
            return rho0(u) * factor(u) * std::abs(F.jet(u).f1_s);
        };
        auto energy = [&](double s) {
            const Param u{s, p1, p2};
            const double r2 = rho0(u) * factor(u) * rho0(u) * factor(u);
            return r2 * r2 * std::abs(jac_det(F.jet(u)));
        };
        const QuadResult n = integrate_1d(line, F.s_range(), leaf_tol);
        if (!(n.value > 0.0))
            throw Error(ErrorKind::NonAdmissibleAfterRenormalization, "leaf integral is not positive");
        min_norm = std::min(min_norm, n.value);
        const QuadResult e = integrate_1d(energy, F.s_range(), leaf_tol);
        inner_err = std::max(inner_err, 4.0 * n.error / n.value + (e.value != 0.0 ? e.error / e.value : 0.0));
        const double n2 = n.value * n.value;
        return e.value / (n2 * n2);
    };
    const QuadResult en = integrate_2d(leaf, F.p1_range(), F.p2_range(), opt.tol);
    out.energy = en.value;
    out.energy_error = en.error + inner_err * std::abs(en.value);
    out.min_normalizer = min_norm;
    return out;
}

} // namespace heismod
