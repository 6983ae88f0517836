#pragma once

// Adaptive Gauss-Kronrod quadrature for integrands with integrable endpoint
// singularities, plus a nested rule over rectangles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "heismod/error.hpp"

namespace heismod {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;

    double width() const noexcept { return hi - lo; }
    double mid() const noexcept { return 0.5 * (lo + hi); }
};

/// Accept when err <= max(abs, rel * |value|).
struct Tolerance {
    double abs = 0.0;
    double rel = 1e-10;

    double target(double value) const noexcept { return std::max(abs, rel * std::abs(value)); }
};

struct QuadResult {
    double value = 0.0;
    double error = 0.0;
    std::size_t evaluations = 0;
};

struct QuadOptions {
    std::size_t max_intervals = 64;
    std::size_t max_panels = 44;
    /// When false, a miss of the tolerance returns the best estimate and its error.
    bool throw_on_failure = true;
};

namespace detail {

// 15-point Kronrod extension of the 7-point Gauss rule; nodes are interior.
inline constexpr std::array<double, 8> kXgk{
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0};
inline constexpr std::array<double, 8> kWgk{
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714};
inline constexpr std::array<double, 4> kWg{
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327};

struct Segment {
    double a, b, value, error;
    bool operator<(const Segment& o) const noexcept { return error < o.error; }
};

template <class F>
Segment gk15(F& f, double a, double b)
{
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    const double fc = f(c);
    double resg = fc * kWg[3];
    double resk = fc * kWgk[7];
    double resabs = std::abs(resk);
    std::array<double, 7> f1{}, f2{};
    for (int j = 0; j < 7; ++j) {
        const double dx = h * kXgk[j];
        f1[j] = f(c - dx);
        f2[j] = f(c + dx);
        const double sum = f1[j] + f2[j];
        resk += kWgk[j] * sum;
        resabs += kWgk[j] * (std::abs(f1[j]) + std::abs(f2[j]));
        if (j % 2 == 1) resg += kWg[j / 2] * sum;
    }
    const double mean = 0.5 * resk;
    double resasc = kWgk[7] * std::abs(fc - mean);
    for (int j = 0; j < 7; ++j) resasc += kWgk[j] * (std::abs(f1[j] - mean) + std::abs(f2[j] - mean));
    const double ah = std::abs(h);
    resk *= h;
    resabs *= ah;
    resasc *= ah;
    double err = std::abs((resk - resg * h));
    if (resasc != 0.0 && err != 0.0) err = resasc * std::min(1.0, std::pow(200.0 * err / resasc, 1.5));
    constexpr double eps = std::numeric_limits<double>::epsilon();
    if (resabs > std::numeric_limits<double>::min() / (50.0 * eps)) err = std::max(50.0 * eps * resabs, err);
    if (!std::isfinite(resk) || !std::isfinite(err))
        throw Error(ErrorKind::NonFinite, "integrand is not finite on [" + std::to_string(a) + ", " + std::to_string(b) + "]");
    return {a, b, resk, err};
}

/// Globally adaptive bisection. Returns the best estimate even when it misses tol.
template <class F>
QuadResult adaptive(F& f, double a, double b, Tolerance tol, std::size_t max_intervals)
{
    std::priority_queue<Segment> heap;
    Segment first = gk15(f, a, b);
    heap.push(first);
    double total = first.value;
    double err = first.error;
    std::size_t evals = 15;
    while (err > tol.target(total) && heap.size() < max_intervals) {
        const Segment worst = heap.top();
        const double m = 0.5 * (worst.a + worst.b);
        if (!(m > worst.a && m < worst.b)) break;
        heap.pop();
        const Segment l = gk15(f, worst.a, m);
        const Segment r = gk15(f, m, worst.b);
        evals += 30;
        heap.push(l);
        heap.push(r);
        // resum to avoid drift from repeated add/subtract
        total = 0.0;
        err = 0.0;
        auto copy = heap;
        while (!copy.empty()) {
            total += copy.top().value;
            err += copy.top().error;
            copy.pop();
        }
    }
    return {total, err, evals};
}

/// Wynn epsilon extrapolation of a sequence of partial sums.
/// Returns the extrapolated limit and sets `err` to a difference-based estimate.
inline double wynn_epsilon(const std::vector<double>& seq, double& err)
{
    const std::size_t n = seq.size();
    if (n < 3) {
        err = n >= 2 ? std::abs(seq[n - 1] - seq[n - 2]) : std::numeric_limits<double>::infinity();
        return seq.empty() ? 0.0 : seq.back();
    }
    // columns e_{-1}, e_0, e_1, ... ; each column one shorter than the last
    std::vector<double> prev(n + 1, 0.0);
    std::vector<double> cur(seq.begin(), seq.end());
    double best = seq.back();
    double best_prev = seq[n - 2];
    double best_prev2 = seq[n - 3];
    for (std::size_t k = 1; cur.size() >= 2; ++k) {
        std::vector<double> next(cur.size() - 1);
        bool broken = false;
        for (std::size_t j = 0; j + 1 < cur.size(); ++j) {
            const double d = cur[j + 1] - cur[j];
            if (d == 0.0 || !std::isfinite(d)) {
                broken = true;
                break;
            }
            next[j] = prev[j + 1] + 1.0 / d;
        }
        if (broken) break;
        if (k % 2 == 0) {
            if (next.size() < 3) break;
            best = next.back();
            best_prev = next[next.size() - 2];
            best_prev2 = next[next.size() - 3];
        }
        prev = std::move(cur);
        cur = std::move(next);
    }
    err = std::abs(best - best_prev) + std::abs(best_prev - best_prev2);
    return best;
}

/// Integrates panels [x0 + L 2^-(k+1), x0 + L 2^-k] walking toward x0 (L may be negative)
/// and extrapolates the partial sums.
template <class F>
QuadResult toward_endpoint(F& f, double x0, double length, Tolerance tol, const QuadOptions& opt)
{
    std::vector<double> sums;
    double running = 0.0;
    double panel_err = 0.0;
    std::size_t evals = 0;
    double best = 0.0;
    double best_err = std::numeric_limits<double>::infinity();
    double far = x0 + length;
    double width = length;
    for (std::size_t k = 0; k < opt.max_panels; ++k) {
        width *= 0.5;
        const double near = x0 + width;
        if (near == far) break;
        const double lo = std::min(near, far);
        const double hi = std::max(near, far);
        const QuadResult panel = adaptive(f, lo, hi, Tolerance{0.0, 1e-13}, 32);
        evals += panel.evaluations;
        running += panel.value;
        panel_err += panel.error;
        sums.push_back(running);
        far = near;
        if (sums.size() < 4) continue;
        double extrap_err = 0.0;
        const double extrap = wynn_epsilon(sums, extrap_err);
        const double total_err = extrap_err + panel_err;
        if (total_err < best_err) {
            best = extrap;
            best_err = total_err;
        }
        if (best_err <= 0.25 * tol.target(best) && sums.size() >= 8) break;
    }
    return {best, best_err, evals};
}

} // namespace detail

/// Adaptive integration of f over [a, b]. f is never evaluated at a or b.
template <class F>
QuadResult integrate_1d(F&& f, Interval iv, Tolerance tol = {}, const QuadOptions& opt = {})
{
    if (!(iv.hi > iv.lo)) {
        if (iv.hi == iv.lo) return {};
        QuadResult r = integrate_1d(f, Interval{iv.hi, iv.lo}, tol, opt);
        r.value = -r.value;
        return r;
    }
    QuadResult direct = detail::adaptive(f, iv.lo, iv.hi, tol, opt.max_intervals);
    if (direct.error <= tol.target(direct.value)) return direct;

    // Endpoint behaviour dominates: split once and extrapolate toward each end.
    const double m = iv.mid();
    const QuadResult left = detail::toward_endpoint(f, iv.lo, m - iv.lo, tol, opt);
    const QuadResult right = detail::toward_endpoint(f, iv.hi, m - iv.hi, tol, opt);
    QuadResult out{left.value + right.value, left.error + right.error,
                   direct.evaluations + left.evaluations + right.evaluations};
    if (direct.error < out.error) {
        direct.evaluations = out.evaluations;
        out = direct;
    }
    if (opt.throw_on_failure && out.error > tol.target(out.value))
        throw Error(ErrorKind::NonConvergent, "error estimate " + std::to_string(out.error) +
                                                  " above target " + std::to_string(tol.target(out.value)));
    return out;
}

/// Nested integral of f(x, y) over a rectangle; inner errors are folded into the total.
template <class F>
QuadResult integrate_2d(F&& f, Interval x, Interval y, Tolerance tol = {}, const QuadOptions& opt = {})
{
    std::size_t evals = 0;
    double inner_err = 0.0;
    const Tolerance inner_tol{tol.abs / std::max(1.0, std::abs(x.width())), 0.25 * tol.rel};
    auto outer = [&](double xv) {
        const QuadResult r = integrate_1d([&](double yv) { return f(xv, yv); }, y, inner_tol, opt);
        evals += r.evaluations;
        inner_err = std::max(inner_err, r.error);
        return r.value;
    };
    QuadResult res = integrate_1d(outer, x, tol, opt);
    res.error += inner_err * std::abs(x.width());
    res.evaluations = evals;
    return res;
}

} // namespace heismod
