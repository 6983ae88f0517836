#pragma once

// Horizontal trajectories of a quadratic differential, integrated in unit
// q-speed with the Dormand-Prince 5(4) pair.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "heismod/error.hpp"
#include "heismod/heis_core.hpp"
#include "heismod/qdiff.hpp"

namespace heismod {

struct PathSample {
    double s = 0.0;
    HPoint point{};
    HTangent tangent{};
};

enum class StopReason { MaxLength, MaxSteps, Boundary, ZeroOfQ };

constexpr std::string_view to_string(StopReason r) noexcept
{
    switch (r) {
    case StopReason::MaxLength: return "max_length";
    case StopReason::MaxSteps: return "max_steps";
    case StopReason::Boundary: return "boundary";
    case StopReason::ZeroOfQ: return "zero_of_q";
    }
    return "?";
}

struct LegendrianPath {
    std::vector<PathSample> samples;
    double rk_tol = 0.0;
    StopReason stop = StopReason::MaxLength;

    double length() const noexcept { return samples.empty() ? 0.0 : samples.back().s - samples.front().s; }
};

struct TraceOptions {
    double rk_tol = 1e-9;
    double max_length = 20.0;
    std::size_t max_steps = 200000;
    double q_floor = kQFloor;
    double initial_step = 1e-3;
    DomainGuard guard;
};

namespace detail {

using State = std::array<double, 3>;

inline HPoint to_point(const State& y) { return {{y[0], y[1]}, y[2]}; }

enum class StageFault { None, Boundary, ZeroOfQ, Numeric };

/// Unit-speed field of q along its horizontal direction nearest to `ref`.
class TrajectoryField {
public:
    TrajectoryField(const QuadDiff& q, const TraceOptions& opt) : q_(q), opt_(opt) {}

    StageFault eval(const State& y, cplx ref, State& dy, cplx& w) const
    {
        const HPoint p = to_point(y);
        if (!opt_.guard.contains(p)) return StageFault::Boundary;
        cplx qv;
        try {
            qv = q_(p);
        } catch (const Error&) {
            return StageFault::Boundary;
        }
        if (!std::isfinite(qv.real()) || !std::isfinite(qv.imag())) return StageFault::Numeric;
        if (std::abs(qv) < opt_.q_floor) return StageFault::ZeroOfQ;
        w = 1.0 / std::sqrt(qv);
        if (std::real(std::conj(ref) * w) < 0.0) w = -w;
        dy = {w.real(), w.imag(), -2.0 * std::imag(std::conj(p.z) * w)};
        return StageFault::None;
    }

private:
    const QuadDiff& q_;
    const TraceOptions& opt_;
};

} // namespace detail

/// Integrates q(gamma') = 1 from `start`; orientation picks one of the two directions.
inline LegendrianPath trace_trajectory(const QuadDiff& q, const HPoint& start, int orientation,
                                       const TraceOptions& opt = {})
{
    using detail::State;
    using detail::StageFault;
    require_finite(start);
    if (orientation != 1 && orientation != -1)
        throw Error(ErrorKind::PreconditionFailed, "orientation must be +1 or -1");
    if (!opt.guard.contains(start)) throw Error(ErrorKind::LeftDomain, "start point is outside the domain");
    cplx q0;
    try {
        q0 = eval_q(q, start);
    } catch (const Error& e) {
        throw Error(ErrorKind::LeftDomain, std::string("q is not defined at the start point (") + e.what() + ")");
    }
    if (std::abs(q0) < opt.q_floor) throw Error(ErrorKind::ZeroOfQ, "q vanishes at the start point");

    const detail::TrajectoryField field(q, opt);
    State y{start.z.real(), start.z.imag(), start.t};
    cplx ref = static_cast<double>(orientation) / std::sqrt(q0);
    State k1;
    cplx w;
    if (field.eval(y, ref, k1, w) != StageFault::None) throw Error(ErrorKind::StepFailure, "cannot evaluate the field at start");
    ref = w;

    LegendrianPath path;
    path.rk_tol = opt.rk_tol;
    path.samples.push_back({0.0, start, {w, k1[2]}});

    static constexpr double a[7][6] = {
        {},
        {1.0 / 5},
        {3.0 / 40, 9.0 / 40},
        {44.0 / 45, -56.0 / 15, 32.0 / 9},
        {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
        {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
        {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84},
    };
    static constexpr double e[7] = {71.0 / 57600, 0.0, -71.0 / 16695, 71.0 / 1920, -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

    double s = 0.0;
    double h = std::min(opt.initial_step, opt.max_length);
    for (std::size_t step = 0;; ++step) {
        if (s >= opt.max_length) {
            path.stop = StopReason::MaxLength;
            break;
        }
        if (step >= opt.max_steps) {
            path.stop = StopReason::MaxSteps;
            break;
        }
        h = std::min(h, opt.max_length - s);
        std::array<State, 7> k;
        k[0] = k1;
        cplx w_end{};
        StageFault fault = StageFault::None;
        for (int st = 1; st < 7 && fault == StageFault::None; ++st) {
            State ys = y;
            for (int j = 0; j < st; ++j)
                for (int i = 0; i < 3; ++i) ys[i] += h * a[st][j] * k[j][i];
            fault = field.eval(ys, ref, k[st], w_end);
        }
        if (fault != StageFault::None) {
            h *= 0.25;
            if (h < 1e-13 * (1.0 + s)) {
                if (fault == StageFault::Numeric) throw Error(ErrorKind::StepFailure, "step size underflow");
                path.stop = fault == StageFault::ZeroOfQ ? StopReason::ZeroOfQ : StopReason::Boundary;
                break;
            }
            continue;
        }
        // the seventh stage sits at the fifth-order solution and is reused next step
        State ynew = y;
        for (int i = 0; i < 3; ++i) {
            for (int j = 0; j < 6; ++j) ynew[i] += h * a[6][j] * k[j][i];
        }
        double err = 0.0;
        for (int i = 0; i < 3; ++i) {
            double ei = 0.0;
            for (int j = 0; j < 7; ++j) ei += e[j] * k[j][i];
            const double sc = opt.rk_tol * (1.0 + std::max(std::abs(y[i]), std::abs(ynew[i])));
            err = std::max(err, std::abs(h * ei) / sc);
        }
        if (!std::isfinite(err)) {
            h *= 0.25;
            if (h < 1e-13 * (1.0 + s)) throw Error(ErrorKind::StepFailure, "non-finite error estimate");
            continue;
        }
        if (err > 1.0) {
            h *= std::max(0.1, 0.9 * std::pow(err, -0.2));
            if (h < 1e-13 * (1.0 + s)) throw Error(ErrorKind::StepFailure, "step size underflow");
            continue;
        }
        s += h;
        y = ynew;
        k1 = k[6];
        ref = w_end;
        path.samples.push_back({s, detail::to_point(y), {w_end, k1[2]}});
        h *= err == 0.0 ? 5.0 : std::min(5.0, std::max(0.2, 0.9 * std::pow(err, -0.2)));
    }
    return path;
}

} // namespace heismod
