#pragma once

// Heisenberg group H = C x R with (z,t)(z',t') = (z+z', t+t'+2 Im(z conj(z'))).

#include <cmath>
#include <complex>

#include "heismod/error.hpp"

namespace heismod {

using cplx = std::complex<double>;

struct HPoint {
    cplx z{};
    double t = 0.0;

    friend bool operator==(const HPoint&, const HPoint&) = default;
};

/// Tangent datum (dz, dt) of a curve in H.
struct HTangent {
    cplx dz{};
    double dt = 0.0;

    friend bool operator==(const HTangent&, const HTangent&) = default;
};

inline bool is_finite(const HPoint& p) noexcept
{
    return std::isfinite(p.z.real()) && std::isfinite(p.z.imag()) && std::isfinite(p.t);
}

inline bool is_finite(const HTangent& v) noexcept
{
    return std::isfinite(v.dz.real()) && std::isfinite(v.dz.imag()) && std::isfinite(v.dt);
}

inline void require_finite(const HPoint& p)
{
    if (!is_finite(p)) throw Error(ErrorKind::NonFinite, "HPoint has a non-finite component");
}

inline void require_finite(const HTangent& v)
{
    if (!is_finite(v)) throw Error(ErrorKind::NonFinite, "HTangent has a non-finite component");
}

inline HPoint group_mul(const HPoint& p, const HPoint& q) noexcept
{
    return {p.z + q.z, p.t + q.t + 2.0 * std::imag(p.z * std::conj(q.z))};
}

inline HPoint group_inv(const HPoint& p) noexcept { return {-p.z, -p.t}; }

/// Korányi gauge (t^2 + |z|^4)^(1/4).
inline double koranyi_norm(const HPoint& p) noexcept
{
    const double r2 = std::norm(p.z);
    return std::sqrt(std::sqrt(p.t * p.t + r2 * r2));
}

/// Heisenberg dilation (z,t) -> (r z, r^2 t).
inline HPoint dilate(const HPoint& p, double r) noexcept { return {r * p.z, r * r * p.t}; }

/// dt + 2 Im(conj(z) dz); vanishes exactly when v lies in the contact plane at z.
inline double legendrian_residual(cplx pz, const HTangent& v) noexcept
{
    return v.dt + 2.0 * std::imag(std::conj(pz) * v.dz);
}

} // namespace heismod
