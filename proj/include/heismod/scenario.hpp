#pragma once

// Scenario files, the built-in corpus and the runner behind `heismod run`.
// Scenarios and reports are JSON (nlohmann).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "heismod/error.hpp"
#include "heismod/expr.hpp"
#include "heismod/foliation.hpp"
#include "heismod/modulus.hpp"
#include "heismod/planar.hpp"
#include "heismod/qdiff.hpp"
#include "heismod/tracer.hpp"

namespace heismod {

using json = nlohmann::ordered_json;

enum class Space { Heisenberg, Plane };

struct Expected {
    double value = 0.0;
    double rel_tol = 1e-6;
};

/// Random points 0 < r_lo <= |z| <= r_hi, t in [t_lo, t_hi], for residual-only scenarios.
struct SampleRegion {
    Interval radius{0.5, 2.0};
    Interval t{-2.0, 2.0};
    std::size_t count = 1000;
    std::uint64_t seed = 1;
};

struct Scenario {
    std::string name;
    Space space = Space::Heisenberg;
    std::string q;
    bool has_foliation = false;
    std::string phi1;
    std::string phi2;
    Interval s_range{};
    std::vector<Interval> p_ranges;
    std::optional<std::string> exclusions;
    std::optional<SampleRegion> sample_region;
    double quad_tol = 1e-9;
    double rk_tol = 1e-9;
    double residual_tol = 1e-9;
    std::vector<std::string> checks;
    std::map<std::string, Expected> expected;
};

inline const std::vector<std::string>& known_checks()
{
    static const std::vector<std::string> names{"b2",        "d2prime",       "d2doubleprime", "legendrian",
                                                "holomorphy", "lambda_constancy", "admissibility", "perturbation",
                                                "trace_vs_closed_form"};
    return names;
}

namespace detail {

[[noreturn]] inline void invalid(const std::string& msg) { throw Error(ErrorKind::InvalidScenario, msg); }

inline Interval read_interval(const json& j, const std::string& what)
{
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        invalid(what + " must be [lo, hi]");
    const Interval iv{j[0].get<double>(), j[1].get<double>()};
    if (!(iv.hi > iv.lo) || !std::isfinite(iv.lo) || !std::isfinite(iv.hi)) invalid(what + " must be a nonempty range");
    return iv;
}

inline std::string read_string(const json& j, const char* key, const std::string& where)
{
    if (!j.contains(key) || !j[key].is_string()) invalid(where + "." + key + " must be a string");
    return j[key].get<std::string>();
}

inline void check_parses(const std::string& text, const std::string& what)
{
    try {
        (void)parse(text);
    } catch (const Error& e) {
        invalid(what + " does not parse: " + e.what());
    }
}

inline json interval_json(Interval iv) { return json::array({iv.lo, iv.hi}); }

} // namespace detail

inline Scenario scenario_from_json(const json& j)
{
    using detail::invalid;
    if (!j.is_object()) invalid("scenario must be a JSON object");
    Scenario sc;
    sc.name = detail::read_string(j, "name", "scenario");
    const std::string space = detail::read_string(j, "space", "scenario");
    if (space == "heisenberg")
        sc.space = Space::Heisenberg;
    else if (space == "plane")
        sc.space = Space::Plane;
    else
        invalid("space must be \"heisenberg\" or \"plane\"");
    sc.q = detail::read_string(j, "q", "scenario");
    detail::check_parses(sc.q, "q");

    if (j.contains("foliation")) {
        const json& f = j["foliation"];
        if (!f.is_object()) invalid("foliation must be an object");
        sc.has_foliation = true;
        sc.phi1 = detail::read_string(f, "phi1", "foliation");
        detail::check_parses(sc.phi1, "phi1");
        if (sc.space == Space::Heisenberg) {
            sc.phi2 = detail::read_string(f, "phi2", "foliation");
            detail::check_parses(sc.phi2, "phi2");
        } else if (f.contains("phi2")) {
            invalid("planar foliations take no phi2");
        }
        if (!f.contains("s_range")) invalid("foliation.s_range is required");
        sc.s_range = detail::read_interval(f["s_range"], "s_range");
        if (!f.contains("p_ranges") || !f["p_ranges"].is_array()) invalid("foliation.p_ranges must be an array");
        for (const json& r : f["p_ranges"]) sc.p_ranges.push_back(detail::read_interval(r, "p_ranges entry"));
        const std::size_t want = sc.space == Space::Heisenberg ? 2 : 1;
        if (sc.p_ranges.size() != want) invalid("p_ranges needs " + std::to_string(want) + " range(s) for this space");
    }
    if (j.contains("exclusions")) {
        if (!j["exclusions"].is_string()) invalid("exclusions must be an expression string");
        sc.exclusions = j["exclusions"].get<std::string>();
        detail::check_parses(*sc.exclusions, "exclusions");
    }
    if (j.contains("sample_region")) {
        const json& r = j["sample_region"];
        if (!r.is_object()) invalid("sample_region must be an object");
        SampleRegion reg;
        if (r.contains("radius")) reg.radius = detail::read_interval(r["radius"], "sample_region.radius");
        if (r.contains("t")) reg.t = detail::read_interval(r["t"], "sample_region.t");
        if (r.contains("count")) reg.count = r["count"].get<std::size_t>();
        if (r.contains("seed")) reg.seed = r["seed"].get<std::uint64_t>();
        if (!(reg.radius.lo > 0.0)) invalid("sample_region.radius must stay away from 0");
        sc.sample_region = reg;
    }
    if (j.contains("tolerances")) {
        const json& t = j["tolerances"];
        if (!t.is_object()) invalid("tolerances must be an object");
        auto read = [&](const char* key, double& out) {
            if (!t.contains(key)) return;
            if (!t[key].is_number() || !(t[key].get<double>() > 0.0)) invalid(std::string(key) + " must be positive");
            out = t[key].get<double>();
        };
        read("quad_tol", sc.quad_tol);
        read("rk_tol", sc.rk_tol);
        read("residual_tol", sc.residual_tol);
    }
    if (j.contains("checks")) {
        if (!j["checks"].is_array()) invalid("checks must be an array");
        for (const json& c : j["checks"]) {
            if (!c.is_string()) invalid("checks entries must be strings");
            const std::string name = c.get<std::string>();
            const auto& known = known_checks();
            if (std::find(known.begin(), known.end(), name) == known.end()) invalid("unknown check \"" + name + "\"");
            sc.checks.push_back(name);
        }
    }
    if (j.contains("expected")) {
        const json& e = j["expected"];
        if (!e.is_object()) invalid("expected must be an object");
        for (const auto& [key, v] : e.items()) {
            if (key != "modulus" && key != "leaf_length" && key != "volume") invalid("unknown expected field \"" + key + "\"");
            Expected x;
            if (v.is_number()) {
                x.value = v.get<double>();
            } else if (v.is_object() && v.contains("value") && v["value"].is_number()) {
                x.value = v["value"].get<double>();
                if (v.contains("rel_tol")) x.rel_tol = v["rel_tol"].get<double>();
            } else {
                invalid("expected." + key + " must be a number or {value, rel_tol}");
            }
            sc.expected[key] = x;
        }
    }

    // space-consistent checks
    for (const std::string& c : sc.checks) {
        const bool h_only = c == "b2" || c == "d2prime" || c == "d2doubleprime" || c == "legendrian" ||
                            c == "perturbation" || c == "trace_vs_closed_form";
        if (sc.space == Space::Plane && h_only) invalid("check \"" + c + "\" needs space heisenberg");
        if (sc.space == Space::Heisenberg && c == "holomorphy") invalid("check \"holomorphy\" needs space plane");
        const bool needs_leaves = c == "legendrian" || c == "lambda_constancy" || c == "admissibility" ||
                                  c == "perturbation" || c == "trace_vs_closed_form";
        if (needs_leaves && !sc.has_foliation) invalid("check \"" + c + "\" needs a foliation");
    }
    if (!sc.has_foliation && !sc.sample_region && !sc.checks.empty())
        invalid("a scenario without foliation needs a sample_region");
    if (!sc.has_foliation && !sc.expected.empty()) invalid("expected values need a foliation");
    return sc;
}

inline json scenario_to_json(const Scenario& sc)
{
    json j;
    j["name"] = sc.name;
    j["space"] = sc.space == Space::Heisenberg ? "heisenberg" : "plane";
    j["q"] = sc.q;
    if (sc.has_foliation) {
        json f;
        f["phi1"] = sc.phi1;
        if (sc.space == Space::Heisenberg) f["phi2"] = sc.phi2;
        f["s_range"] = detail::interval_json(sc.s_range);
        json pr = json::array();
        for (Interval iv : sc.p_ranges) pr.push_back(detail::interval_json(iv));
        f["p_ranges"] = pr;
        j["foliation"] = f;
    }
    if (sc.exclusions) j["exclusions"] = *sc.exclusions;
    if (sc.sample_region) {
        j["sample_region"] = {{"radius", detail::interval_json(sc.sample_region->radius)},
                              {"t", detail::interval_json(sc.sample_region->t)},
                              {"count", sc.sample_region->count},
                              {"seed", sc.sample_region->seed}};
    }
    j["tolerances"] = {{"quad_tol", sc.quad_tol}, {"rk_tol", sc.rk_tol}, {"residual_tol", sc.residual_tol}};
    j["checks"] = sc.checks;
    if (!sc.expected.empty()) {
        json e;
        for (const auto& [k, v] : sc.expected) e[k] = {{"value", v.value}, {"rel_tol", v.rel_tol}};
        j["expected"] = e;
    }
    return j;
}

inline Scenario load_scenario(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::InvalidScenario, "cannot open " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidScenario, std::string("malformed JSON: ") + e.what());
    }
    try {
        return scenario_from_json(j);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::InvalidScenario, e.what());
    }
}

namespace builtin {

inline constexpr double pi = std::numbers::pi;

inline constexpr const char* kQ0 = "zb^2*(t^2 + (z*zb)^2)^(2/3) / ((z*zb)^(4/3)*(t + i*z*zb)^2)";
inline constexpr const char* kQ0Neg = "-(zb^2*(t^2 + (z*zb)^2)^(2/3) / ((z*zb)^(4/3)*(t + i*z*zb)^2))";
inline constexpr const char* kNearOrigin = "1e-12 - z*zb";

/// 1/2 of the integral of sin^(-2/3) over (0, pi).
inline constexpr double kC = 3.64297597183137241772991253467;

inline Scenario annulus_horizontal(double r = 2.0)
{
    Scenario sc;
    sc.name = "annulus-horizontal";
    sc.q = kQ0;
    sc.has_foliation = true;
    sc.phi1 = "sqrt(exp(p1)*sin(s))*exp(i*p2)*exp(i*s/2)";
    sc.phi2 = "exp(p1)*cos(s)";
    sc.s_range = {0.0, pi};
    sc.p_ranges = {{0.0, 2.0 * std::log(r)}, {0.0, 2.0 * pi}};
    sc.exclusions = kNearOrigin;
    sc.checks = {"b2", "legendrian", "lambda_constancy", "admissibility", "perturbation", "trace_vs_closed_form"};
    sc.expected["modulus"] = {4.0 * pi * std::log(r) / (kC * kC * kC), 1e-6};
    sc.expected["leaf_length"] = {kC, 1e-8};
    sc.expected["volume"] = {4.0 * pi * kC * std::log(r), 1e-6};
    return sc;
}

inline Scenario annulus_vertical(double r = 2.0)
{
    Scenario sc;
    sc.name = "annulus-vertical";
    sc.q = kQ0Neg;
    sc.has_foliation = true;
    sc.phi1 = "sqrt(exp(s)*sin(p1))*exp(i*p2)*exp(-i*s*cos(p1)/(2*sin(p1)))";
    sc.phi2 = "exp(s)*cos(p1)";
    sc.s_range = {0.0, 2.0 * std::log(r)};
    sc.p_ranges = {{0.0, pi}, {0.0, 2.0 * pi}};
    sc.exclusions = kNearOrigin;
    sc.checks = {"b2", "legendrian", "lambda_constancy", "admissibility", "trace_vs_closed_form"};
    const double lr = std::log(r);
    sc.expected["modulus"] = {pi * pi / (lr * lr * lr), 1e-6};
    return sc;
}

inline Scenario shear(double a = 2.0, double b1 = 1.5, double b2 = 3.0)
{
    Scenario sc;
    sc.name = "shear";
    sc.q = "1";
    sc.has_foliation = true;
    sc.phi1 = "s + i*p1";
    sc.phi2 = "p2 + 2*p1*s";
    sc.s_range = {0.0, a};
    sc.p_ranges = {{0.0, b1}, {0.0, b2}};
    sc.checks = {"b2", "d2prime", "d2doubleprime", "legendrian", "lambda_constancy", "admissibility", "perturbation",
                 "trace_vs_closed_form"};
    sc.expected["modulus"] = {b1 * b2 / (a * a * a), 1e-10};
    sc.expected["leaf_length"] = {a, 1e-10};
    sc.expected["volume"] = {a * b1 * b2, 1e-10};
    return sc;
}

inline Scenario plane_rectangle(double a = 2.0, double b = 3.0)
{
    Scenario sc;
    sc.name = "plane-rectangle";
    sc.space = Space::Plane;
    sc.q = "1";
    sc.has_foliation = true;
    sc.phi1 = "s + i*p1";
    sc.s_range = {0.0, a};
    sc.p_ranges = {{0.0, b}};
    sc.checks = {"holomorphy", "lambda_constancy", "admissibility"};
    sc.expected["modulus"] = {b / a, 1e-10};
    sc.expected["leaf_length"] = {a, 1e-10};
    sc.expected["volume"] = {a * b, 1e-10};
    return sc;
}

inline Scenario plane_annulus_radial(double R = 3.0)
{
    Scenario sc;
    sc.name = "plane-annulus-radial";
    sc.space = Space::Plane;
    sc.q = "1/z^2";
    sc.has_foliation = true;
    sc.phi1 = "s*exp(i*p1)";
    sc.s_range = {1.0, R};
    sc.p_ranges = {{0.0, 2.0 * pi}};
    sc.checks = {"holomorphy", "lambda_constancy", "admissibility"};
    sc.expected["modulus"] = {2.0 * pi / std::log(R), 1e-8};
    sc.expected["leaf_length"] = {std::log(R), 1e-8};
    return sc;
}

inline Scenario plane_annulus_circular(double R = 3.0)
{
    Scenario sc;
    sc.name = "plane-annulus-circular";
    sc.space = Space::Plane;
    sc.q = "-1/z^2";
    sc.has_foliation = true;
    sc.phi1 = "p1*exp(i*s)";
    sc.s_range = {0.0, 2.0 * pi};
    sc.p_ranges = {{1.0, R}};
    sc.checks = {"holomorphy", "lambda_constancy", "admissibility"};
    sc.expected["modulus"] = {std::log(R) / (2.0 * pi), 1e-8};
    sc.expected["leaf_length"] = {2.0 * pi, 1e-8};
    return sc;
}

inline Scenario triple_kernel_residuals()
{
    Scenario sc;
    sc.name = "triple-kernel-residuals";
    sc.q = "(t - i*z*zb)^2/(t + i*z*zb)^4";
    sc.sample_region = SampleRegion{{0.5, 2.0}, {-2.0, 2.0}, 1000, 7};
    sc.checks = {"b2", "d2prime", "d2doubleprime"};
    return sc;
}

} // namespace builtin

/// Built-in scenarios in a fixed order.
inline std::vector<Scenario> builtin_scenarios()
{
    return {builtin::annulus_horizontal(),   builtin::annulus_vertical(),       builtin::shear(),
            builtin::plane_rectangle(),      builtin::plane_annulus_radial(),   builtin::plane_annulus_circular(),
            builtin::triple_kernel_residuals()};
}

inline std::vector<std::string> list_scenarios()
{
    std::vector<std::string> out;
    for (const Scenario& s : builtin_scenarios()) out.push_back(s.name);
    return out;
}

inline std::optional<Scenario> find_builtin(const std::string& name)
{
    for (Scenario& s : builtin_scenarios())
        if (s.name == name) return s;
    return std::nullopt;
}

struct CheckResult {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double threshold = 0.0;
};

struct RunOptions {
    std::optional<double> tol;
    std::optional<double> rk_tol;
    bool override_b2_check = false;
    /// Number of tolerance levels in the convergence table, each 10x looser than the next.
    std::size_t convergence_levels = 3;
};

struct RunReport {
    std::string name;
    std::optional<ModulusReport> modulus;
    std::vector<CheckResult> checks;
    std::vector<std::pair<double, double>> convergence;
    std::vector<std::string> warnings;
    double seconds = 0.0;

    bool passed() const
    {
        return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.pass; });
    }
};

namespace detail {

inline double spread(const std::vector<double>& v)
{
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    return mean != 0.0 ? (*hi - *lo) / std::abs(mean) : std::numeric_limits<double>::infinity();
}

inline double cell(Interval iv, std::size_t k, std::size_t n)
{
    return iv.lo + (static_cast<double>(k) + 0.5) * iv.width() / static_cast<double>(n);
}

inline std::vector<HPoint> residual_points(const Scenario& sc, const Foliation* F)
{
    std::vector<HPoint> pts;
    if (F) {
        for (const Param& u : parameter_grid(*F, 10, 10, 10)) pts.push_back(F->point(u));
        return pts;
    }
    const SampleRegion& r = *sc.sample_region;
    std::mt19937_64 rng(r.seed);
    std::uniform_real_distribution<double> rad(r.radius.lo, r.radius.hi), ang(0.0, 2.0 * std::numbers::pi),
        tt(r.t.lo, r.t.hi);
    for (std::size_t k = 0; k < r.count; ++k) pts.push_back({std::polar(rad(rng), ang(rng)), tt(rng)});
    return pts;
}

/// Sup distance between a traced leaf and Phi(., p) reparametrized by q-length.
struct TraceComparison {
    double deviation = 0.0;
    double legendrian = 0.0;
};

inline TraceComparison compare_trace(const QuadDiff& q, const Foliation& F, double p1, double p2, double rk_tol,
                                     const DomainGuard& guard)
{
    const Interval I = F.s_range();
    const double s0 = I.lo + 0.5 * I.width();
    const double s_end = I.lo + 0.9 * I.width();
    auto mu = [&](double s) {
        const Param u{s, p1, p2};
        return std::sqrt(horizontal_mu2(q(F.point(u)), F.jet(u).f1_s));
    };
    const Tolerance tol{0.0, 1e-13};
    const double total = integrate_1d(mu, Interval{s0, s_end}, tol).value;

    const FoliationJet j0 = F.jet({s0, p1, p2});
    const cplx root = std::sqrt(eval_q(q, {j0.f1, j0.f2}));
    TraceOptions opt;
    opt.rk_tol = rk_tol;
    opt.max_length = total;
    opt.guard = guard;
    const int orientation = std::real(j0.f1_s * root) > 0.0 ? 1 : -1;
    const LegendrianPath path = trace_trajectory(q, {j0.f1, j0.f2}, orientation, opt);

    TraceComparison out;
    double s_prev = s0;
    double sigma_prev = 0.0;
    for (const PathSample& smp : path.samples) {
        // Newton on sigma(s) = target, integrating mu from the previous sample
        double s = s_prev + (smp.s - sigma_prev) / mu(s_prev);
        double sigma_s = sigma_prev;
        for (int it = 0; it < 30; ++it) {
            sigma_s = sigma_prev + integrate_1d(mu, Interval{s_prev, s}, tol).value;
            const double ds = (smp.s - sigma_s) / mu(s);
            s += ds;
            if (std::abs(ds) < 1e-15 * (1.0 + std::abs(s))) break;
        }
        sigma_prev = sigma_prev + integrate_1d(mu, Interval{s_prev, s}, tol).value;
        s_prev = s;
        const HPoint c = F.point({s, p1, p2});
        out.deviation = std::max({out.deviation, std::abs(c.z - smp.point.z), std::abs(c.t - smp.point.t)});
        out.legendrian = std::max(out.legendrian, std::abs(legendrian_residual(smp.point.z, smp.tangent)));
    }
    return out;
}

inline std::string perturbation_expr(std::size_t k)
{
    static const char* g[] = {"cos(s)", "sin(2*s)*p1", "1 - s*p2/10", "cos(s + p1 + p2)"};
    return g[k % 4];
}

} // namespace detail

/// Runs the modulus computation, the requested checks and the convergence table.
inline RunReport run_scenario(const Scenario& sc, const RunOptions& ro = {})
{
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.name = sc.name;
    const double tol = ro.tol.value_or(sc.quad_tol);
    const double rk_tol = ro.rk_tol.value_or(sc.rk_tol);
    ModulusOptions mo;
    mo.tol = {0.0, tol};
    mo.override_b2_check = ro.override_b2_check;
    auto add = [&](std::string name, double value, double threshold, bool pass) {
        rep.checks.push_back({std::move(name), pass, value, threshold});
    };
    auto expect = [&](const std::string& key, double measured) {
        auto it = sc.expected.find(key);
        if (it == sc.expected.end()) return;
        const double rel = std::abs(measured / it->second.value - 1.0);
        add("expected_" + key, rel, it->second.rel_tol, rel <= it->second.rel_tol);
    };

    if (sc.space == Space::Plane) {
        const PlanarQD q = PlanarQD::parse(sc.q);
        const PlanarFoliation F(parse(sc.phi1), sc.s_range, sc.p_ranges[0]);
        for (const std::string& c : sc.checks) {
            if (c != "holomorphy") continue;
            double worst = 0.0;
            for (std::size_t a = 0; a < 20; ++a)
                for (std::size_t b = 0; b < 20; ++b)
                    worst = std::max(worst, std::abs(holomorphy_residual(
                                                q, F.point(detail::cell(sc.s_range, a, 20), detail::cell(sc.p_ranges[0], b, 20)))));
            add(c, worst, sc.residual_tol, worst <= sc.residual_tol);
        }
        rep.modulus = modulus_m2(q, F, mo);
        for (const std::string& c : sc.checks) {
            if (c == "lambda_constancy") {
                double worst = 0.0;
                for (std::size_t b = 0; b < 100; ++b) {
                    std::vector<double> lam;
                    const double p = detail::cell(sc.p_ranges[0], b, 100);
                    for (std::size_t a = 0; a < 100; ++a) lam.push_back(lambda_field_2d(q, F, detail::cell(sc.s_range, a, 100), p));
                    worst = std::max(worst, detail::spread(lam));
                }
                add(c, worst, 1e-8, worst <= 1e-8);
            } else if (c == "admissibility") {
                auto table = make_planar_leaf_table(q, F, mo.leaf_tol(), mo.q_floor);
                double worst = 0.0;
                for (std::size_t b = 0; b < 25; ++b) {
                    const double p = detail::cell(sc.p_ranges[0], b, 25);
                    const double l = table->length(p, 0.0).value;
                    auto rho_line = [&](double s) {
                        const PlanarJet j = F.jet(s, p);
                        return std::sqrt(std::abs(q(j.phi))) / l * std::abs(j.phi_s);
                    };
                    const double line = integrate_1d(rho_line, sc.s_range, Tolerance{0.0, 1e-12}).value;
                    worst = std::max(worst, std::abs(line - 1.0));
                }
                add(c, worst, 1e-8, worst <= 1e-8);
            }
        }
    } else {
        const QuadDiff q = QuadDiff::parse(sc.q);
        DomainGuard guard;
        if (sc.exclusions) guard = DomainGuard(-parse(*sc.exclusions));
        std::optional<Foliation> F;
        if (sc.has_foliation)
            F.emplace(parse(sc.phi1), parse(sc.phi2), sc.s_range, sc.p_ranges[0], sc.p_ranges[1]);

        const std::vector<HPoint> pts = detail::residual_points(sc, F ? &*F : nullptr);
        for (const std::string& c : sc.checks) {
            Operator op;
            if (c == "b2")
                op = Operator::B2;
            else if (c == "d2prime")
                op = Operator::D2prime;
            else if (c == "d2doubleprime")
                op = Operator::D2doubleprime;
            else
                continue;
            double worst = 0.0;
            for (const HPoint& p : pts) worst = std::max(worst, std::abs(q.residual(op, p).value));
            add(c, worst, sc.residual_tol, worst <= sc.residual_tol);
        }
        if (F) {
            for (const std::string& c : sc.checks) {
                if (c != "legendrian") continue;
                double worst = 0.0;
                for (const Param& u : parameter_grid(*F, 20, 10, 10)) {
                    const FoliationJet j = F->jet(u);
                    worst = std::max(worst, std::abs(legendrian_residual(j.f1, {j.f1_s, j.f2_s})) / (1.0 + legendrian_scale(j)));
                }
                add(c, worst, kLegendrianTol, worst <= kLegendrianTol);
            }
            rep.modulus = modulus_m4(q, *F, mo);
            if (rep.modulus->residual_check_overridden)
                rep.warnings.push_back("B2 spot check failed (relative residual " + std::to_string(*rep.modulus->residual_max) +
                                       "); continuing because the check was overridden");
            const QField qf = compose(q, *F);
            auto table = make_leaf_table(qf, *F, mo.leaf_tol(), mo.q_floor);
            for (const std::string& c : sc.checks) {
                if (c == "lambda_constancy") {
                    double worst = 0.0;
                    for (std::size_t a = 0; a < 10; ++a)
                        for (std::size_t b = 0; b < 10; ++b) {
                            const double p1 = detail::cell(sc.p_ranges[0], a, 10), p2 = detail::cell(sc.p_ranges[1], b, 10);
                            std::vector<double> lam;
                            for (std::size_t k = 0; k < 100; ++k)
                                lam.push_back(lambda_field(qf, *F, {detail::cell(sc.s_range, k, 100), p1, p2}));
                            worst = std::max(worst, detail::spread(lam));
                        }
                    add(c, worst, 1e-6, worst <= 1e-6);
                } else if (c == "admissibility") {
                    const AdmissibilityResult adm = admissibility_check(extremal_density(qf, *F, table), *F, 25);
                    double worst = 0.0;
                    for (const LeafIntegral& l : adm.leaves) worst = std::max(worst, std::abs(l.value - 1.0));
                    add(c, worst, 1e-8, worst <= 1e-8);
                } else if (c == "perturbation") {
                    double worst = std::numeric_limits<double>::infinity();
                    for (std::size_t k = 0; k < 4; ++k) {
                        const ProbeResult pr = perturbation_probe(qf, *F, parse(detail::perturbation_expr(k)), 0.1, mo, table);
                        worst = std::min(worst, pr.gap() / pr.reference_modulus);
                    }
                    add(c, worst, -1e-9, worst >= -1e-9);
                } else if (c == "trace_vs_closed_form") {
                    double dev = 0.0, leg = 0.0;
                    for (double fa : {0.3, 0.7})
                        for (double fb : {0.25, 0.6}) {
                            const double p1 = sc.p_ranges[0].lo + fa * sc.p_ranges[0].width();
                            const double p2 = sc.p_ranges[1].lo + fb * sc.p_ranges[1].width();
                            const detail::TraceComparison tc = detail::compare_trace(q, *F, p1, p2, rk_tol, guard);
                            dev = std::max(dev, tc.deviation);
                            leg = std::max(leg, tc.legendrian);
                        }
                    add(c, dev, 1e-6, dev <= 1e-6);
                    add("trace_legendrian", leg, kLegendrianTol, leg <= kLegendrianTol);
                }
            }
        }
    }

    if (rep.modulus) {
        const ModulusReport& m = *rep.modulus;
        expect("modulus", m.modulus);
        expect("leaf_length", m.leaf_length.mean);
        if (sc.expected.count("volume")) {
            if (m.constant_length_modulus)
                expect("volume", m.volume);
            else
                add("expected_volume", std::numeric_limits<double>::quiet_NaN(), sc.expected.at("volume").rel_tol, false);
        }
        if (m.consistency_gap) {
            const double rel = *m.consistency_gap / m.modulus;
            add("two_path_consistency", rel, 1e-6, rel <= 1e-6);
        }
        // looser levels first; the last entry is the reported value
        for (std::size_t k = ro.convergence_levels; k-- > 1;) {
            ModulusOptions lo = mo;
            lo.tol.rel = tol * std::pow(10.0, static_cast<double>(k));
            lo.override_b2_check = true;
            double v;
            if (sc.space == Space::Plane)
                v = modulus_m2(PlanarQD::parse(sc.q), PlanarFoliation(parse(sc.phi1), sc.s_range, sc.p_ranges[0]), lo).modulus;
            else
                v = modulus_m4(QuadDiff::parse(sc.q),
                               Foliation(parse(sc.phi1), parse(sc.phi2), sc.s_range, sc.p_ranges[0], sc.p_ranges[1]), lo)
                        .modulus;
            rep.convergence.emplace_back(lo.tol.rel, v);
        }
        rep.convergence.emplace_back(tol, m.modulus);
    }
    rep.seconds = detail::elapsed_since(t0);
    return rep;
}

/// Shortest decimal form that reads back to the same double.
inline std::string format_real(double x)
{
    if (!std::isfinite(x)) return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
    std::ostringstream os;
    os << std::setprecision(17) << x;
    for (int p = 1; p <= 17; ++p) {
        std::ostringstream t;
        t << std::setprecision(p) << x;
        if (std::stod(t.str()) == x) return t.str();
    }
    return os.str();
}

inline json report_to_json(const RunReport& r)
{
    auto num = [](double x) -> json {
        if (std::isfinite(x)) return x;
        return nullptr;
    };
    json j;
    j["name"] = r.name;
    if (r.modulus) {
        const ModulusReport& m = *r.modulus;
        j["modulus"] = num(m.modulus);
        j["error_estimate"] = num(m.error_estimate);
        j["leaf_length"] = {{"min", num(m.leaf_length.min)}, {"max", num(m.leaf_length.max)}, {"mean", num(m.leaf_length.mean)}};
        j["volume"] = m.constant_length_modulus ? num(m.volume) : json(nullptr);
        j["constant_length_modulus"] = m.constant_length_modulus ? num(*m.constant_length_modulus) : json(nullptr);
        j["consistency_gap"] = m.consistency_gap ? num(*m.consistency_gap) : json(nullptr);
        j["residual_max"] = m.residual_max ? num(*m.residual_max) : json(nullptr);
        j["evaluations"] = m.evaluations;
    } else {
        j["modulus"] = nullptr;
        j["error_estimate"] = nullptr;
    }
    json checks = json::array();
    for (const CheckResult& c : r.checks)
        checks.push_back({{"name", c.name}, {"pass", c.pass}, {"value", num(c.value)}, {"threshold", num(c.threshold)}});
    j["checks"] = checks;
    json conv = json::array();
    for (const auto& [t, v] : r.convergence) conv.push_back(json::array({t, num(v)}));
    j["convergence"] = conv;
    j["warnings"] = r.warnings;
    j["pass"] = r.passed();

    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm utc{};
    gmtime_r(&now, &utc);
    std::ostringstream ts;
    ts << std::put_time(&utc, "%Y-%m-%dT%H:%M:%SZ");
    j["timestamp"] = {{"utc", ts.str()}, {"wall_seconds", r.seconds}};
    return j;
}

inline std::string convergence_csv(const RunReport& r)
{
    std::ostringstream os;
    os << "tol,modulus\n";
    for (const auto& [t, v] : r.convergence) os << format_real(t) << ',' << format_real(v) << '\n';
    return os.str();
}

} // namespace heismod
