// heismod: run modulus scenarios, list the built-ins, trace trajectories.
//
// exit codes: 0 pass, 1 check or tracer failure, 2 bad input

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "heismod/scenario.hpp"
#include "heismod/tracer.hpp"

namespace {

constexpr int kPass = 0;
constexpr int kCheckFailure = 1;
constexpr int kInputError = 2;

using namespace heismod;

bool write_file(const std::string& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) return false;
    out << text;
    return static_cast<bool>(out);
}

Scenario resolve(const std::string& arg)
{
    if (std::filesystem::exists(arg)) return load_scenario(arg);
    if (auto sc = find_builtin(arg)) return *sc;
    throw Error(ErrorKind::InvalidScenario, "no such file or built-in scenario: " + arg);
}

struct RunArgs {
    std::string scenario;
    std::optional<double> tol;
    std::optional<double> rk_tol;
    std::string report;
    std::string csv;
    bool override_b2 = false;
};

int cmd_run(const RunArgs& a)
{
    Scenario sc;
    try {
        sc = resolve(a.scenario);
    } catch (const Error& e) {
        std::cerr << "heismod: " << e.what() << '\n';
        return kInputError;
    }
    RunOptions ro;
    ro.tol = a.tol;
    ro.rk_tol = a.rk_tol;
    ro.override_b2_check = a.override_b2;
    RunReport rep;
    try {
        rep = run_scenario(sc, ro);
    } catch (const Error& e) {
        std::cerr << "heismod: " << sc.name << ": " << e.what() << '\n';
        return kCheckFailure;
    }
    for (const std::string& w : rep.warnings) std::cerr << "warning: " << w << '\n';

    const std::string text = report_to_json(rep).dump(2) + "\n";
    if (a.report.empty()) {
        std::cout << text;
    } else {
        if (!write_file(a.report, text)) {
            std::cerr << "heismod: cannot write " << a.report << '\n';
            return kInputError;
        }
        if (rep.modulus)
            std::cout << sc.name << ": modulus " << format_real(rep.modulus->modulus) << " +- "
                      << format_real(rep.modulus->error_estimate) << '\n';
        for (const CheckResult& c : rep.checks)
            std::cout << "  " << (c.pass ? "ok   " : "FAIL ") << c.name << " " << format_real(c.value) << " (threshold "
                      << format_real(c.threshold) << ")\n";
    }
    if (!a.csv.empty() && !write_file(a.csv, convergence_csv(rep))) {
        std::cerr << "heismod: cannot write " << a.csv << '\n';
        return kInputError;
    }
    return rep.passed() ? kPass : kCheckFailure;
}

struct TraceArgs {
    std::string q;
    std::vector<double> start;
    int orientation = 1;
    double rk_tol = 1e-9;
    double max_length = 5.0;
    std::size_t max_steps = 200000;
    std::string exclude;
    std::string out;
};

int cmd_trace(const TraceArgs& a)
{
    std::optional<QuadDiff> q;
    TraceOptions opt;
    try {
        q.emplace(QuadDiff::parse(a.q));
        if (!a.exclude.empty()) opt.guard = DomainGuard(-parse(a.exclude));
    } catch (const Error& e) {
        std::cerr << "heismod: " << e.what() << '\n';
        return kInputError;
    }
    if (a.start.size() != 3) {
        std::cerr << "heismod: --start takes re_z,im_z,t\n";
        return kInputError;
    }
    opt.rk_tol = a.rk_tol;
    opt.max_length = a.max_length;
    opt.max_steps = a.max_steps;
    LegendrianPath path;
    try {
        path = trace_trajectory(*q, {{a.start[0], a.start[1]}, a.start[2]}, a.orientation, opt);
    } catch (const Error& e) {
        std::cerr << "heismod: trace failed: " << e.what() << '\n';
        return kCheckFailure;
    }
    std::ostringstream os;
    os << "s,re_z,im_z,t,leg_residual\n";
    for (const PathSample& smp : path.samples)
        os << format_real(smp.s) << ',' << format_real(smp.point.z.real()) << ',' << format_real(smp.point.z.imag())
           << ',' << format_real(smp.point.t) << ',' << format_real(legendrian_residual(smp.point.z, smp.tangent))
           << '\n';
    if (a.out.empty()) {
        std::cout << os.str();
    } else if (!write_file(a.out, os.str())) {
        std::cerr << "heismod: cannot write " << a.out << '\n';
        return kInputError;
    }
    std::cerr << "stopped: " << to_string(path.stop) << " after q-length " << format_real(path.length()) << '\n';
    return kPass;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Moduli of foliated curve families in the Heisenberg group and the plane"};
    app.require_subcommand(1);

    RunArgs run;
    auto* run_cmd = app.add_subcommand("run", "Run a scenario file or built-in scenario");
    run_cmd->add_option("scenario", run.scenario, "Scenario JSON path or built-in name")->required();
    run_cmd->add_option("--tol", run.tol, "Relative quadrature tolerance")->check(CLI::PositiveNumber);
    run_cmd->add_option("--rk-tol", run.rk_tol, "Tracer tolerance")->check(CLI::PositiveNumber);
    run_cmd->add_option("--report", run.report, "Write the JSON report here instead of stdout");
    run_cmd->add_option("--csv", run.csv, "Write the convergence table as CSV");
    run_cmd->add_flag("--override-b2-check", run.override_b2, "Warn instead of failing when B2 q does not vanish");

    auto* list_cmd = app.add_subcommand("list", "List built-in scenarios");

    std::string show_name;
    auto* show_cmd = app.add_subcommand("show", "Print a built-in scenario as JSON");
    show_cmd->alias("export");
    show_cmd->add_option("name", show_name, "Built-in scenario name")->required();

    TraceArgs tr;
    auto* trace_cmd = app.add_subcommand("trace", "Trace a horizontal trajectory of q and print CSV");
    trace_cmd->add_option("--q", tr.q, "Coefficient q(z, zb, t)")->required();
    trace_cmd->add_option("--start", tr.start, "Start point re_z,im_z,t")->delimiter(',')->required()->expected(3);
    trace_cmd->add_option("--orientation", tr.orientation, "+1 or -1")->check(CLI::IsMember({1, -1}));
    trace_cmd->add_option("--rk-tol", tr.rk_tol, "Step tolerance")->check(CLI::PositiveNumber);
    trace_cmd->add_option("--max-length", tr.max_length, "Stop after this q-length")->check(CLI::PositiveNumber);
    trace_cmd->add_option("--max-steps", tr.max_steps, "Stop after this many accepted steps");
    trace_cmd->add_option("--exclude", tr.exclude, "Points with Re(expr) > 0 are outside the domain");
    trace_cmd->add_option("--out", tr.out, "Write the CSV here instead of stdout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kPass : kInputError;
    }

    if (*run_cmd) return cmd_run(run);
    if (*list_cmd) {
        for (const std::string& n : list_scenarios()) std::cout << n << '\n';
        return kPass;
    }
    if (*show_cmd) {
        auto sc = find_builtin(show_name);
        if (!sc) {
            std::cerr << "heismod: unknown built-in scenario " << show_name << '\n';
            return kInputError;
        }
        std::cout << scenario_to_json(*sc).dump(2) << '\n';
        return kPass;
    }
    return cmd_trace(tr);
}
