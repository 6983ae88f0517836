#include <gtest/gtest.h>

#include "heismod/expr.hpp"
#include "test_support.hpp"

using namespace heismod;
using heismod::oracle::eval_at;

namespace {

const cplx I{0.0, 1.0};

void expect_cnear(cplx a, cplx b, double tol)
{
    EXPECT_NEAR(a.real(), b.real(), tol) << a << " vs " << b;
    EXPECT_NEAR(a.imag(), b.imag(), tol) << a << " vs " << b;
}

ErrorKind parse_error_kind(const std::string& text)
{
    try {
        (void)parse(text);
    } catch (const Error& e) {
        return e.kind();
    }
    ADD_FAILURE() << "no error for " << text;
    return ErrorKind::PreconditionFailed;
}

} // namespace

TEST(Parse, Variable)
{
    const Expr e = parse("z");
    EXPECT_EQ(e.op(), Op::Var);
    EXPECT_EQ(e.var(), Var::z);
}

TEST(Parse, ConjDesugarsToZb)
{
    const Expr e = parse("conj(z)*z");
    ASSERT_EQ(e.op(), Op::Mul);
    EXPECT_EQ(e.lhs().op(), Op::Var);
    EXPECT_EQ(e.lhs().var(), Var::zb);
    EXPECT_EQ(e.rhs().var(), Var::z);
    EXPECT_EQ(parse("conj(zb)").var(), Var::z);
}

TEST(Parse, Precedence)
{
    const Expr e = parse("1 + 2*z^2");
    ASSERT_EQ(e.op(), Op::Add);
    ASSERT_EQ(e.rhs().op(), Op::Mul);
    ASSERT_EQ(e.rhs().rhs().op(), Op::PowR);
    EXPECT_EQ(e.rhs().rhs().exponent(), 2.0);
    // the power binds to the unary operand
    EXPECT_EQ(parse("-z^2").op(), Op::PowR);
    expect_cnear(eval_at(parse("2 - 3 - 4"), {}), -5.0, 0.0);
    expect_cnear(eval_at(parse("8/2/2"), {}), 2.0, 0.0);
}

TEST(Parse, RationalAndSignedExponents)
{
    EXPECT_NEAR(parse("z^(2/3)").exponent(), 2.0 / 3.0, 1e-16);
    EXPECT_NEAR(parse("z^(-1/3)").exponent(), -1.0 / 3.0, 1e-16);
    EXPECT_EQ(parse("z^-2").exponent(), -2.0);
    EXPECT_EQ(parse("z^1.5e1").exponent(), 15.0);
}

TEST(Parse, Errors)
{
    EXPECT_EQ(parse_error_kind("z^t"), ErrorKind::NonLiteralExponent);
    EXPECT_EQ(parse_error_kind("z^(t)"), ErrorKind::NonLiteralExponent);
    EXPECT_EQ(parse_error_kind("z^(1/z)"), ErrorKind::NonLiteralExponent);
    EXPECT_EQ(parse_error_kind("w + 1"), ErrorKind::UnknownIdentifier);
    EXPECT_EQ(parse_error_kind("tan(z)"), ErrorKind::UnknownIdentifier);
    EXPECT_EQ(parse_error_kind("z +"), ErrorKind::SyntaxError);
    EXPECT_EQ(parse_error_kind("(z"), ErrorKind::SyntaxError);
    EXPECT_EQ(parse_error_kind("z z"), ErrorKind::SyntaxError);
    EXPECT_EQ(parse_error_kind(""), ErrorKind::SyntaxError);
    try {
        (void)parse("z + * t");
    } catch (const Error& e) {
        EXPECT_EQ(e.offset(), 4u);
    }
}

TEST(Eval, Examples)
{
    expect_cnear(eval_at(parse("z*conj(z)"), {{3.0, 4.0}, 0.0}), 25.0, 1e-12);
    expect_cnear(eval_at(parse("t + i*z*conj(z)"), {{1.0, 0.0}, 2.0}), cplx(2.0, 1.0), 1e-15);
    expect_cnear(eval_at(parse("(z*conj(z))^(2/3)"), {{8.0, 0.0}, 0.0}), 16.0, 1e-12);
}

TEST(Eval, Errors)
{
    const Expr e = parse("1/z");
    try {
        (void)eval_at(e, {});
        ADD_FAILURE();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::DivisionNearZero);
    }
    Binding b;
    b.set(Var::z, 1.0);
    EXPECT_THROW((void)eval(parse("z + t"), b), Error);
    b.set(Var::zb, cplx{1.0, 0.5});
    try {
        (void)eval(parse("z*zb"), b);
        ADD_FAILURE();
    } catch (const Error& err) {
        EXPECT_EQ(err.kind(), ErrorKind::InconsistentBinding);
    }
}

TEST(Eval, BranchCutFlag)
{
    Binding b = Binding::heisenberg({{-4.0, 0.0}, 0.0});
    EvalDiagnostics diag;
    (void)eval(parse("sqrt(z)"), b, &diag);
    EXPECT_TRUE(diag.branch_cut);
    EvalDiagnostics diag2;
    (void)eval(parse("(z*zb)^(1/3) + z^2"), b, &diag2);
    EXPECT_FALSE(diag2.branch_cut);
}

TEST(Diff, Examples)
{
    const HPoint p{{0.6, -0.3}, 0.4};
    expect_cnear(eval_at(d_z(parse("z^2")), p), 2.0 * p.z, 1e-14);
    EXPECT_TRUE(d_zb(parse("z")).is_zero());
    // d_z (z zb)^(2/3) = (2/3)(z zb)^(-1/3) zb
    const double r2 = std::norm(p.z);
    expect_cnear(eval_at(d_z(parse("(z*zb)^(2/3)")), p), (2.0 / 3.0) * std::pow(r2, -1.0 / 3.0) * std::conj(p.z), 1e-14);
}

TEST(Fields, Examples)
{
    const HPoint p{{0.6, -0.3}, 0.4};
    EXPECT_TRUE(apply_field(parse("z"), Field::Z).is_one());
    EXPECT_TRUE(apply_field(parse("z"), Field::Zbar).is_zero());
    expect_cnear(eval_at(apply_field(parse("t + i*z*conj(z)"), Field::Zbar), p), 0.0, 1e-15);
    expect_cnear(eval_at(apply_field(parse("t"), Field::Z), p), I * std::conj(p.z), 1e-15);
    expect_cnear(eval_at(apply_field(parse("t*z"), Field::T), p), p.z, 1e-15);
}

TEST(Fields, RejectFoliationParameters)
{
    try {
        (void)apply_field(parse("z + s"), Field::Z);
        ADD_FAILURE();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::VariableMismatch);
    }
}

TEST(Fields, AgreeWithFiniteDifferences)
{
    const auto pts = oracle::sample_points(20, 2024);
    for (const auto& text : oracle::derivative_corpus()) {
        const Expr e = parse(text);
        for (Field f : {Field::Z, Field::Zbar, Field::T}) {
            const Expr de = apply_field(e, f);
            for (const HPoint& p : pts) {
                const cplx sym = eval_at(de, p);
                const cplx fd = oracle::fd_field(e, f, p);
                const double scale = std::max({std::abs(sym), std::abs(fd), 1.0});
                EXPECT_LE(std::abs(sym - fd) / scale, 1e-6) << text << " field " << static_cast<int>(f);
            }
        }
    }
}

TEST(Conj, Examples)
{
    EXPECT_EQ(conj_expr(parse("z")).var(), Var::zb);
    const HPoint p{{0.6, -0.3}, 0.4};
    expect_cnear(eval_at(conj_expr(parse("i*t")), p), -I * p.t, 1e-15);
    const cplx w = p.t - I * std::norm(p.z);
    expect_cnear(eval_at(conj_expr(parse("(t + i*z*zb)^2")), p), w * w, 1e-14);
}

TEST(Conj, CommutesWithEvaluation)
{
    const auto pts = oracle::sample_points(20, 7);
    for (const auto& text : oracle::derivative_corpus()) {
        const Expr e = parse(text);
        const Expr ce = conj_expr(e);
        for (const HPoint& p : pts) {
            const cplx v = eval_at(e, p);
            expect_cnear(eval_at(ce, p), std::conj(v), 1e-12 * (1.0 + std::abs(v)));
        }
    }
}

TEST(Conj, WirtingerConjugationIdentity)
{
    const auto pts = oracle::sample_points(10, 8);
    for (const auto& text : oracle::derivative_corpus()) {
        const Expr e = parse(text);
        const Expr lhs = d_z(conj_expr(e));
        const Expr rhs = conj_expr(d_zb(e));
        for (const HPoint& p : pts) {
            const cplx a = eval_at(lhs, p);
            expect_cnear(a, eval_at(rhs, p), 1e-11 * (1.0 + std::abs(a)));
        }
    }
}

TEST(Print, RoundTripEvaluatesIdentically)
{
    const auto pts = oracle::sample_points(5, 9);
    for (const auto& text : oracle::derivative_corpus()) {
        const Expr e = parse(text);
        const Expr back = parse(to_string(e));
        const Expr de = apply_field(e, Field::Zbar);
        const Expr de_back = parse(to_string(de));
        for (const HPoint& p : pts) {
            EXPECT_EQ(eval_at(back, p), eval_at(e, p)) << to_string(e);
            const cplx a = eval_at(de, p);
            expect_cnear(eval_at(de_back, p), a, 1e-13 * (1.0 + std::abs(a)));
        }
    }
    EXPECT_EQ(to_string(parse("2 - 3.5*i")), "(2 - (3.5*i))");
    EXPECT_EQ(to_string(cst(cplx{1.0, -2.0})), "(1 + (-2*i))");
}

TEST(Compiled, MatchesTreeEvaluation)
{
    const auto pts = oracle::sample_points(10, 10);
    for (const auto& text : oracle::derivative_corpus()) {
        const Expr e = apply_field(apply_field(parse(text), Field::Z), Field::Zbar);
        const CompiledExpr c(e);
        for (const HPoint& p : pts) EXPECT_EQ(c(Binding::heisenberg(p)), eval_at(e, p)) << text;
    }
}

TEST(Simplify, ConstantFoldingAndIdentities)
{
    const Expr z = var(Var::z);
    EXPECT_TRUE((z * cst(0.0)).is_zero());
    EXPECT_EQ((z * cst(1.0)).id(), z.id());
    EXPECT_EQ((cst(0.0) + z).id(), z.id());
    EXPECT_EQ((cst(2.0) * cst(3.0)).value(), cplx(6.0));
    EXPECT_EQ(pow(cst(4.0), 0.5).value(), cplx(2.0));
    EXPECT_TRUE(d_t(parse("z*zb + sin(z)")).is_zero());
}

TEST(Diff, FoliationParameters)
{
    const Expr phi = parse("sqrt(exp(p1)*sin(s))*exp(i*p2)*exp(i*s/2)");
    const Expr ds = diff(phi, Var::s);
    const double s = 0.8, p1 = 0.3, p2 = 1.2, h = 1e-6;
    auto at = [&](double a, double b, double c) { return eval(phi, Binding::params(a, b, c)); };
    const cplx fd = (at(s + h, p1, p2) - at(s - h, p1, p2)) / (2 * h);
    expect_cnear(eval(ds, Binding::params(s, p1, p2)), fd, 1e-8);
    const Expr mix = parse("re(s*exp(i*p1)) + abs2(s + i*p2) + im(p1*exp(i*s))");
    const Expr dmix = diff(mix, Var::s);
    auto m = [&](double a) { return eval(mix, Binding::params(a, p1, p2)); };
    expect_cnear(eval(dmix, Binding::params(s, p1, p2)), (m(s + h) - m(s - h)) / (2 * h), 1e-8);
}
