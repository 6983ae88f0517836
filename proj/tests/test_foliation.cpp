#include <gtest/gtest.h>

#include <cmath>

#include "heismod/foliation.hpp"
#include "heismod/qdiff.hpp"
#include "test_support.hpp"

using namespace heismod;
using oracle::kPi;

namespace {

double jac_gap(const Foliation& F, const Param& u)
{
    const FoliationJet j = F.jet(u);
    const double d = jac_det(j);
    return std::abs(jac_via_A(j) - d) / std::max(std::abs(d), 1e-300);
}

} // namespace

TEST(Foliation, JetMatchesClosedFormArc)
{
    const Foliation G = oracle::gamma_foliation(2.0);
    const Param u{0.9, 0.3, 1.7};
    const FoliationJet j = G.jet(u);
    const HPoint p = oracle::gamma_arc(u.s, u.p1, u.p2);
    const HTangent v = oracle::gamma_arc_velocity(u.s, u.p1, u.p2);
    EXPECT_LE(std::abs(j.f1 - p.z), 1e-14);
    EXPECT_NEAR(j.f2, p.t, 1e-14);
    EXPECT_LE(std::abs(j.f1_s - v.dz), 1e-14);
    EXPECT_NEAR(j.f2_s, v.dt, 1e-14);
}

TEST(Foliation, RejectsHeisenbergVariablesAndEmptyRanges)
{
    EXPECT_EQ(oracle::error_kind([] { Foliation(parse("z"), parse("s"), {0, 1}, {0, 1}, {0, 1}); }),
              ErrorKind::VariableMismatch);
    EXPECT_EQ(oracle::error_kind([] { Foliation(parse("s"), parse("p1"), {1, 1}, {0, 1}, {0, 1}); }),
              ErrorKind::PreconditionFailed);
}

TEST(Foliation, AnnulusFamiliesAreLegendrian)
{
    for (const Foliation& F : {oracle::gamma_foliation(2.0), oracle::delta_foliation(2.0), oracle::shear_foliation(2, 1, 3)})
        for (const Param& u : parameter_grid(F, 7, 5, 5)) {
            const FoliationJet j = F.jet(u);
            EXPECT_LE(std::abs(legendrian_residual_grid(F, u)), 1e-12 * (1.0 + legendrian_scale(j)));
        }
}

TEST(Jacobian, ShearIsOne)
{
    const Foliation F = oracle::shear_foliation(2.0, 1.5, 3.0);
    for (const Param& u : parameter_grid(F, 3, 3, 3)) {
        EXPECT_DOUBLE_EQ(jac_via_A(F, u), 1.0);
        EXPECT_DOUBLE_EQ(jac_det(F, u), 1.0);
    }
}

TEST(Jacobian, GammaClosedForm)
{
    // J = -e^(2x)/2
    const Foliation G = oracle::gamma_foliation(2.0);
    for (const Param& u : parameter_grid(G, 5, 5, 2))
        EXPECT_LE(oracle::rel_err(jac_det(G, u), -0.5 * std::exp(2.0 * u.p1)), 1e-12);
}

TEST(Jacobian, IdentityOnLegendrianGrids)
{
    for (const Foliation& F : {oracle::gamma_foliation(1.5), oracle::gamma_foliation(2.0), oracle::gamma_foliation(4.0),
                               oracle::delta_foliation(2.0), oracle::shear_foliation(2, 1.5, 3)})
        for (const Param& u : parameter_grid(F, 10, 10, 10)) EXPECT_LE(jac_gap(F, u), 1e-8);
}

TEST(Jacobian, CollapsedFoliationIsDegenerate)
{
    const Foliation F(parse("s + i*p1"), parse("2*p1*s"), {0, 1}, {0, 1}, {0, 1});
    EXPECT_EQ(jac_via_A(F, {0.4, 0.3, 0.2}), 0.0);
    EXPECT_EQ(jac_det(F, {0.4, 0.3, 0.2}), 0.0);
}

TEST(Jacobian, VerticalSheetControlStillSatisfiesIdentity)
{
    // (s + i p1, p2) is not legendrian, but d_p1 Phi1 and d_p2 Phi1 are parallel,
    // so the correction term vanishes and both formulas give 1
    const Foliation F(parse("s + i*p1"), parse("p2"), {0, 1}, {-1, 1}, {0, 1});
    for (const Param& u : parameter_grid(F, 4, 4, 4)) {
        EXPECT_NEAR(std::abs(legendrian_residual_grid(F, u)), 2.0 * std::abs(u.p1), 1e-14);
        EXPECT_DOUBLE_EQ(jac_via_A(F, u), 1.0);
        EXPECT_DOUBLE_EQ(jac_det(F, u), 1.0);
    }
}

TEST(Jacobian, TiltedNonLegendrianControlBreaksIdentity)
{
    // gap = Im(conj(d_p1 Phi1) d_p2 Phi1) times the legendrian residual = 2|p1|
    const Foliation F(parse("s + i*p1 + p2"), parse("p2"), {0, 1}, {-1, 1}, {0, 1});
    for (const Param& u : parameter_grid(F, 4, 6, 4)) {
        EXPECT_NEAR(std::abs(jac_via_A(F, u) - jac_det(F, u)), 2.0 * std::abs(u.p1), 1e-14);
        if (std::abs(u.p1) >= 0.05) {
            EXPECT_GE(std::abs(jac_via_A(F, u) - jac_det(F, u)), 0.1);
        }
    }
}

TEST(LeafLength, GammaLeafIsC)
{
    const Foliation G = oracle::gamma_foliation(2.0);
    const QField q = compose(QuadDiff::parse(oracle::kQ0), G);
    const QuadResult l = leaf_length(q, G, 0.5, 1.0, {0.0, 1e-11});
    EXPECT_LE(oracle::rel_err(l.value, oracle::annulus_leaf_length()), 1e-10);
}

TEST(LeafLength, DeltaLeafMatchesClosedForm)
{
    const double r = 2.0;
    const Foliation D = oracle::delta_foliation(r);
    const QField q = compose(QuadDiff(oracle::neg_q0()), D);
    for (double y : {0.2, 1.0, 2.5}) {
        const double l = leaf_length(q, D, y, 0.3, {0.0, 1e-11}).value;
        EXPECT_LE(oracle::rel_err(l, std::log(r) / std::pow(std::sin(y), 2.0 / 3.0)), 1e-10);
        // the same value as the field (t^2 + |z|^4)^(1/3) ln r / |z|^(4/3) at any point of the leaf
        const HPoint p = D.point({0.37, y, 0.3});
        const double z2 = std::norm(p.z);
        const double field = std::cbrt(p.t * p.t + z2 * z2) * std::log(r) / std::pow(z2, 2.0 / 3.0);
        EXPECT_LE(oracle::rel_err(l, field), 1e-8);
    }
}

TEST(LeafLength, VerticalLeafIsNotHorizontalForQ0)
{
    const Foliation D = oracle::delta_foliation(2.0);
    const QField q = compose(QuadDiff::parse(oracle::kQ0), D);
    EXPECT_EQ(oracle::error_kind([&] { (void)leaf_length(q, D, 1.0, 0.3); }), ErrorKind::NegativeQ);
}

TEST(Lambda, ConstantAlongLeavesForBothFamilies)
{
    const QuadDiff q0 = QuadDiff::parse(oracle::kQ0);
    const QuadDiff mq0(oracle::neg_q0());
    const Foliation G = oracle::gamma_foliation(2.0);
    const Foliation D = oracle::delta_foliation(2.0);
    const QField qg = compose(q0, G);
    const QField qd = compose(mq0, D);
    for (const Param& leaf : parameter_grid(G, 1, 4, 3)) {
        std::vector<double> lam;
        for (const Param& u : parameter_grid(G, 100, 1, 1)) lam.push_back(lambda_field(qg, G, {u.s, leaf.p1, leaf.p2}));
        const auto [lo, hi] = std::minmax_element(lam.begin(), lam.end());
        EXPECT_LE((*hi - *lo) / std::abs(*lo), 1e-8);
        // lambda = -1 for the horizontal family
        EXPECT_NEAR(lam.front(), -1.0, 1e-10);
    }
    for (const Param& leaf : parameter_grid(D, 1, 4, 3)) {
        std::vector<double> lam;
        for (const Param& u : parameter_grid(D, 100, 1, 1)) lam.push_back(lambda_field(qd, D, {u.s, leaf.p1, leaf.p2}));
        const auto [lo, hi] = std::minmax_element(lam.begin(), lam.end());
        EXPECT_LE((*hi - *lo) / std::abs(*lo), 1e-8);
    }
}

TEST(Lambda, MatchesVolumeElementIdentity)
{
    // |q|^2 J = sqrt|q| |d_s Phi1| lambda pointwise
    const Foliation G = oracle::gamma_foliation(2.0);
    const QField q = compose(QuadDiff::parse(oracle::kQ0), G);
    for (const Param& u : parameter_grid(G, 5, 3, 3)) {
        const FoliationJet j = G.jet(u);
        const double lhs = std::norm(q(u)) * jac_det(j);
        const double rhs = std::sqrt(std::abs(q(u))) * std::abs(j.f1_s) * lambda_field(q, G, u);
        EXPECT_LE(oracle::rel_err(lhs, rhs), 1e-8);
    }
}

TEST(Lambda, ShearIsOne)
{
    const Foliation F = oracle::shear_foliation(2, 1, 3);
    const QField q = compose(QuadDiff::parse("1"), F);
    EXPECT_DOUBLE_EQ(lambda_field(q, F, {0.5, 0.2, 0.1}), 1.0);
}

TEST(HorizontalMu2, Errors)
{
    EXPECT_EQ(oracle::error_kind([] { (void)horizontal_mu2({-1.0, 0.0}, {1.0, 0.0}); }), ErrorKind::NegativeQ);
    EXPECT_EQ(oracle::error_kind([] { (void)horizontal_mu2({0.0, 1.0}, {1.0, 0.0}); }), ErrorKind::NegativeQ);
    EXPECT_EQ(horizontal_mu2({1e-14, 0.0}, {1.0, 0.0}), 0.0);
    EXPECT_DOUBLE_EQ(horizontal_mu2({0.0, -1.0}, {1.0, 1.0} ), 2.0);
}
