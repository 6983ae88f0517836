#include <gtest/gtest.h>

#include <cmath>

#include "heismod/modulus.hpp"
#include "test_support.hpp"

using namespace heismod;
using oracle::kPi;

namespace {

constexpr double a = 2.0, b1 = 1.5, b2 = 3.0;

QField shear_q(const Foliation& F, const char* text = "1") { return compose(QuadDiff::parse(text), F); }

double gamma_m4(double r) { return 4.0 * kPi * std::log(r) / std::pow(oracle::kAnnulusC, 3); }

} // namespace

TEST(Shear, ModulusVolumeAndConstantLengthPathAgree)
{
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    const ModulusReport m = modulus_m4(QuadDiff::parse("1"), F);
    EXPECT_NEAR(m.modulus, b1 * b2 / (a * a * a), 1e-12);
    EXPECT_NEAR(m.leaf_length.mean, a, 1e-13);
    ASSERT_TRUE(m.constant_length_modulus);
    EXPECT_NEAR(*m.constant_length_modulus, m.modulus, 1e-13);
    EXPECT_NEAR(q_volume(shear_q(F), F).value, a * b1 * b2, 1e-12);
    EXPECT_NEAR(modulus_constant_length(shear_q(F), F).modulus, b1 * b2 / (a * a * a), 1e-12);
    EXPECT_EQ(m.residual_max, 0.0);
}

TEST(Shear, ZeroQHasZeroVolumeAndNoDensity)
{
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    EXPECT_EQ(q_volume(shear_q(F, "0"), F).value, 0.0);
    EXPECT_EQ(oracle::error_kind([&] { (void)extremal_density(shear_q(F, "0"), F); }), ErrorKind::ZeroLeafLength);
}

TEST(Shear, ExtremalDensityIsOneOverA)
{
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    const Density rho = extremal_density(shear_q(F), F);
    for (const Param& u : parameter_grid(F, 3, 3, 3)) EXPECT_NEAR(rho(u), 1.0 / a, 1e-14);
    const AdmissibilityResult adm = admissibility_check(rho, F, 16);
    EXPECT_EQ(adm.leaves.size(), 16u);
    for (const LeafIntegral& l : adm.leaves) EXPECT_NEAR(l.value, 1.0, 1e-13);
    EXPECT_NEAR(density_energy(rho, F).value, b1 * b2 / (a * a * a), 1e-12);
}

TEST(Shear, HalfDensityIsInadmissible)
{
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    const AdmissibilityResult adm = admissibility_check(extremal_density(shear_q(F), F).scaled(0.5), F, 9);
    EXPECT_NEAR(adm.min_integral, 0.5, 1e-13);
    EXPECT_FALSE(adm.admissible());
    EXPECT_EQ(density_energy(Density([](const Param&) { return 0.0; }), F).value, 0.0);
}

TEST(Shear, PerturbationsCostEnergy)
{
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    const ProbeResult zero = perturbation_probe(shear_q(F), F, parse("cos(s)"), 0.0);
    EXPECT_NEAR(zero.energy, zero.reference_modulus, 1e-13);
    for (double eps : {0.05, 0.1, 0.2}) {
        const ProbeResult p = perturbation_probe(shear_q(F), F, parse("cos(s)*(1 + p1)"), eps);
        EXPECT_GT(p.gap(), 0.0) << eps;
        EXPECT_GT(p.min_normalizer, 0.0);
    }
}

TEST(Shear, PerturbationPreconditions)
{
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    EXPECT_EQ(oracle::error_kind([&] { (void)perturbation_probe(shear_q(F), F, parse("cos(s)"), 5.0); }),
              ErrorKind::PreconditionFailed);
    EXPECT_EQ(oracle::error_kind([&] { (void)perturbation_probe(shear_q(F), F, parse("z"), 0.1); }),
              ErrorKind::VariableMismatch);
}

TEST(Preconditions, NonLegendrianFoliation)
{
    const Foliation F(parse("s + i*p1"), parse("p2"), {0, 1}, {0.5, 1}, {0, 1});
    EXPECT_EQ(oracle::error_kind([&] { (void)modulus_m4(QuadDiff::parse("1"), F); }), ErrorKind::PreconditionFailed);
}

TEST(Preconditions, VerticalLeavesAreNotHorizontal)
{
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    EXPECT_EQ(oracle::error_kind([&] { (void)modulus_m4(QuadDiff::parse("-1"), F); }), ErrorKind::NotHorizontal);
}

TEST(Preconditions, B2SpotCheckAndOverride)
{
    // q = 1 + t^2 is real-positive, so every leaf is horizontal, but B2 q = -6i z t (1 + t^2)
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    const QuadDiff q = QuadDiff::parse("1 + t^2");
    EXPECT_EQ(oracle::error_kind([&] { (void)modulus_m4(q, F); }), ErrorKind::PreconditionFailed);
    ModulusOptions o;
    o.override_b2_check = true;
    const ModulusReport m = modulus_m4(q, F, o);
    EXPECT_TRUE(m.residual_check_overridden);
    ASSERT_TRUE(m.residual_max);
    EXPECT_GT(*m.residual_max, o.b2_tol);
    EXPECT_GT(m.modulus, 0.0);
}

TEST(Annulus, HorizontalFamilyModulus)
{
    const Foliation G = oracle::gamma_foliation(2.0);
    const ModulusReport m = modulus_m4(QuadDiff::parse(oracle::kQ0), G);
    EXPECT_LE(oracle::rel_err(m.modulus, oracle::kM4GammaR2), 1e-6);
    EXPECT_LE(oracle::rel_err(m.modulus, gamma_m4(2.0)), 1e-6);
    EXPECT_GE(m.error_estimate, 0.0);
    EXPECT_LE(m.error_estimate, 1e-6 * m.modulus);
    EXPECT_LE(oracle::rel_err(m.leaf_length.mean, oracle::kAnnulusC), 1e-9);
    ASSERT_TRUE(m.consistency_gap);
    EXPECT_LE(*m.consistency_gap / m.modulus, 1e-6);
    EXPECT_LE(oracle::rel_err(m.volume, oracle::kVolR2), 1e-6);
}

TEST(Annulus, VerticalFamilyModulus)
{
    const Foliation D = oracle::delta_foliation(2.0);
    const ModulusReport m = modulus_m4(QuadDiff(oracle::neg_q0()), D);
    EXPECT_LE(oracle::rel_err(m.modulus, oracle::kM4DeltaR2), 1e-6);
    EXPECT_LE(oracle::rel_err(m.modulus, kPi * kPi / std::pow(std::log(2.0), 3)), 1e-6);
    EXPECT_FALSE(m.constant_length_modulus);
    EXPECT_GT(m.leaf_length.relative_spread(), 1.0);
}

TEST(Annulus, VerticalFamilyHasNoConstantLength)
{
    const Foliation D = oracle::delta_foliation(2.0);
    EXPECT_EQ(oracle::error_kind([&] { (void)modulus_constant_length(QuadDiff(oracle::neg_q0()), D); }),
              ErrorKind::ConstantLengthViolated);
}

TEST(Annulus, VolumeForSeveralRadii)
{
    const QuadDiff q0 = QuadDiff::parse(oracle::kQ0);
    for (double r : {1.5, 2.0, 4.0}) {
        const double vol = 4.0 * kPi * oracle::kAnnulusC * std::log(r);
        EXPECT_LE(oracle::rel_err(q_volume(q0, oracle::gamma_foliation(r)).value, vol), 1e-6) << r;
    }
}

TEST(Annulus, ConstantLengthPathForSeveralRadii)
{
    const QuadDiff q0 = QuadDiff::parse(oracle::kQ0);
    for (double r : {1.5, 4.0}) {
        const ModulusReport m = modulus_constant_length(q0, oracle::gamma_foliation(r));
        EXPECT_LE(oracle::rel_err(m.modulus, gamma_m4(r)), 1e-6) << r;
    }
}

TEST(Annulus, VerticalModulusScalesAsInverseCubeOfLogRadius)
{
    for (double r : {1.5, 4.0}) {
        const ModulusReport m = modulus_m4(QuadDiff(oracle::neg_q0()), oracle::delta_foliation(r));
        EXPECT_LE(oracle::rel_err(m.modulus, kPi * kPi / std::pow(std::log(r), 3)), 1e-6) << r;
    }
}

TEST(Annulus, ExtremalDensityEnergyAndAdmissibility)
{
    const Foliation G = oracle::gamma_foliation(2.0);
    const QField q = compose(QuadDiff::parse(oracle::kQ0), G);
    const Density rho = extremal_density(q, G);
    const AdmissibilityResult adm = admissibility_check(rho, G, 16);
    for (const LeafIntegral& l : adm.leaves) EXPECT_NEAR(l.value, 1.0, 1e-8);
    const QuadResult e = density_energy(rho, G);
    EXPECT_LE(oracle::rel_err(e.value, oracle::kM4GammaR2), 1e-6);
    // rho_0 = sqrt|q0| / C
    const Param u{0.8, 0.4, 2.0};
    EXPECT_LE(oracle::rel_err(rho(u), std::sqrt(std::abs(q(u))) / oracle::kAnnulusC), 1e-9);
}

TEST(Annulus, CosinePerturbationIsStrictlyWorse)
{
    const Foliation G = oracle::gamma_foliation(2.0);
    const ProbeResult p = perturbation_probe(compose(QuadDiff::parse(oracle::kQ0), G), G, parse("cos(s)"), 0.1);
    EXPECT_GT(p.gap(), p.energy_error + p.reference_error);
}

TEST(Invariants, ScalingLeavesModulusFixed)
{
    const Foliation D = oracle::delta_foliation(2.0);
    const double m0 = modulus_m4(QuadDiff(oracle::neg_q0()), D).modulus;
    for (double c : {0.5, 2.0, 10.0}) {
        const QuadDiff qc(cst(c) * oracle::neg_q0());
        EXPECT_LE(oracle::rel_err(modulus_m4(qc, D).modulus, m0), 1e-8) << c;
    }
    const Foliation F = oracle::shear_foliation(a, b1, b2);
    for (double c : {0.5, 2.0, 10.0}) {
        const QField qc = compose(QuadDiff(cst(c)), F);
        EXPECT_LE(oracle::rel_err(q_volume(qc, F).value, c * c * a * b1 * b2), 1e-12);
        EXPECT_LE(oracle::rel_err(leaf_length(qc, F, 0.5, 0.5).value, std::sqrt(c) * a), 1e-12);
    }
}

TEST(Invariants, MonotoneRefinement)
{
    const Foliation D = oracle::delta_foliation(2.0);
    ModulusOptions o;
    double prev_value = 0.0, prev_err = 0.0;
    for (double tol : {1e-6, 5e-7, 2.5e-7, 1.25e-7}) {
        o.tol = {0.0, tol};
        const ModulusReport m = modulus_m4(QuadDiff(oracle::neg_q0()), D, o);
        if (prev_value != 0.0) {
            EXPECT_LE(std::abs(m.modulus - prev_value), m.error_estimate + prev_err);
        }
        prev_value = m.modulus;
        prev_err = m.error_estimate;
    }
}
