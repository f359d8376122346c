#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "mftop/fea.hpp"

using namespace mftop;
using Catch::Approx;

TEST_CASE("element stiffness is symmetric with rigid-body nullspace") {
  for (double nu : {0.0, 0.3, 0.45}) {
    auto ke3 = detail::element_stiffness_unit<3>(nu, 0.025);
    CHECK((ke3 - ke3.transpose()).norm() < 1e-12 * ke3.norm());
    // rigid translation in each direction produces no force
    for (int d = 0; d < 3; ++d) {
      Eigen::VectorXd t = Eigen::VectorXd::Zero(24);
      for (int n = 0; n < 8; ++n) t[n * 3 + d] = 1.0;
      CHECK((ke3 * t).norm() < 1e-12 * ke3.norm());
    }
    auto ke2 = detail::element_stiffness_unit<2>(nu, 0.025);
    CHECK((ke2 - ke2.transpose()).norm() < 1e-12 * ke2.norm());
    for (int d = 0; d < 2; ++d) {
      Eigen::VectorXd t = Eigen::VectorXd::Zero(8);
      for (int n = 0; n < 4; ++n) t[n * 2 + d] = 1.0;
      CHECK((ke2 * t).norm() < 1e-12 * ke2.norm());
    }
  }
}

TEST_CASE("axial column reproduces the bar solution exactly at nu = 0") {
  // nu = 0 and uniform axial traction give a constant-stress state the
  // trilinear element represents exactly: tip displacement = T L / E.
  auto domain = normalize_domain<3>(Vec<3>(0.2, 0.2, 1.0));
  BoundarySpec<3> bc;
  bc.fixed_faces.push_back({2, -1});
  TractionPatch<3> patch;
  patch.center = Vec<3>(0.0, 0.0, 0.5);
  patch.half_size = Vec<3>(0.1, 0.1, 0.0);
  patch.traction = Vec<3>(0.0, 0.0, 2.5);
  bc.tractions.push_back(patch);
  Material mat{1000.0, 0.0};
  auto model = make_voxel_model<3>(domain, bc, mat, {2, 2, 10});
  auto sol = assemble_and_solve(model);
  const double expect = 2.5 * 1.0 / 1000.0;  // T L / E
  double tip = 0.0;
  for (long n = 0; n < model.num_nodes(); ++n) tip = std::max(tip, sol.u[n * 3 + 2]);
  CHECK(tip == Approx(expect).epsilon(1e-6));
  CHECK(sol.residual < 1e-8);

  // work identities
  CHECK(sol.compliance == Approx(2.0 * sol.strain_energy).epsilon(1e-9));

  // zero load -> zero displacement
  auto quiet = model;
  quiet.load.setZero();
  auto qsol = assemble_and_solve(quiet);
  CHECK(qsol.u.norm() == 0.0);
}

TEST_CASE("fixed-free system and singular detection") {
  auto domain = normalize_domain<3>(Vec<3>(1.0, 0.5, 0.25));
  BoundarySpec<3> bc;
  TractionPatch<3> patch;
  patch.center = Vec<3>(0.5, 0.0, 0.0);
  patch.half_size = Vec<3>(0.0, 0.125, 0.0625);
  patch.traction = Vec<3>(0.0, -1.0, 0.0);
  bc.tractions.push_back(patch);
  Material mat{1000.0, 0.3};
  auto model = make_voxel_model<3>(domain, bc, mat, {4, 2, 1});
  CHECK_THROWS_AS(assemble_and_solve(model), NumericError);  // no fixity
}

TEST_CASE("compliance identities on a SIMP-interpolated cantilever") {
  auto domain = normalize_domain<3>(Vec<3>(1.0, 0.5, 0.25));
  BoundarySpec<3> bc;
  bc.fixed_faces.push_back({0, -1});
  TractionPatch<3> patch;
  patch.center = Vec<3>(0.5, 0.0, 0.0);
  patch.half_size = Vec<3>(0.0, 0.0625, 0.03125);
  patch.traction = Vec<3>(0.0, -12.8, 0.0);
  bc.tractions.push_back(patch);
  Material mat{1000.0, 0.3};
  auto model = make_voxel_model<3>(domain, bc, mat, {8, 4, 2});
  CounterRng rng(7);
  for (long e = 0; e < model.num_elements(); ++e) model.rho[e] = rng.uniform(e, 0.2, 1.0);
  auto sol = assemble_and_solve(model);
  CHECK(sol.residual < 1e-8);
  CHECK(sol.compliance == Approx(2.0 * sol.strain_energy).epsilon(1e-9));
  CHECK(sol.compliance == Approx(model.load.dot(sol.u)).epsilon(1e-12));

  // u^T K u == f^T u via a fresh stiffness application
  Eigen::VectorXd ku;
  detail::apply_stiffness(model, sol.u, ku);
  CHECK(sol.u.dot(ku) == Approx(sol.compliance).epsilon(1e-9));

  // uniform rho = 0.5 scales compliance of uniform rho = 1 by 8 (1/rho^3)
  model.rho.setConstant(1.0);
  auto solid = assemble_and_solve(model);
  model.rho.setConstant(0.5);
  auto half = assemble_and_solve(model);
  CHECK(half.compliance == Approx(8.0 * solid.compliance).epsilon(1e-8));
}

TEST_CASE("density filter preserves constants and volume") {
  DensityFilter<2> filter({12, 7}, 1.5);
  Eigen::VectorXd ones = Eigen::VectorXd::Ones(12 * 7);
  CHECK(filter.forward(ones).isApprox(ones, 1e-12));
  CounterRng rng(11);
  Eigen::VectorXd x(12 * 7);
  for (int i = 0; i < x.size(); ++i) x[i] = rng.uniform(i);
  auto fx = filter.forward(x);
  CHECK(fx.minCoeff() >= x.minCoeff() - 1e-12);
  CHECK(fx.maxCoeff() <= x.maxCoeff() + 1e-12);
  // chain is the adjoint: <filter(x), y> == <x, chain(y)>
  Eigen::VectorXd y(12 * 7);
  for (int i = 0; i < y.size(); ++i) y[i] = rng.uniform(1000 + i, -1.0, 1.0);
  CHECK(fx.dot(y) == Approx(x.dot(filter.chain(y))).epsilon(1e-12));
}

TEST_CASE("volume-matched binary thresholding") {
  // linear ramp at V* = 0.5 thresholds at the median
  Eigen::VectorXd ramp(100);
  for (int i = 0; i < 100; ++i) ramp[i] = (i + 0.5) / 100.0;
  auto bin = threshold_binary(ramp, 0.5);
  CHECK(bin.sum() == Approx(50.0));
  for (int i = 0; i < 100; ++i) CHECK(bin[i] == (ramp[i] > 0.5 ? 1.0 : 0.0));

  // already binary at the target: unchanged
  auto again = threshold_binary(bin, 0.5);
  CHECK(again == bin);

  // half-element guarantee
  auto bin3 = threshold_binary(ramp, 0.333);
  CHECK(std::abs(bin3.mean() - 0.333) <= 0.5 / 100.0);

  CHECK_THROWS_AS(threshold_binary(Eigen::VectorXd::Constant(10, 0.4), 0.5), ConfigError);
}

TEST_CASE("2D SIMP optimization on a small cantilever") {
  auto domain = normalize_domain<2>(Vec<2>(1.0, 0.5));
  BoundarySpec<2> bc;
  bc.fixed_faces.push_back({0, -1});
  TractionPatch<2> patch;
  patch.center = Vec<2>(0.5, 0.0);
  patch.half_size = Vec<2>(0.0, 0.025);
  patch.traction = Vec<2>(0.0, -2.0);
  bc.tractions.push_back(patch);
  Material mat{1000.0, 0.3};
  auto model = make_voxel_model<2>(domain, bc, mat, {20, 10});

  SimpOptions opts;
  opts.max_iters = 25;
  auto result = simp_optimize(model, 0.5, opts);
  REQUIRE(result.iterations >= 1);
  // volume constraint held at every iterate
  for (double v : result.volume_history) CHECK(v == Approx(0.5).margin(2e-4));
  // compliance decreases overall
  CHECK(result.compliance_history.back() < result.compliance_history.front());
  CHECK(result.rho.minCoeff() >= model.rho_min - 1e-12);
  CHECK(result.rho.maxCoeff() <= 1.0 + 1e-12);

  // OC fixed point: V* -> 1 is rejected as out of range
  CHECK_THROWS_AS(simp_optimize(model, 1.0, opts), ConfigError);
}

TEST_CASE("validate_field reports continuous and binary compliance") {
  auto domain = normalize_domain<3>(Vec<3>(1.0, 0.5, 0.25));
  BoundarySpec<3> bc;
  bc.fixed_faces.push_back({0, -1});
  TractionPatch<3> patch;
  patch.center = Vec<3>(0.5, 0.0, 0.0);
  patch.half_size = Vec<3>(0.0, 0.0625, 0.03125);
  patch.traction = Vec<3>(0.0, -12.8, 0.0);
  bc.tractions.push_back(patch);
  Material mat{1000.0, 0.3};

  // uniform rho = 1 equals the solid compliance; rho = 0.5 is 8x stiffer load path
  DensityEvaluator<3> solid = constant_density<3>(1.0);
  auto model = make_voxel_model<3>(domain, bc, mat, {8, 4, 2});
  auto ref = assemble_and_solve(model);

  // a graded field: denser near the support
  DensityEvaluator<3> graded = [](const CoordBatch<3>& b) {
    Eigen::VectorXd rho(b.size());
    for (int i = 0; i < b.size(); ++i) rho[i] = 0.9 - 0.6 * (b.points(i, 0) + 0.5);
    return rho;
  };
  auto report = validate_field<3>(graded, domain, bc, mat, {8, 4, 2}, 0.6);
  CHECK(report.compliance_ftu == Approx(2.0 * report.strain_energy).epsilon(1e-9));
  CHECK(report.residual < 1e-8);
  CHECK(report.binary_volume_fraction == Approx(0.6).margin(0.5 / 64.0));
  CHECK(report.compliance_ftu > ref.compliance);  // less material than solid
  CHECK(report.binary_compliance_ftu > 0.0);
}
