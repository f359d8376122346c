#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "mftop/fourier.hpp"

using namespace mftop;
using Catch::Approx;

namespace {

// Independent scalar re-evaluation of the network formulas, straight from
// the materialized kernel matrix. Used as the oracle for the production
// evaluation path.
template <int Dim>
double ref_density(const FourierKernel<Dim>& kern, const Eigen::VectorXd& w, const Vec<Dim>& x) {
  double acc = 0.0;
  for (int j = 0; j < kern.size(); ++j) {
    double phase = 1.0;
    for (int a = 0; a < Dim; ++a) phase += x[a] * kern.K(a, j);
    acc += std::sin(phase) * w[j];
  }
  return 1.0 / (1.0 + std::exp(-acc));
}

template <int Dim>
Vec<Dim> ref_displacement(const FourierKernel<Dim>& kern,
                          const Eigen::Matrix<double, Eigen::Dynamic, Dim>& w,
                          const HardConstraint<Dim>& hc, const Vec<Dim>& x) {
  Vec<Dim> u = Vec<Dim>::Zero();
  for (int j = 0; j < kern.size(); ++j) {
    double phase = 1.0;
    for (int a = 0; a < Dim; ++a) phase += x[a] * kern.K(a, j);
    const double s = std::sin(phase);
    for (int o = 0; o < Dim; ++o) u[o] += s * w(j, o);
  }
  double m = 1.0;
  for (const auto& f : hc.faces) m *= hc.face_factor(x, f);
  return m * u;
}

template <int Dim>
CoordBatch<Dim> random_points(int n, std::uint64_t seed, double extent = 0.5) {
  CounterRng rng(seed);
  CoordBatch<Dim> b;
  b.points.resize(n, Dim);
  std::uint64_t c = 0;
  for (int i = 0; i < n; ++i)
    for (int a = 0; a < Dim; ++a) b.points(i, a) = rng.uniform(c++, -extent, extent);
  return b;
}

}  // namespace

TEST_CASE("kernel grids have the stated size and bounds") {
  auto k3 = FourierKernel<3>::build({16, 16, 16}, 35.0);
  CHECK(k3.size() == 4096);
  CHECK(k3.K.maxCoeff() == 35.0);
  CHECK(k3.K.minCoeff() == -35.0);

  auto k1 = FourierKernel<3>::build({1, 1, 1}, 0.0);
  REQUIRE(k1.size() == 1);
  CHECK(k1.K.col(0).norm() == 0.0);

  auto skew = FourierKernel<3>::build({24, 12, 12}, 45.0);
  CHECK(skew.size() == 3456);
  CHECK(skew.K.cwiseAbs().maxCoeff() == 45.0);

  auto den = FourierKernel<3>::build({16, 16, 16}, 35.0);
  auto disp = FourierKernel<3>::build({16, 16, 16}, 30.0);
  CHECK_THROWS_AS(check_kernel_ordering(den, disp), ConfigError);
  CHECK_NOTHROW(check_kernel_ordering(disp, den));
}

TEST_CASE("density forward matches an independent scalar re-evaluation") {
  auto kern = FourierKernel<3>::build({5, 4, 3}, 7.0);
  DensityNet<3> net(kern);
  net.init_weights(CounterRng(11));
  auto batch = random_points<3>(137, 5);
  auto rho = net.forward(batch);
  for (int i = 0; i < batch.size(); ++i) {
    const double ref = ref_density(kern, net.weights, batch.point(i));
    CHECK(std::abs(rho[i] - ref) < 1e-12);
    CHECK(rho[i] > 0.0);
    CHECK(rho[i] < 1.0);
  }

  net.weights.setZero();
  auto half = net.forward(batch);
  CHECK(half.isApproxToConstant(0.5));
}

TEST_CASE("density forward matches the oracle in 2D") {
  auto kern = FourierKernel<2>::build({6, 5}, 11.0);
  DensityNet<2> net(kern);
  net.init_weights(CounterRng(3));
  auto batch = random_points<2>(91, 17);
  auto rho = net.forward(batch);
  for (int i = 0; i < batch.size(); ++i)
    CHECK(std::abs(rho[i] - ref_density(kern, net.weights, batch.point(i))) < 1e-12);
}

TEST_CASE("hard constraint mask vanishes on fixed faces") {
  DomainSpec<3> domain = normalize_domain<3>(Vec<3>(1.0, 0.5, 0.2));
  BoundarySpec<3> bc;
  bc.fixed_faces.push_back({0, -1});
  auto hc = HardConstraint<3>::from_boundary(domain, bc, 20.0);

  CHECK(hc.mask(Vec<3>(-0.5, 0.1, 0.0)) == 0.0);
  // value at the domain center, evaluated directly from the formula
  const double expected = 2.0 * (1.0 / (1.0 + std::exp(-20.0 * 0.5)) - 0.5);
  CHECK(hc.mask(Vec<3>(0.0, 0.0, 0.0)) == Approx(expected));
  CHECK(expected == Approx(0.9999092).margin(1e-7));

  // two fixed faces: zero on either face, product elsewhere
  bc.fixed_faces.push_back({1, 1});
  auto hc2 = HardConstraint<3>::from_boundary(domain, bc, 20.0);
  CHECK(hc2.mask(Vec<3>(-0.5, 0.0, 0.0)) == 0.0);
  CHECK(hc2.mask(Vec<3>(0.0, 0.25, 0.0)) == 0.0);
  CHECK(hc2.mask(Vec<3>(0.4, -0.2, 0.0)) > 0.0);

  // asymptote toward 1 away from the face
  auto wide = HardConstraint<3>{{{0, -1}}, 20.0, Vec<3>(100.0, 100.0, 100.0)};
  CHECK(wide.mask(Vec<3>(90.0, 0.0, 0.0)) == Approx(1.0));
}

TEST_CASE("displacement forward applies the mask and matches the oracle") {
  DomainSpec<3> domain = normalize_domain<3>(Vec<3>(1.0, 0.5, 0.2));
  BoundarySpec<3> bc;
  bc.fixed_faces.push_back({0, -1});
  auto kern = FourierKernel<3>::build({4, 4, 4}, 9.0);
  DisplacementNet<3> net(kern, HardConstraint<3>::from_boundary(domain, bc, 20.0));
  net.init_weights(CounterRng(23));

  auto batch = random_points<3>(64, 31);
  // include a point exactly on the fixed face
  batch.points.row(0) << -0.5, 0.1, 0.05;
  auto u = net.forward(batch);
  CHECK(u.row(0).norm() == 0.0);
  for (int i = 0; i < batch.size(); ++i) {
    const Vec<3> ref = ref_displacement<3>(kern, net.weights, net.constraint, batch.point(i));
    CHECK((u.row(i).transpose() - ref).norm() < 1e-12);
  }

  net.weights.setZero();
  CHECK(net.forward(batch).norm() == 0.0);
}

TEST_CASE("analytic Jacobian matches central finite differences") {
  DomainSpec<3> domain = normalize_domain<3>(Vec<3>(1.0, 0.5, 0.2));
  BoundarySpec<3> bc;
  bc.fixed_faces.push_back({0, -1});
  bc.fixed_faces.push_back({2, 1});
  auto kern = FourierKernel<3>::build({4, 3, 3}, 8.0);
  DisplacementNet<3> net(kern, HardConstraint<3>::from_boundary(domain, bc, 20.0));
  net.init_weights(CounterRng(41));

  auto batch = random_points<3>(40, 77, 0.45);
  auto jac = net.jacobian(batch);
  const double h = 1e-5;
  for (int i = 0; i < batch.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      CoordBatch<3> plus = batch, minus = batch;
      plus.points(i, a) += h;
      minus.points(i, a) -= h;
      const Vec<3> up = ref_displacement<3>(kern, net.weights, net.constraint, plus.point(i));
      const Vec<3> um = ref_displacement<3>(kern, net.weights, net.constraint, minus.point(i));
      for (int o = 0; o < 3; ++o) {
        const double fd = (up[o] - um[o]) / (2.0 * h);
        const double an = jac(i, o * 3 + a);
        CHECK(std::abs(fd - an) < 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }

  DisplacementNet<3> zero(kern, net.constraint);
  CHECK(zero.jacobian(batch).norm() == 0.0);
}

TEST_CASE("single frequency column gives the hand Jacobian") {
  FourierKernel<3> kern;
  kern.grid_sizes = {1, 1, 1};
  kern.bound = 3.0;
  kern.K.resize(3, 1);
  kern.K << 1.3, -2.1, 0.7;
  for (int a = 0; a < 3; ++a) {
    kern.axis_freqs[a].resize(1);
    kern.axis_freqs[a][0] = kern.K(a, 0);
  }
  DomainSpec<3> domain = normalize_domain<3>(Vec<3>(1.0, 1.0, 1.0));
  DisplacementNet<3> net(kern, HardConstraint<3>::none(domain));
  net.weights << 0.4, -0.9, 1.7;

  CoordBatch<3> batch;
  batch.points.resize(1, 3);
  batch.points << 0.21, -0.35, 0.12;
  auto jac = net.jacobian(batch);
  const Vec<3> x = batch.point(0);
  const double phase = x.dot(kern.K.col(0)) + 1.0;
  for (int o = 0; o < 3; ++o)
    for (int a = 0; a < 3; ++a) {
      const double expect = kern.K(a, 0) * std::cos(phase) * net.weights(0, o);
      CHECK(jac(0, o * 3 + a) == Approx(expect).margin(1e-14));
    }
}

TEST_CASE("weight gradients match finite differences through value and Jacobian paths") {
  DomainSpec<3> domain = normalize_domain<3>(Vec<3>(1.0, 0.5, 0.2));
  BoundarySpec<3> bc;
  bc.fixed_faces.push_back({0, -1});
  auto kern = FourierKernel<3>::build({3, 3, 2}, 6.0);
  DisplacementNet<3> net(kern, HardConstraint<3>::from_boundary(domain, bc, 20.0));
  net.init_weights(CounterRng(59));
  auto batch = random_points<3>(50, 13, 0.45);

  // L = sum(u) + sum(coeff .* J) with fixed random coefficients
  CounterRng coeff_rng(97);
  PointMatrix<3> g_u(batch.size(), 3);
  RowMatrixXd g_jac(batch.size(), 9);
  std::uint64_t c = 0;
  for (int i = 0; i < batch.size(); ++i) {
    for (int o = 0; o < 3; ++o) g_u(i, o) = coeff_rng.uniform(c++, -1.0, 1.0);
    for (int j = 0; j < 9; ++j) g_jac(i, j) = coeff_rng.uniform(c++, -1.0, 1.0);
  }

  auto loss = [&](const DisplacementNet<3>& n) {
    auto u = n.forward(batch);
    auto jac = n.jacobian(batch);
    double l = 0.0;
    for (int i = 0; i < batch.size(); ++i) {
      l += g_u.row(i).dot(u.row(i));
      l += g_jac.row(i).dot(jac.row(i));
    }
    return l;
  };

  auto grad = net.backprop(batch, &g_u, &g_jac);
  const double h = 1e-5;
  CounterRng pick(7);
  int checked = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const int j = static_cast<int>(pick.uniform(2 * trial) * kern.size());
    const int o = static_cast<int>(pick.uniform(2 * trial + 1) * 3);
    DisplacementNet<3> plus = net, minus = net;
    plus.weights(j, o) += h;
    minus.weights(j, o) -= h;
    const double fd = (loss(plus) - loss(minus)) / (2.0 * h);
    const double an = grad(j, o);
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    CHECK(std::abs(fd - an) / denom < 1e-6);
    ++checked;
  }
  CHECK(checked >= 100);

  // zero upstream -> zero gradient
  PointMatrix<3> zero_u = PointMatrix<3>::Zero(batch.size(), 3);
  RowMatrixXd zero_j = RowMatrixXd::Zero(batch.size(), 9);
  CHECK(net.backprop(batch, &zero_u, &zero_j).norm() == 0.0);
}

TEST_CASE("density backprop matches finite differences") {
  auto kern = FourierKernel<2>::build({5, 4}, 9.0);
  DensityNet<2> net(kern);
  net.init_weights(CounterRng(71));
  auto batch = random_points<2>(60, 29);

  Eigen::VectorXd g_rho(batch.size());
  CounterRng coeff(5);
  for (int i = 0; i < batch.size(); ++i) g_rho[i] = coeff.uniform(i, -1.0, 1.0);

  auto loss = [&](const DensityNet<2>& n) { return g_rho.dot(n.forward(batch)); };
  auto grad = net.backprop(batch, g_rho);
  const double h = 1e-5;
  for (int j = 0; j < kern.size(); ++j) {
    DensityNet<2> plus = net, minus = net;
    plus.weights[j] += h;
    minus.weights[j] -= h;
    const double fd = (loss(plus) - loss(minus)) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(grad[j]), 1e-8});
    CHECK(std::abs(fd - grad[j]) / denom < 1e-6);
  }
}
