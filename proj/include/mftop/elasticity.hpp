#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "mftop/common.hpp"
#include "mftop/fourier.hpp"
#include "mftop/geometry.hpp"

namespace mftop {

struct Material {
  double youngs_modulus = 1.0;  // N/mm^2
  double poisson_ratio = 0.3;

  void validate() const {
    if (!(youngs_modulus > 0.0)) throw ConfigError("Young's modulus must be positive");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5))
      throw ConfigError("Poisson's ratio must lie in [0, 0.5)");
  }

  double mu() const { return youngs_modulus / (2.0 * (1.0 + poisson_ratio)); }
  double lambda() const {
    return youngs_modulus * poisson_ratio /
           ((1.0 + poisson_ratio) * (1.0 - 2.0 * poisson_ratio));
  }
};

// Lame parameters entering the energy density; 2D problems use plane
// stress, so lambda is replaced by 2*lambda*mu / (lambda + 2*mu).
template <int Dim>
struct LameParams {
  double mu = 0.0;
  double lambda = 0.0;

  static LameParams from(const Material& mat) {
    LameParams p;
    p.mu = mat.mu();
    const double lam = mat.lambda();
    if constexpr (Dim == 2)
      p.lambda = 2.0 * lam * p.mu / (lam + 2.0 * p.mu);
    else
      p.lambda = lam;
    return p;
  }
};

// SIMP stiffness interpolation E_eff = E * rho^3. The floor keeps voxel FEA
// systems nonsingular; the neural path passes floor = 0 since the sigmoid
// never reaches zero.
inline double simp_modulus(double rho, const Material& mat, double floor = 0.0) {
  const double r = std::max(rho, floor);
  return mat.youngs_modulus * r * r * r;
}

// Small-strain tensor from a displacement Jacobian: eps = (J + J^T) / 2.
template <int Dim>
Eigen::Matrix<double, Dim, Dim> strain(const Eigen::Matrix<double, Dim, Dim>& jacobian) {
  return 0.5 * (jacobian + jacobian.transpose());
}

// Solid-material strain energy density psi = mu eps:eps + lambda tr(eps)^2 / 2
// from symmetric-storage entries (diagonal first, then upper triangle).
template <int Dim>
double energy_density_sym(const double* eps, const LameParams<Dim>& lame) {
  double frob = 0.0, tr = 0.0;
  for (int o = 0; o < Dim; ++o) {
    frob += eps[o] * eps[o];
    tr += eps[o];
  }
  for (int s = Dim; s < kSymSize<Dim>; ++s) frob += 2.0 * eps[s] * eps[s];
  return lame.mu * frob + 0.5 * lame.lambda * tr * tr;
}

// Monte-Carlo internal strain energy, Eq.-style: (V/N) sum rho^3 psi_i.
template <int Dim>
double internal_strain_energy(const RowMatrixXd& strains, const Eigen::VectorXd& densities,
                              const Material& mat, double domain_measure) {
  if (strains.rows() != densities.size()) throw ConfigError("strain/density length mismatch");
  if (strains.rows() < 1) throw ConfigError("empty sample set");
  const LameParams<Dim> lame = LameParams<Dim>::from(mat);
  const long n = strains.rows();
  double acc = 0.0;
  for (long i = 0; i < n; ++i) {
    const double r = densities[i];
    acc += r * r * r * energy_density_sym<Dim>(strains.row(i).data(), lame);
  }
  return domain_measure / double(n) * acc;
}

// Monte-Carlo external work: sum over patches of (A/N_b) sum T.u_i.
template <int Dim>
double external_work(const PointMatrix<Dim>& displacements, const CoordBatch<Dim>& traction_batch,
                     const BoundarySpec<Dim>& bc) {
  if (traction_batch.patch_ranges.size() != bc.tractions.size())
    throw ConfigError("traction batch does not match boundary spec");
  if (traction_batch.size() == 0) throw ConfigError("empty traction batch");
  double ew = 0.0;
  for (std::size_t p = 0; p < bc.tractions.size(); ++p) {
    const auto [begin, end] = traction_batch.patch_ranges[p];
    const Vec<Dim> t = bc.tractions[p].traction;
    double acc = 0.0;
    for (int i = begin; i < end; ++i) acc += displacements.row(i).dot(t.transpose());
    ew += bc.tractions[p].area() / double(end - begin) * acc;
  }
  return ew;
}

struct EnergyReport {
  double ise = 0.0;     // internal strain energy, N mm
  double ew = 0.0;      // external work, N mm
  double l_disp = 0.0;  // potential energy ISE - EW
  std::vector<double> point_energy;  // solid psi per interior point
};

// Callable giving densities for a batch: either a DensityNet forward or a
// constant initial field.
template <int Dim>
using DensityEvaluator = std::function<Eigen::VectorXd(const CoordBatch<Dim>&)>;

template <int Dim>
DensityEvaluator<Dim> constant_density(double rho) {
  return [rho](const CoordBatch<Dim>& b) {
    return Eigen::VectorXd::Constant(b.size(), rho).eval();
  };
}

template <int Dim>
DensityEvaluator<Dim> net_density(const DensityNet<Dim>& net) {
  return [&net](const CoordBatch<Dim>& b) { return net.forward(b); };
}

// ---------------------------------------------------------------------------
// Potential energy L_disp = ISE - EW of a displacement net over sampled
// batches, with the exact gradient w.r.t. the trainable weights. When the
// density net shares the displacement kernel, pass it as `den` so the sweep
// evaluates both fields from one feature pass; otherwise supply a generic
// evaluator.
// ---------------------------------------------------------------------------
template <int Dim, class Scalar = double>
EnergyReport potential_energy(const DisplacementNet<Dim>& disp, const DensityNet<Dim>* den,
                              const DensityEvaluator<Dim>* density_eval,
                              const CoordBatch<Dim>& interior, const CoordBatch<Dim>& traction,
                              const BoundarySpec<Dim>& bc, const Material& mat,
                              double domain_measure,
                              Eigen::Matrix<double, Eigen::Dynamic, Dim>* grad_w,
                              std::vector<double>* point_energy = nullptr) {
  const LameParams<Dim> lame = LameParams<Dim>::from(mat);
  const int n = interior.size();
  const double vol_w = domain_measure / double(n);

  Eigen::VectorXd rho_ext;
  const bool fused_density = den != nullptr && den->kernel.same_settings(disp.kernel);
  if (!fused_density) {
    if (den)
      rho_ext = den->forward(interior);
    else if (density_eval)
      rho_ext = (*density_eval)(interior);
    else
      throw ConfigError("potential_energy requires a density source");
  }

  EnergyReport report;
  if (point_energy) point_energy->assign(n, 0.0);

  Eigen::Matrix<double, Eigen::Dynamic, Dim> grad_interior;
  double ise = 0.0;
  coupled_sweep_impl<Dim, Scalar>(
      fused_density ? den : nullptr, &disp, interior,
      [&](const SweepChunk<Dim>& c) {
        double chunk_ise = 0.0;
        for (int i = 0; i < c.count; ++i) {
          const double rho = fused_density ? c.rho[i] : rho_ext[c.offset + i];
          const double* eps = c.strain->row(i).data();
          const double psi = energy_density_sym<Dim>(eps, lame);
          const double r3 = rho * rho * rho;
          chunk_ise += r3 * psi;
          if (point_energy) (*point_energy)[c.offset + i] = psi;
          if (c.g_strain) {
            // dL/deps = (V/N) rho^3 (2 mu eps + lambda tr(eps) I)
            double tr = 0.0;
            for (int o = 0; o < Dim; ++o) tr += eps[o];
            const double w = vol_w * r3;
            for (int o = 0; o < Dim; ++o)
              c.g_strain[i * kSymSize<Dim> + o] = w * (2.0 * lame.mu * eps[o] + lame.lambda * tr);
            for (int s = Dim; s < kSymSize<Dim>; ++s)
              c.g_strain[i * kSymSize<Dim> + s] = w * 2.0 * lame.mu * eps[s];
          }
        }
        ise += chunk_ise;
      },
      nullptr, grad_w ? &grad_interior : nullptr);
  report.ise = vol_w * ise;

  // External-work pass over the traction batch; its points also appear in
  // the interior batch, where their strain contributions were counted.
  double ew = 0.0;
  Eigen::Matrix<double, Eigen::Dynamic, Dim> grad_traction;
  coupled_sweep_impl<Dim, Scalar>(
      nullptr, &disp, traction,
      [&](const SweepChunk<Dim>& c) {
        for (int i = 0; i < c.count; ++i) {
          const int row = c.offset + i;
          // locate this row's patch
          for (std::size_t p = 0; p < traction.patch_ranges.size(); ++p) {
            const auto [begin, end] = traction.patch_ranges[p];
            if (row < begin || row >= end) continue;
            const Vec<Dim> t = bc.tractions[p].traction;
            const double w = bc.tractions[p].area() / double(end - begin);
            ew += w * c.u->row(i).dot(t.transpose());
            if (c.g_u)
              for (int o = 0; o < Dim; ++o) c.g_u[i * Dim + o] = -w * t[o];
            break;
          }
        }
      },
      nullptr, grad_w ? &grad_traction : nullptr);
  report.ew = ew;
  report.l_disp = report.ise - report.ew;
  if (grad_w) *grad_w = grad_interior + grad_traction;
  if (point_energy) report.point_energy = *point_energy;
  return report;
}

}  // namespace mftop
