#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "mftop/common.hpp"
#include "mftop/elasticity.hpp"
#include "mftop/geometry.hpp"

namespace mftop {

namespace detail {

// Voigt strain size (engineering shear entries).
template <int Dim>
inline constexpr int kVoigt = Dim == 2 ? 3 : 6;

// Bilinear/trilinear element stiffness for a cube element of side h and
// unit Young's modulus, 2-point Gauss quadrature per axis. 2D is plane
// stress with unit thickness. Local nodes are ordered lexicographically,
// axis 0 fastest.
template <int Dim>
Eigen::MatrixXd element_stiffness_unit(double nu, double h) {
  constexpr int nn = 1 << Dim;           // nodes per element
  constexpr int nd = nn * Dim;           // dofs per element
  constexpr int nv = kVoigt<Dim>;
  Eigen::Matrix<double, nv, nv> D;
  D.setZero();
  if constexpr (Dim == 2) {
    const double f = 1.0 / (1.0 - nu * nu);
    D(0, 0) = D(1, 1) = f;
    D(0, 1) = D(1, 0) = nu * f;
    D(2, 2) = 0.5 * (1.0 - nu) * f;
  } else {
    const double c = 1.0 / ((1.0 + nu) * (1.0 - 2.0 * nu));
    for (int i = 0; i < 3; ++i) {
      D(i, i) = (1.0 - nu) * c;
      for (int j = 0; j < 3; ++j)
        if (i != j) D(i, j) = nu * c;
    }
    for (int i = 3; i < 6; ++i) D(i, i) = 0.5 / (1.0 + nu);
  }

  Eigen::MatrixXd ke = Eigen::MatrixXd::Zero(nd, nd);
  const double gp[2] = {-1.0 / std::sqrt(3.0), 1.0 / std::sqrt(3.0)};
  const double det_j = std::pow(0.5 * h, Dim);
  const double inv_j = 2.0 / h;
  int gauss_total = 1 << Dim;
  for (int g = 0; g < gauss_total; ++g) {
    std::array<double, Dim> xi;
    for (int a = 0; a < Dim; ++a) xi[a] = gp[(g >> a) & 1];
    // dN/dx for each local node
    Eigen::Matrix<double, Dim, nn> dndx;
    for (int node = 0; node < nn; ++node) {
      for (int a = 0; a < Dim; ++a) {
        double v = 1.0;
        for (int b = 0; b < Dim; ++b) {
          const int bit = (node >> b) & 1;
          const double s = bit ? 1.0 : -1.0;
          if (b == a)
            v *= 0.5 * s;
          else
            v *= 0.5 * (1.0 + s * xi[b]);
        }
        dndx(a, node) = v * inv_j;
      }
    }
    Eigen::Matrix<double, nv, nd> B;
    B.setZero();
    for (int node = 0; node < nn; ++node) {
      const int col = node * Dim;
      if constexpr (Dim == 2) {
        B(0, col + 0) = dndx(0, node);
        B(1, col + 1) = dndx(1, node);
        B(2, col + 0) = dndx(1, node);
        B(2, col + 1) = dndx(0, node);
      } else {
        B(0, col + 0) = dndx(0, node);
        B(1, col + 1) = dndx(1, node);
        B(2, col + 2) = dndx(2, node);
        B(3, col + 1) = dndx(2, node);  // gamma_yz
        B(3, col + 2) = dndx(1, node);
        B(4, col + 0) = dndx(2, node);  // gamma_xz
        B(4, col + 2) = dndx(0, node);
        B(5, col + 0) = dndx(1, node);  // gamma_xy
        B(5, col + 1) = dndx(0, node);
      }
    }
    ke.noalias() += B.transpose() * D * B * det_j;
  }
  return ke;
}

}  // namespace detail

// Regular voxel FEA model. Element (and node) indices are lexicographic
// with axis 0 fastest, matching constant_grid ordering.
template <int Dim>
struct VoxelModel {
  std::array<int, Dim> cells{};
  double h = 0.0;  // cube edge length, mm
  Material material;
  double rho_min = 1e-4;
  Eigen::VectorXd rho;        // per element
  std::vector<char> fixed;    // per dof
  Eigen::VectorXd load;       // per dof
  Eigen::MatrixXd ke_unit;    // unit-E element stiffness

  long num_elements() const {
    long n = 1;
    for (int a = 0; a < Dim; ++a) n *= cells[a];
    return n;
  }
  long num_nodes() const {
    long n = 1;
    for (int a = 0; a < Dim; ++a) n *= cells[a] + 1;
    return n;
  }
  long num_dofs() const { return num_nodes() * Dim; }

  long node_index(const std::array<int, Dim>& c) const {
    long idx = 0;
    for (int a = Dim - 1; a >= 0; --a) idx = idx * (cells[a] + 1) + c[a];
    return idx;
  }
  long element_index(const std::array<int, Dim>& c) const {
    long idx = 0;
    for (int a = Dim - 1; a >= 0; --a) idx = idx * cells[a] + c[a];
    return idx;
  }

  // Global dof indices of an element's nodes (lexicographic local order).
  void element_dofs(long e, std::array<long, (1 << Dim) * Dim>& dofs) const {
    std::array<int, Dim> c;
    long rem = e;
    for (int a = 0; a < Dim; ++a) {
      c[a] = static_cast<int>(rem % cells[a]);
      rem /= cells[a];
    }
    for (int node = 0; node < (1 << Dim); ++node) {
      std::array<int, Dim> nc;
      for (int a = 0; a < Dim; ++a) nc[a] = c[a] + ((node >> a) & 1);
      const long ni = node_index(nc);
      for (int d = 0; d < Dim; ++d) dofs[node * Dim + d] = ni * Dim + d;
    }
  }

  double effective_modulus(long e) const { return simp_modulus(rho[e], material, rho_min); }
};

namespace detail {

// Consistent nodal allocation of a uniform traction over the part of a
// boundary element face covered by the patch: per axis the hat-function
// integrals over the overlap interval, multiplied across face axes.
inline void hat_integrals(double a, double b, double h, double& left, double& right) {
  right = (b * b - a * a) / (2.0 * h);
  left = (b - a) - right;
}

}  // namespace detail

// Builds the voxel model for a normalized domain: cube elements, fixed
// faces clamped in all components, patch tractions lumped consistently.
template <int Dim>
VoxelModel<Dim> make_voxel_model(const DomainSpec<Dim>& domain, const BoundarySpec<Dim>& bc,
                                 const Material& mat, const std::array<int, Dim>& resolution,
                                 double initial_rho = 1.0) {
  VoxelModel<Dim> model;
  model.cells = resolution;
  model.material = mat;
  model.h = domain.normalized_dims[0] / resolution[0];
  for (int a = 1; a < Dim; ++a) {
    const double ha = domain.normalized_dims[a] / resolution[a];
    if (std::abs(ha - model.h) > 1e-9 * model.h)
      throw ConfigError("FEA resolution must give cubic elements");
  }
  model.ke_unit = detail::element_stiffness_unit<Dim>(mat.poisson_ratio, model.h);
  model.rho = Eigen::VectorXd::Constant(model.num_elements(), initial_rho);
  model.fixed.assign(model.num_dofs(), 0);
  model.load = Eigen::VectorXd::Zero(model.num_dofs());

  // Fixed faces: every node on the face, all components.
  for (const auto& face : bc.fixed_faces) {
    std::array<int, Dim> c{};
    const int coord = face.side < 0 ? 0 : resolution[face.axis];
    std::function<void(int)> rec = [&](int a) {
      if (a == Dim) {
        c[face.axis] = coord;
        const long ni = model.node_index(c);
        for (int d = 0; d < Dim; ++d) model.fixed[ni * Dim + d] = 1;
        return;
      }
      if (a == face.axis) {
        rec(a + 1);
        return;
      }
      for (c[a] = 0; c[a] <= resolution[a]; ++c[a]) rec(a + 1);
    };
    rec(0);
  }

  // Tractions: loop boundary element faces on the patch plane, allocate
  // T x overlap to the face nodes via hat integrals.
  for (const auto& patch : bc.tractions) {
    const int na = patch.normal_axis(domain);
    const int node_coord = patch.center[na] > 0 ? resolution[na] : 0;
    std::array<int, Dim> tangent{};
    int nt = 0;
    for (int a = 0; a < Dim; ++a)
      if (a != na) tangent[nt++] = a;

    // per tangent axis: overlapping element index range
    std::array<std::pair<int, int>, Dim> ranges{};
    for (int t = 0; t < nt; ++t) {
      const int a = tangent[t];
      const double lo = patch.center[a] - patch.half_size[a] + domain.extent(a);
      const double hi = patch.center[a] + patch.half_size[a] + domain.extent(a);
      int e0 = std::max(0, static_cast<int>(std::floor(lo / model.h - 1e-12)));
      int e1 = std::min(resolution[a] - 1, static_cast<int>(std::ceil(hi / model.h + 1e-12)) - 1);
      ranges[t] = {e0, e1};
    }

    std::array<int, Dim> ec{};
    ec[na] = node_coord == 0 ? 0 : resolution[na] - 1;
    std::function<void(int)> rec = [&](int t) {
      if (t == nt) {
        // overlap of this element face with the patch, per tangent axis
        double weights[2][2];  // [tangent axis][left/right node]
        double total = 1.0;
        for (int tt = 0; tt < nt; ++tt) {
          const int a = tangent[tt];
          const double face_lo = ec[a] * model.h;
          const double lo =
              std::max(face_lo, patch.center[a] - patch.half_size[a] + domain.extent(a));
          const double hi = std::min(face_lo + model.h,
                                     patch.center[a] + patch.half_size[a] + domain.extent(a));
          if (hi <= lo) {
            total = 0.0;
            break;
          }
          detail::hat_integrals(lo - face_lo, hi - face_lo, model.h, weights[tt][0],
                                weights[tt][1]);
        }
        if (total > 0.0) {
          // distribute to the 2^(Dim-1) nodes of the face
          for (int corner = 0; corner < (1 << nt); ++corner) {
            double w = 1.0;
            std::array<int, Dim> ncoord{};
            ncoord[na] = node_coord;
            for (int tt = 0; tt < nt; ++tt) {
              const int bit = (corner >> tt) & 1;
              w *= weights[tt][bit];
              ncoord[tangent[tt]] = ec[tangent[tt]] + bit;
            }
            const long ni = model.node_index(ncoord);
            for (int d = 0; d < Dim; ++d) model.load[ni * Dim + d] += w * patch.traction[d];
          }
        }
        return;
      }
      for (ec[tangent[t]] = ranges[t].first; ec[tangent[t]] <= ranges[t].second; ++ec[tangent[t]])
        rec(t + 1);
    };
    rec(0);
  }
  return model;
}

struct FeaSolution {
  Eigen::VectorXd u;
  double compliance = 0.0;     // f^T u
  double strain_energy = 0.0;  // sum of element energies = u^T K u / 2
  int cg_iterations = 0;
  double residual = 0.0;  // relative preconditioned-free residual at exit
};

namespace detail {

// Matrix-free stiffness application y = K x with fixed dofs projected
// (identity rows). Element loop order is fixed, so results are exactly
// reproducible.
template <int Dim>
void apply_stiffness(const VoxelModel<Dim>& model, const Eigen::VectorXd& x, Eigen::VectorXd& y) {
  constexpr int nd = (1 << Dim) * Dim;
  y.setZero(model.num_dofs());
  std::array<long, nd> dofs;
  Eigen::Matrix<double, nd, 1> ue, fe;
  const long nel = model.num_elements();
  for (long e = 0; e < nel; ++e) {
    model.element_dofs(e, dofs);
    for (int i = 0; i < nd; ++i) ue[i] = model.fixed[dofs[i]] ? 0.0 : x[dofs[i]];
    fe.noalias() = model.ke_unit * ue;
    const double ee = model.effective_modulus(e);
    for (int i = 0; i < nd; ++i) y[dofs[i]] += ee * fe[i];
  }
  for (long i = 0; i < y.size(); ++i)
    if (model.fixed[i]) y[i] = x[i];
}

template <int Dim>
Eigen::VectorXd stiffness_diagonal(const VoxelModel<Dim>& model) {
  constexpr int nd = (1 << Dim) * Dim;
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(model.num_dofs());
  std::array<long, nd> dofs;
  const long nel = model.num_elements();
  for (long e = 0; e < nel; ++e) {
    model.element_dofs(e, dofs);
    const double ee = model.effective_modulus(e);
    for (int i = 0; i < nd; ++i) diag[dofs[i]] += ee * model.ke_unit(i, i);
  }
  for (long i = 0; i < diag.size(); ++i)
    if (model.fixed[i] || diag[i] <= 0.0) diag[i] = 1.0;
  return diag;
}

}  // namespace detail

// Jacobi-preconditioned conjugate gradients on the SIMP-interpolated voxel
// stiffness. Throws when the system has no fixity or fails to converge.
template <int Dim>
FeaSolution assemble_and_solve(const VoxelModel<Dim>& model, double tol = 1e-10,
                               int max_iters = 200000, const Eigen::VectorXd* warm_start = nullptr) {
  if (std::find(model.fixed.begin(), model.fixed.end(), 1) == model.fixed.end())
    throw NumericError("FEA system is singular: no fixed dofs");
  const long n = model.num_dofs();
  Eigen::VectorXd b = model.load;
  for (long i = 0; i < n; ++i)
    if (model.fixed[i]) b[i] = 0.0;
  const double bnorm = b.norm();
  FeaSolution sol;
  sol.u = warm_start && warm_start->size() == n ? *warm_start : Eigen::VectorXd::Zero(n);
  if (bnorm == 0.0) {
    sol.u.setZero();
    return sol;
  }
  for (long i = 0; i < n; ++i)
    if (model.fixed[i]) sol.u[i] = 0.0;

  const Eigen::VectorXd diag = detail::stiffness_diagonal(model);
  Eigen::VectorXd r(n), z(n), p(n), ap(n);
  detail::apply_stiffness(model, sol.u, ap);
  r = b - ap;
  for (long i = 0; i < n; ++i)
    if (model.fixed[i]) r[i] = 0.0;
  z = r.cwiseQuotient(diag);
  p = z;
  double rz = r.dot(z);
  int it = 0;
  double rel = r.norm() / bnorm;
  while (rel > tol && it < max_iters) {
    detail::apply_stiffness(model, p, ap);
    const double p_ap = p.dot(ap);
    if (!(p_ap > 0.0)) throw NumericError("CG breakdown: system not positive definite");
    const double alpha = rz / p_ap;
    sol.u += alpha * p;
    r -= alpha * ap;
    z = r.cwiseQuotient(diag);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
    rel = r.norm() / bnorm;
    ++it;
  }
  if (rel > tol) throw NumericError("CG failed to converge");
  sol.cg_iterations = it;
  sol.residual = rel;
  sol.compliance = model.load.dot(sol.u);

  // Element strain energies; by construction 2 * SE = u^T K u.
  constexpr int nd = (1 << Dim) * Dim;
  std::array<long, nd> dofs;
  Eigen::Matrix<double, nd, 1> ue;
  double se = 0.0;
  for (long e = 0; e < model.num_elements(); ++e) {
    model.element_dofs(e, dofs);
    for (int i = 0; i < nd; ++i) ue[i] = sol.u[dofs[i]];
    se += 0.5 * model.effective_modulus(e) * ue.dot(model.ke_unit * ue);
  }
  sol.strain_energy = se;
  return sol;
}

// Per-element unit-modulus compliances u_e^T k0 u_e used by sensitivities.
template <int Dim>
Eigen::VectorXd element_compliances(const VoxelModel<Dim>& model, const Eigen::VectorXd& u) {
  constexpr int nd = (1 << Dim) * Dim;
  std::array<long, nd> dofs;
  Eigen::Matrix<double, nd, 1> ue;
  Eigen::VectorXd ce(model.num_elements());
  for (long e = 0; e < model.num_elements(); ++e) {
    model.element_dofs(e, dofs);
    for (int i = 0; i < nd; ++i) ue[i] = u[dofs[i]];
    ce[e] = ue.dot(model.ke_unit * ue);
  }
  return ce;
}

// ---------------------------------------------------------------------------
// Density filter with radius rmin = factor * h on the regular element grid.
// ---------------------------------------------------------------------------
template <int Dim>
class DensityFilter {
 public:
  DensityFilter(const std::array<int, Dim>& cells, double factor) : cells_(cells) {
    const int reach = static_cast<int>(std::ceil(factor)) - 1;
    std::array<int, Dim> off{};
    std::function<void(int)> rec = [&](int a) {
      if (a == Dim) {
        double dist = 0.0;
        for (int b = 0; b < Dim; ++b) dist += double(off[b]) * off[b];
        dist = std::sqrt(dist);
        if (dist < factor) {
          offsets_.push_back(off);
          weights_.push_back(factor - dist);
        }
        return;
      }
      for (off[a] = -reach; off[a] <= reach; ++off[a]) rec(a + 1);
    };
    rec(0);
    // row sums (position dependent near the boundary)
    long nel = 1;
    for (int a = 0; a < Dim; ++a) nel *= cells[a];
    row_sum_.resize(nel);
    for_each_element([&](long e, const std::array<int, Dim>& c) {
      double s = 0.0;
      for (std::size_t o = 0; o < offsets_.size(); ++o) {
        if (in_range(c, offsets_[o])) s += weights_[o];
      }
      row_sum_[e] = s;
    });
  }

  // xPhys_e = sum_j w_ej x_j / sum_j w_ej
  Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(x.size());
    for_each_element([&](long e, const std::array<int, Dim>& c) {
      double acc = 0.0;
      for (std::size_t o = 0; o < offsets_.size(); ++o)
        if (in_range(c, offsets_[o])) acc += weights_[o] * x[neighbor(c, offsets_[o])];
      out[e] = acc / row_sum_[e];
    });
    return out;
  }

  // Chain rule for sensitivities: out_j = sum_e w_ej g_e / row_sum_e.
  Eigen::VectorXd chain(const Eigen::VectorXd& g) const {
    Eigen::VectorXd scaled = g.cwiseQuotient(row_sum_);
    Eigen::VectorXd out(g.size());
    for_each_element([&](long e, const std::array<int, Dim>& c) {
      double acc = 0.0;
      for (std::size_t o = 0; o < offsets_.size(); ++o)
        if (in_range(c, offsets_[o])) acc += weights_[o] * scaled[neighbor(c, offsets_[o])];
      out[e] = acc;
    });
    return out;
  }

 private:
  template <class Fn>
  void for_each_element(Fn&& fn) const {
    std::array<int, Dim> c{};
    long nel = 1;
    for (int a = 0; a < Dim; ++a) nel *= cells_[a];
    for (long e = 0; e < nel; ++e) {
      fn(e, c);
      for (int a = 0; a < Dim; ++a) {
        if (++c[a] < cells_[a]) break;
        c[a] = 0;
      }
    }
  }

  bool in_range(const std::array<int, Dim>& c, const std::array<int, Dim>& off) const {
    for (int a = 0; a < Dim; ++a) {
      const int v = c[a] + off[a];
      if (v < 0 || v >= cells_[a]) return false;
    }
    return true;
  }

  long neighbor(const std::array<int, Dim>& c, const std::array<int, Dim>& off) const {
    long idx = 0;
    for (int a = Dim - 1; a >= 0; --a) idx = idx * cells_[a] + (c[a] + off[a]);
    return idx;
  }

  std::array<int, Dim> cells_;
  std::vector<std::array<int, Dim>> offsets_;
  std::vector<double> weights_;
  Eigen::VectorXd row_sum_;
};

struct SimpOptions {
  double filter_radius_factor = 1.5;  // times the element size
  int max_iters = 200;
  double change_tol = 0.01;
  double move = 0.2;
  double cg_tol = 1e-10;
};

struct SimpResult {
  Eigen::VectorXd rho;  // filtered (physical) densities
  std::vector<double> compliance_history;
  std::vector<double> volume_history;
  int iterations = 0;
  double final_change = 0.0;
};

// Classic SIMP compliance minimization with optimality-criterion updates
// and a density filter. Design variables x live in [rho_min, 1]; physical
// densities are the filtered field.
template <int Dim>
SimpResult simp_optimize(VoxelModel<Dim>& model, double target_volume_fraction,
                         const SimpOptions& opts = {},
                         const std::function<void(int, double, double)>& on_iter = nullptr) {
  if (!(target_volume_fraction > 0.0 && target_volume_fraction < 1.0))
    throw ConfigError("target volume fraction must lie in (0, 1)");
  const long nel = model.num_elements();
  DensityFilter<Dim> filter(model.cells, opts.filter_radius_factor);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(nel, target_volume_fraction);
  Eigen::VectorXd x_phys = filter.forward(x);

  SimpResult result;
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(model.num_dofs());
  const double e0 = model.material.youngs_modulus;
  for (int it = 1; it <= opts.max_iters; ++it) {
    model.rho = x_phys;
    FeaSolution sol = assemble_and_solve(model, opts.cg_tol, 200000, &warm);
    warm = sol.u;
    const Eigen::VectorXd ce = element_compliances(model, sol.u);
    result.compliance_history.push_back(sol.compliance);
    result.volume_history.push_back(x_phys.mean());
    if (on_iter) on_iter(it, sol.compliance, x_phys.mean());

    // Compliance sensitivity wrt physical densities, then back through the
    // filter. The volume sensitivity is uniform 1/nel before the filter.
    Eigen::VectorXd dc_phys(nel);
    for (long e = 0; e < nel; ++e) {
      const double r = std::max(x_phys[e], model.rho_min);
      dc_phys[e] = -3.0 * r * r * e0 * ce[e];
    }
    const Eigen::VectorXd dc = filter.chain(dc_phys);
    const Eigen::VectorXd dv =
        filter.chain(Eigen::VectorXd::Constant(nel, 1.0 / double(nel)));

    // OC update with bisection on the Lagrange multiplier until the
    // filtered volume fraction matches the target.
    double l1 = 0.0, l2 = 1e9;
    Eigen::VectorXd x_new(nel), x_phys_new(nel);
    for (int bisect = 0; bisect < 200; ++bisect) {
      const double lmid = 0.5 * (l1 + l2);
      for (long e = 0; e < nel; ++e) {
        const double ratio = std::max(0.0, -dc[e] / (lmid * dv[e]));
        double v = x[e] * std::sqrt(ratio);
        v = std::min(v, std::min(1.0, x[e] + opts.move));
        v = std::max(v, std::max(model.rho_min, x[e] - opts.move));
        x_new[e] = v;
      }
      x_phys_new = filter.forward(x_new);
      const double vf = x_phys_new.mean();
      if (std::abs(vf - target_volume_fraction) <= 1e-4) break;
      if (vf > target_volume_fraction)
        l1 = lmid;
      else
        l2 = lmid;
      if (bisect == 199) throw NumericError("OC bisection failed to meet the volume target");
    }

    result.final_change = (x_new - x).cwiseAbs().maxCoeff();
    x = x_new;
    x_phys = x_phys_new;
    result.iterations = it;
    if (result.final_change < opts.change_tol) break;
  }
  model.rho = x_phys;
  result.rho = x_phys;
  return result;
}

// Volume-matched binary thresholding: the round(V* x n) largest entries
// become solid, which pins the binary volume fraction within half an
// element of the target.
inline Eigen::VectorXd threshold_binary(const Eigen::VectorXd& field,
                                        double target_volume_fraction) {
  const long n = field.size();
  if (n < 1) throw ConfigError("empty density field");
  if (field.maxCoeff() - field.minCoeff() < 1e-12)
    throw ConfigError("cannot threshold a constant density field");
  long n_solid = std::lround(target_volume_fraction * double(n));
  n_solid = std::max(1l, std::min(n - 1, n_solid));
  std::vector<long> order(n);
  std::iota(order.begin(), order.end(), 0l);
  std::nth_element(order.begin(), order.begin() + n_solid, order.end(), [&](long a, long b) {
    return field[a] != field[b] ? field[a] > field[b] : a < b;
  });
  Eigen::VectorXd binary = Eigen::VectorXd::Zero(n);
  for (long i = 0; i < n_solid; ++i) binary[order[i]] = 1.0;
  return binary;
}

struct ComplianceReport {
  double compliance_ftu = 0.0;
  double strain_energy = 0.0;
  double volume_fraction = 0.0;
  double binary_compliance_ftu = 0.0;
  double binary_strain_energy = 0.0;
  double binary_volume_fraction = 0.0;
  int cg_iterations = 0;
  double residual = 0.0;
};

// FEA validation of an implicit density field: sample at element centers,
// solve, and also report the volume-matched binary-structure compliance.
template <int Dim>
ComplianceReport validate_field(const DensityEvaluator<Dim>& density,
                                const DomainSpec<Dim>& domain, const BoundarySpec<Dim>& bc,
                                const Material& mat, const std::array<int, Dim>& resolution,
                                double target_volume_fraction) {
  VoxelModel<Dim> model = make_voxel_model<Dim>(domain, bc, mat, resolution);
  const CoordBatch<Dim> centers = constant_grid<Dim>(domain, resolution);
  model.rho = density(centers);

  ComplianceReport report;
  report.volume_fraction = model.rho.mean();
  FeaSolution sol = assemble_and_solve(model);
  report.compliance_ftu = sol.compliance;
  report.strain_energy = sol.strain_energy;
  report.cg_iterations = sol.cg_iterations;
  report.residual = sol.residual;

  const Eigen::VectorXd binary = threshold_binary(model.rho, target_volume_fraction);
  model.rho = binary;
  FeaSolution bsol = assemble_and_solve(model);
  report.binary_compliance_ftu = bsol.compliance;
  report.binary_strain_energy = bsol.strain_energy;
  report.binary_volume_fraction = binary.mean();
  return report;
}

}  // namespace mftop
