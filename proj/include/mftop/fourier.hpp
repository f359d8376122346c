#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "mftop/common.hpp"
#include "mftop/detail/kernels.hpp"
#include "mftop/geometry.hpp"
#include "mftop/rng.hpp"

namespace mftop {

template <class T>
using RowMatrixX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = RowMatrixX<double>;

// Number of independent entries of a symmetric Dim x Dim tensor.
template <int Dim>
inline constexpr int kSymSize = Dim * (Dim + 1) / 2;

// Storage order of symmetric tensor entries: diagonal first, then the
// upper triangle row by row (2D: xx,yy,xy; 3D: xx,yy,zz,xy,xz,yz).
template <int Dim>
constexpr int sym_index(int o, int a) {
  if (o == a) return o;
  const int lo = o < a ? o : a;
  const int hi = o < a ? a : o;
  if constexpr (Dim == 2) {
    (void)lo, (void)hi;
    return 2;
  } else {
    return lo == 0 ? 3 + (hi - 1) : 5;  // (0,1)->3, (0,2)->4, (1,2)->5
  }
}

// Fixed first-layer frequencies: the coordinates of a regular grid over
// [-bound, bound]^Dim, one grid point per feature column. Column c maps to
// grid index (i_0, i_1, ...) with axis 0 fastest:
// c = i_0 + g_0 * (i_1 + g_1 * i_2).
template <int Dim>
struct FourierKernel {
  std::array<int, Dim> grid_sizes{};
  double bound = 0.0;
  std::array<Eigen::VectorXd, Dim> axis_freqs;
  Eigen::Matrix<double, Dim, Eigen::Dynamic> K;

  int size() const { return static_cast<int>(K.cols()); }

  bool same_settings(const FourierKernel& other) const {
    return grid_sizes == other.grid_sizes && bound == other.bound;
  }

  static FourierKernel build(const std::array<int, Dim>& grid_sizes, double bound) {
    if (bound < 0.0) throw ConfigError("kernel bound must be non-negative");
    FourierKernel kern;
    kern.grid_sizes = grid_sizes;
    kern.bound = bound;
    long k = 1;
    for (int a = 0; a < Dim; ++a) {
      const int g = grid_sizes[a];
      if (g < 1) throw ConfigError("kernel grid size must be >= 1 per axis");
      kern.axis_freqs[a].resize(g);
      for (int j = 0; j < g; ++j)
        kern.axis_freqs[a][j] = g == 1 ? 0.0 : -bound + 2.0 * bound * j / (g - 1);
      k *= g;
    }
    kern.K.resize(Dim, k);
    std::array<int, Dim> idx{};
    for (long c = 0; c < k; ++c) {
      for (int a = 0; a < Dim; ++a) kern.K(a, c) = kern.axis_freqs[a][idx[a]];
      for (int a = 0; a < Dim; ++a) {
        if (++idx[a] < grid_sizes[a]) break;
        idx[a] = 0;
      }
    }
    return kern;
  }
};

// The displacement kernel must resolve at least the density kernel's
// frequency content, otherwise fine density features receive no usable
// strain signal.
template <int Dim>
void check_kernel_ordering(const FourierKernel<Dim>& density_kernel,
                           const FourierKernel<Dim>& displacement_kernel) {
  if (displacement_kernel.bound < density_kernel.bound)
    throw ConfigError("displacement kernel bound must be >= density kernel bound");
}

namespace detail {

struct Cplx {
  double re, im;
};

inline Cplx cis(double t) { return {std::cos(t), std::sin(t)}; }

inline Cplx mul(Cplx a, Cplx b) { return {a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re}; }

}  // namespace detail

// Fills sin feature rows (and cos rows when C is non-null) for points
// [row0, row0+nrows). Exploits the tensor-grid structure of the kernel:
// per axis the phase increments are constant, so unit-complex recurrences
// plus an outer product replace per column transcendentals. The +1 bias is
// folded into axis 0. Phases are always computed in double; T controls the
// storage precision of the feature block.
template <int Dim, class T>
void eval_features(const FourierKernel<Dim>& kernel, const PointMatrix<Dim>& pts, int row0,
                   int nrows, RowMatrixX<T>& S, RowMatrixX<T>* C) {
  using detail::Cplx;
  // axis tables in SoA layout so the emit loop vectorizes cleanly
  std::array<std::vector<T>, Dim> axis_re, axis_im;
  for (int a = 0; a < Dim; ++a) {
    axis_re[a].resize(kernel.grid_sizes[a]);
    axis_im[a].resize(kernel.grid_sizes[a]);
  }

  for (int r = 0; r < nrows; ++r) {
    for (int a = 0; a < Dim; ++a) {
      const double x = pts(row0 + r, a);
      const int g = kernel.grid_sizes[a];
      const double bias = a == 0 ? 1.0 : 0.0;
      Cplx v = detail::cis(x * kernel.axis_freqs[a][0] + bias);
      if (g == 1) {
        axis_re[a][0] = T(v.re);
        axis_im[a][0] = T(v.im);
        continue;
      }
      const Cplx step = detail::cis(x * (kernel.axis_freqs[a][1] - kernel.axis_freqs[a][0]));
      for (int j = 0; j < g; ++j) {
        axis_re[a][j] = T(v.re);
        axis_im[a][j] = T(v.im);
        v = detail::mul(v, step);
      }
    }
    T* srow = S.row(r).data();
    T* crow = C ? C->row(r).data() : nullptr;
    const int g0 = kernel.grid_sizes[0];
    const T* a0re = axis_re[0].data();
    const T* a0im = axis_im[0].data();
    auto emit_block = [&](T tre, T tim, int c) {
      if (crow) {
        for (int i = 0; i < g0; ++i) {
          srow[c + i] = a0re[i] * tim + a0im[i] * tre;
          crow[c + i] = a0re[i] * tre - a0im[i] * tim;
        }
      } else {
        for (int i = 0; i < g0; ++i) srow[c + i] = a0re[i] * tim + a0im[i] * tre;
      }
    };
    if constexpr (Dim == 2) {
      for (int j = 0; j < kernel.grid_sizes[1]; ++j)
        emit_block(axis_re[1][j], axis_im[1][j], j * g0);
    } else {
      int c = 0;
      for (int l = 0; l < kernel.grid_sizes[2]; ++l)
        for (int j = 0; j < kernel.grid_sizes[1]; ++j, c += g0)
          emit_block(axis_re[1][j] * axis_re[2][l] - axis_im[1][j] * axis_im[2][l],
                     axis_re[1][j] * axis_im[2][l] + axis_im[1][j] * axis_re[2][l], c);
    }
  }
}

// Differentiable hard Dirichlet constraint: a sigmoid-shaped factor that is
// exactly 0 on each fixed face and approaches 1 inside the domain; factors
// of multiple faces multiply.
template <int Dim>
struct HardConstraint {
  std::vector<FaceId> faces;
  double slope = 20.0;
  Vec<Dim> extents = Vec<Dim>::Zero();

  static HardConstraint none(const DomainSpec<Dim>& domain) {
    return HardConstraint{{}, 20.0, domain.extents()};
  }

  static HardConstraint from_boundary(const DomainSpec<Dim>& domain, const BoundarySpec<Dim>& bc,
                                      double slope) {
    return HardConstraint{bc.fixed_faces, slope, domain.extents()};
  }

  double face_factor(const Vec<Dim>& x, const FaceId& f) const {
    const double t = f.side < 0 ? x[f.axis] + extents[f.axis] : extents[f.axis] - x[f.axis];
    return 2.0 * (1.0 / (1.0 + std::exp(-slope * t)) - 0.5);
  }

  double mask(const Vec<Dim>& x) const {
    double m = 1.0;
    for (const auto& f : faces) m *= face_factor(x, f);
    return m;
  }

  // Value and spatial gradient of the face-factor product.
  void mask_with_grad(const Vec<Dim>& x, double& m, Vec<Dim>& grad) const {
    m = 1.0;
    grad.setZero();
    const int nf = static_cast<int>(faces.size());
    if (nf == 0) return;
    std::array<double, 8> val{}, dval{};
    for (int i = 0; i < nf; ++i) {
      const auto& f = faces[i];
      const double t = f.side < 0 ? x[f.axis] + extents[f.axis] : extents[f.axis] - x[f.axis];
      const double s = 1.0 / (1.0 + std::exp(-slope * t));
      val[i] = 2.0 * (s - 0.5);
      dval[i] = 2.0 * slope * s * (1.0 - s) * (f.side < 0 ? 1.0 : -1.0);
      m *= val[i];
    }
    for (int i = 0; i < nf; ++i) {
      double rest = 1.0;
      for (int j = 0; j < nf; ++j)
        if (j != i) rest *= val[j];
      grad[faces[i].axis] += dval[i] * rest;
    }
  }
};

namespace detail {
#ifndef MFTOP_CHUNK
#define MFTOP_CHUNK 32
#endif
inline constexpr int kChunk = MFTOP_CHUNK;

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

inline void init_uniform(Eigen::Ref<Eigen::MatrixXd> w, const CounterRng& rng, double scale) {
  std::uint64_t ctr = 0;
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = rng.uniform(ctr++, -scale, scale);
}
}  // namespace detail

// Density field network: rho(x) = sigmoid(sin(x K + b) W), outputs in (0,1).
template <int Dim>
struct DensityNet {
  FourierKernel<Dim> kernel;
  Eigen::VectorXd weights;

  explicit DensityNet(FourierKernel<Dim> kern)
      : kernel(std::move(kern)), weights(Eigen::VectorXd::Zero(kernel.size())) {}

  void init_weights(const CounterRng& rng) {
    detail::init_uniform(weights, rng, 1.0 / std::sqrt(double(kernel.size())));
  }

  Eigen::VectorXd forward(const CoordBatch<Dim>& batch) const;
  // dL/dW given upstream dL/drho.
  Eigen::VectorXd backprop(const CoordBatch<Dim>& batch, const Eigen::VectorXd& g_rho) const;
};

// Displacement field network: u(x) = mask(x) * (sin(x K + b) W), so fixed
// faces carry exactly zero displacement.
template <int Dim>
struct DisplacementNet {
  FourierKernel<Dim> kernel;
  Eigen::Matrix<double, Eigen::Dynamic, Dim> weights;
  HardConstraint<Dim> constraint;

  DisplacementNet(FourierKernel<Dim> kern, HardConstraint<Dim> hc)
      : kernel(std::move(kern)),
        weights(Eigen::Matrix<double, Eigen::Dynamic, Dim>::Zero(kernel.size(), Dim)),
        constraint(std::move(hc)) {}

  void init_weights(const CounterRng& rng) {
    detail::init_uniform(weights, rng, 1.0 / std::sqrt(double(kernel.size())));
  }

  PointMatrix<Dim> forward(const CoordBatch<Dim>& batch) const;

  // Full per-point Jacobian du/dx, row i holds the d x d matrix in
  // row-major order (entry [o*Dim+a] = du_o/dx_a). Closed form, not
  // numerical.
  RowMatrixXd jacobian(const CoordBatch<Dim>& batch) const;

  // dL/dW for upstream gradients on the output (g_u, N x Dim) and/or on
  // the Jacobian (g_jac, N x Dim^2 row-major). Either pointer may be null.
  Eigen::Matrix<double, Eigen::Dynamic, Dim> backprop(const CoordBatch<Dim>& batch,
                                                      const PointMatrix<Dim>* g_u,
                                                      const RowMatrixXd* g_jac) const;
};

// ---------------------------------------------------------------------------
// Fused sweep shared by both networks.
//
// Walks a batch in fixed-size chunks, evaluating the Fourier features once
// per chunk and serving density and displacement fields to a consumer that
// may hand back upstream gradients. The strain reported to the consumer is
// the symmetric gradient of the masked displacement; upstream strain
// gradients must be given as the symmetric matrix dL/d(eps) in the same
// entry order (off-diagonal entries NOT doubled).
//
// The loop is single-pass: forward values, pointwise consumption, and the
// weight-gradient GEMMs all reuse the chunk's feature block. Accumulation
// happens in fixed chunk order, so results are independent of chunking.
// ---------------------------------------------------------------------------

template <int Dim>
struct SweepChunk {
  int offset = 0;
  int count = 0;
  const double* rho = nullptr;             // count values (null without density net)
  const PointMatrix<Dim>* u = nullptr;     // count x Dim rows [0,count)
  const RowMatrixXd* strain = nullptr;     // count x kSymSize rows
  double* g_rho = nullptr;                 // upstream outputs, pre-zeroed
  double* g_u = nullptr;                   // count x Dim, row-major
  double* g_strain = nullptr;              // count x kSymSize, row-major
};

// Scalar selects the precision of the feature blocks and their GEMMs;
// phases, pointwise physics, and the consumer interface stay double. float
// roughly halves the cost of large training sweeps at ~1e-7 relative error,
// far below the Monte-Carlo noise of the losses.
template <int Dim, class Scalar, class Consumer>
void coupled_sweep_impl(const DensityNet<Dim>* den, const DisplacementNet<Dim>* disp,
                        const CoordBatch<Dim>& batch, Consumer&& consumer,
                        Eigen::VectorXd* grad_den,
                        Eigen::Matrix<double, Eigen::Dynamic, Dim>* grad_disp) {
  constexpr int SymN = kSymSize<Dim>;
  const FourierKernel<Dim>& kernel = den ? den->kernel : disp->kernel;
  if (den && disp && !den->kernel.same_settings(disp->kernel))
    throw ConfigError("coupled sweep requires identical kernel settings");
  if ((grad_den && !den) || (grad_disp && !disp))
    throw ConfigError("gradient requested for a network the sweep does not hold");
  const int k = kernel.size();
  const int n = batch.size();
  using ScalarMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

  // Forward operands share one feature stream: [W_den | W_disp].
  const int ncs = (den ? 1 : 0) + (disp ? Dim : 0);
  ScalarMatrix b_fwd(k, ncs);
  {
    int col = 0;
    if (den) b_fwd.col(col++) = den->weights.template cast<Scalar>();
    if (disp)
      for (int o = 0; o < Dim; ++o) b_fwd.col(col++) = disp->weights.col(o).template cast<Scalar>();
  }
  auto fwd = [&](const Scalar* A, const Scalar* B, Scalar* Cout, int m, int nc) {
    switch (nc) {
      case 1: detail::gemm_rows<1>(A, B, Cout, m, k); break;
      case 2: detail::gemm_rows<2>(A, B, Cout, m, k); break;
      case 3: detail::gemm_rows<3>(A, B, Cout, m, k); break;
      case 4: detail::gemm_rows<4>(A, B, Cout, m, k); break;
      case 6: detail::gemm_rows<6>(A, B, Cout, m, k); break;
      default: throw ConfigError("unsupported sweep width");
    }
  };
  auto bwd = [&](const Scalar* A, const Scalar* G, Scalar* W, int m, int nc) {
    switch (nc) {
      case 1: detail::gemm_accumulate<1>(A, G, W, m, k); break;
      case 2: detail::gemm_accumulate<2>(A, G, W, m, k); break;
      case 3: detail::gemm_accumulate<3>(A, G, W, m, k); break;
      case 4: detail::gemm_accumulate<4>(A, G, W, m, k); break;
      case 6: detail::gemm_accumulate<6>(A, G, W, m, k); break;
      default: throw ConfigError("unsupported sweep width");
    }
  };

  // Symmetric strain weight combinations: eps_raw = C * Wsym with
  // Wsym[:, sym(o,a)] = (K_a .* W_o + K_o .* W_a) / (1 + delta_oa).
  Eigen::MatrixXd w_sym;
  if (disp) {
    w_sym.resize(k, SymN);
    for (int o = 0; o < Dim; ++o)
      for (int a = o; a < Dim; ++a) {
        auto col = w_sym.col(sym_index<Dim>(o, a));
        if (o == a)
          col = disp->kernel.K.row(o).transpose().cwiseProduct(disp->weights.col(o));
        else
          col = 0.5 * (disp->kernel.K.row(a).transpose().cwiseProduct(disp->weights.col(o)) +
                       disp->kernel.K.row(o).transpose().cwiseProduct(disp->weights.col(a)));
      }
  }

  // Symmetric strain operand in sweep precision.
  ScalarMatrix w_sym_s;
  if (disp) w_sym_s = w_sym.template cast<Scalar>();

  const bool want_grad = grad_den != nullptr || grad_disp != nullptr;
  ScalarMatrix grad_fwd, grad_sym;
  if (want_grad) grad_fwd = ScalarMatrix::Zero(k, ncs);
  if (grad_den) grad_den->resize(k);
  if (grad_disp) {
    grad_disp->resize(k, Dim);
    grad_sym = ScalarMatrix::Zero(k, SymN);
  }

  RowMatrixX<Scalar> S(detail::kChunk, k), C;
  if (disp) C.resize(detail::kChunk, k);
  RowMatrixX<Scalar> out_fwd(detail::kChunk, ncs), upstream(detail::kChunk, ncs);
  RowMatrixX<Scalar> e_raw, q;
  Eigen::VectorXd rho;
  PointMatrix<Dim> u;
  RowMatrixXd strain;
  Eigen::VectorXd mask_val;
  PointMatrix<Dim> mask_grad;
  Eigen::VectorXd g_rho_buf;
  RowMatrixXd g_u_buf, g_strain_buf;

  for (int off = 0; off < n; off += detail::kChunk) {
    const int m = std::min(detail::kChunk, n - off);
    eval_features(kernel, batch.points, off, m, S, disp ? &C : nullptr);
    fwd(S.data(), b_fwd.data(), out_fwd.data(), m, ncs);

    SweepChunk<Dim> chunk;
    chunk.offset = off;
    chunk.count = m;
    const int ucol = den ? 1 : 0;

    if (den) {
      rho.resize(m);
      for (int i = 0; i < m; ++i) rho[i] = detail::sigmoid(double(out_fwd(i, 0)));
      chunk.rho = rho.data();
    }
    if (disp) {
      e_raw.resize(m, SymN);
      fwd(C.data(), w_sym_s.data(), e_raw.data(), m, SymN);
      u.resize(m, Dim);
      strain.resize(m, SymN);
      mask_val.resize(m);
      mask_grad.resize(m, Dim);
      for (int i = 0; i < m; ++i) {
        const Vec<Dim> x = batch.point(off + i);
        double mv;
        Vec<Dim> mg;
        disp->constraint.mask_with_grad(x, mv, mg);
        mask_val[i] = mv;
        mask_grad.row(i) = mg.transpose();
        for (int o = 0; o < Dim; ++o) u(i, o) = mv * double(out_fwd(i, ucol + o));
        for (int o = 0; o < Dim; ++o)
          for (int a = o; a < Dim; ++a) {
            const int s = sym_index<Dim>(o, a);
            strain(i, s) = 0.5 * (mg[o] * double(out_fwd(i, ucol + a)) +
                                  mg[a] * double(out_fwd(i, ucol + o))) +
                           mv * double(e_raw(i, s));
          }
      }
      chunk.u = &u;
      chunk.strain = &strain;
    }

    if (grad_den) {
      g_rho_buf.setZero(m);
      chunk.g_rho = g_rho_buf.data();
    }
    if (grad_disp) {
      g_u_buf.setZero(m, Dim);
      g_strain_buf.setZero(m, SymN);
      chunk.g_u = g_u_buf.data();
      chunk.g_strain = g_strain_buf.data();
    }

    consumer(chunk);

    if (want_grad) {
      upstream.topRows(m).setZero();
      if (grad_den)
        // d(sigmoid)/dz folded into the upstream before the feature GEMM.
        for (int i = 0; i < m; ++i)
          upstream(i, 0) = Scalar(g_rho_buf[i] * rho[i] * (1.0 - rho[i]));
      if (grad_disp) {
        // h_u = mask * g_u + G * grad(mask); Q = (2 - delta) * mask * G.
        q.resize(m, SymN);
        for (int i = 0; i < m; ++i) {
          const double mv = mask_val[i];
          for (int b = 0; b < Dim; ++b) {
            double acc = mv * g_u_buf(i, b);
            for (int o = 0; o < Dim; ++o)
              acc += g_strain_buf(i, sym_index<Dim>(o, b)) * mask_grad(i, o);
            upstream(i, ucol + b) = Scalar(acc);
          }
          for (int o = 0; o < Dim; ++o)
            for (int a = o; a < Dim; ++a) {
              const int s = sym_index<Dim>(o, a);
              q(i, s) = Scalar((o == a ? 1.0 : 2.0) * mv * g_strain_buf(i, s));
            }
        }
        bwd(C.data(), q.data(), grad_sym.data(), m, SymN);
      }
      bwd(S.data(), upstream.data(), grad_fwd.data(), m, ncs);
    }
  }

  if (grad_den) *grad_den = grad_fwd.col(0).template cast<double>();
  if (grad_disp) {
    const int ucol = den ? 1 : 0;
    for (int o = 0; o < Dim; ++o)
      grad_disp->col(o) = grad_fwd.col(ucol + o).template cast<double>();
    // Map raw-strain gradients back through Wsym's frequency weighting.
    for (int o = 0; o < Dim; ++o)
      for (int a = o; a < Dim; ++a) {
        const Eigen::VectorXd col = grad_sym.col(sym_index<Dim>(o, a)).template cast<double>();
        if (o == a) {
          grad_disp->col(o) += disp->kernel.K.row(o).transpose().cwiseProduct(col);
        } else {
          grad_disp->col(o) += 0.5 * disp->kernel.K.row(a).transpose().cwiseProduct(col);
          grad_disp->col(a) += 0.5 * disp->kernel.K.row(o).transpose().cwiseProduct(col);
        }
      }
  }
}

// Double-precision sweep: the reference path used by the public network
// operations and all gradient-exactness checks.
template <int Dim, class Consumer>
void coupled_sweep(const DensityNet<Dim>* den, const DisplacementNet<Dim>* disp,
                   const CoordBatch<Dim>& batch, Consumer&& consumer,
                   Eigen::VectorXd* grad_den,
                   Eigen::Matrix<double, Eigen::Dynamic, Dim>* grad_disp) {
  coupled_sweep_impl<Dim, double>(den, disp, batch, std::forward<Consumer>(consumer), grad_den,
                                  grad_disp);
}

// --- DensityNet ------------------------------------------------------------

template <int Dim>
Eigen::VectorXd DensityNet<Dim>::forward(const CoordBatch<Dim>& batch) const {
  Eigen::VectorXd rho(batch.size());
  coupled_sweep<Dim>(
      this, nullptr, batch,
      [&](const SweepChunk<Dim>& c) {
        for (int i = 0; i < c.count; ++i) rho[c.offset + i] = c.rho[i];
      },
      nullptr, nullptr);
  return rho;
}

template <int Dim>
Eigen::VectorXd DensityNet<Dim>::backprop(const CoordBatch<Dim>& batch,
                                          const Eigen::VectorXd& g_rho) const {
  if (g_rho.size() != batch.size()) throw ConfigError("upstream gradient size mismatch");
  Eigen::VectorXd grad;
  coupled_sweep<Dim>(
      this, nullptr, batch,
      [&](const SweepChunk<Dim>& c) {
        for (int i = 0; i < c.count; ++i) c.g_rho[i] = g_rho[c.offset + i];
      },
      &grad, nullptr);
  return grad;
}

// --- DisplacementNet ---------------------------------------------------------

template <int Dim>
PointMatrix<Dim> DisplacementNet<Dim>::forward(const CoordBatch<Dim>& batch) const {
  PointMatrix<Dim> out(batch.size(), Dim);
  coupled_sweep<Dim>(
      nullptr, this, batch,
      [&](const SweepChunk<Dim>& c) { out.middleRows(c.offset, c.count) = *c.u; }, nullptr,
      nullptr);
  return out;
}

template <int Dim>
RowMatrixXd DisplacementNet<Dim>::jacobian(const CoordBatch<Dim>& batch) const {
  const int k = kernel.size();
  const int n = batch.size();
  RowMatrixXd out(n, Dim * Dim);

  // Per-axis frequency-weighted columns: J_raw[:, o*Dim+a] = C * (K_a .* W_o).
  Eigen::MatrixXd w_jac(k, Dim * Dim);
  for (int o = 0; o < Dim; ++o)
    for (int a = 0; a < Dim; ++a)
      w_jac.col(o * Dim + a) = kernel.K.row(a).transpose().cwiseProduct(weights.col(o));

  RowMatrixXd S(detail::kChunk, k), C(detail::kChunk, k);
  for (int off = 0; off < n; off += detail::kChunk) {
    const int m = std::min(detail::kChunk, n - off);
    eval_features(kernel, batch.points, off, m, S, &C);
    PointMatrix<Dim> u_raw = S.topRows(m) * weights;
    RowMatrixXd j_raw = C.topRows(m) * w_jac;
    for (int i = 0; i < m; ++i) {
      double mv;
      Vec<Dim> mg;
      constraint.mask_with_grad(batch.point(off + i), mv, mg);
      for (int o = 0; o < Dim; ++o)
        for (int a = 0; a < Dim; ++a)
          out(off + i, o * Dim + a) = mg[a] * u_raw(i, o) + mv * j_raw(i, o * Dim + a);
    }
  }
  return out;
}

template <int Dim>
Eigen::Matrix<double, Eigen::Dynamic, Dim> DisplacementNet<Dim>::backprop(
    const CoordBatch<Dim>& batch, const PointMatrix<Dim>* g_u, const RowMatrixXd* g_jac) const {
  const int k = kernel.size();
  const int n = batch.size();
  if (g_u && g_u->rows() != n) throw ConfigError("upstream gradient size mismatch");
  if (g_jac && (g_jac->rows() != n || g_jac->cols() != Dim * Dim))
    throw ConfigError("upstream Jacobian gradient size mismatch");
  Eigen::Matrix<double, Eigen::Dynamic, Dim> grad =
      Eigen::Matrix<double, Eigen::Dynamic, Dim>::Zero(k, Dim);

  RowMatrixXd S(detail::kChunk, k), C(detail::kChunk, k);
  for (int off = 0; off < n; off += detail::kChunk) {
    const int m = std::min(detail::kChunk, n - off);
    eval_features(kernel, batch.points, off, m, S, &C);
    PointMatrix<Dim> h_u = PointMatrix<Dim>::Zero(m, Dim);
    RowMatrixXd q = RowMatrixXd::Zero(m, Dim * Dim);
    for (int i = 0; i < m; ++i) {
      double mv;
      Vec<Dim> mg;
      constraint.mask_with_grad(batch.point(off + i), mv, mg);
      for (int o = 0; o < Dim; ++o) {
        double acc = g_u ? mv * (*g_u)(off + i, o) : 0.0;
        if (g_jac)
          for (int a = 0; a < Dim; ++a) acc += (*g_jac)(off + i, o * Dim + a) * mg[a];
        h_u(i, o) = acc;
        if (g_jac)
          for (int a = 0; a < Dim; ++a) q(i, o * Dim + a) = mv * (*g_jac)(off + i, o * Dim + a);
      }
    }
    grad.noalias() += S.topRows(m).transpose() * h_u;
    if (g_jac) {
      Eigen::MatrixXd dw_jac = C.topRows(m).transpose() * q;
      for (int o = 0; o < Dim; ++o)
        for (int a = 0; a < Dim; ++a)
          grad.col(o) += kernel.K.row(a).transpose().cwiseProduct(dw_jac.col(o * Dim + a));
    }
  }
  return grad;
}

}  // namespace mftop
