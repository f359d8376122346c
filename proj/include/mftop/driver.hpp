#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <vector>

#include "mftop/adam.hpp"
#include "mftop/elasticity.hpp"
#include "mftop/fea.hpp"
#include "mftop/fourier.hpp"
#include "mftop/problem.hpp"

namespace mftop {

struct ConvergenceRow {
  long iteration = 0;
  double l_den = 0.0;
  double compliance = 0.0;  // internal strain energy on the density batch
  double volume_fraction = 0.0;
  double l_disp = 0.0;
  double seconds = 0.0;
};

template <int Dim>
struct RunState {
  DensityNet<Dim> density;
  DisplacementNet<Dim> displacement;
  AdamState adam_density, adam_displacement;
  bool initial_trained = false;
  long outer_iteration = 0;
  double c0 = 0.0;  // captured once at the first density-loss evaluation
  double elapsed_seconds = 0.0;
  std::uint64_t seed = 0;
};

template <int Dim>
struct RunResult {
  RunState<Dim> state;
  std::vector<ConvergenceRow> log;
};

template <int Dim>
struct RunHooks {
  std::function<void(const RunState<Dim>&, const ConvergenceRow&)> on_iteration;
  std::function<void(const RunState<Dim>&)> on_checkpoint;
};

// L_den = c/c0 + alpha (v/V* - 1)^2 + alpha_p p^2.
inline double density_loss(double c, double c0, double v, double v_target, double alpha,
                           double passive_fraction = 0.0, double alpha_p = 0.0) {
  if (!(c0 > 0.0)) throw NumericError("initial compliance must be positive");
  const double dv = v / v_target - 1.0;
  return c / c0 + alpha * dv * dv + alpha_p * passive_fraction * passive_fraction;
}

// Volume-penalty ramp: 1 -> alpha_max over the first half of the run.
inline double alpha_schedule(long iteration, int n_opt, double alpha_max) {
  const long half = std::max(1, n_opt / 2);
  const double t = std::min(1.0, double(iteration) / double(half));
  return 1.0 + t * (alpha_max - 1.0);
}

// Total compliance derivative w.r.t. a sampled density. The displacement
// dependence cancels against the equilibrium adjoint, flipping the sign of
// the partial: dC/drho = -dISE/drho = -(V/N) 3 rho^2 psi.
inline double compliance_density_gradient(double rho, double psi_solid, double vol_weight) {
  return -3.0 * rho * rho * psi_solid * vol_weight;
}

namespace detail {
// rng stream ids per sampling phase
inline constexpr std::uint64_t kStreamInitDisp = 0x10;
inline constexpr std::uint64_t kStreamDispTraction = 0x11;
inline constexpr std::uint64_t kStreamDisp = 0x12;
inline constexpr std::uint64_t kStreamDenTraction = 0x13;
inline constexpr std::uint64_t kStreamDen = 0x14;
inline constexpr std::uint64_t kStreamWeightsDen = 0x20;
inline constexpr std::uint64_t kStreamWeightsDisp = 0x21;

inline std::uint64_t iter_key(std::uint64_t stream, long iteration) {
  return (stream << 40) ^ std::uint64_t(iteration);
}
}  // namespace detail

template <int Dim>
RunState<Dim> init_run_state(const ProblemSpec<Dim>& problem) {
  auto kernel = FourierKernel<Dim>::build(problem.kernel_grid, problem.kernel_bound);
  check_kernel_ordering(kernel, kernel);  // same settings for both networks
  RunState<Dim> state{
      DensityNet<Dim>(kernel),
      DisplacementNet<Dim>(kernel,
                           HardConstraint<Dim>::from_boundary(problem.domain, problem.bc,
                                                              problem.mask_slope)),
      AdamState(kernel.size(), 1,
                {problem.run.lr_density, problem.run.adam_beta1, problem.run.adam_beta2,
                 problem.run.adam_eps}),
      AdamState(kernel.size(), Dim,
                {problem.run.lr_displacement, problem.run.adam_beta1, problem.run.adam_beta2,
                 problem.run.adam_eps})};
  state.seed = problem.run.seed;
  // Zero weights: the density field starts at exactly 0.5 everywhere and the
  // displacement field at rest. Random O(1/sqrt(k)) inits put the initial
  // strain energy several orders of magnitude above equilibrium because the
  // kernel frequencies amplify weight noise in the strain path.
  return state;
}

namespace detail {

// One sampled batch pair for a displacement or density iteration. In
// simp-grid mode the interior points are the fixed validation grid; the
// traction batch is sampled either way so external work stays defined.
template <int Dim>
struct BatchPair {
  CoordBatch<Dim> interior;
  CoordBatch<Dim> traction;
};

template <int Dim>
BatchPair<Dim> sample_iteration_batches(const ProblemSpec<Dim>& problem,
                                        const CoordBatch<Dim>* grid, std::uint64_t seed,
                                        std::uint64_t traction_stream,
                                        std::uint64_t interior_stream, long iteration) {
  CounterRng rng(seed);
  BatchPair<Dim> pair;
  pair.traction = sample_traction(problem.domain, problem.bc, problem.run.traction_samples,
                                  rng.stream(iter_key(traction_stream, iteration)));
  if (problem.run.sampling == SamplingMode::SimpGrid && grid) {
    pair.interior = *grid;
  } else {
    pair.interior =
        sample_interior(problem.domain, problem.bc, problem.run.batch_size,
                        rng.stream(iter_key(interior_stream, iteration)), &pair.traction);
  }
  return pair;
}

}  // namespace detail

// Runs n_iters Adam steps on the potential-energy loss with freshly sampled
// batches per iteration. density == nullptr trains against the constant
// initial field rho_init. Returns the last iteration's energy report.
template <int Dim>
EnergyReport train_displacement(RunState<Dim>& state, const ProblemSpec<Dim>& problem,
                                const DensityNet<Dim>* density, double rho_init, int n_iters,
                                std::uint64_t traction_stream, std::uint64_t interior_stream,
                                long iter_base, const CoordBatch<Dim>* grid = nullptr) {
  EnergyReport report;
  DensityEvaluator<Dim> constant = constant_density<Dim>(rho_init);
  Eigen::Matrix<double, Eigen::Dynamic, Dim> grad;
  for (int j = 0; j < n_iters; ++j) {
    const long iter = iter_base + j;
    auto batches = detail::sample_iteration_batches(problem, grid, state.seed, traction_stream,
                                                    interior_stream, iter);
    if (problem.run.fast_math)
      report = potential_energy<Dim, float>(state.displacement, density,
                                            density ? nullptr : &constant, batches.interior,
                                            batches.traction, problem.bc, problem.material,
                                            problem.domain.measure(), &grad);
    else
      report = potential_energy<Dim, double>(state.displacement, density,
                                             density ? nullptr : &constant, batches.interior,
                                             batches.traction, problem.bc, problem.material,
                                             problem.domain.measure(), &grad);
    if (!std::isfinite(report.l_disp))
      throw NumericError("displacement loss diverged at iteration " + std::to_string(iter));
    state.adam_displacement.step(state.displacement.weights, grad);
  }
  return report;
}

namespace detail {

// Density forward over a batch, optionally with a gradient accumulated for
// a fixed upstream per point; the fast/exact switch mirrors the trainer.
template <int Dim>
Eigen::VectorXd density_forward_any(const DensityNet<Dim>& net, const CoordBatch<Dim>& batch,
                                    bool fast) {
  Eigen::VectorXd rho(batch.size());
  auto consume = [&](const SweepChunk<Dim>& c) {
    for (int i = 0; i < c.count; ++i) rho[c.offset + i] = c.rho[i];
  };
  if (fast)
    coupled_sweep_impl<Dim, float>(&net, nullptr, batch, consume, nullptr, nullptr);
  else
    coupled_sweep_impl<Dim, double>(&net, nullptr, batch, consume, nullptr, nullptr);
  return rho;
}

template <int Dim>
Eigen::VectorXd density_backprop_any(const DensityNet<Dim>& net, const CoordBatch<Dim>& batch,
                                     const Eigen::VectorXd& g_rho, bool fast) {
  Eigen::VectorXd grad;
  auto consume = [&](const SweepChunk<Dim>& c) {
    for (int i = 0; i < c.count; ++i) c.g_rho[i] = g_rho[c.offset + i];
  };
  if (fast)
    coupled_sweep_impl<Dim, float>(&net, nullptr, batch, consume, &grad, nullptr);
  else
    coupled_sweep_impl<Dim, double>(&net, nullptr, batch, consume, &grad, nullptr);
  return grad;
}

}  // namespace detail

// One topology-optimization step of the density network: compliance term
// from the sampled batch through the frozen displacement field, volume and
// passive penalties from the constant grid, single Adam update.
template <int Dim>
ConvergenceRow density_step(RunState<Dim>& state, const ProblemSpec<Dim>& problem,
                            const CoordBatch<Dim>& grid, const std::vector<char>& passive_mask,
                            long iteration) {
  const LameParams<Dim> lame = LameParams<Dim>::from(problem.material);
  const bool fast = problem.run.fast_math;
  auto batches = detail::sample_iteration_batches(problem, &grid, state.seed,
                                                  detail::kStreamDenTraction,
                                                  detail::kStreamDen, iteration);
  const CoordBatch<Dim>& x_den = batches.interior;
  const double vol_w = problem.domain.measure() / x_den.size();

  // First pass when c0 is not yet pinned: measure the compliance only.
  if (!(state.c0 > 0.0)) {
    double c_init = 0.0;
    auto measure = [&](const SweepChunk<Dim>& c) {
      for (int i = 0; i < c.count; ++i) {
        const double rho = c.rho[i];
        const double psi = energy_density_sym<Dim>(c.strain->row(i).data(), lame);
        c_init += vol_w * rho * rho * rho * psi;
      }
    };
    if (fast)
      coupled_sweep_impl<Dim, float>(&state.density, &state.displacement, x_den, measure,
                                     nullptr, nullptr);
    else
      coupled_sweep_impl<Dim, double>(&state.density, &state.displacement, x_den, measure,
                                      nullptr, nullptr);
    if (!(c_init > 0.0) || !std::isfinite(c_init))
      throw NumericError("initial compliance is not positive");
    state.c0 = c_init;
  }

  // Compliance value and its density-network gradient on the sampled batch.
  double compliance = 0.0;
  Eigen::VectorXd grad_compliance;
  auto consume = [&](const SweepChunk<Dim>& c) {
    for (int i = 0; i < c.count; ++i) {
      const double rho = c.rho[i];
      const double psi = energy_density_sym<Dim>(c.strain->row(i).data(), lame);
      compliance += vol_w * rho * rho * rho * psi;
      c.g_rho[i] = compliance_density_gradient(rho, psi, vol_w) / state.c0;
    }
  };
  if (fast)
    coupled_sweep_impl<Dim, float>(&state.density, &state.displacement, x_den, consume,
                                   &grad_compliance, nullptr);
  else
    coupled_sweep_impl<Dim, double>(&state.density, &state.displacement, x_den, consume,
                                    &grad_compliance, nullptr);

  // Volume fraction (and passive mean) always on the constant grid.
  const Eigen::VectorXd rho_grid = detail::density_forward_any(state.density, grid, fast);
  const double v = rho_grid.mean();
  long n_passive = 0;
  double p = 0.0;
  for (std::size_t i = 0; i < passive_mask.size(); ++i)
    if (passive_mask[i]) {
      p += rho_grid[long(i)];
      ++n_passive;
    }
  if (n_passive > 0) p /= double(n_passive);

  const int n_opt = problem.run.resolved_n_opt(Dim);
  const double alpha = alpha_schedule(iteration, n_opt, problem.run.alpha_max);
  const double alpha_p_max =
      problem.run.alpha_passive_max > 0.0 ? problem.run.alpha_passive_max : problem.run.alpha_max;
  const double alpha_p = n_passive > 0 ? alpha_schedule(iteration, n_opt, alpha_p_max) : 0.0;

  Eigen::VectorXd g_grid = Eigen::VectorXd::Constant(
      grid.size(), 2.0 * alpha * (v / problem.target_volume_fraction - 1.0) /
                       (problem.target_volume_fraction * grid.size()));
  if (n_passive > 0) {
    const double gp = 2.0 * alpha_p * p / double(n_passive);
    for (std::size_t i = 0; i < passive_mask.size(); ++i)
      if (passive_mask[i]) g_grid[long(i)] += gp;
  }
  Eigen::VectorXd grad =
      grad_compliance + detail::density_backprop_any(state.density, grid, g_grid, fast);

  if (!std::isfinite(compliance))
    throw NumericError("compliance diverged at iteration " + std::to_string(iteration));
  state.adam_density.step(state.density.weights, grad);

  ConvergenceRow row;
  row.iteration = iteration;
  row.compliance = compliance;
  row.volume_fraction = v;
  row.l_den = density_loss(compliance, state.c0, v, problem.target_volume_fraction, alpha, p,
                           alpha_p);
  return row;
}

// Full optimization: initial displacement training against the uniform 0.5
// field, then n_opt outer iterations of n_disp displacement updates plus
// one density update each. Resumable from a saved state.
template <int Dim>
RunResult<Dim> optimize(const ProblemSpec<Dim>& problem, const RunHooks<Dim>& hooks = {},
                        const RunState<Dim>* resume_from = nullptr) {
  problem.validate();
  RunResult<Dim> result{resume_from ? *resume_from : init_run_state(problem), {}};
  RunState<Dim>& state = result.state;
  const int n_opt = problem.run.resolved_n_opt(Dim);
  const CoordBatch<Dim> grid = constant_grid<Dim>(problem.domain, problem.fea_resolution);
  std::vector<char> passive_mask(grid.size(), 0);
  for (const auto& region : problem.passive) {
    auto mask = in_passive(grid, region);
    for (std::size_t i = 0; i < mask.size(); ++i) passive_mask[i] |= mask[i];
  }

  const auto t_start = std::chrono::steady_clock::now();
  const double t_offset = state.elapsed_seconds;
  auto elapsed = [&] {
    return t_offset +
           std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  };

  if (!state.initial_trained) {
    train_displacement<Dim>(state, problem, nullptr, 0.5, problem.run.n_initdisp,
                       detail::kStreamInitDisp, detail::kStreamInitDisp + 1, 0,
                       problem.run.sampling == SamplingMode::SimpGrid ? &grid : nullptr);
    state.initial_trained = true;
    state.elapsed_seconds = elapsed();
    if (hooks.on_checkpoint) hooks.on_checkpoint(state);
  }

  for (long t = state.outer_iteration + 1; t <= n_opt; ++t) {
    EnergyReport last = train_displacement(
        state, problem, &state.density, 0.0, problem.run.n_disp, detail::kStreamDispTraction,
        detail::kStreamDisp, (t - 1) * long(problem.run.n_disp),
        problem.run.sampling == SamplingMode::SimpGrid ? &grid : nullptr);

    ConvergenceRow row = density_step(state, problem, grid, passive_mask, t);
    state.outer_iteration = t;
    // exactly one density update per outer iteration
    if (state.adam_density.steps() + state.adam_density.skipped_steps() != t)
      throw NumericError("density optimizer step count out of sync");
    row.l_disp = last.l_disp;
    state.elapsed_seconds = elapsed();
    row.seconds = state.elapsed_seconds;
    result.log.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(state, row);
    if (hooks.on_checkpoint &&
        (t % problem.run.checkpoint_every == 0 || t == n_opt))
      hooks.on_checkpoint(state);
  }
  return result;
}

// Hybrid mode: the same density network and loss, with compliance and its
// sensitivities supplied by voxel FEA instead of the displacement network.
template <int Dim>
RunResult<Dim> fenn_to_mode(const ProblemSpec<Dim>& problem, const RunHooks<Dim>& hooks = {}) {
  problem.validate();
  RunResult<Dim> result{init_run_state(problem), {}};
  RunState<Dim>& state = result.state;
  const int n_opt = problem.run.resolved_n_opt(Dim);
  const CoordBatch<Dim> grid = constant_grid<Dim>(problem.domain, problem.fea_resolution);
  std::vector<char> passive_mask(grid.size(), 0);
  for (const auto& region : problem.passive) {
    auto mask = in_passive(grid, region);
    for (std::size_t i = 0; i < mask.size(); ++i) passive_mask[i] |= mask[i];
  }

  VoxelModel<Dim> model =
      make_voxel_model<Dim>(problem.domain, problem.bc, problem.material, problem.fea_resolution);
  Eigen::VectorXd warm = Eigen::VectorXd::Zero(model.num_dofs());
  const double e0 = problem.material.youngs_modulus;
  const auto t_start = std::chrono::steady_clock::now();

  for (long t = 1; t <= n_opt; ++t) {
    const Eigen::VectorXd rho =
        detail::density_forward_any(state.density, grid, problem.run.fast_math);
    model.rho = rho;
    FeaSolution sol = assemble_and_solve(model, 1e-10, 200000, &warm);
    warm = sol.u;
    const Eigen::VectorXd ce = element_compliances(model, sol.u);
    if (!(state.c0 > 0.0)) state.c0 = sol.compliance;

    const double v = rho.mean();
    long n_passive = 0;
    double p = 0.0;
    for (std::size_t i = 0; i < passive_mask.size(); ++i)
      if (passive_mask[i]) {
        p += rho[long(i)];
        ++n_passive;
      }
    if (n_passive > 0) p /= double(n_passive);

    const double alpha = alpha_schedule(t, n_opt, problem.run.alpha_max);
    const double alpha_p_max = problem.run.alpha_passive_max > 0.0 ? problem.run.alpha_passive_max
                                                                   : problem.run.alpha_max;
    const double alpha_p = n_passive > 0 ? alpha_schedule(t, n_opt, alpha_p_max) : 0.0;

    Eigen::VectorXd g_rho(grid.size());
    const double gv = 2.0 * alpha * (v / problem.target_volume_fraction - 1.0) /
                      (problem.target_volume_fraction * grid.size());
    for (long e = 0; e < grid.size(); ++e) {
      const double r = std::max(rho[e], model.rho_min);
      g_rho[e] = -3.0 * r * r * e0 * ce[e] / state.c0 + gv;
    }
    if (n_passive > 0) {
      const double gp = 2.0 * alpha_p * p / double(n_passive);
      for (std::size_t i = 0; i < passive_mask.size(); ++i)
        if (passive_mask[i]) g_rho[long(i)] += gp;
    }
    Eigen::VectorXd grad =
        detail::density_backprop_any(state.density, grid, g_rho, problem.run.fast_math);
    state.adam_density.step(state.density.weights, grad);
    state.outer_iteration = t;

    ConvergenceRow row;
    row.iteration = t;
    row.compliance = sol.compliance;
    row.volume_fraction = v;
    row.l_den = density_loss(sol.compliance, state.c0, v, problem.target_volume_fraction, alpha,
                             p, alpha_p);
    row.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    state.elapsed_seconds = row.seconds;
    result.log.push_back(row);
    if (hooks.on_iteration) hooks.on_iteration(state, row);
  }
  return result;
}

}  // namespace mftop
