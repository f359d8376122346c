#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "mftop/elasticity.hpp"
#include "mftop/geometry.hpp"

namespace mftop {

enum class SamplingMode { Random, SimpGrid };

// Training schedule and sampling configuration. Counts and rates follow the
// method's published settings; alpha ramps from 1 to alpha_max over the
// first half of the run and then holds.
struct RunConfig {
  int n_initdisp = 1000;
  int n_disp = 20;
  int n_opt = 0;  // 0 -> 700 in 3D, 2000 in 2D
  int batch_size = 6000;
  int traction_samples = 64;
  double alpha_max = 100.0;
  double alpha_passive_max = 0.0;  // 0 -> alpha_max
  SamplingMode sampling = SamplingMode::Random;
  std::uint64_t seed = 1;
  double lr_density = 2e-3;
  double lr_displacement = 5e-6;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool fast_math = true;  // float feature blocks in the training sweeps
  int checkpoint_every = 100;

  int resolved_n_opt(int dim) const { return n_opt > 0 ? n_opt : (dim == 3 ? 700 : 2000); }

  void validate() const {
    if (n_initdisp < 1 || n_disp < 1 || batch_size < 1 || traction_samples < 1)
      throw ConfigError("schedule counts must be >= 1");
    if (n_opt < 0) throw ConfigError("n_opt must be >= 0");
    if (!(lr_density > 0.0) || !(lr_displacement > 0.0))
      throw ConfigError("learning rates must be positive");
  }
};

// A full problem instance: geometry, material, target, discretization of
// the validation grid, and network hyperparameters.
template <int Dim>
struct ProblemSpec {
  std::string title;
  DomainSpec<Dim> domain;
  BoundarySpec<Dim> bc;
  std::vector<PassiveRegion<Dim>> passive;
  Material material{1000.0, 0.3};
  double target_volume_fraction = 0.5;
  std::array<int, Dim> fea_resolution{};
  std::array<int, Dim> kernel_grid{};  // defaults to 16 per axis
  double kernel_bound = 35.0;
  double mask_slope = 20.0;
  RunConfig run;
  // Reported reference values from the source experiments, carried as
  // metadata for validation harnesses.
  std::map<std::string, double> expected;

  void validate() const {
    material.validate();
    bc.validate(domain);
    run.validate();
    if (!(target_volume_fraction > 0.0 && target_volume_fraction < 1.0))
      throw ConfigError("target volume fraction must lie in (0, 1)");
    if (bc.fixed_faces.empty()) throw ConfigError("at least one fixed face is required");
    for (int a = 0; a < Dim; ++a) {
      if (fea_resolution[a] < 1) throw ConfigError("FEA resolution must be >= 1 per axis");
      if (kernel_grid[a] < 1) throw ConfigError("kernel grid must be >= 1 per axis");
    }
    for (const auto& region : passive) {
      if (region.shape == PassiveRegion<Dim>::Shape::Box) {
        for (int a = 0; a < Dim; ++a)
          if (!(region.box_min[a] < region.box_max[a]))
            throw ConfigError("passive box must have positive extent");
      } else if (!(region.radius > 0.0)) {
        throw ConfigError("passive sphere radius must be positive");
      }
    }
  }
};

using AnyProblem = std::variant<ProblemSpec<2>, ProblemSpec<3>>;

}  // namespace mftop
