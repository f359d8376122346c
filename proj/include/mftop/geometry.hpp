#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mftop/common.hpp"
#include "mftop/rng.hpp"

namespace mftop {

template <int Dim>
using Vec = Eigen::Matrix<double, Dim, 1>;

// Sample coordinates are stored one point per row.
template <int Dim>
using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, Dim, Eigen::RowMajor>;

// Axis-aligned box domain centered at the origin. Coordinates are kept in
// normalized units: the longest physical side maps to [-0.5, 0.5] and the
// normalized lengths double as millimetres (longest side = 1 mm).
template <int Dim>
struct DomainSpec {
  static_assert(Dim == 2 || Dim == 3);

  Vec<Dim> physical_dims;    // as given, before scaling
  Vec<Dim> normalized_dims;  // max entry is exactly 1

  double extent(int axis) const { return 0.5 * normalized_dims[axis]; }

  Vec<Dim> extents() const { return 0.5 * normalized_dims; }

  // Domain measure in normalized units: volume in 3D, area in 2D
  // (2D problems carry an implicit unit thickness).
  double measure() const { return normalized_dims.prod(); }

  bool contains(const Vec<Dim>& p, double tol = 0.0) const {
    for (int a = 0; a < Dim; ++a)
      if (std::abs(p[a]) > extent(a) + tol) return false;
    return true;
  }
};

template <int Dim>
DomainSpec<Dim> normalize_domain(const Vec<Dim>& physical_dims) {
  for (int a = 0; a < Dim; ++a)
    if (!(physical_dims[a] > 0.0))
      throw ConfigError("domain dimensions must be positive");
  DomainSpec<Dim> d;
  d.physical_dims = physical_dims;
  d.normalized_dims = physical_dims / physical_dims.maxCoeff();
  return d;
}

// One fixed face of the box: zero displacement in all components.
struct FaceId {
  int axis = 0;
  int side = -1;  // -1 for the min face, +1 for the max face

  bool operator==(const FaceId&) const = default;
};

// Axis-aligned traction patch on the domain boundary. half_size is zero
// along the face normal; `traction` is a stress vector in N/mm^2.
template <int Dim>
struct TractionPatch {
  Vec<Dim> center;
  Vec<Dim> half_size;
  Vec<Dim> traction;

  int normal_axis(const DomainSpec<Dim>& domain, double tol = 1e-9) const {
    for (int a = 0; a < Dim; ++a) {
      if (half_size[a] == 0.0 && std::abs(std::abs(center[a]) - domain.extent(a)) <= tol)
        return a;
    }
    throw ConfigError("traction patch does not lie on the domain boundary");
  }

  // Patch measure: area in 3D, length x unit thickness in 2D.
  double area() const {
    double a = 1.0;
    for (int i = 0; i < Dim; ++i)
      if (half_size[i] > 0.0) a *= 2.0 * half_size[i];
    return a;
  }
};

template <int Dim>
struct BoundarySpec {
  std::vector<FaceId> fixed_faces;
  std::vector<TractionPatch<Dim>> tractions;

  void validate(const DomainSpec<Dim>& domain) const {
    for (const auto& f : fixed_faces) {
      if (f.axis < 0 || f.axis >= Dim || (f.side != -1 && f.side != 1))
        throw ConfigError("invalid fixed face");
    }
    for (const auto& t : tractions) {
      int na = t.normal_axis(domain);  // throws when off the boundary
      if (!(t.area() > 0.0)) throw ConfigError("traction patch area must be positive");
      for (int a = 0; a < Dim; ++a) {
        if (a == na) continue;
        if (std::abs(t.center[a]) + t.half_size[a] > domain.extent(a) + 1e-9)
          throw ConfigError("traction patch exceeds the domain face");
      }
    }
  }
};

// Void region: densities are penalized toward zero inside it.
template <int Dim>
struct PassiveRegion {
  enum class Shape { Box, Sphere };

  Shape shape = Shape::Box;
  Vec<Dim> box_min = Vec<Dim>::Zero();
  Vec<Dim> box_max = Vec<Dim>::Zero();
  Vec<Dim> center = Vec<Dim>::Zero();
  double radius = 0.0;

  // Closed-region convention: boundary points count as inside.
  bool contains(const Vec<Dim>& p) const {
    if (shape == Shape::Sphere) return (p - center).norm() <= radius;
    for (int a = 0; a < Dim; ++a)
      if (p[a] < box_min[a] || p[a] > box_max[a]) return false;
    return true;
  }
};

enum class BatchRole { Interior, Traction, Grid };

template <int Dim>
struct CoordBatch {
  PointMatrix<Dim> points;
  BatchRole role = BatchRole::Interior;
  std::uint64_t rng_seed = 0;
  // For traction batches: [begin, end) row range per patch.
  std::vector<std::pair<int, int>> patch_ranges;

  int size() const { return static_cast<int>(points.rows()); }
  Vec<Dim> point(int i) const { return points.row(i).transpose(); }
};

namespace detail {

// Deterministic anchor points on a fixed face, included in every interior
// batch so the batch always covers the fixed boundary.
inline constexpr int kFaceAnchorCount = 32;

template <int Dim>
PointMatrix<Dim> face_anchor_points(const DomainSpec<Dim>& domain, const FaceId& face) {
  PointMatrix<Dim> pts(kFaceAnchorCount, Dim);
  const double face_coord = face.side * domain.extent(face.axis);
  if constexpr (Dim == 2) {
    const int other = 1 - face.axis;
    for (int i = 0; i < kFaceAnchorCount; ++i) {
      const double t = (i + 0.5) / kFaceAnchorCount;
      pts(i, face.axis) = face_coord;
      pts(i, other) = (t - 0.5) * domain.normalized_dims[other];
    }
  } else {
    const int u = (face.axis + 1) % 3;
    const int v = (face.axis + 2) % 3;
    // 8 x 4 cell-centered lattice over the face rectangle.
    constexpr int nu = 8, nv = 4;
    int row = 0;
    for (int j = 0; j < nv; ++j) {
      for (int i = 0; i < nu; ++i, ++row) {
        pts(row, face.axis) = face_coord;
        pts(row, u) = ((i + 0.5) / nu - 0.5) * domain.normalized_dims[u];
        pts(row, v) = ((j + 0.5) / nv - 0.5) * domain.normalized_dims[v];
      }
    }
  }
  return pts;
}

}  // namespace detail

// Uniform samples covering each traction patch; one contiguous row range
// per patch so the Monte-Carlo weight A/N_b can be applied patch-wise.
template <int Dim>
CoordBatch<Dim> sample_traction(const DomainSpec<Dim>& domain, const BoundarySpec<Dim>& bc,
                                int n_b, const CounterRng& rng) {
  if (bc.tractions.empty()) throw ConfigError("no traction patches defined");
  if (n_b < 1) throw ConfigError("traction sample count must be >= 1");
  CoordBatch<Dim> batch;
  batch.role = BatchRole::Traction;
  batch.points.resize(n_b * static_cast<int>(bc.tractions.size()), Dim);
  int row = 0;
  std::uint64_t ctr = 0;
  for (const auto& patch : bc.tractions) {
    (void)patch.normal_axis(domain);
    const int begin = row;
    for (int i = 0; i < n_b; ++i, ++row) {
      for (int a = 0; a < Dim; ++a) {
        const double u = rng.uniform(ctr++);
        batch.points(row, a) = patch.center[a] + (2.0 * u - 1.0) * patch.half_size[a];
      }
    }
    batch.patch_ranges.emplace_back(begin, row);
  }
  return batch;
}

// Uniform i.i.d. interior batch with the given traction samples and one
// anchor set per fixed face appended, so every batch covers the load and
// fixed-boundary points.
template <int Dim>
CoordBatch<Dim> sample_interior(const DomainSpec<Dim>& domain, const BoundarySpec<Dim>& bc,
                                int n, const CounterRng& rng,
                                const CoordBatch<Dim>* traction_batch = nullptr) {
  if (n < 1) throw ConfigError("interior batch size must be >= 1");
  const int n_traction = traction_batch ? traction_batch->size() : 0;
  const int n_anchor = detail::kFaceAnchorCount * static_cast<int>(bc.fixed_faces.size());
  const int n_forced = n_traction + n_anchor;
  if (n < n_forced) throw ConfigError("batch size smaller than forced-inclusion point count");

  CoordBatch<Dim> batch;
  batch.role = BatchRole::Interior;
  batch.points.resize(n, Dim);
  const int n_uniform = n - n_forced;
  std::uint64_t ctr = 0;
  for (int i = 0; i < n_uniform; ++i)
    for (int a = 0; a < Dim; ++a)
      batch.points(i, a) = (rng.uniform(ctr++) - 0.5) * domain.normalized_dims[a];
  int row = n_uniform;
  if (traction_batch) {
    batch.points.middleRows(row, n_traction) = traction_batch->points;
    row += n_traction;
  }
  for (const auto& face : bc.fixed_faces) {
    batch.points.middleRows(row, detail::kFaceAnchorCount) =
        detail::face_anchor_points(domain, face);
    row += detail::kFaceAnchorCount;
  }
  return batch;
}

// Cell-centered regular grid; identical on every call.
template <int Dim>
CoordBatch<Dim> constant_grid(const DomainSpec<Dim>& domain, const std::array<int, Dim>& resolution) {
  long total = 1;
  for (int a = 0; a < Dim; ++a) {
    if (resolution[a] < 1) throw ConfigError("grid resolution must be >= 1 per axis");
    total *= resolution[a];
  }
  CoordBatch<Dim> batch;
  batch.role = BatchRole::Grid;
  batch.points.resize(total, Dim);
  std::array<int, Dim> idx{};
  for (long row = 0; row < total; ++row) {
    for (int a = 0; a < Dim; ++a) {
      const double cell = domain.normalized_dims[a] / resolution[a];
      batch.points(row, a) = -domain.extent(a) + (idx[a] + 0.5) * cell;
    }
    for (int a = 0; a < Dim; ++a) {  // odometer, axis 0 fastest
      if (++idx[a] < resolution[a]) break;
      idx[a] = 0;
    }
  }
  return batch;
}

template <int Dim>
std::vector<char> in_passive(const CoordBatch<Dim>& batch, const PassiveRegion<Dim>& region) {
  std::vector<char> mask(batch.size());
  for (int i = 0; i < batch.size(); ++i) mask[i] = region.contains(batch.point(i)) ? 1 : 0;
  return mask;
}

}  // namespace mftop
