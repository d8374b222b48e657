#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "urbanflow/voxel_grid.hpp"

namespace urbanflow {

/// D3Q19 velocity set: rest, six axis neighbours, twelve edge diagonals.
namespace d3q19 {
inline constexpr int Q = 19;
inline constexpr std::array<std::array<int, 3>, Q> c{{
    {0, 0, 0},
    {1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1},
    {1, 1, 0}, {-1, -1, 0}, {1, -1, 0}, {-1, 1, 0},
    {1, 0, 1}, {-1, 0, -1}, {1, 0, -1}, {-1, 0, 1},
    {0, 1, 1}, {0, -1, -1}, {0, 1, -1}, {0, -1, 1},
}};
inline constexpr std::array<double, Q> w{
    1.0 / 3.0,
    1.0 / 18.0, 1.0 / 18.0, 1.0 / 18.0, 1.0 / 18.0, 1.0 / 18.0, 1.0 / 18.0,
    1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0,
    1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0, 1.0 / 36.0,
};
/// Index of the direction with the given components (-1 if not in the set).
int find(int cx, int cy, int cz);
int opposite(int i);
double equilibrium(int i, double rho, double ux, double uy, double uz);
}  // namespace d3q19

enum class CellType : std::uint8_t { Fluid, Solid, Inlet, Outlet, Slip };

struct FlowConfig {
  double inlet_speed_lattice = 0.05;
  double tau = 0.8;
  int max_steps = 20000;
  double convergence_tol = 1e-6;
  double reference_speed_mps = 5.0;
  int check_interval = 100;
  /// Bounce-back at z = 0. When false the ground is a free-slip plane.
  bool ground_no_slip = true;
  /// Worker threads for the update; 1 is the sequential reference mode.
  int threads = 1;

  void validate() const;
  double velocity_scale() const { return reference_speed_mps / inlet_speed_lattice; }
};

nlohmann::json to_json(const FlowConfig& cfg);
FlowConfig flow_config_from_json(const nlohmann::json& j, FlowConfig base = {});

/// BGK lattice-Boltzmann state over the occupancy grid.
///
/// Wind enters at x = 0 through a velocity inlet and leaves at x = nx-1
/// through a unit-density outlet with zero-gradient velocity; both use
/// non-equilibrium extrapolation from the adjacent interior cell. Top and
/// lateral faces are free-slip, the ground is no-slip, and occupied voxels
/// are bounce-back obstacles.
///
/// Distributions are stored as f32 offsets from the lattice weights
/// (f_i - w_i); moments are accumulated in f64.
class Lattice {
 public:
  Lattice(const VoxelGrid& occupancy, const FlowConfig& cfg);

  /// Sets every non-solid cell to the equilibrium of (rho, u); inlet cells
  /// take the inlet velocity.
  void initialize(double rho, const std::array<double, 3>& u);
  void step();
  void run(int steps) {
    for (int s = 0; s < steps; ++s) step();
  }

  int steps_taken() const { return steps_; }
  const Dims3& dims() const { return dims_; }
  std::int64_t cells() const { return cells_; }
  std::span<const CellType> flags() const { return flags_; }
  /// Post-collision distribution of direction i at a cell.
  double distribution(int i, std::int64_t cell) const {
    return d3q19::w[i] + static_cast<double>(g_[cell * d3q19::Q + i]);
  }
  /// Raw storage, cell-major: g[cell * 19 + i] = f_i - w_i.
  std::span<const float> storage() const { return g_; }
  /// Sum of density over non-solid cells.
  double total_mass() const;
  /// Velocity per component (lattice units) from the current moments;
  /// solid cells are zero.
  std::array<std::vector<double>, 3> velocity() const;
  /// 3-channel grid of velocity * scale; solid voxels are exactly zero.
  VoxelGrid velocity_grid(double scale = 1.0) const;
  bool finite() const { return finite_; }
  /// Step index at which a non-finite density first appeared, or -1.
  int first_bad_step() const { return first_bad_step_; }

 private:
  void build_stream_table();

  Dims3 dims_;
  std::int64_t cells_;
  FlowConfig cfg_;
  double resolution_ = 1.0;
  Vec3 origin_{};
  std::vector<CellType> flags_;
  std::vector<std::int32_t> src_;  // per (cell, i): index into g_ to pull from
  std::vector<std::uint8_t> regular_;  // all 19 sources are plain neighbours
  std::vector<std::int64_t> neighbor_;  // interior neighbour of inlet/outlet cells
  std::vector<float> g_;
  std::vector<float> g_next_;
  int steps_ = 0;
  bool finite_ = true;
  int first_bad_step_ = -1;
};

struct FlowSolution {
  VoxelGrid velocity;  // m/s, C = 3
  int steps = 0;
  double residual = 0.0;  // lattice units
  bool converged = false;
  std::vector<double> residual_history;
};

/// Time-steps to steady state. Throws SolverDiverged on a non-finite
/// distribution and ValidationError on non-binary occupancy. Returns with
/// converged == false when max_steps is exhausted.
FlowSolution solve_steady(const VoxelGrid& occupancy, const FlowConfig& cfg);

/// Max over voxels and components of |u_curr - u_prev|.
double convergence_residual(const VoxelGrid& u_prev, const VoxelGrid& u_curr);

}  // namespace urbanflow
