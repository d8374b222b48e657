#include "urbanflow/flow_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "urbanflow/errors.hpp"

namespace urbanflow {

namespace d3q19 {

int find(int cx, int cy, int cz) {
  for (int i = 0; i < Q; ++i) {
    if (c[i][0] == cx && c[i][1] == cy && c[i][2] == cz) return i;
  }
  return -1;
}

int opposite(int i) { return find(-c[i][0], -c[i][1], -c[i][2]); }

double equilibrium(int i, double rho, double ux, double uy, double uz) {
  const double cu = c[i][0] * ux + c[i][1] * uy + c[i][2] * uz;
  const double uu = ux * ux + uy * uy + uz * uz;
  return w[i] * rho * (1.0 + 3.0 * cu + 4.5 * cu * cu - 1.5 * uu);
}

}  // namespace d3q19

void FlowConfig::validate() const {
  if (!(tau > 0.5)) throw ValidationError("flow config: tau must exceed 0.5");
  if (!(inlet_speed_lattice > 0.0 && inlet_speed_lattice < 0.15)) {
    throw ValidationError("flow config: inlet_speed_lattice must lie in (0, 0.15)");
  }
  if (max_steps < 0) throw ValidationError("flow config: max_steps must be >= 0");
  if (!(convergence_tol > 0.0)) throw ValidationError("flow config: convergence_tol must be > 0");
  if (!(reference_speed_mps > 0.0)) throw ValidationError("flow config: reference_speed_mps must be > 0");
  if (check_interval < 1) throw ValidationError("flow config: check_interval must be >= 1");
  if (threads < 1) throw ValidationError("flow config: threads must be >= 1");
}

nlohmann::json to_json(const FlowConfig& cfg) {
  return {{"inlet_speed_lattice", cfg.inlet_speed_lattice},
          {"tau", cfg.tau},
          {"max_steps", cfg.max_steps},
          {"convergence_tol", cfg.convergence_tol},
          {"reference_speed_mps", cfg.reference_speed_mps},
          {"check_interval", cfg.check_interval},
          {"ground_no_slip", cfg.ground_no_slip}};
}

FlowConfig flow_config_from_json(const nlohmann::json& j, FlowConfig base) {
  if (!j.is_object()) throw ValidationError("flow config must be a JSON object");
  try {
    base.inlet_speed_lattice = j.value("inlet_speed_lattice", base.inlet_speed_lattice);
    base.tau = j.value("tau", base.tau);
    base.max_steps = j.value("max_steps", base.max_steps);
    base.convergence_tol = j.value("convergence_tol", base.convergence_tol);
    base.reference_speed_mps = j.value("reference_speed_mps", base.reference_speed_mps);
    base.check_interval = j.value("check_interval", base.check_interval);
    base.ground_no_slip = j.value("ground_no_slip", base.ground_no_slip);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("flow config: ") + e.what());
  }
  base.validate();
  return base;
}

Lattice::Lattice(const VoxelGrid& occupancy, const FlowConfig& cfg)
    : dims_(occupancy.dims()),
      cells_(occupancy.voxel_count()),
      cfg_(cfg),
      resolution_(occupancy.resolution()),
      origin_(occupancy.origin()) {
  cfg_.validate();
  require_channels(occupancy, 1, "flow oracle occupancy");
  if (!occupancy.is_binary()) throw ValidationError("flow oracle: occupancy must be binary {0,1}");
  if (dims_[0] < 2) throw ValidationError("flow oracle: need at least 2 cells along x");
  if (cells_ * d3q19::Q > std::numeric_limits<std::int32_t>::max()) {
    throw ValidationError("flow oracle: grid too large");
  }

  const auto [nx, ny, nz] = dims_;
  flags_.assign(static_cast<std::size_t>(cells_), CellType::Fluid);
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        const auto cell = occupancy.index(x, y, z);
        if (occupancy.data()[cell] == 1.0f) {
          flags_[cell] = CellType::Solid;
        } else if (x == 0) {
          flags_[cell] = CellType::Inlet;
        } else if (x == nx - 1) {
          flags_[cell] = CellType::Outlet;
        } else if (y == 0 || y == ny - 1 || z == nz - 1 || (z == 0 && !cfg_.ground_no_slip)) {
          flags_[cell] = CellType::Slip;
        }
      }
  build_stream_table();

  g_.assign(static_cast<std::size_t>(cells_ * d3q19::Q), 0.0f);
  g_next_ = g_;
  initialize(1.0, {cfg_.inlet_speed_lattice, 0.0, 0.0});
}

void Lattice::build_stream_table() {
  using namespace d3q19;
  const auto [nx, ny, nz] = dims_;
  const auto cell_of = [&](std::int64_t x, std::int64_t y, std::int64_t z) {
    return (z * ny + y) * nx + x;
  };
  src_.assign(static_cast<std::size_t>(cells_ * Q), 0);
  neighbor_.assign(static_cast<std::size_t>(cells_), -1);
  regular_.assign(static_cast<std::size_t>(cells_), 0);

  // Source of population i arriving at (x, y, z).
  auto source = [&](std::int64_t x, std::int64_t y, std::int64_t z, int i) -> std::int64_t {
    const auto self = cell_of(x, y, z);
    std::array<std::int64_t, 3> s{x - c[i][0], y - c[i][1], z - c[i][2]};
    std::array<int, 3> dir{c[i][0], c[i][1], c[i][2]};
    if (s[2] < 0) {
      if (cfg_.ground_no_slip) return self * Q + opposite(i);
      dir[2] = -dir[2];
      s[2] = z;
    }
    if (s[2] >= nz) {
      dir[2] = -dir[2];
      s[2] = z;
    }
    if (s[1] < 0 || s[1] >= ny) {
      dir[1] = -dir[1];
      s[1] = y;
    }
    if (s[0] < 0 || s[0] >= nx) return self * Q + i;
    const auto src_cell = cell_of(s[0], s[1], s[2]);
    if (flags_[src_cell] == CellType::Solid) return self * Q + opposite(i);
    return src_cell * Q + find(dir[0], dir[1], dir[2]);
  };

  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        const auto cell = cell_of(x, y, z);
        const auto type = flags_[cell];
        if (type == CellType::Solid) continue;
        if (type == CellType::Inlet || type == CellType::Outlet) {
          const auto n = cell_of(type == CellType::Inlet ? x + 1 : x - 1, y, z);
          if (flags_[n] != CellType::Solid) neighbor_[cell] = n;
          continue;
        }
        bool regular = true;
        for (int i = 0; i < Q; ++i) {
          const auto from = source(x, y, z, i);
          src_[cell * Q + i] = static_cast<std::int32_t>(from);
          regular = regular && from == (cell - (c[i][2] * ny + c[i][1]) * nx - c[i][0]) * Q + i;
        }
        regular_[cell] = regular;
      }
}

void Lattice::initialize(double rho, const std::array<double, 3>& u) {
  using namespace d3q19;
  for (std::int64_t cell = 0; cell < cells_; ++cell) {
    const auto type = flags_[cell];
    std::array<double, 3> uc = u;
    if (type == CellType::Solid) uc = {0, 0, 0};
    if (type == CellType::Inlet) uc = {cfg_.inlet_speed_lattice, 0, 0};
    const double r = type == CellType::Solid ? 1.0 : rho;
    for (int i = 0; i < Q; ++i) {
      g_[cell * Q + i] = static_cast<float>(equilibrium(i, r, uc[0], uc[1], uc[2]) - w[i]);
    }
  }
  g_next_ = g_;
  steps_ = 0;
  finite_ = true;
  first_bad_step_ = -1;
}

namespace {

// Equilibrium minus weight, written so that the rest state is exactly zero.
inline double shifted_equilibrium(int i, double drho, double ux, double uy, double uz) {
  using namespace d3q19;
  const double rho = 1.0 + drho;
  const double cu = c[i][0] * ux + c[i][1] * uy + c[i][2] * uz;
  const double uu = ux * ux + uy * uy + uz * uz;
  return w[i] * (drho + rho * (3.0 * cu + 4.5 * cu * cu - 1.5 * uu));
}

}  // namespace

void Lattice::step() {
  using namespace d3q19;
  const double omega = 1.0 / cfg_.tau;
  const double u_in = cfg_.inlet_speed_lattice;
  const auto plane = dims_[0] * dims_[1];
  const float* g = g_.data();
  float* out = g_next_.data();
  const std::int32_t* src = src_.data();
  const std::int64_t* nbr = neighbor_.data();
  const CellType* flags = flags_.data();
  const std::uint8_t* regular = regular_.data();
  std::array<std::int64_t, Q> pull{};
  for (int i = 0; i < Q; ++i) {
    pull[i] = -((c[i][2] * dims_[1] + c[i][1]) * dims_[0] + c[i][0]) * Q + i;
  }
  bool bad = false;

#pragma omp parallel for schedule(static) num_threads(cfg_.threads) reduction(|| : bad) if (cfg_.threads > 1)
  for (std::int64_t z = 0; z < dims_[2]; ++z) {
    for (std::int64_t cell = z * plane; cell < (z + 1) * plane; ++cell) {
      const CellType type = flags[cell];
      if (type == CellType::Solid) continue;
      if (type == CellType::Inlet || type == CellType::Outlet) {
        // Non-equilibrium extrapolation from the interior neighbour's last
        // post-collision state: the inlet imposes velocity, the outlet
        // imposes unit density.
        const std::int64_t nb = nbr[cell];
        double drho_n = 0.0, ux_n = 0.0, uy_n = 0.0, uz_n = 0.0;
        double gn[Q];
        if (nb >= 0) {
          double jx = 0.0, jy = 0.0, jz = 0.0;
          for (int i = 0; i < Q; ++i) {
            gn[i] = g[nb * Q + i];
            drho_n += gn[i];
            jx += c[i][0] * gn[i];
            jy += c[i][1] * gn[i];
            jz += c[i][2] * gn[i];
          }
          const double inv = 1.0 / (1.0 + drho_n);
          ux_n = jx * inv;
          uy_n = jy * inv;
          uz_n = jz * inv;
          bad = bad || !std::isfinite(drho_n);
        }
        const bool inlet = type == CellType::Inlet;
        const double drho_b = inlet ? drho_n : 0.0;
        const double ux_b = inlet ? u_in : ux_n;
        const double uy_b = inlet ? 0.0 : uy_n;
        const double uz_b = inlet ? 0.0 : uz_n;
        for (int i = 0; i < Q; ++i) {
          double v = shifted_equilibrium(i, drho_b, ux_b, uy_b, uz_b);
          if (nb >= 0) v += gn[i] - shifted_equilibrium(i, drho_n, ux_n, uy_n, uz_n);
          out[cell * Q + i] = static_cast<float>(v);
        }
        continue;
      }
      double gi[Q];
      if (regular[cell]) {
        const float* base = g + cell * Q;
        for (int i = 0; i < Q; ++i) gi[i] = base[pull[i]];
      } else {
        const std::int32_t* s = src + cell * Q;
        for (int i = 0; i < Q; ++i) gi[i] = g[s[i]];
      }

      double drho = 0.0, jx = 0.0, jy = 0.0, jz = 0.0;
      for (int i = 0; i < Q; ++i) {
        drho += gi[i];
        jx += c[i][0] * gi[i];
        jy += c[i][1] * gi[i];
        jz += c[i][2] * gi[i];
      }
      bad = bad || !std::isfinite(drho);
      const double rho = 1.0 + drho;
      const double inv = 1.0 / rho;
      const double ux = jx * inv, uy = jy * inv, uz = jz * inv;
      const double uu = 1.5 * (ux * ux + uy * uy + uz * uz);
      for (int i = 0; i < Q; ++i) {
        const double cu = c[i][0] * ux + c[i][1] * uy + c[i][2] * uz;
        const double geq = w[i] * (drho + rho * (3.0 * cu + 4.5 * cu * cu - uu));
        out[cell * Q + i] = static_cast<float>(gi[i] + omega * (geq - gi[i]));
      }
    }
  }
  g_.swap(g_next_);
  ++steps_;
  if (bad && finite_) {
    finite_ = false;
    first_bad_step_ = steps_;
  }
}

double Lattice::total_mass() const {
  double mass = 0.0;
  for (std::int64_t cell = 0; cell < cells_; ++cell) {
    if (flags_[cell] == CellType::Solid) continue;
    for (int i = 0; i < d3q19::Q; ++i) mass += distribution(i, cell);
  }
  return mass;
}

std::array<std::vector<double>, 3> Lattice::velocity() const {
  using namespace d3q19;
  std::array<std::vector<double>, 3> u;
  for (auto& comp : u) comp.assign(static_cast<std::size_t>(cells_), 0.0);
  for (std::int64_t cell = 0; cell < cells_; ++cell) {
    if (flags_[cell] == CellType::Solid) continue;
    double drho = 0.0, jx = 0.0, jy = 0.0, jz = 0.0;
    for (int i = 0; i < Q; ++i) {
      const double gi = g_[cell * Q + i];
      drho += gi;
      jx += c[i][0] * gi;
      jy += c[i][1] * gi;
      jz += c[i][2] * gi;
    }
    const double inv = 1.0 / (1.0 + drho);
    u[0][cell] = jx * inv;
    u[1][cell] = jy * inv;
    u[2][cell] = jz * inv;
  }
  return u;
}

VoxelGrid Lattice::velocity_grid(double scale) const {
  const auto u = velocity();
  VoxelGrid grid(dims_, 3, resolution_, origin_);
  for (int a = 0; a < 3; ++a) {
    auto out = grid.channel(a);
    for (std::int64_t cell = 0; cell < cells_; ++cell) {
      out[cell] = flags_[cell] == CellType::Solid ? 0.0f : static_cast<float>(u[a][cell] * scale);
    }
  }
  return grid;
}

FlowSolution solve_steady(const VoxelGrid& occupancy, const FlowConfig& cfg) {
  Lattice lattice(occupancy, cfg);
  FlowSolution sol;
  auto previous = lattice.velocity();

  while (lattice.steps_taken() < cfg.max_steps) {
    const int chunk = std::min(cfg.check_interval, cfg.max_steps - lattice.steps_taken());
    for (int s = 0; s < chunk; ++s) {
      lattice.step();
      if (!lattice.finite()) {
        std::ostringstream msg;
        msg << "flow oracle diverged: non-finite distribution at step " << lattice.first_bad_step();
        throw SolverDiverged(lattice.first_bad_step(), msg.str());
      }
    }
    auto current = lattice.velocity();
    double residual = 0.0;
    for (int a = 0; a < 3; ++a) {
      for (std::size_t k = 0; k < current[a].size(); ++k) {
        residual = std::max(residual, std::abs(current[a][k] - previous[a][k]));
      }
    }
    previous = std::move(current);
    sol.residual = residual;
    sol.residual_history.push_back(residual);
    if (residual < cfg.convergence_tol) {
      sol.converged = true;
      break;
    }
  }
  sol.steps = lattice.steps_taken();
  sol.velocity = lattice.velocity_grid(cfg.velocity_scale());
  return sol;
}

double convergence_residual(const VoxelGrid& u_prev, const VoxelGrid& u_curr) {
  require_channels(u_prev, 3, "convergence_residual");
  require_channels(u_curr, 3, "convergence_residual");
  if (u_prev.dims() != u_curr.dims()) throw ValidationError("convergence_residual: dims differ");
  double r = 0.0;
  const auto a = u_prev.data();
  const auto b = u_curr.data();
  for (std::size_t k = 0; k < a.size(); ++k) {
    r = std::max(r, std::abs(static_cast<double>(b[k]) - static_cast<double>(a[k])));
  }
  return r;
}

}  // namespace urbanflow
