#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "carpet/geometry.hpp"
#include "carpet/linalg.hpp"
#include "carpet/rng.hpp"

namespace carpet {

/// Monte Carlo settings. Sample i always draws from Philox stream (seed, i),
/// so results do not depend on `threads`.
struct WalkConfig {
  std::uint64_t seed = 1;
  std::size_t samples = 10000;
  std::size_t step_cap = 100'000'000;
  unsigned threads = 1;
};

/// Lazy simple random walk kernel P = I/2 + D^{-1} A / 2 (row-stochastic).
SparseMatrix lazy_kernel(const CellGraph& graph);
/// max |deg(x) P(x,y) - deg(y) P(y,x)|.
double reversibility_residual(const CellGraph& graph, const SparseMatrix& P);

/// One lazy step from cell i.
std::size_t lazy_step(const CellGraph& graph, std::size_t i, Philox4x32& rng);

/// Runs f(i, rng) for i in [0, samples) on `threads` threads and returns the
/// results in sample order.
std::vector<double> run_samples(const WalkConfig& cfg, const std::function<double(std::size_t, Philox4x32&)>& f);

// ---------------------------------------------------------------------------
// Exit times

/// Mean exit time from F_0 of the lazy walk in which each face of the unit
/// cube touched by a cell is an exit of conductance 2 (half a cell away).
struct ExitLevel {
  int level = 0;
  std::size_t cells = 0;
  std::size_t start = 0;
  double mean_steps = 0.0;
  bool degenerate = false;  // level 0: the single cell is the boundary scale
  SolveDiagnostics diagnostics;
};

struct ExitReport {
  std::vector<ExitLevel> levels;
  std::vector<double> ratios;  // mean(n+1) / mean(n) for n >= 1
};

/// Expected exit steps from every cell (exact linear solve).
Vector exit_times(const CellGraph& graph, const SolverOptions& opt, SolveDiagnostics* diag = nullptr);
ExitReport exit_time_scaling(const Carpet& carpet, int n_max, const SolverOptions& opt = {});

struct MonteCarloMean {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t samples = 0;
};
MonteCarloMean exit_time_monte_carlo(const CellGraph& graph, std::size_t start, const WalkConfig& cfg);

// ---------------------------------------------------------------------------
// Moves between half-faces

struct WilsonInterval {
  double lower = 0.0;
  double upper = 0.0;
};
WilsonInterval wilson_interval(std::size_t successes, std::size_t trials, double z);

struct MoveReport {
  int level = 0;
  int walk_level = 0;
  MoveKind kind = MoveKind::Corner;
  std::size_t domain_cells = 0;
  std::size_t start_cells = 0;
  std::size_t target_cells = 0;
  std::size_t start = 0;           // worst start (walk-level cell index)
  double exact_worst = 0.0;        // harmonic solve at the worst start
  double exact_best = 0.0;
  std::size_t successes = 0;
  std::size_t samples = 0;
  double estimate = 0.0;
  WilsonInterval ci95;
  WilsonInterval ci99;
  double q0 = 0.0;  // 2^{-2 d^2}
  double q1 = 0.0;  // 2^{-d 2^d}
  double floor = 0.0;  // q0 q1
  bool clears_floor = false;  // 99% lower bound above q0 q1
  bool anomaly = false;       // zero successes
};

/// Probability that the walk on level n+2 cells, started from the worst cell
/// of Q* touching A0, reaches a cell touching A1 before leaving the union R
/// of the 2^d level-n cubes around the vertex v* of Q* in A0.
MoveReport move_probability(const Carpet& carpet, int level, const HalfFace& a0, const HalfFace& a1,
                            const WalkConfig& cfg);

// ---------------------------------------------------------------------------
// Coupling

struct CouplingReport {
  std::size_t samples = 0;
  std::size_t coupled = 0;
  double estimate = 0.0;
  WilsonInterval ci95;
  double distance = 0.0;  // l-infinity distance of the centres
  double radius = 0.0;
  double mean_meeting_steps = 0.0;  // over coupled samples
};

/// Mirror-coupled lazy walks from cells x, y that differ along exactly one
/// axis and are m-associated: moves are reflected while both neighbourhoods
/// are mirror images, independent otherwise, and adjacent walkers use a
/// maximal meeting step. Success means meeting before either leaves B(x, r).
CouplingReport coupling_experiment(const CellGraph& graph, std::size_t x, std::size_t y, int m, double r,
                                   const WalkConfig& cfg);

// ---------------------------------------------------------------------------
// Harnack

struct HarnackReport {
  std::size_t center = 0;
  double radius = 0.0;
  std::size_t ball_cells = 0;
  std::size_t half_ball_cells = 0;
  std::size_t boundary_cells = 0;
  double ratio = 0.0;         // max over indicator data of sup/inf on the half ball
  std::size_t worst_boundary = 0;
  SolveDiagnostics diagnostics;
};

/// Harmonic functions on the component of B(center, R) containing the centre,
/// with boundary data on the outside cells adjacent to it. The grid ball and a
/// layer of exterior cells must fit inside the unit cube (DomainError otherwise).
HarnackReport harnack_ratio(const CellGraph& graph, std::size_t center, double R);
/// sup/inf over the half ball for one boundary data vector (ordered as the
/// sorted exterior boundary cells).
double harnack_ratio_for(const CellGraph& graph, std::size_t center, double R, const std::vector<double>& data);
std::vector<std::size_t> harnack_boundary(const CellGraph& graph, std::size_t center, double R);

// ---------------------------------------------------------------------------
// Heat kernel

enum class HeatKernelMode { MatrixPower, MonteCarlo };

struct HeatKernelEstimate {
  HeatKernelMode mode = HeatKernelMode::MatrixPower;
  std::vector<std::size_t> starts;
  std::vector<std::size_t> times;       // t (even step counts)
  std::vector<double> diagonal;         // mean over starts of p_t(x,x) / pi(x)
  std::vector<double> diagonal_stderr;  // Monte Carlo only
  double window_lo = 0.0;
  double window_hi = 0.0;
  std::size_t fit_points = 0;
  double slope = 0.0;
  double spectral_dimension = 0.0;  // -2 slope
  double stochasticity_residual = 0.0;
  // Off-diagonal table and stretched-exponential fit (reported only).
  struct OffDiagonal {
    double distance = 0.0;
    std::size_t t = 0;
    double value = 0.0;
  };
  std::vector<OffDiagonal> off_diagonal;
  double eta_hat = 0.0;
  std::size_t eta_points = 0;
  std::string diagnostic;  // non-empty when the fitting window is too narrow
};

struct HeatKernelOptions {
  HeatKernelMode mode = HeatKernelMode::MatrixPower;
  double beta0 = 2.0;
  std::size_t max_starts = 64;
  std::size_t points_per_decade = 16;
  double equilibrium_factor = 2.0;  // drop points with p < factor * equilibrium
  WalkConfig walk;                  // Monte Carlo settings
  std::size_t mc_max_time = 64;     // Monte Carlo horizon
};

/// Interior cells (l-infinity distance to the cube boundary >= side/4),
/// thinned deterministically to at most `max_starts`.
std::vector<std::size_t> interior_starts(const CellGraph& graph, std::size_t max_starts);

HeatKernelEstimate heat_kernel(const CellGraph& graph, const HeatKernelOptions& opt);

/// Fitting window [L^beta0, L^(n beta0)] in steps.
std::pair<double, double> heat_kernel_window(const CellGraph& graph, double beta0);

/// P^t(x, x) / pi(x) for t = 0..t_max, by matrix powers.
std::vector<double> return_density(const CellGraph& graph, std::size_t x, std::size_t t_max);

struct ReturnEstimate {
  std::vector<double> value;
  std::vector<double> stderr_;
};
/// Monte Carlo estimate of P^t(x, x) / pi(x) for t = 0..t_max.
ReturnEstimate return_density_monte_carlo(const CellGraph& graph, std::size_t x, std::size_t t_max,
                                          const WalkConfig& cfg);

}  // namespace carpet
