#pragma once

#include <string>
#include <vector>

#include "carpet/geometry.hpp"
#include "carpet/linalg.hpp"

namespace carpet {

/// Face-to-face crosswire resistances and the derived exponents.
struct RhoReport {
  int mass = 0;
  int length_scale = 0;
  std::vector<double> resistance;  // R_n for n = 0..n_max
  std::vector<double> ratios;      // R_{n+1} / R_n
  std::vector<SolveDiagnostics> diagnostics;
  double rho_hat = 0.0;   // last raw ratio
  double aitken = 0.0;    // Aitken delta-squared on the last three ratios (NaN if undefined)
  bool monotone = true;   // ratios non-decreasing
  double alpha = 0.0;
  double beta0 = 0.0;     // log(m rho_hat) / log L
  /// rho_hat * m >= L^2, the operative direction (beta0 >= 2).
  bool rho_m_at_least_L2 = false;
  /// rho_hat <= L^2 / m, reported only.
  bool rho_at_most_L2_over_m = false;
};

RhoReport rho_estimate(const Carpet& carpet, int n_max, const SolverOptions& opt = {},
                       std::size_t cell_budget = kDefaultCellBudget);

/// Rebuild the derived fields of a report from resistance values.
void finish_rho_report(RhoReport& r);

enum class GammaModel { Crosswire, Cellgraph };
GammaModel parse_gamma_model(const std::string& s);
std::string to_string(GammaModel m);

/// Conductance across one level-n cell for the model network at depth n_max,
/// normalised so gamma_0 = 1: gamma_n = R_{n_max} / R_{n_max - n}.
struct GammaReport {
  GammaModel model = GammaModel::Crosswire;
  int n_max = 0;
  int mass = 0;
  std::vector<double> resistance;  // model network R_j, j = 0..n_max
  std::vector<double> gamma;       // gamma_0..gamma_{n_max}
  std::vector<SolveDiagnostics> diagnostics;
  double comparability_lower = 0.0;  // min gamma_{n+1} / gamma_n
  double comparability_upper = 0.0;  // max gamma_{n+1} / gamma_n

  struct LowerBoundTerm {
    int n = 0;
    int m = 0;
    double ratio = 0.0;  // gamma_{n+m} / (gamma_m rho^n)
  };
  std::vector<LowerBoundTerm> lower_bound_terms;  // n >= 1, m >= 0, n + m <= n_max
  double lower_bound_fit = 0.0;                   // median of the ratios
  double lower_bound_min = 0.0;
  double rho_used = 0.0;
};

GammaReport gamma_sequence(const Carpet& carpet, int n_max, GammaModel model, double rho_hat,
                           const SolverOptions& opt = {}, std::size_t cell_budget = kDefaultCellBudget);
void finish_gamma_report(GammaReport& g, double rho_hat);

/// Piecewise-linear time scale with H(L^{-jk}) = 1 / (gamma_{jk} m^{jk}).
class TimeScale {
 public:
  TimeScale(const GammaReport& gamma, int length_scale, double beta0);

  int k() const noexcept { return k_; }
  double beta0() const noexcept { return beta0_; }
  const std::vector<double>& radii() const noexcept { return radii_; }  // decreasing, radii_[0] = 1
  const std::vector<double>& values() const noexcept { return values_; }
  double min_radius() const { return radii_.back(); }

  /// H(r) for r in {0} u [min_radius, 1]; DomainError otherwise.
  double operator()(double r) const;

 private:
  int k_ = 1;
  double beta0_ = 2.0;
  std::vector<double> radii_;
  std::vector<double> values_;
};

/// Constants of the power bounds C3 (t/s)^b0 <= H(t)/H(s) <= C4 (t/s)^b'
/// measured on grid radii, the derived constants valid between grid points,
/// the time-doubling constant and the band of H / H0.
struct TimeScaleReport {
  int k = 0;
  double beta0 = 0.0;
  double beta_prime = 0.0;
  double c3_grid = 0.0;
  double c4_grid = 0.0;
  double c3 = 0.0;   // valid for all 0 < s <= t <= 1 in the table range
  double c4 = 0.0;
  double grid_step_max = 0.0;  // max H(L^{-jk}) / H(L^{-(j+1)k})
  double c5 = 0.0;             // max H(2r)/H(r) on sampled r
  double c6 = 0.0;             // max H/H0 on sampled r
  double h_over_h0_min = 0.0;
  std::size_t sampled_pairs = 0;
  std::size_t violations = 0;  // sampled pairs outside the (c3, c4) bounds
};

TimeScaleReport time_scale_report(const TimeScale& H, const GammaReport& gamma, int length_scale,
                                  std::size_t samples = 2000, std::uint64_t seed = 7);

/// Resistance between B(x0, r) and the complement of B(x0, 2r) on the level-n
/// cell graph, normalised by the face-to-face resistance of the same graph,
/// against H(r) / r^alpha. Balls use the l-infinity metric on cell centres.
struct AnnulusResult {
  std::size_t center = 0;
  double radius = 0.0;
  std::size_t ball_cells = 0;
  std::size_t outside_cells = 0;
  double resistance = 0.0;  // normalised
  double ratio = 0.0;       // resistance / (H(r) / r^alpha)
  SolveDiagnostics diagnostics;
};

AnnulusResult res_annulus_check(const CellGraph& graph, std::size_t center, double r, const TimeScale& H,
                                const SolverOptions& opt = {});

struct AnnulusSweep {
  std::vector<AnnulusResult> results;
  double min_ratio = 0.0;
  double max_ratio = 0.0;
  double spread = 0.0;  // max / min
};

/// Centres are every `stride`-th cell whose double ball leaves a non-empty
/// complement.
AnnulusSweep res_annulus_sweep(const CellGraph& graph, double r, const TimeScale& H, std::size_t stride,
                               const SolverOptions& opt = {});

}  // namespace carpet
