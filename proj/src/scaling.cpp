#include "carpet/scaling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "carpet/error.hpp"
#include "carpet/network.hpp"

namespace carpet {

void finish_rho_report(RhoReport& r) {
  r.ratios.clear();
  for (std::size_t n = 0; n + 1 < r.resistance.size(); ++n) r.ratios.push_back(r.resistance[n + 1] / r.resistance[n]);
  r.monotone = true;
  for (std::size_t n = 0; n + 1 < r.ratios.size(); ++n)
    if (r.ratios[n + 1] < r.ratios[n] * (1 - 1e-9)) r.monotone = false;
  r.rho_hat = r.ratios.empty() ? NAN : r.ratios.back();
  r.aitken = NAN;
  if (r.ratios.size() >= 3) {
    const auto k = r.ratios.size();
    const double x0 = r.ratios[k - 3], x1 = r.ratios[k - 2], x2 = r.ratios[k - 1];
    const double den = (x2 - x1) - (x1 - x0);
    if (std::abs(den) > 1e-12 * std::abs(x2)) r.aitken = x2 - (x2 - x1) * (x2 - x1) / den;
  }
  const double L = r.length_scale, m = r.mass;
  r.alpha = std::log(m) / std::log(L);
  r.beta0 = std::log(m * r.rho_hat) / std::log(L);
  r.rho_m_at_least_L2 = r.rho_hat * m >= L * L;
  r.rho_at_most_L2_over_m = r.rho_hat <= L * L / m;
}

RhoReport rho_estimate(const Carpet& carpet, int n_max, const SolverOptions& opt, std::size_t cell_budget) {
  if (n_max < 2) throw PreconditionError("rho_estimate needs n_max >= 2");
  RhoReport r;
  r.mass = carpet.mass();
  r.length_scale = carpet.length_scale();
  for (int n = 0; n <= n_max; ++n) {
    const auto net = crosswire_network(carpet, n, cell_budget);
    auto res = effective_resistance(net, "A0", "A1", opt);
    r.resistance.push_back(res.resistance);
    r.diagnostics.push_back(res.diagnostics);
  }
  finish_rho_report(r);
  return r;
}

GammaModel parse_gamma_model(const std::string& s) {
  if (s == "crosswire") return GammaModel::Crosswire;
  if (s == "cellgraph") return GammaModel::Cellgraph;
  throw ConfigError("unknown gamma model '" + s + "' (expected crosswire or cellgraph)");
}

std::string to_string(GammaModel m) { return m == GammaModel::Crosswire ? "crosswire" : "cellgraph"; }

void finish_gamma_report(GammaReport& g, double rho_hat) {
  const int N = g.n_max;
  g.gamma.assign(static_cast<std::size_t>(N + 1), 0.0);
  for (int n = 0; n <= N; ++n) g.gamma[n] = g.resistance[N] / g.resistance[N - n];
  g.comparability_lower = std::numeric_limits<double>::infinity();
  g.comparability_upper = 0.0;
  for (int n = 0; n < N; ++n) {
    const double q = g.gamma[n + 1] / g.gamma[n];
    g.comparability_lower = std::min(g.comparability_lower, q);
    g.comparability_upper = std::max(g.comparability_upper, q);
  }
  g.rho_used = rho_hat;
  g.lower_bound_terms.clear();
  std::vector<double> ratios;
  for (int n = 1; n <= N; ++n)
    for (int m = 0; n + m <= N; ++m) {
      const double q = g.gamma[n + m] / (g.gamma[m] * std::pow(rho_hat, n));
      g.lower_bound_terms.push_back({n, m, q});
      ratios.push_back(q);
    }
  std::sort(ratios.begin(), ratios.end());
  if (ratios.empty()) {
    g.lower_bound_fit = g.lower_bound_min = NAN;
  } else {
    const auto k = ratios.size();
    g.lower_bound_fit = k % 2 ? ratios[k / 2] : 0.5 * (ratios[k / 2 - 1] + ratios[k / 2]);
    g.lower_bound_min = ratios.front();
  }
}

GammaReport gamma_sequence(const Carpet& carpet, int n_max, GammaModel model, double rho_hat, const SolverOptions& opt,
                           std::size_t cell_budget) {
  if (n_max < 1) throw PreconditionError("gamma_sequence needs n_max >= 1");
  if (!(rho_hat > 0)) throw DependencyError("gamma_sequence needs a positive resistance scale factor");
  GammaReport g;
  g.model = model;
  g.n_max = n_max;
  g.mass = carpet.mass();
  for (int j = 0; j <= n_max; ++j) {
    ResistanceNetwork net = model == GammaModel::Crosswire
                                ? crosswire_network(carpet, j, cell_budget)
                                : cell_network(CellGraph(carpet, j, cell_budget), true);
    auto res = effective_resistance(net, "A0", "A1", opt);
    g.resistance.push_back(res.resistance);
    g.diagnostics.push_back(res.diagnostics);
  }
  finish_gamma_report(g, rho_hat);
  return g;
}

// ---------------------------------------------------------------------------

TimeScale::TimeScale(const GammaReport& g, int length_scale, double beta0) : beta0_(beta0) {
  const int N = g.n_max;
  const double m = g.mass;
  auto weight = [&](int n) { return g.gamma[n] * std::pow(m, n); };
  int chosen = 0;
  for (int k = 1; k <= N && !chosen; ++k) {
    bool ok = true;
    for (int n = 0; n + k <= N; ++n)
      if (!(weight(n) < weight(n + k))) ok = false;
    if (ok) chosen = k;
  }
  if (!chosen)
    throw DependencyError("no k with gamma_n m^n < gamma_{n+k} m^{n+k} in the computed range; extend the gamma table");
  k_ = chosen;
  for (int j = 0; j * k_ <= N; ++j) {
    radii_.push_back(std::pow(static_cast<double>(length_scale), -j * k_));
    values_.push_back(1.0 / weight(j * k_));
  }
}

double TimeScale::operator()(double r) const {
  if (r == 0.0) return 0.0;
  const double eps = 1e-12;
  if (r > 1.0 + eps || r < radii_.back() * (1 - eps))
    throw DomainError("H(r) requested outside the tabulated range [" + std::to_string(radii_.back()) + ", 1]");
  r = std::clamp(r, radii_.back(), 1.0);
  for (std::size_t j = 0; j + 1 < radii_.size(); ++j) {
    if (r >= radii_[j + 1]) {
      const double w = (r - radii_[j + 1]) / (radii_[j] - radii_[j + 1]);
      return values_[j + 1] + w * (values_[j] - values_[j + 1]);
    }
  }
  return values_.front();
}

TimeScaleReport time_scale_report(const TimeScale& H, const GammaReport& gamma, int length_scale, std::size_t samples,
                                  std::uint64_t seed) {
  TimeScaleReport rep;
  const double L = length_scale;
  rep.k = H.k();
  rep.beta0 = H.beta0();
  rep.beta_prime = std::log(gamma.comparability_upper * gamma.mass) / std::log(L);
  const auto& R = H.radii();
  const auto& V = H.values();
  rep.c3_grid = std::numeric_limits<double>::infinity();
  rep.c4_grid = 0.0;
  for (std::size_t i = 0; i < R.size(); ++i)
    for (std::size_t j = i; j < R.size(); ++j) {
      const double ratio = V[i] / V[j], ts = R[i] / R[j];
      rep.c3_grid = std::min(rep.c3_grid, ratio / std::pow(ts, rep.beta0));
      rep.c4_grid = std::max(rep.c4_grid, ratio / std::pow(ts, rep.beta_prime));
    }
  rep.grid_step_max = 1.0;
  for (std::size_t j = 0; j + 1 < V.size(); ++j) rep.grid_step_max = std::max(rep.grid_step_max, V[j] / V[j + 1]);
  const double Lk = std::pow(L, rep.k);
  rep.c3 = std::min(rep.c3_grid * std::pow(Lk, -2 * rep.beta0), std::pow(Lk, -rep.beta0));
  rep.c4 = std::max(rep.c4_grid * std::pow(Lk, 2 * rep.beta_prime), rep.grid_step_max);

  std::mt19937_64 gen(seed);
  const double lo = std::log(H.min_radius());
  std::uniform_real_distribution<double> u(lo, 0.0);
  rep.sampled_pairs = samples;
  rep.c5 = 0.0;
  rep.c6 = 0.0;
  rep.h_over_h0_min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < samples; ++k) {
    double s = std::exp(u(gen)), t = std::exp(u(gen));
    if (s > t) std::swap(s, t);
    const double ratio = H(t) / H(s), ts = t / s;
    if (ratio < rep.c3 * std::pow(ts, rep.beta0) * (1 - 1e-12) ||
        ratio > rep.c4 * std::pow(ts, rep.beta_prime) * (1 + 1e-12))
      ++rep.violations;
    const double h0 = std::pow(t, rep.beta0);
    rep.c6 = std::max(rep.c6, H(t) / h0);
    rep.h_over_h0_min = std::min(rep.h_over_h0_min, H(t) / h0);
    if (s <= 0.5) rep.c5 = std::max(rep.c5, H(2 * s) / H(s));
  }
  return rep;
}

// ---------------------------------------------------------------------------

namespace {

double face_resistance(const CellGraph& graph, const SolverOptions& opt) {
  return effective_resistance(cell_network(graph, true), "A0", "A1", opt).resistance;
}

AnnulusResult annulus(const CellGraph& graph, const ResistanceNetwork& net, double face_R, std::size_t center, double r,
                      const TimeScale& H, const SolverOptions& opt) {
  const double side = static_cast<double>(graph.side());
  if (r * side < 1.0 - 1e-12) throw DomainError("annulus radius below the cell resolution");
  AnnulusResult a;
  a.center = center;
  a.radius = r;
  std::vector<std::size_t> ball, outside;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const double dist = static_cast<double>(graph.linf_distance(center, i)) / side;
    if (dist <= r + 1e-12) ball.push_back(i);
    if (dist > 2 * r + 1e-12) outside.push_back(i);
  }
  if (outside.empty()) throw DomainError("annulus: B(x0, 2r) covers the whole carpet");
  a.ball_cells = ball.size();
  a.outside_cells = outside.size();
  auto res = effective_resistance(net, ball, outside, opt);
  a.diagnostics = res.diagnostics;
  a.resistance = res.resistance / face_R;
  a.ratio = a.resistance / (H(r) / std::pow(r, graph.carpet().alpha()));
  return a;
}

}  // namespace

AnnulusResult res_annulus_check(const CellGraph& graph, std::size_t center, double r, const TimeScale& H,
                                const SolverOptions& opt) {
  if (center >= graph.size()) throw DomainError("annulus centre out of range");
  return annulus(graph, cell_network(graph), face_resistance(graph, opt), center, r, H, opt);
}

AnnulusSweep res_annulus_sweep(const CellGraph& graph, double r, const TimeScale& H, std::size_t stride,
                               const SolverOptions& opt) {
  if (stride == 0) throw PreconditionError("annulus sweep stride must be positive");
  const auto net = cell_network(graph);
  const double face_R = face_resistance(graph, opt);
  AnnulusSweep sweep;
  for (std::size_t c = 0; c < graph.size(); c += stride) {
    try {
      sweep.results.push_back(annulus(graph, net, face_R, c, r, H, opt));
    } catch (const DomainError&) {
      // Centres whose double ball covers everything are skipped.
    }
  }
  if (sweep.results.empty()) throw DomainError("annulus sweep: no admissible centre");
  sweep.min_ratio = std::numeric_limits<double>::infinity();
  sweep.max_ratio = 0.0;
  for (const auto& a : sweep.results) {
    sweep.min_ratio = std::min(sweep.min_ratio, a.ratio);
    sweep.max_ratio = std::max(sweep.max_ratio, a.ratio);
  }
  sweep.spread = sweep.max_ratio / sweep.min_ratio;
  return sweep;
}

}  // namespace carpet
