#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "carpet/error.hpp"
#include "carpet/walk.hpp"

namespace carpet {

namespace {

constexpr std::size_t kMaxMatrixPowerCells = 100'000;

std::vector<double> stationary(const CellGraph& graph) {
  std::vector<double> pi(graph.size());
  double total = 0.0;
  for (std::size_t i = 0; i < graph.size(); ++i) total += static_cast<double>(std::max<std::size_t>(graph.degree(i), 1));
  for (std::size_t i = 0; i < graph.size(); ++i)
    pi[i] = static_cast<double>(std::max<std::size_t>(graph.degree(i), 1)) / total;
  return pi;
}

// Even step counts, log-spaced from 2 to t_max.
std::vector<std::size_t> log_grid(double t_max, std::size_t per_decade) {
  std::vector<std::size_t> out;
  if (t_max < 2) return out;
  const double step = std::pow(10.0, 1.0 / static_cast<double>(per_decade));
  for (double t = 2.0; t <= t_max * (1 + 1e-12); t *= step) {
    auto e = static_cast<std::size_t>(2 * std::llround(t / 2.0));
    if (e >= 2 && e <= t_max && (out.empty() || e > out.back())) out.push_back(e);
  }
  return out;
}

// Least-squares slope of y against x.
double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxx > 0 ? sxy / sxx : 0.0;
}

void fit_diagonal(HeatKernelEstimate& est, double factor) {
  std::vector<double> lx, ly;
  for (std::size_t k = 0; k < est.times.size(); ++k) {
    const double t = static_cast<double>(est.times[k]);
    if (t < est.window_lo || t > est.window_hi || est.diagonal[k] < factor) continue;
    lx.push_back(std::log(t));
    ly.push_back(std::log(est.diagonal[k]));
  }
  est.fit_points = lx.size();
  if (lx.size() < 3) {
    est.diagnostic = "fitting window too narrow: " + std::to_string(lx.size()) + " points";
    return;
  }
  est.slope = slope(lx, ly);
  est.spectral_dimension = -2.0 * est.slope;
}

}  // namespace

std::pair<double, double> heat_kernel_window(const CellGraph& graph, double beta0) {
  const double L = graph.carpet().length_scale();
  return {std::pow(L, beta0), std::pow(L, graph.level() * beta0)};
}

std::vector<std::size_t> interior_starts(const CellGraph& graph, std::size_t max_starts) {
  std::vector<std::size_t> inner;
  const std::int64_t side = graph.side();
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto c = graph.coords(i);
    std::int64_t depth = side;
    for (auto v : c) depth = std::min({depth, v, side - 1 - v});
    if (4 * depth >= side) inner.push_back(i);
  }
  if (inner.empty()) {
    const std::vector<double> mid(static_cast<std::size_t>(graph.dimension()), 0.5);
    return {graph.nearest(mid)};
  }
  if (max_starts == 0 || inner.size() <= max_starts) return inner;
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < max_starts; ++k) out.push_back(inner[k * inner.size() / max_starts]);
  return out;
}

std::vector<double> return_density(const CellGraph& graph, std::size_t x, std::size_t t_max) {
  if (x >= graph.size()) throw DomainError("return_density: cell out of range");
  const SparseMatrix Pt = SparseMatrix(lazy_kernel(graph).transpose());
  const auto pi = stationary(graph);
  Vector v = Vector::Zero(static_cast<long>(graph.size()));
  v[static_cast<long>(x)] = 1.0;
  std::vector<double> out{1.0 / pi[x]};
  for (std::size_t t = 1; t <= t_max; ++t) {
    v = Pt * v;
    out.push_back(v[static_cast<long>(x)] / pi[x]);
  }
  return out;
}

ReturnEstimate return_density_monte_carlo(const CellGraph& graph, std::size_t x, std::size_t t_max,
                                          const WalkConfig& cfg) {
  if (x >= graph.size()) throw DomainError("return_density_monte_carlo: cell out of range");
  const auto pi = stationary(graph);
  std::vector<std::vector<char>> hits(cfg.samples, std::vector<char>(t_max + 1, 0));
  run_samples(cfg, [&](std::size_t i, Philox4x32& rng) {
    std::size_t cell = x;
    hits[i][0] = 1;
    for (std::size_t t = 1; t <= t_max; ++t) {
      cell = lazy_step(graph, cell, rng);
      hits[i][t] = cell == x;
    }
    return 0.0;
  });
  ReturnEstimate est;
  const double n = static_cast<double>(cfg.samples);
  for (std::size_t t = 0; t <= t_max; ++t) {
    std::size_t k = 0;
    for (const auto& h : hits) k += static_cast<std::size_t>(h[t]);
    const double p = n > 0 ? static_cast<double>(k) / n : 0.0;
    est.value.push_back(p / pi[x]);
    est.stderr_.push_back(n > 1 ? std::sqrt(p * (1 - p) / (n - 1)) / pi[x] : 0.0);
  }
  return est;
}

HeatKernelEstimate heat_kernel(const CellGraph& graph, const HeatKernelOptions& opt) {
  HeatKernelEstimate est;
  est.mode = opt.mode;
  est.starts = interior_starts(graph, opt.max_starts);
  std::tie(est.window_lo, est.window_hi) = heat_kernel_window(graph, opt.beta0);
  const auto pi = stationary(graph);
  const SparseMatrix P = lazy_kernel(graph);
  {
    const Vector rows = P * Vector::Ones(P.cols());
    est.stochasticity_residual = (rows.array() - 1.0).abs().maxCoeff();
  }

  if (opt.mode == HeatKernelMode::MonteCarlo) {
    const double t_end = std::min(est.window_hi, static_cast<double>(opt.mc_max_time));
    const auto grid = log_grid(t_end, opt.points_per_decade);
    const std::size_t t_max = grid.empty() ? 0 : grid.back();
    std::vector<ReturnEstimate> per_start;
    for (std::size_t s = 0; s < est.starts.size(); ++s) {
      WalkConfig cfg = opt.walk;
      cfg.seed = opt.walk.seed + 0x9E3779B97F4A7C15ULL * s;
      per_start.push_back(return_density_monte_carlo(graph, est.starts[s], t_max, cfg));
    }
    const double k = static_cast<double>(est.starts.size());
    for (auto t : grid) {
      double v = 0.0, var = 0.0;
      for (const auto& r : per_start) {
        v += r.value[t];
        var += r.stderr_[t] * r.stderr_[t];
      }
      est.times.push_back(t);
      est.diagonal.push_back(v / k);
      est.diagonal_stderr.push_back(std::sqrt(var) / k);
    }
    fit_diagonal(est, opt.equilibrium_factor);
    return est;
  }

  if (graph.size() > kMaxMatrixPowerCells) throw ResourceError("heat_kernel: matrix-power mode limited to 1e5 cells");
  const SparseMatrix Pt = SparseMatrix(P.transpose());
  const auto grid = log_grid(est.window_hi, opt.points_per_decade);
  Vector inv_pi(static_cast<long>(graph.size()));
  for (std::size_t i = 0; i < graph.size(); ++i) inv_pi[static_cast<long>(i)] = 1.0 / pi[i];

  // Columns hold P^s(x, .) for every start x; p_{2s}(x,x) / pi(x) = sum_y P^s(x,y)^2 / pi(y).
  DenseMatrix V = DenseMatrix::Zero(static_cast<long>(graph.size()), static_cast<long>(est.starts.size()));
  for (std::size_t s = 0; s < est.starts.size(); ++s) V(static_cast<long>(est.starts[s]), static_cast<long>(s)) = 1.0;
  std::size_t s_now = 0;
  for (auto t : grid) {
    while (2 * s_now < t) {
      V = Pt * V;
      ++s_now;
    }
    const Vector dens = V.cwiseAbs2().transpose() * inv_pi;
    est.times.push_back(t);
    est.diagonal.push_back(dens.mean());
    // p_t decreases in t for a lazy reversible walk; stop once below the cut.
    if (est.diagonal.back() < opt.equilibrium_factor) break;
  }
  const Vector mass = V.colwise().sum();
  est.stochasticity_residual = std::max(est.stochasticity_residual, (mass.array() - 1.0).abs().maxCoeff());
  fit_diagonal(est, opt.equilibrium_factor);

  // Off-diagonal table from the first start, bucketed by l-infinity distance in cells.
  const std::size_t x0 = est.starts.front();
  Vector u = Vector::Zero(static_cast<long>(graph.size()));
  u[static_cast<long>(x0)] = 1.0;
  const std::size_t buckets = static_cast<std::size_t>(graph.side());
  std::vector<std::int64_t> dist(graph.size());
  for (std::size_t y = 0; y < graph.size(); ++y) dist[y] = graph.linf_distance(x0, y);
  std::size_t t_now = 0;
  std::vector<double> ex, ey;
  for (auto t : est.times) {
    if (t < est.window_lo) continue;
    while (t_now < t) {
      u = Pt * u;
      ++t_now;
    }
    std::vector<double> sum(buckets, 0.0);
    std::vector<std::size_t> count(buckets, 0);
    for (std::size_t y = 0; y < graph.size(); ++y) {
      sum[static_cast<std::size_t>(dist[y])] += u[static_cast<long>(y)] / pi[y];
      ++count[static_cast<std::size_t>(dist[y])];
    }
    const double diag = sum[0] / static_cast<double>(count[0]);
    for (std::size_t k = 0; k < buckets; ++k) {
      if (count[k] == 0) continue;
      const double value = sum[k] / static_cast<double>(count[k]);
      est.off_diagonal.push_back({static_cast<double>(k) / static_cast<double>(graph.side()), t, value});
      const double q = value / diag;
      if (k > 0 && q > 1e-12 && q < 0.5) {
        ex.push_back(std::log(std::pow(static_cast<double>(k), opt.beta0) / static_cast<double>(t)));
        ey.push_back(std::log(-std::log(q)));
      }
    }
  }
  est.eta_points = ex.size();
  if (ex.size() >= 3) est.eta_hat = slope(ex, ey);
  return est;
}

}  // namespace carpet
