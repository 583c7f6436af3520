#include "carpet/walk.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <thread>

#include <Eigen/SparseCholesky>

#include "carpet/error.hpp"
#include "carpet/network.hpp"

namespace carpet {

SparseMatrix lazy_kernel(const CellGraph& graph) {
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const auto nb = graph.neighbors(i);
    if (nb.empty()) {
      t.emplace_back(i, i, 1.0);
      continue;
    }
    t.emplace_back(i, i, 0.5);
    for (auto j : nb) t.emplace_back(i, j, 0.5 / static_cast<double>(nb.size()));
  }
  SparseMatrix P(static_cast<long>(graph.size()), static_cast<long>(graph.size()));
  P.setFromTriplets(t.begin(), t.end());
  return P;
}

double reversibility_residual(const CellGraph& graph, const SparseMatrix& P) {
  double r = 0.0;
  for (int k = 0; k < P.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(P, k); it; ++it) {
      const auto i = static_cast<std::size_t>(it.row()), j = static_cast<std::size_t>(it.col());
      const double a = static_cast<double>(graph.degree(i)) * it.value();
      const double b = static_cast<double>(graph.degree(j)) * P.coeff(it.col(), it.row());
      r = std::max(r, std::abs(a - b));
    }
  return r;
}

std::size_t lazy_step(const CellGraph& graph, std::size_t i, Philox4x32& rng) {
  const auto nb = graph.neighbors(i);
  if (nb.empty()) return i;
  // One draw decides both the lazy coin and the neighbour.
  const std::uint64_t k = rng.below(2 * nb.size());
  return k < nb.size() ? nb[k] : i;
}

std::vector<double> run_samples(const WalkConfig& cfg, const std::function<double(std::size_t, Philox4x32&)>& f) {
  std::vector<double> out(cfg.samples, 0.0);
  const unsigned threads = std::max(1u, std::min<unsigned>(cfg.threads, static_cast<unsigned>(cfg.samples ? cfg.samples : 1)));
  auto worker = [&](unsigned w) {
    for (std::size_t i = w; i < cfg.samples; i += threads) {
      Philox4x32 rng(cfg.seed, i);
      out[i] = f(i, rng);
    }
  };
  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(worker, w);
    for (auto& th : pool) th.join();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exit times

Vector exit_times(const CellGraph& graph, const SolverOptions& opt, SolveDiagnostics* diag) {
  ResistanceNetwork net = cell_network(graph);
  SparseMatrix K = net.laplacian();
  Vector rhs(static_cast<long>(graph.size()));
  for (std::size_t i = 0; i < graph.size(); ++i) {
    const double exits = 2.0 * graph.outer_faces(i);
    K.coeffRef(static_cast<long>(i), static_cast<long>(i)) += exits;
    rhs[static_cast<long>(i)] = 2.0 * (static_cast<double>(graph.degree(i)) + exits);
  }
  SolveDiagnostics local;
  Vector u = solve_spd(K, rhs, opt, local);
  if (diag) *diag = local;
  return u;
}

ExitReport exit_time_scaling(const Carpet& carpet, int n_max, const SolverOptions& opt) {
  if (n_max < 2) throw PreconditionError("exit_time_scaling needs n_max >= 2");
  ExitReport rep;
  const std::vector<double> mid(static_cast<std::size_t>(carpet.dimension()), 0.5);
  for (int n = 0; n <= n_max; ++n) {
    const CellGraph g(carpet, n);
    ExitLevel e;
    e.level = n;
    e.cells = g.size();
    e.start = g.nearest(mid);
    if (n == 0) {
      e.degenerate = true;
      e.mean_steps = 0.0;
      e.diagnostics.method = "degenerate";
    } else {
      const Vector u = exit_times(g, opt, &e.diagnostics);
      e.mean_steps = u[static_cast<long>(e.start)];
    }
    rep.levels.push_back(e);
  }
  for (int n = 1; n < n_max; ++n) rep.ratios.push_back(rep.levels[n + 1].mean_steps / rep.levels[n].mean_steps);
  return rep;
}

MonteCarloMean exit_time_monte_carlo(const CellGraph& graph, std::size_t start, const WalkConfig& cfg) {
  auto sample = [&](std::size_t, Philox4x32& rng) {
    std::size_t cell = start;
    for (std::size_t step = 1; step <= cfg.step_cap; ++step) {
      if (rng.uniform() < 0.5) continue;
      const auto nb = graph.neighbors(cell);
      const std::size_t exits = 2 * static_cast<std::size_t>(graph.outer_faces(cell));
      const std::uint64_t k = rng.below(nb.size() + exits);
      if (k >= nb.size()) return static_cast<double>(step);
      cell = nb[k];
    }
    throw SolverError("exit time simulation hit the step cap", NAN);
  };
  const auto xs = run_samples(cfg, sample);
  MonteCarloMean m;
  m.samples = xs.size();
  double s = 0.0, s2 = 0.0;
  for (double x : xs) {
    s += x;
    s2 += x * x;
  }
  const double n = static_cast<double>(xs.size());
  m.mean = s / n;
  m.stderr_ = std::sqrt(std::max(0.0, s2 / n - m.mean * m.mean) / std::max(1.0, n - 1));
  return m;
}

// ---------------------------------------------------------------------------
// Moves

WilsonInterval wilson_interval(std::size_t successes, std::size_t trials, double z) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials), p = static_cast<double>(successes) / n;
  const double denom = 1.0 + z * z / n;
  const double centre = (p + z * z / (2 * n)) / denom;
  const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

namespace {

// Does fine cell c (cells of width 2 in doubled fine units) touch half-face A
// in a set of positive (d-1)-measure? `scale` converts doubled level-n units
// to doubled fine units.
bool touches(std::span<const std::int64_t> c, const HalfFace& A, std::int64_t scale) {
  const int i = A.axis;
  const std::int64_t plane = A.anchor2[i] * scale;
  if (2 * c[i] != plane && 2 * c[i] + 2 != plane) return false;
  for (std::size_t j = 0; j < c.size(); ++j) {
    if (static_cast<int>(j) == i) continue;
    const std::int64_t lo = std::max(2 * c[j], A.anchor2[j] * scale);
    const std::int64_t hi = std::min(2 * c[j] + 2, (A.anchor2[j] + 1) * scale);
    if (hi <= lo) return false;
  }
  return true;
}

bool halfface_in_cube(const HalfFace& A, std::span<const std::int64_t> q) {
  for (std::size_t j = 0; j < q.size(); ++j) {
    const std::int64_t lo = A.anchor2[j], hi = static_cast<int>(j) == A.axis ? lo : lo + 1;
    if (lo < 2 * q[j] || hi > 2 * q[j] + 2) return false;
  }
  return true;
}

}  // namespace

MoveReport move_probability(const Carpet& carpet, int level, const HalfFace& a0, const HalfFace& a1,
                            const WalkConfig& cfg) {
  const int d = carpet.dimension();
  const auto hg = halfface_graph(carpet, level);
  const auto i0 = hg.find(a0), i1 = hg.find(a1);
  if (!i0 || !i1) throw PreconditionError("move_probability: half-face not in F_n");
  const auto e = hg.find_edge(*i0, *i1);
  if (!e) throw PreconditionError("move_probability: the half-faces do not form a move");

  // Q*: a retained level-n cube containing both half-faces.
  std::optional<Coord> qstar;
  for (int side : {-1, 0}) {
    Coord q(d);
    for (int j = 0; j < d; ++j) q[j] = j == a0.axis ? a0.anchor2[j] / 2 + side : a0.anchor2[j] / 2;
    if (carpet.contains_cell(level, q) && halfface_in_cube(a0, q) && halfface_in_cube(a1, q)) {
      if (!qstar || q < *qstar) qstar = q;
    }
  }
  if (!qstar) throw PreconditionError("move_probability: no cube of F_n contains both half-faces");

  // v*: the corner of Q* lying in A0.
  Coord vstar(d);
  for (int j = 0; j < d; ++j)
    vstar[j] = j == a0.axis ? a0.anchor2[j] / 2 : (a0.anchor2[j] % 2 == 0 ? a0.anchor2[j] / 2 : (a0.anchor2[j] + 1) / 2);

  const int walk_level = level + 2;
  const CellGraph g(carpet, walk_level);
  const std::int64_t L2 = std::int64_t{carpet.length_scale()} * carpet.length_scale();

  std::vector<char> domain(g.size(), 0), target(g.size(), 0);
  std::vector<std::size_t> starts;
  MoveReport rep;
  rep.level = level;
  rep.walk_level = walk_level;
  rep.kind = hg.edges[*e].kind;
  for (std::size_t c = 0; c < g.size(); ++c) {
    const auto x = g.coords(c);
    bool in_r = true, in_q = true;
    for (int j = 0; j < d; ++j) {
      if (x[j] < (vstar[j] - 1) * L2 || x[j] >= (vstar[j] + 1) * L2) in_r = false;
      if (x[j] < (*qstar)[j] * L2 || x[j] >= ((*qstar)[j] + 1) * L2) in_q = false;
    }
    if (!in_r) continue;
    domain[c] = 1;
    ++rep.domain_cells;
    if (touches(x, a1, L2)) {
      target[c] = 1;
      ++rep.target_cells;
    }
    if (in_q && touches(x, a0, L2)) starts.push_back(c);
  }
  rep.start_cells = starts.size();
  if (starts.empty() || rep.target_cells == 0) throw PreconditionError("move_probability: empty start or target set");

  // Exact hitting probabilities: 1 on targets, 0 outside the domain.
  std::vector<std::size_t> fixed;
  std::vector<double> values;
  for (std::size_t c = 0; c < g.size(); ++c) {
    if (!domain[c]) {
      fixed.push_back(c);
      values.push_back(0.0);
    } else if (target[c]) {
      fixed.push_back(c);
      values.push_back(1.0);
    }
  }
  SolveDiagnostics diag;
  const Vector h = dirichlet_solve(cell_network(g).laplacian(), fixed, values, Vector(), SolverOptions{}, diag);
  rep.start = starts.front();
  rep.exact_worst = std::numeric_limits<double>::infinity();
  rep.exact_best = 0.0;
  for (auto s : starts) {
    const double v = h[static_cast<long>(s)];
    if (v < rep.exact_worst) {
      rep.exact_worst = v;
      rep.start = s;
    }
    rep.exact_best = std::max(rep.exact_best, v);
  }

  auto sample = [&](std::size_t, Philox4x32& rng) {
    std::size_t cell = rep.start;
    for (std::size_t step = 0; step <= cfg.step_cap; ++step) {
      if (!domain[cell]) return 0.0;
      if (target[cell]) return 1.0;
      cell = lazy_step(g, cell, rng);
    }
    throw SolverError("move simulation hit the step cap", NAN);
  };
  const auto xs = run_samples(cfg, sample);
  rep.samples = xs.size();
  for (double x : xs) rep.successes += x > 0.5;
  rep.estimate = rep.samples ? static_cast<double>(rep.successes) / static_cast<double>(rep.samples) : 0.0;
  rep.ci95 = wilson_interval(rep.successes, rep.samples, 1.959963984540054);
  rep.ci99 = wilson_interval(rep.successes, rep.samples, 2.5758293035489004);
  rep.q0 = std::ldexp(1.0, -2 * d * d);
  rep.q1 = std::ldexp(1.0, -d * (1 << d));
  rep.floor = rep.q0 * rep.q1;
  rep.clears_floor = rep.ci99.lower > rep.floor;
  rep.anomaly = rep.successes == 0;
  return rep;
}

// ---------------------------------------------------------------------------
// Coupling

CouplingReport coupling_experiment(const CellGraph& graph, std::size_t x, std::size_t y, int m, double r,
                                   const WalkConfig& cfg) {
  if (x >= graph.size() || y >= graph.size()) throw DomainError("coupling: cell out of range");
  const int d = graph.dimension();
  const double side = static_cast<double>(graph.side());
  const double L = graph.carpet().length_scale();
  CouplingReport rep;
  rep.samples = cfg.samples;
  rep.radius = r;
  rep.distance = static_cast<double>(graph.linf_distance(x, y)) / side;
  if (!associated_cells(graph.carpet(), graph.cell(x), graph.cell(y), m))
    throw PreconditionError("coupling: the starting cells are not m-associated");
  if (rep.distance > r / (L * L) + 1e-12) throw PreconditionError("coupling: distance exceeds r / L^2");
  if (x == y) {
    rep.coupled = rep.samples;
    rep.estimate = 1.0;
    rep.ci95 = wilson_interval(rep.coupled, rep.samples, 1.959963984540054);
    return rep;
  }
  const auto cx = graph.coords(x), cy = graph.coords(y);
  int axis = -1;
  for (int k = 0; k < d; ++k)
    if (cx[k] != cy[k]) {
      if (axis >= 0) throw PreconditionError("coupling: only mirror pairs differing along one axis are supported");
      axis = k;
    }
  const std::int64_t mirror_sum = cx[axis] + cy[axis];
  auto mirror = [&](std::size_t c) -> std::optional<std::size_t> {
    auto v = graph.coords(c);
    Coord w(v.begin(), v.end());
    w[axis] = mirror_sum - w[axis];
    return graph.find(w);
  };
  const auto reach = r * side + 1e-9;
  auto in_ball = [&](std::size_t c) { return static_cast<double>(graph.linf_distance(x, c)) <= reach; };
  auto adjacent = [&](std::size_t a, std::size_t b) {
    const auto nb = graph.neighbors(a);
    return std::binary_search(nb.begin(), nb.end(), b);
  };
  auto symmetric = [&](std::size_t a, std::size_t b) {
    const auto na = graph.neighbors(a), nb = graph.neighbors(b);
    if (na.size() != nb.size()) return false;
    for (auto v : na) {
      auto mv = mirror(v);
      if (!mv || !std::binary_search(nb.begin(), nb.end(), *mv)) return false;
    }
    return true;
  };
  // Residual move of a walker at `a` next to `b`, after the meeting moves.
  auto residual_move = [&](std::size_t a, std::size_t b, double stay_mass, double total, Philox4x32& rng) {
    const double v = rng.uniform() * total;
    if (v < stay_mass) return a;
    std::vector<std::size_t> others;
    for (auto n : graph.neighbors(a))
      if (n != b) others.push_back(n);
    if (others.empty()) return a;
    return others[rng.below(others.size())];
  };

  auto sample = [&](std::size_t, Philox4x32& rng) -> double {
    std::size_t w1 = x, w2 = y;
    for (std::size_t step = 0; step <= cfg.step_cap; ++step) {
      if (w1 == w2) return static_cast<double>(step) + 1.0;  // success, offset so 0 means failure
      if (!in_ball(w1) || !in_ball(w2)) return 0.0;
      if (adjacent(w1, w2)) {
        const double a = 0.5 / static_cast<double>(graph.degree(w1));
        const double b = 0.5 / static_cast<double>(graph.degree(w2));
        const double u = rng.uniform();
        if (u < a) {
          w1 = w2;
        } else if (u < a + b) {
          w2 = w1;
        } else {
          const double rest = 1.0 - a - b;
          const auto n1 = residual_move(w1, w2, 0.5 - b, rest, rng);
          const auto n2 = residual_move(w2, w1, 0.5 - a, rest, rng);
          w1 = n1;
          w2 = n2;
        }
      } else if (mirror(w1) == w2 && symmetric(w1, w2)) {
        const auto n1 = lazy_step(graph, w1, rng);
        w1 = n1;
        w2 = *mirror(n1);
      } else {
        w1 = lazy_step(graph, w1, rng);
        w2 = lazy_step(graph, w2, rng);
      }
    }
    throw SolverError("coupling simulation hit the step cap", NAN);
  };
  const auto xs = run_samples(cfg, sample);
  double steps = 0.0;
  for (double v : xs)
    if (v > 0) {
      ++rep.coupled;
      steps += v - 1.0;
    }
  rep.estimate = rep.samples ? static_cast<double>(rep.coupled) / static_cast<double>(rep.samples) : 0.0;
  rep.ci95 = wilson_interval(rep.coupled, rep.samples, 1.959963984540054);
  rep.mean_meeting_steps = rep.coupled ? steps / static_cast<double>(rep.coupled) : 0.0;
  return rep;
}

// ---------------------------------------------------------------------------
// Harnack

namespace {

struct HarnackSetup {
  std::vector<std::size_t> component;  // sorted
  std::vector<std::size_t> boundary;   // sorted exterior cells adjacent to the component
  std::vector<std::size_t> half;       // positions in `component` within R/2
  std::vector<long> local;             // cell -> position in component or -1
};

HarnackSetup harnack_setup(const CellGraph& graph, std::size_t center, double R) {
  if (center >= graph.size()) throw DomainError("harnack: centre out of range");
  const double side = static_cast<double>(graph.side());
  const double reach = R * side + 1e-9, half_reach = 0.5 * R * side + 1e-9;
  // The grid ball and one layer of exterior must fit inside the cube.
  const auto k = static_cast<std::int64_t>(std::floor(R * side + 1e-9));
  for (auto c : graph.coords(center))
    if (c - k < 1 || c + k > graph.side() - 2) throw DomainError("harnack: the ball is not interior to the cube");
  HarnackSetup s;
  s.local.assign(graph.size(), -1);
  std::vector<char> seen(graph.size(), 0), is_boundary(graph.size(), 0);
  std::vector<std::size_t> stack{center};
  seen[center] = 1;
  while (!stack.empty()) {
    auto c = stack.back();
    stack.pop_back();
    s.component.push_back(c);
    for (auto n : graph.neighbors(c)) {
      if (seen[n]) continue;
      if (static_cast<double>(graph.linf_distance(center, n)) <= reach) {
        seen[n] = 1;
        stack.push_back(n);
      } else {
        is_boundary[n] = 1;
      }
    }
  }
  std::sort(s.component.begin(), s.component.end());
  for (std::size_t k = 0; k < s.component.size(); ++k) {
    s.local[s.component[k]] = static_cast<long>(k);
    if (static_cast<double>(graph.linf_distance(center, s.component[k])) <= half_reach) s.half.push_back(k);
  }
  for (std::size_t c = 0; c < graph.size(); ++c)
    if (is_boundary[c]) s.boundary.push_back(c);
  if (s.boundary.empty()) throw DomainError("harnack: the ball has no exterior boundary");
  if (s.half.empty()) throw DomainError("harnack: empty half ball");
  return s;
}

SparseMatrix component_operator(const CellGraph& graph, const HarnackSetup& s) {
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t k = 0; k < s.component.size(); ++k) {
    const auto c = s.component[k];
    t.emplace_back(k, k, static_cast<double>(graph.degree(c)));
    for (auto n : graph.neighbors(c))
      if (s.local[n] >= 0) t.emplace_back(k, s.local[n], -1.0);
  }
  SparseMatrix K(static_cast<long>(s.component.size()), static_cast<long>(s.component.size()));
  K.setFromTriplets(t.begin(), t.end());
  return K;
}

double half_ratio(const Vector& h, const HarnackSetup& s) {
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (auto k : s.half) {
    lo = std::min(lo, h[static_cast<long>(k)]);
    hi = std::max(hi, h[static_cast<long>(k)]);
  }
  return hi / lo;
}

}  // namespace

std::vector<std::size_t> harnack_boundary(const CellGraph& graph, std::size_t center, double R) {
  return harnack_setup(graph, center, R).boundary;
}

double harnack_ratio_for(const CellGraph& graph, std::size_t center, double R, const std::vector<double>& data) {
  const auto s = harnack_setup(graph, center, R);
  if (data.size() != s.boundary.size()) throw PreconditionError("harnack: boundary data size mismatch");
  Vector rhs = Vector::Zero(static_cast<long>(s.component.size()));
  for (std::size_t b = 0; b < s.boundary.size(); ++b)
    for (auto n : graph.neighbors(s.boundary[b]))
      if (s.local[n] >= 0) rhs[s.local[n]] += data[b];
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(component_operator(graph, s));
  if (ldlt.info() != Eigen::Success) throw SolverError("harnack: factorization failed", NAN);
  return half_ratio(ldlt.solve(rhs), s);
}

HarnackReport harnack_ratio(const CellGraph& graph, std::size_t center, double R) {
  const auto s = harnack_setup(graph, center, R);
  HarnackReport rep;
  rep.center = center;
  rep.radius = R;
  rep.ball_cells = s.component.size();
  rep.half_ball_cells = s.half.size();
  rep.boundary_cells = s.boundary.size();
  const SparseMatrix K = component_operator(graph, s);
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(K);
  if (ldlt.info() != Eigen::Success) throw SolverError("harnack: factorization failed", NAN);
  rep.diagnostics.method = "sparse-ldlt";
  for (std::size_t b = 0; b < s.boundary.size(); ++b) {
    Vector rhs = Vector::Zero(K.rows());
    for (auto n : graph.neighbors(s.boundary[b]))
      if (s.local[n] >= 0) rhs[s.local[n]] += 1.0;
    const Vector h = ldlt.solve(rhs);
    rep.diagnostics.residual = std::max(rep.diagnostics.residual, (K * h - rhs).norm() / rhs.norm());
    const double q = half_ratio(h, s);
    if (q > rep.ratio) {
      rep.ratio = q;
      rep.worst_boundary = s.boundary[b];
    }
  }
  return rep;
}

}  // namespace carpet
