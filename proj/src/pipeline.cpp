#include "carpet/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "carpet/error.hpp"
#include "carpet/forms.hpp"
#include "carpet/network.hpp"
#include "carpet/rng.hpp"
#include "carpet/walk.hpp"

namespace carpet {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Parameter parsing

class ParamReader {
 public:
  ParamReader(std::string op, const json& in) : op_(std::move(op)), in_(in) {
    if (!in_.is_object()) throw ConfigError(op_ + ": params must be an object");
  }

  std::int64_t integer(const std::string& key, std::int64_t def, std::int64_t lo, std::int64_t hi) {
    std::int64_t v = def;
    if (const auto* j = take(key)) {
      if (!j->is_number_integer()) throw ConfigError(where(key) + " must be an integer");
      v = j->get<std::int64_t>();
    }
    if (v < lo || v > hi)
      throw ConfigError(where(key) + " = " + std::to_string(v) + " outside [" + std::to_string(lo) + ", " +
                        std::to_string(hi) + "]");
    out_[key] = v;
    return v;
  }

  double number(const std::string& key, double def, double lo, double hi, bool open_lo = false) {
    double v = def;
    if (const auto* j = take(key)) {
      if (!j->is_number()) throw ConfigError(where(key) + " must be a number");
      v = j->get<double>();
    }
    check_range(key, v, lo, hi, open_lo);
    out_[key] = v;
    return v;
  }

  // Absent or null stays null; the stage then takes the value from upstream.
  void optional_number(const std::string& key, double lo, double hi, bool open_lo = false) {
    const auto* j = take(key);
    if (!j || j->is_null()) {
      out_[key] = nullptr;
      return;
    }
    if (!j->is_number()) throw ConfigError(where(key) + " must be a number");
    check_range(key, j->get<double>(), lo, hi, open_lo);
    out_[key] = j->get<double>();
  }

  std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& options) {
    std::string v = def;
    if (const auto* j = take(key)) {
      if (!j->is_string()) throw ConfigError(where(key) + " must be a string");
      v = j->get<std::string>();
    }
    if (std::find(options.begin(), options.end(), v) == options.end()) throw ConfigError(where(key) + ": unknown value '" + v + "'");
    out_[key] = v;
    return v;
  }

  void seed(std::uint64_t def) {
    std::uint64_t v = def;
    if (const auto* j = take("seed")) {
      if (!j->is_number_unsigned() && !(j->is_number_integer() && j->get<std::int64_t>() >= 0))
        throw ConfigError(where("seed") + " must be a non-negative integer");
      v = j->get<std::uint64_t>();
    }
    out_["seed"] = v;
  }

  void coords(const std::string& key, const Coord& def) {
    Coord v = def;
    if (const auto* j = take(key)) {
      if (!j->is_array()) throw ConfigError(where(key) + " must be an array of integers");
      v.clear();
      for (const auto& e : *j) {
        if (!e.is_number_integer()) throw ConfigError(where(key) + " must be an array of integers");
        v.push_back(e.get<std::int64_t>());
      }
    }
    out_[key] = v;
  }

  void numbers(const std::string& key, const std::vector<double>& def, double lo, double hi) {
    std::vector<double> v = def;
    if (const auto* j = take(key)) {
      if (!j->is_array() || j->empty()) throw ConfigError(where(key) + " must be a non-empty array of numbers");
      v.clear();
      for (const auto& e : *j) {
        if (!e.is_number()) throw ConfigError(where(key) + " must be an array of numbers");
        v.push_back(e.get<double>());
      }
    }
    for (double x : v) check_range(key, x, lo, hi, true);
    out_[key] = v;
  }

  json finish() {
    for (const auto& [k, _] : in_.items())
      if (!used_.count(k)) throw ConfigError(op_ + ": unknown parameter '" + k + "'");
    return out_;
  }

 private:
  const json* take(const std::string& key) {
    used_.insert(key);
    auto it = in_.find(key);
    return it == in_.end() ? nullptr : &*it;
  }
  std::string where(const std::string& key) const { return op_ + "." + key; }
  void check_range(const std::string& key, double v, double lo, double hi, bool open_lo) const {
    if (!std::isfinite(v) || v > hi || v < lo || (open_lo && v == lo))
      throw ConfigError(where(key) + " = " + std::to_string(v) + " outside " + (open_lo ? "(" : "[") +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }

  std::string op_;
  json in_;
  json out_ = json::object();
  std::set<std::string> used_;
};

const std::vector<std::string> kFamilies{"bb", "kz"};
const std::vector<std::string> kSolvers{"auto", "cg", "ldlt", "lu"};
const std::vector<std::string> kModels{"crosswire", "cellgraph"};

SolverOptions solver_options(const json& p) {
  SolverOptions opt;
  const auto s = p.value("solver", std::string("auto"));
  if (s == "cg") opt.kind = SolverKind::ConjugateGradient;
  if (s == "ldlt") opt.kind = SolverKind::DenseLDLT;
  if (s == "lu") opt.kind = SolverKind::DenseLU;
  if (p.contains("max_iteration_factor")) opt.max_iteration_factor = p["max_iteration_factor"].get<double>();
  return opt;
}

// ---------------------------------------------------------------------------
// Payload helpers

json diag_json(const std::string& label, const SolveDiagnostics& d) {
  return {{"label", label}, {"method", d.method}, {"iterations", d.iterations}, {"residual", d.residual}};
}

json wilson_json(const WilsonInterval& w) { return json::array({w.lower, w.upper}); }

double require(const std::optional<double>& v, const std::string& what, const std::string& op) {
  if (!v) throw DependencyError(op + " needs " + what + " from an earlier stage");
  return *v;
}

double rho_for(const json& p, const StageContext& ctx, const std::string& op) {
  if (p.contains("rho_hat") && !p["rho_hat"].is_null()) return p["rho_hat"].get<double>();
  return require(ctx.rho_hat, "rho_hat (run a rho stage)", op);
}

double beta0_for(const json& p, const StageContext& ctx, const std::string& op) {
  if (p.contains("beta0") && !p["beta0"].is_null()) return p["beta0"].get<double>();
  return require(ctx.beta0, "beta0 (run a rho stage)", op);
}

const GammaReport& gamma_for(const StageContext& ctx, const std::string& op) {
  if (!ctx.gamma) throw DependencyError(op + " needs the gamma sequence (run a gamma stage)");
  return *ctx.gamma;
}

DiscreteForm make_form(const std::string& family, const CellGraph& g, double rho) {
  return family == "kz" ? kz_form(g, rho) : normalize(bb_form(g, rho), g);
}

json flags_json(const FormFlags& f) {
  return {{"markov", f.markov},
          {"conservative", f.conservative},
          {"irreducible", f.irreducible},
          {"conservativity_residual", f.conservativity_residual}};
}

json gamma_json(const GammaReport& g) {
  json terms = json::array();
  for (const auto& t : g.lower_bound_terms) terms.push_back({{"n", t.n}, {"m", t.m}, {"ratio", t.ratio}});
  return {{"model", to_string(g.model)},
          {"n_max", g.n_max},
          {"mass", g.mass},
          {"resistance", g.resistance},
          {"gamma", g.gamma},
          {"comparability_lower", g.comparability_lower},
          {"comparability_upper", g.comparability_upper},
          {"lower_bound_terms", terms},
          {"lower_bound_fit", g.lower_bound_fit},
          {"lower_bound_min", g.lower_bound_min},
          {"rho_used", g.rho_used}};
}

GammaReport gamma_from_json(const json& j) {
  GammaReport g;
  g.model = parse_gamma_model(j.at("model").get<std::string>());
  g.n_max = j.at("n_max").get<int>();
  g.mass = j.at("mass").get<int>();
  g.resistance = j.at("resistance").get<std::vector<double>>();
  finish_gamma_report(g, j.at("rho_used").get<double>());
  return g;
}

// ---------------------------------------------------------------------------
// Stages

StageResult stage_validate(const Carpet& carpet) {
  const auto rep = validate(carpet);
  StageResult r;
  r.payload = report_to_json(rep);
  r.payload["mass"] = carpet.mass();
  r.payload["alpha"] = carpet.alpha();
  return r;
}

StageResult stage_cells(const Carpet& carpet, const json& p) {
  const CellGraph g(carpet, p["level"].get<int>());
  std::map<std::size_t, std::size_t> hist;
  for (std::size_t i = 0; i < g.size(); ++i) ++hist[g.degree(i)];
  json degrees = json::object();
  for (const auto& [d, c] : hist) degrees[std::to_string(d)] = c;
  std::string listing;
  for (std::size_t i = 0; i < g.size(); ++i) {
    for (auto c : g.coords(i)) listing += std::to_string(c) + ",";
    listing += ";";
  }
  StageResult r;
  r.payload = {{"level", g.level()},
               {"side", g.side()},
               {"cells", g.size()},
               {"expected_cells", std::pow(static_cast<double>(carpet.mass()), g.level())},
               {"edges", g.edges().size()},
               {"connected", g.connected()},
               {"degree_histogram", degrees},
               {"cells_sha256", sha256_hex(listing)}};
  return r;
}

StageResult stage_resist(const Carpet& carpet, const json& p) {
  const int n = p["level"].get<int>();
  const auto model = p["model"].get<std::string>();
  const auto opt = solver_options(p);
  ResistanceResult res;
  std::size_t vertices = 0;
  if (model == "crosswire") {
    const auto net = crosswire_network(carpet, n);
    vertices = net.vertices;
    res = effective_resistance(net, "A0", "A1", opt);
  } else {
    const CellGraph g(carpet, n);
    const auto net = cell_network(g, true, 1.0);
    vertices = net.vertices;
    res = effective_resistance(net, "A0", "A1", opt);
  }
  StageResult r;
  r.payload = {{"level", n},
               {"model", model},
               {"vertices", vertices},
               {"resistance", res.resistance},
               {"disconnected", res.disconnected},
               {"method", res.diagnostics.method}};
  r.residuals.push_back(diag_json("resistance", res.diagnostics));
  return r;
}

StageResult stage_rho(const Carpet& carpet, const json& p) {
  const auto rep = rho_estimate(carpet, p["n_max"].get<int>(), solver_options(p));
  StageResult r;
  r.payload = {{"mass", rep.mass},
               {"length_scale", rep.length_scale},
               {"resistance", rep.resistance},
               {"ratios", rep.ratios},
               {"rho_hat", rep.rho_hat},
               {"aitken", std::isfinite(rep.aitken) ? json(rep.aitken) : json(nullptr)},
               {"monotone", rep.monotone},
               {"alpha", rep.alpha},
               {"beta0", rep.beta0},
               {"rho_m_at_least_L2", rep.rho_m_at_least_L2},
               {"rho_at_most_L2_over_m", rep.rho_at_most_L2_over_m}};
  double spread = 0.0;
  if (rep.ratios.size() >= 3) {
    // Relative spread of the ratios for n >= 2.
    const auto first = rep.ratios.begin() + 2;
    const auto [lo, hi] = std::minmax_element(first, rep.ratios.end());
    spread = *hi / *lo - 1.0;
  }
  r.payload["ratio_spread_from_2"] = spread;
  for (std::size_t n = 0; n < rep.diagnostics.size(); ++n)
    r.residuals.push_back(diag_json("R_" + std::to_string(n), rep.diagnostics[n]));
  return r;
}

StageResult stage_gamma(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const double rho = rho_for(p, ctx, "gamma");
  const auto g = gamma_sequence(carpet, p["n_max"].get<int>(), parse_gamma_model(p["model"].get<std::string>()), rho,
                                solver_options(p));
  StageResult r;
  r.payload = gamma_json(g);
  for (std::size_t n = 0; n < g.diagnostics.size(); ++n)
    r.residuals.push_back(diag_json("R_" + std::to_string(n), g.diagnostics[n]));
  return r;
}

StageResult stage_timescale(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const auto& g = gamma_for(ctx, "timescale");
  const TimeScale H(g, carpet.length_scale(), beta0_for(p, ctx, "timescale"));
  const auto rep = time_scale_report(H, g, carpet.length_scale(), p["samples"].get<std::size_t>(),
                                     p["seed"].get<std::uint64_t>());
  StageResult r;
  r.payload = {{"k", rep.k},
               {"radii", H.radii()},
               {"values", H.values()},
               {"beta0", rep.beta0},
               {"beta_prime", rep.beta_prime},
               {"c3_grid", rep.c3_grid},
               {"c4_grid", rep.c4_grid},
               {"c3", rep.c3},
               {"c4", rep.c4},
               {"grid_step_max", rep.grid_step_max},
               {"c5", rep.c5},
               {"c6", rep.c6},
               {"h_over_h0_min", rep.h_over_h0_min},
               {"sampled_pairs", rep.sampled_pairs},
               {"violations", rep.violations}};
  return r;
}

StageResult stage_res_annulus(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const auto& g = gamma_for(ctx, "res-annulus");
  const TimeScale H(g, carpet.length_scale(), beta0_for(p, ctx, "res-annulus"));
  const CellGraph graph(carpet, p["level"].get<int>());
  const auto sweep = res_annulus_sweep(graph, p["radius"].get<double>(), H, p["stride"].get<std::size_t>());
  StageResult r;
  json rows = json::array();
  double worst = 0.0;
  for (const auto& a : sweep.results) {
    rows.push_back({{"center", a.center},
                    {"ball_cells", a.ball_cells},
                    {"resistance", a.resistance},
                    {"ratio", a.ratio}});
    worst = std::max(worst, a.diagnostics.residual);
  }
  r.payload = {{"level", graph.level()},
               {"radius", p["radius"]},
               {"centers", sweep.results.size()},
               {"min_ratio", sweep.min_ratio},
               {"max_ratio", sweep.max_ratio},
               {"spread", sweep.spread},
               {"results", rows}};
  r.residuals.push_back({{"label", "annulus"}, {"method", "max over centres"}, {"residual", worst}});
  return r;
}

StageResult stage_form_build(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const CellGraph g(carpet, p["level"].get<int>());
  const auto family = p["family"].get<std::string>();
  const double rho = rho_for(p, ctx, "form-build");
  const auto form = make_form(family, g, rho);
  StageResult r;
  r.payload = {{"level", g.level()},
               {"family", family},
               {"cells", form.size()},
               {"nonzeros", form.base().nonZeros()},
               {"scale", form.scale()},
               {"norm", form_norm(form, g)},
               {"flags", flags_json(form.flags())}};
  return r;
}

StageResult stage_form_invariance(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const CellGraph g(carpet, p["level"].get<int>());
  const auto family = p["family"].get<std::string>();
  const auto form = make_form(family, g, rho_for(p, ctx, "form-invariance"));
  const auto inv = invariance_check(form, g, p["tolerance"].get<double>());
  json projectors = json::array();
  bool all_idempotent = true;
  for (int l = 1; l <= g.level(); ++l) {
    const FoldingProjector proj(g, l);
    const bool idem = proj.idempotent_exact();
    all_idempotent = all_idempotent && idem;
    projectors.push_back({{"fold_level", l}, {"denominator", proj.denominator()}, {"idempotent_exact", idem}});
  }
  const auto mc = markov_contraction_check(form, p["samples"].get<std::size_t>(), p["seed"].get<std::uint64_t>());
  StageResult r;
  r.payload = {{"level", g.level()},
               {"family", family},
               {"norm", inv.norm},
               {"selfadjoint_residual", inv.selfadjoint_residual},
               {"relative_selfadjoint_residual", inv.norm > 0 ? inv.selfadjoint_residual / inv.norm : 0.0},
               {"worst_fold_level", inv.worst_fold_level},
               {"isometry_discrepancy", inv.isometry_discrepancy},
               {"witness", inv.witness},
               {"invariant", inv.invariant},
               {"projectors", projectors},
               {"idempotent_exact", all_idempotent},
               {"markov_samples", mc.samples},
               {"markov_violations", mc.violations},
               {"markov_worst_excess", mc.worst_excess}};
  return r;
}

StageResult stage_hilbert(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const CellGraph g(carpet, p["level"].get<int>());
  const double rho = rho_for(p, ctx, "hilbert");
  const auto A = make_form(p["a"].get<std::string>(), g, rho);
  const auto B = make_form(p["b"].get<std::string>(), g, rho);
  const auto ab = hilbert_data(A, B);
  const auto ba = hilbert_data(B, A);
  StageResult r;
  r.payload = {{"level", g.level()},
               {"a", p["a"]},
               {"b", p["b"]},
               {"sup", ab.sup},
               {"inf", ab.inf},
               {"h", ab.h},
               {"h_reverse", ba.h},
               {"symmetry_gap", std::abs(ab.h - ba.h)},
               {"method", ab.method}};
  return r;
}

StageResult stage_combine(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const CellGraph g(carpet, p["level"].get<int>());
  const double rho = rho_for(p, ctx, "combine");
  const auto A = make_form(p["a"].get<std::string>(), g, rho);
  const auto B = make_form(p["b"].get<std::string>(), g, rho);
  const auto c = combine(A, B, p["delta"].get<double>());
  StageResult r;
  r.payload = {{"level", g.level()},
               {"a", p["a"]},
               {"b", p["b"]},
               {"delta", c.delta},
               {"lambda", c.lambda},
               {"markov", c.markov},
               {"conservative", c.conservative},
               {"psd", c.psd},
               {"smallest_ritz", c.smallest_ritz},
               {"conservativity_residual", c.conservativity_residual},
               {"positive_offdiagonals", c.positive_offdiagonals}};
  return r;
}

StageResult stage_besov(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const CellGraph g(carpet, p["level"].get<int>());
  const double rho = rho_for(p, ctx, "besov");
  const double beta0 = beta0_for(p, ctx, "besov");
  const auto form = normalize(bb_form(g, rho), g);
  const auto H0 = [beta0](double r) { return std::pow(r, beta0); };
  const auto samples = p["samples"].get<std::size_t>();
  const auto seed = p["seed"].get<std::uint64_t>();
  std::vector<double> ratios;
  for (std::size_t s = 0; s < samples; ++s) {
    Philox4x32 rng(seed, s);
    Vector f(static_cast<long>(g.size()));
    for (long i = 0; i < f.size(); ++i) f[i] = rng.uniform();
    ratios.push_back(besov_norm(g, f, H0, 1).norm / form.energy(f));
  }
  const auto [lo, hi] = std::minmax_element(ratios.begin(), ratios.end());
  StageResult r;
  r.payload = {{"level", g.level()},
               {"samples", samples},
               {"beta0", beta0},
               {"min_ratio", *lo},
               {"max_ratio", *hi},
               {"band", *hi / *lo},
               {"ratios", ratios}};
  return r;
}

StageResult stage_contract(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const int level = p["level"].get<int>();
  const CellGraph g(carpet, level);
  const double rho = rho_for(p, ctx, "contract");
  std::vector<DiscreteForm> family{make_form("bb", g, rho), make_form("kz", g, rho)};
  const auto tab = contraction_experiment(carpet, level, family, p["iterations"].get<int>());
  json pairs = json::array();
  for (const auto& [a, b] : tab.pairs) pairs.push_back({kFamilies[a], kFamilies[b]});
  StageResult r;
  r.payload = {{"levels", tab.levels},
               {"pairs", pairs},
               {"h", tab.h},
               {"nonincreasing", tab.nonincreasing},
               {"max_growth", tab.max_growth},
               {"terminal", tab.terminal}};
  return r;
}

WalkConfig walk_config(const json& p, const StageContext& ctx) {
  WalkConfig cfg;
  cfg.seed = p["seed"].get<std::uint64_t>();
  cfg.samples = p["samples"].get<std::size_t>();
  cfg.threads = ctx.threads;
  return cfg;
}

StageResult stage_walk_exit(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const auto rep = exit_time_scaling(carpet, p["n_max"].get<int>());
  json levels = json::array();
  StageResult r;
  for (const auto& e : rep.levels) {
    levels.push_back({{"level", e.level},
                      {"cells", e.cells},
                      {"start", e.start},
                      {"mean_steps", e.mean_steps},
                      {"degenerate", e.degenerate}});
    if (!e.degenerate) r.residuals.push_back(diag_json("exit_" + std::to_string(e.level), e.diagnostics));
  }
  r.payload = {{"levels", levels}, {"ratios", rep.ratios}};
  const int mc_level = p["mc_level"].get<int>();
  if (mc_level > 0) {
    const CellGraph g(carpet, mc_level);
    const auto& e = rep.levels.at(static_cast<std::size_t>(mc_level));
    const auto mc = exit_time_monte_carlo(g, e.start, walk_config(p, ctx));
    r.payload["monte_carlo"] = {{"level", mc_level},
                                {"samples", mc.samples},
                                {"mean", mc.mean},
                                {"stderr", mc.stderr_},
                                {"exact", e.mean_steps},
                                {"z", mc.stderr_ > 0 ? (mc.mean - e.mean_steps) / mc.stderr_ : 0.0}};
  }
  return r;
}

StageResult stage_walk_move(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const int n = p["level"].get<int>();
  const int d = carpet.dimension();
  const auto kind = p["kind"].get<std::string>();
  const HalfFace a0 = origin_halfface(d, n, 0);
  const HalfFace a1 = kind == "corner" ? origin_halfface(d, n, 1) : slide_halfface(d, n, 0, 1);
  const auto rep = move_probability(carpet, n, a0, a1, walk_config(p, ctx));
  StageResult r;
  r.payload = {{"level", rep.level},
               {"walk_level", rep.walk_level},
               {"kind", rep.kind == MoveKind::Corner ? "corner" : "slide"},
               {"domain_cells", rep.domain_cells},
               {"start_cells", rep.start_cells},
               {"target_cells", rep.target_cells},
               {"start", rep.start},
               {"exact_worst", rep.exact_worst},
               {"exact_best", rep.exact_best},
               {"samples", rep.samples},
               {"successes", rep.successes},
               {"estimate", rep.estimate},
               {"ci95", wilson_json(rep.ci95)},
               {"ci99", wilson_json(rep.ci99)},
               {"q0", rep.q0},
               {"q1", rep.q1},
               {"floor", rep.floor},
               {"clears_floor", rep.clears_floor},
               {"anomaly", rep.anomaly}};
  return r;
}

std::size_t cell_at(const CellGraph& g, const json& coords, const std::string& what) {
  const auto c = coords.get<Coord>();
  if (static_cast<int>(c.size()) != g.dimension()) throw DomainError(what + ": wrong number of coordinates");
  const auto idx = g.find(c);
  if (!idx) throw DomainError(what + ": cell not in F_n");
  return *idx;
}

StageResult stage_walk_couple(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const CellGraph g(carpet, p["level"].get<int>());
  const auto x = cell_at(g, p["x"], "walk-couple x");
  const auto y = cell_at(g, p["y"], "walk-couple y");
  json rows = json::array();
  double prev = -1.0;
  bool monotone = true;
  // Radii in increasing order: the ratio distance / r shrinks along the sweep.
  auto radii = p["radii"].get<std::vector<double>>();
  std::sort(radii.begin(), radii.end());
  for (double rad : radii) {
    const auto rep = coupling_experiment(g, x, y, p["m"].get<int>(), rad, walk_config(p, ctx));
    if (prev >= 0 && rep.ci95.upper < prev) monotone = false;
    prev = std::max(prev, rep.ci95.lower);
    rows.push_back({{"radius", rad},
                    {"distance", rep.distance},
                    {"distance_over_radius", rep.distance / rad},
                    {"samples", rep.samples},
                    {"coupled", rep.coupled},
                    {"estimate", rep.estimate},
                    {"ci95", wilson_json(rep.ci95)},
                    {"mean_meeting_steps", rep.mean_meeting_steps}});
  }
  StageResult r;
  r.payload = {{"level", g.level()}, {"x", p["x"]}, {"y", p["y"]}, {"m", p["m"]}, {"sweep", rows},
               {"nondecreasing_within_ci", monotone}};
  return r;
}

StageResult stage_walk_harnack(const Carpet& carpet, const json& p) {
  const CellGraph g(carpet, p["level"].get<int>());
  const double R = p["radius"].get<double>();
  const auto stride = p["stride"].get<std::size_t>();
  json rows = json::array();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  StageResult r;
  for (std::size_t c = 0; c < g.size(); c += stride) {
    HarnackReport rep;
    try {
      rep = harnack_ratio(g, c, R);
    } catch (const DomainError&) {
      continue;
    }
    rows.push_back({{"center", c},
                    {"ball_cells", rep.ball_cells},
                    {"half_ball_cells", rep.half_ball_cells},
                    {"boundary_cells", rep.boundary_cells},
                    {"ratio", rep.ratio}});
    lo = std::min(lo, rep.ratio);
    hi = std::max(hi, rep.ratio);
    r.residuals.push_back(diag_json("harnack_" + std::to_string(c), rep.diagnostics));
  }
  if (rows.empty()) throw DomainError("walk-harnack: no admissible centre");
  r.payload = {{"level", g.level()}, {"radius", R},     {"centers", rows.size()},
               {"min_ratio", lo},    {"max_ratio", hi}, {"spread", hi / lo},
               {"results", rows}};
  return r;
}

StageResult stage_heatkernel(const Carpet& carpet, const json& p, const StageContext& ctx) {
  const CellGraph g(carpet, p["level"].get<int>());
  HeatKernelOptions opt;
  opt.mode = p["mode"].get<std::string>() == "monte-carlo" ? HeatKernelMode::MonteCarlo : HeatKernelMode::MatrixPower;
  opt.beta0 = beta0_for(p, ctx, "heatkernel");
  opt.max_starts = p["max_starts"].get<std::size_t>();
  opt.points_per_decade = p["points_per_decade"].get<std::size_t>();
  opt.walk = walk_config(p, ctx);
  opt.mc_max_time = p["mc_max_time"].get<std::size_t>();
  const auto est = heat_kernel(g, opt);
  json off = json::array();
  for (const auto& o : est.off_diagonal) off.push_back({o.distance, o.t, o.value});
  const double target = 2.0 * carpet.alpha() / opt.beta0;
  StageResult r;
  r.payload = {{"level", g.level()},
               {"mode", p["mode"]},
               {"beta0", opt.beta0},
               {"starts", est.starts.size()},
               {"times", est.times},
               {"diagonal", est.diagonal},
               {"diagonal_stderr", est.diagonal_stderr},
               {"window", json::array({est.window_lo, est.window_hi})},
               {"fit_points", est.fit_points},
               {"slope", est.slope},
               {"spectral_dimension", est.spectral_dimension},
               {"spectral_dimension_target", target},
               {"spectral_dimension_relative_error",
                est.fit_points >= 3 ? json(std::abs(est.spectral_dimension - target) / target) : json(nullptr)},
               {"eta_hat", est.eta_points >= 3 ? json(est.eta_hat) : json(nullptr)},
               {"eta_target", 1.0 / (opt.beta0 - 1.0)},
               {"eta_points", est.eta_points},
               {"stochasticity_residual", est.stochasticity_residual},
               {"diagnostic", est.diagnostic},
               {"off_diagonal", off}};
  return r;
}

const std::map<std::string, std::string>& modules() {
  static const std::map<std::string, std::string> m{
      {"validate", "geometry"},      {"cells", "geometry"},       {"resist", "network"},
      {"rho", "network"},            {"gamma", "network"},        {"timescale", "network"},
      {"res-annulus", "network"},    {"form-build", "forms"},     {"form-invariance", "forms"},
      {"hilbert", "forms"},          {"combine", "forms"},        {"besov", "forms"},
      {"contract", "forms"},         {"walk-exit", "walk"},       {"walk-move", "walk"},
      {"walk-couple", "walk"},       {"walk-harnack", "walk"},    {"heatkernel", "walk"}};
  return m;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_index(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 2 ? 2 - s.size() : 0, '0') + s;
}

}  // namespace

// ---------------------------------------------------------------------------

CachePolicy parse_cache_policy(const std::string& s) {
  if (s == "use") return CachePolicy::Use;
  if (s == "refresh") return CachePolicy::Refresh;
  if (s == "off") return CachePolicy::Off;
  throw ConfigError("cache policy must be use, refresh or off, got '" + s + "'");
}

std::vector<std::string> stage_names() {
  std::vector<std::string> out;
  for (const auto& [k, _] : modules()) out.push_back(k);
  return out;
}

std::string stage_module(const std::string& op) {
  const auto it = modules().find(op);
  if (it == modules().end()) throw ConfigError("unknown stage '" + op + "'");
  return it->second;
}

json normalize_params(const std::string& op, const json& params, std::uint64_t seed) {
  stage_module(op);
  ParamReader r(op, params.is_null() ? json::object() : params);
  if (op == "cells") {
    r.integer("level", 2, 0, 8);
  } else if (op == "resist") {
    r.integer("level", 3, 0, 8);
    r.choice("model", "crosswire", kModels);
    r.choice("solver", "auto", kSolvers);
    r.number("max_iteration_factor", 50.0, 0.0, 1e6, true);
  } else if (op == "rho") {
    r.integer("n_max", 4, 2, 8);
    r.choice("solver", "auto", kSolvers);
  } else if (op == "gamma") {
    r.integer("n_max", 4, 1, 8);
    r.choice("model", "crosswire", kModels);
    r.choice("solver", "auto", kSolvers);
    r.optional_number("rho_hat", 0.0, 1e6, true);
  } else if (op == "timescale") {
    r.integer("samples", 2000, 1, 10'000'000);
    r.seed(seed);
    r.optional_number("beta0", 0.0, 100.0, true);
  } else if (op == "res-annulus") {
    r.integer("level", 3, 1, 7);
    r.number("radius", 1.0 / 9.0, 0.0, 0.5, true);
    r.integer("stride", 7, 1, 1'000'000);
    r.optional_number("beta0", 0.0, 100.0, true);
  } else if (op == "form-build") {
    r.integer("level", 2, 1, 6);
    r.choice("family", "bb", kFamilies);
    r.optional_number("rho_hat", 0.0, 1e6, true);
  } else if (op == "form-invariance") {
    r.integer("level", 2, 1, 5);
    r.choice("family", "bb", kFamilies);
    r.number("tolerance", 1e-9, 0.0, 1.0, true);
    r.integer("samples", 1000, 0, 1'000'000);
    r.seed(seed);
    r.optional_number("rho_hat", 0.0, 1e6, true);
  } else if (op == "hilbert" || op == "combine") {
    r.integer("level", 2, 1, 5);
    r.choice("a", "bb", kFamilies);
    r.choice("b", "kz", kFamilies);
    if (op == "combine") r.number("delta", 0.01, 0.0, 1e6, true);
    r.optional_number("rho_hat", 0.0, 1e6, true);
  } else if (op == "besov") {
    r.integer("level", 3, 1, 5);
    r.integer("samples", 100, 1, 100'000);
    r.seed(seed);
    r.optional_number("rho_hat", 0.0, 1e6, true);
    r.optional_number("beta0", 0.0, 100.0, true);
  } else if (op == "contract") {
    r.integer("level", 3, 2, 5);
    r.integer("iterations", 2, 1, 10);
    r.optional_number("rho_hat", 0.0, 1e6, true);
  } else if (op == "walk-exit") {
    r.integer("n_max", 4, 2, 6);
    r.integer("mc_level", 2, 0, 3);
    r.integer("samples", 10000, 1, 100'000'000);
    r.seed(seed);
  } else if (op == "walk-move") {
    r.integer("level", 1, 1, 2);
    r.choice("kind", "corner", {"corner", "slide"});
    r.integer("samples", 100000, 1, 100'000'000);
    r.seed(seed);
  } else if (op == "walk-couple") {
    r.integer("level", 3, 1, 6);
    r.integer("m", 1, 0, 6);
    r.coords("x", {8, 4});
    r.coords("y", {9, 4});
    r.numbers("radii", {1.0 / 3.0, 2.0 / 3.0, 1.0}, 0.0, 1.0);
    r.integer("samples", 2000, 1, 100'000'000);
    r.seed(seed);
  } else if (op == "walk-harnack") {
    r.integer("level", 3, 1, 6);
    r.number("radius", 0.25, 0.0, 1.0, true);
    r.integer("stride", 7, 1, 1'000'000);
  } else if (op == "heatkernel") {
    r.integer("level", 3, 1, 7);
    r.choice("mode", "matrix-power", {"matrix-power", "monte-carlo"});
    r.integer("max_starts", 64, 1, 100'000);
    r.integer("points_per_decade", 16, 1, 1000);
    r.integer("samples", 20000, 1, 100'000'000);
    r.integer("mc_max_time", 64, 2, 1'000'000);
    r.seed(seed);
    r.optional_number("beta0", 0.0, 100.0, true);
  }
  return r.finish();
}

json StageContext::inputs(const std::string& op) const {
  json in = json::object();
  const bool rho = op == "gamma" || op == "form-build" || op == "form-invariance" || op == "hilbert" ||
                   op == "combine" || op == "besov" || op == "contract";
  const bool beta = op == "timescale" || op == "res-annulus" || op == "besov" || op == "heatkernel";
  const bool gam = op == "timescale" || op == "res-annulus";
  if (rho && rho_hat) in["rho_hat"] = *rho_hat;
  if (beta && beta0) in["beta0"] = *beta0;
  if (gam && gamma) in["gamma"] = gamma_json(*gamma);
  return in;
}

void StageContext::absorb(const std::string& op, const json& payload) {
  if (op == "rho") {
    rho_hat = payload.at("rho_hat").get<double>();
    beta0 = payload.at("beta0").get<double>();
  } else if (op == "gamma") {
    gamma = gamma_from_json(payload);
  }
}

StageResult run_stage(const Carpet& carpet, const std::string& op, const json& p, StageContext& ctx) {
  if (op == "validate") return stage_validate(carpet);
  if (op == "cells") return stage_cells(carpet, p);
  if (op == "resist") return stage_resist(carpet, p);
  if (op == "rho") return stage_rho(carpet, p);
  if (op == "gamma") return stage_gamma(carpet, p, ctx);
  if (op == "timescale") return stage_timescale(carpet, p, ctx);
  if (op == "res-annulus") return stage_res_annulus(carpet, p, ctx);
  if (op == "form-build") return stage_form_build(carpet, p, ctx);
  if (op == "form-invariance") return stage_form_invariance(carpet, p, ctx);
  if (op == "hilbert") return stage_hilbert(carpet, p, ctx);
  if (op == "combine") return stage_combine(carpet, p, ctx);
  if (op == "besov") return stage_besov(carpet, p, ctx);
  if (op == "contract") return stage_contract(carpet, p, ctx);
  if (op == "walk-exit") return stage_walk_exit(carpet, p, ctx);
  if (op == "walk-move") return stage_walk_move(carpet, p, ctx);
  if (op == "walk-couple") return stage_walk_couple(carpet, p, ctx);
  if (op == "walk-harnack") return stage_walk_harnack(carpet, p);
  if (op == "heatkernel") return stage_heatkernel(carpet, p, ctx);
  throw ConfigError("unknown stage '" + op + "'");
}

// ---------------------------------------------------------------------------
// Configuration

ExperimentConfig parse_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  static const std::set<std::string> keys{"carpet", "stages", "output_dir", "cache", "cache_dir", "seed", "threads"};
  for (const auto& [k, _] : j.items())
    if (!keys.count(k)) throw ConfigError("unknown config key '" + k + "'");
  ExperimentConfig c;
  if (!j.contains("carpet")) throw ConfigError("config needs a 'carpet' (preset name or spec object)");
  try {
    if (j["carpet"].is_string()) {
      c.carpet_name = j["carpet"].get<std::string>();
      c.carpet = preset(c.carpet_name);
    } else {
      c.carpet_name = "custom";
      c.carpet = spec_from_json(j["carpet"]);
    }
    (void)Carpet(c.carpet);  // structural checks up front
  } catch (const SpecError& e) {
    throw ConfigError(std::string("carpet: ") + e.what());
  }
  if (j.contains("output_dir")) c.output_dir = j["output_dir"].get<std::string>();
  if (j.contains("cache")) c.cache = parse_cache_policy(j["cache"].get<std::string>());
  if (j.contains("cache_dir")) c.cache_dir = j["cache_dir"].get<std::string>();
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<std::int64_t>() < 0)
      throw ConfigError("seed must be a non-negative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("threads")) {
    if (!j["threads"].is_number_integer() || j["threads"].get<std::int64_t>() < 1 || j["threads"].get<std::int64_t>() > 256)
      throw ConfigError("threads must be an integer in [1, 256]");
    c.threads = j["threads"].get<unsigned>();
  }
  if (!j.contains("stages") || !j["stages"].is_array() || j["stages"].empty())
    throw ConfigError("config needs a non-empty 'stages' array");
  for (const auto& s : j["stages"]) {
    StageConfig st;
    if (s.is_string()) {
      st.op = s.get<std::string>();
    } else if (s.is_object()) {
      for (const auto& [k, _] : s.items())
        if (k != "op" && k != "params" && k != "assert") throw ConfigError("unknown stage key '" + k + "'");
      if (!s.contains("op") || !s["op"].is_string()) throw ConfigError("stage needs an 'op' string");
      st.op = s["op"].get<std::string>();
      if (s.contains("assert")) {
        if (!s["assert"].is_object()) throw ConfigError(st.op + ".assert must be an object");
        st.checks = s["assert"];
        for (const auto& [path, rule] : st.checks.items()) {
          if (path.empty() || path[0] != '/') throw ConfigError(st.op + ".assert: '" + path + "' is not a JSON pointer");
          if (!rule.is_object()) throw ConfigError(st.op + ".assert." + path + " must be an object");
          for (const auto& [rk, rv] : rule.items()) {
            if (rk != "min" && rk != "max" && rk != "equals")
              throw ConfigError(st.op + ".assert." + path + ": unknown rule '" + rk + "'");
            if ((rk == "min" || rk == "max") && !rv.is_number())
              throw ConfigError(st.op + ".assert." + path + "." + rk + " must be a number");
          }
        }
      }
    } else {
      throw ConfigError("stage must be a name or an object");
    }
    try {
      st.params = normalize_params(st.op, s.is_object() && s.contains("params") ? s["params"] : json::object(), c.seed);
    } catch (const json::exception& e) {
      throw ConfigError(st.op + ": " + e.what());
    }
    c.stages.push_back(std::move(st));
  }
  return c;
}

ExperimentConfig load_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
  try {
    return parse_config(j);
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Envelopes and cache

json envelope_to_json(const ResultEnvelope& e) {
  return {{"spec_hash", e.spec_hash},
          {"module", e.module},
          {"op", e.op},
          {"params", e.params},
          {"inputs", e.inputs},
          {"payload", e.payload},
          {"payload_sha256", sha256_hex(e.payload.dump())},
          {"wall_time", e.wall_time},
          {"version", e.version},
          {"residuals", e.residuals},
          {"cache_hit", e.cache_hit}};
}

ResultEnvelope envelope_from_json(const json& j) {
  try {
    ResultEnvelope e;
    e.spec_hash = j.at("spec_hash").get<std::string>();
    e.module = j.at("module").get<std::string>();
    e.op = j.at("op").get<std::string>();
    e.params = j.at("params");
    e.inputs = j.value("inputs", json::object());
    e.payload = j.at("payload");
    e.wall_time = j.at("wall_time").get<double>();
    e.version = j.at("version").get<std::string>();
    e.residuals = j.value("residuals", json::array());
    e.cache_hit = j.value("cache_hit", false);
    if (j.contains("payload_sha256") && j["payload_sha256"].get<std::string>() != sha256_hex(e.payload.dump()))
      throw ConfigError("payload hash mismatch");
    return e;
  } catch (const json::exception& ex) {
    throw ConfigError(std::string("malformed envelope: ") + ex.what());
  }
}

std::string cache_key(const std::string& spec_hash, const std::string& op, const json& params, const json& inputs) {
  const json canon{{"spec_hash", spec_hash}, {"op", op}, {"params", params}, {"inputs", inputs},
                   {"version", kArtifactVersion}};
  return sha256_hex(canon.dump());
}

std::vector<std::string> check_assertions(const json& payload, const json& checks) {
  std::vector<std::string> failures;
  for (const auto& [path, rule] : checks.items()) {
    const json::json_pointer ptr(path);
    if (!payload.contains(ptr)) {
      failures.push_back(path + ": missing from payload");
      continue;
    }
    const auto& v = payload.at(ptr);
    if (rule.contains("equals") && v != rule["equals"])
      failures.push_back(path + " = " + v.dump() + ", expected " + rule["equals"].dump());
    if (rule.contains("min") || rule.contains("max")) {
      if (!v.is_number()) {
        failures.push_back(path + " = " + v.dump() + " is not a number");
        continue;
      }
      const double x = v.get<double>();
      if (rule.contains("min") && !(x >= rule["min"].get<double>()))
        failures.push_back(path + " = " + v.dump() + " below " + rule["min"].dump());
      if (rule.contains("max") && !(x <= rule["max"].get<double>()))
        failures.push_back(path + " = " + v.dump() + " above " + rule["max"].dump());
    }
  }
  return failures;
}

void write_atomic(const std::string& path, const std::string& contents) {
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write " + tmp.string());
    out << contents;
    if (!out) throw ConfigError("write failed for " + tmp.string());
  }
  fs::rename(tmp, target);
}

// ---------------------------------------------------------------------------

PipelineResult run_pipeline(const ExperimentConfig& config, std::ostream& log) {
  PipelineResult result;
  const Carpet carpet(config.carpet);
  const std::string hash = spec_hash(config.carpet);
  const fs::path out_dir(config.output_dir);
  const fs::path cache_dir = config.cache_dir.empty() ? out_dir / "cache" : fs::path(config.cache_dir);
  fs::create_directories(out_dir);

  const bool only_validate = std::all_of(config.stages.begin(), config.stages.end(),
                                         [](const StageConfig& s) { return s.op == "validate"; });
  const auto validation = validate(carpet);
  if (!validation.passed()) {
    for (const auto& a : validation.axioms)
      if (!a.passed) log << "validation failed: " << a.axiom << " (" << a.name << "): " << a.witness << "\n";
    if (!only_validate) {
      result.exit_code = kExitValidation;
      return result;
    }
  }

  StageContext ctx;
  ctx.threads = config.threads;
  bool assertion_failed = false;
  for (std::size_t i = 0; i < config.stages.size(); ++i) {
    const auto& st = config.stages[i];
    StageOutcome outcome;
    outcome.op = st.op;
    ResultEnvelope env;
    env.spec_hash = hash;
    env.module = stage_module(st.op);
    env.op = st.op;
    env.params = st.params;
    env.inputs = ctx.inputs(st.op);
    const std::string key = cache_key(hash, st.op, env.params, env.inputs);
    const fs::path cache_file = cache_dir / (key + ".json");

    bool hit = false;
    if (config.cache == CachePolicy::Use && fs::exists(cache_file)) {
      try {
        const auto cached = envelope_from_json(json::parse(read_file(cache_file)));
        if (cached.version == kArtifactVersion && cached.op == st.op && cached.spec_hash == hash) {
          env.payload = cached.payload;
          env.residuals = cached.residuals;
          env.wall_time = cached.wall_time;
          env.cache_hit = true;
          hit = true;
        }
      } catch (const std::exception& e) {
        log << st.op << ": ignoring unreadable cache entry " << cache_file.string() << ": " << e.what() << "\n";
      }
    }
    if (!hit) {
      const auto t0 = std::chrono::steady_clock::now();
      try {
        auto res = run_stage(carpet, st.op, st.params, ctx);
        env.payload = std::move(res.payload);
        env.residuals = std::move(res.residuals);
      } catch (const SolverError& e) {
        log << st.op << ": solver failure: " << e.what() << "\n";
        outcome.ok = false;
        outcome.message = e.what();
        result.stages.push_back(outcome);
        result.exit_code = kExitSolver;
        return result;
      } catch (const Error& e) {
        log << st.op << ": " << e.what() << "\n";
        outcome.ok = false;
        outcome.message = e.what();
        result.stages.push_back(outcome);
        result.exit_code = kExitError;
        return result;
      }
      env.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      ++result.computed;
      if (config.cache != CachePolicy::Off) write_atomic(cache_file.string(), envelope_to_json(env).dump(2) + "\n");
    } else {
      ++result.cache_hits;
    }
    ctx.absorb(st.op, env.payload);

    const fs::path file = out_dir / (format_index(i) + "-" + st.op + ".json");
    write_atomic(file.string(), envelope_to_json(env).dump(2) + "\n");
    outcome.file = file.string();
    outcome.cached = hit;

    if (st.op == "validate" && !env.payload.value("passed", false)) {
      outcome.ok = false;
      outcome.message = "carpet fails the axioms";
      result.stages.push_back(outcome);
      result.exit_code = kExitValidation;
      return result;
    }
    const auto failures = check_assertions(env.payload, st.checks);
    for (const auto& f : failures) log << st.op << ": assertion failed: " << f << "\n";
    if (!failures.empty()) {
      outcome.ok = false;
      outcome.message = failures.front();
      assertion_failed = true;
    }
    log << format_index(i) << " " << st.op << (hit ? " (cached)" : "") << (outcome.ok ? " ok" : " FAILED") << "\n";
    result.stages.push_back(outcome);
  }
  if (assertion_failed) result.exit_code = kExitAssertion;
  return result;
}

}  // namespace carpet
