#include "carpet/forms.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "carpet/error.hpp"
#include "carpet/rng.hpp"

namespace carpet {

// ---------------------------------------------------------------------------
// DiscreteForm

DiscreteForm::DiscreteForm(int level, SparseMatrix base, double scale, std::string family)
    : level_(level), base_(std::move(base)), scale_(scale), family_(std::move(family)) {
  if (base_.rows() != base_.cols()) throw PreconditionError("form matrix must be square");
  base_.makeCompressed();
}

double DiscreteForm::energy(const Vector& f) const { return scale_ * f.dot(base_ * f); }

double DiscreteForm::bilinear(const Vector& f, const Vector& g) const { return scale_ * f.dot(base_ * g); }

DiscreteForm DiscreteForm::rescaled(double factor) const { return DiscreteForm(level_, base_, scale_ * factor, family_); }

FormFlags DiscreteForm::flags() const {
  FormFlags fl;
  const auto n = base_.rows();
  const double norm = std::max(max_abs_row_sum(base_), 1e-300);
  fl.markov = true;
  Vector rows = Vector::Zero(n);
  std::vector<std::vector<std::size_t>> adj(static_cast<std::size_t>(n));
  for (int k = 0; k < base_.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(base_, k); it; ++it) {
      rows[it.row()] += it.value();
      if (it.row() == it.col() || it.value() == 0.0) continue;
      if (it.value() > 0) fl.markov = false;
      adj[static_cast<std::size_t>(it.row())].push_back(static_cast<std::size_t>(it.col()));
    }
  fl.conservativity_residual = n ? rows.cwiseAbs().maxCoeff() / norm : 0.0;
  fl.conservative = fl.conservativity_residual <= 1e-12;
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::vector<std::size_t> stack;
  std::size_t count = 0;
  if (n > 0) {
    seen[0] = 1;
    stack.push_back(0);
    count = 1;
  }
  while (!stack.empty()) {
    auto i = stack.back();
    stack.pop_back();
    for (auto j : adj[i])
      if (!seen[j]) {
        seen[j] = 1;
        ++count;
        stack.push_back(j);
      }
  }
  fl.irreducible = count == static_cast<std::size_t>(n);
  return fl;
}

// ---------------------------------------------------------------------------
// Families

DiscreteForm bb_form(const CellGraph& graph, double rho_hat) {
  if (!(rho_hat > 0)) throw DependencyError("bb_form needs the resistance scale factor");
  std::vector<WeightedEdge> edges;
  for (const auto& [i, j] : graph.edges()) edges.push_back({i, j, 1.0});
  const auto& c = graph.carpet();
  const double L = c.length_scale();
  const double a_n = std::pow(c.mass() * rho_hat / (L * L), graph.level());
  return DiscreteForm(graph.level(), laplacian(graph.size(), edges), a_n, "bb");
}

int separation_level(const CellGraph& graph, std::size_t a, std::size_t b) {
  const auto ca = graph.coords(a), cb = graph.coords(b);
  const std::int64_t L = graph.carpet().length_scale();
  std::int64_t div = graph.side();
  for (int j = 1; j <= graph.level(); ++j) {
    div /= L;
    for (std::size_t k = 0; k < ca.size(); ++k)
      if (ca[k] / div != cb[k] / div) return j;
  }
  return 0;
}

DiscreteForm kz_form_raw(const CellGraph& graph, double rho_hat) {
  if (!(rho_hat > 0)) throw DependencyError("kz_form needs the resistance scale factor");
  std::vector<WeightedEdge> edges;
  for (const auto& [i, j] : graph.edges())
    edges.push_back({i, j, std::pow(rho_hat, separation_level(graph, i, j) - 1)});
  return DiscreteForm(graph.level(), laplacian(graph.size(), edges), 1.0, "kz");
}

DiscreteForm kz_form(const CellGraph& graph, double rho_hat) {
  auto raw = kz_form_raw(graph, rho_hat);
  if (graph.level() == 0) return raw;
  return normalize(raw, graph);
}

double form_norm(const DiscreteForm& form, const CellGraph& graph, const SolverOptions& opt) {
  if (form.size() != graph.size()) throw DomainError("form_norm: form and graph sizes differ");
  const auto lo = graph.face_cells(0, false), hi = graph.face_cells(0, true);
  std::vector<std::size_t> fixed;
  std::vector<double> values;
  for (auto i : lo) {
    if (graph.on_face(i, 0, true)) throw PreconditionError("form_norm: a cell touches both faces (level 0)");
    fixed.push_back(i);
    values.push_back(0.0);
  }
  for (auto i : hi) {
    fixed.push_back(i);
    values.push_back(1.0);
  }
  SolveDiagnostics diag;
  const Vector u = dirichlet_solve(form.base(), fixed, values, Vector(), opt, diag);
  return form.scale() * u.dot(form.base() * u);
}

DiscreteForm normalize(const DiscreteForm& form, const CellGraph& graph, const SolverOptions& opt) {
  const DiscreteForm unit(form.level(), form.base(), 1.0, form.family());
  const double c = form_norm(unit, graph, opt);
  if (!(c > 0)) throw PreconditionError("normalize: zero face-to-face conductance");
  return DiscreteForm(form.level(), form.base(), 1.0 / c, form.family());
}

// ---------------------------------------------------------------------------
// Folding projector

FoldingProjector::FoldingProjector(const CellGraph& graph, int fold_level)
    : form_level_(graph.level()), fold_level_(fold_level) {
  if (fold_level < 0 || fold_level > graph.level())
    throw DomainError("fold level must lie in [0, form level]");
  const Carpet& carpet = graph.carpet();
  const CellGraph coarse(carpet, fold_level);
  denominator_ = static_cast<std::int64_t>(coarse.size());
  rows_.resize(graph.size());
  for (std::size_t c = 0; c < graph.size(); ++c) {
    const CellId cell = graph.cell(c);
    std::map<std::size_t, std::int64_t> acc;
    for (std::size_t s = 0; s < coarse.size(); ++s) {
      const CellId img = fold_cell(carpet, coarse.cell(s), cell);
      auto j = graph.find(img.coords);
      if (!j) throw DomainError("fold image outside F_n; the generator is not symmetric");
      ++acc[*j];
    }
    rows_[c].assign(acc.begin(), acc.end());
  }
}

SparseMatrix FoldingProjector::matrix() const {
  std::vector<Eigen::Triplet<double>> t;
  const double inv = 1.0 / static_cast<double>(denominator_);
  for (std::size_t c = 0; c < rows_.size(); ++c)
    for (const auto& [j, v] : rows_[c]) t.emplace_back(static_cast<int>(c), static_cast<int>(j), v * inv);
  SparseMatrix T(static_cast<long>(size()), static_cast<long>(size()));
  T.setFromTriplets(t.begin(), t.end());
  return T;
}

Vector FoldingProjector::apply(const Vector& f) const {
  if (static_cast<std::size_t>(f.size()) != size()) throw DomainError("theta: function size does not match level");
  Vector out(f.size());
  for (std::size_t c = 0; c < rows_.size(); ++c) {
    double s = 0.0;
    for (const auto& [j, v] : rows_[c]) s += static_cast<double>(v) * f[static_cast<long>(j)];
    out[static_cast<long>(c)] = s / static_cast<double>(denominator_);
  }
  return out;
}

namespace {

std::int64_t checked_mul_add(std::int64_t acc, std::int64_t a, std::int64_t b) {
  std::int64_t p;
  if (__builtin_mul_overflow(a, b, &p) || __builtin_add_overflow(acc, p, &acc))
    throw ResourceError("integer overflow in exact projector arithmetic");
  return acc;
}

}  // namespace

std::vector<std::int64_t> FoldingProjector::apply_numerators(const std::vector<std::int64_t>& f) const {
  if (f.size() != size()) throw DomainError("theta: function size does not match level");
  std::vector<std::int64_t> out(size(), 0);
  for (std::size_t c = 0; c < rows_.size(); ++c)
    for (const auto& [j, v] : rows_[c]) out[c] = checked_mul_add(out[c], v, f[j]);
  return out;
}

bool FoldingProjector::idempotent_exact() const {
  std::vector<std::int64_t> acc(size(), 0);
  std::vector<std::size_t> touched;
  for (std::size_t c = 0; c < rows_.size(); ++c) {
    touched.clear();
    for (const auto& [k, v] : rows_[c])
      for (const auto& [j, w] : rows_[k]) {
        if (acc[j] == 0) touched.push_back(j);
        acc[j] = checked_mul_add(acc[j], v, w);
      }
    bool ok = true;
    std::size_t matched = 0;
    for (const auto& [j, v] : rows_[c]) {
      std::int64_t expect;
      if (__builtin_mul_overflow(v, denominator_, &expect)) throw ResourceError("overflow in idempotence check");
      if (acc[j] != expect) ok = false;
      ++matched;
    }
    std::size_t nonzero = 0;
    for (auto j : touched)
      if (acc[j] != 0) ++nonzero;
    if (nonzero != matched) ok = false;
    for (auto j : touched) acc[j] = 0;
    if (!ok) return false;
  }
  return true;
}

bool FoldingProjector::symmetric_exact() const {
  for (std::size_t c = 0; c < rows_.size(); ++c)
    for (const auto& [j, v] : rows_[c]) {
      const auto& r = rows_[j];
      auto it = std::lower_bound(r.begin(), r.end(), std::pair<std::size_t, std::int64_t>{c, INT64_MIN});
      if (it == r.end() || it->first != c || it->second != v) return false;
    }
  return true;
}

Vector theta_apply(const FoldingProjector& proj, const Vector& f) { return proj.apply(f); }

// ---------------------------------------------------------------------------
// Invariance

double isometry_discrepancy(const DiscreteForm& form, const CellGraph& graph, int level, std::string* witness) {
  if (level < 0 || level > graph.level()) throw DomainError("isometry_discrepancy: level out of range");
  const Carpet& carpet = graph.carpet();
  const CellGraph coarse(carpet, level);
  const std::int64_t w = carpet.side(graph.level() - level);
  const int d = carpet.dimension();
  const SparseMatrix M = form.matrix();
  const auto group = hyperoctahedral_group(d);

  // Internal edges of the first level-l cell, in local coordinates.
  const auto s0 = coarse.coords(0);
  std::vector<std::pair<Coord, Coord>> local_edges;
  std::vector<double> weights;
  for (const auto& [a, b] : graph.edges()) {
    auto ca = graph.coords(a), cb = graph.coords(b);
    bool inside = true;
    Coord la(d), lb(d);
    for (int k = 0; k < d; ++k) {
      la[k] = ca[k] - s0[k] * w;
      lb[k] = cb[k] - s0[k] * w;
      if (la[k] < 0 || la[k] >= w || lb[k] < 0 || lb[k] >= w) inside = false;
    }
    if (!inside) continue;
    local_edges.emplace_back(la, lb);
    weights.push_back(-M.coeff(static_cast<long>(a), static_cast<long>(b)));
  }

  double worst = 0.0;
  Coord ga(d), gb(d);
  for (std::size_t s = 0; s < coarse.size(); ++s) {
    const auto cs = coarse.coords(s);
    for (const auto& g : group) {
      for (std::size_t e = 0; e < local_edges.size(); ++e) {
        auto ia = g.apply(local_edges[e].first, w - 1), ib = g.apply(local_edges[e].second, w - 1);
        for (int k = 0; k < d; ++k) {
          ia[k] += cs[k] * w;
          ib[k] += cs[k] * w;
        }
        auto ja = graph.find(ia), jb = graph.find(ib);
        const double img = (ja && jb) ? -M.coeff(static_cast<long>(*ja), static_cast<long>(*jb)) : 0.0;
        const double diff = std::abs(img - weights[e]);
        if (diff > worst) {
          worst = diff;
          if (witness) {
            std::ostringstream os;
            os << "level " << level << " cell " << s << ", " << g.describe() << ": edge (";
            for (int k = 0; k < d; ++k) os << (k ? "," : "") << ia[k];
            os << ")-(";
            for (int k = 0; k < d; ++k) os << (k ? "," : "") << ib[k];
            os << ") weight " << img << " vs reference " << weights[e];
            *witness = os.str();
          }
        }
      }
    }
  }
  return worst;
}

namespace {

double selfadjoint_residual(const SparseMatrix& M, const FoldingProjector& proj) {
  const SparseMatrix T = proj.matrix();
  const SparseMatrix D = SparseMatrix(M * T) - SparseMatrix(SparseMatrix(T.transpose()) * M);
  double r = 0.0;
  for (int k = 0; k < D.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(D, k); it; ++it) r = std::max(r, std::abs(it.value()));
  return r;
}

}  // namespace

InvarianceReport invariance_check(const DiscreteForm& form, const CellGraph& graph, const FoldingProjector& proj,
                                  double tolerance) {
  if (proj.form_level() != form.level() || form.size() != graph.size())
    throw DomainError("invariance_check: incompatible levels");
  InvarianceReport rep;
  rep.tolerance = tolerance;
  const SparseMatrix M = form.matrix();
  rep.norm = max_abs_row_sum(M);
  rep.selfadjoint_residual = selfadjoint_residual(M, proj);
  rep.worst_fold_level = proj.fold_level();
  for (int l = 0; l < form.level(); ++l) {
    std::string w;
    const double disc = isometry_discrepancy(form, graph, l, &w);
    if (disc > rep.isometry_discrepancy) {
      rep.isometry_discrepancy = disc;
      rep.witness = w;
    }
  }
  const double tol = tolerance * std::max(rep.norm, 1e-300);
  rep.invariant = rep.selfadjoint_residual <= tol && rep.isometry_discrepancy <= tol;
  return rep;
}

InvarianceReport invariance_check(const DiscreteForm& form, const CellGraph& graph, double tolerance) {
  if (form.size() != graph.size()) throw DomainError("invariance_check: incompatible levels");
  InvarianceReport rep;
  rep.tolerance = tolerance;
  const SparseMatrix M = form.matrix();
  rep.norm = max_abs_row_sum(M);
  for (int l = 1; l <= form.level(); ++l) {
    const double r = selfadjoint_residual(M, FoldingProjector(graph, l));
    if (r >= rep.selfadjoint_residual) {
      rep.selfadjoint_residual = r;
      rep.worst_fold_level = l;
    }
  }
  for (int l = 0; l < form.level(); ++l) {
    std::string w;
    const double disc = isometry_discrepancy(form, graph, l, &w);
    if (disc > rep.isometry_discrepancy) {
      rep.isometry_discrepancy = disc;
      rep.witness = w;
    }
  }
  const double tol = tolerance * std::max(rep.norm, 1e-300);
  rep.invariant = rep.selfadjoint_residual <= tol && rep.isometry_discrepancy <= tol;
  return rep;
}

MarkovContraction markov_contraction_check(const DiscreteForm& form, std::size_t samples, std::uint64_t seed) {
  MarkovContraction mc;
  mc.samples = samples;
  const auto n = static_cast<long>(form.size());
  Vector f(n), g(n);
  for (std::size_t s = 0; s < samples; ++s) {
    Philox4x32 rng(seed, s);
    for (long i = 0; i < n; ++i) {
      f[i] = -0.5 + 2.0 * rng.uniform();
      g[i] = std::clamp(f[i], 0.0, 1.0);
    }
    const double ef = form.energy(f), eg = form.energy(g);
    const double excess = (eg - ef) / std::max(ef, 1e-300);
    mc.worst_excess = std::max(mc.worst_excess, excess);
    if (eg > ef * (1 + 1e-12) + 1e-14) ++mc.violations;
  }
  return mc;
}

// ---------------------------------------------------------------------------
// Besov

double besov_increment(const CellGraph& graph, const Vector& f, double r) {
  const double side = static_cast<double>(graph.side());
  if (r * side < 1.0 - 1e-9) throw DomainError("Besov radius below the cell size");
  if (static_cast<std::size_t>(f.size()) != graph.size()) throw DomainError("function size does not match level");
  const auto reach = static_cast<std::int64_t>(std::floor(r * side + 1e-9));
  const double mass = std::pow(static_cast<double>(graph.carpet().mass()), -graph.level());
  double sum = 0.0;
  for (std::size_t x = 0; x < graph.size(); ++x)
    for (std::size_t y = x + 1; y < graph.size(); ++y)
      if (graph.linf_distance(x, y) <= reach) {
        const double diff = f[static_cast<long>(x)] - f[static_cast<long>(y)];
        sum += 2.0 * diff * diff;
      }
  return std::pow(r, -graph.carpet().alpha()) * sum * mass * mass;
}

double besov_at(const CellGraph& graph, const Vector& f, const std::function<double(double)>& H, double r) {
  return besov_increment(graph, f, r) / H(r);
}

BesovResult besov_norm(const CellGraph& graph, const Vector& f, const std::function<double(double)>& H, int k) {
  if (k < 1) throw PreconditionError("Besov radii need k >= 1");
  BesovResult res;
  const double L = graph.carpet().length_scale();
  const double cell = 1.0 / static_cast<double>(graph.side());
  for (int j = 0;; ++j) {
    const double r = std::pow(L, -k * j);
    if (r < cell * (1 - 1e-9)) break;
    res.radii.push_back(r);
    res.scaled.push_back(besov_at(graph, f, H, r));
  }
  res.norm = *std::max_element(res.scaled.begin(), res.scaled.end());
  return res;
}

// ---------------------------------------------------------------------------
// Serialisation

void write_form(std::ostream& os, const DiscreteForm& form, const std::string& spec_hash) {
  const auto fl = form.flags();
  os << std::setprecision(17);
  os << "# spec_hash " << spec_hash << '\n'
     << "# family " << form.family() << '\n'
     << "# level " << form.level() << '\n'
     << "# size " << form.size() << '\n'
     << "# scale " << form.scale() << '\n'
     << "# markov " << fl.markov << '\n'
     << "# conservative " << fl.conservative << '\n'
     << "# irreducible " << fl.irreducible << '\n';
  // Column-major storage; emit in row-major order for readability.
  std::vector<std::tuple<long, long, double>> t;
  const auto& B = form.base();
  for (int k = 0; k < B.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(B, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
  std::sort(t.begin(), t.end());
  for (const auto& [i, j, v] : t) os << i << ' ' << j << ' ' << v << '\n';
}

DiscreteForm read_form(std::istream& is, FormHeader* header) {
  FormHeader h;
  long size = -1;
  std::vector<Eigen::Triplet<double>> t;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, key;
      ls >> hash >> key;
      if (key == "spec_hash") ls >> h.spec_hash;
      else if (key == "family") ls >> h.family;
      else if (key == "level") ls >> h.level;
      else if (key == "size") ls >> size;
      else if (key == "scale") ls >> h.scale;
      else if (key == "markov") ls >> h.flags.markov;
      else if (key == "conservative") ls >> h.flags.conservative;
      else if (key == "irreducible") ls >> h.flags.irreducible;
      continue;
    }
    long i, j;
    double v;
    if (!(ls >> i >> j >> v)) throw ConfigError("form file: malformed triplet line '" + line + "'");
    t.emplace_back(i, j, v);
  }
  if (size < 0) throw ConfigError("form file: missing size header");
  SparseMatrix B(size, size);
  B.setFromTriplets(t.begin(), t.end());
  if (header) *header = h;
  return DiscreteForm(h.level, B, h.scale, h.family.empty() ? "custom" : h.family);
}

}  // namespace carpet
