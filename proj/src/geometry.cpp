#include "carpet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "carpet/error.hpp"

namespace carpet {

namespace {

std::string format_coord(std::span<const std::int64_t> c) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < c.size(); ++i) os << (i ? "," : "") << c[i];
  os << ')';
  return os.str();
}

std::int64_t checked_pow(std::int64_t base, int exponent, std::int64_t limit) {
  std::int64_t r = 1;
  for (int k = 0; k < exponent; ++k) {
    if (r > limit / base) throw ResourceError("integer grid too large: " + std::to_string(base) + "^" +
                                              std::to_string(exponent));
    r *= base;
  }
  return r;
}

// Non-negative remainder.
std::int64_t pmod(std::int64_t a, std::int64_t m) {
  std::int64_t r = a % m;
  return r < 0 ? r + m : r;
}

// Are the (at most 2^d) cells connected under face adjacency?
bool face_connected(const std::vector<Coord>& pts) {
  if (pts.empty()) return true;
  std::vector<char> seen(pts.size(), 0);
  std::deque<std::size_t> q{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!q.empty()) {
    auto i = q.front();
    q.pop_front();
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (seen[j]) continue;
      std::int64_t diff = 0;
      for (std::size_t a = 0; a < pts[i].size(); ++a) diff += std::llabs(pts[i][a] - pts[j][a]);
      if (diff == 1) {
        seen[j] = 1;
        ++count;
        q.push_back(j);
      }
    }
  }
  return count == pts.size();
}

// Odometer over {lo..hi}^d.
bool next_index(Coord& x, std::int64_t lo, std::int64_t hi) {
  for (std::size_t k = x.size(); k-- > 0;) {
    if (++x[k] <= hi) return true;
    x[k] = lo;
  }
  return false;
}

}  // namespace

// ---------------------------------------------------------------------------
// Carpet

Carpet::Carpet(CarpetSpec spec) : spec_(std::move(spec)) {
  const int d = spec_.dimension;
  const int L = spec_.length_scale;
  if (d < 2) throw SpecError("dimension must be at least 2, got " + std::to_string(d));
  if (L < 3) throw SpecError("length_scale must be at least 3, got " + std::to_string(L));
  const std::int64_t cubes = checked_pow(L, d, std::int64_t{1} << 26);
  if (spec_.retained.empty()) throw SpecError("retained set is empty");
  if (static_cast<std::int64_t>(spec_.retained.size()) > cubes)
    throw SpecError("more retained cubes than level-1 cubes");
  mask_.assign(static_cast<std::size_t>(cubes), 0);
  for (const auto& c : spec_.retained) {
    if (static_cast<int>(c.size()) != d)
      throw SpecError("retained index " + format_coord(c) + " has wrong arity");
    std::int64_t key = 0;
    for (auto v : c) {
      if (v < 0 || v >= L) throw SpecError("retained index " + format_coord(c) + " out of range");
      key = key * L + v;
    }
    if (mask_[key]) throw SpecError("duplicate retained index " + format_coord(c));
    mask_[key] = 1;
  }
  std::sort(spec_.retained.begin(), spec_.retained.end());
}

double Carpet::alpha() const { return std::log(static_cast<double>(mass())) / std::log(length_scale()); }

std::int64_t Carpet::side(int level) const {
  if (level < 0) throw DomainError("negative level");
  const std::int64_t s = checked_pow(length_scale(), level, std::numeric_limits<std::int64_t>::max());
  // Keep s^d and doubled coordinates representable.
  checked_pow(2 * s + 2, dimension(), std::numeric_limits<std::int64_t>::max() / 4);
  return s;
}

bool Carpet::retained(std::span<const std::int64_t> index) const {
  const int L = length_scale();
  std::int64_t key = 0;
  for (auto v : index) {
    if (v < 0 || v >= L) return false;
    key = key * L + v;
  }
  return mask_[key] != 0;
}

bool Carpet::contains_cell(int level, std::span<const std::int64_t> coords) const {
  if (static_cast<int>(coords.size()) != dimension()) return false;
  const std::int64_t s = side(level);
  for (auto v : coords)
    if (v < 0 || v >= s) return false;
  const int L = length_scale();
  Coord digit(coords.size());
  std::int64_t scale = s / L;
  for (int k = 0; k < level; ++k) {
    for (std::size_t a = 0; a < coords.size(); ++a) digit[a] = (coords[a] / scale) % L;
    if (!retained(digit)) return false;
    scale /= L;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Isometry

Isometry::Isometry(std::vector<int> perm, std::vector<int> signs) : perm_(std::move(perm)), signs_(std::move(signs)) {
  if (perm_.size() != signs_.size()) throw PreconditionError("isometry: perm/signs size mismatch");
  std::vector<int> sorted = perm_;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i)
    if (sorted[i] != static_cast<int>(i)) throw PreconditionError("isometry: not a permutation");
  for (int s : signs_)
    if (s != 1 && s != -1) throw PreconditionError("isometry: signs must be +1 or -1");
}

Isometry Isometry::identity(int dimension) {
  std::vector<int> p(dimension);
  std::iota(p.begin(), p.end(), 0);
  return Isometry(p, std::vector<int>(dimension, 1));
}

Coord Isometry::apply(std::span<const std::int64_t> x, std::int64_t extent) const {
  Coord y(perm_.size());
  for (std::size_t i = 0; i < perm_.size(); ++i) {
    const auto v = x[perm_[i]];
    y[i] = signs_[i] > 0 ? v : extent - v;
  }
  return y;
}

Isometry Isometry::compose(const Isometry& inner) const {
  const auto d = perm_.size();
  std::vector<int> p(d), s(d);
  for (std::size_t i = 0; i < d; ++i) {
    p[i] = inner.perm_[perm_[i]];
    s[i] = signs_[i] * inner.signs_[perm_[i]];
  }
  return Isometry(p, s);
}

Isometry Isometry::inverse() const {
  const auto d = perm_.size();
  std::vector<int> p(d), s(d);
  for (std::size_t i = 0; i < d; ++i) {
    p[perm_[i]] = static_cast<int>(i);
    s[perm_[i]] = signs_[i];
  }
  return Isometry(p, s);
}

bool Isometry::is_rotation() const {
  int parity = 1;
  std::vector<char> seen(perm_.size(), 0);
  for (std::size_t i = 0; i < perm_.size(); ++i) {
    if (seen[i]) continue;
    std::size_t len = 0;
    for (std::size_t j = i; !seen[j]; j = perm_[j]) {
      seen[j] = 1;
      ++len;
    }
    if (len % 2 == 0) parity = -parity;
  }
  for (int s : signs_) parity *= s;
  return parity == 1;
}

int Isometry::order() const {
  const auto id = identity(dimension());
  Isometry g = *this;
  int k = 1;
  while (g != id) {
    g = g.compose(*this);
    ++k;
  }
  return k;
}

std::string Isometry::describe() const {
  std::ostringstream os;
  os << (is_rotation() ? "rotation" : "reflection") << " x -> (";
  for (std::size_t i = 0; i < perm_.size(); ++i)
    os << (i ? ", " : "") << (signs_[i] > 0 ? "" : "1-") << "x" << perm_[i] + 1;
  os << ")";
  if (dimension() == 2 && is_rotation() && order() == 4) os << " [90 degree rotation]";
  return os.str();
}

std::vector<Isometry> hyperoctahedral_group(int dimension) {
  if (dimension < 1) throw PreconditionError("dimension must be positive");
  std::vector<Isometry> gens;
  for (int k = 0; k + 1 < dimension; ++k) {
    std::vector<int> p(dimension);
    std::iota(p.begin(), p.end(), 0);
    std::swap(p[k], p[k + 1]);
    gens.emplace_back(p, std::vector<int>(dimension, 1));
  }
  {
    std::vector<int> p(dimension);
    std::iota(p.begin(), p.end(), 0);
    std::vector<int> s(dimension, 1);
    s[0] = -1;
    gens.emplace_back(p, s);
  }
  std::set<Isometry> group{Isometry::identity(dimension)};
  std::deque<Isometry> frontier{Isometry::identity(dimension)};
  while (!frontier.empty()) {
    auto g = frontier.front();
    frontier.pop_front();
    for (const auto& h : gens) {
      auto gh = h.compose(g);
      if (group.insert(gh).second) frontier.push_back(gh);
    }
  }
  return {group.begin(), group.end()};
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::passed() const {
  return std::all_of(axioms.begin(), axioms.end(), [](const AxiomCheck& a) { return a.passed; });
}

const AxiomCheck& ValidationReport::axiom(const std::string& id) const {
  for (const auto& a : axioms)
    if (a.axiom == id) return a;
  throw PreconditionError("no axiom " + id + " in report");
}

ValidationReport validate(const Carpet& carpet) {
  const int d = carpet.dimension();
  const int L = carpet.length_scale();
  const auto& retained = carpet.spec().retained;
  ValidationReport report;

  {
    AxiomCheck h1{"H1", "symmetry", true, ""};
    std::optional<std::string> fallback;
    int best_order = 0;
    for (const auto& g : hyperoctahedral_group(d)) {
      for (const auto& c : retained) {
        auto img = g.apply(c, L - 1);
        if (carpet.retained(img)) continue;
        std::string w = g.describe() + " maps " + format_coord(c) + " to " + format_coord(img) + ", not retained";
        // Prefer a proper rotation of the largest order as the witness.
        if (g.is_rotation() && g.order() > best_order) {
          best_order = g.order();
          h1.witness = w;
        } else if (!fallback) {
          fallback = w;
        }
        h1.passed = false;
        break;
      }
    }
    if (!h1.passed && h1.witness.empty()) h1.witness = *fallback;
    report.axioms.push_back(h1);
  }

  {
    AxiomCheck h2{"H2", "connectedness", true, ""};
    if (!face_connected(retained)) {
      h2.passed = false;
      // Report one cube unreachable from the first.
      std::set<Coord> seen{retained.front()};
      std::deque<Coord> q{retained.front()};
      while (!q.empty()) {
        auto c = q.front();
        q.pop_front();
        for (int a = 0; a < d; ++a)
          for (int s : {-1, 1}) {
            auto n = c;
            n[a] += s;
            if (carpet.retained(n) && seen.insert(n).second) q.push_back(n);
          }
      }
      for (const auto& c : retained)
        if (!seen.count(c)) {
          h2.witness = "cube " + format_coord(c) + " not face-connected to " + format_coord(retained.front());
          break;
        }
    }
    report.axioms.push_back(h2);
  }

  {
    AxiomCheck h3{"H3", "non-diagonality", true, ""};
    for (int m = 1; m <= report.h3_checked_up_to && h3.passed; ++m) {
      const std::int64_t res = m == 1 ? L : std::int64_t{L} * L;
      const std::int64_t pixel_per_cube = res / L;
      Coord corner(d, 0);
      do {
        std::vector<Coord> pts;
        Coord off(d, 0);
        do {
          Coord px(d), parent(d);
          for (int a = 0; a < d; ++a) {
            px[a] = corner[a] + off[a];
            parent[a] = px[a] / pixel_per_cube;
          }
          if (carpet.retained(parent)) pts.push_back(px);
        } while (next_index(off, 0, 1));
        if (!face_connected(pts)) {
          h3.passed = false;
          h3.witness = "block of 2^d level-" + std::to_string(m) + " cubes at " + format_coord(corner) +
                       " has disconnected interior";
          break;
        }
      } while (next_index(corner, 0, res - 2));
    }
    report.axioms.push_back(h3);
  }

  {
    AxiomCheck h4{"H4", "borders included", true, ""};
    for (int i = 0; i < L; ++i) {
      Coord c(d, 0);
      c[0] = i;
      if (!carpet.retained(c)) {
        h4.passed = false;
        h4.witness = "border cube " + format_coord(c) + " missing";
        break;
      }
    }
    report.axioms.push_back(h4);
  }
  return report;
}

ValidationReport validate(const CarpetSpec& spec) { return validate(Carpet(spec)); }

// ---------------------------------------------------------------------------
// CellGraph

CellGraph::CellGraph(const Carpet& carpet, int level, std::size_t cell_budget)
    : carpet_(carpet), level_(level), side_(carpet.side(level)) {
  const int d = carpet.dimension();
  const int L = carpet.length_scale();
  const auto m = static_cast<std::size_t>(carpet.mass());
  std::size_t count = 1;
  for (int k = 0; k < level; ++k) {
    if (count > cell_budget / m) throw ResourceError("level " + std::to_string(level) + " exceeds the cell budget of " +
                                                     std::to_string(cell_budget));
    count *= m;
  }

  std::vector<std::int64_t> cur(d, 0), next;
  for (int k = 0; k < level; ++k) {
    next.clear();
    next.reserve(cur.size() * m);
    for (std::size_t c = 0; c < cur.size() / d; ++c)
      for (const auto& r : carpet.spec().retained)
        for (int a = 0; a < d; ++a) next.push_back(cur[c * d + a] * L + r[a]);
    cur.swap(next);
  }

  std::vector<std::int64_t> keys(count);
  for (std::size_t c = 0; c < count; ++c) {
    std::int64_t key = 0;
    for (int a = 0; a < d; ++a) key = key * side_ + cur[c * d + a];
    keys[c] = key;
  }
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return keys[a] < keys[b]; });
  keys_.resize(count);
  coords_.resize(count * d);
  for (std::size_t i = 0; i < count; ++i) {
    keys_[i] = keys[order[i]];
    std::copy_n(cur.begin() + order[i] * d, d, coords_.begin() + i * d);
  }

  offsets_.assign(count + 1, 0);
  Coord nb(d);
  for (std::size_t i = 0; i < count; ++i) {
    for (int a = 0; a < d; ++a) {
      for (int s : {-1, 1}) {
        std::copy_n(coords_.begin() + i * d, d, nb.begin());
        nb[a] += s;
        if (auto j = find(nb)) {
          adjacency_.push_back(*j);
          if (i < *j) edges_.emplace_back(i, *j);
        }
      }
    }
    offsets_[i + 1] = adjacency_.size();
    std::sort(adjacency_.begin() + offsets_[i], adjacency_.end());
  }
  std::sort(edges_.begin(), edges_.end());
}

std::span<const std::int64_t> CellGraph::coords(std::size_t i) const {
  const auto d = static_cast<std::size_t>(dimension());
  return {coords_.data() + i * d, d};
}

CellId CellGraph::cell(std::size_t i) const {
  auto c = coords(i);
  return CellId{level_, Coord(c.begin(), c.end())};
}

std::optional<std::size_t> CellGraph::find(std::span<const std::int64_t> c) const {
  std::int64_t key = 0;
  for (auto v : c) {
    if (v < 0 || v >= side_) return std::nullopt;
    key = key * side_ + v;
  }
  auto it = std::lower_bound(keys_.begin(), keys_.end(), key);
  if (it == keys_.end() || *it != key) return std::nullopt;
  return static_cast<std::size_t>(it - keys_.begin());
}

std::span<const std::size_t> CellGraph::neighbors(std::size_t i) const {
  return {adjacency_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
}

bool CellGraph::on_face(std::size_t i, int axis, bool upper) const {
  const auto c = coords(i)[axis];
  return upper ? c == side_ - 1 : c == 0;
}

int CellGraph::outer_faces(std::size_t i) const {
  int k = 0;
  for (int a = 0; a < dimension(); ++a) k += on_face(i, a, false) + on_face(i, a, true);
  return k;
}

std::vector<std::size_t> CellGraph::face_cells(int axis, bool upper) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < size(); ++i)
    if (on_face(i, axis, upper)) out.push_back(i);
  return out;
}

std::int64_t CellGraph::linf_distance(std::size_t i, std::size_t j) const {
  auto a = coords(i), b = coords(j);
  std::int64_t r = 0;
  for (std::size_t k = 0; k < a.size(); ++k) r = std::max<std::int64_t>(r, std::llabs(a[k] - b[k]));
  return r;
}

std::vector<double> CellGraph::center(std::size_t i) const {
  auto c = coords(i);
  std::vector<double> x(c.size());
  for (std::size_t k = 0; k < c.size(); ++k) x[k] = (static_cast<double>(c[k]) + 0.5) / static_cast<double>(side_);
  return x;
}

std::size_t CellGraph::nearest(std::span<const double> point) const {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < size(); ++i) {
    auto x = center(i);
    double s = 0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (x[k] - point[k]) * (x[k] - point[k]);
    if (s < best_d - 1e-15) {
      best_d = s;
      best = i;
    }
  }
  return best;
}

bool CellGraph::connected() const {
  if (size() == 0) return true;
  std::vector<char> seen(size(), 0);
  std::vector<std::size_t> stack{0};
  seen[0] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    auto i = stack.back();
    stack.pop_back();
    for (auto j : neighbors(i))
      if (!seen[j]) {
        seen[j] = 1;
        ++count;
        stack.push_back(j);
      }
  }
  return count == size();
}

std::vector<CellId> cells(const Carpet& carpet, int level, std::size_t cell_budget) {
  CellGraph g(carpet, level, cell_budget);
  std::vector<CellId> out;
  out.reserve(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) out.push_back(g.cell(i));
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> adjacency(const Carpet& carpet, int level, std::size_t cell_budget) {
  return CellGraph(carpet, level, cell_budget).edges();
}

// ---------------------------------------------------------------------------
// Folding

bool contains_point(const Carpet& carpet, const GridPoint& p) {
  const int d = carpet.dimension();
  if (static_cast<int>(p.coords.size()) != d || p.resolution < 0) return false;
  const std::int64_t s = carpet.side(p.resolution);
  for (auto v : p.coords)
    if (v < 0 || v > s) return false;
  Coord off(d, 0), c(d);
  do {
    for (int a = 0; a < d; ++a) c[a] = p.coords[a] - off[a];
    if (carpet.contains_cell(p.resolution, c)) return true;
  } while (next_index(off, 0, 1));
  return false;
}

namespace {

// Reflected-periodic projection of one coordinate onto [s*w, (s+1)*w].
std::int64_t fold_point_coord(std::int64_t x, std::int64_t s, std::int64_t w) {
  const std::int64_t u = pmod(x - s * w, 2 * w);
  return s * w + (u <= w ? u : 2 * w - u);
}

// Same map on cell indices (cells of width 1 inside a block of w cells).
std::int64_t fold_cell_coord(std::int64_t c, std::int64_t s, std::int64_t w) {
  const std::int64_t u = pmod(c - s * w, 2 * w);
  return s * w + (u < w ? u : 2 * w - 1 - u);
}

}  // namespace

GridPoint fold(const Carpet& carpet, const CellId& target, const GridPoint& p) {
  if (p.resolution < target.level) throw DomainError("fold: point resolution below target level");
  if (!carpet.contains_cell(target.level, target.coords)) throw DomainError("fold: target cell not in F_n");
  if (!contains_point(carpet, p)) throw DomainError("fold: point " + format_coord(p.coords) + " not in F_r");
  const std::int64_t w = carpet.side(p.resolution - target.level);
  GridPoint out{p.resolution, Coord(p.coords.size())};
  for (std::size_t a = 0; a < p.coords.size(); ++a) out.coords[a] = fold_point_coord(p.coords[a], target.coords[a], w);
  return out;
}

CellId fold_cell(const Carpet& carpet, const CellId& target, const CellId& cell) {
  if (cell.level < target.level) throw DomainError("fold_cell: cell level below target level");
  if (!carpet.contains_cell(target.level, target.coords)) throw DomainError("fold_cell: target cell not in F_n");
  if (!carpet.contains_cell(cell.level, cell.coords)) throw DomainError("fold_cell: cell not in F_n");
  const std::int64_t w = carpet.side(cell.level - target.level);
  CellId out{cell.level, Coord(cell.coords.size())};
  for (std::size_t a = 0; a < cell.coords.size(); ++a) out.coords[a] = fold_cell_coord(cell.coords[a], target.coords[a], w);
  return out;
}

bool associated(const Carpet& carpet, const GridPoint& p, const GridPoint& q, int m) {
  if (p.resolution != q.resolution) throw DomainError("associated: points at different resolutions");
  if (p.resolution < m) throw DomainError("associated: resolution below m");
  const CellId origin{m, Coord(carpet.dimension(), 0)};
  return fold(carpet, origin, p) == fold(carpet, origin, q);
}

bool associated_cells(const Carpet& carpet, const CellId& a, const CellId& b, int m) {
  if (a.level != b.level) throw DomainError("associated_cells: cells at different levels");
  const CellId origin{m, Coord(carpet.dimension(), 0)};
  return fold_cell(carpet, origin, a) == fold_cell(carpet, origin, b);
}

// ---------------------------------------------------------------------------
// Half-faces

HalfFace origin_halfface(int dimension, int level, int axis) { return HalfFace{level, axis, Coord(dimension, 0)}; }

HalfFace slide_halfface(int dimension, int level, int axis, int along) {
  if (axis == along) throw PreconditionError("slide half-face needs two distinct axes");
  HalfFace f{level, axis, Coord(dimension, 0)};
  f.anchor2[along] = 1;
  return f;
}

bool halffaces_meet_in_codim2(const HalfFace& a, const HalfFace& b) {
  if (a.level != b.level || a.anchor2.size() != b.anchor2.size()) return false;
  int dim = 0;
  for (std::size_t k = 0; k < a.anchor2.size(); ++k) {
    const std::int64_t alo = a.anchor2[k], ahi = static_cast<int>(k) == a.axis ? alo : alo + 1;
    const std::int64_t blo = b.anchor2[k], bhi = static_cast<int>(k) == b.axis ? blo : blo + 1;
    const auto lo = std::max(alo, blo), hi = std::min(ahi, bhi);
    if (lo > hi) return false;
    if (lo < hi) ++dim;
  }
  return dim == static_cast<int>(a.anchor2.size()) - 2;
}

std::optional<std::size_t> HalfFaceGraph::find(const HalfFace& face) const {
  auto it = std::lower_bound(faces.begin(), faces.end(), face);
  if (it == faces.end() || *it != face) return std::nullopt;
  return static_cast<std::size_t>(it - faces.begin());
}

std::optional<std::size_t> HalfFaceGraph::find_edge(std::size_t a, std::size_t b) const {
  if (a > b) std::swap(a, b);
  for (std::size_t k = 0; k < edges.size(); ++k)
    if (edges[k].a == a && edges[k].b == b) return k;
  return std::nullopt;
}

namespace {

// The d * 2^d half-faces lying in the boundary of the grid cube at `c`.
std::vector<HalfFace> cube_halffaces(int level, std::span<const std::int64_t> c) {
  const int d = static_cast<int>(c.size());
  std::vector<HalfFace> out;
  for (int axis = 0; axis < d; ++axis) {
    for (int side : {0, 2}) {
      Coord off(d - 1, 0);
      do {
        HalfFace f{level, axis, Coord(d)};
        for (int k = 0, j = 0; k < d; ++k) f.anchor2[k] = 2 * c[k] + (k == axis ? side : off[j++]);
        out.push_back(std::move(f));
      } while (next_index(off, 0, 1));
    }
  }
  return out;
}

}  // namespace

HalfFaceGraph halfface_graph(const Carpet& carpet, int level, std::size_t cell_budget) {
  const CellGraph cg(carpet, level, cell_budget);
  const int d = carpet.dimension();
  const std::int64_t side = cg.side();
  HalfFaceGraph g;
  g.level = level;

  std::set<HalfFace> faces;
  std::set<Coord> candidates;
  for (std::size_t i = 0; i < cg.size(); ++i) {
    auto c = cg.coords(i);
    for (auto& f : cube_halffaces(level, c)) faces.insert(std::move(f));
    candidates.emplace(c.begin(), c.end());
    for (int a = 0; a < d; ++a)
      for (int s : {-1, 1}) {
        Coord n(c.begin(), c.end());
        n[a] += s;
        if (n[a] >= 0 && n[a] < side) candidates.insert(n);
      }
  }
  g.faces.assign(faces.begin(), faces.end());

  std::map<std::pair<std::size_t, std::size_t>, std::size_t> seen;
  for (const auto& q : candidates) {
    const bool retained = cg.find(q).has_value();
    std::vector<std::size_t> present;
    for (const auto& f : cube_halffaces(level, q))
      if (auto k = g.find(f)) present.push_back(*k);
    for (std::size_t x = 0; x < present.size(); ++x)
      for (std::size_t y = x + 1; y < present.size(); ++y) {
        auto a = std::min(present[x], present[y]), b = std::max(present[x], present[y]);
        if (!halffaces_meet_in_codim2(g.faces[a], g.faces[b])) continue;
        auto [it, fresh] = seen.emplace(std::pair{a, b}, g.edges.size());
        if (fresh)
          g.edges.push_back({a, b, g.faces[a].axis == g.faces[b].axis ? MoveKind::Slide : MoveKind::Corner, retained});
        else if (retained)
          g.edges[it->second].inside_retained_cube = true;
      }
  }
  std::sort(g.edges.begin(), g.edges.end(),
            [](const HalfFaceEdge& x, const HalfFaceEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });

  std::vector<std::vector<std::size_t>> adj(g.faces.size());
  for (const auto& e : g.edges) {
    adj[e.a].push_back(e.b);
    adj[e.b].push_back(e.a);
  }
  std::vector<char> mark(g.faces.size(), 0);
  std::vector<std::size_t> stack{0};
  std::size_t count = g.faces.empty() ? 0 : 1;
  if (!g.faces.empty()) mark[0] = 1;
  while (!stack.empty() && !g.faces.empty()) {
    auto i = stack.back();
    stack.pop_back();
    for (auto j : adj[i])
      if (!mark[j]) {
        mark[j] = 1;
        ++count;
        stack.push_back(j);
      }
  }
  g.connected = count == g.faces.size();
  return g;
}

}  // namespace carpet
