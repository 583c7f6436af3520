#pragma once

// Exact integer-grid model of a generalized Sierpinski carpet.
//
// All coordinates are integers. A level-n cell is addressed by its lower
// corner in units of L^-n, a grid point at resolution r by its coordinates in
// units of L^-r. Nothing in this header uses floating point except the
// convenience accessors that report physical positions.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace carpet {

using Coord = std::vector<std::int64_t>;

inline constexpr std::size_t kDefaultCellBudget = 10'000'000;

/// Generator data: dimension d, length scale L and the retained level-1 cubes.
struct CarpetSpec {
  int dimension = 0;
  int length_scale = 0;
  std::vector<Coord> retained;
};

/// Structurally checked generator with constant-time membership tests.
///
/// Construction rejects malformed data with SpecError; it does not check the
/// carpet axioms, which is the job of validate().
class Carpet {
 public:
  explicit Carpet(CarpetSpec spec);

  const CarpetSpec& spec() const noexcept { return spec_; }
  int dimension() const noexcept { return spec_.dimension; }
  int length_scale() const noexcept { return spec_.length_scale; }
  int mass() const noexcept { return static_cast<int>(spec_.retained.size()); }

  /// Mass exponent log m / log L.
  double alpha() const;

  /// L^level; throws ResourceError when (L^level)^d would overflow.
  std::int64_t side(int level) const;

  bool retained(std::span<const std::int64_t> index) const;

  /// True when the level-n cube with lower corner `coords` lies in F_n.
  bool contains_cell(int level, std::span<const std::int64_t> coords) const;

 private:
  CarpetSpec spec_;
  std::vector<char> mask_;
};

struct CellId {
  int level = 0;
  Coord coords;
  auto operator<=>(const CellId&) const = default;
};

struct GridPoint {
  int resolution = 0;
  Coord coords;
  auto operator<=>(const GridPoint&) const = default;
};

/// Signed permutation acting on [0, extent]^d:
///   y_i = x_{perm_i}            if sign_i = +1
///   y_i = extent - x_{perm_i}   if sign_i = -1
class Isometry {
 public:
  Isometry(std::vector<int> perm, std::vector<int> signs);
  static Isometry identity(int dimension);

  int dimension() const noexcept { return static_cast<int>(perm_.size()); }
  const std::vector<int>& perm() const noexcept { return perm_; }
  const std::vector<int>& signs() const noexcept { return signs_; }

  Coord apply(std::span<const std::int64_t> x, std::int64_t extent) const;
  /// (*this) after `inner`.
  Isometry compose(const Isometry& inner) const;
  Isometry inverse() const;
  bool is_rotation() const;
  int order() const;
  std::string describe() const;

  auto operator<=>(const Isometry&) const = default;

 private:
  std::vector<int> perm_;
  std::vector<int> signs_;
};

/// All 2^d d! symmetries of the unit cube, generated by closure from the
/// adjacent transpositions and a single sign flip. Sorted.
std::vector<Isometry> hyperoctahedral_group(int dimension);

struct AxiomCheck {
  std::string axiom;  // "H1".."H4"
  std::string name;
  bool passed = true;
  std::string witness;
};

struct ValidationReport {
  std::vector<AxiomCheck> axioms;
  /// Non-diagonality is verified for block scales m = 1..h3_checked_up_to only.
  int h3_checked_up_to = 2;

  bool passed() const;
  const AxiomCheck& axiom(const std::string& id) const;
};

ValidationReport validate(const Carpet& carpet);
/// Throws SpecError for structurally malformed input.
ValidationReport validate(const CarpetSpec& spec);

/// Level-n cells of F_n with face adjacency, in lexicographic order of coords.
class CellGraph {
 public:
  CellGraph(const Carpet& carpet, int level, std::size_t cell_budget = kDefaultCellBudget);

  const Carpet& carpet() const noexcept { return carpet_; }
  int level() const noexcept { return level_; }
  int dimension() const noexcept { return carpet_.dimension(); }
  std::int64_t side() const noexcept { return side_; }
  std::size_t size() const noexcept { return keys_.size(); }

  std::span<const std::int64_t> coords(std::size_t i) const;
  CellId cell(std::size_t i) const;
  std::optional<std::size_t> find(std::span<const std::int64_t> coords) const;

  std::span<const std::size_t> neighbors(std::size_t i) const;
  std::size_t degree(std::size_t i) const { return neighbors(i).size(); }
  /// Undirected edges (i < j), sorted.
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const noexcept { return edges_; }

  /// Does cell i touch the face {x_axis = 0} (upper = false) or {x_axis = 1}?
  bool on_face(std::size_t i, int axis, bool upper) const;
  /// Number of faces of the unit cube touched by cell i.
  int outer_faces(std::size_t i) const;
  /// Cells touching {x_axis = 0} or {x_axis = 1}.
  std::vector<std::size_t> face_cells(int axis, bool upper) const;

  /// l-infinity distance between cell centres, in cells.
  std::int64_t linf_distance(std::size_t i, std::size_t j) const;
  /// Physical centre of cell i.
  std::vector<double> center(std::size_t i) const;
  /// Cell whose centre is closest (Euclidean) to the physical point, ties
  /// broken by lexicographic order.
  std::size_t nearest(std::span<const double> point) const;

  bool connected() const;

 private:
  Carpet carpet_;
  int level_;
  std::int64_t side_;
  std::vector<std::int64_t> coords_;  // size() * d, row major
  std::vector<std::int64_t> keys_;    // lexicographic linear index, sorted
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> adjacency_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
};

std::vector<CellId> cells(const Carpet& carpet, int level, std::size_t cell_budget = kDefaultCellBudget);
std::vector<std::pair<std::size_t, std::size_t>> adjacency(const Carpet& carpet, int level,
                                                            std::size_t cell_budget = kDefaultCellBudget);

/// Does the grid point lie in F_r (in the closure of a retained level-r cube)?
bool contains_point(const Carpet& carpet, const GridPoint& p);

/// Folding map onto the cell `target`: coordinate-wise reflected-periodic
/// projection with period twice the cell width. Requires p in F_r and
/// p.resolution >= target.level.
GridPoint fold(const Carpet& carpet, const CellId& target, const GridPoint& p);

/// Image of a finer cell under the folding map onto `target`.
CellId fold_cell(const Carpet& carpet, const CellId& target, const CellId& cell);

/// x ~_m y: equal images under the level-m folding maps.
bool associated(const Carpet& carpet, const GridPoint& p, const GridPoint& q, int m);
bool associated_cells(const Carpet& carpet, const CellId& a, const CellId& b, int m);

/// Level-n half-face: {x_axis = anchor2[axis]/2 * L^-n,
///                     anchor2[j]/2 * L^-n <= x_j <= (anchor2[j]+1)/2 * L^-n}.
/// anchor2 holds twice the anchor so that half-integer anchors stay integral;
/// anchor2[axis] is always even.
struct HalfFace {
  int level = 0;
  int axis = 0;
  Coord anchor2;
  auto operator<=>(const HalfFace&) const = default;
};

enum class MoveKind { Corner, Slide };

struct HalfFaceEdge {
  std::size_t a = 0;
  std::size_t b = 0;
  MoveKind kind = MoveKind::Corner;
  /// Some cube of F_n (not merely of the grid) contains both half-faces.
  bool inside_retained_cube = false;
};

struct HalfFaceGraph {
  int level = 0;
  std::vector<HalfFace> faces;
  std::vector<HalfFaceEdge> edges;
  bool connected = false;

  std::optional<std::size_t> find(const HalfFace& face) const;
  std::optional<std::size_t> find_edge(std::size_t a, std::size_t b) const;
};

HalfFaceGraph halfface_graph(const Carpet& carpet, int level, std::size_t cell_budget = kDefaultCellBudget);

/// L_i: the half-face {x_i = 0} n [0, w/2]^d at the origin corner of a level-n cell.
HalfFace origin_halfface(int dimension, int level, int axis);
/// M_ij: {x_i = 0, w/2 <= x_j <= w, 0 <= x_k <= w/2 otherwise}.
HalfFace slide_halfface(int dimension, int level, int axis, int along);

/// Do the two half-faces intersect in a set of dimension d - 2?
bool halffaces_meet_in_codim2(const HalfFace& a, const HalfFace& b);

}  // namespace carpet
