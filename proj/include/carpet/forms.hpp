#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "carpet/geometry.hpp"
#include "carpet/linalg.hpp"
#include "carpet/scaling.hpp"

namespace carpet {

struct FormFlags {
  bool markov = false;        // off-diagonals <= 0
  bool conservative = false;  // rows sum to zero
  bool irreducible = false;   // off-diagonal pattern connected
  double conservativity_residual = 0.0;  // max |row sum| / ||M||
};

/// Quadratic form E(f, g) = scale * f^T base g on functions over level-n cells.
///
/// Keeping the scale apart from the base matrix makes renormalisation exact:
/// normalize() only ever replaces the scale.
class DiscreteForm {
 public:
  DiscreteForm(int level, SparseMatrix base, double scale = 1.0, std::string family = "custom");

  int level() const noexcept { return level_; }
  std::size_t size() const noexcept { return static_cast<std::size_t>(base_.rows()); }
  const SparseMatrix& base() const noexcept { return base_; }
  double scale() const noexcept { return scale_; }
  const std::string& family() const noexcept { return family_; }
  SparseMatrix matrix() const { return scale_ * base_; }

  double energy(const Vector& f) const;
  double bilinear(const Vector& f, const Vector& g) const;
  FormFlags flags() const;

  DiscreteForm rescaled(double factor) const;

 private:
  int level_;
  SparseMatrix base_;
  double scale_;
  std::string family_;
};

/// Uniform nearest-neighbour form with conductance a_n = (m rho / L^2)^n.
DiscreteForm bb_form(const CellGraph& graph, double rho_hat);

/// Self-similar replication form: an edge between cells whose ancestors first
/// differ at level j carries weight rho^(j-1), so that the level-(n+1)
/// matrix is rho times m copies of the level-n matrix plus unit gluing edges.
/// The result is normalised to ||E|| = 1.
DiscreteForm kz_form(const CellGraph& graph, double rho_hat);

/// Unnormalised kz weights (scale 1).
DiscreteForm kz_form_raw(const CellGraph& graph, double rho_hat);

/// Level at which the ancestors of two level-n cells first differ (1..n); 0 if equal.
int separation_level(const CellGraph& graph, std::size_t a, std::size_t b);

/// ||E||: minimal energy with the cells touching {x_1 = 0} clamped to 0 and
/// those touching {x_1 = 1} clamped to 1.
double form_norm(const DiscreteForm& form, const CellGraph& graph, const SolverOptions& opt = {});
DiscreteForm normalize(const DiscreteForm& form, const CellGraph& graph, const SolverOptions& opt = {});

/// Theta = C / m^l with integer C[c, c'] = #{level-l cells S : phi_S(c) = c'}.
class FoldingProjector {
 public:
  FoldingProjector(const CellGraph& graph, int fold_level);

  int form_level() const noexcept { return form_level_; }
  int fold_level() const noexcept { return fold_level_; }
  std::int64_t denominator() const noexcept { return denominator_; }
  std::size_t size() const noexcept { return rows_.size(); }

  /// Row c of C as (column, count) pairs, columns sorted.
  const std::vector<std::pair<std::size_t, std::int64_t>>& row(std::size_t c) const { return rows_[c]; }
  SparseMatrix matrix() const;

  /// Theta f in floating point.
  Vector apply(const Vector& f) const;
  /// C f for integer f; overflow raises ResourceError. The rational value of
  /// Theta f is the result divided by denominator().
  std::vector<std::int64_t> apply_numerators(const std::vector<std::int64_t>& f) const;
  /// C * C == denominator * C, checked in integer arithmetic.
  bool idempotent_exact() const;
  bool symmetric_exact() const;

 private:
  int form_level_;
  int fold_level_;
  std::int64_t denominator_;
  std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> rows_;
};

/// Theta f; level mismatch raises DomainError.
Vector theta_apply(const FoldingProjector& proj, const Vector& f);

struct InvarianceReport {
  double norm = 0.0;                      // ||M|| (max absolute row sum)
  double selfadjoint_residual = 0.0;      // max over fold levels of max|M Theta - Theta^T M|
  int worst_fold_level = 0;
  double isometry_discrepancy = 0.0;      // max |w(e) - w(Phi e)| over cells and cube isometries
  std::string witness;                    // location of the worst isometry discrepancy
  bool invariant = false;                 // both <= tolerance * norm
  double tolerance = 1e-9;
};

/// Checks every fold level 1..n (or only `proj` when given).
InvarianceReport invariance_check(const DiscreteForm& form, const CellGraph& graph, double tolerance = 1e-9);
InvarianceReport invariance_check(const DiscreteForm& form, const CellGraph& graph, const FoldingProjector& proj,
                                  double tolerance = 1e-9);

/// Energy discrepancy of internal edges of level-l cells under cube isometries.
double isometry_discrepancy(const DiscreteForm& form, const CellGraph& graph, int level, std::string* witness = nullptr);

struct MarkovContraction {
  std::size_t samples = 0;
  std::size_t violations = 0;
  double worst_excess = 0.0;  // max E(clip f) - E(f), relative to E(f)
};

/// E(0 v (f ^ 1)) <= E(f) for seeded random f with values in [-0.5, 1.5].
MarkovContraction markov_contraction_check(const DiscreteForm& form, std::size_t samples, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Hilbert projective metric

struct HilbertData {
  double sup = 0.0;  // sup B(f,f) / A(f,f) over f orthogonal to constants
  double inf = 0.0;
  double h = 0.0;    // log(sup / inf)
  std::string method;
};

/// Dense symmetric-definite pencil on the complement of constants below
/// `dense_below` cells; grounded sparse power iteration above.
HilbertData hilbert_data(const DiscreteForm& A, const DiscreteForm& B, std::size_t dense_below = 4096);

struct CombineResult {
  DiscreteForm form;
  double lambda = 0.0;
  double delta = 0.0;
  bool markov = false;
  bool conservative = false;
  bool psd = false;
  double smallest_ritz = 0.0;
  double conservativity_residual = 0.0;
  std::size_t positive_offdiagonals = 0;
};

/// C = (1 + delta) B - lambda A with lambda = inf(B|A). The diagonal is
/// rebuilt as minus the off-diagonal row sum so C is conservative exactly.
CombineResult combine(const DiscreteForm& A, const DiscreteForm& B, double delta);
CombineResult combine(const DiscreteForm& A, const DiscreteForm& B, double delta, double lambda);

struct ContractionTable {
  std::vector<int> levels;                          // form level at each iteration
  std::vector<std::vector<double>> h;               // h[iteration][pair]
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  bool nonincreasing = true;
  double max_growth = 0.0;  // max over pairs/iterations of h_{i+1} / h_i - 1 (h_i > 0)
  std::vector<double> terminal;
};

/// Kron-reduce each form onto the lexicographically least fine cell of every
/// coarse cell, renormalise by ||E|| and record pairwise h, for `iterations`
/// steps (stopping at level 1).
ContractionTable contraction_experiment(const Carpet& carpet, int level, const std::vector<DiscreteForm>& family,
                                        int iterations);

/// One coarsening step; exposed for tests.
DiscreteForm coarsen(const DiscreteForm& form, const CellGraph& fine, const CellGraph& coarse);

// ---------------------------------------------------------------------------
// Besov-type seminorms

/// J_r(f) = r^-alpha sum_x sum_{y : |x - y|_inf <= r} |f(x) - f(y)|^2 m^{-2n}.
double besov_increment(const CellGraph& graph, const Vector& f, double r);

struct BesovResult {
  std::vector<double> radii;   // r_j = L^{-kj} >= cell size
  std::vector<double> scaled;  // J_r / H(r)
  double norm = 0.0;           // max over the radii
};

BesovResult besov_norm(const CellGraph& graph, const Vector& f, const std::function<double(double)>& H, int k);

/// N_H^r(f) at a single radius; DomainError below the cell size.
double besov_at(const CellGraph& graph, const Vector& f, const std::function<double(double)>& H, double r);

// ---------------------------------------------------------------------------
// Serialisation

struct FormHeader {
  std::string spec_hash;
  std::string family;
  int level = 0;
  double scale = 1.0;
  FormFlags flags;
};

/// "# key value" header lines followed by "i j value" triplets of the base matrix.
void write_form(std::ostream& os, const DiscreteForm& form, const std::string& spec_hash);
DiscreteForm read_form(std::istream& is, FormHeader* header = nullptr);

}  // namespace carpet
