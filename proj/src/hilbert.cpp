#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include "carpet/error.hpp"
#include "carpet/forms.hpp"

namespace carpet {

namespace {

// Orthonormal basis of the complement of constants: the last N-1 columns of
// the Householder reflection exchanging e_1 and 1/sqrt(N).
DenseMatrix complement_basis(long n) {
  Vector u = Vector::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  Vector w = u;
  w[0] -= 1.0;
  const double wn = w.norm();
  DenseMatrix H = DenseMatrix::Identity(n, n);
  if (wn > 0) {
    w /= wn;
    H -= 2.0 * w * w.transpose();
  }
  return H.rightCols(n - 1);
}

HilbertData dense_pencil(const SparseMatrix& A, const SparseMatrix& B) {
  const long n = A.rows();
  const DenseMatrix Q = complement_basis(n);
  const DenseMatrix Ad = Q.transpose() * (DenseMatrix(A) * Q);
  const DenseMatrix Bd = Q.transpose() * (DenseMatrix(B) * Q);
  const DenseMatrix As = 0.5 * (Ad + Ad.transpose());
  const DenseMatrix Bs = 0.5 * (Bd + Bd.transpose());
  Eigen::SelfAdjointEigenSolver<DenseMatrix> ea(As, Eigen::EigenvaluesOnly);
  const double amax = std::max(ea.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  if (ea.eigenvalues().minCoeff() <= 1e-12 * amax)
    throw PreconditionError("hilbert_data: A is degenerate beyond constants");
  Eigen::GeneralizedSelfAdjointEigenSolver<DenseMatrix> es(Bs, As, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw SolverError("generalized eigensolve failed", NAN);
  HilbertData h;
  h.inf = es.eigenvalues().minCoeff();
  h.sup = es.eigenvalues().maxCoeff();
  h.method = "dense-pencil";
  return h;
}

// Largest eigenvalue of X^{-1} Y on functions grounded at vertex 0.
double grounded_power(const SparseMatrix& X, const SparseMatrix& Y) {
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(X);
  if (ldlt.info() != Eigen::Success) throw PreconditionError("hilbert_data: grounded matrix not positive definite");
  Vector v = Vector::LinSpaced(X.rows(), 1.0, 2.0);
  v.normalize();
  double lambda = 0.0;
  for (int it = 0; it < 20000; ++it) {
    Vector w = ldlt.solve(Y * v);
    const double next = v.dot(Y * v) / v.dot(X * v);
    v = w.normalized();
    if (it > 10 && std::abs(next - lambda) <= 1e-13 * std::abs(next)) return next;
    lambda = next;
  }
  return lambda;
}

HilbertData grounded_pencil(const SparseMatrix& A, const SparseMatrix& B) {
  std::vector<std::size_t> rest;
  for (long i = 1; i < A.rows(); ++i) rest.push_back(static_cast<std::size_t>(i));
  const SparseMatrix Ag = submatrix(A, rest, rest), Bg = submatrix(B, rest, rest);
  HilbertData h;
  h.sup = grounded_power(Ag, Bg);
  h.inf = 1.0 / grounded_power(Bg, Ag);
  h.method = "grounded-power-iteration";
  return h;
}

}  // namespace

HilbertData hilbert_data(const DiscreteForm& A, const DiscreteForm& B, std::size_t dense_below) {
  if (A.size() != B.size() || A.level() != B.level()) throw DomainError("hilbert_data: forms at different levels");
  if (A.size() < 2) throw PreconditionError("hilbert_data: needs at least two cells");
  HilbertData h = A.size() < dense_below ? dense_pencil(A.base(), B.base()) : grounded_pencil(A.base(), B.base());
  const double s = B.scale() / A.scale();
  h.sup *= s;
  h.inf *= s;
  h.h = h.inf > 0 ? std::log(h.sup / h.inf) : std::numeric_limits<double>::infinity();
  return h;
}

CombineResult combine(const DiscreteForm& A, const DiscreteForm& B, double delta) {
  return combine(A, B, delta, hilbert_data(A, B).inf);
}

CombineResult combine(const DiscreteForm& A, const DiscreteForm& B, double delta, double lambda) {
  if (!(delta > 0)) throw PreconditionError("combine: delta must be positive");
  if (A.size() != B.size() || A.level() != B.level()) throw DomainError("combine: forms at different levels");
  const SparseMatrix MA = A.matrix(), MB = B.matrix();
  const SparseMatrix gap = MB - lambda * MA;
  const double bnorm = max_abs_row_sum(MB);
  if (smallest_ritz_value(gap) < -1e-9 * bnorm)
    throw PreconditionError("combine: lambda A <= B violated beyond tolerance");

  const SparseMatrix C0 = (1.0 + delta) * MB - lambda * MA;
  const auto n = C0.rows();
  std::vector<Eigen::Triplet<double>> t;
  Vector offsum = Vector::Zero(n);
  for (int k = 0; k < C0.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(C0, k); it; ++it)
      if (it.row() != it.col() && it.value() != 0.0) {
        t.emplace_back(it.row(), it.col(), it.value());
        offsum[it.row()] += it.value();
      }
  for (long i = 0; i < n; ++i) t.emplace_back(i, i, -offsum[i]);
  SparseMatrix C(n, n);
  C.setFromTriplets(t.begin(), t.end());

  CombineResult res{DiscreteForm(A.level(), C, 1.0, "combined")};
  res.lambda = lambda;
  res.delta = delta;
  const auto fl = res.form.flags();
  const double cnorm = max_abs_row_sum(C);
  res.conservative = fl.conservative;
  res.conservativity_residual = fl.conservativity_residual;
  for (int k = 0; k < C.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(C, k); it; ++it)
      if (it.row() < it.col() && it.value() > 1e-12 * cnorm) ++res.positive_offdiagonals;
  res.markov = res.positive_offdiagonals == 0;
  res.smallest_ritz = smallest_ritz_value(C);
  res.psd = res.smallest_ritz >= -1e-9 * cnorm;
  return res;
}

DiscreteForm coarsen(const DiscreteForm& form, const CellGraph& fine, const CellGraph& coarse) {
  if (coarse.level() + 1 != fine.level() || form.size() != fine.size())
    throw ConfigError("coarsen: levels are not consecutive");
  const auto& digit = fine.carpet().spec().retained.front();
  const std::int64_t L = fine.carpet().length_scale();
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < coarse.size(); ++c) {
    auto cc = coarse.coords(c);
    Coord f(cc.size());
    for (std::size_t k = 0; k < cc.size(); ++k) f[k] = cc[k] * L + digit[k];
    auto idx = fine.find(f);
    if (!idx) throw ConfigError("coarsen: representative fine cell missing");
    keep.push_back(*idx);
  }
  const DenseMatrix S = schur_complement(form.base(), keep);
  const double tiny = 1e-14 * S.cwiseAbs().maxCoeff();
  std::vector<Eigen::Triplet<double>> t;
  for (long i = 0; i < S.rows(); ++i)
    for (long j = 0; j < S.cols(); ++j)
      if (std::abs(S(i, j)) > tiny) t.emplace_back(i, j, S(i, j));
  SparseMatrix M(S.rows(), S.cols());
  M.setFromTriplets(t.begin(), t.end());
  return DiscreteForm(coarse.level(), M, form.scale(), form.family());
}

ContractionTable contraction_experiment(const Carpet& carpet, int level, const std::vector<DiscreteForm>& family,
                                        int iterations) {
  if (family.size() < 2) throw ConfigError("contraction_experiment needs at least two forms");
  if (level < 2) throw ConfigError("contraction_experiment needs level >= 2");
  for (const auto& f : family)
    if (f.level() != level) throw ConfigError("contraction_experiment: form level mismatch");
  ContractionTable tab;
  for (std::size_t i = 0; i < family.size(); ++i)
    for (std::size_t j = i + 1; j < family.size(); ++j) tab.pairs.emplace_back(i, j);

  auto record = [&](const std::vector<DiscreteForm>& forms, int lvl) {
    tab.levels.push_back(lvl);
    std::vector<double> row;
    for (const auto& [i, j] : tab.pairs) row.push_back(hilbert_data(forms[i], forms[j]).h);
    tab.h.push_back(row);
  };

  std::vector<DiscreteForm> cur = family;
  int lvl = level;
  record(cur, lvl);
  for (int it = 0; it < iterations && lvl > 1; ++it) {
    const CellGraph fine(carpet, lvl), coarse(carpet, lvl - 1);
    std::vector<DiscreteForm> next;
    for (const auto& f : cur) next.push_back(normalize(coarsen(f, fine, coarse), coarse));
    cur = std::move(next);
    --lvl;
    record(cur, lvl);
  }
  tab.max_growth = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r + 1 < tab.h.size(); ++r)
    for (std::size_t p = 0; p < tab.pairs.size(); ++p) {
      const double a = tab.h[r][p], b = tab.h[r + 1][p];
      if (b > a * (1 + 1e-9) + 1e-12) tab.nonincreasing = false;
      if (a > 1e-12) tab.max_growth = std::max(tab.max_growth, b / a - 1.0);
    }
  if (!std::isfinite(tab.max_growth)) tab.max_growth = 0.0;
  tab.terminal = tab.h.back();
  return tab;
}

}  // namespace carpet
