#include "carpet/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <Eigen/SparseCholesky>

#include "carpet/error.hpp"

namespace carpet {

Vector pcg(const SparseMatrix& A, const Vector& b, const SolverOptions& opt, SolveDiagnostics& diag) {
  const auto n = A.rows();
  diag.method = "pcg-jacobi";
  diag.iterations = 0;
  Vector x = Vector::Zero(n);
  const double bnorm = b.norm();
  if (bnorm == 0.0) {
    diag.residual = 0.0;
    return x;
  }
  Vector inv_diag = A.diagonal();
  for (Eigen::Index i = 0; i < n; ++i) inv_diag[i] = inv_diag[i] > 0 ? 1.0 / inv_diag[i] : 1.0;

  const auto max_iter = static_cast<std::size_t>(std::ceil(opt.max_iteration_factor * std::sqrt(double(n)))) + 1;
  Vector r = b;
  Vector z = inv_diag.cwiseProduct(r);
  Vector p = z;
  Vector Ap(n);
  double rz = r.dot(z);
  double rel = 1.0;
  for (std::size_t it = 0; it < max_iter; ++it) {
    Ap.noalias() = A * p;
    const double alpha = rz / p.dot(Ap);
    x += alpha * p;
    r -= alpha * Ap;
    diag.iterations = it + 1;
    rel = r.norm() / bnorm;
    if (rel <= opt.tolerance) break;
    z = inv_diag.cwiseProduct(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  // Report the true residual, not the recurrence.
  diag.residual = (b - A * x).norm() / bnorm;
  if (diag.residual > opt.tolerance * 10 || rel > opt.tolerance)
    throw SolverError("conjugate gradient did not converge in " + std::to_string(diag.iterations) + " iterations",
                      diag.residual);
  return x;
}

Vector solve_spd(const SparseMatrix& A, const Vector& b, const SolverOptions& opt, SolveDiagnostics& diag) {
  const auto n = static_cast<std::size_t>(A.rows());
  SolverKind kind = opt.kind;
  if (kind == SolverKind::Auto) kind = n < opt.dense_below ? SolverKind::DenseLDLT : SolverKind::ConjugateGradient;
  if (kind == SolverKind::ConjugateGradient) return pcg(A, b, opt, diag);

  const DenseMatrix D(A);
  Vector x;
  if (kind == SolverKind::DenseLDLT) {
    diag.method = "dense-ldlt";
    Eigen::LDLT<DenseMatrix> ldlt(D);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive())
      throw SolverError("dense LDLT failed: matrix not positive definite", NAN);
    x = ldlt.solve(b);
  } else {
    diag.method = "dense-full-pivot-lu";
    Eigen::FullPivLU<DenseMatrix> lu(D);
    if (!lu.isInvertible()) throw SolverError("dense LU: singular matrix", NAN);
    x = lu.solve(b);
  }
  diag.iterations = 0;
  const double bnorm = b.norm();
  diag.residual = bnorm > 0 ? (b - A * x).norm() / bnorm : 0.0;
  return x;
}

SparseMatrix submatrix(const SparseMatrix& L, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols) {
  std::vector<long> rmap(L.rows(), -1), cmap(L.cols(), -1);
  for (std::size_t i = 0; i < rows.size(); ++i) rmap[rows[i]] = static_cast<long>(i);
  for (std::size_t i = 0; i < cols.size(); ++i) cmap[cols[i]] = static_cast<long>(i);
  std::vector<Eigen::Triplet<double>> t;
  for (int k = 0; k < L.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(L, k); it; ++it) {
      const long r = rmap[it.row()], c = cmap[it.col()];
      if (r >= 0 && c >= 0) t.emplace_back(r, c, it.value());
    }
  SparseMatrix S(static_cast<long>(rows.size()), static_cast<long>(cols.size()));
  S.setFromTriplets(t.begin(), t.end());
  return S;
}

Vector dirichlet_solve(const SparseMatrix& L, const std::vector<std::size_t>& fixed, const std::vector<double>& values,
                       const Vector& rhs, const SolverOptions& opt, SolveDiagnostics& diag) {
  const auto n = static_cast<std::size_t>(L.rows());
  if (fixed.size() != values.size()) throw PreconditionError("dirichlet_solve: fixed/value size mismatch");
  std::vector<char> is_fixed(n, 0);
  Vector u = Vector::Zero(static_cast<long>(n));
  for (std::size_t k = 0; k < fixed.size(); ++k) {
    is_fixed[fixed[k]] = 1;
    u[static_cast<long>(fixed[k])] = values[k];
  }
  std::vector<std::size_t> free, fixed_sorted;
  for (std::size_t i = 0; i < n; ++i) (is_fixed[i] ? fixed_sorted : free).push_back(i);
  if (free.empty()) {
    diag = {"none", 0, 0.0};
    return u;
  }
  const SparseMatrix Lff = submatrix(L, free, free);
  const SparseMatrix Lfb = submatrix(L, free, fixed_sorted);
  Vector ub(static_cast<long>(fixed_sorted.size()));
  for (std::size_t k = 0; k < fixed_sorted.size(); ++k) ub[static_cast<long>(k)] = u[static_cast<long>(fixed_sorted[k])];
  Vector b = -(Lfb * ub);
  if (rhs.size() > 0)
    for (std::size_t k = 0; k < free.size(); ++k) b[static_cast<long>(k)] += rhs[static_cast<long>(free[k])];
  const Vector uf = solve_spd(Lff, b, opt, diag);
  for (std::size_t k = 0; k < free.size(); ++k) u[static_cast<long>(free[k])] = uf[static_cast<long>(k)];
  return u;
}

DenseMatrix schur_complement(const SparseMatrix& L, const std::vector<std::size_t>& keep) {
  const auto n = static_cast<std::size_t>(L.rows());
  std::vector<char> kept(n, 0);
  for (auto k : keep) kept[k] = 1;
  std::vector<std::size_t> elim;
  for (std::size_t i = 0; i < n; ++i)
    if (!kept[i]) elim.push_back(i);
  DenseMatrix S = DenseMatrix(submatrix(L, keep, keep));
  if (elim.empty()) return S;
  const SparseMatrix Lee = submatrix(L, elim, elim);
  const DenseMatrix Lek = DenseMatrix(submatrix(L, elim, keep));
  Eigen::SimplicialLDLT<SparseMatrix> ldlt(Lee);
  if (ldlt.info() != Eigen::Success) throw SolverError("Schur complement: eliminated block factorization failed", NAN);
  const Eigen::VectorXd dvals = ldlt.vectorD();
  if (dvals.minCoeff() <= 1e-14 * std::max(1.0, dvals.cwiseAbs().maxCoeff()))
    throw SolverError("Schur complement: eliminated block numerically singular", dvals.minCoeff());
  const DenseMatrix X = ldlt.solve(Lek);
  S -= Lek.transpose() * X;
  return 0.5 * (S + S.transpose());
}

double smallest_ritz_value(const SparseMatrix& A, std::size_t steps, unsigned seed) {
  const auto n = static_cast<std::size_t>(A.rows());
  if (n == 0) return 0.0;
  steps = std::min(steps, n);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  DenseMatrix Q(static_cast<long>(n), static_cast<long>(steps));
  std::vector<double> alpha, beta;
  Vector q(static_cast<long>(n));
  for (auto& v : q) v = nd(gen);
  q.normalize();
  Vector w;
  for (std::size_t j = 0; j < steps; ++j) {
    Q.col(static_cast<long>(j)) = q;
    w = A * q;
    const double a = q.dot(w);
    alpha.push_back(a);
    // Full reorthogonalisation, applied twice for stability.
    for (int pass = 0; pass < 2; ++pass) {
      const auto cols = static_cast<long>(j + 1);
      w -= Q.leftCols(cols) * (Q.leftCols(cols).transpose() * w);
    }
    const double b = w.norm();
    if (j + 1 == steps || b < 1e-12 * std::max(1.0, std::abs(a))) break;
    beta.push_back(b);
    q = w / b;
  }
  const auto k = static_cast<long>(alpha.size());
  DenseMatrix T = DenseMatrix::Zero(k, k);
  for (long i = 0; i < k; ++i) {
    T(i, i) = alpha[static_cast<std::size_t>(i)];
    if (i + 1 < k) T(i, i + 1) = T(i + 1, i) = beta[static_cast<std::size_t>(i)];
  }
  Eigen::SelfAdjointEigenSolver<DenseMatrix> es(T, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

double max_abs_row_sum(const SparseMatrix& A) {
  Vector s = Vector::Zero(A.rows());
  for (int k = 0; k < A.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(A, k); it; ++it) s[it.row()] += std::abs(it.value());
  return s.size() ? s.maxCoeff() : 0.0;
}

double asymmetry(const SparseMatrix& A) {
  const SparseMatrix D = A - SparseMatrix(A.transpose());
  double m = 0.0;
  for (int k = 0; k < D.outerSize(); ++k)
    for (SparseMatrix::InnerIterator it(D, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

SparseMatrix laplacian(std::size_t n, const std::vector<WeightedEdge>& edges) {
  std::vector<Eigen::Triplet<double>> t;
  t.reserve(edges.size() * 4);
  for (const auto& e : edges) {
    if (!(e.conductance > 0)) throw PreconditionError("conductances must be positive");
    if (e.u == e.v) continue;
    t.emplace_back(e.u, e.u, e.conductance);
    t.emplace_back(e.v, e.v, e.conductance);
    t.emplace_back(e.u, e.v, -e.conductance);
    t.emplace_back(e.v, e.u, -e.conductance);
  }
  SparseMatrix L(static_cast<long>(n), static_cast<long>(n));
  L.setFromTriplets(t.begin(), t.end());
  return L;
}

}  // namespace carpet
