#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace carpet {

using SparseMatrix = Eigen::SparseMatrix<double>;
using Vector = Eigen::VectorXd;
using DenseMatrix = Eigen::MatrixXd;

enum class SolverKind { Auto, ConjugateGradient, DenseLDLT, DenseLU };

struct SolverOptions {
  SolverKind kind = SolverKind::Auto;
  double tolerance = 1e-10;            // relative residual ||b - Ax|| / ||b||
  double max_iteration_factor = 50.0;  // CG iteration cap = factor * sqrt(N)
  std::size_t dense_below = 2000;      // Auto uses dense LDLT below this size
};

struct SolveDiagnostics {
  std::string method;
  std::size_t iterations = 0;
  double residual = 0.0;
};

/// Jacobi-preconditioned conjugate gradient. Throws SolverError when the
/// tolerance is not met within the iteration cap.
Vector pcg(const SparseMatrix& A, const Vector& b, const SolverOptions& opt, SolveDiagnostics& diag);

/// SPD solve dispatched on opt.kind; Auto picks dense LDLT for small systems.
Vector solve_spd(const SparseMatrix& A, const Vector& b, const SolverOptions& opt, SolveDiagnostics& diag);

/// Harmonic extension: solve L u = rhs on the free vertices with u fixed on
/// `fixed` (values in `values`). `rhs` may be empty (treated as zero).
Vector dirichlet_solve(const SparseMatrix& L, const std::vector<std::size_t>& fixed, const std::vector<double>& values,
                       const Vector& rhs, const SolverOptions& opt, SolveDiagnostics& diag);

/// Rows and columns of L restricted to `rows` x `cols` (both sorted).
SparseMatrix submatrix(const SparseMatrix& L, const std::vector<std::size_t>& rows, const std::vector<std::size_t>& cols);

/// Schur complement of L onto `keep` (Kron reduction), dense. Throws
/// SolverError if the eliminated block is numerically singular.
DenseMatrix schur_complement(const SparseMatrix& L, const std::vector<std::size_t>& keep);

/// Smallest Ritz value of a symmetric matrix from Lanczos with full
/// reorthogonalisation (exact for steps >= N).
double smallest_ritz_value(const SparseMatrix& A, std::size_t steps = 300, unsigned seed = 1);

/// max_i sum_j |A_ij|, an upper bound for the spectral norm of a symmetric A.
double max_abs_row_sum(const SparseMatrix& A);

/// max |A - A^T|.
double asymmetry(const SparseMatrix& A);

/// Laplacian from weighted undirected edges.
struct WeightedEdge {
  std::size_t u = 0;
  std::size_t v = 0;
  double conductance = 0.0;
};
SparseMatrix laplacian(std::size_t n, const std::vector<WeightedEdge>& edges);

}  // namespace carpet
