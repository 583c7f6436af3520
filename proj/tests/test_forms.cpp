#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "carpet/error.hpp"
#include "carpet/forms.hpp"
#include "carpet/pipeline.hpp"
#include "carpet/spec_io.hpp"

using namespace carpet;

namespace {

constexpr double kRho = 1.25;

const Carpet& sc() {
  static const Carpet c(preset("sc2"));
  return c;
}

// Conservative form on the cell graph with random conductances in [lo, hi].
DiscreteForm random_form(const CellGraph& g, unsigned seed, double lo = 0.5, double hi = 2.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> w(lo, hi);
  std::vector<WeightedEdge> edges;
  for (const auto& [i, j] : g.edges()) edges.push_back({i, j, w(gen)});
  return DiscreteForm(g.level(), laplacian(g.size(), edges));
}

// sup and inf of B(f,f)/A(f,f) through the pseudo-inverse square root of A.
std::pair<double, double> pencil_oracle(const DiscreteForm& A, const DiscreteForm& B) {
  const Eigen::MatrixXd a(A.matrix()), b(B.matrix());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ea(a);
  const auto& lam = ea.eigenvalues();
  Eigen::MatrixXd root = Eigen::MatrixXd::Zero(a.rows(), a.cols());
  const double tol = 1e-10 * lam.cwiseAbs().maxCoeff();
  for (int k = 0; k < lam.size(); ++k)
    if (lam[k] > tol) root += ea.eigenvectors().col(k) * ea.eigenvectors().col(k).transpose() / std::sqrt(lam[k]);
  const Eigen::VectorXd mu = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(root * b * root).eigenvalues();
  // The constants give the single zero eigenvalue; the rest is the pencil spectrum.
  return {mu.maxCoeff(), mu.tail(mu.size() - 1).minCoeff()};
}

double offdiag(const SparseMatrix& m, std::size_t i, std::size_t j) { return m.coeff(long(i), long(j)); }

}  // namespace

TEST_SUITE("forms") {
  TEST_CASE("bb form assembly") {
    const CellGraph g0(sc(), 0);
    const auto f0 = bb_form(g0, kRho);
    CHECK(f0.size() == 1);
    CHECK(f0.matrix().norm() == 0.0);

    const CellGraph g(sc(), 2);
    const auto f = bb_form(g, kRho);
    CHECK(f.size() == 64);
    std::size_t off = 0;
    const auto m = f.matrix();
    for (int k = 0; k < m.outerSize(); ++k)
      for (SparseMatrix::InnerIterator it(m, k); it; ++it)
        if (it.row() != it.col() && it.value() != 0) ++off;
    CHECK(off == 2 * g.edges().size());
    const double a2 = std::pow(8 * kRho / 9, 2);
    CHECK(-offdiag(m, g.edges()[0].first, g.edges()[0].second) == doctest::Approx(a2).epsilon(1e-14));
    const Vector one = Vector::Ones(g.size());
    CHECK(std::abs(f.energy(one)) <= 1e-12);
    const auto fl = f.flags();
    CHECK(fl.markov);
    CHECK(fl.conservative);
    CHECK(fl.irreducible);
  }

  TEST_CASE("kz form weights and replication") {
    CHECK(kz_form(CellGraph(sc(), 0), kRho).matrix().norm() == 0.0);
    for (int n = 1; n <= 2; ++n) {
      const CellGraph coarse(sc(), n), fine(sc(), n + 1);
      const auto rc = kz_form_raw(coarse, kRho).matrix();
      const auto rf = kz_form_raw(fine, kRho).matrix();
      const auto side = coarse.side();
      std::size_t internal = 0, glue = 0;
      for (const auto& [i, j] : fine.edges()) {
        const auto a = fine.coords(i), b = fine.coords(j);
        const bool same_parent = a[0] / side == b[0] / side && a[1] / side == b[1] / side;
        if (!same_parent) {
          CHECK(offdiag(rf, i, j) == -1.0);
          ++glue;
          continue;
        }
        ++internal;
        const std::vector<std::int64_t> ca{a[0] % side, a[1] % side}, cb{b[0] % side, b[1] % side};
        const auto ci = coarse.find(ca), cj = coarse.find(cb);
        REQUIRE(ci);
        REQUIRE(cj);
        CHECK(offdiag(rf, i, j) == doctest::Approx(kRho * offdiag(rc, *ci, *cj)).epsilon(1e-14));
      }
      CHECK(internal == 8 * coarse.edges().size());
      CHECK(glue > 0);
    }
    const CellGraph g(sc(), 3);
    CHECK(separation_level(g, 0, 0) == 0);
    CHECK(separation_level(g, 0, 1) == 3);
    CHECK(form_norm(kz_form(g, kRho), g) == doctest::Approx(1.0).epsilon(1e-9));
  }

  TEST_CASE("normalisation is an exact fixed point") {
    const CellGraph g(sc(), 2);
    for (const auto& f : {bb_form(g, kRho), kz_form(g, kRho), random_form(g, 3)}) {
      const auto n1 = normalize(f, g);
      const auto n2 = normalize(n1, g);
      CHECK(n1.scale() == n2.scale());
      CHECK(form_norm(n1, g) == doctest::Approx(1.0).epsilon(1e-10));
    }
  }

  TEST_CASE("folding projector is an exact idempotent") {
    for (int n = 1; n <= 3; ++n)
      for (int l = 0; l <= n; ++l) {
        CAPTURE(n);
        CAPTURE(l);
        const CellGraph g(sc(), n);
        const FoldingProjector p(g, l);
        CHECK(p.idempotent_exact());
        CHECK(p.symmetric_exact());
        CHECK(p.denominator() == static_cast<std::int64_t>(std::pow(8, l)));
        std::mt19937 gen(n * 10 + l);
        std::vector<std::int64_t> f(g.size());
        for (auto& x : f) x = std::uniform_int_distribution<std::int64_t>(-1000, 1000)(gen);
        const auto tf = p.apply_numerators(f);
        const auto ttf = p.apply_numerators(tf);
        for (std::size_t i = 0; i < f.size(); ++i) CHECK(ttf[i] == p.denominator() * tf[i]);
        const Vector one = Vector::Ones(g.size());
        CHECK((theta_apply(p, one) - one).cwiseAbs().maxCoeff() <= 1e-15);
        Vector r(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) r[i] = double(f[i]);
        CHECK(theta_apply(p, r).norm() <= r.norm() * (1 + 1e-12));
      }
    const FoldingProjector p(CellGraph(sc(), 2), 1);
    CHECK_THROWS_AS(theta_apply(p, Vector::Ones(8)), DomainError);
  }

  TEST_CASE("single-cell data spreads over its fold orbit") {
    const CellGraph g(sc(), 2);
    for (int l = 1; l <= 2; ++l) {
      const FoldingProjector p(g, l);
      const auto level_cells = cells(sc(), l);
      for (std::size_t t = 0; t < g.size(); t += 5) {
        Vector e = Vector::Zero(g.size());
        e[t] = 1;
        const Vector th = theta_apply(p, e);
        for (std::size_t c = 0; c < g.size(); ++c) {
          std::size_t count = 0;
          for (const auto& s : level_cells) count += fold_cell(sc(), s, g.cell(c)) == g.cell(t);
          CHECK(th[c] == doctest::Approx(double(count) / double(p.denominator())).epsilon(1e-15));
        }
      }
    }
  }

  TEST_CASE("invariance of bb and kz forms") {
    for (int n = 1; n <= 3; ++n) {
      const CellGraph g(sc(), n);
      for (const auto& f : {bb_form(g, kRho), kz_form(g, kRho)}) {
        CAPTURE(n);
        CAPTURE(f.family());
        const auto rep = invariance_check(f, g);
        CHECK(rep.invariant);
        CHECK(rep.selfadjoint_residual <= 1e-9 * rep.norm);
        CHECK(rep.isometry_discrepancy <= 1e-9 * rep.norm);
      }
    }
  }

  TEST_CASE("a perturbed conductance breaks invariance with a witness") {
    const CellGraph g(sc(), 2);
    const auto f = bb_form(g, kRho);
    SparseMatrix m = f.base();
    const auto [i, j] = g.edges()[3];
    m.coeffRef(long(i), long(j)) -= 0.3;
    m.coeffRef(long(j), long(i)) -= 0.3;
    m.coeffRef(long(i), long(i)) += 0.3;
    m.coeffRef(long(j), long(j)) += 0.3;
    const auto rep = invariance_check(DiscreteForm(2, m, f.scale()), g);
    CHECK_FALSE(rep.invariant);
    CHECK(rep.isometry_discrepancy > 0.1);
    CHECK_FALSE(rep.witness.empty());
  }

  TEST_CASE("Markov contraction over 1000 seeded functions") {
    const CellGraph g(sc(), 3);
    for (const auto& f : {bb_form(g, kRho), kz_form(g, kRho), random_form(g, 9)}) {
      const auto rep = markov_contraction_check(f, 1000, 42);
      CHECK(rep.samples == 1000);
      CHECK(rep.violations == 0);
    }
  }

  TEST_CASE("Hilbert metric: scale invariance and symmetry") {
    const CellGraph g(sc(), 2);
    const auto A = bb_form(g, kRho);
    for (double theta : {0.1, 1.0, 10.0}) CHECK(hilbert_data(A, A.rescaled(theta)).h <= 1e-10);
    for (unsigned s = 0; s < 5; ++s) {
      const auto B = random_form(g, s), C = random_form(g, 100 + s);
      const double hbc = hilbert_data(B, C).h;
      CHECK(std::abs(hbc - hilbert_data(C, B).h) <= 1e-10);
      CHECK(std::abs(hbc - hilbert_data(B.rescaled(0.1), C.rescaled(10)).h) <= 1e-10);
      CHECK(hbc > 0);
    }
  }

  TEST_CASE("level-1 Hilbert data match the dense pencil oracle") {
    const CellGraph g(sc(), 1);
    const auto A = bb_form(g, kRho);
    for (unsigned s = 0; s < 6; ++s) {
      const auto B = random_form(g, s, 0.2, 5.0);
      const auto hd = hilbert_data(A, B);
      const auto [sup, inf] = pencil_oracle(A, B);
      CHECK(std::abs(hd.sup - sup) <= 1e-8 * sup);
      CHECK(std::abs(hd.inf - inf) <= 1e-8 * inf);
      CHECK(std::abs(hd.h - std::log(sup / inf)) <= 1e-8);
    }
  }

  TEST_CASE("h(bb, kz) matches the independent oracle") {
    // tests/oracles/oracle.py; the value is (n - 1) log rho.
    CHECK(hilbert_data(bb_form(CellGraph(sc(), 2), kRho), kz_form(CellGraph(sc(), 2), kRho)).h ==
          doctest::Approx(0.223143551314217).epsilon(1e-9));
    CHECK(hilbert_data(bb_form(CellGraph(sc(), 3), kRho), kz_form(CellGraph(sc(), 3), kRho)).h ==
          doctest::Approx(0.446287102628464).epsilon(1e-9));
  }

  TEST_CASE("Hilbert metric rejects a form degenerate beyond constants") {
    const CellGraph g(sc(), 1);
    std::vector<WeightedEdge> edges;
    for (const auto& [i, j] : g.edges())
      if (i != 0 && j != 0) edges.push_back({i, j, 1.0});
    const DiscreteForm cut(1, laplacian(g.size(), edges));
    CHECK_THROWS_AS(hilbert_data(cut, bb_form(g, kRho)), PreconditionError);
  }

  TEST_CASE("combine: conservative and PSD, Markov failure flagged") {
    const CellGraph g(sc(), 2);
    const auto A = normalize(bb_form(g, kRho), g);
    const auto same = combine(A, A, 0.3);
    CHECK(same.markov);
    CHECK(same.lambda == doctest::Approx(1.0).epsilon(1e-10));
    CHECK((same.form.matrix() - 0.3 * A.matrix()).norm() <= 1e-10 * A.matrix().norm());

    const auto kz = normalize(kz_form(g, kRho), g);
    const auto c = combine(A, kz, 0.01);
    CHECK(c.conservative);
    CHECK(c.psd);
    CHECK(c.conservativity_residual <= 1e-14);

    // A has a chord that B lacks: C = (1 + delta) B - lambda A has a positive
    // off-diagonal there, so the Markov flag must be false.
    const CellGraph g1(sc(), 1);
    std::vector<WeightedEdge> ring, chord;
    for (const auto& [i, j] : g1.edges()) {
      ring.push_back({i, j, 1.0});
      chord.push_back({i, j, 1.0});
    }
    chord.push_back({0, 7, 1.0});
    const DiscreteForm a(1, laplacian(8, chord)), b(1, laplacian(8, ring));
    for (double delta : {0.01, 0.1, 1.0}) {
      const auto r = combine(a, b, delta);
      CHECK_FALSE(r.markov);
      CHECK(r.positive_offdiagonals == 1);
      CHECK(r.conservative);
      CHECK(r.psd);
      CHECK(r.smallest_ritz >= -1e-9 * max_abs_row_sum(r.form.matrix()));
    }
    CHECK_THROWS_AS(combine(a, b, 0.01, 10.0), PreconditionError);
  }

  TEST_CASE("contraction experiment") {
    const CellGraph g(sc(), 3);
    const auto A = bb_form(g, kRho);
    const auto zero = contraction_experiment(sc(), 3, {A, A.rescaled(2)}, 2);
    for (const auto& row : zero.h) CHECK(row[0] <= 1e-10);

    const auto t = contraction_experiment(sc(), 3, {bb_form(g, kRho), kz_form(g, kRho)}, 2);
    CHECK(t.levels == std::vector<int>{3, 2, 1});
    for (const auto& row : t.h) CHECK(std::isfinite(row[0]));
    CHECK(t.max_growth <= 0.01);
    CHECK(t.nonincreasing);
    CHECK(coarsen(A, g, CellGraph(sc(), 2)).size() == 64);
  }

  TEST_CASE("Besov increments") {
    const CellGraph g(sc(), 3);
    const auto H0 = [](double r) { return std::pow(r, 2.1); };
    CHECK(besov_increment(g, Vector::Ones(g.size()), 1.0 / 9) == 0.0);
    Vector half(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) half[i] = g.center(i)[0] < 0.5 ? 0.0 : 1.0;
    const double j = besov_increment(g, half, 1.0 / 9);
    CHECK(j > 0);
    CHECK(std::isfinite(j));
    CHECK_THROWS_AS(besov_at(g, half, H0, 1.0 / 81), DomainError);
    const auto b = besov_norm(g, half, H0, 1);
    CHECK(b.radii.size() == 4);
    CHECK(b.norm > 0);
  }

  TEST_CASE("Besov equivalence band for the normalised bb form") {
    StageContext ctx;
    const auto rho = run_stage(sc(), "rho", normalize_params("rho", json::object()), ctx);
    ctx.absorb("rho", rho.payload);
    const auto res = run_stage(sc(), "besov", normalize_params("besov", json::object()), ctx);
    const double band = res.payload["band"].get<double>();
    CHECK(band <= 50.0);
    // Regression value recorded on the first run and frozen.
    CHECK(band == doctest::Approx(1.1568160630608038).epsilon(1e-9));
  }

  TEST_CASE("form text round trip") {
    const CellGraph g(sc(), 2);
    const auto f = normalize(kz_form(g, kRho), g);
    std::stringstream ss;
    write_form(ss, f, "abc");
    FormHeader h;
    const auto back = read_form(ss, &h);
    CHECK(h.spec_hash == "abc");
    CHECK(h.family == f.family());
    CHECK(h.level == 2);
    CHECK(h.flags.markov);
    CHECK(back.scale() == f.scale());
    CHECK((back.base() - f.base()).norm() == 0.0);
  }
}
