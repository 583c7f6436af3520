#include <doctest.h>

#include <algorithm>
#include <cstdlib>
#include <map>
#include <set>

#include "carpet/error.hpp"
#include "carpet/geometry.hpp"
#include "carpet/spec_io.hpp"

using namespace carpet;

namespace {

std::int64_t ipow(std::int64_t b, int e) {
  std::int64_t r = 1;
  while (e-- > 0) r *= b;
  return r;
}

// Grid points of the closed cube of `cell`, at resolution `res`.
std::vector<GridPoint> cube_points(const Carpet& c, const CellId& cell, int res) {
  const auto w = ipow(c.length_scale(), res - cell.level);
  const int d = c.dimension();
  std::vector<GridPoint> out;
  std::vector<std::int64_t> off(d, 0);
  while (true) {
    GridPoint p{res, Coord(d)};
    for (int i = 0; i < d; ++i) p.coords[i] = cell.coords[i] * w + off[i];
    out.push_back(p);
    int i = 0;
    while (i < d && ++off[i] > w) off[i++] = 0;
    if (i == d) break;
  }
  return out;
}

// Every grid point of F_res.
std::vector<GridPoint> carpet_points(const Carpet& c, int res) {
  std::set<GridPoint> pts;
  for (const auto& cell : cells(c, res))
    for (auto& p : cube_points(c, cell, res)) pts.insert(p);
  return {pts.begin(), pts.end()};
}

std::int64_t dist2(const GridPoint& a, const GridPoint& b) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < a.coords.size(); ++i) s += (a.coords[i] - b.coords[i]) * (a.coords[i] - b.coords[i]);
  return s;
}

std::int64_t linf(const GridPoint& a, const GridPoint& b) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < a.coords.size(); ++i) s = std::max<std::int64_t>(s, std::llabs(a.coords[i] - b.coords[i]));
  return s;
}

}  // namespace

TEST_SUITE("geometry") {
  TEST_CASE("cell counts are m^n") {
    for (const auto* name : {"sc2", "sc3", "menger"}) {
      const Carpet c(preset(name));
      for (int n = 0; n <= 3; ++n) {
        CAPTURE(name);
        CAPTURE(n);
        const auto cs = cells(c, n);
        CHECK(cs.size() == static_cast<std::size_t>(ipow(c.mass(), n)));
        CHECK(std::is_sorted(cs.begin(), cs.end()));
      }
    }
    CHECK(Carpet(preset("sc2")).mass() == 8);
    CHECK(Carpet(preset("sc3")).mass() == 26);
    CHECK(Carpet(preset("menger")).mass() == 20);
    CHECK(cells(Carpet(preset("menger")), 2).size() == 400);
  }

  TEST_CASE("hyperoctahedral group orders and closure") {
    for (int d : {1, 2, 3}) {
      const auto g = hyperoctahedral_group(d);
      const std::size_t order = d == 1 ? 2 : d == 2 ? 8 : 48;
      CHECK(g.size() == order);
      const std::set<Isometry> set(g.begin(), g.end());
      CHECK(set.size() == order);
      CHECK(set.count(Isometry::identity(d)));
      std::size_t rotations = 0;
      for (const auto& a : g) {
        rotations += a.is_rotation();
        CHECK(set.count(a.inverse()));
        CHECK(a.compose(a.inverse()) == Isometry::identity(d));
        for (const auto& b : g) CHECK(set.count(a.compose(b)));
      }
      CHECK(rotations * 2 == order);
    }
  }

  TEST_CASE("isometry action on the cube") {
    // 90 degree rotation: (x, y) -> (y, 3 - x) on [0, 3]^2.
    const Isometry rot({1, 0}, {1, -1});
    CHECK(rot.apply(std::vector<std::int64_t>{1, 0}, 3) == Coord{0, 2});
    CHECK(rot.order() == 4);
    CHECK(rot.is_rotation());
    CHECK_FALSE(Isometry({0, 1}, {-1, 1}).is_rotation());
  }

  TEST_CASE("validation of presets and broken generators") {
    for (const auto* name : {"sc2", "sc3", "menger"}) {
      CAPTURE(name);
      const auto rep = validate(Carpet(preset(name)));
      CHECK(rep.passed());
      CHECK(rep.axioms.size() == 4);
    }
    const auto corner = full_minus(2, 3, {{0, 0}});
    const auto rep = validate(corner);
    CHECK_FALSE(rep.passed());
    CHECK_FALSE(rep.axiom("H1").passed);
    CHECK_FALSE(rep.axiom("H1").witness.empty());

    // Two opposite corners only: symmetric under the diagonal group but
    // disconnected and missing the border.
    const auto diag = validate(CarpetSpec{2, 3, {{0, 0}, {2, 2}, {0, 2}, {2, 0}}});
    CHECK_FALSE(diag.axiom("H2").passed);
    CHECK_FALSE(diag.axiom("H4").passed);

    // A single cross of four edge-centre cubes around a hole meets only at corners.
    const auto cross = validate(CarpetSpec{2, 3, {{0, 1}, {1, 0}, {1, 2}, {2, 1}}});
    CHECK_FALSE(cross.passed());
  }

  TEST_CASE("malformed generators raise SpecError") {
    CHECK_THROWS_AS(Carpet(CarpetSpec{2, 3, {{0, 5}}}), SpecError);
    CHECK_THROWS_AS(Carpet(CarpetSpec{2, 3, {{0, 0}, {0, 0}}}), SpecError);
    CHECK_THROWS_AS(Carpet(CarpetSpec{0, 3, {}}), SpecError);
    CHECK_THROWS_AS(Carpet(CarpetSpec{2, 1, {{0, 0}}}), SpecError);
    CHECK_THROWS_AS(Carpet(CarpetSpec{2, 3, {{0, 0, 0}}}), SpecError);
    CHECK_THROWS_AS(spec_from_json(json{{"dimension", 2}, {"length_scale", 3}, {"retained", {{0, 0}}}, {"x", 1}}),
                    SpecError);
  }

  TEST_CASE("cell budget") {
    const Carpet c(preset("sc2"));
    CHECK_THROWS_AS(cells(c, 5, 1000), ResourceError);
    CHECK_NOTHROW(cells(c, 3, 1000));
  }

  TEST_CASE("adjacency examples") {
    CHECK(adjacency(Carpet(preset("sc2")), 1).size() == 8);
    CHECK(adjacency(Carpet(preset("square")), 1).size() == 12);
    const CellGraph g(Carpet(preset("sc2")), 2);
    CHECK(g.size() == 64);
    CHECK(g.connected());
  }

  TEST_CASE("adjacency matches brute force face sharing") {
    for (const auto* name : {"sc2", "sc3", "menger"}) {
      const Carpet c(preset(name));
      for (int n = 0; n <= 2; ++n) {
        CAPTURE(name);
        CAPTURE(n);
        const auto cs = cells(c, n);
        std::vector<std::pair<std::size_t, std::size_t>> brute;
        for (std::size_t i = 0; i < cs.size(); ++i)
          for (std::size_t j = i + 1; j < cs.size(); ++j) {
            std::int64_t l1 = 0;
            for (int k = 0; k < c.dimension(); ++k) l1 += std::llabs(cs[i].coords[k] - cs[j].coords[k]);
            if (l1 == 1) brute.emplace_back(i, j);
          }
        CHECK(adjacency(c, n) == brute);
        CHECK(CellGraph(c, n).connected());
      }
    }
    CHECK(CellGraph(Carpet(preset("sc2")), 3).connected());
    CHECK(CellGraph(Carpet(preset("menger")), 3).connected());
  }

  TEST_CASE("cell graph lookups") {
    const CellGraph g(Carpet(preset("sc2")), 2);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(g.find(g.coords(i)) == i);
    CHECK_FALSE(g.find(std::vector<std::int64_t>{4, 4}).has_value());
    const std::vector<double> mid{0.5, 0.5};
    // The centre cell is a hole; the lexicographically first nearest cell is (2, 4).
    const auto c = g.coords(g.nearest(mid));
    CHECK(std::vector<std::int64_t>(c.begin(), c.end()) == std::vector<std::int64_t>{2, 4});
    CHECK(g.outer_faces(0) == 2);
    CHECK(g.face_cells(0, false).size() == 9);
  }

  TEST_CASE("fold: hand computed reflection") {
    const Carpet c(preset("sc2"));
    const CellId s{1, {0, 0}};
    CHECK(fold(c, s, GridPoint{2, {2, 0}}).coords == Coord{2, 0});
    // x = 4/9 lies in [1/3, 2/3] and reflects to 2/3 - 4/9 = 2/9.
    CHECK(fold(c, s, GridPoint{2, {4, 0}}).coords == Coord{2, 0});
    // x = 8/9 reduces by the period 2/3 to 2/9.
    CHECK(fold(c, s, GridPoint{2, {8, 1}}).coords == Coord{2, 1});
    // The centre of the hole is not in F_1.
    CHECK_THROWS_AS(fold(c, s, GridPoint{2, {4, 4}}), DomainError);
    CHECK_THROWS_AS(fold(c, CellId{2, {0, 0}}, GridPoint{1, {0, 0}}), DomainError);
  }

  TEST_CASE("fold is the identity on S and an isometry from every S' onto S") {
    struct Case {
      const char* name;
      int level;
      int res;
    };
    for (const auto& k : {Case{"sc2", 1, 2}, Case{"sc2", 2, 3}, Case{"sc3", 1, 2}, Case{"menger", 1, 2}}) {
      CAPTURE(k.name);
      CAPTURE(k.level);
      const Carpet c(preset(k.name));
      const auto level_cells = cells(c, k.level);
      for (const auto& s : level_cells) {
        const auto own = cube_points(c, s, k.res);
        const std::set<GridPoint> own_set(own.begin(), own.end());
        for (const auto& p : own) REQUIRE(fold(c, s, p) == p);
        for (const auto& sp : level_cells) {
          const auto pts = cube_points(c, sp, k.res);
          std::vector<GridPoint> img;
          for (const auto& p : pts) img.push_back(fold(c, s, p));
          REQUIRE(std::set<GridPoint>(img.begin(), img.end()) == own_set);
          for (std::size_t i = 0; i < pts.size(); ++i)
            for (std::size_t j = i + 1; j < pts.size(); ++j) REQUIRE(dist2(img[i], img[j]) == dist2(pts[i], pts[j]));
        }
      }
    }
  }

  TEST_CASE("fold composition, idempotence and contraction") {
    struct Case {
      const char* name;
      int level;
      int res;
    };
    for (const auto& k : {Case{"sc2", 1, 2}, Case{"sc2", 1, 3}, Case{"sc2", 2, 3}, Case{"menger", 1, 2}}) {
      CAPTURE(k.name);
      CAPTURE(k.level);
      CAPTURE(k.res);
      const Carpet c(preset(k.name));
      const auto pts = carpet_points(c, k.res);
      const auto level_cells = cells(c, k.level);
      for (const auto& s2 : level_cells) {
        std::vector<GridPoint> f2;
        for (const auto& p : pts) f2.push_back(fold(c, s2, p));
        for (std::size_t i = 0; i < pts.size(); ++i) REQUIRE(fold(c, s2, f2[i]) == f2[i]);
        for (const auto& s1 : level_cells)
          for (std::size_t i = 0; i < pts.size(); ++i) REQUIRE(fold(c, s1, f2[i]) == fold(c, s1, pts[i]));
      }
      // Distance non-increasing on a sample of pairs.
      const auto& s = level_cells.front();
      for (std::size_t i = 0; i < pts.size(); i += 3)
        for (std::size_t j = i + 1; j < pts.size(); j += 5)
          REQUIRE(linf(fold(c, s, pts[i]), fold(c, s, pts[j])) <= linf(pts[i], pts[j]));
    }
  }

  TEST_CASE("fold_cell agrees with folding the cell's points") {
    const Carpet c(preset("sc2"));
    for (const auto& target : cells(c, 1))
      for (const auto& cell : cells(c, 2)) {
        const auto img = fold_cell(c, target, cell);
        CHECK(img.level == 2);
        std::set<GridPoint> a, b;
        for (const auto& p : cube_points(c, cell, 2)) a.insert(fold(c, target, p));
        for (const auto& p : cube_points(c, img, 2)) b.insert(p);
        CHECK(a == b);
      }
  }

  TEST_CASE("association") {
    const Carpet c(preset("sc2"));
    const auto pts = carpet_points(c, 2);
    // Mirror images across x = 1/3 are 1-associated; a generic pair is not.
    CHECK(associated(c, GridPoint{2, {2, 1}}, GridPoint{2, {4, 1}}, 1));
    CHECK_FALSE(associated(c, GridPoint{2, {1, 0}}, GridPoint{2, {2, 0}}, 1));
    for (std::size_t i = 0; i < pts.size(); i += 2) {
      CHECK(associated(c, pts[i], pts[i], 1));
      for (std::size_t j = 0; j < pts.size(); j += 3) {
        const bool a1 = associated(c, pts[i], pts[j], 1);
        CHECK(a1 == associated(c, pts[j], pts[i], 1));
        if (a1) CHECK(associated(c, pts[i], pts[j], 2));
      }
    }
    // Transitivity through equal fold images at level 1.
    std::map<GridPoint, std::vector<GridPoint>> classes;
    for (const auto& p : pts) classes[fold(c, CellId{1, {0, 0}}, p)].push_back(p);
    for (const auto& [img, members] : classes)
      for (const auto& a : members)
        for (const auto& b : members) CHECK(associated(c, a, b, 1));
  }

  TEST_CASE("half-face move graph") {
    const Carpet c(preset("sc2"));
    const auto g = halfface_graph(c, 1);
    CHECK(g.connected);
    const auto l0 = g.find(origin_halfface(2, 1, 0));
    const auto l1 = g.find(origin_halfface(2, 1, 1));
    const auto m01 = g.find(slide_halfface(2, 1, 0, 1));
    REQUIRE(l0);
    REQUIRE(l1);
    REQUIRE(m01);
    const auto corner = g.find_edge(*l0, *l1);
    REQUIRE(corner);
    CHECK(g.edges[*corner].kind == MoveKind::Corner);
    const auto slide = g.find_edge(*l0, *m01);
    REQUIRE(slide);
    CHECK(g.edges[*slide].kind == MoveKind::Slide);
    for (const auto& e : g.edges) CHECK(halffaces_meet_in_codim2(g.faces[e.a], g.faces[e.b]));
    CHECK(halfface_graph(Carpet(preset("menger")), 1).connected);
  }

  TEST_CASE("spec hash is canonical") {
    auto a = preset("sc2");
    auto b = a;
    std::reverse(b.retained.begin(), b.retained.end());
    CHECK(spec_hash(a) == spec_hash(b));
    CHECK(spec_hash(a) != spec_hash(preset("square")));
    CHECK(spec_from_json(spec_to_json(a)).retained.size() == 8);
  }
}
