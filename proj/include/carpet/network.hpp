#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "carpet/geometry.hpp"
#include "carpet/linalg.hpp"

namespace carpet {

/// Weighted undirected graph with named boundary vertex sets.
struct ResistanceNetwork {
  std::size_t vertices = 0;
  std::vector<WeightedEdge> edges;
  std::map<std::string, std::vector<std::size_t>> boundary;

  SparseMatrix laplacian() const;
  bool connected() const;
  const std::vector<std::size_t>& set(const std::string& name) const;
};

/// Corner lattice points of the retained level-n cubes plus one centre per
/// cube, each centre wired to its 2^d corners by unit conductances. Corners
/// come first in lexicographic order, then centres in cell order. Boundary
/// sets "A0"/"A1" hold the corners on {x_1 = 0} and {x_1 = 1}.
ResistanceNetwork crosswire_network(const Carpet& carpet, int level, std::size_t cell_budget = kDefaultCellBudget);

/// Unit conductance between face-adjacent cells. With `terminals`, two extra
/// vertices (indices N and N+1) stand for the faces {x_1 = 0} and {x_1 = 1}
/// and are joined to the touching cells by conductance 2 (half a cell), so
/// that a single cell has resistance 1; "A0"/"A1" are then these terminals,
/// otherwise the face cells themselves.
ResistanceNetwork cell_network(const CellGraph& graph, bool terminals = false, double conductance = 1.0);

struct ResistanceResult {
  double resistance = 0.0;  // +inf when A and B are disconnected
  bool disconnected = false;
  Vector potential;         // 0 on A, 1 on B; zero outside the A-B component
  SolveDiagnostics diagnostics;
};

/// R_eff(A, B) with potential fixed to 0 on A and 1 on B, R = 1 / energy.
ResistanceResult effective_resistance(const ResistanceNetwork& net, const std::vector<std::size_t>& A,
                                      const std::vector<std::size_t>& B, const SolverOptions& opt = {});
ResistanceResult effective_resistance(const ResistanceNetwork& net, const std::string& A = "A0",
                                      const std::string& B = "A1", const SolverOptions& opt = {});

/// Kron reduction onto `keep` (sorted, unique). Vertices are renumbered to
/// their position in `keep`; boundary sets are restricted accordingly.
ResistanceNetwork schur_trace(const ResistanceNetwork& net, const std::vector<std::size_t>& keep);

/// Plain text: header lines "# vertices N" and "# boundary NAME i j k ...",
/// then one "u v conductance" line per edge.
void write_network(std::ostream& os, const ResistanceNetwork& net);
ResistanceNetwork read_network(std::istream& is);

}  // namespace carpet
