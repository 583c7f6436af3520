#include "carpet/network.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <unordered_map>

#include "carpet/error.hpp"

namespace carpet {

SparseMatrix ResistanceNetwork::laplacian() const { return carpet::laplacian(vertices, edges); }

const std::vector<std::size_t>& ResistanceNetwork::set(const std::string& name) const {
  auto it = boundary.find(name);
  if (it == boundary.end()) throw PreconditionError("network has no boundary set '" + name + "'");
  return it->second;
}

namespace {

std::vector<std::vector<std::size_t>> adjacency_lists(const ResistanceNetwork& net) {
  std::vector<std::vector<std::size_t>> adj(net.vertices);
  for (const auto& e : net.edges) {
    adj[e.u].push_back(e.v);
    adj[e.v].push_back(e.u);
  }
  return adj;
}

std::vector<char> reachable(const std::vector<std::vector<std::size_t>>& adj, const std::vector<std::size_t>& from) {
  std::vector<char> seen(adj.size(), 0);
  std::vector<std::size_t> stack;
  for (auto v : from)
    if (!seen[v]) {
      seen[v] = 1;
      stack.push_back(v);
    }
  while (!stack.empty()) {
    auto v = stack.back();
    stack.pop_back();
    for (auto w : adj[v])
      if (!seen[w]) {
        seen[w] = 1;
        stack.push_back(w);
      }
  }
  return seen;
}

}  // namespace

bool ResistanceNetwork::connected() const {
  if (vertices == 0) return true;
  auto seen = reachable(adjacency_lists(*this), {0});
  return std::all_of(seen.begin(), seen.end(), [](char c) { return c != 0; });
}

ResistanceNetwork crosswire_network(const Carpet& carpet, int level, std::size_t cell_budget) {
  const CellGraph cg(carpet, level, cell_budget);
  const int d = carpet.dimension();
  const std::int64_t side = cg.side();
  const std::int64_t stride = side + 1;

  std::vector<std::int64_t> corner_keys;
  corner_keys.reserve(cg.size() * 2);
  for (std::size_t i = 0; i < cg.size(); ++i) {
    auto c = cg.coords(i);
    for (int mask = 0; mask < (1 << d); ++mask) {
      std::int64_t key = 0;
      for (int a = 0; a < d; ++a) key = key * stride + c[a] + ((mask >> (d - 1 - a)) & 1);
      corner_keys.push_back(key);
    }
  }
  std::vector<std::int64_t> corners = corner_keys;
  std::sort(corners.begin(), corners.end());
  corners.erase(std::unique(corners.begin(), corners.end()), corners.end());
  auto corner_index = [&](std::int64_t key) {
    return static_cast<std::size_t>(std::lower_bound(corners.begin(), corners.end(), key) - corners.begin());
  };

  ResistanceNetwork net;
  net.vertices = corners.size() + cg.size();
  net.edges.reserve(corner_keys.size());
  for (std::size_t i = 0; i < cg.size(); ++i)
    for (int mask = 0; mask < (1 << d); ++mask)
      net.edges.push_back({corner_index(corner_keys[i * (1u << d) + mask]), corners.size() + i, 1.0});

  std::int64_t top = 1;
  for (int a = 1; a < d; ++a) top *= stride;
  for (std::size_t k = 0; k < corners.size(); ++k) {
    const std::int64_t x1 = corners[k] / top;
    if (x1 == 0) net.boundary["A0"].push_back(k);
    if (x1 == side) net.boundary["A1"].push_back(k);
  }
  return net;
}

ResistanceNetwork cell_network(const CellGraph& graph, bool terminals, double conductance) {
  ResistanceNetwork net;
  const std::size_t n = graph.size();
  net.vertices = n + (terminals ? 2 : 0);
  for (const auto& [i, j] : graph.edges()) net.edges.push_back({i, j, conductance});
  auto lo = graph.face_cells(0, false);
  auto hi = graph.face_cells(0, true);
  if (terminals) {
    for (auto i : lo) net.edges.push_back({n, i, 2.0 * conductance});
    for (auto i : hi) net.edges.push_back({n + 1, i, 2.0 * conductance});
    net.boundary["A0"] = {n};
    net.boundary["A1"] = {n + 1};
  } else {
    net.boundary["A0"] = lo;
    net.boundary["A1"] = hi;
  }
  return net;
}

ResistanceResult effective_resistance(const ResistanceNetwork& net, const std::vector<std::size_t>& A,
                                      const std::vector<std::size_t>& B, const SolverOptions& opt) {
  if (A.empty() || B.empty()) throw PreconditionError("effective_resistance: empty terminal set");
  std::vector<char> in_a(net.vertices, 0);
  for (auto a : A) {
    if (a >= net.vertices) throw PreconditionError("effective_resistance: vertex out of range");
    in_a[a] = 1;
  }
  for (auto b : B)
    if (b >= net.vertices || in_a[b]) throw PreconditionError("effective_resistance: A and B must be disjoint");

  ResistanceResult res;
  res.potential = Vector::Zero(static_cast<long>(net.vertices));
  const auto comp = reachable(adjacency_lists(net), A);
  if (std::none_of(B.begin(), B.end(), [&](std::size_t b) { return comp[b] != 0; })) {
    res.disconnected = true;
    res.resistance = std::numeric_limits<double>::infinity();
    res.diagnostics.method = "disconnected";
    return res;
  }

  // Restrict to the component containing A (and some of B).
  std::vector<long> local(net.vertices, -1);
  std::vector<std::size_t> global;
  for (std::size_t v = 0; v < net.vertices; ++v)
    if (comp[v]) {
      local[v] = static_cast<long>(global.size());
      global.push_back(v);
    }
  ResistanceNetwork sub;
  sub.vertices = global.size();
  for (const auto& e : net.edges)
    if (comp[e.u]) sub.edges.push_back({static_cast<std::size_t>(local[e.u]), static_cast<std::size_t>(local[e.v]), e.conductance});
  std::vector<std::size_t> fixed;
  std::vector<double> values;
  for (auto a : A) {
    fixed.push_back(static_cast<std::size_t>(local[a]));
    values.push_back(0.0);
  }
  for (auto b : B)
    if (comp[b]) {
      fixed.push_back(static_cast<std::size_t>(local[b]));
      values.push_back(1.0);
    }
  const SparseMatrix L = sub.laplacian();
  const Vector u = dirichlet_solve(L, fixed, values, Vector(), opt, res.diagnostics);
  double energy = 0.0;
  for (const auto& e : sub.edges) {
    const double du = u[static_cast<long>(e.u)] - u[static_cast<long>(e.v)];
    energy += e.conductance * du * du;
  }
  for (std::size_t k = 0; k < global.size(); ++k) res.potential[static_cast<long>(global[k])] = u[static_cast<long>(k)];
  res.resistance = 1.0 / energy;
  return res;
}

ResistanceResult effective_resistance(const ResistanceNetwork& net, const std::string& A, const std::string& B,
                                      const SolverOptions& opt) {
  return effective_resistance(net, net.set(A), net.set(B), opt);
}

ResistanceNetwork schur_trace(const ResistanceNetwork& net, const std::vector<std::size_t>& keep) {
  if (keep.empty()) throw PreconditionError("schur_trace: keep set is empty");
  for (std::size_t k = 1; k < keep.size(); ++k)
    if (keep[k] <= keep[k - 1]) throw PreconditionError("schur_trace: keep set must be sorted and unique");
  const DenseMatrix S = schur_complement(net.laplacian(), keep);
  ResistanceNetwork out;
  out.vertices = keep.size();
  const double scale = S.cwiseAbs().maxCoeff();
  for (std::size_t i = 0; i < keep.size(); ++i)
    for (std::size_t j = i + 1; j < keep.size(); ++j) {
      const double c = -S(static_cast<long>(i), static_cast<long>(j));
      if (c > 1e-14 * scale) out.edges.push_back({i, j, c});
    }
  std::vector<long> local(net.vertices, -1);
  for (std::size_t k = 0; k < keep.size(); ++k) local[keep[k]] = static_cast<long>(k);
  for (const auto& [name, verts] : net.boundary) {
    auto& dst = out.boundary[name];
    for (auto v : verts)
      if (local[v] >= 0) dst.push_back(static_cast<std::size_t>(local[v]));
  }
  return out;
}

void write_network(std::ostream& os, const ResistanceNetwork& net) {
  os << "# vertices " << net.vertices << '\n';
  for (const auto& [name, verts] : net.boundary) {
    os << "# boundary " << name;
    for (auto v : verts) os << ' ' << v;
    os << '\n';
  }
  os << std::setprecision(17);
  for (const auto& e : net.edges) os << e.u << ' ' << e.v << ' ' << e.conductance << '\n';
}

ResistanceNetwork read_network(std::istream& is) {
  ResistanceNetwork net;
  bool have_vertices = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    if (line[0] == '#') {
      std::string hash, kind;
      ls >> hash >> kind;
      if (kind == "vertices") {
        ls >> net.vertices;
        have_vertices = true;
      } else if (kind == "boundary") {
        std::string name;
        ls >> name;
        auto& set = net.boundary[name];
        std::size_t v;
        while (ls >> v) set.push_back(v);
      }
      continue;
    }
    WeightedEdge e;
    if (!(ls >> e.u >> e.v >> e.conductance) || !(e.conductance > 0))
      throw ConfigError("network line " + std::to_string(lineno) + ": expected 'u v conductance' with conductance > 0");
    net.edges.push_back(e);
  }
  if (!have_vertices) {
    for (const auto& e : net.edges) net.vertices = std::max({net.vertices, e.u + 1, e.v + 1});
  }
  for (const auto& e : net.edges)
    if (e.u >= net.vertices || e.v >= net.vertices) throw ConfigError("network edge refers to missing vertex");
  return net;
}

}  // namespace carpet
