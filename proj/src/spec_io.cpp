#include "carpet/spec_io.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "carpet/error.hpp"

namespace carpet {

CarpetSpec full_minus(int dimension, int length_scale, const std::vector<Coord>& removed) {
  CarpetSpec spec{dimension, length_scale, {}};
  Coord c(dimension, 0);
  while (true) {
    if (std::find(removed.begin(), removed.end(), c) == removed.end()) spec.retained.push_back(c);
    int k = dimension - 1;
    while (k >= 0 && ++c[k] == length_scale) c[k--] = 0;
    if (k < 0) break;
  }
  return spec;
}

CarpetSpec preset(const std::string& name) {
  if (name == "sc2") return full_minus(2, 3, {{1, 1}});
  if (name == "sc3") return full_minus(3, 3, {{1, 1, 1}});
  if (name == "square") return full_minus(2, 3, {});
  if (name == "menger") {
    // Remove the centre and the six face-centre cubes.
    std::vector<Coord> removed{{1, 1, 1}};
    for (int a = 0; a < 3; ++a)
      for (int v : {0, 2}) {
        Coord c{1, 1, 1};
        c[a] = v;
        removed.push_back(c);
      }
    return full_minus(3, 3, removed);
  }
  throw SpecError("unknown preset '" + name + "'");
}

std::vector<std::string> preset_names() { return {"menger", "sc2", "sc3", "square"}; }

CarpetSpec spec_from_json(const json& j) {
  if (!j.is_object()) throw SpecError("carpet spec must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (key != "dimension" && key != "length_scale" && key != "retained")
      throw SpecError("unknown key '" + key + "' in carpet spec");
  for (const char* key : {"dimension", "length_scale", "retained"})
    if (!j.contains(key)) throw SpecError(std::string("carpet spec missing '") + key + "'");
  if (!j["dimension"].is_number_integer() || !j["length_scale"].is_number_integer())
    throw SpecError("dimension and length_scale must be integers");
  if (!j["retained"].is_array()) throw SpecError("retained must be a list of index tuples");
  CarpetSpec spec;
  spec.dimension = j["dimension"].get<int>();
  spec.length_scale = j["length_scale"].get<int>();
  for (const auto& t : j["retained"]) {
    if (!t.is_array()) throw SpecError("retained entries must be lists");
    Coord c;
    for (const auto& v : t) {
      if (!v.is_number_integer()) throw SpecError("retained indices must be integers");
      c.push_back(v.get<std::int64_t>());
    }
    spec.retained.push_back(std::move(c));
  }
  return spec;
}

json spec_to_json(const CarpetSpec& spec) {
  auto retained = spec.retained;
  std::sort(retained.begin(), retained.end());
  return json{{"dimension", spec.dimension}, {"length_scale", spec.length_scale}, {"retained", retained}};
}

CarpetSpec load_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SpecError("cannot open spec file " + path);
  try {
    return spec_from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw SpecError("spec file " + path + ": " + e.what());
  }
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return os.str();
}

std::string spec_hash(const CarpetSpec& spec) { return sha256_hex(spec_to_json(spec).dump()); }

json report_to_json(const ValidationReport& report) {
  json axioms = json::array();
  for (const auto& a : report.axioms)
    axioms.push_back({{"axiom", a.axiom}, {"name", a.name}, {"passed", a.passed}, {"witness", a.witness}});
  return {{"passed", report.passed()}, {"axioms", axioms}, {"h3_checked_up_to_m", report.h3_checked_up_to}};
}

json halfface_graph_to_json(const HalfFaceGraph& g) {
  json faces = json::array();
  for (const auto& f : g.faces) faces.push_back({{"axis", f.axis}, {"anchor2", f.anchor2}});
  json edges = json::array();
  std::size_t corners = 0, slides = 0;
  for (const auto& e : g.edges) {
    (e.kind == MoveKind::Corner ? corners : slides)++;
    edges.push_back({{"a", e.a},
                     {"b", e.b},
                     {"kind", e.kind == MoveKind::Corner ? "corner" : "slide"},
                     {"inside_retained_cube", e.inside_retained_cube}});
  }
  return {{"level", g.level}, {"connected", g.connected}, {"corners", corners}, {"slides", slides},
          {"faces", faces},   {"edges", edges}};
}

}  // namespace carpet
