#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "carpet/geometry.hpp"

namespace carpet {

using json = nlohmann::json;

/// Named generators: "sc2" (standard carpet), "sc3" (3-d cube minus its
/// centre, 26 cubes), "menger" (Menger sponge, 20 cubes) and "square" (the
/// full 3x3 square, a degenerate carpet that is a plain grid).
CarpetSpec preset(const std::string& name);
std::vector<std::string> preset_names();

/// Generator with every cube retained except those listed.
CarpetSpec full_minus(int dimension, int length_scale, const std::vector<Coord>& removed);

/// Strict parse of {"dimension", "length_scale", "retained"}; unknown keys and
/// type errors raise SpecError.
CarpetSpec spec_from_json(const json& j);
json spec_to_json(const CarpetSpec& spec);
CarpetSpec load_spec(const std::string& path);

/// Canonical JSON (sorted retained list) hashed with SHA-256, hex encoded.
std::string spec_hash(const CarpetSpec& spec);
std::string sha256_hex(const std::string& data);

json report_to_json(const ValidationReport& report);
json halfface_graph_to_json(const HalfFaceGraph& g);

}  // namespace carpet
