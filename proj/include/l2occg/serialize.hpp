#pragma once

// JSON encodings for sets and instances. Matrices are stored row-major with
// an explicit shape; doubles are written in shortest round-trip form, so
// load(dump(x)) reproduces x bit for bit.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "l2occg/linalg.hpp"
#include "l2occg/recourse.hpp"
#include "l2occg/uncertainty_sets.hpp"

namespace l2occg {

using Json = nlohmann::json;

Json matrix_to_json(const Mat& m);
Mat matrix_from_json(const Json& j);
Json vector_to_json(const Vec& v);
Vec vector_from_json(const Json& j);

Json to_json(const UncertaintySet& set);
UncertaintySet set_from_json(const Json& j);

Json to_json(const HvacInstance& inst);
HvacInstance instance_from_json(const Json& j);

/// 64-bit FNV-1a.
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);
/// Hash of the canonical JSON dump of a set.
std::string set_spec_hash(const UncertaintySet& set);

/// Whole-file helpers; failures throw FormatError with the path.
std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, std::string_view text);
Json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const Json& j);

}  // namespace l2occg
