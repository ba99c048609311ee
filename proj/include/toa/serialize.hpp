#pragma once

#include <cstddef>

#include "json.hpp"
#include "toa/attention.hpp"
#include "toa/matrix.hpp"

namespace toa {

// Matrices larger than this are written without the readable decimal array;
// the hex bit patterns are always present and authoritative.
inline constexpr std::size_t kDecimalEntryLimit = 65536;

// {"rows", "cols", "bits": 16 hex chars per value, "values": [...]}.
nlohmann::json matrix_to_json(const Matrix& m);
// Throws FormatError on malformed input.
Matrix matrix_from_json(const nlohmann::json& j);

namespace attention {

nlohmann::json to_json(const MultiHeadParams& params);
MultiHeadParams multihead_from_json(const nlohmann::json& j);

}  // namespace attention
}  // namespace toa
