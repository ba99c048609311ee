#include "toa/serialize.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>

namespace toa {
namespace {

int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

const nlohmann::json& field(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key))
    throw FormatError(std::string("missing field '") + key + "'");
  return j.at(key);
}

}  // namespace

nlohmann::json matrix_to_json(const Matrix& m) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string bits(m.size() * 16, '0');
  for (std::size_t i = 0; i < m.size(); ++i) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(m.data()[i]);
    for (int k = 15; k >= 0; --k) {
      bits[i * 16 + static_cast<std::size_t>(k)] = kHex[u & 0xf];
      u >>= 4;
    }
  }
  nlohmann::json j = {{"rows", m.rows()}, {"cols", m.cols()}, {"bits", std::move(bits)}};
  if (m.size() <= kDecimalEntryLimit) {
    nlohmann::json values = nlohmann::json::array();
    for (double v : m.values()) values.push_back(v);
    j["values"] = std::move(values);
  }
  return j;
}

Matrix matrix_from_json(const nlohmann::json& j) {
  try {
    const auto rows = field(j, "rows").get<std::size_t>();
    const auto cols = field(j, "cols").get<std::size_t>();
    Matrix m(rows, cols);
    if (j.contains("bits")) {
      const auto& bits = j.at("bits").get_ref<const std::string&>();
      if (bits.size() != m.size() * 16)
        throw FormatError("bit string length " + std::to_string(bits.size()) +
                          " does not match shape " + m.shape_string());
      for (std::size_t i = 0; i < m.size(); ++i) {
        std::uint64_t u = 0;
        for (std::size_t k = 0; k < 16; ++k) {
          const int d = hex_digit(bits[i * 16 + k]);
          if (d < 0) throw FormatError("invalid hex digit in matrix bits");
          u = (u << 4) | static_cast<std::uint64_t>(d);
        }
        m.data()[i] = std::bit_cast<double>(u);
      }
    } else {
      const auto& values = field(j, "values");
      if (!values.is_array() || values.size() != m.size())
        throw FormatError("value array does not match shape " + m.shape_string());
      for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = values[i].get<double>();
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad matrix: ") + e.what());
  }
}

namespace attention {

nlohmann::json to_json(const MultiHeadParams& params) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : params.heads) {
    nlohmann::json jh = {{"w_v", matrix_to_json(h.w_v)}};
    if (!h.w_q.empty()) jh["w_q"] = matrix_to_json(h.w_q);
    if (!h.w_k.empty()) jh["w_k"] = matrix_to_json(h.w_k);
    if (!h.m1.empty()) jh["m1"] = matrix_to_json(h.m1);
    if (!h.m2.empty()) jh["m2"] = matrix_to_json(h.m2);
    if (h.gated) {
      const auto& g = *h.gated;
      jh["gated"] = {{"w_q_left", matrix_to_json(g.w_q_left)},
                     {"w_k_left", matrix_to_json(g.w_k_left)},
                     {"w_q_right", matrix_to_json(g.w_q_right)},
                     {"w_k_right", matrix_to_json(g.w_k_right)},
                     {"m1_left", matrix_to_json(g.m1_left)},
                     {"m1_right", matrix_to_json(g.m1_right)}};
    }
    heads.push_back(std::move(jh));
  }
  return {{"variant", std::string(to_string(params.variant))},
          {"temperature", params.options.temperature},
          {"length_normalized_relu", params.options.length_normalized_relu},
          {"heads", std::move(heads)},
          {"w_o", matrix_to_json(params.w_o)}};
}

MultiHeadParams multihead_from_json(const nlohmann::json& j) {
  try {
    MultiHeadParams p;
    try {
      p.variant = parse_variant(field(j, "variant").get<std::string>());
    } catch (const ConfigError& e) {
      throw FormatError(e.what());
    }
    p.options.temperature = field(j, "temperature").get<bool>();
    p.options.length_normalized_relu = field(j, "length_normalized_relu").get<bool>();
    auto opt = [](const nlohmann::json& o, const char* key) {
      return o.contains(key) ? matrix_from_json(o.at(key)) : Matrix();
    };
    for (const auto& jh : field(j, "heads")) {
      HeadParams h;
      h.w_v = matrix_from_json(field(jh, "w_v"));
      h.w_q = opt(jh, "w_q");
      h.w_k = opt(jh, "w_k");
      h.m1 = opt(jh, "m1");
      h.m2 = opt(jh, "m2");
      if (jh.contains("gated")) {
        const auto& g = jh.at("gated");
        h.gated = GatedProjections{
            matrix_from_json(field(g, "w_q_left")),  matrix_from_json(field(g, "w_k_left")),
            matrix_from_json(field(g, "w_q_right")), matrix_from_json(field(g, "w_k_right")),
            matrix_from_json(field(g, "m1_left")),   matrix_from_json(field(g, "m1_right"))};
      }
      if ((p.variant == Variant::ToaGated) != h.gated.has_value())
        throw FormatError("head layout does not match variant " + std::string(to_string(p.variant)));
      p.heads.push_back(std::move(h));
    }
    p.w_o = matrix_from_json(field(j, "w_o"));
    if (p.heads.empty()) throw FormatError("no heads");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad attention params: ") + e.what());
  }
}

}  // namespace attention
}  // namespace toa
