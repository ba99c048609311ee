#include <fstream>

#include "toa/io.hpp"
#include "toa/operators.hpp"
#include "toa/serialize.hpp"

namespace toa::theory {

nlohmann::json to_json(const CanonicalOperator& op) {
  return {{"case", std::string(to_string(op.label))},
          {"construction", op.construction},
          {"expects_violation", op.expects_violation},
          {"matrix", matrix_to_json(op.matrix)}};
}

nlohmann::json to_json(const SimplexReport& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"min_entry", r.min_entry}, {"row_sum", r.row_sum}, {"in_simplex", r.in_simplex}});
  return {{"tolerance", kSimplexTolerance},
          {"violations", report.violations()},
          {"all_in_simplex", report.all_in_simplex()},
          {"rows", rows}};
}

void export_operator(const CanonicalOperator& op, const std::filesystem::path& stem) {
  io::write_matrix_csv(std::filesystem::path(stem.string() + ".csv"), op.matrix);
  {
    std::ofstream out = io::open_for_write(stem.string() + ".json");
    out << to_json(op).dump(2) << '\n';
  }
  std::ofstream out = io::open_for_write(stem.string() + ".simplex.json");
  out << to_json(simplex_report(op)).dump(2) << '\n';
}

}  // namespace toa::theory
