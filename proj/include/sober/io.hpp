#pragma once

// JSON round-trips for kernels and datasets.

#include <vector>

#include <json.hpp>

#include "core.hpp"
#include "gp.hpp"

namespace sober {

namespace io_detail {

inline nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

inline Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

inline nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

inline Matrix matrix_from_json(const nlohmann::json& j, Index cols_if_empty = 0) {
  if (j.empty()) return Matrix(0, cols_if_empty);
  const auto rows = static_cast<Index>(j.size());
  const auto cols = static_cast<Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    const Vector r = vector_from_json(j.at(static_cast<std::size_t>(i)));
    if (r.size() != cols) throw DimensionError("ragged matrix in JSON");
    m.row(i) = r.transpose();
  }
  return m;
}

}  // namespace io_detail

inline void to_json(nlohmann::json& j, const Kernel& k) {
  j = nlohmann::json{{"family", "rbf-ard"},
                     {"lengthscales", io_detail::vector_to_json(k.lengthscales)},
                     {"outputscale", k.outputscale}};
}

inline void from_json(const nlohmann::json& j, Kernel& k) {
  if (j.value("family", std::string("rbf-ard")) != "rbf-ard") throw std::invalid_argument("unsupported kernel family");
  k.lengthscales = io_detail::vector_from_json(j.at("lengthscales"));
  k.outputscale = j.at("outputscale").get<double>();
  k.validate();
}

inline void to_json(nlohmann::json& j, const Dataset& d) {
  j = nlohmann::json{{"X", io_detail::matrix_to_json(d.X)},
                     {"Y", io_detail::vector_to_json(d.Y)},
                     {"noise_variance", d.noise_variance}};
}

inline void from_json(const nlohmann::json& j, Dataset& d) {
  d.X = io_detail::matrix_from_json(j.at("X"));
  d.Y = io_detail::vector_from_json(j.at("Y"));
  d.noise_variance = j.value("noise_variance", 0.0);
  d.validate();
}

}  // namespace sober
