#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <limits>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "srmcomm/closed_loop_sim.hpp"
#include "srmcomm/commutation.hpp"
#include "srmcomm/error.hpp"
#include "srmcomm/kernel_basis.hpp"
#include "srmcomm/qp_solver.hpp"
#include "srmcomm/ripple_objective.hpp"
#include "srmcomm/srm_model.hpp"

namespace srmcomm {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// CSV (RFC 4180, '.' decimal separator regardless of locale)

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

inline std::string csv_escape(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (const char ch : field) {
    if (ch == '"') out += '"';
    out += ch;
  }
  out += '"';
  return out;
}

class CsvWriter {
 public:
  CsvWriter(std::ostream& os, const std::vector<std::string>& header) : os_(os), columns_(header.size()) {
    write_fields(header);
  }

  class Row {
   public:
    explicit Row(CsvWriter& w) : w_(w) {}
    Row& operator<<(double v) { return add(format_number(v)); }
    Row& operator<<(int v) { return add(std::to_string(v)); }
    Row& operator<<(long v) { return add(std::to_string(v)); }
    Row& operator<<(std::uint64_t v) { return add(std::to_string(v)); }
    Row& operator<<(bool v) { return add(v ? "true" : "false"); }
    Row& operator<<(const char* v) { return add(v); }
    Row& operator<<(const std::string& v) { return add(v); }
    ~Row() noexcept(false) {
      if (fields_.size() != w_.columns_) throw std::logic_error("CsvWriter: row has wrong column count");
      w_.write_fields(fields_);
    }

   private:
    Row& add(std::string s) {
      fields_.push_back(std::move(s));
      return *this;
    }
    CsvWriter& w_;
    std::vector<std::string> fields_;
  };

  Row row() { return Row(*this); }

 private:
  void write_fields(const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (i) os_ << ',';
      os_ << csv_escape(fields[i]);
    }
    os_ << "\r\n";
  }

  std::ostream& os_;
  std::size_t columns_;
};

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return os;
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  auto os = open_output(path);
  os << j.dump(2) << '\n';
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(is);
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Strict JSON reading: every key consumed, wrong types are config errors.

class JsonReader {
 public:
  JsonReader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + ": expected an object");
  }

  [[nodiscard]] bool has(const std::string& key) const { return j_.contains(key); }

  template <class T>
  T get(const std::string& key, const T& fallback) {
    if (!j_.contains(key)) return fallback;
    return require<T>(key);
  }

  template <class T>
  T require(const std::string& key) {
    used_.push_back(key);
    if (!j_.contains(key)) throw ConfigError(where_ + ": missing key \"" + key + "\"");
    const Json& v = j_.at(key);
    try {
      if constexpr (std::is_same_v<T, double>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_unsigned()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
        if (!v.is_number_integer()) throw ConfigError("");
        const auto wide = v.get<std::int64_t>();
        if (wide < std::numeric_limits<T>::min() || wide > std::numeric_limits<T>::max()) {
          throw ConfigError("");
        }
      } else if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError(where_ + ": key \"" + key + "\" has the wrong type");
    }
  }

  JsonReader child(const std::string& key) {
    used_.push_back(key);
    return JsonReader(j_.at(key), where_ + "." + key);
  }

  /// Throws on any key that was never read.
  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (std::find(used_.begin(), used_.end(), key) == used_.end()) {
        throw ConfigError(where_ + ": unknown key \"" + key + "\"");
      }
    }
  }

  void mark_used(const std::string& key) { used_.push_back(key); }

 private:
  const Json& j_;
  std::string where_;
  std::vector<std::string> used_;
};

// ---------------------------------------------------------------------------
// Serialization

inline Json vector_json(const Eigen::VectorXd& v) {
  return Json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

inline Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ConfigError(what + ": expected an array of numbers");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) throw ConfigError(what + ": expected an array of numbers");
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

inline Eigen::MatrixXd matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_array() || j.empty()) throw ConfigError(what + ": expected a non-empty array of rows");
  const std::size_t cols = j[0].is_array() ? j[0].size() : 0;
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < j.size(); ++r) {
    const Eigen::VectorXd row = vector_from_json(j[r], what);
    if (static_cast<std::size_t>(row.size()) != cols) throw ConfigError(what + ": ragged rows");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

inline Json to_json(const KernelBasisSpec& spec) {
  return Json{{"centers_rad", spec.centers},
              {"length_scale", spec.length_scale},
              {"smoothness", spec.smoothness},
              {"tooth_count", spec.tooth_count},
              {"coil_count", spec.coil_count}};
}

inline KernelBasisSpec kernel_basis_from_json(const Json& j) {
  JsonReader r(j, "basis");
  KernelBasisSpec spec;
  spec.centers = r.require<std::vector<double>>("centers_rad");
  spec.length_scale = r.require<double>("length_scale");
  spec.smoothness = r.require<int>("smoothness");
  spec.tooth_count = r.require<int>("tooth_count");
  spec.coil_count = r.require<int>("coil_count");
  r.finish();
  spec.validate();
  return spec;
}

inline Json to_json(const CommutationParams& p) {
  return Json{{"basis", to_json(p.basis)},
              {"alpha_plus", vector_json(p.alpha_plus)},
              {"alpha_minus", vector_json(p.alpha_minus)}};
}

inline CommutationParams commutation_params_from_json(const Json& j) {
  JsonReader r(j, "commutation");
  CommutationParams p;
  p.basis = kernel_basis_from_json(r.require<Json>("basis"));
  p.alpha_plus = vector_from_json(r.require<Json>("alpha_plus"), "alpha_plus");
  p.alpha_minus = vector_from_json(r.require<Json>("alpha_minus"), "alpha_minus");
  r.finish();
  p.validate();
  return p;
}

inline Json to_json(const GBasis& basis) {
  Json j{{"tooth_count", basis.tooth_count()}, {"coil_count", basis.coil_count()}};
  if (const auto* rbf = std::get_if<RbfLayout>(&basis.layout())) {
    j["type"] = "rbf";
    j["centers_rad"] = rbf->centers;
    j["widths_rad"] = rbf->widths;
  } else {
    const auto& f = std::get<FourierLayout>(basis.layout());
    j["type"] = "fourier";
    j["harmonic_count"] = f.harmonic_count;
    j["phase_offsets_rad"] = f.phase_offsets;
  }
  return j;
}

inline GBasis gbasis_from_json(const Json& j) {
  JsonReader r(j, "gain_basis");
  const auto type = r.require<std::string>("type");
  const int teeth = r.require<int>("tooth_count");
  const int coils = r.require<int>("coil_count");
  GBasis::Layout layout;
  if (type == "rbf") {
    RbfLayout l;
    l.centers = r.require<std::vector<std::vector<double>>>("centers_rad");
    l.widths = r.require<std::vector<std::vector<double>>>("widths_rad");
    if (l.centers.empty()) throw ConfigError("gain_basis: centers_rad is empty");
    layout = std::move(l);
  } else if (type == "fourier") {
    FourierLayout l;
    l.harmonic_count = r.require<int>("harmonic_count");
    l.phase_offsets = r.require<std::vector<double>>("phase_offsets_rad");
    layout = std::move(l);
  } else {
    throw ConfigError("gain_basis: type must be \"rbf\" or \"fourier\"");
  }
  r.finish();
  return GBasis(std::move(layout), teeth, coils);
}

inline Json to_json(const ProbabilisticSrmModel& m) {
  return Json{{"gain_basis", to_json(m.basis())},
              {"theta_mean", vector_json(m.theta_mean())},
              {"theta_cov", matrix_json(m.theta_cov())}};
}

inline ProbabilisticSrmModel model_from_json(const Json& j) {
  JsonReader r(j, "model");
  GBasis basis = gbasis_from_json(r.require<Json>("gain_basis"));
  Eigen::VectorXd mean = vector_from_json(r.require<Json>("theta_mean"), "theta_mean");
  Eigen::MatrixXd cov = matrix_from_json(r.require<Json>("theta_cov"), "theta_cov");
  r.finish();
  return ProbabilisticSrmModel(std::move(basis), std::move(mean), std::move(cov));
}

inline Json to_json(const KktResiduals& k) {
  return Json{{"stationarity", k.stationarity},
              {"primal_infeasibility", k.primal_infeasibility},
              {"complementarity", k.complementarity},
              {"dual_infeasibility", k.dual_infeasibility}};
}

/// Full QP data for offline inspection.
inline Json to_json(const QpProblem& qp) {
  return Json{{"variable_count", qp.variable_count()},
              {"constraint_count", qp.constraint_count()},
              {"hessian", matrix_json(qp.hessian)},
              {"linear", vector_json(qp.linear)},
              {"constant", qp.constant},
              {"constraints", matrix_json(qp.constraints)}};
}

// ---------------------------------------------------------------------------
// CSV exports

/// Dense lookup table of u/|T*| per coil and sign.
inline void write_lookup_table_csv(std::ostream& os, const CommutationParams& params,
                                   int samples_per_tooth) {
  if (samples_per_tooth < 1) throw std::invalid_argument("lookup table: samples must be >= 1");
  const int nc = params.basis.coil_count;
  std::vector<std::string> header{"angle_rad"};
  for (int c = 1; c <= nc; ++c) header.push_back("f_plus_coil" + std::to_string(c));
  for (int c = 1; c <= nc; ++c) header.push_back("f_minus_coil" + std::to_string(c));
  CsvWriter w(os, header);
  const double pitch = tooth_pitch(params.basis.tooth_count);
  for (int i = 0; i < samples_per_tooth; ++i) {
    const double phi = pitch * i / samples_per_tooth;
    const Eigen::VectorXd up = eval_f(phi, 1.0, params).u;
    const Eigen::VectorXd um = eval_f(phi, -1.0, params).u;
    auto row = w.row();
    row << phi;
    for (int c = 0; c < nc; ++c) row << up[c];
    for (int c = 0; c < nc; ++c) row << um[c];
  }
}

inline void write_profile_csv(std::ostream& os, const MismatchProfile& prof) {
  CsvWriter w(os, {"angle_rad", "b_plus", "b_minus"});
  for (std::size_t i = 0; i < prof.angles.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    w.row() << prof.angles[i] << prof.b_plus[k] << prof.b_minus[k];
  }
}

/// Simulation traces of both directions.
inline void write_trace_csv(std::ostream& os, const SimResult& result, int coil_count) {
  std::vector<std::string> header{"direction", "time_s", "reference_rad", "angle_rad", "error_rad",
                                  "torque_command_nm"};
  for (int c = 1; c <= coil_count; ++c) header.push_back("u_coil" + std::to_string(c) + "_a2");
  CsvWriter w(os, header);
  for (const DirectionTrace* tr : {&result.positive, &result.negative}) {
    for (std::size_t k = 0; k < tr->torque_command.size(); ++k) {
      auto row = w.row();
      row << tr->direction << tr->time[k] << tr->reference[k] << tr->angle[k] << tr->error[k]
          << tr->torque_command[k];
      for (int c = 0; c < coil_count; ++c) {
        row << (k < tr->currents.size() ? tr->currents[k][c]
                                         : std::numeric_limits<double>::quiet_NaN());
      }
    }
  }
}

inline Json summary_json(const SimResult& result) {
  return Json{{"e_rms_plus_rad", result.e_rms_plus},
              {"e_rms_minus_rad", result.e_rms_minus},
              {"e_rms_rad", result.e_rms},
              {"aborted", result.aborted}};
}

}  // namespace srmcomm
