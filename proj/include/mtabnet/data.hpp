#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtabnet/digest.hpp"
#include "mtabnet/errors.hpp"
#include "mtabnet/tensor.hpp"

namespace mtabnet {

enum class ColumnKind { kContinuous, kCategorical, kOrdinal };

inline const char* to_string(ColumnKind k) {
  switch (k) {
    case ColumnKind::kContinuous: return "continuous";
    case ColumnKind::kCategorical: return "categorical";
    case ColumnKind::kOrdinal: return "ordinal";
  }
  return "?";
}

inline ColumnKind parse_kind(const std::string& s) {
  if (s == "continuous") return ColumnKind::kContinuous;
  if (s == "categorical") return ColumnKind::kCategorical;
  if (s == "ordinal") return ColumnKind::kOrdinal;
  throw ConfigError("unknown column kind '" + s + "'");
}

/// Modality names in canonical model order, followed by the target tag.
inline const std::vector<std::string>& modality_names() {
  static const std::vector<std::string> names{"phys", "nut", "lifestyle", "genetic"};
  return names;
}
inline constexpr const char* kTargetModality = "target";

struct ColumnSchema {
  std::string name;
  ColumnKind kind = ColumnKind::kContinuous;
  std::string modality;
  std::vector<std::string> categories;
  std::string units;
  /// Ordered in time along the rows; gaps are filled by linear interpolation.
  bool time_ordered = false;

  bool is_categorical() const { return kind == ColumnKind::kCategorical; }
};

inline void to_json(nlohmann::json& j, const ColumnSchema& c) {
  j = nlohmann::json{{"name", c.name}, {"kind", to_string(c.kind)}, {"modality", c.modality}};
  if (!c.categories.empty()) j["categories"] = c.categories;
  if (!c.units.empty()) j["units"] = c.units;
  if (c.time_ordered) j["time_ordered"] = true;
}

inline void from_json(const nlohmann::json& j, ColumnSchema& c) {
  c.name = j.at("name").get<std::string>();
  c.kind = parse_kind(j.at("kind").get<std::string>());
  c.modality = j.at("modality").get<std::string>();
  c.categories = j.value("categories", std::vector<std::string>{});
  c.units = j.value("units", std::string{});
  c.time_ordered = j.value("time_ordered", false);
}

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<ColumnSchema> columns) : columns_(std::move(columns)) { validate(); }

  const std::vector<ColumnSchema>& columns() const { return columns_; }
  const ColumnSchema& column(std::size_t i) const { return columns_.at(i); }
  std::size_t size() const { return columns_.size(); }

  std::size_t index_of(const std::string& name) const {
    for (std::size_t i = 0; i < columns_.size(); ++i)
      if (columns_[i].name == name) return i;
    throw DataError("no column named '" + name + "'");
  }

  std::size_t target_index() const {
    for (std::size_t i = 0; i < columns_.size(); ++i)
      if (columns_[i].modality == kTargetModality) return i;
    throw ConfigError("schema has no target column");
  }

  /// Non-target columns in file order.
  std::vector<std::size_t> feature_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < columns_.size(); ++i)
      if (columns_[i].modality != kTargetModality) out.push_back(i);
    return out;
  }

  /// Modalities present, in canonical order.
  std::vector<std::string> modalities() const {
    std::vector<std::string> out;
    for (const std::string& m : modality_names())
      if (!columns_of(m).empty()) out.push_back(m);
    return out;
  }

  std::vector<std::size_t> columns_of(const std::string& modality) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < columns_.size(); ++i)
      if (columns_[i].modality == modality) out.push_back(i);
    return out;
  }

  /// Keeps the target and the listed modalities.
  Schema restrict_to(const std::vector<std::string>& keep) const {
    std::vector<ColumnSchema> cols;
    for (const ColumnSchema& c : columns_) {
      if (c.modality == kTargetModality || std::find(keep.begin(), keep.end(), c.modality) != keep.end()) {
        cols.push_back(c);
      }
    }
    return Schema(std::move(cols));
  }

  void validate() const {
    std::set<std::string> names;
    std::size_t targets = 0;
    for (const ColumnSchema& c : columns_) {
      if (c.name.empty()) throw ConfigError("schema: empty column name");
      if (!names.insert(c.name).second) throw ConfigError("schema: duplicate column '" + c.name + "'");
      if (c.modality == kTargetModality) {
        ++targets;
        if (c.kind != ColumnKind::kContinuous) throw ConfigError("schema: target must be continuous");
        continue;
      }
      const auto& known = modality_names();
      if (std::find(known.begin(), known.end(), c.modality) == known.end()) {
        throw ConfigError("schema: column '" + c.name + "' has unknown modality '" + c.modality + "'");
      }
      if (c.is_categorical()) {
        if (c.categories.empty()) throw ConfigError("schema: categorical '" + c.name + "' lists no categories");
        std::set<std::string> cats(c.categories.begin(), c.categories.end());
        if (cats.size() != c.categories.size()) {
          throw ConfigError("schema: categorical '" + c.name + "' repeats a category");
        }
      }
    }
    if (targets != 1) throw ConfigError("schema: exactly one target column required, found " + std::to_string(targets));
  }

  nlohmann::json to_json() const { return nlohmann::json{{"columns", columns_}}; }

  static Schema from_json(const nlohmann::json& j) {
    return Schema(j.at("columns").get<std::vector<ColumnSchema>>());
  }

  /// SHA-256 of the canonical JSON form.
  std::string fingerprint() const { return sha256_hex(to_json().dump()); }

  bool operator==(const Schema& o) const { return to_json() == o.to_json(); }

 private:
  std::vector<ColumnSchema> columns_;
};

inline Schema read_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read schema '" + path + "'");
  try {
    return Schema::from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("schema '" + path + "': " + e.what());
  }
}

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline bool is_missing(double v) { return std::isnan(v); }

/// Column-major table. Categorical values are stored as category indices;
/// missing values are NaN.
struct Dataset {
  Schema schema;
  std::vector<std::vector<double>> columns;

  std::size_t rows() const { return columns.empty() ? 0 : columns[0].size(); }

  std::vector<double>& column(const std::string& name) { return columns[schema.index_of(name)]; }
  const std::vector<double>& column(const std::string& name) const { return columns[schema.index_of(name)]; }
  const std::vector<double>& target() const { return columns[schema.target_index()]; }

  Dataset select(const std::vector<std::size_t>& rows) const {
    Dataset out{schema, std::vector<std::vector<double>>(columns.size())};
    for (std::size_t c = 0; c < columns.size(); ++c) {
      out.columns[c].reserve(rows.size());
      for (std::size_t r : rows) out.columns[c].push_back(columns[c].at(r));
    }
    return out;
  }

  Dataset restrict_to(const std::vector<std::string>& modalities) const {
    Dataset out{schema.restrict_to(modalities), {}};
    for (const ColumnSchema& c : out.schema.columns()) out.columns.push_back(columns[schema.index_of(c.name)]);
    return out;
  }

  std::size_t missing_count() const {
    std::size_t n = 0;
    for (const auto& col : columns) n += static_cast<std::size_t>(std::count_if(col.begin(), col.end(), is_missing));
    return n;
  }

  /// n x d_m matrix of one modality's columns; every value must be present.
  Tensor modality_matrix(const std::string& modality) const {
    const auto idx = schema.columns_of(modality);
    if (idx.empty()) throw DataError("no columns for modality '" + modality + "'");
    Tensor out({rows(), idx.size()});
    for (std::size_t j = 0; j < idx.size(); ++j) {
      for (std::size_t r = 0; r < rows(); ++r) {
        const double v = columns[idx[j]][r];
        if (!std::isfinite(v)) {
          throw DataError("column '" + schema.column(idx[j]).name + "' row " + std::to_string(r + 1) +
                          " is missing or non-finite");
        }
        out(r, j) = v;
      }
    }
    return out;
  }

  std::vector<Tensor> model_inputs() const {
    std::vector<Tensor> out;
    for (const std::string& m : schema.modalities()) out.push_back(modality_matrix(m));
    return out;
  }
};

// ---- CSV ------------------------------------------------------------------

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        field += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else {
      field += ch;
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

/// Shortest decimal text that reads back to the same double.
inline std::string format(double v) {
  if (is_missing(v)) return "";
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline bool parse_double(const std::string& s, double& out) {
  const char* end = s.data() + s.size();
  const auto r = std::from_chars(s.data(), end, out);
  return r.ec == std::errc() && r.ptr == end && std::isfinite(out);
}

}  // namespace csv

/// Reads a CSV whose header names every schema column (any order; extra
/// columns are an error). Empty fields are missing values.
inline Dataset parse_csv(std::istream& in, const Schema& schema, const std::string& source = "<csv>") {
  std::string line;
  if (!std::getline(in, line)) throw DataError(source + ": empty file, header row expected");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = csv::split_line(line);
  std::vector<std::size_t> slot(header.size());
  std::vector<bool> seen(schema.size(), false);
  for (std::size_t h = 0; h < header.size(); ++h) {
    std::size_t idx = 0;
    try {
      idx = schema.index_of(header[h]);
    } catch (const DataError&) {
      throw DataError(source + ": header column '" + header[h] + "' is not in the schema");
    }
    if (seen[idx]) throw DataError(source + ": header repeats column '" + header[h] + "'");
    seen[idx] = true;
    slot[h] = idx;
  }
  for (std::size_t c = 0; c < schema.size(); ++c) {
    if (!seen[c]) throw DataError(source + ": schema column '" + schema.column(c).name + "' missing from header");
  }

  Dataset data{schema, std::vector<std::vector<double>>(schema.size())};
  std::vector<std::map<std::string, double>> codes(schema.size());
  for (std::size_t c = 0; c < schema.size(); ++c) {
    const auto& cats = schema.column(c).categories;
    for (std::size_t k = 0; k < cats.size(); ++k) codes[c][cats[k]] = static_cast<double>(k);
  }
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = csv::split_line(line);
    if (fields.size() != header.size()) {
      throw DataError(source + " line " + std::to_string(row) + ": " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    for (std::size_t h = 0; h < fields.size(); ++h) {
      const std::size_t c = slot[h];
      const ColumnSchema& col = schema.column(c);
      const std::string& f = fields[h];
      double v = kMissing;
      if (!f.empty()) {
        if (col.is_categorical()) {
          const auto it = codes[c].find(f);
          if (it == codes[c].end()) {
            throw DataError(source + " line " + std::to_string(row) + ", column '" + col.name +
                            "': unknown category '" + f + "'");
          }
          v = it->second;
        } else if (!csv::parse_double(f, v)) {
          throw DataError(source + " line " + std::to_string(row) + ", column '" + col.name + "': '" + f +
                          "' is not a finite number");
        }
      }
      data.columns[c].push_back(v);
    }
  }
  if (data.rows() == 0) throw DataError(source + ": no data rows");
  return data;
}

inline Dataset read_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read '" + path + "'");
  return parse_csv(in, schema, path);
}

inline std::string to_csv(const Dataset& data) {
  std::ostringstream out;
  const Schema& s = data.schema;
  for (std::size_t c = 0; c < s.size(); ++c) out << (c ? "," : "") << csv::quote(s.column(c).name);
  out << '\n';
  for (std::size_t r = 0; r < data.rows(); ++r) {
    for (std::size_t c = 0; c < s.size(); ++c) {
      if (c) out << ',';
      const double v = data.columns[c][r];
      if (is_missing(v)) continue;
      if (s.column(c).is_categorical()) {
        out << csv::quote(s.column(c).categories.at(static_cast<std::size_t>(v)));
      } else {
        out << csv::format(v);
      }
    }
    out << '\n';
  }
  return out.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline void write_csv(const std::string& path, const Dataset& data) { write_text(path, to_csv(data)); }

}  // namespace mtabnet
