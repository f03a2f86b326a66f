#pragma once

// Dataset ingestion and standardization: schema and mapping files, CSV
// loading with feature trimming and expansion, z-score outlier cleaning,
// normalization/tokenization, and deterministic splits.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mac/errors.hpp"
#include "mac/groups.hpp"
#include "mac/random.hpp"

namespace mac {

using Json = nlohmann::json;

enum class FeatureKind { Numeric, Categorical };

inline std::string_view kind_name(FeatureKind k) {
  return k == FeatureKind::Numeric ? "numeric" : "categorical";
}

struct FeatureSpec {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  Group group = Group::Other;
  bool drop = false;
  std::optional<std::string> expand_via;  ///< key into FeatureSchema::mapping_files
};

struct FeatureSchema {
  std::string suite;
  std::vector<FeatureSpec> features;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> mapping_files;  ///< key -> path, relative to base_dir
  std::filesystem::path base_dir;
};

/// Feature after trimming and expansion.
struct ResolvedFeature {
  std::string name;
  FeatureKind kind = FeatureKind::Numeric;
  Group group = Group::Other;

  bool operator==(const ResolvedFeature&) const = default;
};

/// Concrete column layout seen by the model.
struct FeatureLayout {
  std::string suite;
  std::vector<ResolvedFeature> features;
  std::vector<std::string> outputs;

  std::size_t numeric_count() const {
    return static_cast<std::size_t>(std::count_if(features.begin(), features.end(), [](const auto& f) {
      return f.kind == FeatureKind::Numeric;
    }));
  }
  std::size_t categorical_count() const { return features.size() - numeric_count(); }

  bool operator==(const FeatureLayout&) const = default;
};

/// Per-key replacement columns for an expanded feature.
struct FeatureMapping {
  std::vector<std::string> columns;
  std::map<std::string, std::vector<double>> entries;
};

// ---------------------------------------------------------------------------
// Schema and mapping files
// ---------------------------------------------------------------------------

inline FeatureKind parse_kind(const std::string& text) {
  if (text == "numeric") return FeatureKind::Numeric;
  if (text == "categorical") return FeatureKind::Categorical;
  throw SchemaError("unknown feature kind '" + text + "'");
}

inline void validate_schema(const FeatureSchema& schema) {
  std::map<std::string, int> seen;
  for (const auto& f : schema.features) {
    if (f.name.empty()) throw SchemaError("feature with empty name");
    if (++seen[f.name] > 1) throw SchemaError("duplicate feature name '" + f.name + "'");
    if (f.expand_via && !schema.mapping_files.contains(*f.expand_via)) {
      throw SchemaError("feature '" + f.name + "' expands via unknown mapping '" + *f.expand_via + "'");
    }
  }
  for (const auto& o : schema.outputs) {
    if (++seen[o] > 1) throw SchemaError("output '" + o + "' duplicates another column");
  }
  if (schema.outputs.empty()) throw SchemaError("schema declares no outputs");
  if (std::none_of(schema.features.begin(), schema.features.end(), [](const auto& f) { return !f.drop; })) {
    throw SchemaError("schema retains no features");
  }
}

inline FeatureSchema schema_from_json(const Json& j, std::filesystem::path base_dir = {}) {
  FeatureSchema schema;
  try {
    schema.suite = j.value("suite", std::string{});
    for (const auto& jf : j.at("features")) {
      FeatureSpec f;
      f.name = jf.at("name").get<std::string>();
      f.kind = parse_kind(jf.value("kind", std::string{"numeric"}));
      const auto group_text = jf.value("group", std::string{"Other"});
      const auto group = parse_group(group_text);
      if (!group) throw SchemaError("feature '" + f.name + "' has unknown group '" + group_text + "'");
      f.group = *group;
      f.drop = jf.value("drop", false);
      if (jf.contains("expand_via") && !jf.at("expand_via").is_null()) {
        f.expand_via = jf.at("expand_via").get<std::string>();
      }
      schema.features.push_back(std::move(f));
    }
    schema.outputs = j.at("outputs").get<std::vector<std::string>>();
    if (j.contains("mapping_files")) {
      schema.mapping_files = j.at("mapping_files").get<std::map<std::string, std::string>>();
    }
  } catch (const Json::exception& e) {
    throw SchemaError(std::string("malformed schema: ") + e.what());
  }
  schema.base_dir = std::move(base_dir);
  validate_schema(schema);
  return schema;
}

inline Json schema_to_json(const FeatureSchema& schema) {
  Json features = Json::array();
  for (const auto& f : schema.features) {
    Json jf{{"name", f.name},
            {"kind", std::string(kind_name(f.kind))},
            {"group", std::string(group_name(f.group))}};
    if (f.drop) jf["drop"] = true;
    if (f.expand_via) jf["expand_via"] = *f.expand_via;
    features.push_back(std::move(jf));
  }
  Json j{{"suite", schema.suite}, {"features", features}, {"outputs", schema.outputs}};
  if (!schema.mapping_files.empty()) j["mapping_files"] = schema.mapping_files;
  return j;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot write " + path.string());
  out << text;
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

inline FeatureSchema load_schema(const std::filesystem::path& path) {
  return schema_from_json(read_json_file(path), path.parent_path());
}

/// Mapping file: {key: {column: value, ...}, ...}. Every entry must carry the
/// same columns.
inline FeatureMapping mapping_from_json(const Json& j, const std::string& label) {
  FeatureMapping m;
  if (!j.is_object() || j.empty()) throw SchemaError("mapping '" + label + "' must be a non-empty object");
  for (const auto& [key, cols] : j.items()) {
    if (!cols.is_object()) throw SchemaError("mapping '" + label + "' entry '" + key + "' is not an object");
    std::vector<std::string> names;
    for (const auto& [c, _] : cols.items()) names.push_back(c);
    std::sort(names.begin(), names.end());
    if (m.columns.empty()) {
      m.columns = names;
    } else if (names != m.columns) {
      throw SchemaError("mapping '" + label + "' entry '" + key + "' has a different column set");
    }
    std::vector<double> values;
    for (const auto& c : names) {
      if (!cols.at(c).is_number()) {
        throw SchemaError("mapping '" + label + "' entry '" + key + "' column '" + c + "' is not numeric");
      }
      values.push_back(cols.at(c).get<double>());
    }
    m.entries.emplace(key, std::move(values));
  }
  return m;
}

inline std::map<std::string, FeatureMapping> load_mappings(const FeatureSchema& schema) {
  std::map<std::string, FeatureMapping> out;
  for (const auto& [key, file] : schema.mapping_files) {
    std::filesystem::path p(file);
    if (p.is_relative()) p = schema.base_dir / p;
    out.emplace(key, mapping_from_json(read_json_file(p), key));
  }
  return out;
}

/// Drops trimmed features and replaces expanded ones with their mapped
/// columns, named "<feature>.<column>" and kept in the source feature's group.
inline FeatureLayout resolve_layout(const FeatureSchema& schema,
                                    const std::map<std::string, FeatureMapping>& mappings) {
  FeatureLayout layout;
  layout.suite = schema.suite;
  layout.outputs = schema.outputs;
  for (const auto& f : schema.features) {
    if (f.drop) continue;
    if (f.expand_via) {
      const auto it = mappings.find(*f.expand_via);
      if (it == mappings.end()) throw SchemaError("mapping '" + *f.expand_via + "' was not loaded");
      for (const auto& c : it->second.columns) {
        layout.features.push_back({f.name + "." + c, FeatureKind::Numeric, f.group});
      }
    } else {
      layout.features.push_back({f.name, f.kind, f.group});
    }
  }
  return layout;
}

inline Json layout_to_json(const FeatureLayout& layout) {
  FeatureSchema s;
  s.suite = layout.suite;
  s.outputs = layout.outputs;
  for (const auto& f : layout.features) s.features.push_back({f.name, f.kind, f.group, false, std::nullopt});
  return schema_to_json(s);
}

inline FeatureLayout layout_from_json(const Json& j) {
  const FeatureSchema s = schema_from_json(j);
  if (!s.mapping_files.empty()) throw SchemaError("a resolved layout cannot reference mapping files");
  return resolve_layout(s, {});
}

/// FNV-1a over a canonical rendering of the layout.
inline std::string layout_hash(const FeatureLayout& layout) {
  std::string canon = "suite=" + layout.suite + "\n";
  for (const auto& f : layout.features) {
    canon += "f:" + f.name + "|" + std::string(kind_name(f.kind)) + "|" + std::string(group_name(f.group)) + "\n";
  }
  for (const auto& o : layout.outputs) canon += "o:" + o + "\n";
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : canon) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

namespace csv {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

/// Splits one record; quoted fields may contain commas and doubled quotes.
inline std::vector<std::string> split_record(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

inline std::optional<double> parse_number(const std::string& text) {
  if (text.empty()) return std::nullopt;
  const char* begin = text.data();
  if (*begin == '+') ++begin;
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(begin, text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

/// Shortest text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out.push_back('"');
    out.push_back(ch);
  }
  out.push_back('"');
  return out;
}

}  // namespace csv

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

struct RawSample {
  std::vector<double> numeric;           ///< numeric features in layout order
  std::vector<std::string> categorical;  ///< categorical features in layout order
  std::vector<double> targets;
  std::size_t row = 0;                   ///< 1-based data row in the source file
};

struct Dataset {
  FeatureLayout layout;
  std::vector<RawSample> samples;
  std::string source;

  std::size_t size() const { return samples.size(); }
};

inline Dataset subset(const Dataset& d, const std::vector<std::size_t>& indices) {
  Dataset out{d.layout, {}, d.source};
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(d.samples.at(i));
  return out;
}

inline Dataset concat(const Dataset& a, const Dataset& b) {
  if (!(a.layout == b.layout)) throw SchemaError("cannot concatenate datasets with different layouts");
  Dataset out = a;
  out.samples.insert(out.samples.end(), b.samples.begin(), b.samples.end());
  return out;
}

/// Reads CSV text. Column order is free and unknown columns are ignored.
inline Dataset load_csv(std::istream& in, const FeatureSchema& schema,
                        const std::map<std::string, FeatureMapping>& mappings,
                        const std::string& source = "<stream>") {
  validate_schema(schema);
  Dataset d;
  d.layout = resolve_layout(schema, mappings);
  d.source = source;

  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": empty file");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = csv::split_record(line);
  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < header.size(); ++i) column.emplace(header[i], i);
  auto find = [&](const std::string& name) {
    const auto it = column.find(name);
    if (it == column.end()) throw SchemaError(source + ": missing column '" + name + "'");
    return it->second;
  };

  struct Plan {
    std::size_t col;
    FeatureKind kind;
    const FeatureMapping* mapping;
    std::string name;
  };
  std::vector<Plan> plan;
  for (const auto& f : schema.features) {
    if (f.drop) continue;
    const FeatureMapping* m = nullptr;
    if (f.expand_via) m = &mappings.at(*f.expand_via);
    plan.push_back({find(f.name), f.kind, m, f.name});
  }
  std::vector<std::size_t> output_cols;
  for (const auto& o : schema.outputs) output_cols.push_back(find(o));

  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (csv::trim(line).empty()) continue;
    ++row;
    const auto fields = csv::split_record(line);
    if (fields.size() != header.size()) {
      throw DataError(source + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
                      " fields, header has " + std::to_string(header.size()));
    }
    auto number = [&](std::size_t col, const std::string& name) {
      const auto v = csv::parse_number(fields[col]);
      if (!v) {
        throw DataError(source + ": row " + std::to_string(row) + ": column '" + name +
                        "': cannot parse '" + fields[col] + "' as a number");
      }
      return *v;
    };
    RawSample s;
    s.row = row;
    for (const auto& p : plan) {
      if (p.mapping) {
        const auto it = p.mapping->entries.find(fields[p.col]);
        if (it == p.mapping->entries.end()) {
          throw DataError(source + ": row " + std::to_string(row) + ": column '" + p.name +
                          "': no mapping entry for '" + fields[p.col] + "'");
        }
        s.numeric.insert(s.numeric.end(), it->second.begin(), it->second.end());
      } else if (p.kind == FeatureKind::Numeric) {
        s.numeric.push_back(number(p.col, p.name));
      } else {
        s.categorical.push_back(fields[p.col]);
      }
    }
    for (std::size_t j = 0; j < output_cols.size(); ++j) s.targets.push_back(number(output_cols[j], schema.outputs[j]));
    d.samples.push_back(std::move(s));
  }
  return d;
}

inline Dataset load_csv(const std::filesystem::path& path, const FeatureSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return load_csv(in, schema, load_mappings(schema), path.string());
}

/// Loads a CSV written by write_csv against its resolved layout.
inline Dataset load_csv(const std::filesystem::path& path, const FeatureLayout& layout) {
  FeatureSchema s = schema_from_json(layout_to_json(layout));
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  return load_csv(in, s, {}, path.string());
}

/// Writes the dataset in its resolved layout: features then outputs.
inline std::string to_csv(const Dataset& d) {
  std::string out;
  bool first = true;
  auto cell = [&](const std::string& s) {
    if (!first) out.push_back(',');
    out += s;
    first = false;
  };
  for (const auto& f : d.layout.features) cell(csv::quote(f.name));
  for (const auto& o : d.layout.outputs) cell(csv::quote(o));
  out.push_back('\n');
  for (const auto& s : d.samples) {
    first = true;
    std::size_t ni = 0, ci = 0;
    for (const auto& f : d.layout.features) {
      if (f.kind == FeatureKind::Numeric) {
        cell(csv::format_number(s.numeric[ni++]));
      } else {
        cell(csv::quote(s.categorical[ci++]));
      }
    }
    for (double t : s.targets) cell(csv::format_number(t));
    out.push_back('\n');
  }
  return out;
}

inline void write_csv(const Dataset& d, const std::filesystem::path& path) { write_text_file(path, to_csv(d)); }

// ---------------------------------------------------------------------------
// Outlier cleaning
// ---------------------------------------------------------------------------

struct RemovedRow {
  std::size_t row = 0;     ///< source row of the removed sample
  std::string output;      ///< first output column that flagged it
  double z = 0.0;
};

struct CleanResult {
  Dataset dataset;
  std::vector<RemovedRow> removed;
  std::vector<std::string> warnings;
};

/// Population mean and standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mu) * (x - mu);
  return {mu, std::sqrt(ss / static_cast<double>(v.size()))};
}

/// Single pass: a sample is removed when |z| > threshold on any output, with
/// μ and σ computed per output over the input dataset. Zero-variance outputs
/// are skipped with a warning.
inline CleanResult clean_outliers(const Dataset& d, double threshold = 3.0) {
  CleanResult result;
  result.dataset.layout = d.layout;
  result.dataset.source = d.source;
  const std::size_t outputs = d.layout.outputs.size();
  std::vector<double> mu(outputs), sigma(outputs);
  for (std::size_t j = 0; j < outputs; ++j) {
    std::vector<double> col;
    col.reserve(d.size());
    for (const auto& s : d.samples) col.push_back(s.targets[j]);
    std::tie(mu[j], sigma[j]) = mean_std(col);
    if (!(sigma[j] > 0.0)) {
      result.warnings.push_back("output '" + d.layout.outputs[j] + "' has zero variance; skipped");
    }
  }
  for (const auto& s : d.samples) {
    std::optional<RemovedRow> flag;
    for (std::size_t j = 0; j < outputs && !flag; ++j) {
      if (!(sigma[j] > 0.0)) continue;
      const double z = (s.targets[j] - mu[j]) / sigma[j];
      if (std::abs(z) > threshold) flag = RemovedRow{s.row, d.layout.outputs[j], z};
    }
    if (flag) {
      result.removed.push_back(*flag);
    } else {
      result.dataset.samples.push_back(s);
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Normalization and tokenization
// ---------------------------------------------------------------------------

struct NormStats {
  std::vector<double> feature_mean, feature_std;  ///< retained numeric features
  std::vector<double> target_mean, target_std;
};

/// Token ids per categorical feature; id 0 is reserved for unknown tokens.
struct Vocabulary {
  std::vector<std::map<std::string, std::size_t>> tokens;

  static constexpr std::size_t kUnknown = 0;

  std::size_t size(std::size_t feature) const { return tokens.at(feature).size() + 1; }

  std::size_t lookup(std::size_t feature, const std::string& token) const {
    const auto& m = tokens.at(feature);
    const auto it = m.find(token);
    return it == m.end() ? kUnknown : it->second;
  }
};

/// Everything fitted on a training fold.
struct Transform {
  FeatureLayout input_layout;   ///< layout of the raw dataset
  FeatureLayout model_layout;   ///< after dropping zero-variance numeric features
  std::vector<std::size_t> kept_numeric;  ///< indices into the raw numeric vector
  NormStats stats;
  Vocabulary vocab;
  std::vector<std::string> trimmed;       ///< names of removed features

  std::vector<std::size_t> vocab_sizes() const {
    std::vector<std::size_t> v;
    for (std::size_t f = 0; f < vocab.tokens.size(); ++f) v.push_back(vocab.size(f));
    return v;
  }

  double destandardize(std::size_t output, double value) const {
    return value * stats.target_std[output] + stats.target_mean[output];
  }
  double standardize(std::size_t output, double value) const {
    return (value - stats.target_mean[output]) / stats.target_std[output];
  }
};

struct EncodedSample {
  std::vector<double> numeric;      ///< z-scored, in model layout order
  std::vector<std::size_t> tokens;  ///< vocabulary ids
  std::vector<double> targets;      ///< standardized
  std::vector<double> raw_targets;  ///< original units
  std::size_t row = 0;
};

struct EncodedDataset {
  FeatureLayout layout;
  std::vector<EncodedSample> samples;

  std::size_t size() const { return samples.size(); }
};

inline Transform fit(const Dataset& train) {
  if (train.samples.empty()) throw DataError("cannot fit a transform on an empty dataset");
  Transform t;
  t.input_layout = train.layout;
  t.model_layout.suite = train.layout.suite;
  t.model_layout.outputs = train.layout.outputs;

  std::size_t ni = 0, ci = 0;
  for (const auto& f : train.layout.features) {
    if (f.kind == FeatureKind::Numeric) {
      std::vector<double> col;
      for (const auto& s : train.samples) col.push_back(s.numeric[ni]);
      const auto [mu, sigma] = mean_std(col);
      if (sigma > 0.0) {
        t.kept_numeric.push_back(ni);
        t.stats.feature_mean.push_back(mu);
        t.stats.feature_std.push_back(sigma);
        t.model_layout.features.push_back(f);
      } else {
        t.trimmed.push_back(f.name);
      }
      ++ni;
    } else {
      std::map<std::string, std::size_t> ids;
      for (const auto& s : train.samples) ids.emplace(s.categorical[ci], 0);
      std::size_t next = 1;
      for (auto& [_, id] : ids) id = next++;
      t.vocab.tokens.push_back(std::move(ids));
      t.model_layout.features.push_back(f);
      ++ci;
    }
  }
  if (t.model_layout.features.empty()) throw DataError("every feature has zero variance on the training fold");
  for (std::size_t j = 0; j < train.layout.outputs.size(); ++j) {
    std::vector<double> col;
    for (const auto& s : train.samples) col.push_back(s.targets[j]);
    const auto [mu, sigma] = mean_std(col);
    t.stats.target_mean.push_back(mu);
    t.stats.target_std.push_back(sigma > 0.0 ? sigma : 1.0);
  }
  return t;
}

/// Encodes any dataset with statistics fitted elsewhere. Unseen categories map
/// to the unknown id.
inline EncodedDataset apply_transform(const Transform& t, const Dataset& d) {
  if (!(d.layout == t.input_layout)) throw SchemaError("dataset layout does not match the fitted transform");
  EncodedDataset out;
  out.layout = t.model_layout;
  out.samples.reserve(d.size());
  for (const auto& s : d.samples) {
    EncodedSample e;
    e.row = s.row;
    for (std::size_t k = 0; k < t.kept_numeric.size(); ++k) {
      e.numeric.push_back((s.numeric[t.kept_numeric[k]] - t.stats.feature_mean[k]) / t.stats.feature_std[k]);
    }
    for (std::size_t f = 0; f < s.categorical.size(); ++f) e.tokens.push_back(t.vocab.lookup(f, s.categorical[f]));
    e.raw_targets = s.targets;
    for (std::size_t j = 0; j < s.targets.size(); ++j) e.targets.push_back(t.standardize(j, s.targets[j]));
    out.samples.push_back(std::move(e));
  }
  return out;
}

inline std::pair<Transform, EncodedDataset> fit_transform(const Dataset& train) {
  Transform t = fit(train);
  EncodedDataset e = apply_transform(t, train);
  return {std::move(t), std::move(e)};
}

inline Json transform_to_json(const Transform& t) {
  Json vocab = Json::array();
  for (const auto& m : t.vocab.tokens) vocab.push_back(m);
  return Json{{"input_layout", layout_to_json(t.input_layout)},
              {"model_layout", layout_to_json(t.model_layout)},
              {"kept_numeric", t.kept_numeric},
              {"trimmed", t.trimmed},
              {"feature_mean", t.stats.feature_mean},
              {"feature_std", t.stats.feature_std},
              {"target_mean", t.stats.target_mean},
              {"target_std", t.stats.target_std},
              {"vocabulary", vocab}};
}

inline Transform transform_from_json(const Json& j) {
  Transform t;
  try {
    t.input_layout = layout_from_json(j.at("input_layout"));
    t.model_layout = layout_from_json(j.at("model_layout"));
    t.kept_numeric = j.at("kept_numeric").get<std::vector<std::size_t>>();
    t.trimmed = j.at("trimmed").get<std::vector<std::string>>();
    t.stats.feature_mean = j.at("feature_mean").get<std::vector<double>>();
    t.stats.feature_std = j.at("feature_std").get<std::vector<double>>();
    t.stats.target_mean = j.at("target_mean").get<std::vector<double>>();
    t.stats.target_std = j.at("target_std").get<std::vector<double>>();
    for (const auto& m : j.at("vocabulary")) t.vocab.tokens.push_back(m.get<std::map<std::string, std::size_t>>());
  } catch (const Json::exception& e) {
    throw ParseError(std::string("malformed transform: ") + e.what());
  }
  return t;
}

inline Json encoded_to_json(const EncodedDataset& d) {
  Json rows = Json::array();
  for (const auto& s : d.samples) {
    rows.push_back(Json{{"row", s.row},
                        {"numeric", s.numeric},
                        {"tokens", s.tokens},
                        {"targets", s.targets},
                        {"raw_targets", s.raw_targets}});
  }
  return Json{{"layout", layout_to_json(d.layout)}, {"samples", rows}};
}

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitResult {
  Dataset train, validation, test;
};

struct SplitSizes {
  std::size_t train = 0, validation = 0, test = 0;
};

/// Test takes floor(20%) of all samples, validation floor(20%) of the rest,
/// training keeps the remainder.
inline SplitSizes split_sizes(std::size_t n) {
  SplitSizes s;
  s.test = n / 5;
  s.validation = (n - s.test) / 5;
  s.train = n - s.test - s.validation;
  return s;
}

inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  rng.shuffle(idx);
  return idx;
}

inline SplitResult split(const Dataset& d, std::uint64_t seed) {
  if (d.size() < 3) throw DataError("dataset of " + std::to_string(d.size()) + " samples is too small to split");
  const SplitSizes sizes = split_sizes(d.size());
  const auto idx = shuffled_indices(d.size(), seed);
  const auto take = [&](std::size_t begin, std::size_t count) {
    return subset(d, std::vector<std::size_t>(idx.begin() + static_cast<std::ptrdiff_t>(begin),
                                              idx.begin() + static_cast<std::ptrdiff_t>(begin + count)));
  };
  SplitResult r;
  r.train = take(0, sizes.train);
  r.validation = take(sizes.train, sizes.validation);
  r.test = take(sizes.train + sizes.validation, sizes.test);
  return r;
}

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
};

/// k disjoint validation folds covering every sample once; the first n mod k
/// folds hold one extra sample.
inline std::vector<Fold> kfold(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ContractError("kfold: k must be at least 2");
  if (n < k) throw DataError("kfold: " + std::to_string(n) + " samples cannot form " + std::to_string(k) + " folds");
  const auto idx = shuffled_indices(n, seed);
  std::vector<Fold> folds(k);
  std::size_t begin = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t count = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= begin && i < begin + count) {
        folds[f].validation.push_back(idx[i]);
      } else {
        folds[f].train.push_back(idx[i]);
      }
    }
    begin += count;
  }
  return folds;
}

}  // namespace mac
