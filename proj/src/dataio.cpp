#include "tasfar/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace tasfar {

namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

bool parse_number(const std::string& s, Scalar& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && std::isfinite(out);
}

Index column_index(const std::vector<std::string>& header, const std::string& name) {
  const auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) {
    throw DataError("column '" + name + "' not present in the CSV header");
  }
  return static_cast<Index>(it - header.begin());
}

Vector projection_weights(const Vector& params, int dim) {
  if (params.size() < dim) throw ConfigError("true-function parameters shorter than feature_dim");
  return params.head(dim);
}

const char* family_name(TrueFunction f) {
  switch (f) {
    case TrueFunction::Linear: return "linear";
    case TrueFunction::Piecewise: return "piecewise";
    case TrueFunction::Sinusoidal: return "sinusoidal";
  }
  return "linear";
}

TrueFunction family_from_name(const std::string& s) {
  if (s == "linear") return TrueFunction::Linear;
  if (s == "piecewise") return TrueFunction::Piecewise;
  if (s == "sinusoidal") return TrueFunction::Sinusoidal;
  throw ConfigError("unknown true-function family: " + s);
}

nlohmann::json component_to_json(const SamplerComponent& c) {
  nlohmann::json j;
  j["weight"] = c.weight;
  j["mean"] = std::vector<Scalar>(c.mean.data(), c.mean.data() + c.mean.size());
  j["scale"] = std::vector<Scalar>(c.scale.data(), c.scale.data() + c.scale.size());
  if (std::isfinite(c.projection_cap)) j["projection_cap"] = c.projection_cap;
  else j["projection_cap"] = nullptr;
  return j;
}

SamplerComponent component_from_json(const nlohmann::json& j) {
  SamplerComponent c;
  c.weight = j.at("weight").get<Scalar>();
  const auto mean = j.at("mean").get<std::vector<Scalar>>();
  const auto scale = j.at("scale").get<std::vector<Scalar>>();
  c.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Index>(mean.size()));
  c.scale = Eigen::Map<const Vector>(scale.data(), static_cast<Index>(scale.size()));
  if (j.contains("projection_cap") && !j.at("projection_cap").is_null()) {
    c.projection_cap = j.at("projection_cap").get<Scalar>();
  }
  return c;
}

void check_components(const std::vector<SamplerComponent>& comps, int dim, const char* side) {
  if (comps.empty()) throw ConfigError(std::string(side) + " sampler needs at least one component");
  for (const SamplerComponent& c : comps) {
    if (c.mean.size() != dim || c.scale.size() != dim) {
      throw ConfigError(std::string(side) + " sampler component dimension mismatch");
    }
    if (!(c.weight > 0)) throw ConfigError("sampler component weights must be positive");
    if ((c.scale.array() <= 0).any()) throw ConfigError("sampler scales must be positive");
  }
}

// One input draw from a mixture component, honoring its projection cap.
Vector draw_input(const SamplerComponent& comp, const Vector& w, Rng& rng,
                  std::normal_distribution<Scalar>& normal) {
  for (int attempt = 0; attempt < 100000; ++attempt) {
    Vector x(comp.mean.size());
    for (Index d = 0; d < x.size(); ++d) x[d] = comp.mean[d] + comp.scale[d] * normal(rng);
    if (!std::isfinite(comp.projection_cap) || w.dot(x) < comp.projection_cap) return x;
  }
  throw ConfigError("projection cap rejects practically every draw");
}

const SamplerComponent& pick_component(const std::vector<SamplerComponent>& comps, Rng& rng,
                                       std::uniform_real_distribution<Scalar>& unit) {
  if (comps.size() == 1) return comps.front();
  Scalar total = 0;
  for (const SamplerComponent& c : comps) total += c.weight;
  Scalar r = unit(rng) * total;
  for (const SamplerComponent& c : comps) {
    r -= c.weight;
    if (r <= 0) return c;
  }
  return comps.back();
}

}  // namespace

FeatureTransform FeatureTransform::identity(Index dim) {
  FeatureTransform t;
  t.mean = Vector::Zero(dim);
  t.stdev = Vector::Ones(dim);
  t.zero_variance.assign(static_cast<std::size_t>(dim), false);
  return t;
}

Matrix FeatureTransform::apply(const Eigen::Ref<const Matrix>& raw) const {
  if (raw.cols() != mean.size()) throw ShapeError("transform width does not match the data");
  return (raw.rowwise() - mean.transpose()).array().rowwise() / stdev.transpose().array();
}

Matrix FeatureTransform::invert(const Eigen::Ref<const Matrix>& standardized) const {
  if (standardized.cols() != mean.size()) throw ShapeError("transform width does not match the data");
  return (standardized.array().rowwise() * stdev.transpose().array()).rowwise() +
         mean.transpose().array();
}

Scalar FeatureTransform::raw_value(Index column, Scalar standardized) const {
  return standardized * stdev[column] + mean[column];
}

Scalar FeatureTransform::standardized_value(Index column, Scalar raw) const {
  return (raw - mean[column]) / stdev[column];
}

Scalar true_function_value(TrueFunction family, const Eigen::Ref<const Vector>& params,
                           const Eigen::Ref<const Vector>& x) {
  const Index d = x.size();
  switch (family) {
    case TrueFunction::Linear: {
      if (params.size() != d + 1) throw ConfigError("linear family expects d+1 parameters");
      return params.head(d).dot(x) + params[d];
    }
    case TrueFunction::Piecewise: {
      if (params.size() != d + 3) throw ConfigError("piecewise family expects d+3 parameters");
      const Scalar t = params.head(d).dot(x);
      const Scalar b = params[d], knee = params[d + 1], post = params[d + 2];
      return b + std::min(t, knee) + post * std::max(t - knee, Scalar(0));
    }
    case TrueFunction::Sinusoidal: {
      if (params.size() != d + 3) throw ConfigError("sinusoidal family expects d+3 parameters");
      const Scalar t = params.head(d).dot(x);
      const Scalar b = params[d], amplitude = params[d + 1], freq = params[d + 2];
      return b + amplitude * std::sin(freq * t);
    }
  }
  throw ConfigError("unknown true-function family");
}

std::pair<Dataset, Dataset> gen_scenario(const ScenarioSpec& spec) {
  if (spec.feature_dim < 1) throw ConfigError("feature_dim must be positive");
  if (spec.source_count < 1 || spec.target_count < 1) throw ConfigError("counts must be positive");
  if (spec.noise_scale < 0) throw ConfigError("noise_scale must be non-negative");
  check_components(spec.source_components, spec.feature_dim, "source");
  check_components(spec.target_components, spec.feature_dim, "target");
  const Vector w = projection_weights(spec.params, spec.feature_dim);

  Rng rng(spec.seed);
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  std::uniform_real_distribution<Scalar> unit(0.0, 1.0);

  auto make_dataset = [&](long count, const std::vector<SamplerComponent>& comps,
                          const LabelMode* mode, const std::string& tag) {
    Dataset ds;
    ds.tag = tag;
    ds.features.resize(count, spec.feature_dim);
    Matrix labels(count, 1);
    const long max_tries = 1000 * count + 100000;
    long tries = 0;
    for (long i = 0; i < count;) {
      if (++tries > max_tries) {
        throw ConfigError("target label mode rejects practically every draw");
      }
      const SamplerComponent& comp = pick_component(comps, rng, unit);
      const Vector x = draw_input(comp, w, rng, normal);
      Scalar y = true_function_value(spec.family, spec.params, x);
      if (spec.noise_scale > 0) y += spec.noise_scale * normal(rng);
      if (mode && mode->active()) {
        const bool in_mode = std::abs(y - mode->center) <= mode->halfwidth;
        if (!in_mode && !(unit(rng) < mode->leak_prob)) continue;
      }
      ds.features.row(i) = x.transpose();
      labels(i, 0) = y;
      ++i;
    }
    ds.labels = labels;
    ds.label_names = {"y"};
    for (int d = 0; d < spec.feature_dim; ++d) ds.feature_names.push_back("x" + std::to_string(d));
    ds.transform = FeatureTransform::identity(spec.feature_dim);
    return ds;
  };

  Dataset source = make_dataset(spec.source_count, spec.source_components, nullptr, "source");
  Dataset target =
      make_dataset(spec.target_count, spec.target_components, &spec.target_label_mode, "target");
  return {std::move(source), std::move(target)};
}

nlohmann::json scenario_to_json(const ScenarioSpec& spec) {
  nlohmann::json j;
  j["feature_dim"] = spec.feature_dim;
  j["family"] = family_name(spec.family);
  j["params"] = std::vector<Scalar>(spec.params.data(), spec.params.data() + spec.params.size());
  j["source_components"] = nlohmann::json::array();
  for (const auto& c : spec.source_components) j["source_components"].push_back(component_to_json(c));
  j["target_components"] = nlohmann::json::array();
  for (const auto& c : spec.target_components) j["target_components"].push_back(component_to_json(c));
  j["target_label_mode"] = {{"center", spec.target_label_mode.center},
                            {"halfwidth", spec.target_label_mode.halfwidth},
                            {"leak_prob", spec.target_label_mode.leak_prob}};
  j["noise_scale"] = spec.noise_scale;
  j["source_count"] = spec.source_count;
  j["target_count"] = spec.target_count;
  j["seed"] = spec.seed;
  return j;
}

ScenarioSpec scenario_from_json(const nlohmann::json& j) {
  ScenarioSpec spec;
  spec.feature_dim = j.at("feature_dim").get<int>();
  spec.family = family_from_name(j.at("family").get<std::string>());
  const auto params = j.at("params").get<std::vector<Scalar>>();
  spec.params = Eigen::Map<const Vector>(params.data(), static_cast<Index>(params.size()));
  for (const auto& c : j.at("source_components")) {
    spec.source_components.push_back(component_from_json(c));
  }
  for (const auto& c : j.at("target_components")) {
    spec.target_components.push_back(component_from_json(c));
  }
  const auto& mode = j.at("target_label_mode");
  spec.target_label_mode.center = mode.at("center").get<Scalar>();
  spec.target_label_mode.halfwidth = mode.at("halfwidth").get<Scalar>();
  spec.target_label_mode.leak_prob = mode.at("leak_prob").get<Scalar>();
  spec.noise_scale = j.at("noise_scale").get<Scalar>();
  spec.source_count = j.at("source_count").get<long>();
  spec.target_count = j.at("target_count").get<long>();
  spec.seed = j.at("seed").get<std::uint64_t>();
  return spec;
}

namespace {

struct RawCsv {
  std::vector<std::string> header;
  std::vector<std::vector<Scalar>> rows;  // selected columns only
  long dropped = 0;
};

RawCsv read_columns(const std::string& path, const std::vector<Index>& wanted) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV file: " + path);
  RawCsv csv;
  std::string line;
  if (!std::getline(in, line)) throw DataError("empty CSV file: " + path);
  csv.header = split_line(line);
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_line(line);
    std::vector<Scalar> row(wanted.size());
    bool ok = fields.size() >= csv.header.size();
    for (std::size_t k = 0; ok && k < wanted.size(); ++k) {
      ok = parse_number(fields[static_cast<std::size_t>(wanted[k])], row[k]);
    }
    if (ok) csv.rows.push_back(std::move(row));
    else ++csv.dropped;
  }
  return csv;
}

Dataset load_csv_impl(const std::string& path, const std::vector<std::string>& label_columns,
                      const std::vector<std::string>& feature_columns,
                      const FeatureTransform* transform) {
  if (feature_columns.empty()) throw ConfigError("at least one feature column is required");
  std::ifstream probe(path);
  if (!probe) throw DataError("cannot open CSV file: " + path);
  std::string header_line;
  if (!std::getline(probe, header_line)) throw DataError("empty CSV file: " + path);
  const std::vector<std::string> header = split_line(header_line);
  probe.close();

  std::vector<Index> wanted;
  for (const auto& name : feature_columns) wanted.push_back(column_index(header, name));
  for (const auto& name : label_columns) wanted.push_back(column_index(header, name));

  RawCsv csv = read_columns(path, wanted);
  if (csv.rows.empty()) throw DataError("no usable rows in CSV file: " + path);

  const auto n = static_cast<Index>(csv.rows.size());
  const auto fdim = static_cast<Index>(feature_columns.size());
  const auto ldim = static_cast<Index>(label_columns.size());

  Dataset ds;
  ds.feature_names = feature_columns;
  ds.label_names = label_columns;
  ds.dropped_rows = csv.dropped;
  ds.features.resize(n, fdim);
  Matrix labels(n, ldim);
  for (Index i = 0; i < n; ++i) {
    for (Index c = 0; c < fdim; ++c) ds.features(i, c) = csv.rows[i][static_cast<std::size_t>(c)];
    for (Index c = 0; c < ldim; ++c) {
      labels(i, c) = csv.rows[i][static_cast<std::size_t>(fdim + c)];
    }
  }
  if (ldim > 0) ds.labels = labels;

  if (transform) {
    ds.transform = *transform;
  } else {
    ds.transform.mean = ds.features.colwise().mean();
    ds.transform.stdev.resize(fdim);
    ds.transform.zero_variance.assign(static_cast<std::size_t>(fdim), false);
    for (Index c = 0; c < fdim; ++c) {
      Scalar var = 0;
      if (n > 1) {
        var = (ds.features.col(c).array() - ds.transform.mean[c]).square().sum() /
              static_cast<Scalar>(n - 1);
      }
      if (var <= 0) {
        ds.transform.zero_variance[static_cast<std::size_t>(c)] = true;
        ds.transform.stdev[c] = 1.0;
      } else {
        ds.transform.stdev[c] = std::sqrt(var);
      }
    }
  }
  ds.features = ds.transform.apply(ds.features);
  return ds;
}

}  // namespace

Dataset load_csv(const std::string& path, const std::vector<std::string>& label_columns,
                 const std::vector<std::string>& feature_columns) {
  return load_csv_impl(path, label_columns, feature_columns, nullptr);
}

Dataset load_csv(const std::string& path, const std::vector<std::string>& label_columns,
                 const std::vector<std::string>& feature_columns,
                 const FeatureTransform& transform) {
  return load_csv_impl(path, label_columns, feature_columns, &transform);
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open CSV file for writing: " + path);
  for (std::size_t i = 0; i < data.feature_names.size(); ++i) {
    if (i) out << ',';
    out << data.feature_names[i];
  }
  for (const auto& name : data.label_names) out << ',' << name;
  out << '\n';
  const Matrix raw = data.transform.invert(data.features);
  char buf[32];
  for (Index i = 0; i < raw.rows(); ++i) {
    for (Index c = 0; c < raw.cols(); ++c) {
      if (c) out << ',';
      std::snprintf(buf, sizeof buf, "%.17g", raw(i, c));
      out << buf;
    }
    if (data.labels) {
      for (Index c = 0; c < data.labels->cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%.17g", (*data.labels)(i, c));
        out << ',' << buf;
      }
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing CSV file: " + path);
}

SplitRule::Op split_op_from_string(const std::string& name) {
  if (name == "lt") return SplitRule::Op::Lt;
  if (name == "le") return SplitRule::Op::Le;
  if (name == "gt") return SplitRule::Op::Gt;
  if (name == "ge") return SplitRule::Op::Ge;
  if (name == "eq") return SplitRule::Op::Eq;
  if (name == "ne") return SplitRule::Op::Ne;
  throw ConfigError("unknown split operator: " + name + " (use lt/le/gt/ge/eq/ne)");
}

std::pair<Dataset, Dataset> split_by_predicate(const Dataset& data, const SplitRule& rule) {
  // Locate the column among features (compared on raw values) or labels.
  Index feature_col = -1, label_col = -1;
  for (std::size_t i = 0; i < data.feature_names.size(); ++i) {
    if (data.feature_names[i] == rule.column) feature_col = static_cast<Index>(i);
  }
  for (std::size_t i = 0; i < data.label_names.size(); ++i) {
    if (data.label_names[i] == rule.column) label_col = static_cast<Index>(i);
  }
  if (feature_col < 0 && label_col < 0) {
    throw DataError("split column '" + rule.column + "' not present in the dataset");
  }

  const Index n = data.rows();
  std::vector<bool> to_target(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const Scalar v = feature_col >= 0
                         ? data.transform.raw_value(feature_col, data.features(i, feature_col))
                         : (*data.labels)(i, label_col);
    const Scalar tol = 1e-9 * std::max(Scalar(1), std::abs(rule.value));
    bool hit = false;
    switch (rule.op) {
      case SplitRule::Op::Lt: hit = v < rule.value; break;
      case SplitRule::Op::Le: hit = v <= rule.value; break;
      case SplitRule::Op::Gt: hit = v > rule.value; break;
      case SplitRule::Op::Ge: hit = v >= rule.value; break;
      case SplitRule::Op::Eq: hit = std::abs(v - rule.value) <= tol; break;
      case SplitRule::Op::Ne: hit = std::abs(v - rule.value) > tol; break;
    }
    to_target[static_cast<std::size_t>(i)] = hit;
  }

  const long target_n = std::count(to_target.begin(), to_target.end(), true);
  if (target_n == 0) throw DataError("split predicate matches no rows (target side empty)");
  if (target_n == n) throw DataError("split predicate matches every row (source side empty)");

  auto take = [&](bool hit) {
    Dataset part;
    part.feature_names = data.feature_names;
    part.label_names = data.label_names;
    part.transform = data.transform;
    part.tag = data.tag;
    const long rows = hit ? target_n : n - target_n;
    part.features.resize(rows, data.features.cols());
    Matrix labels;
    if (data.labels) labels.resize(rows, data.labels->cols());
    Index r = 0;
    for (Index i = 0; i < n; ++i) {
      if (to_target[static_cast<std::size_t>(i)] != hit) continue;
      part.features.row(r) = data.features.row(i);
      if (data.labels) labels.row(r) = data.labels->row(i);
      ++r;
    }
    if (data.labels) part.labels = labels;
    return part;
  };
  return {take(false), take(true)};
}

nlohmann::json transform_to_json(const FeatureTransform& t, const std::vector<std::string>& names) {
  nlohmann::json j;
  j["columns"] = names;
  j["mean"] = std::vector<Scalar>(t.mean.data(), t.mean.data() + t.mean.size());
  j["stdev"] = std::vector<Scalar>(t.stdev.data(), t.stdev.data() + t.stdev.size());
  j["zero_variance"] = t.zero_variance;
  return j;
}

FeatureTransform transform_from_json(const nlohmann::json& j,
                                     const std::vector<std::string>& names) {
  const auto cols = j.at("columns").get<std::vector<std::string>>();
  if (!names.empty() && cols != names) {
    throw DataError("feature transform columns do not match the requested features");
  }
  FeatureTransform t;
  const auto mean = j.at("mean").get<std::vector<Scalar>>();
  const auto stdev = j.at("stdev").get<std::vector<Scalar>>();
  t.mean = Eigen::Map<const Vector>(mean.data(), static_cast<Index>(mean.size()));
  t.stdev = Eigen::Map<const Vector>(stdev.data(), static_cast<Index>(stdev.size()));
  t.zero_variance = j.at("zero_variance").get<std::vector<bool>>();
  return t;
}

}  // namespace tasfar
