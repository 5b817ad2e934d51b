#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crl/csv.hpp"
#include "crl/process.hpp"

namespace crl {

struct ConfigParse : Error {
  using Error::Error;
};
struct ConfigInvalid : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Minimal TOML subset: [section] tables, key = value with strings, integers,
// floats, booleans, and single-line arrays of those. Unknown keys are the
// caller's problem by design; duplicates are parse errors.
// ---------------------------------------------------------------------------

struct TomlValue {
  enum class Kind { String, Integer, Float, Boolean, Array };
  Kind kind = Kind::Integer;
  std::string str;
  std::int64_t integer = 0;
  double number = 0.0;
  bool boolean = false;
  std::vector<TomlValue> array;

  double as_number() const { return kind == Kind::Integer ? static_cast<double>(integer) : number; }
};

struct TomlDoc {
  // section -> key -> value; insertion order preserved separately for messages.
  std::map<std::string, std::map<std::string, TomlValue>> sections;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

inline TomlValue parse_scalar(const std::string& raw, int line_no) {
  std::string s = trim(raw);
  if (s.empty()) throw ConfigParse("line " + std::to_string(line_no) + ": empty value");
  TomlValue v;
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"')
      throw ConfigParse("line " + std::to_string(line_no) + ": unterminated string");
    v.kind = TomlValue::Kind::String;
    std::string out;
    for (std::size_t i = 1; i + 1 < s.size(); ++i) {
      if (s[i] == '\\' && i + 2 < s.size() && (s[i + 1] == '"' || s[i + 1] == '\\')) {
        out += s[i + 1];
        ++i;
      } else {
        out += s[i];
      }
    }
    v.str = std::move(out);
    return v;
  }
  if (s == "true" || s == "false") {
    v.kind = TomlValue::Kind::Boolean;
    v.boolean = s == "true";
    return v;
  }
  bool integral = true;
  for (std::size_t i = 0; i < s.size(); ++i) {
    char c = s[i];
    if (i == 0 && (c == '+' || c == '-')) continue;
    if (!std::isdigit(static_cast<unsigned char>(c))) {
      integral = false;
      break;
    }
  }
  char* end = nullptr;
  if (integral) {
    v.kind = TomlValue::Kind::Integer;
    v.integer = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
      throw ConfigParse("line " + std::to_string(line_no) + ": bad integer '" + s + "'");
    return v;
  }
  v.kind = TomlValue::Kind::Float;
  v.number = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0' || !std::isfinite(v.number))
    throw ConfigParse("line " + std::to_string(line_no) + ": bad value '" + s + "'");
  return v;
}

inline TomlValue parse_value(const std::string& raw, int line_no) {
  std::string s = trim(raw);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']')
      throw ConfigParse("line " + std::to_string(line_no) + ": unterminated array");
    TomlValue v;
    v.kind = TomlValue::Kind::Array;
    std::string body = s.substr(1, s.size() - 2);
    std::size_t start = 0;
    std::string item;
    bool any = false;
    for (std::size_t i = 0; i <= body.size(); ++i) {
      if (i == body.size() || body[i] == ',') {
        item = trim(body.substr(start, i - start));
        if (!item.empty()) {
          v.array.push_back(parse_scalar(item, line_no));
          any = true;
        } else if (i != body.size() || any) {
          throw ConfigParse("line " + std::to_string(line_no) + ": empty array element");
        }
        start = i + 1;
      }
    }
    return v;
  }
  return parse_scalar(s, line_no);
}

/// Strips a trailing comment that is not inside a string literal.
inline std::string strip_comment(const std::string& line) {
  bool in_str = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) in_str = !in_str;
    if (line[i] == '#' && !in_str) return line.substr(0, i);
  }
  return line;
}

}  // namespace detail

inline TomlDoc parse_toml(const std::string& text) {
  TomlDoc doc;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    std::string line = detail::trim(detail::strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigParse("line " + std::to_string(line_no) + ": bad section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw ConfigParse("line " + std::to_string(line_no) + ": empty section name");
      doc.sections[section];  // a section may legitimately be empty
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigParse("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigParse("line " + std::to_string(line_no) + ": empty key");
    if (section.empty())
      throw ConfigParse("line " + std::to_string(line_no) + ": key outside any section");
    auto& table = doc.sections[section];
    if (table.count(key))
      throw ConfigParse("line " + std::to_string(line_no) + ": duplicate key '" + section + "." +
                        key + "'");
    table[key] = detail::parse_value(line.substr(eq + 1), line_no);
  }
  return doc;
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

enum class ExperimentKind {
  ReadoutAlign,
  Rate,
  IclSingle,
  IclStack,
  Collapse,
  MarkovClosure,
  Attractors
};

inline const std::map<std::string, ExperimentKind>& experiment_names() {
  static const std::map<std::string, ExperimentKind> names = {
      {"readout_align", ExperimentKind::ReadoutAlign},
      {"rate", ExperimentKind::Rate},
      {"icl_single", ExperimentKind::IclSingle},
      {"icl_stack", ExperimentKind::IclStack},
      {"collapse", ExperimentKind::Collapse},
      {"markov_closure", ExperimentKind::MarkovClosure},
      {"attractors", ExperimentKind::Attractors},
  };
  return names;
}

/// Fully validated experiment description. Every referenced dimension is
/// checked before any compute is dispatched; unknown keys are hard errors so
/// configuration drift cannot pass silently.
struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::Rate;
  std::string name;
  std::string output;

  // [seeds]
  std::uint64_t master_seed = 0;
  std::size_t replicates = 1;

  // [process]
  std::size_t dim = 0;
  RadialLaw radial = RadialLaw::GaussianZ;
  Dependence dependence;
  enum class SigmaKind { Identity, Diag, Random } sigma_kind = SigmaKind::Identity;
  std::vector<double> sigma_diag;
  std::uint64_t sigma_seed = 1;
  double sigma_cond = 4.0;

  // [grid]
  std::vector<std::size_t> lengths;

  // [model]
  std::size_t d_k = 0, d_v = 0, d_u = 0, d_w = 0;
  std::size_t layers = 1, depth = 1;
  double step = 1e-2;
  double cone_fraction = 0.5;
  double mix_scale = 0.5;
  std::uint64_t weight_seed = 7;
  bool trace_check = false;
  double trace_factor = 2.0;
  std::size_t trace_n = 4096;
  std::size_t reference_m = 32768, reference_burn = 4096;
  double a_scale = 0.3, c_scale = 0.3, gain = 1.0, noise = 0.0, tol = 1e-10;
  std::size_t steps = 16384, window = 1024, pilot_steps = 8192;
  std::size_t n_starts = 64, max_iters = 4096, codebook_size = 64, traj_steps = 2048;

  std::string config_text;  // raw bytes, hashed into summaries

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig from_text(const std::string& text);

  CovarianceModel build_covariance(double scale = 1.0) const;
  ProcessSpec build_process(std::uint64_t seed, double sigma_scale = 1.0) const;
};

namespace detail {

struct KeySpec {
  const char* key;
  TomlValue::Kind kind;
  bool required;
};

using SectionSchema = std::map<std::string, std::vector<KeySpec>>;

inline SectionSchema schema_for(ExperimentKind kind) {
  SectionSchema s;
  s["experiment"] = {{"name", TomlValue::Kind::String, true},
                     {"output", TomlValue::Kind::String, false}};
  s["seeds"] = {{"master", TomlValue::Kind::Integer, true},
                {"replicates", TomlValue::Kind::Integer, true}};
  std::vector<KeySpec> process = {
      {"dim", TomlValue::Kind::Integer, true},    {"radial", TomlValue::Kind::String, false},
      {"dependence", TomlValue::Kind::String, false}, {"rho", TomlValue::Kind::Float, false},
      {"sigma", TomlValue::Kind::String, false},  {"sigma_diag", TomlValue::Kind::Array, false},
      {"sigma_seed", TomlValue::Kind::Integer, false},
      {"sigma_cond", TomlValue::Kind::Float, false}};
  switch (kind) {
    case ExperimentKind::ReadoutAlign:
      s["process"] = process;
      s["grid"] = {{"lengths", TomlValue::Kind::Array, true}};
      s["model"] = {{"d_k", TomlValue::Kind::Integer, true},
                    {"d_v", TomlValue::Kind::Integer, true},
                    {"weight_seed", TomlValue::Kind::Integer, false},
                    {"cone_fraction", TomlValue::Kind::Float, false}};
      break;
    case ExperimentKind::Rate:
      s["process"] = process;
      s["grid"] = {{"lengths", TomlValue::Kind::Array, true}};
      s["model"] = {{"d_k", TomlValue::Kind::Integer, true},
                    {"weight_seed", TomlValue::Kind::Integer, false},
                    {"cone_fraction", TomlValue::Kind::Float, false},
                    {"trace_check", TomlValue::Kind::Boolean, false},
                    {"trace_factor", TomlValue::Kind::Float, false},
                    {"trace_n", TomlValue::Kind::Integer, false}};
      break;
    case ExperimentKind::IclSingle:
    case ExperimentKind::IclStack:
      s["grid"] = {{"lengths", TomlValue::Kind::Array, true}};
      s["model"] = {{"d_u", TomlValue::Kind::Integer, true},
                    {"d_w", TomlValue::Kind::Integer, true},
                    {"layers", TomlValue::Kind::Integer, false},
                    {"step", TomlValue::Kind::Float, false}};
      break;
    case ExperimentKind::Collapse:
      s["process"] = process;
      s["grid"] = {{"lengths", TomlValue::Kind::Array, true}};
      s["model"] = {{"depth", TomlValue::Kind::Integer, true},
                    {"d_k", TomlValue::Kind::Integer, true},
                    {"weight_seed", TomlValue::Kind::Integer, false},
                    {"cone_fraction", TomlValue::Kind::Float, false},
                    {"mix_scale", TomlValue::Kind::Float, false},
                    {"reference_m", TomlValue::Kind::Integer, false},
                    {"reference_burn", TomlValue::Kind::Integer, false}};
      break;
    case ExperimentKind::MarkovClosure:
      s["process"] = process;
      s["model"] = {{"d_k", TomlValue::Kind::Integer, true},
                    {"weight_seed", TomlValue::Kind::Integer, false},
                    {"cone_fraction", TomlValue::Kind::Float, false},
                    {"mix_scale", TomlValue::Kind::Float, false},
                    {"a_scale", TomlValue::Kind::Float, false},
                    {"c_scale", TomlValue::Kind::Float, false},
                    {"gain", TomlValue::Kind::Float, false},
                    {"noise", TomlValue::Kind::Float, false},
                    {"steps", TomlValue::Kind::Integer, false},
                    {"window", TomlValue::Kind::Integer, false},
                    {"pilot_steps", TomlValue::Kind::Integer, false}};
      break;
    case ExperimentKind::Attractors:
      s["model"] = {{"dim", TomlValue::Kind::Integer, true},
                    {"weight_seed", TomlValue::Kind::Integer, false},
                    {"a_scale", TomlValue::Kind::Float, false},
                    {"c_scale", TomlValue::Kind::Float, false},
                    {"gain", TomlValue::Kind::Float, false},
                    {"n_starts", TomlValue::Kind::Integer, false},
                    {"max_iters", TomlValue::Kind::Integer, false},
                    {"tol", TomlValue::Kind::Float, false},
                    {"codebook_size", TomlValue::Kind::Integer, false},
                    {"traj_steps", TomlValue::Kind::Integer, false}};
      break;
  }
  return s;
}

inline const TomlValue* find_key(const TomlDoc& doc, const std::string& section,
                                 const std::string& key) {
  auto s = doc.sections.find(section);
  if (s == doc.sections.end()) return nullptr;
  auto k = s->second.find(key);
  if (k == s->second.end()) return nullptr;
  return &k->second;
}

inline bool kind_matches(const TomlValue& v, TomlValue::Kind want) {
  if (v.kind == want) return true;
  // Integers are acceptable where floats are expected.
  return want == TomlValue::Kind::Float && v.kind == TomlValue::Kind::Integer;
}

inline void check_schema(const TomlDoc& doc, const SectionSchema& schema) {
  for (const auto& [section, table] : doc.sections) {
    auto it = schema.find(section);
    if (it == schema.end())
      throw ConfigInvalid("unknown section [" + section + "] for this experiment");
    for (const auto& [key, value] : table) {
      const KeySpec* spec = nullptr;
      for (const KeySpec& ks : it->second)
        if (key == ks.key) {
          spec = &ks;
          break;
        }
      if (!spec) throw ConfigInvalid("unknown key '" + section + "." + key + "'");
      if (!kind_matches(value, spec->kind))
        throw ConfigInvalid("wrong type for '" + section + "." + key + "'");
    }
  }
  for (const auto& [section, keys] : schema)
    for (const KeySpec& ks : keys)
      if (ks.required && !find_key(doc, section, ks.key))
        throw ConfigInvalid("missing required key '" + section + "." + std::string(ks.key) + "'");
}

inline std::int64_t get_int(const TomlDoc& doc, const std::string& section, const std::string& key,
                            std::int64_t fallback) {
  const TomlValue* v = find_key(doc, section, key);
  return v ? v->integer : fallback;
}

inline double get_float(const TomlDoc& doc, const std::string& section, const std::string& key,
                        double fallback) {
  const TomlValue* v = find_key(doc, section, key);
  return v ? v->as_number() : fallback;
}

inline bool get_bool(const TomlDoc& doc, const std::string& section, const std::string& key,
                     bool fallback) {
  const TomlValue* v = find_key(doc, section, key);
  return v ? v->boolean : fallback;
}

inline std::string get_string(const TomlDoc& doc, const std::string& section,
                              const std::string& key, const std::string& fallback) {
  const TomlValue* v = find_key(doc, section, key);
  return v ? v->str : fallback;
}

inline std::size_t positive_size(const TomlDoc& doc, const std::string& section,
                                 const std::string& key, std::int64_t fallback) {
  std::int64_t v = get_int(doc, section, key, fallback);
  if (v <= 0) throw ConfigInvalid("'" + section + "." + key + "' must be positive");
  return static_cast<std::size_t>(v);
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
  TomlDoc doc = parse_toml(text);
  ExperimentConfig cfg;
  cfg.config_text = text;

  const TomlValue* name = detail::find_key(doc, "experiment", "name");
  if (!name || name->kind != TomlValue::Kind::String)
    throw ConfigInvalid("missing required key 'experiment.name'");
  auto kind_it = experiment_names().find(name->str);
  if (kind_it == experiment_names().end())
    throw ConfigInvalid("unknown experiment '" + name->str + "' in 'experiment.name'");
  cfg.experiment = kind_it->second;
  cfg.name = name->str;

  detail::check_schema(doc, detail::schema_for(cfg.experiment));

  cfg.output = detail::get_string(doc, "experiment", "output", "out/" + cfg.name);
  cfg.master_seed = static_cast<std::uint64_t>(detail::get_int(doc, "seeds", "master", 0));
  cfg.replicates = detail::positive_size(doc, "seeds", "replicates", 1);

  if (doc.sections.count("process")) {
    std::int64_t dim = detail::get_int(doc, "process", "dim", 0);
    if (dim <= 0) throw ConfigInvalid("'process.dim' must be positive");
    cfg.dim = static_cast<std::size_t>(dim);
    std::string radial = detail::get_string(doc, "process", "radial", "gaussian");
    if (radial == "gaussian")
      cfg.radial = RadialLaw::GaussianZ;
    else if (radial == "sphere")
      cfg.radial = RadialLaw::SphereZ;
    else
      throw ConfigInvalid("'process.radial' must be \"gaussian\" or \"sphere\"");
    std::string dep = detail::get_string(doc, "process", "dependence", "iid");
    if (dep == "iid") {
      cfg.dependence = Dependence::iid();
      if (detail::find_key(doc, "process", "rho"))
        throw ConfigInvalid("'process.rho' is only valid with dependence = \"var1\"");
    } else if (dep == "var1") {
      const TomlValue* rho = detail::find_key(doc, "process", "rho");
      if (!rho) throw ConfigInvalid("missing required key 'process.rho' for var1");
      double r = rho->as_number();
      if (!(std::abs(r) < 1.0)) throw ConfigInvalid("'process.rho' must satisfy |rho| < 1");
      if (cfg.radial == RadialLaw::SphereZ)
        throw ConfigInvalid("'process.dependence' var1 requires the gaussian radial law");
      cfg.dependence = Dependence::var1(r);
    } else {
      throw ConfigInvalid("'process.dependence' must be \"iid\" or \"var1\"");
    }
    std::string sig = detail::get_string(doc, "process", "sigma", "identity");
    if (sig == "identity") {
      cfg.sigma_kind = SigmaKind::Identity;
    } else if (sig == "diag") {
      cfg.sigma_kind = SigmaKind::Diag;
      const TomlValue* diag = detail::find_key(doc, "process", "sigma_diag");
      if (!diag) throw ConfigInvalid("missing required key 'process.sigma_diag' for sigma=diag");
      for (const TomlValue& e : diag->array) {
        double v = e.as_number();
        if (!(v > 0.0)) throw ConfigInvalid("'process.sigma_diag' entries must be positive");
        cfg.sigma_diag.push_back(v);
      }
      if (cfg.sigma_diag.size() != cfg.dim)
        throw ConfigInvalid("'process.sigma_diag' must have process.dim entries");
    } else if (sig == "random") {
      cfg.sigma_kind = SigmaKind::Random;
      cfg.sigma_seed = static_cast<std::uint64_t>(detail::get_int(doc, "process", "sigma_seed", 1));
      cfg.sigma_cond = detail::get_float(doc, "process", "sigma_cond", 4.0);
      if (!(cfg.sigma_cond >= 1.0)) throw ConfigInvalid("'process.sigma_cond' must be >= 1");
    } else {
      throw ConfigInvalid("'process.sigma' must be \"identity\", \"diag\" or \"random\"");
    }
  }

  if (doc.sections.count("grid")) {
    const TomlValue* lengths = detail::find_key(doc, "grid", "lengths");
    if (lengths) {
      for (const TomlValue& e : lengths->array) {
        if (e.kind != TomlValue::Kind::Integer || e.integer <= 0)
          throw ConfigInvalid("'grid.lengths' entries must be positive integers");
        cfg.lengths.push_back(static_cast<std::size_t>(e.integer));
      }
      if (cfg.lengths.empty()) throw ConfigInvalid("'grid.lengths' must be nonempty");
      for (std::size_t i = 1; i < cfg.lengths.size(); ++i)
        if (cfg.lengths[i] <= cfg.lengths[i - 1])
          throw ConfigInvalid("'grid.lengths' must be sorted ascending");
    }
  }

  cfg.weight_seed = static_cast<std::uint64_t>(detail::get_int(doc, "model", "weight_seed", 7));
  cfg.cone_fraction = detail::get_float(doc, "model", "cone_fraction", 0.5);
  if (!(cfg.cone_fraction > 0.0 && cfg.cone_fraction <= 1.0))
    throw ConfigInvalid("'model.cone_fraction' must lie in (0, 1]");

  switch (cfg.experiment) {
    case ExperimentKind::ReadoutAlign:
      cfg.d_k = detail::positive_size(doc, "model", "d_k", 0);
      cfg.d_v = detail::positive_size(doc, "model", "d_v", 0);
      break;
    case ExperimentKind::Rate:
      cfg.d_k = detail::positive_size(doc, "model", "d_k", 0);
      cfg.trace_check = detail::get_bool(doc, "model", "trace_check", false);
      cfg.trace_factor = detail::get_float(doc, "model", "trace_factor", 2.0);
      if (!(cfg.trace_factor > 1.0)) throw ConfigInvalid("'model.trace_factor' must exceed 1");
      cfg.trace_n = detail::positive_size(doc, "model", "trace_n", 4096);
      if (cfg.radial != RadialLaw::GaussianZ)
        throw ConfigInvalid("'process.radial' must be gaussian for the rate experiment");
      break;
    case ExperimentKind::IclSingle:
    case ExperimentKind::IclStack:
      cfg.d_u = detail::positive_size(doc, "model", "d_u", 0);
      cfg.d_w = detail::positive_size(doc, "model", "d_w", 0);
      cfg.layers = detail::positive_size(doc, "model", "layers",
                                         cfg.experiment == ExperimentKind::IclStack ? 8 : 1);
      cfg.step = detail::get_float(doc, "model", "step", 1e-2);
      if (!(cfg.step > 0.0)) throw ConfigInvalid("'model.step' must be positive");
      break;
    case ExperimentKind::Collapse:
      cfg.depth = detail::positive_size(doc, "model", "depth", 1);
      cfg.d_k = detail::positive_size(doc, "model", "d_k", 0);
      cfg.mix_scale = detail::get_float(doc, "model", "mix_scale", 0.5);
      if (!(cfg.mix_scale > 0.0 && cfg.mix_scale <= 0.5))
        throw ConfigInvalid("'model.mix_scale' must lie in (0, 0.5]");
      cfg.reference_m = detail::positive_size(doc, "model", "reference_m", 32768);
      cfg.reference_burn = detail::positive_size(doc, "model", "reference_burn", 4096);
      if (cfg.depth > 1 && cfg.reference_m < 10000)
        throw ConfigInvalid("'model.reference_m' must be at least 10000 for depth > 1");
      break;
    case ExperimentKind::MarkovClosure:
      cfg.d_k = detail::positive_size(doc, "model", "d_k", 0);
      cfg.mix_scale = detail::get_float(doc, "model", "mix_scale", 0.5);
      cfg.a_scale = detail::get_float(doc, "model", "a_scale", 0.3);
      cfg.c_scale = detail::get_float(doc, "model", "c_scale", 0.3);
      cfg.gain = detail::get_float(doc, "model", "gain", 1.0);
      cfg.noise = detail::get_float(doc, "model", "noise", 0.05);
      if (cfg.noise < 0.0) throw ConfigInvalid("'model.noise' must be nonnegative");
      cfg.steps = detail::positive_size(doc, "model", "steps", 16384);
      cfg.window = detail::positive_size(doc, "model", "window", 1024);
      if (cfg.window > cfg.steps)
        throw ConfigInvalid("'model.window' must not exceed 'model.steps'");
      cfg.pilot_steps = detail::positive_size(doc, "model", "pilot_steps", 8192);
      break;
    case ExperimentKind::Attractors:
      cfg.dim = detail::positive_size(doc, "model", "dim", 0);
      cfg.a_scale = detail::get_float(doc, "model", "a_scale", 0.3);
      cfg.c_scale = detail::get_float(doc, "model", "c_scale", 0.3);
      cfg.gain = detail::get_float(doc, "model", "gain", 1.0);
      cfg.n_starts = detail::positive_size(doc, "model", "n_starts", 64);
      cfg.max_iters = detail::positive_size(doc, "model", "max_iters", 4096);
      cfg.tol = detail::get_float(doc, "model", "tol", 1e-10);
      if (!(cfg.tol > 0.0)) throw ConfigInvalid("'model.tol' must be positive");
      cfg.codebook_size = detail::positive_size(doc, "model", "codebook_size", 64);
      cfg.traj_steps = detail::positive_size(doc, "model", "traj_steps", 2048);
      break;
  }
  if (cfg.experiment == ExperimentKind::ReadoutAlign || cfg.experiment == ExperimentKind::Rate ||
      cfg.experiment == ExperimentKind::Collapse) {
    if (cfg.lengths.empty()) throw ConfigInvalid("missing required key 'grid.lengths'");
  }
  return cfg;
}

inline ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return from_text(read_file(path));
}

inline CovarianceModel ExperimentConfig::build_covariance(double scale) const {
  Matrix sigma;
  switch (sigma_kind) {
    case SigmaKind::Identity:
      sigma = Matrix::identity(dim);
      break;
    case SigmaKind::Diag:
      sigma = Matrix::diagonal(sigma_diag);
      break;
    case SigmaKind::Random: {
      // Random SPD with eigenvalues log-uniform across the requested
      // condition number, normalized so tr(Sigma) = dim.
      Rng rng(sigma_seed);
      Matrix q = random_rotation(dim, rng);
      Vector eig(dim);
      double lo = 1.0 / std::sqrt(sigma_cond), hi = std::sqrt(sigma_cond);
      double sum = 0.0;
      for (double& e : eig) {
        e = std::exp(rng.uniform(std::log(lo), std::log(hi)));
        sum += e;
      }
      for (double& e : eig) e *= static_cast<double>(dim) / sum;
      Matrix lam = Matrix::diagonal(eig);
      sigma = q * (lam * q.transposed());
      // Enforce exact symmetry after the triple product.
      for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < i; ++j) {
          double v = 0.5 * (sigma(i, j) + sigma(j, i));
          sigma(i, j) = v;
          sigma(j, i) = v;
        }
      break;
    }
  }
  if (scale != 1.0) sigma = scaled(sigma, scale);
  return CovarianceModel::from_matrix(sigma);
}

inline ProcessSpec ExperimentConfig::build_process(std::uint64_t seed, double sigma_scale) const {
  return make_process(build_covariance(sigma_scale), radial, dependence, seed);
}

}  // namespace crl
