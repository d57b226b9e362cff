#pragma once

// File formats: panel CSV, JSON fit reports, JSON experiment configuration
// and the CSV study tables.

#include "robpanel/error.hpp"
#include "robpanel/panel.hpp"
#include "robpanel/simulation.hpp"

#include "json.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace robpanel {

namespace io {

using json = nlohmann::ordered_json;

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::optional<double> parse_double(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return std::nullopt;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

// One CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields(1);
  bool quoted = false;
  for (std::size_t j = 0; j < line.size(); ++j) {
    const char ch = line[j];
    if (quoted) {
      if (ch == '"' && j + 1 < line.size() && line[j + 1] == '"') {
        fields.back() += '"';
        ++j;
      } else if (ch == '"') {
        quoted = false;
      } else {
        fields.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.emplace_back();
    } else {
      fields.back() += ch;
    }
  }
  return fields;
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + '"';
}

// Columns unit, time, y, x1..xK in any order; other columns are ignored.
// Units and periods keep their order of first appearance.
inline PanelData read_panel_csv(std::istream& in, const std::string& source = "<input>") {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    while (std::getline(in, line)) {
      ++line_no;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) return true;
    }
    return false;
  };
  if (!next_line()) throw DataError(source + ": empty file, expected a header row");
  if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);

  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t j = 0; j < header.size(); ++j) {
    if (!col.emplace(header[j], j).second)
      throw DataError(source + ": header repeats column '" + header[j] + "'");
  }
  for (const char* name : {"unit", "time", "y", "x1"})
    if (!col.count(name)) throw MissingColumn(source + ": missing column '" + std::string(name) + "'");
  std::vector<std::size_t> xcols;
  for (std::size_t k = 1; col.count("x" + std::to_string(k)); ++k) xcols.push_back(col.at("x" + std::to_string(k)));
  for (const auto& h : header) {
    if (h.size() > 1 && h[0] == 'x' && h.find_first_not_of("0123456789", 1) == std::string::npos &&
        std::stoul(h.substr(1)) > xcols.size())
      throw MissingColumn(source + ": column '" + h + "' present but 'x" + std::to_string(xcols.size() + 1) +
                          "' is missing");
  }
  const std::size_t k = xcols.size();
  const auto c_unit = col.at("unit");
  const auto c_time = col.at("time");
  const auto c_y = col.at("y");

  std::vector<std::string> units;
  std::vector<std::string> periods;
  std::unordered_map<std::string, std::size_t> unit_ix;
  std::unordered_map<std::string, std::size_t> period_ix;
  struct Cell {
    double y;
    std::vector<double> x;
    std::size_t line;
  };
  std::map<std::pair<std::size_t, std::size_t>, Cell> cells;

  auto number = [&](const std::vector<std::string>& f, std::size_t c) {
    const auto v = parse_double(f[c]);
    if (!v)
      throw NonNumeric(source + ": line " + std::to_string(line_no) + ", column '" + header[c] + "': '" + f[c] +
                       "' is not a finite decimal number");
    return *v;
  };

  while (next_line()) {
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw ShapeMismatch(source + ": line " + std::to_string(line_no) + " has " + std::to_string(f.size()) +
                          " fields, header has " + std::to_string(header.size()));
    const auto [ui, new_u] = unit_ix.try_emplace(f[c_unit], units.size());
    if (new_u) units.push_back(f[c_unit]);
    const auto [pi, new_p] = period_ix.try_emplace(f[c_time], periods.size());
    if (new_p) periods.push_back(f[c_time]);
    Cell cell{number(f, c_y), std::vector<double>(k), line_no};
    for (std::size_t q = 0; q < k; ++q) cell.x[q] = number(f, xcols[q]);
    const auto key = std::make_pair(ui->second, pi->second);
    const auto [it, fresh] = cells.emplace(key, std::move(cell));
    if (!fresh)
      throw DuplicateCell(source + ": line " + std::to_string(line_no) + ": duplicate (unit, time) = (" +
                          f[c_unit] + ", " + f[c_time] + "), first seen on line " + std::to_string(it->second.line));
  }
  if (units.empty()) throw DegeneratePanel(source + ": no data rows");

  for (std::size_t i = 0; i < units.size(); ++i)
    for (std::size_t t = 0; t < periods.size(); ++t)
      if (!cells.count({i, t}))
        throw Unbalanced(source + ": unbalanced panel, no row for (unit, time) = (" + units[i] + ", " + periods[t] +
                         ")");

  const auto n = units.size();
  const auto tn = periods.size();
  Vector y(static_cast<Eigen::Index>(n * tn));
  Matrix x(static_cast<Eigen::Index>(n * tn), static_cast<Eigen::Index>(k));
  for (const auto& [key, cell] : cells) {
    const auto r = static_cast<Eigen::Index>(key.first * tn + key.second);
    y(r) = cell.y;
    for (std::size_t q = 0; q < k; ++q) x(r, static_cast<Eigen::Index>(q)) = cell.x[q];
  }
  return PanelData(n, tn, std::move(y), std::move(x), std::move(units), std::move(periods));
}

inline PanelData read_panel_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return read_panel_csv(in, path.string());
}

inline void write_panel_csv(std::ostream& out, const PanelData& panel) {
  out << "unit,time,y";
  for (std::size_t q = 1; q <= panel.n_regressors(); ++q) out << ",x" << q;
  out << '\n';
  for (std::size_t i = 0; i < panel.n_units(); ++i)
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      out << csv_field(panel.unit_labels()[i]) << ',' << csv_field(panel.period_labels()[t]) << ','
          << format_double(panel.y(i, t));
      for (std::size_t q = 0; q < panel.n_regressors(); ++q) out << ',' << format_double(panel.x(i, t, q));
      out << '\n';
    }
}

inline void write_panel_csv(const std::filesystem::path& path, const PanelData& panel) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  write_panel_csv(out, panel);
}

inline json vector_json(const Vector& v) {
  json a = json::array();
  for (Eigen::Index j = 0; j < v.size(); ++j) a.push_back(v(j));
  return a;
}

inline json fit_report_json(const FitResult& fit) {
  json r;
  r["estimator"] = std::string(to_string(fit.estimator));
  r["beta"] = vector_json(fit.beta);
  r["std_errors"] = fit.std_errors ? vector_json(*fit.std_errors) : json(nullptr);
  r["sigma_hat"] = fit.sigma_hat;
  r["c_selected"] = fit.c_selected ? json(*fit.c_selected) : json(nullptr);
  r["iterations"] = fit.iterations;
  r["converged"] = fit.converged;
  return r;
}

// unit,time,weight; LS rows carry weight 1.
inline void write_weights_csv(std::ostream& out, const PanelData& panel, const FitResult& fit) {
  out << "unit,time,weight\n";
  for (std::size_t i = 0; i < panel.n_units(); ++i)
    for (std::size_t t = 0; t < panel.n_periods(); ++t) {
      const double w = fit.weights ? (*fit.weights)(panel.row(i, t)) : 1.0;
      out << csv_field(panel.unit_labels()[i]) << ',' << csv_field(panel.period_labels()[t]) << ','
          << format_double(w) << '\n';
    }
}

}  // namespace io

struct ContaminationStudyConfig {
  std::vector<PanelSize> panels{{120, 2}, {80, 3}};
  std::vector<ContaminationKind> schemes{std::begin(kAllContaminationKinds), std::end(kAllContaminationKinds)};
  std::vector<std::size_t> counts{12, 24};
  BlockPolicy block = BlockPolicy::HalfUnit;
  std::size_t n_test = 50;

  bool operator==(const ContaminationStudyConfig&) const = default;
};

struct ConsistencyStudyConfig {
  std::vector<std::size_t> n_values{50, 100, 150, 200, 250};
  std::size_t fixed_t = 3;
  std::vector<std::size_t> t_values{4, 6, 9, 12, 24};
  std::size_t fixed_n = 50;
  std::size_t replications = 200;

  bool operator==(const ConsistencyStudyConfig&) const = default;
};

struct ErrorDistStudyConfig {
  std::vector<PanelSize> pairs{{30, 20}, {75, 8}, {200, 3}};
  std::size_t replications = 200;

  bool operator==(const ErrorDistStudyConfig&) const = default;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::size_t replications = 1000;
  std::size_t threads = 1;
  std::size_t n_subsamples = 500;
  std::vector<EstimatorKind> estimators{EstimatorKind::LS, EstimatorKind::Huber, EstimatorKind::Tukey,
                                        EstimatorKind::ESL};
  std::vector<double> beta{2.4, -1.2};
  std::vector<double> gamma{2.0, 4.0};
  ErrorDist error_dist = ErrorDist::Normal01;
  std::optional<ContaminationStudyConfig> contamination = ContaminationStudyConfig{};
  std::optional<ConsistencyStudyConfig> consistency = ConsistencyStudyConfig{};
  std::optional<ErrorDistStudyConfig> error_dists = ErrorDistStudyConfig{};
  std::string out_dir;

  bool operator==(const ExperimentConfig&) const = default;

  DgpConfig dgp() const {
    DgpConfig d;
    d.beta = Eigen::Map<const Vector>(beta.data(), static_cast<Eigen::Index>(beta.size()));
    d.gamma = Eigen::Map<const Vector>(gamma.data(), static_cast<Eigen::Index>(gamma.size()));
    d.error_dist = error_dist;
    return d;
  }
  McOptions mc_options() const {
    McOptions o;
    o.threads = threads;
    o.fit.n_subsamples = n_subsamples;
    return o;
  }
};

namespace io {

namespace detail {

class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError("config key '" + display() + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    if (it == obj_.end()) return;
    try {
      dst = it->template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("config key '" + name(key) + "' has the wrong type");
    }
  }

  const json* find(const char* key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() ? nullptr : &*it;
  }

  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : obj_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + name(k.c_str()) + "'");
  }

 private:
  std::string display() const { return path_.empty() ? "<root>" : path_; }
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E, class Parse>
std::vector<E> enum_list(const json* node, const std::string& key, Parse parse) {
  if (!node->is_array()) throw ConfigError("config key '" + key + "' must be an array of names");
  std::vector<E> out;
  for (const auto& v : *node) {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be an array of names");
    const auto e = parse(v.get<std::string>());
    if (!e) throw ConfigError("config key '" + key + "': unknown value '" + v.get<std::string>() + "'");
    out.push_back(*e);
  }
  return out;
}

inline std::vector<PanelSize> size_list(const json* node, const std::string& key) {
  std::vector<PanelSize> out;
  if (!node->is_array()) throw ConfigError("config key '" + key + "' must be an array of [N, T] pairs");
  for (const auto& p : *node) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_unsigned() || !p[1].is_number_unsigned())
      throw ConfigError("config key '" + key + "' must be an array of [N, T] pairs");
    out.push_back({p[0].get<std::size_t>(), p[1].get<std::size_t>()});
  }
  return out;
}

inline json size_list_json(const std::vector<PanelSize>& v) {
  json a = json::array();
  for (const auto& p : v) a.push_back(json::array({p.n_units, p.n_periods}));
  return a;
}

template <class E>
json name_list_json(const std::vector<E>& v) {
  json a = json::array();
  for (auto e : v) a.push_back(std::string(to_string(e)));
  return a;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& doc) {
  using detail::Reader;
  ExperimentConfig cfg;
  Reader root(doc, "");
  root.get("seed", cfg.seed);
  root.get("replications", cfg.replications);
  root.get("threads", cfg.threads);
  root.get("n_subsamples", cfg.n_subsamples);
  root.get("out_dir", cfg.out_dir);
  if (const auto* e = root.find("estimators"))
    cfg.estimators = detail::enum_list<EstimatorKind>(e, "estimators", parse_estimator);

  if (const auto* d = root.find("dgp")) {
    Reader r(*d, "dgp");
    r.get("beta", cfg.beta);
    r.get("gamma", cfg.gamma);
    std::string dist(to_string(cfg.error_dist));
    r.get("error_dist", dist);
    const auto parsed = parse_error_dist(dist);
    if (!parsed) throw ConfigError("config key 'dgp.error_dist': unknown value '" + dist + "'");
    cfg.error_dist = *parsed;
    r.finish();
  }

  if (const auto* c = root.find("contamination")) {
    if (c->is_null()) {
      cfg.contamination.reset();
    } else {
      Reader r(*c, "contamination");
      auto& s = *cfg.contamination;
      if (const auto* p = r.find("panels")) s.panels = detail::size_list(p, "contamination.panels");
      if (const auto* k = r.find("schemes"))
        s.schemes = detail::enum_list<ContaminationKind>(k, "contamination.schemes", parse_contamination);
      r.get("m", s.counts);
      std::string block(to_string(s.block));
      r.get("block", block);
      const auto b = parse_block_policy(block);
      if (!b) throw ConfigError("config key 'contamination.block': unknown value '" + block + "'");
      s.block = *b;
      r.get("n_test", s.n_test);
      r.finish();
    }
  }

  if (const auto* c = root.find("consistency")) {
    if (c->is_null()) {
      cfg.consistency.reset();
    } else {
      Reader r(*c, "consistency");
      auto& s = *cfg.consistency;
      r.get("n_values", s.n_values);
      r.get("fixed_t", s.fixed_t);
      r.get("t_values", s.t_values);
      r.get("fixed_n", s.fixed_n);
      r.get("replications", s.replications);
      r.finish();
    }
  }

  if (const auto* c = root.find("error_dist")) {
    if (c->is_null()) {
      cfg.error_dists.reset();
    } else {
      Reader r(*c, "error_dist");
      auto& s = *cfg.error_dists;
      if (const auto* p = r.find("pairs")) s.pairs = detail::size_list(p, "error_dist.pairs");
      r.get("replications", s.replications);
      r.finish();
    }
  }
  root.finish();

  if (cfg.estimators.empty()) throw ConfigError("config key 'estimators' must not be empty");
  if (cfg.replications < 1) throw ConfigError("config key 'replications' must be >= 1");
  if (cfg.beta.empty() || cfg.beta.size() != cfg.gamma.size())
    throw ConfigError("config keys 'dgp.beta' and 'dgp.gamma' must have the same nonzero length");
  return cfg;
}

inline ExperimentConfig parse_config_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(doc);
}

inline ExperimentConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline json config_json(const ExperimentConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["replications"] = cfg.replications;
  j["threads"] = cfg.threads;
  j["n_subsamples"] = cfg.n_subsamples;
  j["estimators"] = detail::name_list_json(cfg.estimators);
  j["dgp"] = {{"beta", cfg.beta}, {"gamma", cfg.gamma}, {"error_dist", std::string(to_string(cfg.error_dist))}};
  if (cfg.contamination) {
    const auto& s = *cfg.contamination;
    j["contamination"] = {{"panels", detail::size_list_json(s.panels)},
                          {"schemes", detail::name_list_json(s.schemes)},
                          {"m", s.counts},
                          {"block", std::string(to_string(s.block))},
                          {"n_test", s.n_test}};
  } else {
    j["contamination"] = nullptr;
  }
  if (cfg.consistency) {
    const auto& s = *cfg.consistency;
    j["consistency"] = {{"n_values", s.n_values}, {"fixed_t", s.fixed_t},          {"t_values", s.t_values},
                        {"fixed_n", s.fixed_n},   {"replications", s.replications}};
  } else {
    j["consistency"] = nullptr;
  }
  if (cfg.error_dists) {
    j["error_dist"] = {{"pairs", detail::size_list_json(cfg.error_dists->pairs)},
                       {"replications", cfg.error_dists->replications}};
  } else {
    j["error_dist"] = nullptr;
  }
  j["out_dir"] = cfg.out_dir;
  return j;
}

inline std::string serialize_config(const ExperimentConfig& cfg) { return config_json(cfg).dump(2) + "\n"; }

// Rows = estimators, one column per scheme x outlier count, one block of
// rows per panel size.
inline void write_study_table(std::ostream& out, const std::vector<ContaminationCell>& cells, bool rmse) {
  std::vector<PanelSize> sizes;
  std::vector<std::pair<ContaminationKind, std::size_t>> columns;
  for (const auto& c : cells) {
    const PanelSize p{c.n_units, c.n_periods};
    if (std::find(sizes.begin(), sizes.end(), p) == sizes.end()) sizes.push_back(p);
    const auto col = std::make_pair(c.kind, c.m);
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
  }
  out << "N,T,estimator";
  for (const auto& [kind, m] : columns) out << ',' << to_string(kind) << "_m" << m;
  out << '\n';
  if (cells.empty()) return;
  for (const auto& p : sizes) {
    for (const auto& est : cells.front().report.estimators) {
      out << p.n_units << ',' << p.n_periods << ',' << to_string(est.estimator);
      for (const auto& [kind, m] : columns) {
        out << ',';
        for (const auto& c : cells) {
          if (c.n_units != p.n_units || c.n_periods != p.n_periods || c.kind != kind || c.m != m) continue;
          const auto& e = c.report.at(est.estimator);
          if (rmse) {
            if (e.rmse) out << format_double(*e.rmse);
          } else if (!e.se_samples.empty()) {
            out << format_double(e.mse);
          }
        }
      }
      out << '\n';
    }
  }
}

// Long format: error_dist,N,T,estimator,replication,se.
inline void write_se_samples(std::ostream& out, const std::vector<ErrorDistCell>& cells) {
  out << "error_dist,N,T,estimator,replication,se\n";
  for (const auto& c : cells)
    for (const auto& e : c.report.estimators) {
      std::size_t sample = 0;
      std::size_t f = 0;
      for (std::size_t s = 0; s < c.report.replications; ++s) {
        if (f < e.failed_replications.size() && e.failed_replications[f] == s) {
          ++f;
          continue;
        }
        out << to_string(c.dist) << ',' << c.n_units << ',' << c.n_periods << ',' << to_string(e.estimator) << ','
            << s << ',' << format_double(e.se_samples[sample++]) << '\n';
      }
    }
}

inline void write_consistency_curves(std::ostream& out, const std::vector<CurvePoint>& points) {
  out << "sweep,N,T,estimator,mse,failures\n";
  for (const auto& p : points)
    for (const auto& e : p.report.estimators)
      out << p.sweep << ',' << p.n_units << ',' << p.n_periods << ',' << to_string(e.estimator) << ','
          << format_double(e.mse) << ',' << e.failed_replications.size() << '\n';
}

}  // namespace io

}  // namespace robpanel
