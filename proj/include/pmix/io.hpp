#pragma once

// Panel files, run configuration, sample records and posterior summaries.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmix/cftp.hpp"
#include "pmix/parallel.hpp"

namespace pmix {

using json = nlohmann::json;

inline constexpr const char* software_version = "0.1.0";

// ---- panel files ----------------------------------------------------------

enum class PanelFormat { csv, jsonl };

inline PanelFormat format_from_name(const std::string& name, const std::string& path = "") {
  if (name == "csv") return PanelFormat::csv;
  if (name == "jsonl") return PanelFormat::jsonl;
  if (name.empty() || name == "auto") {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    return ext == "jsonl" || ext == "json" ? PanelFormat::jsonl : PanelFormat::csv;
  }
  throw ConfigurationError("unknown data format '" + name + "' (csv, jsonl or auto)");
}

namespace io_detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

inline std::string at_line(std::size_t line) { return "line " + std::to_string(line) + ": "; }

}  // namespace io_detail

// Reads one series per line. K <= 0 takes K from the largest state seen.
inline CategoricalPanel ingest(std::istream& in, PanelFormat format, int K) {
  std::vector<std::vector<int>> series;
  std::vector<std::size_t> lines;
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string text = io_detail::trim(raw);
    if (text.empty()) continue;
    std::vector<int> y;
    if (format == PanelFormat::csv) {
      std::stringstream ss(text);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok = io_detail::trim(tok);
        int v = 0;
        const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
        if (tok.empty() || ec != std::errc() || end != tok.data() + tok.size())
          throw InputError(io_detail::at_line(line) + "'" + tok + "' is not an integer state");
        y.push_back(v);
      }
    } else {
      json obj;
      try {
        obj = json::parse(text);
      } catch (const json::exception& e) {
        throw InputError(io_detail::at_line(line) + "invalid JSON: " + e.what());
      }
      if (!obj.is_object() || !obj.contains("states") || !obj["states"].is_array())
        throw InputError(io_detail::at_line(line) + "expected an object with a \"states\" array");
      for (const auto& v : obj["states"]) {
        if (!v.is_number_integer()) throw InputError(io_detail::at_line(line) + "states must be integers");
        y.push_back(v.get<int>());
      }
    }
    if (y.empty()) throw InputError(io_detail::at_line(line) + "series has no states");
    series.push_back(std::move(y));
    lines.push_back(line);
  }
  if (series.empty()) throw InputError("data file holds no series");
  int top = 0;
  for (const auto& y : series)
    for (int v : y) top = std::max(top, v);
  if (K <= 0) K = top;
  for (std::size_t i = 0; i < series.size(); ++i)
    for (int v : series[i])
      if (v < 1 || v > K)
        throw InputError(io_detail::at_line(lines[i]) + "state " + std::to_string(v) + " outside 1.." +
                         std::to_string(K));
  return CategoricalPanel(std::move(series), K);
}

inline CategoricalPanel ingest(const std::string& path, PanelFormat format, int K) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open data file " + path);
  return ingest(in, format, K);
}

inline void emit(const CategoricalPanel& panel, std::ostream& out, PanelFormat format) {
  for (const auto& y : panel.series) {
    if (format == PanelFormat::jsonl) {
      out << json{{"states", y}}.dump() << '\n';
    } else {
      for (std::size_t r = 0; r < y.size(); ++r) out << (r ? "," : "") << y[r];
      out << '\n';
    }
  }
}

// ---- run configuration ----------------------------------------------------

struct RunConfig {
  std::string data, format = "auto", output = "samples.jsonl";
  int K = 0, M = 3;
  double alpha = 1.0;
  json a = 2.0, b = 1.0, gamma_lo = 0.1, gamma_hi = 50.0;  // scalar or K x K
  double phi_truncation = 1e-3;
  AnnealConfig anneal;
  std::uint64_t seed = 1;
  int samples = 1;
  int threads = 1;        // perfect samples in flight
  int bound_threads = 1;  // workers inside each bound computation
  int max_epochs = 20;
  int abscissae = 8;
  double partition_enumeration_limit = 1e5;

  static Matrix matrix_of(const json& v, int K, const char* name) {
    if (v.is_number()) return Matrix::Constant(K, K, v.get<double>());
    if (!v.is_array() || static_cast<int>(v.size()) != K)
      throw ConfigurationError(std::string(name) + " must be a number or a " + std::to_string(K) + "x" +
                               std::to_string(K) + " array");
    Matrix m(K, K);
    for (int s = 0; s < K; ++s) {
      if (!v[s].is_array() || static_cast<int>(v[s].size()) != K)
        throw ConfigurationError(std::string(name) + " row " + std::to_string(s + 1) + " has the wrong length");
      for (int t = 0; t < K; ++t) m(s, t) = v[s][t].get<double>();
    }
    return m;
  }

  PriorConfig prior(int K_data) const {
    const int k = K > 0 ? K : K_data;
    PriorConfig p = PriorConfig::defaults(k, M, alpha);
    p.a = matrix_of(a, k, "a");
    p.b = matrix_of(b, k, "b");
    p.gamma_lo = matrix_of(gamma_lo, k, "gamma_lo");
    p.gamma_hi = matrix_of(gamma_hi, k, "gamma_hi");
    p.phi_truncation = phi_truncation;
    return p;
  }

  CftpConfig cftp() const {
    CftpConfig c;
    c.bounds.anneal = anneal;
    c.bounds.threads = bound_threads;
    c.bounds.partition_enumeration_limit = partition_enumeration_limit;
    c.kernel.abscissae = abscissae;
    c.kernel.anneal = anneal;
    c.max_epochs = max_epochs;
    return c;
  }

  void validate() const {
    if (samples < 1) throw ConfigurationError("samples must be at least 1");
    if (threads < 1 || bound_threads < 1) throw ConfigurationError("thread counts must be at least 1");
    if (max_epochs < 1) throw ConfigurationError("max_epochs must be at least 1");
    if (abscissae < 2) throw ConfigurationError("abscissae must be at least 2");
    anneal.validate();
  }
};

inline json to_json(const AnnealConfig& a) {
  return {{"iterations", a.iterations},         {"initial_temperature", a.initial_temperature},
          {"cooling", a.cooling},               {"cooling_interval", a.cooling_interval},
          {"proposal_scale", a.proposal_scale}, {"restarts", a.restarts},
          {"exhaustive_limit", a.exhaustive_limit}, {"polish_rounds", a.polish_rounds},
          {"probes", a.probes}};
}

inline json to_json(const RunConfig& c) {
  return {{"data", c.data},
          {"format", c.format},
          {"output", c.output},
          {"K", c.K},
          {"M", c.M},
          {"alpha", c.alpha},
          {"a", c.a},
          {"b", c.b},
          {"gamma_lo", c.gamma_lo},
          {"gamma_hi", c.gamma_hi},
          {"phi_truncation", c.phi_truncation},
          {"anneal", to_json(c.anneal)},
          {"seed", c.seed},
          {"samples", c.samples},
          {"threads", c.threads},
          {"bound_threads", c.bound_threads},
          {"max_epochs", c.max_epochs},
          {"abscissae", c.abscissae},
          {"partition_enumeration_limit", c.partition_enumeration_limit}};
}

// Overlays the keys present in `j`; unknown keys are rejected.
inline void merge_json(RunConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigurationError("configuration must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "data") c.data = v.get<std::string>();
      else if (key == "format") c.format = v.get<std::string>();
      else if (key == "output") c.output = v.get<std::string>();
      else if (key == "K") c.K = v.get<int>();
      else if (key == "M") c.M = v.get<int>();
      else if (key == "alpha") c.alpha = v.get<double>();
      else if (key == "a") c.a = v;
      else if (key == "b") c.b = v;
      else if (key == "gamma_lo") c.gamma_lo = v;
      else if (key == "gamma_hi") c.gamma_hi = v;
      else if (key == "phi_truncation") c.phi_truncation = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "samples") c.samples = v.get<int>();
      else if (key == "threads") c.threads = v.get<int>();
      else if (key == "bound_threads") c.bound_threads = v.get<int>();
      else if (key == "max_epochs") c.max_epochs = v.get<int>();
      else if (key == "abscissae") c.abscissae = v.get<int>();
      else if (key == "partition_enumeration_limit") c.partition_enumeration_limit = v.get<double>();
      else if (key == "anneal") {
        auto& a = c.anneal;
        for (const auto& [k2, w] : v.items()) {
          if (k2 == "iterations") a.iterations = w.get<int>();
          else if (k2 == "initial_temperature") a.initial_temperature = w.get<double>();
          else if (k2 == "cooling") a.cooling = w.get<double>();
          else if (k2 == "cooling_interval") a.cooling_interval = w.get<int>();
          else if (k2 == "proposal_scale") a.proposal_scale = w.get<double>();
          else if (k2 == "restarts") a.restarts = w.get<int>();
          else if (k2 == "exhaustive_limit") a.exhaustive_limit = w.get<std::size_t>();
          else if (k2 == "polish_rounds") a.polish_rounds = w.get<int>();
          else if (k2 == "probes") a.probes = w.get<int>();
          else throw ConfigurationError("unknown anneal key '" + k2 + "'");
        }
      } else {
        throw ConfigurationError("unknown configuration key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ConfigurationError(std::string("bad configuration value: ") + e.what());
  }
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open configuration file " + path);
  RunConfig c;
  try {
    merge_json(c, json::parse(in));
  } catch (const json::parse_error& e) {
    throw InputError("configuration file " + path + ": " + e.what());
  }
  return c;
}

// ---- sample records -------------------------------------------------------

inline json flatten(const Matrix& m) {
  json a = json::array();
  for (int s = 0; s < m.rows(); ++s)
    for (int t = 0; t < m.cols(); ++t) a.push_back(m(s, t));
  return a;
}

inline Matrix unflatten(const json& a, int K) {
  if (!a.is_array() || static_cast<int>(a.size()) != K * K) throw InputError("matrix entry has the wrong size");
  Matrix m(K, K);
  for (int s = 0; s < K; ++s)
    for (int t = 0; t < K; ++t) m(s, t) = a[s * K + t].get<double>();
  return m;
}

inline json sample_record(std::uint64_t seed_offset, const CftpResult& r, const CategoricalPanel& panel) {
  const auto& st = r.state;
  json phi = json::array(), counts = json::array();
  for (const auto& m : st.Phi) phi.push_back(flatten(m));
  for (int l = 1; l <= st.k; ++l) {
    const CountMatrix N = cluster_counts(l, st.Z, st.S, panel);
    counts.push_back(flatten(N.cast<double>()));
  }
  return {{"seed_offset", seed_offset},
          {"coalescence_time", r.coalescence_time},
          {"epochs", r.epochs},
          {"K", panel.K},
          {"Z", st.Z},
          {"C", st.C},
          {"S", st.S},
          {"k", st.k},
          {"Phi", phi},
          {"gamma", flatten(st.gamma)},
          {"epsilon_of_kernel", r.epsilon},
          {"cluster_counts", counts}};
}

inline ChainState state_of_record(const json& rec) {
  try {
    ChainState st;
    const int K = rec.at("K").get<int>();
    st.Z = rec.at("Z").get<std::vector<int>>();
    st.C = rec.at("C").get<std::vector<int>>();
    st.S = rec.at("S").get<std::vector<int>>();
    st.k = rec.at("k").get<int>();
    for (const auto& m : rec.at("Phi")) st.Phi.push_back(unflatten(m, K));
    st.gamma = unflatten(rec.at("gamma"), K);
    return st;
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed sample record: ") + e.what());
  }
}

inline json metadata(const RunConfig& cfg, const CategoricalPanel& panel) {
  std::vector<std::size_t> lengths;
  for (const auto& y : panel.series) lengths.push_back(y.size());
  return {{"software", "pmix"}, {"version", software_version}, {"config", to_json(cfg)},
          {"n", panel.n()},     {"K", panel.K},                {"series_lengths", lengths}};
}

// Draws cfg.samples perfect samples with seed offsets 0, 1, ... and writes
// them in offset order to `out`. Samples are computed `threads` at a time.
inline void run_sampling(const RunConfig& cfg, const CategoricalPanel& panel, std::ostream& out) {
  cfg.validate();
  const PriorConfig prior = cfg.prior(panel.K);
  const CftpConfig cc = cfg.cftp();
  const int batch = std::max(cfg.threads, 1);
  for (int first = 0; first < cfg.samples; first += batch) {
    const int count = std::min(batch, cfg.samples - first);
    std::vector<std::string> lines(count);
    parallel_for(count, cfg.threads, [&](std::size_t q, std::size_t) {
      const std::uint64_t offset = first + q;
      const auto r = run_cftp(panel, prior, RandomLedger(cfg.seed, offset), cc);
      lines[q] = sample_record(offset, r, panel).dump();
    });
    for (const auto& l : lines) out << l << '\n';
    out.flush();
  }
}

inline void run_sampling(const RunConfig& cfg, const CategoricalPanel& panel) {
  std::ofstream meta(cfg.output + ".meta.json");
  if (!meta) throw InputError("cannot write " + cfg.output + ".meta.json");
  meta << metadata(cfg, panel).dump(2) << '\n';
  std::ofstream out(cfg.output);
  if (!out) throw InputError("cannot write " + cfg.output);
  run_sampling(cfg, panel, out);
}

inline std::vector<json> read_records(std::istream& in) {
  std::vector<json> recs;
  std::string line;
  std::size_t at = 0;
  while (std::getline(in, line)) {
    ++at;
    if (io_detail::trim(line).empty()) continue;
    try {
      recs.push_back(json::parse(line));
    } catch (const json::parse_error& e) {
      throw InputError(io_detail::at_line(at) + "invalid sample record: " + e.what());
    }
  }
  if (recs.empty()) throw InputError("sample file holds no records");
  return recs;
}

// ---- summaries -------------------------------------------------------------

// Conditional mean of every transition probability and the row totals of
// one cluster, from its counts and gamma.
struct ClusterSummary {
  Matrix zeta;
  std::vector<double> heterogeneity;
};

inline ClusterSummary summarize_cluster(const Matrix& counts, const Matrix& gamma) {
  const int K = static_cast<int>(gamma.rows());
  ClusterSummary c{Matrix(K, K), std::vector<double>(K)};
  for (int s = 0; s < K; ++s) {
    const double sigma = (counts.row(s) + gamma.row(s)).sum();
    c.heterogeneity[s] = sigma;
    for (int t = 0; t < K; ++t) c.zeta(s, t) = (counts(s, t) + gamma(s, t)) / sigma;
  }
  return c;
}

inline json summarize(const std::vector<json>& recs) {
  const int K = recs.front().at("K").get<int>();
  const std::size_t n = recs.front().at("Z").size();
  std::map<int, std::size_t> k_hist;
  std::vector<std::vector<double>> co(n, std::vector<double>(n, 0.0));
  std::vector<Matrix> series_zeta(n, Matrix::Zero(K, K));
  std::vector<std::vector<double>> series_het(n, std::vector<double>(K, 0.0));
  json per_sample = json::array();
  for (const auto& rec : recs) {
    const auto st = state_of_record(rec);
    if (st.Z.size() != n) throw InputError("sample records disagree on the number of series");
    ++k_hist[st.k];
    std::vector<ClusterSummary> clusters;
    json cl = json::array();
    for (int l = 0; l < st.k; ++l) {
      clusters.push_back(summarize_cluster(unflatten(rec.at("cluster_counts").at(l), K), st.gamma));
      int members = 0;
      for (int z : st.Z) members += st.S[z - 1] == l + 1;
      cl.push_back({{"series", members},
                    {"zeta", flatten(clusters.back().zeta)},
                    {"heterogeneity", clusters.back().heterogeneity}});
    }
    per_sample.push_back({{"seed_offset", rec.at("seed_offset")}, {"k", st.k}, {"clusters", cl}});
    for (std::size_t i = 0; i < n; ++i) {
      const int li = st.S[st.Z[i] - 1];
      series_zeta[i] += clusters[li - 1].zeta;
      for (int s = 0; s < K; ++s) series_het[i][s] += clusters[li - 1].heterogeneity[s];
      for (std::size_t q = 0; q < n; ++q) co[i][q] += li == st.S[st.Z[q] - 1];
    }
  }
  const double m = static_cast<double>(recs.size());
  json hist = json::object(), dist = json::object(), zeta = json::array(), het = json::array();
  for (auto [k, c] : k_hist) {
    hist[std::to_string(k)] = c;
    dist[std::to_string(k)] = c / m;
  }
  for (auto& row : co)
    for (double& v : row) v /= m;
  for (std::size_t i = 0; i < n; ++i) {
    zeta.push_back(flatten(series_zeta[i] / m));
    json h = json::array();
    for (double v : series_het[i]) h.push_back(v / m);
    het.push_back(h);
  }
  return {{"samples", recs.size()},
          {"K", K},
          {"n", n},
          {"k_histogram", hist},
          {"k_distribution", dist},
          {"co_clustering", co},
          {"series_zeta_mean", zeta},
          {"series_heterogeneity_mean", het},
          {"per_sample", per_sample}};
}

// Histogram and co-clustering CSVs next to `prefix`.
inline void write_plot_data(const json& report, const std::string& prefix) {
  std::ofstream h(prefix + "_k_histogram.csv");
  if (!h) throw InputError("cannot write " + prefix + "_k_histogram.csv");
  h << "k,count,fraction\n";
  for (const auto& [k, c] : report.at("k_histogram").items())
    h << k << ',' << c.get<std::size_t>() << ',' << report.at("k_distribution").at(k).get<double>() << '\n';
  std::ofstream co(prefix + "_co_clustering.csv");
  if (!co) throw InputError("cannot write " + prefix + "_co_clustering.csv");
  for (const auto& row : report.at("co_clustering")) {
    bool first = true;
    for (const auto& v : row) {
      co << (first ? "" : ",") << v.get<double>();
      first = false;
    }
    co << '\n';
  }
}

}  // namespace pmix
