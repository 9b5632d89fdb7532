// pmix: perfect samples from a Dirichlet-process mixture of Markov chains.
//
//   pmix sample    --config run.json [--samples 10 --output out.jsonl ...]
//   pmix summarize out.jsonl [--plot-prefix plots/run]
//   pmix diagnose  logconcavity|envelopes|bounds --config run.json
//
// Exit codes: 0 success, 1 input or configuration error, 2 sampler pathology
// (including non-coalescence).

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "pmix/diagnostics.hpp"
#include "pmix/io.hpp"

using namespace pmix;

namespace {

struct Flags {
  std::string config;
  json overrides = json::object();
};

// Registers one flag per RunConfig key; values given on the command line
// override the configuration file.
void add_run_flags(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "JSON configuration file");
  auto str = [&](const char* flag, const char* key, const char* help) {
    app->add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.overrides[key] = v; }, help);
  };
  auto num = [&](const char* flag, const char* key, const char* help) {
    app->add_option_function<double>(flag, [&f, key](double v) { f.overrides[key] = v; }, help);
  };
  auto integer = [&](const char* flag, const char* key, const char* help) {
    app->add_option_function<long long>(flag, [&f, key](long long v) { f.overrides[key] = v; }, help);
  };
  // Matrices accept a scalar or JSON text such as "[[1,2],[3,4]]".
  auto matrix = [&](const char* flag, const char* key, const char* help) {
    app->add_option_function<std::string>(
        flag,
        [&f, key](const std::string& v) {
          try {
            f.overrides[key] = json::parse(v);
          } catch (const json::parse_error&) {
            throw ConfigurationError(std::string("--") + key + " needs a number or a JSON matrix");
          }
        },
        help);
  };
  str("--data", "data", "panel file (one series per line)");
  str("--format", "format", "csv, jsonl or auto");
  str("--output", "output", "sample file (JSON lines)");
  integer("--K", "K", "number of states (0: largest state in the data)");
  integer("--M", "M", "number of slots");
  num("--alpha", "alpha", "concentration");
  matrix("--a", "a", "Gamma shape of gamma");
  matrix("--b", "b", "Gamma rate of gamma");
  matrix("--gamma-lo", "gamma_lo", "lower end of the gamma support");
  matrix("--gamma-hi", "gamma_hi", "upper end of the gamma support");
  num("--phi-truncation", "phi_truncation", "stick fractions restricted to [d, 1-d]");
  integer("--seed", "seed", "master seed");
  integer("--samples", "samples", "number of perfect samples");
  integer("--threads", "threads", "perfect samples computed concurrently");
  integer("--bound-threads", "bound_threads", "workers inside each bound computation");
  integer("--max-epochs", "max_epochs", "epoch cap");
  integer("--abscissae", "abscissae", "envelope abscissae per coordinate");
  num("--partition-enumeration-limit", "partition_enumeration_limit", "label boxes enumerated directly");
  auto anneal = [&](const char* flag, const char* key) {
    app->add_option_function<double>(flag, [&f, key](double v) { f.overrides["anneal"][key] = v; }, "annealing");
  };
  anneal("--anneal-iterations", "iterations");
  anneal("--anneal-initial-temperature", "initial_temperature");
  anneal("--anneal-cooling", "cooling");
  anneal("--anneal-cooling-interval", "cooling_interval");
  anneal("--anneal-proposal-scale", "proposal_scale");
  anneal("--anneal-restarts", "restarts");
  anneal("--anneal-exhaustive-limit", "exhaustive_limit");
  anneal("--anneal-polish-rounds", "polish_rounds");
  anneal("--anneal-probes", "probes");
}

// Integer-valued anneal flags arrive as doubles.
void integral_anneal(json& j) {
  if (!j.contains("anneal")) return;
  for (auto& [k, v] : j["anneal"].items())
    if (k != "initial_temperature" && k != "cooling" && k != "proposal_scale") v = static_cast<long long>(v.get<double>());
}

RunConfig resolve(Flags& f) {
  RunConfig c = f.config.empty() ? RunConfig{} : load_config(f.config);
  integral_anneal(f.overrides);
  merge_json(c, f.overrides);
  c.validate();
  return c;
}

CategoricalPanel load_panel(const RunConfig& c) {
  if (c.data.empty()) throw ConfigurationError("no data file given (--data or \"data\")");
  return ingest(c.data, format_from_name(c.format, c.data), c.K);
}

std::vector<int> parse_labels(const std::string& s) {
  std::vector<int> v;
  std::stringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    try {
      v.push_back(std::stoi(tok));
    } catch (const std::exception&) {
      throw InputError("'" + tok + "' is not an integer label");
    }
  }
  return v;
}

int cmd_sample(Flags& f) {
  const auto cfg = resolve(f);
  const auto panel = load_panel(cfg);
  for (const auto& w : cfg.prior(panel.K).validate()) std::cerr << "warning: " << w << '\n';
  run_sampling(cfg, panel);
  std::cerr << "wrote " << cfg.samples << " samples to " << cfg.output << '\n';
  return 0;
}

int cmd_summarize(const std::string& path, const std::string& plot_prefix, const std::string& out) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open sample file " + path);
  const auto report = summarize(read_records(in));
  if (!plot_prefix.empty()) write_plot_data(report, plot_prefix);
  if (out.empty()) {
    std::cout << report.dump(2) << '\n';
  } else {
    std::ofstream o(out);
    if (!o) throw InputError("cannot write " + out);
    o << report.dump(2) << '\n';
  }
  return 0;
}

int cmd_diagnose(const std::string& which, Flags& f, const std::string& z, const std::string& s, int configs,
                 int probes) {
  json report;
  if (which == "logconcavity") {
    ScanConfig sc;
    sc.configurations = configs;
    const auto cfg = resolve(f);
    Substream rng(splitmix64(cfg.seed));
    const auto phi = scan_phi_marginal(rng, sc), gam = scan_gamma_conditional(rng, sc);
    const auto w = search_gamma_marginal_witness();
    auto scan = [](const ScanReport& r) {
      return json{{"configurations", r.configurations}, {"points", r.points}, {"violations", r.violations},
                  {"largest_second_difference", r.worst}};
    };
    report = {{"phi_marginal", scan(phi)}, {"gamma_conditional", scan(gam)}};
    if (w.found)
      report["gamma_marginal_witness"] = {{"x", w.x}, {"a", w.a}, {"y", w.y}, {"b", w.b},
                                          {"second_derivative", w.d2}, {"numeric_second_derivative", w.d2_numeric}};
    else
      report["gamma_marginal_witness"] = nullptr;
  } else if (which == "envelopes") {
    const auto cfg = resolve(f);
    const auto panel = load_panel(cfg);
    const auto prior = cfg.prior(panel.K);
    const auto Z = z.empty() ? std::vector<int>(panel.n(), 1) : parse_labels(z);
    const auto S = s.empty() ? std::vector<int>(prior.M, 1) : parse_labels(s);
    const auto e = envelope_report(Z, S, prior, panel, cfg.cftp().kernel, splitmix64(cfg.seed));
    json coords = json::array();
    for (std::size_t i = 0; i < e.names.size(); ++i)
      coords.push_back({{"name", e.names[i]}, {"epsilon", e.coordinate_epsilon[i]}, {"eta", e.coordinate_eta[i]}});
    report = {{"epsilon", e.epsilon}, {"eta", e.eta}, {"coordinates", coords}};
  } else if (which == "bounds") {
    const auto cfg = resolve(f);
    const auto panel = load_panel(cfg);
    const auto r = bound_property_suite(panel, cfg.prior(panel.K), cfg.cftp().bounds, configs, probes, cfg.seed);
    report = {{"configurations", r.configurations}, {"property_failures", r.property_failures},
              {"probes", r.probes},                 {"probe_violations", r.probe_violations},
              {"repair_rate", r.repair_rate()},     {"internal_repairs", r.internal_repairs}};
  } else {
    throw ConfigurationError("unknown diagnostic '" + which + "' (logconcavity, envelopes or bounds)");
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perfect sampling for Dirichlet-process mixtures of Markov chains"};
  app.require_subcommand(1);

  Flags sample_flags, diag_flags;
  auto* sample = app.add_subcommand("sample", "draw perfect posterior samples");
  add_run_flags(sample, sample_flags);

  std::string sample_file, plot_prefix, summary_out;
  auto* summ = app.add_subcommand("summarize", "summarize a sample file");
  summ->add_option("samples", sample_file, "sample file written by `pmix sample`")->required();
  summ->add_option("--plot-prefix", plot_prefix, "write <prefix>_k_histogram.csv and <prefix>_co_clustering.csv");
  summ->add_option("--out", summary_out, "write the report here instead of stdout");

  std::string which, zs, ss;
  int configs = 100, probes = 10;
  auto* diag = app.add_subcommand("diagnose", "log-concavity scans, envelope constants, bound properties");
  diag->add_option("which", which, "logconcavity, envelopes or bounds")->required();
  add_run_flags(diag, diag_flags);
  diag->add_option("--Z", zs, "allocations for envelopes, e.g. 1,1,2");
  diag->add_option("--S", ss, "slot partition for envelopes, e.g. 1,2,2");
  diag->add_option("--configurations", configs, "random configurations");
  diag->add_option("--probes", probes, "probes per configuration (bounds)");

  try {
    app.parse(argc, argv);
    if (*sample) return cmd_sample(sample_flags);
    if (*summ) return cmd_summarize(sample_file, plot_prefix, summary_out);
    return cmd_diagnose(which, diag_flags, zs, ss, configs, probes);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.error_class());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
