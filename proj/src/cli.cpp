#include "mpp/cli.hpp"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <stdexcept>

#include <CLI11.hpp>
#include <json.hpp>

#include "mpp/branching.hpp"
#include "mpp/coupling.hpp"
#include "mpp/flow.hpp"
#include "mpp/lab.hpp"
#include "mpp/model_io.hpp"
#include "mpp/output.hpp"
#include "mpp/parallel.hpp"
#include "mpp/simulate.hpp"
#include "mpp/spectral.hpp"

namespace mpp::cli {

namespace {

using nlohmann::json;

struct RunConfig {
  // Model selection.
  std::string model_path;
  std::string builtin = "barebones";
  double a1 = 1.0;
  double a2 = 3.0;
  double gamma = 0.6;
  std::string phase = "invasion";
  double eta = 0.25;
  double lambda = 2.0;
  double mu = 1.0;
  std::int64_t N = 1000;

  std::size_t replicas = 1000;
  std::uint64_t seed = 42;
  double alpha = kDefaultAlpha;
  std::vector<double> delta{0.1};
  std::string out_dir = "out";
  unsigned threads = 0;

  std::vector<std::int64_t> Z0;
  std::vector<std::int64_t> N_list;
  double T = 1.0;
  double horizon = 10.0;
  double tol = 1e-10;
  std::size_t points = 201;
  std::vector<double> eps{1e-2, 5e-3, 2e-3, 1e-3};
  std::string method = "maximal";
  bool residual_draw = false;
  std::int64_t n0 = 100000;
  std::optional<std::size_t> m;
  std::string experiment;
  std::vector<std::string> argv;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

PopulationModel build_model(const RunConfig& c, bool scale_given) {
  PopulationModel m;
  if (!c.model_path.empty()) {
    m = load_model(c.model_path);
  } else if (c.builtin == "barebones") {
    if (c.phase != "invasion" && c.phase != "extinction") throw UsageError("--phase must be invasion or extinction");
    m = barebones(c.a1, c.a2, c.gamma, c.phase == "invasion" ? Phase::kInvasion : Phase::kExtinction);
  } else if (c.builtin == "logistic") {
    m = logistic_model();
  } else if (c.builtin == "two-type") {
    m = symmetric_two_type(c.eta);
  } else if (c.builtin == "birth-death") {
    m = linear_birth_death(c.lambda, c.mu);
  } else {
    throw UsageError("unknown builtin model '" + c.builtin + "' (barebones, logistic, two-type, birth-death)");
  }
  if (scale_given || c.model_path.empty()) m = m.with_scale(c.N);
  return m;
}

std::vector<std::int64_t> initial_z(const RunConfig& c, std::size_t d2) {
  if (c.Z0.empty()) return std::vector<std::int64_t>(d2, 1);
  if (c.Z0.size() != d2) throw UsageError("--Z0 needs " + std::to_string(d2) + " entries");
  return c.Z0;
}

json vec_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json header(const char* experiment, const RunConfig& c) {
  return {{"experiment", experiment}, {"build", build_version()}, {"seed", c.seed}};
}

// Writes <out>/<stem>.csv and <out>/<stem>.json and echoes the JSON.
void emit(const RunConfig& c, std::ostream& out, const std::string& stem, const std::string* csv, const json& j) {
  const std::filesystem::path dir(c.out_dir);
  if (csv) write_text_file(dir / (stem + ".csv"), *csv);
  const auto text = json_text(j);
  write_text_file(dir / (stem + ".json"), text);
  out << text;
}

void log_run(const RunConfig& c) {
  std::string line = "mpp";
  for (const auto& a : c.argv) line += " " + a;
  append_run_log(c.out_dir, line);
}

// --- subcommands ----------------------------------------------------------

int cmd_validate(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  const auto rep = validate_model(m);
  json j{{"model", m.name}, {"d", m.d}, {"d1", m.d1}, {"N", m.N}, {"passed", rep.passed}};
  j["violations"] = json::array();
  for (const auto& v : rep.violations) j["violations"].push_back({{"id", v.id}, {"where", v.where}, {"message", v.message}});
  if (rep.passed) {
    const auto sp = perron(structure_at(m, m.x0).B0);
    j["beta0"] = sp.beta0;
    j["u"] = vec_json(sp.u);
    j["v"] = vec_json(sp.v);
    j["regime"] = sp.beta0 > 0.0 ? "invasion" : "extinction";
  }
  out << json_text(j);
  return rep.passed ? kExitOk : kExitFailure;
}

int cmd_simulate(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  const auto z = initial_z(c, m.d2());
  std::vector<std::int64_t> X0;
  for (std::size_t i = 0; i < m.d1; ++i) X0.push_back(std::llround(static_cast<double>(m.N) * m.x0[i]));
  X0.insert(X0.end(), z.begin(), z.end());
  std::vector<StopSpec> stops{StopSpec::horizon(c.horizon), StopSpec::second_block_zero(false)};
  const auto sp = perron(structure_at(m, m.x0).B0);
  double vz0 = 0.0;
  std::vector<double> v;
  for (std::size_t i = 0; i < z.size(); ++i) {
    v.push_back(sp.v[static_cast<Eigen::Index>(i)]);
    vz0 += v.back() * static_cast<double>(z[i]);
  }
  stops.push_back(StopSpec::weighted_level(v, std::pow(static_cast<double>(m.N), 1.0 - c.alpha) + vz0, false));
  SimOptions opts;
  if (c.points < 2) throw UsageError("--points must be at least 2");
  for (std::size_t k = 0; k < c.points; ++k) opts.snapshot_grid.push_back(c.horizon * k / (c.points - 1));
  const auto tr = simulate(m, X0, stops, {c.seed, 0}, opts);

  std::vector<std::string> head{"t"};
  for (std::size_t i = 0; i < m.d; ++i) head.push_back("x" + std::to_string(i));
  CsvTable t(head);
  for (const auto& s : tr.snapshots) {
    std::vector<std::string> row{format_number(s.t)};
    for (double x : s.x) row.push_back(format_number(x));
    t.add_row(row);
  }
  json j = header("simulate", c);
  j["model"] = m.name;
  j["N"] = m.N;
  j["initial"] = X0;
  j["reason"] = to_string(tr.reason);
  j["end_time"] = tr.end_time;
  j["event_count"] = tr.event_count;
  j["final_state"] = tr.final_state;
  j["tau_x0"] = tr.stopping.tau_x0 ? json(*tr.stopping.tau_x0) : json(nullptr);
  j["tau_alpha"] = tr.stopping.tau_alpha ? json(*tr.stopping.tau_alpha) : json(nullptr);
  const auto csv = t.str();
  emit(c, out, "simulate", &csv, j);
  return kExitOk;
}

int cmd_branching(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  const auto spec = branching_from_model(m);
  const auto z = initial_z(c, spec.d2);
  const auto w = w_shape_experiment(spec, z, c.T, c.replicas, c.seed, c.threads);
  auto j = w_shape_json(w);
  j["beta0"] = spec.spectral.beta0;
  j["u"] = vec_json(spec.spectral.u);
  j["v"] = vec_json(spec.spectral.v);
  j["survival"] = [&] {
    const auto s = survival_probability(spec, z, std::max<std::size_t>(c.replicas, 100), c.seed, c.threads);
    return json{{"p", s.p}, {"se", s.se}, {"ci_low", s.lo}, {"ci_high", s.hi}};
  }();
  const auto csv = w_shape_csv(w);
  emit(c, out, "branching", &csv, j);
  return kExitOk;
}

int cmd_flow(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  const auto z = initial_z(c, m.d2());
  Vec xi0(static_cast<Eigen::Index>(m.d));
  for (std::size_t i = 0; i < m.d; ++i) {
    xi0[static_cast<Eigen::Index>(i)] =
        i < m.d1 ? m.x0[i] : static_cast<double>(z[i - m.d1]) / static_cast<double>(m.N);
  }
  const auto tr = integrate(m, xi0, c.T, c.tol);
  if (c.points < 2) throw UsageError("--points must be at least 2");
  std::vector<std::string> head{"t"};
  for (std::size_t i = 0; i < m.d; ++i) head.push_back("xi" + std::to_string(i));
  CsvTable t(head);
  for (std::size_t k = 0; k < c.points; ++k) {
    const double tk = c.T * k / (c.points - 1);
    const Vec x = tr.at(tk);
    std::vector<std::string> row{format_number(tk)};
    for (Eigen::Index i = 0; i < x.size(); ++i) row.push_back(format_number(x[i]));
    t.add_row(row);
  }
  json j = header("flow", c);
  j["model"] = m.name;
  j["N"] = m.N;
  j["T"] = c.T;
  j["tol"] = c.tol;
  j["accepted_steps"] = tr.accepted;
  j["rejected_steps"] = tr.rejected;
  j["final_state"] = vec_json(tr.final_state());
  const auto sp = perron(structure_at(m, m.x0).B0);
  j["beta0"] = sp.beta0;
  if (sp.beta0 > 0.0) {
    TimescaleInput in;
    in.beta0 = sp.beta0;
    in.v = sp.v;
    in.N = static_cast<double>(m.N);
    in.alpha = c.alpha;
    in.Z0 = Vec(static_cast<Eigen::Index>(z.size()));
    for (std::size_t i = 0; i < z.size(); ++i) in.Z0[static_cast<Eigen::Index>(i)] = static_cast<double>(z[i]);
    const auto ts = timescales(in);
    j["t_xi"] = *ts.t_xi_alpha;
  }
  const auto csv = t.str();
  emit(c, out, "flow", &csv, j);
  return kExitOk;
}

int cmd_couple(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  const auto z = initial_z(c, m.d2());
  CoupleOptions o;
  if (c.method == "maximal") {
    o.method = CouplingMethod::kMaximal;
  } else if (c.method == "stepwise") {
    o.method = CouplingMethod::kStepwise;
  } else {
    throw UsageError("--method must be maximal or stepwise");
  }
  o.residual_draw = c.residual_draw;
  const auto Ns = c.N_list.empty() ? std::vector<std::int64_t>{c.N} : c.N_list;
  const auto rows = divergence_curve(m, z, Ns, c.alpha, c.replicas, c.seed, o, c.threads);
  json j = header("couple", c);
  j["model"] = m.name;
  j["alpha"] = c.alpha;
  j["method"] = to_string(o.method);
  j["replicas"] = c.replicas;
  j["rows"] = json::array();
  for (const auto& r : rows) {
    j["rows"].push_back({{"N", r.N}, {"divergence_fraction", r.fraction.p}, {"ci_low", r.fraction.lo},
                         {"ci_high", r.fraction.hi}});
  }
  const auto csv = divergence_csv(rows);
  emit(c, out, "divergence", &csv, j);
  return kExitOk;
}

struct TvRow {
  std::size_t m;
  TVEstimate tv;
  double exponent_variance;
};

TvRow tv_row(std::int64_t N, std::size_t m, std::size_t replicas, std::uint64_t seed, unsigned threads) {
  const auto samples = parallel_map(replicas, threads, [&](std::size_t i) {
    Rng rng({seed, i});
    return logistic_lr(N, m, rng);
  });
  std::vector<double> ex;
  for (const auto& s : samples) ex.push_back(s.exponent);
  return {m, tv_lower_from_lr(samples), sample_variance(ex)};
}

int cmd_tv(const RunConfig& c, std::ostream& out) {
  const double n = static_cast<double>(c.N);
  const auto m = c.m.value_or(static_cast<std::size_t>(std::floor(std::pow(n, 2.0 / 3.0))));
  const auto row = tv_row(c.N, m, c.replicas, c.seed, c.threads);
  const double a = static_cast<double>(m) / std::pow(n, 2.0 / 3.0);
  json j = header("tv", c);
  j["N"] = c.N;
  j["m"] = m;
  j["replicas"] = c.replicas;
  j["tv"] = row.tv.value;
  j["stderr"] = row.tv.std_error;
  j["method"] = to_string(row.tv.method);
  j["exponent_variance"] = row.exponent_variance;
  j["predicted_variance"] = a * a * a / 3.0;
  emit(c, out, "tv", nullptr, j);
  return kExitOk;
}

int cmd_escape(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  const auto z = initial_z(c, m.d2());
  const auto r = escape_delay_experiment(m, c.N, z, c.replicas, c.seed, c.alpha, c.threads);
  const auto csv = escape_csv(r);
  emit(c, out, "escape", &csv, escape_json(r));
  return kExitOk;
}

int cmd_extinction(const RunConfig& c, bool scale_given, std::ostream& out) {
  ExtinctionResult r;
  if (c.model_path.empty() && c.builtin == "birth-death") {
    r = extinction_experiment(birth_death_spec(c.lambda, c.mu), c.n0, c.replicas, c.seed, c.threads);
  } else {
    r = extinction_experiment(build_model(c, scale_given), c.n0, c.replicas, c.seed, c.threads);
  }
  const auto csv = extinction_csv(r);
  emit(c, out, "extinction", &csv, extinction_json(r));
  return kExitOk;
}

int cmd_three_phase(const RunConfig& c, std::ostream& out) {
  std::vector<ThreePhaseResult> runs(c.replicas);
  for (std::size_t i = 0; i < c.replicas; ++i) {
    runs[i] = three_phase_run(c.a1, c.a2, c.gamma, c.N, {c.seed, i}, c.delta.front());
  }
  const auto csv = three_phase_csv(runs);
  auto j = three_phase_json(runs);
  j["delta"] = c.delta.front();
  emit(c, out, "three_phase", &csv, j);
  return kExitOk;
}

int cmd_closeness(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  const auto z = initial_z(c, m.d2());
  const auto Ns = c.N_list.empty() ? std::vector<std::int64_t>{c.N} : c.N_list;
  const auto r = path_closeness_experiment(m, Ns, z, c.replicas, c.seed, c.T, c.points, c.threads);
  const auto csv = closeness_csv(r);
  emit(c, out, "closeness", &csv, closeness_json(r));
  return kExitOk;
}

int cmd_envelopes(const RunConfig& c, bool scale_given, std::ostream& out) {
  const auto m = build_model(c, scale_given);
  CsvTable t({"bound_id", "delta", "eps", "ratio"});
  json j = header("envelopes", c);
  j["model"] = m.name;
  j["fits"] = json::array();
  bool all = true;
  for (double delta : c.delta) {
    for (const auto& f : lemma_envelopes(m, c.eps, delta)) {
      for (const auto& p : f.points) {
        t.add_row({f.bound_id, format_number(f.delta), format_number(p.eps), format_number(p.ratio)});
      }
      j["fits"].push_back({{"bound_id", f.bound_id}, {"delta", f.delta}, {"fitted_constant", f.fitted_constant},
                           {"max_observed_ratio", f.max_observed_ratio}, {"pass", f.pass}});
      all = all && f.pass;
    }
  }
  j["all_pass"] = all;
  const auto csv = t.str();
  emit(c, out, "envelopes", &csv, j);
  return kExitOk;
}

// --- reproduce presets ------------------------------------------------------

int preset_spectral(RunConfig c, std::ostream& out) {
  const auto m = symmetric_two_type(0.25);
  const auto sp = perron(structure_at(m, m.x0).B0);
  json j = header("spectral", c);
  j["eta"] = 0.25;
  j["beta0"] = sp.beta0;
  j["u"] = vec_json(sp.u);
  j["v"] = vec_json(sp.v);
  emit(c, out, "spectral", nullptr, j);
  return kExitOk;
}

int preset_survival(RunConfig c, bool n_given, bool reps_given, std::ostream& out) {
  if (!n_given) c.N = 10000;
  if (!reps_given) c.replicas = 10000;
  const auto model = barebones(1, 3, 0.6, Phase::kInvasion);
  CsvTable t({"Z0", "escape_fraction", "se", "oracle"});
  json j = header("survival", c);
  j["N"] = c.N;
  j["rows"] = json::array();
  for (std::int64_t z0 : {1, 2}) {
    const std::vector<std::int64_t> z{z0};
    const auto r = escape_delay_experiment(model, c.N, z, c.replicas, derive_seed(c.seed, z0), kDefaultAlpha, c.threads);
    const double oracle = 1.0 - std::pow(0.6, static_cast<double>(z0));
    t.add_row({format_number(z0), format_number(r.survival.p), format_number(r.survival.se), format_number(oracle)});
    j["rows"].push_back({{"Z0", z0}, {"escape_fraction", r.survival.p}, {"se", r.survival.se}, {"oracle", oracle}});
  }
  const auto csv = t.str();
  emit(c, out, "survival", &csv, j);
  return kExitOk;
}

int preset_coupling(RunConfig c, bool reps_given, std::ostream& out) {
  if (!reps_given) c.replicas = 5000;
  c.builtin = "barebones";
  c.model_path.clear();
  c.N_list = {1000, 10000, 100000, 1000000};
  c.method = "maximal";
  c.residual_draw = false;
  c.Z0 = {1};
  return cmd_couple(c, false, out);
}

int preset_tv(RunConfig c, bool n_given, bool reps_given, std::ostream& out) {
  if (!n_given) c.N = 10000;
  if (!reps_given) c.replicas = 10000;
  const double n = static_cast<double>(c.N);
  CsvTable t({"m", "a", "tv", "stderr", "exponent_variance", "predicted_variance"});
  json j = header("appendixF-tv", c);
  j["N"] = c.N;
  j["replicas"] = c.replicas;
  j["rows"] = json::array();
  for (double p : {0.25, 1.0 / 3.0, 0.5, 2.0 / 3.0}) {
    const auto m = static_cast<std::size_t>(std::floor(std::pow(n, p) + 1e-9));
    const auto row = tv_row(c.N, m, c.replicas, derive_seed(c.seed, m), c.threads);
    const double a = static_cast<double>(m) / std::pow(n, 2.0 / 3.0);
    t.add_row({format_number(static_cast<std::uint64_t>(m)), format_number(a), format_number(row.tv.value),
               format_number(row.tv.std_error), format_number(row.exponent_variance), format_number(a * a * a / 3.0)});
    j["rows"].push_back({{"m", m}, {"a", a}, {"tv", row.tv.value}, {"stderr", row.tv.std_error},
                         {"exponent_variance", row.exponent_variance}, {"predicted_variance", a * a * a / 3.0}});
  }
  const auto csv = t.str();
  emit(c, out, "appendixF_tv", &csv, j);
  return kExitOk;
}

int preset_escape_scaling(RunConfig c, bool reps_given, std::ostream& out) {
  if (!reps_given) c.replicas = 2000;
  const auto model = barebones(1, 3, 0.6, Phase::kInvasion);
  const std::vector<std::int64_t> z{1};
  CsvTable t({"N", "mean_tau", "se", "survivors"});
  std::vector<double> lx, ly;
  json j = header("escape-scaling", c);
  j["rows"] = json::array();
  for (std::int64_t N : {10000, 100000, 1000000}) {
    const auto r = escape_delay_experiment(model, N, z, c.replicas, derive_seed(c.seed, N), kDefaultAlpha, c.threads);
    lx.push_back(std::log(static_cast<double>(N)));
    ly.push_back(r.tau.mean);
    t.add_row({format_number(N), format_number(r.tau.mean), format_number(r.tau.se), format_number(r.tau.n)});
    j["rows"].push_back({{"N", N}, {"mean_tau", r.tau.mean}, {"se", r.tau.se}, {"survivors", r.tau.n}});
  }
  const auto reg = linear_regression(lx, ly);
  j["slope"] = reg.slope;
  j["slope_se"] = reg.slope_se;
  j["predicted_slope"] = 7.0 / 12.0 / 2.4;
  const auto csv = t.str();
  emit(c, out, "escape_scaling", &csv, j);
  return kExitOk;
}

int preset_escape_gumbel(RunConfig c, bool n_given, bool reps_given, std::ostream& out) {
  if (!n_given) c.N = 1000000;
  if (!reps_given) c.replicas = 5000;
  c.builtin = "barebones";
  c.model_path.clear();
  c.Z0 = {1};
  return cmd_escape(c, false, out);
}

int preset_extinction(RunConfig c, bool reps_given, std::ostream& out) {
  if (!reps_given) c.replicas = 5000;
  c.builtin = "birth-death";
  c.model_path.clear();
  c.lambda = 1.0;
  c.mu = 1.8;
  c.n0 = 100000;
  return cmd_extinction(c, false, out);
}

int preset_closeness(RunConfig c, bool reps_given, std::ostream& out) {
  if (!reps_given) c.replicas = 300;
  c.builtin = "barebones";
  c.model_path.clear();
  c.N_list = {10000, 100000, 1000000};
  c.Z0 = {1};
  c.T = 1.0;
  c.points = 200;
  return cmd_closeness(c, false, out);
}

int preset_w_shape(RunConfig c, bool reps_given, std::ostream& out) {
  if (!reps_given) c.replicas = 100000;
  const auto spec = birth_death_spec(3.0, 0.6);
  CsvTable t({"Z0", "shape", "scale", "ks_stat", "positive"});
  json j = header("w-shape", c);
  j["rows"] = json::array();
  for (std::int64_t z0 : {1, 2, 3}) {
    const std::vector<std::int64_t> z{z0};
    const auto r = w_shape_experiment(spec, z, 4.0, c.replicas, derive_seed(c.seed, z0), c.threads);
    if (!r.fit) throw std::runtime_error("too few positive W samples to fit");
    t.add_row({format_number(z0), format_number(r.fit->shape), format_number(r.fit->scale), format_number(r.fit->ks_stat),
               format_number(r.fit->n)});
    j["rows"].push_back({{"Z0", z0}, {"shape", r.fit->shape}, {"scale", r.fit->scale}, {"ks_stat", r.fit->ks_stat},
                         {"positive", r.fit->n}, {"candidate_scales", r.candidate_scales}});
  }
  const auto csv = t.str();
  emit(c, out, "w_shape", &csv, j);
  return kExitOk;
}

int preset_gap(RunConfig c, bool n_given, bool reps_given, std::ostream& out) {
  if (!n_given) c.N = 10000;
  if (!reps_given) c.replicas = 1000;
  CsvTable t({"eta", "replica_rank", "rescaled_gap", "raw_gap"});
  json j = header("symmetric-gap", c);
  j["N"] = c.N;
  j["rows"] = json::array();
  for (double eta : {0.1, 0.25, 0.45}) {
    const auto g = symmetric_gap_experiment(eta, c.N, c.replicas, derive_seed(c.seed, static_cast<std::uint64_t>(eta * 100)),
                                            c.threads);
    for (std::size_t i = 0; i < g.raw.size(); ++i) {
      t.add_row({format_number(eta), format_number(static_cast<std::uint64_t>(i)), format_number(g.rescaled[i]),
                 format_number(g.raw[i])});
    }
    const auto ms = mean_se(g.rescaled);
    j["rows"].push_back({{"eta", eta}, {"survivors", g.raw.size()}, {"rescaled_mean", ms.mean}, {"rescaled_sd", ms.sd},
                         {"raw_sd", std::sqrt(sample_variance(g.raw))}});
  }
  const auto csv = t.str();
  emit(c, out, "symmetric_gap", &csv, j);
  return kExitOk;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"spectral",     "survival",          "coupling", "appendixF-tv",
                                              "escape-scaling", "escape-gumbel",   "extinction-gumbel",
                                              "closeness",    "w-shape",           "symmetric-gap"};
  return names;
}

int cmd_reproduce(const RunConfig& c, bool n_given, bool reps_given, std::ostream& out) {
  const auto& e = c.experiment;
  if (e == "spectral") return preset_spectral(c, out);
  if (e == "survival") return preset_survival(c, n_given, reps_given, out);
  if (e == "coupling") return preset_coupling(c, reps_given, out);
  if (e == "appendixF-tv") return preset_tv(c, n_given, reps_given, out);
  if (e == "escape-scaling") return preset_escape_scaling(c, reps_given, out);
  if (e == "escape-gumbel") return preset_escape_gumbel(c, n_given, reps_given, out);
  if (e == "extinction-gumbel") return preset_extinction(c, reps_given, out);
  if (e == "closeness") return preset_closeness(c, reps_given, out);
  if (e == "w-shape") return preset_w_shape(c, reps_given, out);
  if (e == "symmetric-gap") return preset_gap(c, n_given, reps_given, out);
  throw UsageError("unknown experiment '" + e + "'");
}

// --- option wiring ----------------------------------------------------------

void add_model_options(CLI::App* s, RunConfig& c) {
  s->add_option("--model", c.model_path, "Model JSON file")->check(CLI::ExistingFile);
  s->add_option("--builtin", c.builtin, "Built-in model: barebones, logistic, two-type, birth-death")
      ->capture_default_str();
  s->add_option("--a1", c.a1, "Barebones resident capacity a1")->capture_default_str();
  s->add_option("--a2", c.a2, "Barebones invader capacity a2")->capture_default_str();
  s->add_option("--gamma", c.gamma, "Barebones competition gamma")->capture_default_str();
  s->add_option("--phase", c.phase, "Barebones phase: invasion or extinction")->capture_default_str();
  s->add_option("--eta", c.eta, "Two-type mixing eta")->capture_default_str();
  s->add_option("--lambda", c.lambda, "Birth-death birth rate")->capture_default_str();
  s->add_option("--mu", c.mu, "Birth-death death rate")->capture_default_str();
}

void add_run_options(CLI::App* s, RunConfig& c, bool replicas = true) {
  s->add_option("--N", c.N, "Population scale N")->capture_default_str();
  s->add_option("--seed", c.seed, "Master seed (ESCAPE_SEED overrides)")->capture_default_str();
  s->add_option("--out", c.out_dir, "Output directory")->capture_default_str();
  s->add_option("--threads", c.threads, "Worker threads (0 = hardware)")->capture_default_str();
  if (replicas) s->add_option("--replicas", c.replicas, "Monte Carlo replicas")->capture_default_str();
}

void add_z0(CLI::App* s, RunConfig& c) {
  s->add_option("--Z0", c.Z0, "Initial second-block counts, comma separated (default all ones)")->delimiter(',');
}

void add_alpha(CLI::App* s, RunConfig& c) {
  s->add_option("--alpha", c.alpha, "Threshold exponent: level N^{1-alpha} + v.Z0")->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig c;
  c.argv = args;
  CLI::App app{"Density-dependent Markov population processes: invasion, branching approximation and escape", "mpp"};
  app.require_subcommand(1);
  app.fallthrough(false);

  auto* validate = app.add_subcommand(
      "validate", "Check the structural assumptions of a model (block structure, factorisation, Metzler B0, equilibrium)");
  add_model_options(validate, c);
  validate->add_option("--N", c.N, "Population scale N")->capture_default_str();

  auto* simulate = app.add_subcommand(
      "simulate", "Exact event-driven simulation of X_N with density snapshots and the escape time tau");
  add_model_options(simulate, c);
  add_run_options(simulate, c, false);
  add_z0(simulate, c);
  add_alpha(simulate, c);
  simulate->add_option("--horizon", c.horizon, "Time horizon")->capture_default_str();
  simulate->add_option("--points", c.points, "Snapshot grid points")->capture_default_str();

  auto* branching = app.add_subcommand(
      "branching", "Branching approximation of the second block: survival probability and the W limit at time T");
  add_model_options(branching, c);
  add_run_options(branching, c);
  add_z0(branching, c);
  branching->add_option("--T", c.T, "Time at which W is estimated")->capture_default_str();

  auto* flow = app.add_subcommand(
      "flow", "Deterministic limit xi from (x0^(1), Z0/N) by adaptive Dormand-Prince integration");
  add_model_options(flow, c);
  add_run_options(flow, c, false);
  add_z0(flow, c);
  add_alpha(flow, c);
  flow->add_option("--T", c.T, "End time")->capture_default_str();
  flow->add_option("--tol", c.tol, "Target accuracy in [1e-12, 1e-6]")->capture_default_str();
  flow->add_option("--points", c.points, "Output grid points")->capture_default_str();

  auto* couple = app.add_subcommand(
      "couple", "Coupling of the second block with its branching approximation: divergence fraction per N");
  add_model_options(couple, c);
  add_run_options(couple, c);
  add_z0(couple, c);
  add_alpha(couple, c);
  couple->add_option("--N-list", c.N_list, "Population scales, comma separated")->delimiter(',');
  couple->add_option("--method", c.method, "maximal or stepwise")->capture_default_str();
  couple->add_flag("--residual-draw", c.residual_draw, "Locate divergence times by residual sampling");

  auto* tv = app.add_subcommand(
      "tv", "Total variation between logistic growth and the Yule process over the first m jumps");
  add_run_options(tv, c);
  tv->add_option("--m", c.m, "Jump count (default floor(N^{2/3}))");

  auto* escape = app.add_subcommand(
      "escape", "Escape delay tau - t_xi of the invading block and its Gumbel fit");
  add_model_options(escape, c);
  add_run_options(escape, c);
  add_z0(escape, c);
  add_alpha(escape, c);

  auto* extinction = app.add_subcommand(
      "extinction", "Extinction time of a subcritical birth-death population, centred and compared with Gumbel");
  add_model_options(extinction, c);
  add_run_options(extinction, c);
  extinction->add_option("--n0", c.n0, "Initial population")->capture_default_str();

  auto* three = app.add_subcommand(
      "three-phase", "Full invasion trajectory split into branching, deterministic and extinction phases");
  add_run_options(three, c);
  three->add_option("--a1", c.a1, "Resident capacity a1")->capture_default_str();
  three->add_option("--a2", c.a2, "Invader capacity a2")->capture_default_str();
  three->add_option("--gamma", c.gamma, "Competition gamma")->capture_default_str();
  three->add_option("--delta", c.delta, "Radius of the ball around (0, a2)")->capture_default_str()->expected(1);

  auto* closeness = app.add_subcommand(
      "closeness", "Sup distance between x_N after tau and the time-shifted deterministic path");
  add_model_options(closeness, c);
  add_run_options(closeness, c);
  add_z0(closeness, c);
  closeness->add_option("--N-list", c.N_list, "Population scales, comma separated")->delimiter(',');
  closeness->add_option("--T", c.T, "Extra time beyond (5/12) log N / beta0")->capture_default_str();
  closeness->add_option("--points", c.points, "Grid points")->capture_default_str();

  auto* envelopes = app.add_subcommand(
      "envelopes", "Numerical check of the linearisation envelopes around the boundary equilibrium");
  add_model_options(envelopes, c);
  add_run_options(envelopes, c, false);
  envelopes->add_option("--eps", c.eps, "Start radii, comma separated")->delimiter(',')->capture_default_str();
  envelopes->add_option("--delta", c.delta, "Window radii, comma separated")->delimiter(',')->capture_default_str();

  auto* reproduce = app.add_subcommand("reproduce", "Named presets matching the acceptance checks");
  add_run_options(reproduce, c);
  reproduce->add_option("--experiment", c.experiment, "Preset name")
      ->required()
      ->check(CLI::IsMember(preset_names()));

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (const char* env = std::getenv("ESCAPE_SEED")) {
      try {
        std::size_t pos = 0;
        c.seed = std::stoull(env, &pos);
        if (pos != std::string(env).size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw UsageError(std::string("ESCAPE_SEED is not an unsigned integer: ") + env);
      }
    }
    if (!(c.alpha > 1.0 / 3.0 && c.alpha <= 0.5)) {
      err << "warning: alpha = " << c.alpha << " lies outside (1/3, 1/2]\n";
    }
    CLI::App* sub = app.get_subcommands().front();
    const bool n_given = sub->get_option_no_throw("--N") && sub->get_option("--N")->count() > 0;
    const bool reps_given = sub->get_option_no_throw("--replicas") && sub->get_option("--replicas")->count() > 0;
    const std::string name = sub->get_name();
    if (name == "validate") return cmd_validate(c, n_given, out);
    log_run(c);
    if (name == "simulate") return cmd_simulate(c, n_given, out);
    if (name == "branching") return cmd_branching(c, n_given, out);
    if (name == "flow") return cmd_flow(c, n_given, out);
    if (name == "couple") return cmd_couple(c, n_given, out);
    if (name == "tv") return cmd_tv(c, out);
    if (name == "escape") return cmd_escape(c, n_given, out);
    if (name == "extinction") return cmd_extinction(c, n_given, out);
    if (name == "three-phase") return cmd_three_phase(c, out);
    if (name == "closeness") return cmd_closeness(c, n_given, out);
    if (name == "envelopes") return cmd_envelopes(c, n_given, out);
    return cmd_reproduce(c, n_given, reps_given, out);
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ModelParseError& e) {
    err << "error: " << e.what();
    if (!e.field().empty()) err << " [field " << e.field() << "]";
    if (e.line() > 0) err << " [line " << e.line() << "]";
    err << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace mpp::cli
