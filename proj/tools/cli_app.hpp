#pragma once

#include "threelp/analysis.hpp"
#include "threelp/core_model.hpp"
#include "threelp/gaits.hpp"
#include "threelp/oracle.hpp"
#include "threelp/transition.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <locale>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

namespace threelp::cli {

namespace fs = std::filesystem;

/// Exit codes: 0 success, 1 failed check or infeasible result, 2 usage or config error.
enum Exit { ok = 0, failed = 1, usage = 2 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string param_hash;
  std::string version = kVersion;
  double wall_time_s = 0;
  std::vector<std::string> outputs;

  nlohmann::json to_json() const {
    return {{"command", command},     {"config", config_path},      {"param_hash", param_hash},
            {"version", version},     {"wall_time_s", wall_time_s}, {"outputs", outputs}};
  }
};

/// Values of "lo:step:hi" (inclusive) or a single number.
inline std::vector<double> parse_range(const std::string& text, const std::string& flag) {
  std::vector<double> parts;
  std::istringstream is(text);
  is.imbue(std::locale::classic());
  std::string tok;
  while (std::getline(is, tok, ':')) {
    std::istringstream ts(tok);
    ts.imbue(std::locale::classic());
    double v;
    if (!(ts >> v) || !(ts >> std::ws).eof() || !std::isfinite(v))
      throw UsageError(flag + ": invalid range '" + text + "'");
    parts.push_back(v);
  }
  if (parts.size() == 1) return parts;
  if (parts.size() != 3) throw UsageError(flag + ": expected lo:step:hi, got '" + text + "'");
  const double lo = parts[0], step = parts[1], hi = parts[2];
  if (!(step > 0.0) || hi < lo) throw UsageError(flag + ": empty range '" + text + "'");
  const auto n = static_cast<long>(std::floor((hi - lo) / step + 1e-9)) + 1;
  std::vector<double> out;
  for (long i = 0; i < n; ++i) out.push_back(lo + static_cast<double>(i) * step);
  return out;
}

class App {
 public:
  App(std::ostream& out, std::ostream& err) : out_(out), err_(err) {
    out_.imbue(std::locale::classic());
    app_.require_subcommand(1);
    app_.set_version_flag("--version", std::string(kVersion));

    auto common = [this](CLI::App* sub) {
      sub->add_option("--config", config_path_, "Model config file (key = value)");
      sub->add_option("--body", body_, "Base body before the config is applied")
          ->check(CLI::IsMember({"adult", "kid"}));
      sub->add_option("--out", out_dir_, "Output directory");
    };

    relax_ = app_.add_subcommand("relax", "Find the stride time of pseudo-passive walking");
    common(relax_);
    relax_->add_option("--tds", tds_, "Double-support duration (s)");
    relax_->add_option("--lo", relax_lo_, "Lower end of the stride-time scan (s)");
    relax_->add_option("--hi", relax_hi_, "Upper end of the stride-time scan (s)");
    relax_->add_option("--step", relax_step_, "Scan step (s)");

    gait_ = app_.add_subcommand("gait", "Synthesize one periodic gait");
    common(gait_);
    gait_->add_option("--scenario", scenario_, "pseudo-passive | long-double-support | stage-walk | cop-modulated | lip-like");
    gait_->add_option("--speed", speed_, "Walking speed (m/s)");
    gait_->add_option("--freq", freq_, "Step frequency (steps/s)");
    gait_->add_option("--tds-policy", policy_text_, "fixed:R or human");
    gait_->add_flag("--relax-timing", relax_timing_, "Use the pseudo-passive stride time");
    gait_->add_option("--foot-length", foot_length_, "Foot length for CoP modulation (m)");
    gait_->add_option("--samples", samples_, "Trajectory samples");
    gait_->add_option("--side", side_, "Support side (+1 or -1)");

    sweep_ = app_.add_subcommand("sweep", "Economy over a speed x frequency grid");
    common(sweep_);
    sweep_->add_option("--speeds", speeds_text_, "lo:step:hi (m/s)");
    sweep_->add_option("--freqs", freqs_text_, "lo:step:hi (steps/s)");
    sweep_->add_option("--tds-policy", policy_text_, "fixed:R or human");
    sweep_->add_option("--measure", measure_text_, "total-positive | com-positive | com-extrema");
    sweep_->add_option("--threads", threads_, "Worker threads (0: all cores)");

    validate_ = app_.add_subcommand("validate", "Compare closed-form maps with RK4 integration");
    common(validate_);
    validate_->add_option("--seed", seed_, "Random seed");
    validate_->add_option("--trials", trials_, "Random initial states");
    validate_->add_option("--step", rk_step_, "RK4 step (s)");

    dump_ = app_.add_subcommand("dump", "Write the stride transition matrices as JSON");
    common(dump_);
  }

  int run(int argc, const char* const* argv) {
    try {
      app_.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e, out_, err_);
      return code == 0 ? Exit::ok : Exit::usage;
    }
    const auto start = std::chrono::steady_clock::now();
    try {
      ModelConfig cfg;
      cfg.params = default_params(body_ == "kid" ? BodySize::kid : BodySize::adult);
      if (!config_path_.empty()) cfg = load_config(config_path_, cfg);
      manifest_.config_path = config_path_;
      int code = Exit::ok;
      if (*relax_) code = relax(cfg);
      else if (*gait_) code = gait(cfg);
      else if (*sweep_) code = sweep(cfg);
      else if (*validate_) code = validate(cfg);
      else if (*dump_) code = dump(cfg);
      manifest_.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      write_manifest();
      return code;
    } catch (const ConfigError& e) {
      err_ << "config error [" << e.key() << "]: " << e.what() << '\n';
      return Exit::usage;
    } catch (const UsageError& e) {
      err_ << "error: " << e.what() << '\n';
      return Exit::usage;
    } catch (const std::exception& e) {
      err_ << "error: " << e.what() << '\n';
      return Exit::failed;
    }
  }

 private:
  fs::path output(const std::string& name) {
    fs::create_directories(out_dir_);
    manifest_.outputs.push_back(name);
    return fs::path(out_dir_) / name;
  }

  void write_manifest() {
    if (manifest_.command.empty()) return;
    fs::create_directories(out_dir_);
    std::ofstream f(fs::path(out_dir_) / "manifest.json");
    f << manifest_.to_json().dump(2) << '\n';
  }

  void begin(const std::string& command, const ModelConfig& cfg) {
    manifest_.command = command;
    manifest_.param_hash = hex64(fnv1a(canonical_text(cfg.params, cfg.timing)));
  }

  template <class T>
  static std::string num(T v, int digits = 17) {
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << std::setprecision(digits) << v;
    return os.str();
  }

  int relax(ModelConfig cfg) {
    if (tds_) cfg.timing.t_ds = *tds_;
    if (!(cfg.timing.t_ds > 0.0)) throw UsageError("--tds must be positive");
    begin("relax", cfg);
    const double lo = relax_lo_ ? *relax_lo_ : std::max(0.3, cfg.timing.t_ds + 0.02);
    const double hi = relax_hi_ ? *relax_hi_ : 1.5;
    if (!(hi > lo) || !(lo > cfg.timing.t_ds) || !(relax_step_ > 0.0))
      throw UsageError("relax scan needs T_ds < lo < hi and a positive step");
    RelaxResult r;
    try {
      r = find_relax_time(cfg.params, cfg.timing.t_ds, lo, hi, relax_step_);
    } catch (const NoRelaxTime& e) {
      write_scan(cfg, lo, hi);
      err_ << "no pseudo-passive stride time: " << e.what() << '\n';
      return Exit::failed;
    }
    write_scan(cfg, lo, hi);
    const auto sys = build_periodicity(cfg.params, StrideTiming{cfg.timing.t_ds, r.t_relax - cfg.timing.t_ds});
    const auto sp = singular_spectrum(sys, Reduced::R1);
    out_ << std::fixed << std::setprecision(9) << "T_relax = " << r.t_relax << " s\n" << std::defaultfloat;
    out_ << "T_ds = " << num(cfg.timing.t_ds) << " s, T_ss = " << num(r.t_relax - cfg.timing.t_ds) << " s\n";
    out_ << "sagittal sigma_min/sigma_max at root = " << num(r.ratio, 6) << '\n';
    out_ << "smallest R1 singular values (relative):";
    for (std::size_t i = sp.sigma.size() >= 3 ? sp.sigma.size() - 3 : 0; i < sp.sigma.size(); ++i)
      out_ << ' ' << num(sp.sigma[i] / sp.sigma.front(), 6);
    out_ << '\n';
    return Exit::ok;
  }

  void write_scan(const ModelConfig& cfg, double lo, double hi) {
    std::ofstream f(output("relax_scan.csv"));
    f.imbue(std::locale::classic());
    f << std::setprecision(17) << "T_stride,sagittal_ratio";
    for (int i = 0; i < 7; ++i) f << ",r1_sigma" << i;
    f << '\n';
    const int n = std::max(2, static_cast<int>(std::ceil((hi - lo) / relax_step_)) + 1);
    for (int i = 0; i < n; ++i) {
      const double T = lo + (hi - lo) * i / (n - 1);
      const auto sys = build_periodicity(cfg.params, StrideTiming{cfg.timing.t_ds, T - cfg.timing.t_ds});
      const auto sp = singular_spectrum(sys, Reduced::R1);
      f << T << ',' << sagittal_relax_ratio(sys);
      for (double s : sp.sigma) f << ',' << s / sp.sigma.front();
      f << '\n';
    }
  }

  TdsPolicy policy_or(const ModelConfig& cfg) const {
    if (policy_text_.empty()) return TdsPolicy::fixed(cfg.timing.t_ds / cfg.timing.stride());
    try {
      return TdsPolicy::parse(policy_text_);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--tds-policy: ") + e.what());
    }
  }

  int gait(ModelConfig cfg) {
    const auto scenario = parse_scenario(scenario_);
    if (!scenario) throw UsageError("--scenario: unknown scenario '" + scenario_ + "'");
    if (!(speed_ > 0.0)) throw UsageError("--speed must be positive");
    if (side_ != 1 && side_ != -1) throw UsageError("--side must be +1 or -1");
    if (samples_ < 2) throw UsageError("--samples must be at least 2");
    if (relax_timing_ && freq_) throw UsageError("--relax-timing and --freq are exclusive");
    if (relax_timing_) {
      const auto r = find_relax_time(cfg.params, cfg.timing.t_ds, std::max(0.3, cfg.timing.t_ds + 0.02), 1.5);
      cfg.timing.t_ss = r.t_relax - cfg.timing.t_ds;
    } else if (freq_) {
      if (!(*freq_ > 0.0)) throw UsageError("--freq must be positive");
      cfg.timing = StrideTiming::from_stride(1.0 / *freq_, policy_or(cfg).ratio_at(speed_));
    }
    begin("gait", cfg);
    ScenarioSpec spec;
    spec.kind = *scenario;
    spec.foot_length = foot_length_;
    GaitSolution g;
    try {
      g = synthesize_gait(cfg.params, cfg.timing, speed_, spec, side_);
    } catch (const InfeasibleGait& e) {
      err_ << "infeasible gait: constraint block '" << e.block() << "' cannot be satisfied\n";
      return Exit::failed;
    }
    const auto samples = sample_trajectory(g, samples_);
    {
      std::ofstream f(output("trajectory.csv"));
      write_trajectory_csv(f, samples);
    }
    const auto& S = SelectionMatrices::get();
    double lateral = 0;
    for (const auto& s : samples) lateral = std::max(lateral, std::abs(s.com_velocity.y()));
    nlohmann::json j = to_json(g);
    j["report"] = {{"periodicity_residual", g.diagnostics.periodicity},
                   {"end_swing_speed", g.diagnostics.end_swing_speed},
                   {"torque_norm", g.diagnostics.torque_norm},
                   {"hip_torque_norm", (S.S_Mh * g.q0).norm()},
                   {"ankle_torque_norm", (S.S_Ma * g.q0).norm()},
                   {"ramp_ankle_torque_norm", (S.S_rMa * g.q0).norm()},
                   {"max_lateral_com_speed", lateral},
                   {"sagittal_com_velocity_range", sagittal_com_velocity_range(samples)},
                   {"com_work_per_distance", com_work_per_distance(g)}};
    if (g.scenario == Scenario::cop_modulated) j["report"]["cop_ramp_torque"] = cop_ramp_torque(cfg.params, foot_length_);
    {
      std::ofstream f(output("solution.json"));
      f << j.dump(2) << '\n';
    }
    out_ << "scenario " << to_string(g.scenario) << ", v = " << num(speed_) << " m/s, T_ds = "
         << num(g.timing.t_ds) << " s, T_ss = " << num(g.timing.t_ss) << " s\n";
    for (const auto& [k, v] : j["report"].items()) out_ << "  " << k << " = " << num(v.get<double>(), 6) << '\n';
    return Exit::ok;
  }

  int sweep(ModelConfig cfg) {
    const auto speeds = parse_range(speeds_text_, "--speeds");
    const auto freqs = parse_range(freqs_text_, "--freqs");
    TdsPolicy policy;
    try {
      policy = TdsPolicy::parse(policy_text_.empty() ? "human" : policy_text_);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--tds-policy: ") + e.what());
    }
    const auto measure = parse_work_measure(measure_text_);
    if (!measure) throw UsageError("--measure: unknown measure '" + measure_text_ + "'");
    begin("sweep", cfg);
    EconomyOptions opt;
    opt.measure = *measure;
    opt.threads = threads_;
    const auto grid = economy_surface(cfg.params, speeds, freqs, policy, opt);
    {
      std::ofstream f(output("economy.csv"));
      write_economy_csv(f, grid);
    }
    std::vector<PeakPoint> line;
    for (std::size_t i = 0; i < grid.speeds.size(); ++i) {
      if (auto pk = row_peak(grid, i)) line.push_back(*pk);
      else err_ << "warning: no feasible cell at speed " << num(grid.speeds[i], 6) << '\n';
    }
    {
      std::ofstream f(output("peak_line.csv"));
      write_peak_line_csv(f, line);
    }
    const double frac = grid.feasible_fraction();
    out_ << "policy " << policy.text() << ", measure " << to_string(*measure) << ", " << speeds.size() << " x "
         << freqs.size() << " cells, feasible fraction " << num(frac, 4) << '\n';
    for (const auto& p : line)
      out_ << "  v = " << num(p.speed, 6) << " m/s: peak " << num(p.frequency, 6) << " steps/s"
           << (p.boundary ? " (grid boundary)" : "") << '\n';
    return frac >= 0.9 ? Exit::ok : Exit::failed;
  }

  int validate(const ModelConfig& cfg) {
    if (trials_ < 1) throw UsageError("--trials must be at least 1");
    begin("validate", cfg);
    const auto m = stride_map(cfg.params, cfg.timing);
    std::mt19937_64 rng(seed_);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    double e_ds = 0, e_ss = 0, e_full = 0;
    OracleConfig oc;
    oc.step = rk_step_;
    for (int k = 0; k < trials_; ++k) {
      Vector23 q;
      for (int i = 0; i < kStateDim; ++i) q[i] = unit(rng);
      q.segment<8>(idx::Mhy) *= 20.0;
      q.segment<4>(idx::F1x) *= 20.0;
      q[idx::d] = unit(rng) < 0 ? -1.0 : 1.0;
      oc.span = OracleSpan::double_only;
      const Vector23 q_mid = integrate(cfg.params, cfg.timing, q, oc).final_state();
      oc.span = OracleSpan::single_only;
      const Vector23 q_end = integrate(cfg.params, cfg.timing, q_mid, oc).final_state();
      e_ds = std::max(e_ds, (q_mid - m.H_ds_end * q).cwiseAbs().maxCoeff());
      e_ss = std::max(e_ss, (q_end - m.H_ss_end * q_mid).cwiseAbs().maxCoeff());
      e_full = std::max(e_full, (q_end - m.H * q).cwiseAbs().maxCoeff());
    }
    std::ostringstream rep;
    rep.imbue(std::locale::classic());
    rep << "validate seed=" << seed_ << " trials=" << trials_ << " step=" << num(rk_step_) << '\n'
        << "params " << canonical_text(cfg.params, cfg.timing) << '\n'
        << std::scientific << std::setprecision(3)
        << "max discrepancy double support: " << e_ds << '\n'
        << "max discrepancy single support: " << e_ss << '\n'
        << "max discrepancy full stride:    " << e_full << '\n';
    const bool pass = std::max({e_ds, e_ss, e_full}) <= 1e-6;
    rep << (pass ? "PASS" : "FAIL") << " (tolerance 1e-6)\n";
    {
      std::ofstream f(output("validate_report.txt"));
      f << rep.str();
    }
    out_ << rep.str();
    return pass ? Exit::ok : Exit::failed;
  }

  int dump(const ModelConfig& cfg) {
    begin("dump", cfg);
    const auto m = stride_map(cfg.params, cfg.timing);
    std::ofstream f(output("maps.json"));
    f << maps_to_json(m).dump(1) << '\n';
    out_ << "wrote " << (fs::path(out_dir_) / "maps.json").string() << '\n';
    return Exit::ok;
  }

  std::ostream& out_;
  std::ostream& err_;
  CLI::App app_{"Three-linear-pendulum gait synthesis and analysis", "threelp"};
  CLI::App *relax_, *gait_, *sweep_, *validate_, *dump_;
  RunManifest manifest_;

  std::string config_path_;
  std::string body_ = "adult";
  std::string out_dir_ = ".";
  std::optional<double> tds_, relax_lo_, relax_hi_, freq_;
  double relax_step_ = 0.01;
  std::string scenario_ = "pseudo-passive";
  double speed_ = 1.0;
  std::string policy_text_;
  bool relax_timing_ = false;
  double foot_length_ = 0.24;
  int samples_ = 1001;
  int side_ = 1;
  std::string speeds_text_ = "0.8:0.1:2.0";
  std::string freqs_text_ = "0.8:0.05:3.0";
  std::string measure_text_ = "total-positive";
  unsigned threads_ = 0;
  std::uint64_t seed_ = 1;
  int trials_ = 100;
  double rk_step_ = 1e-5;
};

inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  App app(out, err);
  return app.run(argc, argv);
}

}  // namespace threelp::cli
