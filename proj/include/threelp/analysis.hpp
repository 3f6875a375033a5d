#pragma once

#include "threelp/core_model.hpp"
#include "threelp/dynamics.hpp"
#include "threelp/gaits.hpp"
#include "threelp/transition.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <locale>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace threelp {

struct TrajectorySample {
  double t = 0;
  Phase phase = Phase::double_support;
  double phase_time = 0;
  Vector23 q = Vector23::Zero();
  Vec4 X = Vec4::Zero();
  Vec4 Xdot = Vec4::Zero();
  Vec3 y1, y2, y3;   // point masses
  Vec3 swing_foot, stance_foot;
  ForceSolution forces;
  Eigen::Vector2d com = Eigen::Vector2d::Zero();
  Eigen::Vector2d com_velocity = Eigen::Vector2d::Zero();
  double com_kinetic_energy = 0;
};

/// State along a stride without integration: each phase is advanced by
/// repeated products with the exponential of its autonomous generator.
class StrideEvaluator {
 public:
  StrideEvaluator(const StrideMap& m, const Vector23& q0) : m_(m), q0_(q0), q_ds_end_(m.H_ds_end * q0) {}

  Vector23 operator()(double t) const {
    const double tds = m_.timing.t_ds;
    if (t <= tds) return advance(m_.ds, q0_, std::max(t, 0.0));
    return advance(m_.ss, q_ds_end_, std::min(t - tds, m_.timing.t_ss));
  }

  bool swing_moving(double t) const { return t > m_.timing.t_ds; }
  const StrideMap& maps() const { return m_; }

  /// States at a sorted list of stride times, reusing one exponential per
  /// distinct spacing inside each phase.
  std::vector<Vector23> at_times(const std::vector<double>& ts) const {
    std::vector<Vector23> out;
    out.reserve(ts.size());
    const double tds = m_.timing.t_ds;
    Eigen::VectorXd z;
    const PhaseMap* cur = nullptr;
    double last = 0.0, last_dt = -1.0;
    Eigen::MatrixXd E;
    for (double t : ts) {
      const PhaseMap* ph = t <= tds ? &m_.ds : &m_.ss;
      const double local = t <= tds ? std::max(t, 0.0) : std::min(t - tds, m_.timing.t_ss);
      if (ph != cur) {
        cur = ph;
        z = Eigen::VectorXd::Zero(ph->generator().rows());
        z.head<kStateDim>() = ph == &m_.ds ? q0_ : q_ds_end_;
        last = 0.0;
        last_dt = -1.0;
      }
      const double dt = local - last;
      if (dt > 0.0) {
        if (std::abs(dt - last_dt) > 1e-15 * std::max(1.0, dt)) {
          E = (ph->generator() * dt).exp();
          last_dt = dt;
        }
        z = E * z;
        last = local;
      }
      out.push_back(z.head<kStateDim>());
    }
    return out;
  }

 private:
  static Vector23 advance(const PhaseMap& ph, const Vector23& q, double dt) {
    if (dt <= 0.0) return q;
    Eigen::VectorXd z = Eigen::VectorXd::Zero(ph.generator().rows());
    z.head<kStateDim>() = q;
    return ((ph.generator() * dt).exp() * z).head<kStateDim>();
  }

  const StrideMap& m_;
  Vector23 q0_, q_ds_end_;
};

namespace analysis_detail {

inline std::vector<double> uniform_times(const StrideTiming& tm, int n, bool include_boundary) {
  const double T = tm.stride();
  std::vector<double> ts;
  ts.reserve(n + 1);
  for (int i = 0; i < n; ++i) ts.push_back(i == n - 1 ? T : T * i / (n - 1));
  if (include_boundary) {
    const auto it = std::lower_bound(ts.begin(), ts.end(), tm.t_ds);
    if (it == ts.end() || std::abs(*it - tm.t_ds) > 1e-12 * T) ts.insert(it, tm.t_ds);
  }
  return ts;
}

inline double com_ke(const BodyParams& p, const Vector23& q, bool moving) {
  const Eigen::Vector2d v = com_velocity_map(p, moving) * q;
  return 0.5 * p.total_mass() * v.squaredNorm();
}

}  // namespace analysis_detail

/// Samples at n uniform times over the stride, plus the phase boundary when
/// it is not already on the grid. The boundary sample belongs to double support.
inline std::vector<TrajectorySample> sample_trajectory(const GaitSolution& g, int n) {
  if (n < 2) throw std::invalid_argument("trajectory needs at least two samples");
  if (!g.maps) throw std::invalid_argument("gait has no transition maps");
  const StrideMap& m = *g.maps;
  const BodyParams& p = m.params;
  const auto ts = analysis_detail::uniform_times(m.timing, n, true);
  const auto qs = StrideEvaluator(m, g.q0).at_times(ts);
  std::vector<TrajectorySample> out;
  out.reserve(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    TrajectorySample s;
    s.t = ts[i];
    s.q = qs[i];
    const bool ds = s.t <= m.timing.t_ds;
    s.phase = ds ? Phase::double_support : Phase::single_support;
    s.phase_time = ds ? std::max(s.t, 0.0) : std::min(s.t - m.timing.t_ds, m.timing.t_ss);
    s.X = s.q.head<4>();
    s.Xdot = s.q.segment<4>(idx::dX2x);
    const Geometry geo = geometry(p, s.q);
    s.y1 = geo.y1;
    s.y2 = geo.y2;
    s.y3 = geo.y3;
    s.swing_foot = Vec3(s.q[idx::X2x], s.q[idx::X2y], 0.0);
    s.stance_foot = Vec3(s.q[idx::X3x], s.q[idx::X3y], 0.0);
    s.forces = solve_forces(ds ? m.ds.ode() : m.ss.ode(), s.q, s.phase_time);
    s.com = com_position_map(p) * s.q;
    s.com_velocity = com_velocity_map(p, !ds) * s.q;
    s.com_kinetic_energy = 0.5 * p.total_mass() * s.com_velocity.squaredNorm();
    out.push_back(std::move(s));
  }
  return out;
}

/// Center of pressure of the stance foot relative to its reference point.
inline Eigen::Vector2d stance_cop(const TrajectorySample& s) {
  const double fz = s.forces.F3.z();
  if (fz == 0.0) return Eigen::Vector2d::Constant(std::numeric_limits<double>::quiet_NaN());
  return {-s.forces.M3.y() / fz, s.forces.M3.x() / fz};
}

inline double sagittal_com_velocity_range(const std::vector<TrajectorySample>& samples) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& s : samples) {
    lo = std::min(lo, s.com_velocity.x());
    hi = std::max(hi, s.com_velocity.x());
  }
  return hi - lo;
}

struct GrfShapeReport {
  double plateau_deviation = 0;  // single support, relative to body weight
  double ramp_nonlinearity = 0;  // double support, relative to body weight
  double sum_deviation = 0;      // double support F2z + F3z vs weight, relative
  bool ok(double tol = 1e-9) const {
    return plateau_deviation <= tol && ramp_nonlinearity <= tol && sum_deviation <= tol;
  }
};

/// Checks that the vertical ground forces have a trapezoidal profile.
inline GrfShapeReport grf_shape(const std::vector<TrajectorySample>& samples, const BodyParams& p) {
  const double W = p.weight();
  GrfShapeReport r;
  std::vector<const TrajectorySample*> ds;
  for (const auto& s : samples) {
    if (s.phase == Phase::single_support) {
      r.plateau_deviation = std::max(r.plateau_deviation, std::abs(s.forces.F3.z() - W) / W);
      r.plateau_deviation = std::max(r.plateau_deviation, std::abs(s.forces.F2.z()) / W);
    } else {
      ds.push_back(&s);
      r.sum_deviation = std::max(r.sum_deviation, std::abs(s.forces.F2.z() + s.forces.F3.z() - W) / W);
    }
  }
  if (ds.size() >= 3) {
    const auto* a = ds.front();
    const auto* b = ds.back();
    const double span = b->t - a->t;
    for (const auto* s : ds) {
      const double u = span > 0 ? (s->t - a->t) / span : 0.0;
      for (int leg = 0; leg < 2; ++leg) {
        auto fz = [&](const TrajectorySample* x) { return leg == 0 ? x->forces.F2.z() : x->forces.F3.z(); };
        const double line = (1.0 - u) * fz(a) + u * fz(b);
        r.ramp_nonlinearity = std::max(r.ramp_nonlinearity, std::abs(fz(s) - line) / W);
      }
    }
  }
  return r;
}

enum class WorkMeasure {
  com_extrema,     // (KE_max − KE_min) of the CoM
  com_positive,    // positive increments of CoM kinetic energy
  total_positive,  // positive increments of the summed point-mass kinetic energy
};

inline const char* to_string(WorkMeasure w) {
  switch (w) {
    case WorkMeasure::com_extrema: return "com-extrema";
    case WorkMeasure::com_positive: return "com-positive";
    case WorkMeasure::total_positive: return "total-positive";
  }
  return "?";
}

inline std::optional<WorkMeasure> parse_work_measure(const std::string& s) {
  for (auto w : {WorkMeasure::com_extrema, WorkMeasure::com_positive, WorkMeasure::total_positive})
    if (s == to_string(w)) return w;
  return std::nullopt;
}

namespace analysis_detail {

struct Extremum {
  double t, value;
};

/// Kinetic energy along the stride, its sampled local extrema refined by
/// golden-section search to 1e-10 s. Refinement stays inside the phase.
inline std::vector<Extremum> energy_profile(const StrideEvaluator& ev, WorkMeasure measure, int n) {
  const StrideMap& m = ev.maps();
  const BodyParams& p = m.params;
  auto energy = [&](double t, const Vector23& q) {
    const bool moving = ev.swing_moving(t);
    return measure == WorkMeasure::total_positive ? mass_kinetic_energy(p, q, moving) : com_ke(p, q, moving);
  };
  auto energy_at = [&](double t) { return energy(t, ev(t)); };

  const auto ts = uniform_times(m.timing, n, true);
  const auto qs = ev.at_times(ts);
  std::vector<double> e(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) e[i] = energy(ts[i], qs[i]);

  const double tds = m.timing.t_ds;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  std::vector<Extremum> pts{{ts.front(), e.front()}};
  for (std::size_t i = 1; i + 1 < ts.size(); ++i) {
    if (ts[i] == tds) {
      pts.push_back({ts[i], e[i]});
      continue;
    }
    const double dl = e[i] - e[i - 1], dr = e[i + 1] - e[i];
    const bool is_max = dl > 0 && dr <= 0, is_min = dl < 0 && dr >= 0;
    if (!is_max && !is_min) continue;
    const double sign = is_max ? -1.0 : 1.0;
    double a = ts[i - 1], b = ts[i + 1];
    if (ts[i] < tds) b = std::min(b, tds);
    else a = std::max(a, tds + 1e-15);
    auto f = [&](double t) { return sign * energy_at(t); };
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > 1e-10) {
      if (fc < fd) {
        b = d; d = c; fd = fc; c = b - gr * (b - a); fc = f(c);
      } else {
        a = c; c = d; fc = fd; d = a + gr * (b - a); fd = f(d);
      }
    }
    const double t = 0.5 * (a + b);
    double v = energy_at(t);
    if (sign * v > sign * e[i]) {  // sampled point was better
      pts.push_back({ts[i], e[i]});
    } else {
      pts.push_back({t, v});
    }
  }
  pts.push_back({ts.back(), e.back()});
  return pts;
}

}  // namespace analysis_detail

/// Mechanical work per unit weight-normalized distance, J/(kg·m).
inline double work_per_distance(const GaitSolution& g, WorkMeasure measure, int samples = 1000) {
  if (!(g.v_des > 0.0)) throw std::invalid_argument("work per distance needs a positive speed");
  if (!g.maps) throw std::invalid_argument("gait has no transition maps");
  const StrideMap& m = *g.maps;
  const StrideEvaluator ev(m, g.q0);
  const auto pts = analysis_detail::energy_profile(ev, measure, samples);
  double work = 0;
  if (measure == WorkMeasure::com_extrema) {
    double lo = pts.front().value, hi = lo;
    for (const auto& x : pts) {
      lo = std::min(lo, x.value);
      hi = std::max(hi, x.value);
    }
    work = hi - lo;
  } else {
    for (std::size_t i = 1; i < pts.size(); ++i) work += std::max(0.0, pts[i].value - pts[i - 1].value);
  }
  return work / (m.params.total_mass() * g.v_des * m.stride());
}

/// Kinetic-energy swing of the CoM per kilogram and meter.
inline double com_work_per_distance(const GaitSolution& g, int samples = 1000) {
  return work_per_distance(g, WorkMeasure::com_extrema, samples);
}

/// Double-support share of the stride observed in human walking.
inline double human_double_support_ratio(double speed) { return 0.12 + (2.5 - speed) * 0.09; }

struct TdsPolicy {
  enum class Kind { fixed_ratio, human_law } kind = Kind::fixed_ratio;
  double ratio = 0.1;

  static TdsPolicy fixed(double r) { return {Kind::fixed_ratio, r}; }
  static TdsPolicy human() { return {Kind::human_law, 0.0}; }

  double ratio_at(double speed) const {
    return kind == Kind::human_law ? human_double_support_ratio(speed) : ratio;
  }

  std::string text() const {
    if (kind == Kind::human_law) return "human";
    std::ostringstream os;
    os.imbue(std::locale::classic());
    os << "fixed:" << std::setprecision(17) << ratio;
    return os.str();
  }

  /// "fixed:R" with 0 < R < 1, or "human".
  static TdsPolicy parse(const std::string& s) {
    if (s == "human") return human();
    const std::string prefix = "fixed:";
    if (s.rfind(prefix, 0) == 0) {
      std::istringstream is(s.substr(prefix.size()));
      is.imbue(std::locale::classic());
      double r;
      if (is >> r && is.eof() && r > 0.0 && r < 1.0) return fixed(r);
    }
    throw std::invalid_argument("invalid double-support policy '" + s + "' (expected fixed:R or human)");
  }
};

struct EconomyGrid {
  std::vector<double> speeds, frequencies;
  TdsPolicy policy;
  WorkMeasure measure = WorkMeasure::total_positive;
  Eigen::MatrixXd economy;    // speeds × frequencies, NaN where infeasible
  Eigen::MatrixXd tds_ratio;  // speeds × frequencies
  std::vector<std::vector<bool>> feasible;
  std::vector<std::vector<std::string>> failure;

  double feasible_fraction() const {
    std::size_t n = 0, ok = 0;
    for (const auto& row : feasible)
      for (bool f : row) {
        ++n;
        ok += f;
      }
    return n ? static_cast<double>(ok) / n : 0.0;
  }
};

struct EconomyOptions {
  WorkMeasure measure = WorkMeasure::total_positive;
  int samples = 1000;
  unsigned threads = 0;  // 0: hardware concurrency
};

struct EconomyCell {
  double economy = std::numeric_limits<double>::quiet_NaN();
  double ratio = 0;
  bool feasible = false;
  std::string failure;
};

/// Minimal-torque gait economy (inverse of work per distance) at one speed and step frequency.
inline EconomyCell economy_cell(const BodyParams& p, double speed, double frequency, const TdsPolicy& policy,
                                const EconomyOptions& opt = {}) {
  EconomyCell c;
  c.ratio = policy.ratio_at(speed);
  try {
    if (!(frequency > 0.0)) throw std::invalid_argument("frequency must be positive");
    if (!(c.ratio > 0.0 && c.ratio < 1.0)) throw std::invalid_argument("double-support ratio outside (0, 1)");
    const StrideTiming tm = StrideTiming::from_stride(1.0 / frequency, c.ratio);
    const auto ctx = make_context(p, tm, false);
    const auto g = solve_gait(ctx, speed, ScenarioSpec{});
    const double w = work_per_distance(g, opt.measure, opt.samples);
    if (!(std::isfinite(w) && w > 0.0)) throw std::runtime_error("non-positive work");
    c.economy = 1.0 / w;
    c.feasible = true;
  } catch (const std::exception& e) {
    c.failure = e.what();
  }
  return c;
}

/// Cells are computed in parallel; results land in fixed slots, so the grid
/// does not depend on the thread count.
inline EconomyGrid economy_surface(const BodyParams& p, const std::vector<double>& speeds,
                                   const std::vector<double>& frequencies, const TdsPolicy& policy,
                                   const EconomyOptions& opt = {}) {
  if (speeds.empty() || frequencies.empty()) throw std::invalid_argument("economy grid needs speeds and frequencies");
  if (!std::is_sorted(speeds.begin(), speeds.end()) || !std::is_sorted(frequencies.begin(), frequencies.end()))
    throw std::invalid_argument("economy grid axes must be ascending");
  const std::size_t ns = speeds.size(), nf = frequencies.size(), n = ns * nf;
  std::vector<EconomyCell> cells(n);
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n;)
      cells[k] = economy_cell(p, speeds[k / nf], frequencies[k % nf], policy, opt);
  };
  unsigned threads = opt.threads ? opt.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, n));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  EconomyGrid g;
  g.speeds = speeds;
  g.frequencies = frequencies;
  g.policy = policy;
  g.measure = opt.measure;
  g.economy.resize(ns, nf);
  g.tds_ratio.resize(ns, nf);
  g.feasible.assign(ns, std::vector<bool>(nf, false));
  g.failure.assign(ns, std::vector<std::string>(nf));
  for (std::size_t k = 0; k < n; ++k) {
    const auto i = k / nf, j = k % nf;
    g.economy(i, j) = cells[k].economy;
    g.tds_ratio(i, j) = cells[k].ratio;
    g.feasible[i][j] = cells[k].feasible;
    g.failure[i][j] = cells[k].failure;
  }
  return g;
}

struct PeakPoint {
  double speed = 0;
  double frequency = 0;
  double economy = 0;
  bool boundary = false;
};

/// Frequency of maximal economy at one speed, refined by a parabola through
/// the discrete maximum and its two neighbours. Empty if no cell is feasible.
inline std::optional<PeakPoint> row_peak(const EconomyGrid& g, std::size_t i) {
  const int nf = static_cast<int>(g.frequencies.size());
  int best = -1;
  for (int j = 0; j < nf; ++j)
    if (g.feasible[i][j] && (best < 0 || g.economy(i, j) > g.economy(i, best))) best = j;
  if (best < 0) return std::nullopt;
  PeakPoint pk{g.speeds[i], g.frequencies[best], g.economy(i, best), best == 0 || best == nf - 1};
  if (!pk.boundary && g.feasible[i][best - 1] && g.feasible[i][best + 1]) {
    const double x0 = g.frequencies[best - 1], x1 = g.frequencies[best], x2 = g.frequencies[best + 1];
    const double y0 = g.economy(i, best - 1), y1 = g.economy(i, best), y2 = g.economy(i, best + 1);
    const double d01 = (y1 - y0) / (x1 - x0), d12 = (y2 - y1) / (x2 - x1);
    const double a = (d12 - d01) / (x2 - x0);
    if (a < 0.0) {
      const double b = d01 - a * (x0 + x1);
      const double xv = std::clamp(-b / (2.0 * a), x0, x2);
      pk.frequency = xv;
      pk.economy = y0 + (xv - x0) * (d01 + a * (xv - x1));
    }
  }
  return pk;
}

inline std::vector<PeakPoint> peak_line(const EconomyGrid& g) {
  std::vector<PeakPoint> out;
  for (std::size_t i = 0; i < g.speeds.size(); ++i) {
    auto pk = row_peak(g, i);
    if (!pk) {
      std::ostringstream os;
      os.imbue(std::locale::classic());
      os << "no feasible cell at speed " << g.speeds[i];
      throw std::domain_error(os.str());
    }
    out.push_back(*pk);
  }
  return out;
}

namespace csv {

inline std::ostream& prepare(std::ostream& os) {
  os.imbue(std::locale::classic());
  os << std::setprecision(17);
  return os;
}

}  // namespace csv

inline void write_trajectory_csv(std::ostream& os, const std::vector<TrajectorySample>& samples) {
  csv::prepare(os);
  os << "t,X2x,X2y,X1x,X1y,vX2x,vX2y,vX1x,vX1y,comx,comy,comvx,comvy,grf3z,grf2z,tau2y,tau2x,M3y,M3x,tau1y,tau1x\n";
  for (const auto& s : samples) {
    const auto& f = s.forces;
    const double row[] = {s.t,         s.X[0],        s.X[1],        s.X[2],        s.X[3],
                          s.Xdot[0],   s.Xdot[1],     s.Xdot[2],     s.Xdot[3],     s.com.x(),
                          s.com.y(),   s.com_velocity.x(), s.com_velocity.y(), f.F3.z(), f.F2.z(),
                          f.tau2.y(),  f.tau2.x(),    f.M3.y(),      f.M3.x(),      f.tau1.y(),
                          f.tau1.x()};
    for (std::size_t i = 0; i < std::size(row); ++i) os << (i ? "," : "") << row[i];
    os << '\n';
  }
}

inline void write_economy_csv(std::ostream& os, const EconomyGrid& g) {
  csv::prepare(os);
  os << "speed,frequency,tds_ratio,economy,feasible\n";
  for (std::size_t i = 0; i < g.speeds.size(); ++i)
    for (std::size_t j = 0; j < g.frequencies.size(); ++j) {
      os << g.speeds[i] << ',' << g.frequencies[j] << ',' << g.tds_ratio(i, j) << ',';
      if (g.feasible[i][j]) os << g.economy(i, j);
      else os << "nan";
      os << ',' << (g.feasible[i][j] ? 1 : 0) << '\n';
    }
}

inline void write_peak_line_csv(std::ostream& os, const std::vector<PeakPoint>& line) {
  csv::prepare(os);
  os << "speed,frequency,economy,boundary\n";
  for (const auto& p : line)
    os << p.speed << ',' << p.frequency << ',' << p.economy << ',' << (p.boundary ? 1 : 0) << '\n';
}

}  // namespace threelp
