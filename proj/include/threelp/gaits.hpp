#pragma once

#include "threelp/core_model.hpp"
#include "threelp/dynamics.hpp"
#include "threelp/transition.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace threelp {

class NoRelaxTime : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NullSpaceMismatch : public std::runtime_error {
 public:
  NullSpaceMismatch(int found, int expected)
      : std::runtime_error("null space has dimension " + std::to_string(found) + ", expected " +
                           std::to_string(expected)),
        found_(found),
        expected_(expected) {}
  int found() const { return found_; }
  int expected() const { return expected_; }

 private:
  int found_, expected_;
};

class InfeasibleGait : public std::runtime_error {
 public:
  InfeasibleGait(std::string block, const std::string& what)
      : std::runtime_error(what), block_(std::move(block)) {}
  const std::string& block() const { return block_; }

 private:
  std::string block_;
};

enum class Reduced { R0, R1 };

/// Symmetry of a stride: relative positions and pelvis velocity after the
/// stride, with swing and stance exchanged and the lateral axis mirrored,
/// equal those before it; the swing foot ends at rest.
struct PeriodicitySystem {
  static constexpr std::array<int, 15> r0_columns = {0, 1, 2, 3, 6, 7, 10, 11, 12, 13, 14, 15, 16, 17, 22};
  static constexpr std::array<int, 7> r1_columns = {0, 1, 2, 3, 6, 7, 22};

  Eigen::Matrix<double, 6, 8> M;
  Eigen::Matrix<double, 6, 6> O;
  Eigen::Matrix<double, 8, 8> T;
  Eigen::Matrix<double, 8, 23> R_full;
  Eigen::Matrix<double, 8, 15> R0;
  Eigen::Matrix<double, 8, 7> R1;
  StrideTiming timing;

  Eigen::MatrixXd reduced(Reduced which) const {
    return which == Reduced::R0 ? Eigen::MatrixXd(R0) : Eigen::MatrixXd(R1);
  }

  static Eigen::Matrix<double, 6, 8> relative_matrix() {
    Eigen::Matrix<double, 6, 8> M = Eigen::Matrix<double, 6, 8>::Zero();
    M(0, 0) = -1; M(0, 2) = 1;
    M(1, 1) = -1; M(1, 3) = 1;
    M(2, 2) = 1;  M(2, 6) = -1;
    M(3, 3) = 1;  M(3, 7) = -1;
    M(4, 4) = 1;
    M(5, 5) = 1;
    return M;
  }
  static Eigen::Matrix<double, 6, 6> sign_matrix() {
    return Eigen::Matrix<double, 6, 1>(1, -1, 1, -1, 1, -1).asDiagonal();
  }
  static Eigen::Matrix<double, 8, 8> exchange_matrix() {
    Eigen::Matrix<double, 8, 8> T = Eigen::Matrix<double, 8, 8>::Zero();
    T(0, 6) = T(1, 7) = 1;
    T(6, 0) = T(7, 1) = 1;
    for (int i = 2; i < 6; ++i) T(i, i) = 1;
    return T;
  }

  /// Six relative quantities before the stride minus their mirrored values after it.
  Eigen::Matrix<double, 6, 1> mismatch(const Vector23& q0, const Vector23& qT) const {
    const auto& S = SelectionMatrices::get();
    return M * S.S_XP * q0 - O * M * T * S.S_XP * qT;
  }
};

inline PeriodicitySystem build_periodicity(const StrideMap& maps) {
  const auto& S = SelectionMatrices::get();
  PeriodicitySystem sys;
  sys.timing = maps.timing;
  sys.M = PeriodicitySystem::relative_matrix();
  sys.O = PeriodicitySystem::sign_matrix();
  sys.T = PeriodicitySystem::exchange_matrix();
  sys.R_full.topRows<6>() = -sys.M * S.S_XP + sys.O * sys.M * sys.T * S.S_XP * maps.H;
  sys.R_full.bottomRows<2>() = S.S_Xdot2 * maps.H;
  for (int j = 0; j < 15; ++j) sys.R0.col(j) = sys.R_full.col(PeriodicitySystem::r0_columns[j]);
  for (int j = 0; j < 7; ++j) sys.R1.col(j) = sys.R_full.col(PeriodicitySystem::r1_columns[j]);
  return sys;
}

inline PeriodicitySystem build_periodicity(const BodyParams& p, const StrideTiming& tm) {
  return build_periodicity(stride_map(p, tm));
}

struct Spectrum {
  /// Singular values of R, descending, padded with zeros to the column count.
  std::vector<double> sigma;
  /// Singular values of RᵀR (the squares of sigma).
  std::vector<double> gram;

  int count_below(double rel, bool use_gram = true) const {
    const auto& v = use_gram ? gram : sigma;
    const double top = v.empty() ? 0.0 : v.front();
    return static_cast<int>(std::count_if(v.begin(), v.end(), [&](double x) { return x <= rel * top; }));
  }
};

inline Spectrum singular_spectrum(const Eigen::MatrixXd& R) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R);
  Spectrum s;
  const auto sv = svd.singularValues();
  for (int i = 0; i < sv.size(); ++i) s.sigma.push_back(sv[i]);
  s.sigma.resize(R.cols(), 0.0);
  for (double x : s.sigma) s.gram.push_back(x * x);
  return s;
}

inline Spectrum singular_spectrum(const PeriodicitySystem& sys, Reduced which) {
  return singular_spectrum(sys.reduced(which));
}

namespace gait_detail {
constexpr std::array<int, 4> sagittal_rows = {0, 2, 4, 6};
constexpr std::array<int, 3> sagittal_cols = {idx::X2x, idx::X1x, idx::dX1x};
}  // namespace gait_detail

/// Smallest over largest singular value of the sagittal part of R1. The
/// lateral part always keeps one null direction (stepping in place), so the
/// pseudo-passive condition is read from the sagittal block alone.
inline double sagittal_relax_ratio(const PeriodicitySystem& sys) {
  Eigen::Matrix<double, 4, 3> B;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c)
      B(r, c) = sys.R_full(gait_detail::sagittal_rows[r], gait_detail::sagittal_cols[c]);
  Eigen::JacobiSVD<Eigen::Matrix<double, 4, 3>> svd(B);
  const auto sv = svd.singularValues();
  return sv[2] / sv[0];
}

inline double sagittal_relax_ratio(const BodyParams& p, double t_ds, double t_stride) {
  return sagittal_relax_ratio(build_periodicity(p, StrideTiming{t_ds, t_stride - t_ds}));
}

struct RelaxResult {
  double t_relax = 0;
  double ratio = 0;       // sagittal σ_min/σ_max at the root
  std::vector<double> scan_t, scan_ratio;
};

/// Stride time at which a pseudo-passive gait exists. The bracket is scanned,
/// each local minimum of the sagittal ratio is polished by golden-section
/// search, and the deepest one passing ratio² ≤ 1e-9 is returned.
inline RelaxResult find_relax_time(const BodyParams& p, double t_ds, double lo, double hi,
                                   double scan_step = 0.01) {
  if (!(hi > lo) || !(lo > t_ds)) throw std::invalid_argument("relax bracket must satisfy T_ds < lo < hi");
  auto f = [&](double T) { return sagittal_relax_ratio(p, t_ds, T); };
  RelaxResult res;
  const int n = std::max(3, static_cast<int>(std::ceil((hi - lo) / scan_step)) + 1);
  for (int i = 0; i < n; ++i) {
    const double T = lo + (hi - lo) * i / (n - 1);
    res.scan_t.push_back(T);
    res.scan_ratio.push_back(f(T));
  }
  std::optional<std::pair<double, double>> best;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int i = 0; i < n; ++i) {
    const double here = res.scan_ratio[i];
    const bool left_ok = i == 0 || here <= res.scan_ratio[i - 1];
    const bool right_ok = i == n - 1 || here <= res.scan_ratio[i + 1];
    if (!(left_ok && right_ok)) continue;
    double a = res.scan_t[std::max(i - 1, 0)], b = res.scan_t[std::min(i + 1, n - 1)];
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > 1e-12) {
      if (fc < fd) {
        b = d;
        d = c;
        fd = fc;
        c = b - gr * (b - a);
        fc = f(c);
      } else {
        a = c;
        c = d;
        fc = fd;
        d = a + gr * (b - a);
        fd = f(d);
      }
    }
    const double T = 0.5 * (a + b);
    const double r = f(T);
    if (r * r <= 1e-9 && (!best || r < best->second)) best = {T, r};
  }
  if (!best)
    throw NoRelaxTime("no pseudo-passive stride time in [" + std::to_string(lo) + ", " +
                      std::to_string(hi) + "]");
  res.t_relax = best->first;
  res.ratio = best->second;
  return res;
}

struct NullBasis {
  Reduced which = Reduced::R0;
  Eigen::MatrixXd reduced;  // columns × k, orthonormal
  Eigen::MatrixXd lifted;   // 23 × k, zero on Ẋ2, P and W
};

inline NullBasis null_basis(const PeriodicitySystem& sys, Reduced which,
                            std::optional<int> expected = std::nullopt, double rel = 1e-9) {
  const Eigen::MatrixXd R = sys.reduced(which);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R, Eigen::ComputeFullV);
  const auto sv = svd.singularValues();
  const double top = sv.size() ? sv[0] : 0.0;
  int rank = 0;
  for (int i = 0; i < sv.size(); ++i)
    if (sv[i] > rel * top) ++rank;
  const int k = static_cast<int>(R.cols()) - rank;
  if (expected && *expected != k) throw NullSpaceMismatch(k, *expected);
  NullBasis nb;
  nb.which = which;
  nb.reduced = svd.matrixV().rightCols(k);
  nb.lifted = Eigen::MatrixXd::Zero(kStateDim, k);
  const int* cols = which == Reduced::R0 ? PeriodicitySystem::r0_columns.data()
                                         : PeriodicitySystem::r1_columns.data();
  for (int j = 0; j < R.cols(); ++j) nb.lifted.row(cols[j]) = nb.reduced.row(j);
  return nb;
}

enum class Scenario { pseudo_passive, long_double_support, stage_walk, cop_modulated, lip_like };

inline const char* to_string(Scenario s) {
  switch (s) {
    case Scenario::pseudo_passive: return "pseudo-passive";
    case Scenario::long_double_support: return "long-double-support";
    case Scenario::stage_walk: return "stage-walk";
    case Scenario::cop_modulated: return "cop-modulated";
    case Scenario::lip_like: return "lip-like";
  }
  return "?";
}

inline std::optional<Scenario> parse_scenario(const std::string& name) {
  for (Scenario s : {Scenario::pseudo_passive, Scenario::long_double_support, Scenario::stage_walk,
                     Scenario::cop_modulated, Scenario::lip_like})
    if (name == to_string(s)) return s;
  return std::nullopt;
}

struct ScenarioSpec {
  Scenario kind = Scenario::pseudo_passive;
  double foot_length = 0.24;        // cop-modulated
  std::optional<double> cop_torque; // overrides the foot-length rule
  double lip_leg_mass_fraction = 0.05;
  double lip_height_fraction = 0.1;
  int stage_samples = 50;
  bool zero_all_torques = false;    // extra: forbid every actuation entry
};

/// Ankle ramp moving the CoP from heel to toe over single support.
inline double cop_ramp_torque(const BodyParams& p, double foot_length) {
  if (!(foot_length >= 0.0)) throw std::invalid_argument("foot length must be non-negative");
  return p.total_mass() * p.g * foot_length;
}

/// Most of each leg's mass moved to the torso and all masses pulled toward the pelvis.
inline BodyParams lip_like_params(const BodyParams& p, double leg_fraction = 0.05,
                                  double height_fraction = 0.1) {
  BodyParams q = p;
  q.m2 = p.m2 * leg_fraction;
  q.m3 = p.m3 * leg_fraction;
  q.m1 = p.m1 + (p.m2 - q.m2) + (p.m3 - q.m3);
  q.z2 = p.z2 * height_fraction;
  q.z3 = p.z3 * height_fraction;
  q.validate();
  return q;
}

/// Double support doubled at unchanged stride time.
inline StrideTiming long_double_support_timing(const StrideTiming& tm) {
  StrideTiming t{2.0 * tm.t_ds, tm.t_ss - tm.t_ds};
  t.validate();
  return t;
}

struct GaitDiagnostics {
  double periodicity = 0;   // max |relative mismatch| after one stride
  double end_swing_speed = 0;
  double torque_norm = 0;   // ‖S_U·Q0‖
  double r0_residual = 0;
  double max_lateral_com_speed = std::numeric_limits<double>::quiet_NaN();
};

struct GaitSolution {
  Scenario scenario = Scenario::pseudo_passive;
  BodyParams params;
  StrideTiming timing;
  double v_des = 0;
  double side = 1;
  Eigen::VectorXd alpha;
  Eigen::MatrixXd basis;  // lifted 23 × k
  Vector23 q0 = Vector23::Zero();
  GaitDiagnostics diagnostics;
  std::shared_ptr<const StrideMap> maps;
};

/// Everything needed to solve gaits at one body and timing.
struct GaitContext {
  std::shared_ptr<const StrideMap> maps;
  PeriodicitySystem system;
  NullBasis basis;
};

inline GaitContext make_context(std::shared_ptr<const StrideMap> maps) {
  GaitContext ctx;
  ctx.system = build_periodicity(*maps);
  ctx.basis = null_basis(ctx.system, Reduced::R0, 7);
  ctx.maps = std::move(maps);
  return ctx;
}

inline GaitContext make_context(const BodyParams& p, const StrideTiming& tm, bool use_cache = true) {
  return make_context(use_cache ? map_cache().get(p, tm)
                                : std::make_shared<const StrideMap>(stride_map(p, tm)));
}

namespace gait_detail {

struct Block {
  std::string name;
  Eigen::MatrixXd C;
  Eigen::VectorXd b;
};

inline bool consistent(const Eigen::MatrixXd& C, const Eigen::VectorXd& b, Eigen::VectorXd* x) {
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(C);
  cod.setThreshold(1e-10);
  const Eigen::VectorXd sol = cod.solve(b);
  const double scale = 1.0 + b.cwiseAbs().maxCoeff() + C.cwiseAbs().maxCoeff() * sol.cwiseAbs().maxCoeff();
  if (x) *x = sol;
  return (C * sol - b).cwiseAbs().maxCoeff() <= 1e-9 * scale;
}

/// Lateral CoM velocity rows at uniformly spread stride samples, as a map of Q0.
inline Eigen::MatrixXd lateral_com_velocity_rows(const StrideMap& m, int samples) {
  Eigen::MatrixXd rows(samples, kStateDim);
  const double T = m.stride();
  for (int i = 0; i < samples; ++i) {
    const double t = samples == 1 ? 0.0 : T * i / (samples - 1);
    const bool moving = t > m.timing.t_ds;
    rows.row(i) = com_velocity_map(m.params, moving).row(1) * m.at(t);
  }
  return rows;
}

}  // namespace gait_detail

/// Equality-constrained least squares on the null-space coefficients:
/// minimize ‖objective·V·α‖² subject to side, speed and scenario constraints.
inline GaitSolution solve_gait(const GaitContext& ctx, double v_des, const ScenarioSpec& spec,
                               double side = 1.0) {
  if (!(side == 1.0 || side == -1.0)) throw std::invalid_argument("support side must be +1 or -1");
  if (!std::isfinite(v_des)) throw std::invalid_argument("desired speed must be finite");
  const auto& S = SelectionMatrices::get();
  const StrideMap& m = *ctx.maps;
  const Eigen::MatrixXd& V = ctx.basis.lifted;
  const int k = static_cast<int>(V.cols());
  const double T = m.stride();

  std::vector<gait_detail::Block> blocks;
  blocks.push_back({"support-side", S.S_d * V, Eigen::VectorXd::Constant(1, side)});
  blocks.push_back({"speed", S.S_X2x * V, Eigen::VectorXd::Constant(1, -v_des * T)});
  const bool ankles_off = spec.kind == Scenario::long_double_support ||
                          spec.kind == Scenario::stage_walk || spec.kind == Scenario::lip_like;
  Eigen::Matrix<double, 4, 23> Sa;
  Sa << S.S_Ma, S.S_rMa;
  if (ankles_off) blocks.push_back({"ankle-torques", Sa * V, Eigen::VectorXd::Zero(4)});
  if (spec.kind == Scenario::cop_modulated) {
    const double tau = spec.cop_torque ? *spec.cop_torque : cop_ramp_torque(m.params, spec.foot_length);
    blocks.push_back({"cop-modulation", Sa * V, Eigen::Vector4d(0.0, 0.0, tau, 0.0)});
  }
  if (spec.zero_all_torques) blocks.push_back({"all-torques", S.S_U * V, Eigen::VectorXd::Zero(8)});

  Eigen::MatrixXd C(0, k);
  Eigen::VectorXd b(0);
  Eigen::VectorXd alpha_p;
  for (const auto& blk : blocks) {
    Eigen::MatrixXd C2(C.rows() + blk.C.rows(), k);
    C2 << C, blk.C;
    Eigen::VectorXd b2(b.size() + blk.b.size());
    b2 << b, blk.b;
    if (!gait_detail::consistent(C2, b2, &alpha_p))
      throw InfeasibleGait(blk.name, "gait constraints are inconsistent at block '" + blk.name + "'");
    C = std::move(C2);
    b = std::move(b2);
  }

  Eigen::MatrixXd obj;
  if (spec.kind == Scenario::stage_walk)
    obj = gait_detail::lateral_com_velocity_rows(m, spec.stage_samples) * V;
  else
    obj = S.S_U * V;

  // α = α_p + N·z with N spanning the constraint null space
  Eigen::FullPivLU<Eigen::MatrixXd> lu(C);
  lu.setThreshold(1e-10);
  Eigen::VectorXd alpha = alpha_p;
  const Eigen::MatrixXd N = lu.kernel();
  if (lu.dimensionOfKernel() > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(N);
    const Eigen::MatrixXd Nq = qr.householderQ() * Eigen::MatrixXd::Identity(N.rows(), N.cols());
    const Eigen::MatrixXd ON = obj * Nq;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(ON);
    cod.setThreshold(1e-12);
    const Eigen::VectorXd z = cod.solve(-(obj * alpha_p));
    alpha = alpha_p + Nq * z;
  }

  GaitSolution g;
  g.scenario = spec.kind;
  g.params = m.params;
  g.timing = m.timing;
  g.v_des = v_des;
  g.side = side;
  g.alpha = alpha;
  g.basis = V;
  g.q0 = V * alpha;
  g.maps = ctx.maps;

  const Vector23 qT = m.H * g.q0;
  g.diagnostics.periodicity = ctx.system.mismatch(g.q0, qT).cwiseAbs().maxCoeff();
  g.diagnostics.end_swing_speed = (S.S_Xdot2 * qT).norm();
  g.diagnostics.torque_norm = (S.S_U * g.q0).norm();
  g.diagnostics.r0_residual = (ctx.system.R0 * ctx.basis.reduced * alpha).norm();
  if (spec.kind == Scenario::stage_walk)
    g.diagnostics.max_lateral_com_speed =
        (gait_detail::lateral_com_velocity_rows(m, spec.stage_samples) * g.q0).cwiseAbs().maxCoeff();
  return g;
}

/// Applies the scenario's body or timing changes, builds the maps and solves.
inline GaitSolution synthesize_gait(const BodyParams& p, const StrideTiming& tm, double v_des,
                                    const ScenarioSpec& spec, double side = 1.0,
                                    bool use_cache = true) {
  BodyParams body = p;
  StrideTiming timing = tm;
  if (spec.kind == Scenario::lip_like)
    body = lip_like_params(p, spec.lip_leg_mass_fraction, spec.lip_height_fraction);
  if (spec.kind == Scenario::long_double_support) timing = long_double_support_timing(tm);
  ScenarioSpec s = spec;
  if (s.kind == Scenario::cop_modulated && !s.cop_torque)
    s.cop_torque = cop_ramp_torque(p, s.foot_length);
  return solve_gait(make_context(body, timing, use_cache), v_des, s, side);
}

inline nlohmann::json to_json(const GaitSolution& g) {
  nlohmann::json j;
  j["scenario"] = to_string(g.scenario);
  j["T_ds"] = g.timing.t_ds;
  j["T_ss"] = g.timing.t_ss;
  j["T_stride"] = g.timing.stride();
  j["v_des"] = g.v_des;
  j["side"] = g.side;
  j["params"] = {{"m1", g.params.m1}, {"m2", g.params.m2}, {"m3", g.params.m3},
                 {"z1", g.params.z1}, {"z2", g.params.z2}, {"z3", g.params.z3},
                 {"w", g.params.w},   {"g", g.params.g}};
  j["alpha"] = std::vector<double>(g.alpha.data(), g.alpha.data() + g.alpha.size());
  nlohmann::json q = nlohmann::json::object();
  for (int i = 0; i < kStateDim; ++i) q[state_names()[i]] = g.q0[i];
  j["Q0"] = std::vector<double>(g.q0.data(), g.q0.data() + kStateDim);
  j["Q0_named"] = q;
  nlohmann::json d = {{"periodicity_residual", g.diagnostics.periodicity},
                      {"end_swing_speed", g.diagnostics.end_swing_speed},
                      {"torque_norm", g.diagnostics.torque_norm},
                      {"r0_residual", g.diagnostics.r0_residual}};
  if (std::isfinite(g.diagnostics.max_lateral_com_speed))
    d["max_lateral_com_speed"] = g.diagnostics.max_lateral_com_speed;
  j["diagnostics"] = d;
  return j;
}

}  // namespace threelp
