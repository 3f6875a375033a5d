#pragma once

#include "threelp/core_model.hpp"
#include "threelp/dynamics.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <json.hpp>

#include <algorithm>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

namespace threelp {

/// Exact transition matrix t ↦ H(t) of one phase. The time-affine ODE is made
/// autonomous by appending the products t·Q_k of every phase-constant entry
/// Q_k that multiplies t, whose derivative is Q_k itself; H(t) is then the
/// leading 23×23 block of a single matrix exponential.
class PhaseMap {
 public:
  PhaseMap() = default;

  explicit PhaseMap(PhaseODE ode) : ode_(std::move(ode)) {
    for (int j = idx::forcing_begin; j < kStateDim; ++j) clocked_.push_back(j);
    if (ode_.phase == Phase::double_support) clocked_.insert(clocked_.begin(), {idx::X2x, idx::X2y});
    const int nk = static_cast<int>(clocked_.size());
    const int n = kStateDim + nk;
    gen_ = Eigen::MatrixXd::Zero(n, n);

    const bool ss = ode_.phase == Phase::single_support;
    for (int i = 0; i < 4; ++i) {
      if (!ss && i < 2) continue;  // feet stay put in double support
      gen_(i, 4 + i) = 1.0;
      gen_.block(4 + i, 0, 1, 4) = ode_.A.row(i);
      gen_.block(4 + i, idx::forcing_begin, 1, kForcingDim) = ode_.B0.row(i);
      for (int jj = 0; jj < nk; ++jj) {
        const int j = clocked_[jj];
        gen_(4 + i, kStateDim + jj) =
            j < 4 ? ode_.A1(i, j) : ode_.B1(i, j - idx::forcing_begin);
      }
    }
    for (int jj = 0; jj < nk; ++jj) gen_(kStateDim + jj, clocked_[jj]) = 1.0;
    selector_ = Eigen::MatrixXd::Zero(nk, kStateDim);
    for (int jj = 0; jj < nk; ++jj) selector_(jj, clocked_[jj]) = 1.0;
  }

  const PhaseODE& ode() const { return ode_; }
  Phase phase() const { return ode_.phase; }
  double duration() const { return ode_.duration(); }
  const Eigen::MatrixXd& generator() const { return gen_; }
  const std::vector<int>& clocked() const { return clocked_; }

  /// H(t) for 0 ≤ t ≤ duration.
  Matrix23 operator()(double t) const { return shifted(0.0, t); }

  /// Fixed-length step whose map depends affinely on the start time:
  /// shifted(t0, dt) = base + t0·slope.
  struct Step {
    Matrix23 base, slope;
    Matrix23 at(double t0) const { return base + t0 * slope; }
  };

  Step step(double dt) const {
    const Eigen::MatrixXd E = (gen_ * dt).exp();
    Step s{E.topLeftCorner<kStateDim, kStateDim>(),
           E.topRightCorner(kStateDim, selector_.rows()) * selector_};
    hold_constant_rows(s.base, &s.slope);
    return s;
  }

  /// Map carrying Q(t0) to Q(t0 + dt), both within the phase.
  Matrix23 shifted(double t0, double dt) const {
    const double T = duration();
    const double tol = 1e-12 * std::max(1.0, T);
    if (!(t0 >= -tol && dt >= -tol && t0 + dt <= T + tol))
      throw std::out_of_range("phase time outside [0, " + std::to_string(T) + "]");
    if (dt <= 0.0) return Matrix23::Identity();
    const Eigen::MatrixXd E = (gen_ * dt).exp();
    Matrix23 H = E.topLeftCorner<kStateDim, kStateDim>();
    if (t0 > 0.0) H += t0 * E.topRightCorner(kStateDim, selector_.rows()) * selector_;
    hold_constant_rows(H, nullptr);
    return H;
  }

 private:
  // Entries without dynamics map to themselves; the exponential only gets
  // this right up to rounding.
  void hold_constant_rows(Matrix23& H, Matrix23* slope) const {
    for (int i = 0; i < kStateDim; ++i) {
      if (gen_.row(i).cwiseAbs().maxCoeff() > 0.0) continue;
      H.row(i) = Matrix23::Identity().row(i);
      if (slope) slope->row(i).setZero();
    }
  }

  PhaseODE ode_;
  Eigen::MatrixXd gen_;
  Eigen::MatrixXd selector_;
  std::vector<int> clocked_;
};

inline Matrix23 phase_map(const PhaseODE& ode, double t) { return PhaseMap(ode)(t); }

class SingularEndVelocityControl : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// H′ = H − H·S_Mhᵀ·(S_Xdot2·H·S_Mhᵀ)⁻¹·S_Xdot2·H: the constant hip torques are
/// replaced by the values that bring the swing foot to rest at the end.
inline Matrix23 constrain_end_foot_velocity(const Matrix23& H) {
  const auto& S = SelectionMatrices::get();
  const Eigen::Matrix2d C = S.S_Xdot2 * H * S.S_Mh.transpose();
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(C);
  const auto sv = svd.singularValues();
  if (!(sv[0] > 0.0) || sv[1] < 1e-12 * sv[0])
    throw SingularEndVelocityControl(
        "hip torques cannot control the end swing-foot velocity (singular 2x2 block)");
  return H - H * S.S_Mh.transpose() * C.inverse() * (S.S_Xdot2 * H);
}

/// Transition maps of a full stride: double support followed by single support.
struct StrideMap {
  BodyParams params;
  StrideTiming timing;
  PhaseMap ds, ss;
  Matrix23 H = Matrix23::Identity();       // H(T_stride)
  Matrix23 Hprime = Matrix23::Identity();  // H′(T_stride)
  Matrix23 H_ds_end = Matrix23::Identity();
  Matrix23 H_ss_end = Matrix23::Identity();

  double stride() const { return timing.stride(); }

  /// H(t), 0 ≤ t ≤ T_stride.
  Matrix23 at(double t) const {
    check_time(t);
    if (t <= timing.t_ds) return ds(std::max(t, 0.0));
    return ss(std::min(t - timing.t_ds, timing.t_ss)) * H_ds_end;
  }

  /// G(tau) with G(tau)·H(tau) = H(T_stride).
  Matrix23 back(double tau) const {
    check_time(tau);
    if (tau <= timing.t_ds) {
      const double t0 = std::max(tau, 0.0);
      return H_ss_end * ds.shifted(t0, timing.t_ds - t0);
    }
    const double t0 = std::min(tau - timing.t_ds, timing.t_ss);
    return ss.shifted(t0, timing.t_ss - t0);
  }

  /// Map from stride time a to stride time b (a ≤ b).
  Matrix23 between(double a, double b) const {
    check_time(a);
    check_time(b);
    if (b < a) throw std::invalid_argument("map between times requires a <= b");
    const double tds = timing.t_ds;
    if (b <= tds) return ds.shifted(a, b - a);
    if (a >= tds) return ss.shifted(a - tds, b - a);
    return ss.shifted(0.0, b - tds) * ds.shifted(a, tds - a);
  }

 private:
  void check_time(double t) const {
    const double T = stride();
    if (!(t >= -1e-12 * T && t <= T * (1.0 + 1e-12)))
      throw std::out_of_range("stride time " + std::to_string(t) + " outside [0, " +
                              std::to_string(T) + "]");
  }
};

inline StrideMap stride_map(const BodyParams& p, const StrideTiming& tm) {
  StrideMap m;
  m.params = p;
  m.timing = tm;
  m.ds = PhaseMap(assemble_double_support(p, tm));
  m.ss = PhaseMap(assemble_single_support(p, tm));
  m.H_ds_end = m.ds(tm.t_ds);
  m.H_ss_end = m.ss(tm.t_ss);
  m.H = m.H_ss_end * m.H_ds_end;
  m.Hprime = constrain_end_foot_velocity(m.H);
  return m;
}

inline Matrix23 back_map(const StrideMap& m, double tau) { return m.back(tau); }

inline Matrix23 back_map(const BodyParams& p, const StrideTiming& tm, double tau) {
  return stride_map(p, tm).back(tau);
}

/// Stride maps keyed by exact parameter and timing values. Lookups share a
/// lock; insertion takes it exclusively.
class MapCache {
 public:
  std::shared_ptr<const StrideMap> get(const BodyParams& p, const StrideTiming& tm) {
    const std::string key = canonical_text(p, tm);
    {
      std::shared_lock lock(mutex_);
      if (auto it = maps_.find(key); it != maps_.end()) return it->second;
    }
    auto fresh = std::make_shared<const StrideMap>(stride_map(p, tm));
    std::unique_lock lock(mutex_);
    auto [it, inserted] = maps_.emplace(key, std::move(fresh));
    return it->second;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return maps_.size();
  }

  void clear() {
    std::unique_lock lock(mutex_);
    maps_.clear();
  }

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<const StrideMap>> maps_;
};

inline MapCache& map_cache() {
  static MapCache cache;
  return cache;
}

/// Disturbance applied to the torso over [t_begin, t_end) of the stride.
struct Disturbance {
  double t_begin = 0;
  double t_end = 0;
  Vec4 W = Vec4::Zero();
};

/// Closed-form propagation over the whole stride with the disturbance rows
/// switched at window edges. Outside all windows W is zero.
inline Vector23 propagate_with_disturbances(const StrideMap& m, Vector23 q,
                                            const std::vector<Disturbance>& windows) {
  const double T = m.stride();
  std::vector<double> cuts = {0.0, m.timing.t_ds, T};
  for (const auto& w : windows) {
    if (!(w.t_begin >= 0.0 && w.t_end >= w.t_begin && w.t_end <= T * (1.0 + 1e-12)))
      throw std::invalid_argument("disturbance window extends beyond the stride");
    cuts.push_back(w.t_begin);
    cuts.push_back(std::min(w.t_end, T));
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    const double mid = 0.5 * (a + b);
    Vec4 W = Vec4::Zero();
    for (const auto& w : windows)
      if (mid >= w.t_begin && mid < w.t_end) W += w.W;
    q.segment<4>(idx::F1x) = W;
    q = m.between(a, b) * q;
  }
  return q;
}

/// Row-major JSON dump of H(T_stride) and H′(T_stride) with the state layout.
inline nlohmann::json maps_to_json(const StrideMap& m) {
  nlohmann::json j;
  j["layout"] = std::vector<std::string>(state_names().begin(), state_names().end());
  j["rows"] = kStateDim;
  j["cols"] = kStateDim;
  j["order"] = "row-major";
  j["T_ds"] = m.timing.t_ds;
  j["T_ss"] = m.timing.t_ss;
  auto flat = [](const Matrix23& M) {
    std::vector<double> v;
    v.reserve(kStateDim * kStateDim);
    for (int r = 0; r < kStateDim; ++r)
      for (int c = 0; c < kStateDim; ++c) v.push_back(M(r, c));
    return v;
  };
  j["H"] = flat(m.H);
  j["Hprime"] = flat(m.Hprime);
  return j;
}

}  // namespace threelp
