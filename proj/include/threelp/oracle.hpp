#pragma once

// Reference integrator. Accelerations are obtained at every RK4 stage from a
// fresh solve of the full three-dimensional balance equations, without using
// the eliminated phase ODEs.

#include "threelp/core_model.hpp"
#include "threelp/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <stdexcept>
#include <vector>

namespace threelp {

struct PushWindow {
  double t_begin = 0;  // stride time (s)
  double t_end = 0;
  Vec4 W = Vec4::Zero();  // F1x, F1y, M1y, M1x
};

enum class OracleSpan { stride, single_only, double_only };

struct OracleConfig {
  double step = 1e-5;
  OracleSpan span = OracleSpan::stride;
  /// When non-empty the disturbance rows follow this schedule and are zero
  /// outside the windows; otherwise they keep their initial value.
  std::vector<PushWindow> pushes;
  /// Keep every n-th step in the returned trajectory (0 keeps only the ends).
  int record_every = 0;
};

struct OracleTrajectory {
  std::vector<double> t;
  std::vector<Vector23> q;
  const Vector23& final_state() const { return q.back(); }
};

namespace oracle_detail {

/// Gaussian elimination with partial pivoting; skips zero multipliers, which
/// pays off on these sparse systems. Returns false on an exactly singular pivot.
template <int N>
bool gauss_solve(Eigen::Matrix<double, N, N, Eigen::RowMajor>& A, Eigen::Matrix<double, N, 1>& b) {
  for (int c = 0; c < N; ++c) {
    int piv = c;
    double best = std::abs(A(c, c));
    for (int r = c + 1; r < N; ++r)
      if (const double v = std::abs(A(r, c)); v > best) {
        best = v;
        piv = r;
      }
    if (best == 0.0) return false;
    if (piv != c) {
      A.row(c).swap(A.row(piv));
      std::swap(b[c], b[piv]);
    }
    const double inv = 1.0 / A(c, c);
    for (int r = c + 1; r < N; ++r) {
      const double f = A(r, c) * inv;
      if (f == 0.0) continue;
      for (int j = c + 1; j < N; ++j) A(r, j) -= f * A(c, j);
      b[r] -= f * b[c];
    }
  }
  for (int c = N - 1; c >= 0; --c) {
    double s = b[c];
    for (int j = c + 1; j < N; ++j) s -= A(c, j) * b[j];
    b[c] = s / A(c, c);
  }
  return true;
}

inline Eigen::Matrix3d skew(const Vec3& r) {
  Eigen::Matrix3d S;
  S << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
  return S;
}

/// Dense system K·u = rhs filled block by block. Vector equations occupy three
/// rows; unknown 3-vectors three columns, horizontal accelerations two.
template <int N>
struct System {
  Eigen::Matrix<double, N, N, Eigen::RowMajor> K = Eigen::Matrix<double, N, N, Eigen::RowMajor>::Zero();
  Eigen::Matrix<double, N, 1> rhs = Eigen::Matrix<double, N, 1>::Zero();

  void vec(int row, int col, const Eigen::Matrix3d& M) { K.template block<3, 3>(row, col) += M; }
  void acc(int row, int col, const Eigen::Matrix3d& M) {
    K.template block<3, 2>(row, col) += M.leftCols<2>();
  }
  void known(int row, const Vec3& v) { rhs.template segment<3>(row) -= v; }

  Eigen::Matrix<double, N, 1> solve(const char* where) {
    Eigen::Matrix<double, N, 1> u = rhs;
    if (!gauss_solve<N>(K, u) || !u.allFinite())
      throw SingularSystem(std::string("singular oracle solve in ") + where);
    return u;
  }
};

/// Column positions of the unknowns; -1 marks a quantity that is fully known.
struct Columns {
  int F2 = -1, F3 = -1, M2z = -1, M3z = -1, tau1 = -1, tau2 = -1, tau2z = -1, tau3 = -1;
  int a2 = -1, a1 = -1;
};

/// Horizontal vectors and known parts shared by both phases.
struct Knowns {
  Vec3 M2 = Vec3::Zero(), M3 = Vec3::Zero(), tau2 = Vec3::Zero();
};

/// Balance of torso, both legs and the pelvis, with the mass equations
/// f_i = m_i·(ÿ_i + g·e_z) − F_i substituted. Rows 0..14.
template <int N>
void balance(System<N>& s, const BodyParams& p, const Vector23& q, const Columns& c,
             const Knowns& kn) {
  const Vec3 X1(q[idx::X1x], q[idx::X1y], p.z1);
  const Vec3 X2(q[idx::X2x], q[idx::X2y], 0.0);
  const Vec3 X3(q[idx::X3x], q[idx::X3y], 0.0);
  const Geometry g = geometry(p, X1, X2, X3, q[idx::d]);
  const double k = p.k();
  const Vec3 grav(0.0, 0.0, p.g);
  const Vec3 F1(q[idx::F1x], q[idx::F1y], 0.0);
  const Vec3 M1(q[idx::M1x], q[idx::M1y], 0.0);
  const Eigen::Matrix3d I = Eigen::Matrix3d::Identity();

  // f_i written as (acc coefficients) + known − F_i
  struct MassForce {
    double on_a1, on_a2;
    Vec3 known;
    int contact;  // column of F_i, -1 if zero
  };
  const MassForce f1{p.m1, 0.0, p.m1 * grav - F1, -1};
  const MassForce f2{p.m2 * (1.0 - k), p.m2 * k, p.m2 * grav, c.F2};
  const MassForce f3{p.m3 * (1.0 - k), 0.0, p.m3 * grav, c.F3};

  // adds S·f into rows [row, row+3)
  auto add_force = [&](int row, const Eigen::Matrix3d& S, const MassForce& f) {
    s.acc(row, c.a1, f.on_a1 * S);
    if (f.on_a2 != 0.0 && c.a2 >= 0) s.acc(row, c.a2, f.on_a2 * S);
    s.known(row, S * f.known);
    if (f.contact >= 0) s.vec(row, f.contact, -S);
  };
  auto add_torque = [&](int row, int col, int zcol, const Vec3& known) {
    if (col >= 0) s.vec(row, col, I);
    if (zcol >= 0) s.K(row + 2, zcol) += 1.0;
    s.known(row, known);
  };

  // torso about its mass
  add_force(0, skew(X1 - g.y1), f1);
  s.known(0, M1);
  add_torque(0, c.tau1, -1, Vec3::Zero());

  // swing leg about its mass
  add_force(3, skew(g.x2 - g.y2), f2);
  if (c.F2 >= 0) s.vec(3, c.F2, skew(X2 - g.y2));
  add_torque(3, -1, c.M2z, kn.M2);
  add_torque(3, c.tau2, c.tau2z, kn.tau2);

  // stance leg about its mass
  add_force(6, skew(g.x3 - g.y3), f3);
  s.vec(6, c.F3, skew(X3 - g.y3));
  add_torque(6, -1, c.M3z, kn.M3);
  add_torque(6, c.tau3, -1, Vec3::Zero());

  // pelvis forces and moments
  for (const MassForce* f : {&f1, &f2, &f3}) add_force(9, I, *f);
  const Eigen::Matrix3d Sc = skew(Vec3(0.0, p.w * q[idx::d] / 2.0, 0.0));
  add_force(12, Sc, f2);
  add_force(12, -Sc, f3);
  add_torque(12, c.tau1, -1, Vec3::Zero());
  add_torque(12, c.tau2, c.tau2z, kn.tau2);
  add_torque(12, c.tau3, -1, Vec3::Zero());
}

/// Swing foot acceleration is free, swing contact wrench vanishes, hip and
/// ankle torques are prescribed.
inline Vec4 single_support_accel(const BodyParams& p, const StrideTiming& tm, const Vector23& q,
                                 double t) {
  constexpr int N = 15;
  const double s = t / tm.t_ss;
  Columns c;
  // torque columns first keeps the elimination nearly free of fill-in
  c.tau1 = 0;
  c.tau3 = 3;
  c.M3z = 6;
  c.tau2z = 7;
  c.F3 = 8;
  c.a2 = 11;
  c.a1 = 13;
  Knowns kn;
  kn.tau2 = Vec3(q[idx::Mhx] + s * q[idx::rMhx], q[idx::Mhy] + s * q[idx::rMhy], 0.0);
  // the foot pushes on the ground with the ankle input; the leg feels the opposite
  kn.M3 = Vec3(-(q[idx::Max] + s * q[idx::rMax]), -(q[idx::May] + s * q[idx::rMay]), 0.0);
  System<N> sys;
  balance(sys, p, q, c, kn);
  const auto u = sys.solve("single support");
  return Vec4(u[11], u[12], u[13], u[14]);
}

/// Both feet fixed; ankle moments blend between the feet and the remaining
/// wrench is shared by the uniform transfer rule.
inline Vec4 double_support_accel(const BodyParams& p, const StrideTiming& tm, const Vector23& q,
                                 double t) {
  constexpr int N = 19;
  const double s = t / tm.t_ds;
  const double cw = p.w * q[idx::d] / 2.0;
  Columns c;
  c.tau1 = 0;
  c.tau3 = 3;
  c.tau2 = 6;
  c.M2z = 9;
  c.M3z = 10;
  c.F2 = 11;
  c.F3 = 14;
  c.a1 = 17;
  Knowns kn;
  kn.M2 = Vec3((1.0 - s) * (q[idx::Max] + q[idx::rMax]), -(1.0 - s) * (q[idx::May] + q[idx::rMay]),
               0.0);
  kn.M3 = Vec3(-s * q[idx::Max], -s * q[idx::May], 0.0);
  System<N> sys;
  balance(sys, p, q, c, kn);

  // s·J2·(V2 − V̂2) = (1 − s)·J3·(V3 − V̂3), V = [tau_x, tau_y, tau_z, F_z]
  Eigen::Matrix<double, 4, N> V2 = Eigen::Matrix<double, 4, N>::Zero(), V3 = V2;
  V2.block<3, 3>(0, c.tau2).setIdentity();
  V2(3, c.F2 + 2) = 1.0;
  V3.block<3, 3>(0, c.tau3).setIdentity();
  V3(3, c.F3 + 2) = 1.0;
  const Vec4 V2hat(q[idx::Mhx], q[idx::Mhy], 0.0, 0.0);
  const Vec4 V3hat(-q[idx::Mhx] - q[idx::rMhx], q[idx::Mhy] + q[idx::rMhy], 0.0, 0.0);
  Eigen::Matrix4d J2 = Eigen::Matrix4d::Identity(), J3 = J2;
  J2(0, 3) = -cw;
  J3(0, 3) = cw;
  sys.K.template bottomRows<4>() = s * J2 * V2 - (1.0 - s) * J3 * V3;
  sys.rhs.template tail<4>() = s * J2 * V2hat - (1.0 - s) * J3 * V3hat;

  const auto u = sys.solve("double support");
  return Vec4(0.0, 0.0, u[17], u[18]);
}

inline Vector23 derivative(const BodyParams& p, const StrideTiming& tm, Phase ph,
                           const Vector23& q, double t) {
  Vector23 dq = Vector23::Zero();
  if (ph == Phase::single_support) {
    dq.head<4>() = q.segment<4>(4);
    dq.segment<4>(4) = single_support_accel(p, tm, q, t);
  } else {
    dq.segment<2>(idx::X1x) = q.segment<2>(idx::dX1x);
    dq.segment<2>(idx::dX1x) = double_support_accel(p, tm, q, t).tail<2>();
  }
  return dq;
}

}  // namespace oracle_detail

/// Accelerations from a direct solve of the balance equations at (q, t).
inline Vec4 oracle_accelerations(const BodyParams& p, const StrideTiming& tm, Phase ph,
                                 const Vector23& q, double t) {
  return ph == Phase::single_support ? oracle_detail::single_support_accel(p, tm, q, t)
                                     : oracle_detail::double_support_accel(p, tm, q, t);
}

/// Fixed-step RK4 over the requested span. Push window edges and the phase
/// switch are hit exactly by shortening the steps of the affected interval.
inline OracleTrajectory integrate(const BodyParams& p, const StrideTiming& tm, const Vector23& q0,
                                  const OracleConfig& cfg) {
  p.validate();
  tm.validate();
  if (!q0.allFinite()) throw std::invalid_argument("initial state must be finite");
  if (!(cfg.step > 0)) throw std::invalid_argument("oracle step must be positive");
  if (cfg.span != OracleSpan::single_only && cfg.step > tm.t_ds / 100.0 * (1 + 1e-12))
    throw std::invalid_argument("oracle step exceeds 1/100 of the double-support duration");
  if (cfg.span != OracleSpan::double_only && cfg.step > tm.t_ss / 100.0 * (1 + 1e-12))
    throw std::invalid_argument("oracle step exceeds 1/100 of the single-support duration");

  struct Segment {
    Phase phase;
    double t0, t1;  // stride time
    double offset;  // stride time of the phase start
  };
  std::vector<Segment> phases;
  if (cfg.span != OracleSpan::single_only)
    phases.push_back({Phase::double_support, 0.0, tm.t_ds, 0.0});
  if (cfg.span != OracleSpan::double_only) {
    const double off = cfg.span == OracleSpan::single_only ? 0.0 : tm.t_ds;
    phases.push_back({Phase::single_support, off, off + tm.t_ss, off});
  }
  const double t_end = phases.back().t1;
  for (const auto& w : cfg.pushes)
    if (!(w.t_begin >= 0.0 && w.t_end >= w.t_begin && w.t_end <= t_end * (1.0 + 1e-12)))
      throw std::invalid_argument("push window outside the integration span");

  auto disturbance_at = [&](double t_mid) -> std::optional<Vec4> {
    if (cfg.pushes.empty()) return std::nullopt;
    Vec4 W = Vec4::Zero();
    for (const auto& w : cfg.pushes)
      if (t_mid >= w.t_begin && t_mid < w.t_end) W += w.W;
    return W;
  };

  OracleTrajectory out;
  Vector23 q = q0;
  out.t.push_back(0.0);
  out.q.push_back(q);
  long counter = 0;
  for (const Segment& seg : phases) {
    std::vector<double> cuts = {seg.t0, seg.t1};
    for (const auto& w : cfg.pushes)
      for (double e : {w.t_begin, w.t_end})
        if (e > seg.t0 && e < seg.t1) cuts.push_back(e);
    std::sort(cuts.begin(), cuts.end());
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
      const double a = cuts[c], b = cuts[c + 1];
      if (b - a <= 0.0) continue;
      if (auto W = disturbance_at(0.5 * (a + b))) q.segment<4>(idx::F1x) = *W;
      const long n = std::max(1L, static_cast<long>(std::ceil((b - a) / cfg.step - 1e-9)));
      const double h = (b - a) / static_cast<double>(n);
      for (long i = 0; i < n; ++i) {
        const double tl = a + i * h - seg.offset;
        using oracle_detail::derivative;
        const Vector23 k1 = derivative(p, tm, seg.phase, q, tl);
        const Vector23 k2 = derivative(p, tm, seg.phase, q + 0.5 * h * k1, tl + 0.5 * h);
        const Vector23 k3 = derivative(p, tm, seg.phase, q + 0.5 * h * k2, tl + 0.5 * h);
        const Vector23 k4 = derivative(p, tm, seg.phase, q + h * k3, tl + h);
        q += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        ++counter;
        if (cfg.record_every > 0 && counter % cfg.record_every == 0) {
          out.t.push_back(a + (i + 1) * h);
          out.q.push_back(q);
        }
      }
    }
  }
  if (cfg.record_every > 0 && counter % cfg.record_every == 0) {
    out.t.back() = t_end;
  } else {
    out.t.push_back(t_end);
    out.q.push_back(q);
  }
  return out;
}

/// Oracle response to a single push of constant wrench W over
/// [t_push, t_push + duration] in stride time.
inline OracleTrajectory apply_push(const BodyParams& p, const StrideTiming& tm, const Vector23& q0,
                                   double t_push, double duration, const Vec4& W,
                                   OracleConfig cfg = {}) {
  if (!(t_push >= 0.0 && duration >= 0.0) || t_push + duration > tm.stride() * (1.0 + 1e-12))
    throw std::invalid_argument("push interval extends beyond the stride");
  cfg.span = OracleSpan::stride;
  cfg.pushes = {{t_push, t_push + duration, W}};
  return integrate(p, tm, q0, cfg);
}

}  // namespace threelp
