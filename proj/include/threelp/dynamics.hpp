#pragma once

#include "threelp/core_model.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <stdexcept>
#include <string>

namespace threelp {

enum class Phase { single_support, double_support };

inline const char* to_string(Phase p) {
  return p == Phase::single_support ? "single" : "double";
}

class SingularSystem : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ẍ = (A + t·A1)·X + (B0 + t·B1)·[P; U; rU; W; d] within one phase, t measured
/// from the phase start. A1 is non-zero only on columns of states that are
/// constant in the phase (the swing foot during double support).
struct PhaseODE {
  Phase phase = Phase::single_support;
  BodyParams params;
  StrideTiming timing;
  Eigen::Matrix4d A = Eigen::Matrix4d::Zero();
  Eigen::Matrix4d A1 = Eigen::Matrix4d::Zero();
  Eigen::Matrix<double, 4, kForcingDim> B0 = Eigen::Matrix<double, 4, kForcingDim>::Zero();
  Eigen::Matrix<double, 4, kForcingDim> B1 = Eigen::Matrix<double, 4, kForcingDim>::Zero();

  double duration() const {
    return phase == Phase::single_support ? timing.t_ss : timing.t_ds;
  }

  Vec4 accelerations(const Vector23& q, double t) const {
    const Vec4 X = q.head<4>();
    const auto f = q.tail<kForcingDim>();
    return (A + t * A1) * X + (B0 + t * B1) * f;
  }
};

/// Interaction forces and torques of the three bodies at one instant.
struct ForceSolution {
  Vec3 f1, f2, f3;        // hip forces acting on torso, swing and stance masses
  Vec3 F1, F2, F3;        // external force on torso, contact forces on the legs
  Vec3 M1, M2, M3;        // external moment on torso, contact moments on the legs
  Vec3 tau1, tau2, tau3;  // hip torques
  Vec4 accel = Vec4::Zero();  // Ẍ in state order
};

namespace detail {

// Horizontal unknowns of the per-instant linear system.
namespace hz {
constexpr int f1 = 0, f2 = 2, f3 = 4, F2 = 6, F3 = 8, M2 = 10, M3 = 12;
constexpr int t1 = 14, t2 = 16, t3 = 18, a2 = 20, a1 = 22;
constexpr int n = 24;
}  // namespace hz

struct Vertical {
  double F2z, F3z, f1z, f2z, f3z;
};

inline double phase_fraction(Phase ph, const StrideTiming& tm, double t) {
  return t / (ph == Phase::single_support ? tm.t_ss : tm.t_ds);
}

/// Vertical loads follow from the constant-height constraint alone: the legs
/// share the weight, fully on the stance leg in single support and linearly
/// transferred in double support.
inline Vertical vertical_forces(const BodyParams& p, const StrideTiming& tm, Phase ph, double t) {
  const double W = p.weight();
  Vertical v{};
  if (ph == Phase::single_support) {
    v.F2z = 0.0;
    v.F3z = W;
  } else {
    const double s = phase_fraction(ph, tm, t);
    v.F2z = (1.0 - s) * W;
    v.F3z = s * W;
  }
  v.f1z = p.m1 * p.g;
  v.f2z = p.m2 * p.g - v.F2z;
  v.f3z = p.m3 * p.g - v.F3z;
  return v;
}

struct HorizontalSystem {
  Eigen::Matrix<double, hz::n, hz::n> K;
  Eigen::Matrix<double, hz::n, kStateDim> R;
};

/// Linear system K·z = R·Q for the horizontal forces, the x/y moments and the
/// accelerations at phase time t.
inline HorizontalSystem horizontal_system(const BodyParams& p, const StrideTiming& tm, Phase ph,
                                          double t) {
  using namespace hz;
  HorizontalSystem sys;
  auto& K = sys.K;
  auto& R = sys.R;
  K.setZero();
  R.setZero();
  const double k = p.k(), z1 = p.z1, z3 = p.z3, hw = p.w / 2.0;
  const Vertical v = vertical_forces(p, tm, ph, t);

  // mass equations
  for (int a = 0; a < 2; ++a) {
    K(0 + a, a1 + a) = p.m1;
    K(0 + a, f1 + a) = -1.0;
    R(0 + a, idx::F1x + a) = 1.0;

    K(2 + a, a1 + a) = p.m2 * (1.0 - k);
    K(2 + a, a2 + a) = p.m2 * k;
    K(2 + a, f2 + a) = -1.0;
    K(2 + a, F2 + a) = -1.0;

    K(4 + a, a1 + a) = p.m3 * (1.0 - k);
    K(4 + a, f3 + a) = -1.0;
    K(4 + a, F3 + a) = -1.0;
  }

  // torso moment about its mass
  K(6, f1 + 1) = z3;
  K(6, t1 + 0) = 1.0;
  R(6, idx::M1x) = -1.0;
  K(7, f1 + 0) = -z3;
  K(7, t1 + 1) = 1.0;
  R(7, idx::M1y) = -1.0;

  // leg moments about the leg masses
  auto leg = [&](int row, int f, int F, int M, int tau, double Fz, double fz, int foot_x,
                 int foot_y, double side) {
    const double lever = (1.0 - k) * Fz - k * fz;
    K(row, F + 1) = (1.0 - k) * z1;
    K(row, f + 1) = -k * z1;
    K(row, M + 0) = 1.0;
    K(row, tau + 0) = 1.0;
    R(row, foot_y) -= lever;
    R(row, idx::X1y) += lever;
    R(row, idx::d) += lever * side * hw;

    K(row + 1, F + 0) = -(1.0 - k) * z1;
    K(row + 1, f + 0) = k * z1;
    K(row + 1, M + 1) = 1.0;
    K(row + 1, tau + 1) = 1.0;
    R(row + 1, foot_x) += lever;
    R(row + 1, idx::X1x) -= lever;
  };
  leg(8, f2, F2, M2, t2, v.F2z, v.f2z, idx::X2x, idx::X2y, +1.0);
  leg(10, f3, F3, M3, t3, v.F3z, v.f3z, idx::X3x, idx::X3y, -1.0);

  // massless pelvis
  for (int a = 0; a < 2; ++a) {
    K(12 + a, f1 + a) = 1.0;
    K(12 + a, f2 + a) = 1.0;
    K(12 + a, f3 + a) = 1.0;
    K(14 + a, t1 + a) = 1.0;
    K(14 + a, t2 + a) = 1.0;
    K(14 + a, t3 + a) = 1.0;
  }
  R(14, idx::d) = -hw * (v.f2z - v.f3z);

  const double s = phase_fraction(ph, tm, t);
  if (ph == Phase::single_support) {
    K(16, F2 + 0) = 1.0;
    K(17, F2 + 1) = 1.0;
    K(18, M2 + 0) = 1.0;
    K(19, M2 + 1) = 1.0;
    K(20, t2 + 1) = 1.0;
    R(20, idx::Mhy) = 1.0;
    R(20, idx::rMhy) = s;
    K(21, t2 + 0) = 1.0;
    R(21, idx::Mhx) = 1.0;
    R(21, idx::rMhx) = s;
    // ankle inputs are what the foot exerts on the ground
    K(22, M3 + 1) = 1.0;
    R(22, idx::May) = -1.0;
    R(22, idx::rMay) = -s;
    K(23, M3 + 0) = 1.0;
    R(23, idx::Max) = -1.0;
    R(23, idx::rMax) = -s;
  } else {
    K(16, a2 + 0) = 1.0;
    K(17, a2 + 1) = 1.0;
    K(18, M2 + 1) = 1.0;
    R(18, idx::May) = -(1.0 - s);
    R(18, idx::rMay) = -(1.0 - s);
    K(19, M2 + 0) = 1.0;
    R(19, idx::Max) = 1.0 - s;
    R(19, idx::rMax) = 1.0 - s;
    K(20, M3 + 1) = 1.0;
    R(20, idx::May) = -s;
    K(21, M3 + 0) = 1.0;
    R(21, idx::Max) = -s;
    // uniform hip-torque transfer, denominators cleared
    K(22, t2 + 0) = s;
    K(22, t3 + 0) = -(1.0 - s);
    R(22, idx::Mhx) = 1.0;
    R(22, idx::rMhx) = 1.0 - s;
    R(22, idx::d) = hw * (s * v.F2z + (1.0 - s) * v.F3z);
    K(23, t2 + 1) = s;
    K(23, t3 + 1) = -(1.0 - s);
    R(23, idx::Mhy) = 2.0 * s - 1.0;
    R(23, idx::rMhy) = -(1.0 - s);
  }
  return sys;
}

inline Eigen::Matrix<double, hz::n, kStateDim> horizontal_solution_map(const BodyParams& p,
                                                                      const StrideTiming& tm,
                                                                      Phase ph, double t) {
  const HorizontalSystem sys = horizontal_system(p, tm, ph, t);
  Eigen::FullPivLU<Eigen::Matrix<double, hz::n, hz::n>> lu(sys.K);
  if (!lu.isInvertible() || lu.rcond() < 1e-13)
    throw SingularSystem(std::string("singular elimination system in ") + to_string(ph) +
                         " support");
  return lu.solve(sys.R);
}

inline PhaseODE assemble(const BodyParams& p, const StrideTiming& tm, Phase ph) {
  p.validate();
  tm.validate();
  PhaseODE ode;
  ode.phase = ph;
  ode.params = p;
  ode.timing = tm;
  const double T = ode.duration();
  const Eigen::Matrix<double, 4, kStateDim> C0 =
      horizontal_solution_map(p, tm, ph, 0.0).bottomRows<4>();
  const Eigen::Matrix<double, 4, kStateDim> CT =
      horizontal_solution_map(p, tm, ph, T).bottomRows<4>();
  const Eigen::Matrix<double, 4, kStateDim> C1 = (CT - C0) / T;

  // the eliminated accelerations must be affine in t
  const double scale = 1.0 + std::max(C0.cwiseAbs().maxCoeff(), CT.cwiseAbs().maxCoeff());
  for (double frac : {0.5, 0.3}) {
    const Eigen::Matrix<double, 4, kStateDim> Cm =
        horizontal_solution_map(p, tm, ph, frac * T).bottomRows<4>();
    if ((Cm - (C0 + frac * T * C1)).cwiseAbs().maxCoeff() > 1e-9 * scale)
      throw std::logic_error("phase accelerations are not affine in time");
  }
  if (C0.middleCols<4>(4).cwiseAbs().maxCoeff() > 1e-12 * scale ||
      C1.middleCols<4>(4).cwiseAbs().maxCoeff() > 1e-12 * scale)
    throw std::logic_error("phase accelerations depend on velocities");

  ode.A = C0.leftCols<4>();
  ode.A1 = C1.leftCols<4>();
  ode.B0 = C0.rightCols<kForcingDim>();
  ode.B1 = C1.rightCols<kForcingDim>();
  // clean round-off so structural zeros stay exact
  auto clean = [scale](auto& m) {
    m = m.unaryExpr([scale](double x) { return std::abs(x) < 1e-12 * scale ? 0.0 : x; });
  };
  clean(ode.A);
  clean(ode.A1);
  clean(ode.B0);
  clean(ode.B1);

  // a time-varying coefficient is only allowed on states frozen in the phase
  const double pelvis_drift = ode.A1.col(idx::X1x).cwiseAbs().maxCoeff() +
                              ode.A1.col(idx::X1y).cwiseAbs().maxCoeff();
  const double swing_drift = ode.A1.leftCols<2>().cwiseAbs().maxCoeff();
  if (pelvis_drift > 0.0 || (ph == Phase::single_support && swing_drift > 0.0))
    throw std::logic_error("time-varying state coefficient on a moving state");
  return ode;
}

}  // namespace detail

inline PhaseODE assemble_single_support(const BodyParams& p, const StrideTiming& tm) {
  return detail::assemble(p, tm, Phase::single_support);
}

inline PhaseODE assemble_double_support(const BodyParams& p, const StrideTiming& tm) {
  return detail::assemble(p, tm, Phase::double_support);
}

inline PhaseODE assemble_phase(const BodyParams& p, const StrideTiming& tm, Phase ph) {
  return detail::assemble(p, tm, ph);
}

/// All forces and torques at phase time t for augmented state q.
inline ForceSolution solve_forces(const PhaseODE& ode, const Vector23& q, double t) {
  const double T = ode.duration();
  if (!(t >= 0.0 && t <= T * (1.0 + 1e-12)))
    throw std::out_of_range("time " + std::to_string(t) + " outside the " +
                            to_string(ode.phase) + " support phase");
  namespace hz = detail::hz;
  const BodyParams& p = ode.params;
  const auto z = (detail::horizontal_solution_map(p, ode.timing, ode.phase, t) * q).eval();
  const detail::Vertical v = detail::vertical_forces(p, ode.timing, ode.phase, t);

  ForceSolution fs;
  auto h3 = [&](int i, double zc) { return Vec3(z[i], z[i + 1], zc); };
  fs.f1 = h3(hz::f1, v.f1z);
  fs.f2 = h3(hz::f2, v.f2z);
  fs.f3 = h3(hz::f3, v.f3z);
  fs.F1 = Vec3(q[idx::F1x], q[idx::F1y], 0.0);
  fs.M1 = Vec3(q[idx::M1x], q[idx::M1y], 0.0);
  fs.F2 = h3(hz::F2, v.F2z);
  fs.F3 = h3(hz::F3, v.F3z);
  fs.M2 = h3(hz::M2, 0.0);
  fs.M3 = h3(hz::M3, 0.0);
  fs.tau1 = h3(hz::t1, 0.0);
  fs.tau2 = h3(hz::t2, 0.0);
  fs.tau3 = h3(hz::t3, 0.0);
  fs.accel = Vec4(z[hz::a2], z[hz::a2 + 1], z[hz::a1], z[hz::a1 + 1]);

  // yaw moments; they never feed back into the horizontal motion
  const double c = p.w * q[idx::d] / 2.0, k = p.k();
  auto yaw_lever = [&](double foot_x, double foot_y, double side, const Vec3& F, const Vec3& f) {
    const double hx = foot_x - q[idx::X1x];
    const double hy = foot_y - q[idx::X1y] - side * c;
    auto cz = [&](const Vec3& V) { return hx * V.y() - hy * V.x(); };
    return (1.0 - k) * cz(F) - k * cz(f);
  };
  const double l2 = yaw_lever(q[idx::X2x], q[idx::X2y], +1.0, fs.F2, fs.f2);
  const double l3 = yaw_lever(q[idx::X3x], q[idx::X3y], -1.0, fs.F3, fs.f3);
  fs.tau1.z() = 0.0;
  const double pelvis_yaw = c * (fs.f2.x() - fs.f3.x()) - fs.tau1.z();
  if (ode.phase == Phase::single_support) {
    fs.M2.z() = 0.0;
    fs.tau2.z() = -l2;
    fs.tau3.z() = pelvis_yaw - fs.tau2.z();
  } else {
    const double s = t / T;
    fs.tau2.z() = (1.0 - s) * pelvis_yaw;
    fs.tau3.z() = s * pelvis_yaw;
    fs.M2.z() = -l2 - fs.tau2.z();
  }
  fs.M3.z() = -l3 - fs.tau3.z();
  return fs;
}

/// Largest violation of the Newton/Euler balance of masses, legs, torso and
/// pelvis, relative to the largest force or torque magnitude present.
inline double balance_residual(const BodyParams& p, const Vector23& q, const ForceSolution& fs) {
  const Geometry gm = geometry(p, q);
  const Vec3 X1(q[idx::X1x], q[idx::X1y], p.z1);
  const Vec3 X2(q[idx::X2x], q[idx::X2y], 0.0);
  const Vec3 X3(q[idx::X3x], q[idx::X3y], 0.0);
  const double k = p.k();
  const Vec3 a1(fs.accel[2], fs.accel[3], 0.0);
  const Vec3 a2(fs.accel[0], fs.accel[1], 0.0);
  const Vec3 ge(0.0, 0.0, p.g);
  const Vec3 ch(0.0, p.w * q[idx::d] / 2.0, 0.0);

  double worst = 0.0;
  auto acc = [&](const Vec3& r) { worst = std::max(worst, r.cwiseAbs().maxCoeff()); };
  acc(p.m1 * (a1 + ge) - fs.f1 - fs.F1);
  acc(p.m2 * ((1.0 - k) * a1 + k * a2 + ge) - fs.f2 - fs.F2);
  acc(p.m3 * ((1.0 - k) * a1 + ge) - fs.f3 - fs.F3);
  acc((X1 - gm.y1).cross(fs.f1) + fs.M1 + fs.tau1);
  acc((X2 - gm.y2).cross(fs.F2) + (gm.x2 - gm.y2).cross(fs.f2) + fs.M2 + fs.tau2);
  acc((X3 - gm.y3).cross(fs.F3) + (gm.x3 - gm.y3).cross(fs.f3) + fs.M3 + fs.tau3);
  acc(fs.f1 + fs.f2 + fs.f3);
  acc(fs.tau1 + fs.tau2 + fs.tau3 + ch.cross(fs.f2 - fs.f3));

  double scale = 0.0;
  for (const Vec3* v : {&fs.f1, &fs.f2, &fs.f3, &fs.F1, &fs.F2, &fs.F3, &fs.M1, &fs.M2, &fs.M3,
                        &fs.tau1, &fs.tau2, &fs.tau3})
    scale = std::max(scale, v->cwiseAbs().maxCoeff());
  return worst / std::max(scale, 1e-300);
}

}  // namespace threelp
