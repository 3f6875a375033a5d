#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace threelp {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Matrix23 = Eigen::Matrix<double, 23, 23>;
using Vector23 = Eigen::Matrix<double, 23, 1>;

inline constexpr const char* kVersion = "0.1.0";

constexpr int kStateDim = 23;
constexpr int kForcingDim = 15;  // [P, U, rU, W, d]

/// Index layout of the augmented state Q = [X, Xdot, P, U, rU, W, d].
namespace idx {
constexpr int X2x = 0, X2y = 1, X1x = 2, X1y = 3;
constexpr int dX2x = 4, dX2y = 5, dX1x = 6, dX1y = 7;
constexpr int X3x = 8, X3y = 9;
constexpr int Mhy = 10, Mhx = 11, May = 12, Max = 13;
constexpr int rMhy = 14, rMhx = 15, rMay = 16, rMax = 17;
constexpr int F1x = 18, F1y = 19, M1y = 20, M1x = 21;
constexpr int d = 22;
constexpr int forcing_begin = 8;
}  // namespace idx

/// Human readable names of the 23 augmented-state entries, in layout order.
inline const std::array<const char*, kStateDim>& state_names() {
  static const std::array<const char*, kStateDim> names = {
      "X2x", "X2y", "X1x", "X1y", "vX2x", "vX2y", "vX1x", "vX1y",
      "X3x", "X3y", "Mhy", "Mhx", "May",  "Max",  "rMhy", "rMhx",
      "rMay", "rMax", "F1x", "F1y", "M1y", "M1x", "d"};
  return names;
}

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what)
      : std::runtime_error(what), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct BodyParams {
  double m1 = 0, m2 = 0, m3 = 0;
  double z1 = 0, z2 = 0, z3 = 0;
  double w = 0;
  double g = 9.81;

  double total_mass() const { return m1 + m2 + m3; }
  double weight() const { return total_mass() * g; }
  /// Ratio placing the leg masses along the legs.
  double k() const { return z2 / z1; }

  void validate() const {
    auto fin = [](double v) { return std::isfinite(v); };
    if (!(fin(m1) && fin(m2) && fin(m3) && fin(z1) && fin(z2) && fin(z3) && fin(w) && fin(g)))
      throw std::invalid_argument("body parameters must be finite");
    if (m1 <= 0 || m2 <= 0 || m3 <= 0) throw std::invalid_argument("masses must be positive");
    if (z1 <= 0) throw std::invalid_argument("z1 must be positive");
    if (z2 < 0 || z3 < 0) throw std::invalid_argument("z2 and z3 must be non-negative");
    if (w < 0) throw std::invalid_argument("pelvis width must be non-negative");
    if (g <= 0) throw std::invalid_argument("gravity must be positive");
    if (std::abs(m2 - m3) > 1e-12 * std::max(m2, m3))
      throw std::invalid_argument("leg masses m2 and m3 must be equal");
  }

  bool operator==(const BodyParams&) const = default;
};

struct StrideTiming {
  double t_ds = 0;
  double t_ss = 0;

  double stride() const { return t_ds + t_ss; }

  void validate() const {
    if (!(std::isfinite(t_ds) && std::isfinite(t_ss)) || t_ds <= 0 || t_ss <= 0)
      throw std::invalid_argument("phase durations must be positive and finite");
  }

  /// Timing with a given stride time and double-support fraction.
  static StrideTiming from_stride(double t_stride, double ds_ratio) {
    StrideTiming t{ds_ratio * t_stride, (1.0 - ds_ratio) * t_stride};
    t.validate();
    return t;
  }

  bool operator==(const StrideTiming&) const = default;
};

enum class BodySize { adult, kid };

inline BodyParams default_params(BodySize size) {
  BodyParams p;
  double expected_total = 0;
  if (size == BodySize::adult) {
    p = {45.7, 12.15, 12.15, 0.89, 0.32, 0.36, 0.2, 9.81};
    expected_total = 70.0;
  } else {
    p = {19.6, 5.2, 5.2, 0.52, 0.19, 0.22, 0.12, 9.81};
    expected_total = 30.0;
  }
  p.validate();
  if (std::abs(p.total_mass() - expected_total) > 1e-6)
    throw std::logic_error("default body parameters do not add up to the tabulated total mass");
  return p;
}

/// Adult proportions rescaled to a given total mass and standing height.
/// Masses scale with the total, heights and pelvis width with the height ratio.
inline BodyParams scaled_params(double total_mass, double height, double reference_height = 1.7) {
  BodyParams p = default_params(BodySize::adult);
  const double ms = total_mass / p.total_mass();
  const double ls = height / reference_height;
  p.m1 *= ms;
  p.m2 *= ms;
  p.m3 *= ms;
  p.z1 *= ls;
  p.z2 *= ls;
  p.z3 *= ls;
  p.w *= ls;
  p.validate();
  return p;
}

/// Body used for economy studies: 66 kg and 1.7 m.
inline BodyParams economy_body() { return scaled_params(66.0, 1.7); }

/// 0/1 row selectors extracting named blocks of the augmented state.
struct SelectionMatrices {
  Eigen::Matrix<double, 8, 23> S_XP;
  Eigen::Matrix<double, 2, 23> S_Xdot2;
  Eigen::Matrix<double, 1, 23> S_X2x;
  Eigen::Matrix<double, 8, 23> S_U;
  Eigen::Matrix<double, 2, 23> S_Mh;
  Eigen::Matrix<double, 2, 23> S_Ma;
  Eigen::Matrix<double, 2, 23> S_rMa;
  Eigen::Matrix<double, 1, 23> S_d;

  static constexpr std::array<int, 8> xp_rows = {idx::X2x, idx::X2y, idx::X1x, idx::X1y,
                                                 idx::dX1x, idx::dX1y, idx::X3x, idx::X3y};

  template <int R, std::size_t N>
  static Eigen::Matrix<double, R, 23> selector(const std::array<int, N>& cols) {
    static_assert(R == static_cast<int>(N));
    Eigen::Matrix<double, R, 23> S = Eigen::Matrix<double, R, 23>::Zero();
    for (int r = 0; r < R; ++r) S(r, cols[r]) = 1.0;
    return S;
  }

  static const SelectionMatrices& get() {
    static const SelectionMatrices s = [] {
      SelectionMatrices m;
      m.S_XP = selector<8>(xp_rows);
      m.S_Xdot2 = selector<2>(std::array<int, 2>{idx::dX2x, idx::dX2y});
      m.S_X2x = selector<1>(std::array<int, 1>{idx::X2x});
      m.S_U = selector<8>(std::array<int, 8>{idx::Mhy, idx::Mhx, idx::May, idx::Max,
                                             idx::rMhy, idx::rMhx, idx::rMay, idx::rMax});
      m.S_Mh = selector<2>(std::array<int, 2>{idx::Mhy, idx::Mhx});
      m.S_Ma = selector<2>(std::array<int, 2>{idx::May, idx::Max});
      m.S_rMa = selector<2>(std::array<int, 2>{idx::rMay, idx::rMax});
      m.S_d = selector<1>(std::array<int, 1>{idx::d});
      return m;
    }();
    return s;
  }
};

struct Geometry {
  Vec3 x2, x3, y1, y2, y3;
};

/// Hip joints, torso mass and leg masses for given pelvis (X1), swing foot (X2),
/// stance foot (X3) and support side d.
inline Geometry geometry(const BodyParams& p, const Vec3& X1, const Vec3& X2, const Vec3& X3,
                         double d) {
  const Vec3 half(0.0, p.w * d / 2.0, 0.0);
  const double k = p.k();
  Geometry gm;
  gm.x2 = X1 + half;
  gm.x3 = X1 - half;
  gm.y1 = X1 + Vec3(0.0, 0.0, p.z3);
  gm.y2 = gm.x2 + k * (X2 - gm.x2);
  gm.y3 = gm.x3 + k * (X3 - gm.x3);
  return gm;
}

/// Geometry read from an augmented state; feet on the ground, pelvis at z1.
inline Geometry geometry(const BodyParams& p, const Vector23& q) {
  return geometry(p, Vec3(q[idx::X1x], q[idx::X1y], p.z1), Vec3(q[idx::X2x], q[idx::X2y], 0.0),
                  Vec3(q[idx::X3x], q[idx::X3y], 0.0), q[idx::d]);
}

/// Rows mapping Q to the horizontal CoM position.
inline Eigen::Matrix<double, 2, kStateDim> com_position_map(const BodyParams& p) {
  const double M = p.total_mass(), k = p.k(), hw = p.w / 2.0;
  Eigen::Matrix<double, 2, kStateDim> C = Eigen::Matrix<double, 2, kStateDim>::Zero();
  for (int a = 0; a < 2; ++a) {
    C(a, idx::X1x + a) = (p.m1 + (p.m2 + p.m3) * (1.0 - k)) / M;
    C(a, idx::X2x + a) = p.m2 * k / M;
    C(a, idx::X3x + a) = p.m3 * k / M;
  }
  C(1, idx::d) = (1.0 - k) * hw * (p.m2 - p.m3) / M;
  return C;
}

/// Rows mapping Q to the horizontal CoM velocity. The swing-foot velocity
/// entry only counts while the foot is free to move.
inline Eigen::Matrix<double, 2, kStateDim> com_velocity_map(const BodyParams& p, bool swing_moving) {
  const double M = p.total_mass(), k = p.k();
  Eigen::Matrix<double, 2, kStateDim> C = Eigen::Matrix<double, 2, kStateDim>::Zero();
  for (int a = 0; a < 2; ++a) {
    C(a, idx::dX1x + a) = (p.m1 + (p.m2 + p.m3) * (1.0 - k)) / M;
    if (swing_moving) C(a, idx::dX2x + a) = p.m2 * k / M;
  }
  return C;
}

/// Horizontal kinetic energy of the three point masses.
inline double mass_kinetic_energy(const BodyParams& p, const Vector23& q, bool swing_moving) {
  const double k = p.k();
  const Eigen::Vector2d v1 = q.segment<2>(idx::dX1x);
  Eigen::Vector2d v2 = (1.0 - k) * v1;
  if (swing_moving) v2 += k * q.segment<2>(idx::dX2x);
  const Eigen::Vector2d v3 = (1.0 - k) * v1;
  return 0.5 * (p.m1 * v1.squaredNorm() + p.m2 * v2.squaredNorm() + p.m3 * v3.squaredNorm());
}

struct ModelConfig {
  BodyParams params = default_params(BodySize::adult);
  StrideTiming timing{0.3, 0.56};
};

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
/// Keys: m1, m2, m3, z1, z2, z3, w, g, T_ds, T_ss. Missing keys keep the
/// values of `base`.
inline ModelConfig parse_config(std::istream& in, ModelConfig base = {}) {
  std::map<std::string, double*> slots = {
      {"m1", &base.params.m1}, {"m2", &base.params.m2},   {"m3", &base.params.m3},
      {"z1", &base.params.z1}, {"z2", &base.params.z2},   {"z3", &base.params.z3},
      {"w", &base.params.w},   {"g", &base.params.g},     {"T_ds", &base.timing.t_ds},
      {"T_ss", &base.timing.t_ss}};
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find_first_of("=:");
    if (eq == std::string::npos)
      throw ConfigError(line, "line " + std::to_string(lineno) + ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    auto it = slots.find(key);
    if (it == slots.end()) throw ConfigError(key, "unknown config key '" + key + "'");
    std::istringstream vs(val);
    vs.imbue(std::locale::classic());
    double v = 0;
    if (!(vs >> v) || !(vs >> std::ws).eof() || !std::isfinite(v))
      throw ConfigError(key, "invalid value for config key '" + key + "': '" + val + "'");
    *it->second = v;
  }
  try {
    base.params.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("params", e.what());
  }
  try {
    base.timing.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("T_ds/T_ss", e.what());
  }
  return base;
}

inline ModelConfig load_config(const std::string& path, ModelConfig base = {}) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config", "cannot open config file '" + path + "'");
  return parse_config(f, base);
}

/// Canonical text of parameters and timing, used for hashing and caching.
inline std::string canonical_text(const BodyParams& p, const StrideTiming& t) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << p.m1 << ',' << p.m2 << ',' << p.m3 << ',' << p.z1 << ',' << p.z2
     << ',' << p.z3 << ',' << p.w << ',' << p.g << ';' << t.t_ds << ',' << t.t_ss;
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace threelp
