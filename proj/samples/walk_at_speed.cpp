// Synthesizes a minimal-torque gait at a given speed and step frequency and
// prints a coarse trace of the CoM and vertical ground forces.
//
//   threelp_sample [config] [speed m/s] [step frequency 1/s]

#include "threelp/analysis.hpp"

#include <cstdio>
#include <cstdlib>
#include <exception>

int main(int argc, char** argv) {
  using namespace threelp;
  try {
    ModelConfig cfg;
    if (argc > 1) cfg = load_config(argv[1]);
    const double speed = argc > 2 ? std::atof(argv[2]) : 1.2;
    const double freq = argc > 3 ? std::atof(argv[3]) : 1.8;

    const auto timing = StrideTiming::from_stride(1.0 / freq, 0.2);
    const auto gait = synthesize_gait(cfg.params, timing, speed, ScenarioSpec{});
    std::printf("T_ds %.3f s  T_ss %.3f s  torque norm %.3f N.m\n", timing.t_ds, timing.t_ss,
                gait.diagnostics.torque_norm);

    for (const auto& s : sample_trajectory(gait, 11))
      std::printf("t %.3f  com (%+.4f, %+.4f)  v (%+.4f, %+.4f)  Fz stance %7.2f  swing %7.2f\n", s.t,
                  s.com.x(), s.com.y(), s.com_velocity.x(), s.com_velocity.y(), s.forces.F3.z(),
                  s.forces.F2.z());

    std::printf("economy %.4f m.kg/J\n", 1.0 / work_per_distance(gait, WorkMeasure::total_positive));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }
  return 0;
}
