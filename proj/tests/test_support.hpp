#pragma once

#include "threelp/core_model.hpp"

#include <random>

namespace threelp::fixtures {

/// Fixed mixed state used by the reference-value tests.
inline Vector23 reference_state() {
  Vector23 q;
  q << -0.3, 0.15, 0.05, 0.1,  // X2, X1
      0.2, -0.1, 0.9, 0.05,    // velocities
      0.2, -0.1,               // stance foot
      1.5, -2.0, 3.0, 0.5,     // Mh, Ma
      -1.0, 0.5, 2.0, -0.25,   // ramps
      5.0, -3.0, 1.0, 2.0,     // torso disturbance
      1.0;
  return q;
}

/// Random bounded state with the support side set to +1 or -1.
inline Vector23 random_state(std::mt19937_64& rng, double input_scale = 10.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector23 q;
  for (int i = 0; i < kStateDim; ++i) q[i] = u(rng);
  q.segment<8>(idx::Mhy) *= input_scale;
  q.segment<4>(idx::F1x) *= input_scale;
  q[idx::d] = u(rng) < 0 ? -1.0 : 1.0;
  return q;
}

inline BodyParams adult() { return default_params(BodySize::adult); }

}  // namespace threelp::fixtures
