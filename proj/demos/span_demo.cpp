// Span analysis of one-parameter measurement records: Haar maps saturate
// d^2-d+1 while the parity-symmetric kicked top is stuck at rank 19.

#include "qstlab/random_evolution.hpp"
#include "qstlab/random_states.hpp"

#include <cstdio>

using namespace qstlab;

int main() {
  for (int d = 3; d <= 7; ++d) {
    OrbitSpec spec;
    spec.u0 = haar_unitary(d, SamplerSeed{7});
    spec.observable = HermitianOperator(angular_momentum((d - 1) / 2.0).fz);
    spec.n_max = d * d + 10;
    std::printf("d=%d: span %d of bound %d\n", d, span_dimension(orbit_observables(spec)),
                d * d - d + 1);
  }

  OrbitSpec qkt;
  qkt.u0 = kicked_top(3.0, 7.0, 0.228);
  qkt.observable = HermitianOperator(angular_momentum(3.0).fx);
  qkt.n_max = 430;
  auto rep = saturation_conditions(qkt.u0, qkt.observable);
  std::printf("kicked top: span %d, conditions %d/%d/%d\n",
              span_dimension(orbit_observables(qkt)), rep.diagonal_ok, rep.offdiagonal_ok,
              rep.phases_ok);
  return 0;
}
