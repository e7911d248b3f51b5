// Minimal end-to-end tomography run on the d=7 single-manifold model.

#include "qstlab/experiments.hpp"

#include <cstdio>

using namespace qstlab;

int main() {
  auto setup = ch4_smoke_setup();
  auto ctx = prepare_tomography(setup);
  auto rho0 = haar_pure_state(ctx.dim, SamplerSeed{42});
  auto prob = problem_for_state(ctx, rho0, SamplerSeed{43});
  auto ls = one_step_ls(prob);
  auto cs = compressed_sensing(prob, ctx.eps_cal);
  std::printf("LS fidelity %.4f, CS fidelity %.4f (eps %.4f)\n", fidelity(ls.rho_bar, rho0),
              fidelity(cs.rho_bar, rho0), ctx.eps_cal);
  return 0;
}
