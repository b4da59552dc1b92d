#pragma once

#include <functional>
#include <vector>

#include "b3s/optim.hpp"
#include "b3s/tape.hpp"

namespace b3s {

/// Gradient check for any objective expressed as a tape builder: the
/// builder is replayed on a fresh tape for every evaluation.
inline GradCheckReport check_tape_gradients(const std::function<NodeId(Tape&)>& build,
                                            const std::vector<Parameter*>& params, double h = 1e-3,
                                            double rel_floor = 1e-8) {
  auto f = [&] {
    Tape tape;
    return tape.scalar_value(build(tape));
  };
  auto analytic = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  return finite_diff_check(f, analytic, params, h, rel_floor);
}

}  // namespace b3s
