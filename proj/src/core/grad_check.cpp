#include "ibakit/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "ibakit/error.hpp"

namespace ibakit {

double grad_check(const ScalarFn& f, const Tensor& point, double step) {
  if (!(step > 0.0)) throw InputError("grad_check: step must be positive");

  Tensor x = point.clone();
  x.set_requires_grad(true);
  Tape tape;
  double f0 = 0.0;
  {
    TapeScope scope(tape);
    Tensor y = f(x);
    if (y.numel() != 1) {
      throw ContractError("grad_check: function output has shape " + shape_str(y.shape()));
    }
    f0 = y.item();
    tape.backward(y);
  }
  const auto analytic = x.grad();

  // Perturbed evaluations run without a tape.
  Tensor probe = point.clone();
  auto pd = probe.mutable_data();
  const double floor = 1e-6 * std::max(1.0, std::abs(f0));
  double worst = 0.0;
  for (std::size_t i = 0; i < pd.size(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + step;
    const double up = f(probe).item();
    pd[i] = orig - step;
    const double down = f(probe).item();
    pd[i] = orig;
    const double fd = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(fd), floor});
    worst = std::max(worst, std::abs(analytic[i] - fd) / denom);
  }
  return worst;
}

}  // namespace ibakit
