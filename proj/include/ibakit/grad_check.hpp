#pragma once

#include <functional>

#include "ibakit/tensor.hpp"

namespace ibakit {

using ScalarFn = std::function<Tensor(const Tensor&)>;

// Max over coordinates of |g - fd| / max(|g|, |fd|, floor), where g is the
// tape gradient of f at `point`, fd the central difference with `step`, and
// floor = 1e-6 * max(1, |f(point)|) keeps round-off in fd from dominating
// coordinates whose true derivative is ~0.
double grad_check(const ScalarFn& f, const Tensor& point, double step);

}  // namespace ibakit
