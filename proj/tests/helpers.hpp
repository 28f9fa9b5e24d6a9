#pragma once

#include <cstdint>
#include <vector>

#include "mms/rng.hpp"
#include "mms/tensor.hpp"

namespace testutil {

inline mms::Tensor random_tensor(mms::Shape shape, mms::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  mms::Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = static_cast<mms::Scalar>(rng.uniform(lo, hi));
  return t;
}

inline mms::Tensor random_mask(mms::Shape shape, mms::Rng& rng, double p = 0.4) {
  mms::Tensor t(std::move(shape));
  for (auto& v : t.storage()) v = rng.uniform() < p ? 1 : 0;
  return t;
}

}  // namespace testutil
