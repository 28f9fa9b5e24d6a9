#pragma once

#include "mms/abi.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "mms/tape.hpp"

MMS_BEGIN_NAMESPACE

// Builds a scalar loss from the given input variables.
using GradCheckFn = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double perturbation = 1e-5;
  // Denominator floor for the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // Check at most this many entries per input (evenly strided); 0 = all.
  std::size_t max_entries_per_input = 0;
};

// Compares reverse-mode gradients against central finite differences for
// every entry of every input. Meaningful only in the 64-bit build.
GradCheckReport check_gradients(const GradCheckFn& fn, std::vector<Tensor> inputs,
                                const GradCheckOptions& options = {});

MMS_END_NAMESPACE
