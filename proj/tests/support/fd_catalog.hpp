#pragma once

// Finite-difference oracle for the differentiation primitives, shared by the
// unit tests and the acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "infocons/diffcore.hpp"
#include "infocons/rng.hpp"

namespace infocons::testing {

struct FdCase {
  std::string name;
  // Builds one random instance: appends leaves to `leaves` and returns the
  // primitive's output.
  std::function<ad::Var(ad::Graph& g, Rng& rng, std::vector<ad::Var>& leaves)> build;
  bool composite = false;  // built from several primitives
};

const std::vector<FdCase>& fd_catalog();

struct FdResult {
  double max_rel_error = 0;
  std::size_t entries = 0;
};

// Central differences of L = sum(out * R) with a random weighting R against
// the reverse-mode gradient, for every entry of every leaf. The relative
// error is |analytic - numeric| / max(|analytic|, |numeric|, floor).
FdResult finite_difference_check(const FdCase& c, Rng& rng, double h = 1e-3, double floor = 1e-8);

}  // namespace infocons::testing
