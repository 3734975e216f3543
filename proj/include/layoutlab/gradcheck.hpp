#pragma once

#include <functional>
#include <vector>

#include "layoutlab/graph.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab::numcore {

// Builds a scalar loss from parameter leaves. Called repeatedly with
// perturbed parameters, so it must be a pure function of them.
using LossBuilder = std::function<Graph::Id(Graph&, const std::vector<Graph::Id>&)>;

// Central-difference check of the tape gradients: returns
// max over all parameter elements of |analytic - cd| / max(1, |cd|).
// Rejects builders whose output is not a scalar.
double grad_check(const LossBuilder& f, const std::vector<Tensor>& params, double h = 1e-5);

}  // namespace layoutlab::numcore
