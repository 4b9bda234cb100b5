#pragma once

#include <functional>
#include <string>
#include <vector>

#include "lpcr/tape.hpp"

namespace lpcr {

/// Builds a scalar loss on the tape from the given parameter tensors. Called
/// repeatedly with perturbed parameter values, so it must be a pure function
/// of the parameters (seed any data constants outside).
using GraphBuilder = std::function<Var(Tape&, std::vector<Tensor*>&)>;

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    int worst_index = -1;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    bool pass = false;
    double worst() const;
};

/// Central finite differences against the tape gradient, per parameter.
/// Relative error uses an absolute floor: |a-n| / max(|a|, |n|, floor),
/// which keeps finite-difference noise on near-zero gradients from
/// dominating the report.
GradCheckReport grad_check(const GraphBuilder& build, std::vector<Tensor*> params,
                           double tolerance, double step = 1e-5, double floor = 1e-3);

}  // namespace lpcr
