#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "odvqa/autodiff.hpp"

// Central finite-difference verification of analytic gradients in 64-bit.

namespace odvqa {

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    double guard = 1e-8;           // floor of the relative-error denominator
    // Further floor per unit of sum |R * f|: central differences cannot resolve
    // gradients below round-off, e.g. a conv bias that batch norm cancels.
    double roundoff_floor = 1e-6;
    std::size_t probes_per_tensor = 4;
    // A difference whose +-step evaluations change a ReLU/max active set is
    // retried with the step divided by 10, up to this many times.
    int kink_retries = 2;
    // A failing probe whose gradients are below small_gradient * sum |R * f|
    // is re-measured once with the step multiplied by roundoff_step_factor:
    // such differences are dominated by round-off, which shrinks as 1/step.
    double small_gradient = 1e-4;
    double roundoff_step_factor = 100.0;
    std::uint64_t seed = 7;
};

struct GradCheckResult {
    std::string scope;
    std::string name;
    double max_rel_error = 0.0;
    std::string worst;  // tensor and element of the worst probe
    std::size_t probes = 0;
    double loss_scale = 0.0;  // sum |R * f|
    std::size_t kink_skipped = 0;  // probes that stayed across a kink at every step
    std::size_t roundoff_retried = 0;  // probes re-measured at the wider step
    double seconds = 0.0;
    bool passed(double tolerance) const { return probes > 0 && max_rel_error < tolerance; }
};

/// Builds the output from the recorded inputs; parameters are read through tape.param.
using GradFunction = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Compares d/dθ sum(R * f) against central differences for randomly chosen
/// elements of every input and every trainable parameter in `store`.
GradCheckResult gradcheck(const std::string& name, std::vector<Tensor<double>> inputs, ParameterStore<double>* store,
                          const GradFunction& f, const GradCheckOptions& options = {});

struct GradCase {
    std::string scope;  // tensor, attention, spaq, mpaq, temporal, model, ablation
    std::string name;
    std::function<GradCheckResult(const GradCheckOptions&)> run;
};

std::vector<std::string> gradcheck_scopes();

/// Every case, or those of one scope. Unknown scope names throw std::invalid_argument.
std::vector<GradCase> gradcheck_cases(const std::string& scope = "all");

}  // namespace odvqa
