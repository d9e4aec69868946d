#pragma once

#include <functional>
#include <string>
#include <vector>

#include "denomae/param.hpp"
#include "denomae/tape.hpp"

namespace denomae {

// Scalar loss built on a double tape from leased parameter leaves, given in
// the same order as the parameter list passed to gradient_check.
using DLossFn =
    std::function<Tape<double>::Ref(Tape<double>&, const std::vector<Tape<double>::Ref>&)>;

struct GradCheckOptions {
    double eps = 1e-3;
    double tol = 1e-3;
    // Central differences per parameter tensor; all elements when numel is
    // small, otherwise a seeded random subset of this size.
    int samples_per_param = 6;
    uint64_t seed = 17;
    // Guarded relative error: |a-n| / max(|a|, |n|, rel_floor). The floor
    // absorbs finite-difference truncation noise on near-zero gradients
    // while leaving real derivative bugs (errors at gradient scale) visible.
    double rel_floor = 1e-2;
};

struct GradCheckEntry {
    std::string param;
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int checked = 0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Compares reverse-mode gradients against central finite differences of f,
// both evaluated on the double instantiation of the tape so the difference
// quotient is meaningful at eps=1e-3. Rejects a non-deterministic f (two
// forward passes that disagree bitwise).
GradCheckReport gradient_check(const std::vector<Parameter*>& params, const DLossFn& f,
                               const GradCheckOptions& opts = {});

}  // namespace denomae
