#include "denomae/detmath.hpp"

#include <cassert>
#include <cfenv>
#include <cmath>

namespace denomae::detmath {

namespace {

// Cody-Waite split of ln(2); hi carries the leading bits exactly.
constexpr double kLn2Hi = 6.93147180369123816490e-01;
constexpr double kLn2Lo = 1.90821492927058770002e-10;
constexpr double kLog2E = 1.44269504088896340736e+00;

// 1/k! for the degree-13 Taylor kernel on [-ln2/2, ln2/2].
constexpr double kInvFact[] = {
    1.0,
    1.0,
    1.0 / 2,
    1.0 / 6,
    1.0 / 24,
    1.0 / 120,
    1.0 / 720,
    1.0 / 5040,
    1.0 / 40320,
    1.0 / 362880,
    1.0 / 3628800,
    1.0 / 39916800,
    1.0 / 479001600,
    1.0 / 6227020800.0,
};

}  // namespace

double exp_neg(double x) {
    assert(x <= 0.0);
    if (x == 0.0) return 1.0;
    if (x < -745.0) return 0.0;

    const double y = x * kLog2E;
    const double n = std::nearbyint(y);
    const double r = (x - n * kLn2Hi) - n * kLn2Lo;

    double p = kInvFact[13];
    for (int k = 12; k >= 0; --k) {
        p = p * r + kInvFact[k];
    }
    return std::ldexp(p, static_cast<int>(n));
}

}  // namespace denomae::detmath
