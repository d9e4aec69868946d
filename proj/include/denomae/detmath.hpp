#pragma once

namespace denomae::detmath {

// exp(x) for x <= 0, built from IEEE-exact primitives (+, *, ldexp, nearbyint)
// and a fixed-degree Taylor kernel so results are identical across platforms
// and libms. Used by the renderers, whose output files are compared
// byte-for-byte. Relative error is below 1e-15 on [-50, 0].
double exp_neg(double x);

}  // namespace denomae::detmath
