#include "denomae/gradcheck.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

#include "denomae/errors.hpp"
#include "denomae/rng.hpp"

namespace denomae {

namespace {

double eval_loss(const std::vector<TensorT<double>>& values, const DLossFn& f) {
    Tape<double> tape;
    std::vector<Tape<double>::Ref> refs;
    refs.reserve(values.size());
    for (const auto& v : values) refs.push_back(tape.leaf(v, false));
    const auto loss = f(tape, refs);
    return tape.val(loss).data[0];
}

}  // namespace

GradCheckReport gradient_check(const std::vector<Parameter*>& params, const DLossFn& f,
                               const GradCheckOptions& opts) {
    if (!(opts.eps > 0.0)) throw ConfigError("gradient_check: eps must be > 0");

    std::vector<TensorT<double>> base;
    base.reserve(params.size());
    for (const Parameter* p : params) base.push_back(cast_tensor<double>(p->value));

    const double l0 = eval_loss(base, f);
    const double l1 = eval_loss(base, f);
    if (std::bit_cast<uint64_t>(l0) != std::bit_cast<uint64_t>(l1)) {
        throw NumericError("gradient_check: f is not deterministic (two passes differ)");
    }

    // Analytic gradients through the tape.
    std::vector<TensorT<double>> analytic;
    {
        Tape<double> tape;
        std::vector<Tape<double>::Ref> refs;
        for (const auto& v : base) refs.push_back(tape.leaf(v, true));
        const auto loss = f(tape, refs);
        tape.backward(loss);
        for (auto ref : refs) {
            analytic.push_back(tape.has_adj(ref) ? tape.val_adj(ref)
                                                 : TensorT<double>(tape.val(ref).shape));
        }
    }

    GradCheckReport report;
    report.pass = true;
    RngStream root(opts.seed);
    for (size_t pi = 0; pi < params.size(); ++pi) {
        GradCheckEntry entry;
        entry.param = params[pi]->name;
        const int64_t n = base[pi].numel();

        std::vector<int64_t> idx;
        if (n <= opts.samples_per_param) {
            for (int64_t i = 0; i < n; ++i) idx.push_back(i);
        } else {
            RngStream s = root.child(rng_tag::grad_check, pi);
            while (static_cast<int>(idx.size()) < opts.samples_per_param) {
                const int64_t i = static_cast<int64_t>(s.next_below(static_cast<uint64_t>(n)));
                if (std::find(idx.begin(), idx.end(), i) == idx.end()) idx.push_back(i);
            }
        }

        for (int64_t i : idx) {
            const double saved = base[pi].data[i];
            base[pi].data[i] = saved + opts.eps;
            const double fp = eval_loss(base, f);
            base[pi].data[i] = saved - opts.eps;
            const double fm = eval_loss(base, f);
            base[pi].data[i] = saved;

            const double numeric = (fp - fm) / (2.0 * opts.eps);
            const double exact = analytic[pi].data[i];
            const double abs_err = std::abs(exact - numeric);
            const double rel =
                abs_err / std::max({std::abs(exact), std::abs(numeric), opts.rel_floor});
            entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
            entry.max_rel_err = std::max(entry.max_rel_err, rel);
            ++entry.checked;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    report.pass = report.max_rel_err < opts.tol;
    return report;
}

}  // namespace denomae
