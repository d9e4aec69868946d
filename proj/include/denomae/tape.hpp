#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "denomae/rng.hpp"
#include "denomae/tensor.hpp"

namespace denomae {

// Reverse-mode tape. Ops append nodes holding the forward value and a
// closure that scatters the node's adjoint into its inputs' adjoints.
// Appending preserves topological order, so backward() is a single reverse
// sweep. Adjoint accumulation is additive, which makes fan-out correct.
//
// Reductions (means, sums, norm statistics, softmax denominators) accumulate
// in double regardless of T; element storage stays in T.
template <typename T>
class Tape {
  public:
    struct Ref {
        int id = -1;
        bool valid() const { return id >= 0; }
    };

    using BackFn = std::function<void(Tape&)>;

    Ref leaf(TensorT<T> value, bool needs_grad = false) {
        return push(std::move(value), needs_grad, nullptr, "leaf");
    }
    Ref constant(TensorT<T> value) { return leaf(std::move(value), false); }

    const TensorT<T>& val(Ref r) const { return node(r).value; }

    TensorT<T>& adj(Ref r) {
        Node& n = node(r);
        if (!n.adj_alloc) {
            n.adjoint = TensorT<T>(n.value.shape);
            n.adj_alloc = true;
        }
        return n.adjoint;
    }
    bool has_adj(Ref r) const { return node(r).adj_alloc; }
    const TensorT<T>& val_adj(Ref r) const { return node(r).adjoint; }

    size_t size() const { return nodes_.size(); }
    size_t op_count() const { return op_count_; }
    size_t backward_visits() const { return backward_visits_; }

    // Test hook: append a node with an arbitrary backward closure.
    Ref custom(TensorT<T> value, BackFn back, const char* kind = "custom") {
        return push(std::move(value), true, std::move(back), kind);
    }

    // ---- primitives ----

    Ref add(Ref a, Ref b) {
        const auto& x = val(a);
        const auto& y = val(b);
        if (!x.same_shape(y)) {
            throw ConfigError("add: shape mismatch " + shape_str(x.shape) + " vs " +
                              shape_str(y.shape));
        }
        TensorT<T> out(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] + y.data[i];
        return push(std::move(out), true,
                    [a, b](Tape& t) {
                        const auto& g = t.adj_of_last();
                        accum(t.adj(a), g);
                        accum(t.adj(b), g);
                    },
                    "add");
    }

    Ref sub(Ref a, Ref b) {
        const auto& x = val(a);
        const auto& y = val(b);
        if (!x.same_shape(y)) {
            throw ConfigError("sub: shape mismatch " + shape_str(x.shape) + " vs " +
                              shape_str(y.shape));
        }
        TensorT<T> out(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] - y.data[i];
        return push(std::move(out), true,
                    [a, b](Tape& t) {
                        const auto& g = t.adj_of_last();
                        accum(t.adj(a), g);
                        auto& db = t.adj(b);
                        for (int64_t i = 0; i < g.numel(); ++i) db.data[i] -= g.data[i];
                    },
                    "sub");
    }

    Ref mul(Ref a, Ref b) {
        const auto& x = val(a);
        const auto& y = val(b);
        if (!x.same_shape(y)) {
            throw ConfigError("mul: shape mismatch " + shape_str(x.shape) + " vs " +
                              shape_str(y.shape));
        }
        TensorT<T> out(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] * y.data[i];
        return push(std::move(out), true,
                    [a, b](Tape& t) {
                        const auto& g = t.adj_of_last();
                        const auto& x2 = t.val(a);
                        const auto& y2 = t.val(b);
                        auto& da = t.adj(a);
                        auto& db = t.adj(b);
                        for (int64_t i = 0; i < g.numel(); ++i) {
                            da.data[i] += g.data[i] * y2.data[i];
                            db.data[i] += g.data[i] * x2.data[i];
                        }
                    },
                    "mul");
    }

    // Broadcast add of a length-C vector onto every row of [R,C].
    Ref add_rowvec(Ref m, Ref v) {
        const auto& x = require_rank2(m, "add_rowvec");
        const auto& b = val(v);
        const int C = x.cols();
        if (b.numel() != C) {
            throw ConfigError("add_rowvec: vector " + shape_str(b.shape) +
                              " does not match row width of " + shape_str(x.shape));
        }
        TensorT<T> out(x.shape);
        for (int r = 0; r < x.rows(); ++r) {
            for (int c = 0; c < C; ++c) out.at(r, c) = x.at(r, c) + b.data[c];
        }
        return push(std::move(out), true,
                    [m, v, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        accum(t.adj(m), g);
                        auto& dv = t.adj(v);
                        for (int r = 0; r < g.rows(); ++r) {
                            for (int c = 0; c < C; ++c) dv.data[c] += g.at(r, c);
                        }
                    },
                    "add_rowvec");
    }

    Ref scale(Ref a, double s) {
        const auto& x = val(a);
        TensorT<T> out(x.shape);
        const T sf = static_cast<T>(s);
        for (int64_t i = 0; i < x.numel(); ++i) out.data[i] = x.data[i] * sf;
        return push(std::move(out), true,
                    [a, sf](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (int64_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i] * sf;
                    },
                    "scale");
    }

    Ref matmul(Ref a, Ref b) {
        const auto& x = require_rank2(a, "matmul");
        const auto& y = require_rank2(b, "matmul");
        if (x.cols() != y.rows()) {
            throw ConfigError("matmul: inner dims differ, " + shape_str(x.shape) + " x " +
                              shape_str(y.shape));
        }
        return push(matmul_value(x, y), true,
                    [a, b](Tape& t) {
                        const auto& g = t.adj_of_last();
                        const auto& x2 = t.val(a);
                        const auto& y2 = t.val(b);
                        // dA += g * B^T
                        auto& da = t.adj(a);
                        for (int i = 0; i < x2.rows(); ++i) {
                            for (int j = 0; j < y2.cols(); ++j) {
                                const T gij = g.at(i, j);
                                if (gij == T(0)) continue;
                                for (int k = 0; k < x2.cols(); ++k) {
                                    da.at(i, k) += gij * y2.at(k, j);
                                }
                            }
                        }
                        // dB += A^T * g
                        auto& db = t.adj(b);
                        for (int i = 0; i < x2.rows(); ++i) {
                            for (int k = 0; k < x2.cols(); ++k) {
                                const T aik = x2.at(i, k);
                                if (aik == T(0)) continue;
                                for (int j = 0; j < y2.cols(); ++j) {
                                    db.at(k, j) += aik * g.at(i, j);
                                }
                            }
                        }
                    },
                    "matmul");
    }

    Ref transpose(Ref a) {
        const auto& x = require_rank2(a, "transpose");
        TensorT<T> out({x.cols(), x.rows()});
        for (int r = 0; r < x.rows(); ++r) {
            for (int c = 0; c < x.cols(); ++c) out.at(c, r) = x.at(r, c);
        }
        return push(std::move(out), true,
                    [a](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (int r = 0; r < g.rows(); ++r) {
                            for (int c = 0; c < g.cols(); ++c) da.at(c, r) += g.at(r, c);
                        }
                    },
                    "transpose");
    }

    Ref reshape(Ref a, std::vector<int> shape) {
        const auto& x = val(a);
        if (numel_of(shape) != x.numel()) {
            throw ConfigError("reshape: cannot view " + shape_str(x.shape) + " as " +
                              shape_str(shape));
        }
        TensorT<T> out(std::move(shape), x.data);
        return push(std::move(out), true,
                    [a](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (int64_t i = 0; i < g.numel(); ++i) da.data[i] += g.data[i];
                    },
                    "reshape");
    }

    Ref sum_all(Ref a) {
        const auto& x = val(a);
        double acc = 0.0;
        for (T v : x.data) acc += static_cast<double>(v);
        return push(TensorT<T>::scalar(static_cast<T>(acc)), true,
                    [a](Tape& t) {
                        const T g = t.adj_of_last().data[0];
                        auto& da = t.adj(a);
                        for (auto& v : da.data) v += g;
                    },
                    "sum_all");
    }

    Ref mean_all(Ref a) {
        const auto& x = val(a);
        double acc = 0.0;
        for (T v : x.data) acc += static_cast<double>(v);
        const double inv_n = 1.0 / static_cast<double>(x.numel());
        return push(TensorT<T>::scalar(static_cast<T>(acc * inv_n)), true,
                    [a, inv_n](Tape& t) {
                        const double g = static_cast<double>(t.adj_of_last().data[0]) * inv_n;
                        auto& da = t.adj(a);
                        for (auto& v : da.data) v += static_cast<T>(g);
                    },
                    "mean_all");
    }

    // Mean over rows of [R,C] -> [1,C]. Used for token pooling.
    Ref mean_rows(Ref a) {
        const auto& x = require_rank2(a, "mean_rows");
        const int R = x.rows(), C = x.cols();
        TensorT<T> out({1, C});
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int r = 0; r < R; ++r) acc += static_cast<double>(x.at(r, c));
            out.data[c] = static_cast<T>(acc / R);
        }
        return push(std::move(out), true,
                    [a, R, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        const double inv_r = 1.0 / R;
                        for (int r = 0; r < R; ++r) {
                            for (int c = 0; c < C; ++c) {
                                da.at(r, c) += static_cast<T>(g.data[c] * inv_r);
                            }
                        }
                    },
                    "mean_rows");
    }

    // Rowwise layer normalization of [R,C] with learnable gain/bias of [C].
    Ref layer_norm(Ref a, Ref gain, Ref bias, double eps = 1e-5) {
        const auto& x = require_rank2(a, "layer_norm");
        const auto& gm = val(gain);
        const auto& bt = val(bias);
        const int R = x.rows(), C = x.cols();
        if (gm.numel() != C || bt.numel() != C) {
            throw ConfigError("layer_norm: gain/bias " + shape_str(gm.shape) + "/" +
                              shape_str(bt.shape) + " do not match width of " +
                              shape_str(x.shape));
        }
        TensorT<T> out(x.shape);
        auto stats = std::make_shared<std::vector<double>>(2 * R);  // mean, inv_std per row
        for (int r = 0; r < R; ++r) {
            double s = 0.0, s2 = 0.0;
            for (int c = 0; c < C; ++c) {
                const double v = static_cast<double>(x.at(r, c));
                s += v;
                s2 += v * v;
            }
            const double mean = s / C;
            const double var = s2 / C - mean * mean;
            const double inv_std = 1.0 / std::sqrt(var + eps);
            (*stats)[2 * r] = mean;
            (*stats)[2 * r + 1] = inv_std;
            for (int c = 0; c < C; ++c) {
                const double xhat = (static_cast<double>(x.at(r, c)) - mean) * inv_std;
                out.at(r, c) = static_cast<T>(xhat * static_cast<double>(gm.data[c]) +
                                              static_cast<double>(bt.data[c]));
            }
        }
        return push(std::move(out), true,
                    [a, gain, bias, stats, R, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        const auto& x2 = t.val(a);
                        const auto& gm2 = t.val(gain);
                        auto& da = t.adj(a);
                        auto& dgain = t.adj(gain);
                        auto& dbias = t.adj(bias);
                        for (int r = 0; r < R; ++r) {
                            const double mean = (*stats)[2 * r];
                            const double inv_std = (*stats)[2 * r + 1];
                            double sum_gg = 0.0, sum_ggx = 0.0;
                            for (int c = 0; c < C; ++c) {
                                const double xhat =
                                    (static_cast<double>(x2.at(r, c)) - mean) * inv_std;
                                const double gg = static_cast<double>(g.at(r, c)) *
                                                  static_cast<double>(gm2.data[c]);
                                sum_gg += gg;
                                sum_ggx += gg * xhat;
                                dgain.data[c] += static_cast<T>(static_cast<double>(g.at(r, c)) * xhat);
                                dbias.data[c] += g.at(r, c);
                            }
                            const double m1 = sum_gg / C;
                            const double m2 = sum_ggx / C;
                            for (int c = 0; c < C; ++c) {
                                const double xhat =
                                    (static_cast<double>(x2.at(r, c)) - mean) * inv_std;
                                const double gg = static_cast<double>(g.at(r, c)) *
                                                  static_cast<double>(gm2.data[c]);
                                da.at(r, c) += static_cast<T>((gg - m1 - xhat * m2) * inv_std);
                            }
                        }
                    },
                    "layer_norm");
    }

    // Rowwise softmax of [R,C].
    Ref softmax(Ref a) {
        const auto& x = require_rank2(a, "softmax");
        const int R = x.rows(), C = x.cols();
        TensorT<T> out(x.shape);
        for (int r = 0; r < R; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(x.at(r, c)));
            double denom = 0.0;
            for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(x.at(r, c)) - mx);
            for (int c = 0; c < C; ++c) {
                out.at(r, c) =
                    static_cast<T>(std::exp(static_cast<double>(x.at(r, c)) - mx) / denom);
            }
        }
        Ref self;
        self = push(std::move(out), true,
                    [a, R, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        const auto& y = t.val(t.last_ref());
                        auto& da = t.adj(a);
                        for (int r = 0; r < R; ++r) {
                            double dot = 0.0;
                            for (int c = 0; c < C; ++c) {
                                dot += static_cast<double>(g.at(r, c)) *
                                       static_cast<double>(y.at(r, c));
                            }
                            for (int c = 0; c < C; ++c) {
                                da.at(r, c) += static_cast<T>(
                                    static_cast<double>(y.at(r, c)) *
                                    (static_cast<double>(g.at(r, c)) - dot));
                            }
                        }
                    },
                    "softmax");
        return self;
    }

    // Rowwise log-softmax of [R,C], stable form.
    Ref log_softmax(Ref a) {
        const auto& x = require_rank2(a, "log_softmax");
        const int R = x.rows(), C = x.cols();
        TensorT<T> out(x.shape);
        for (int r = 0; r < R; ++r) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(x.at(r, c)));
            double denom = 0.0;
            for (int c = 0; c < C; ++c) denom += std::exp(static_cast<double>(x.at(r, c)) - mx);
            const double log_denom = std::log(denom) + mx;
            for (int c = 0; c < C; ++c) {
                out.at(r, c) = static_cast<T>(static_cast<double>(x.at(r, c)) - log_denom);
            }
        }
        return push(std::move(out), true,
                    [a, R, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        const auto& y = t.val(t.last_ref());
                        auto& da = t.adj(a);
                        for (int r = 0; r < R; ++r) {
                            double gsum = 0.0;
                            for (int c = 0; c < C; ++c) gsum += static_cast<double>(g.at(r, c));
                            for (int c = 0; c < C; ++c) {
                                const double sm = std::exp(static_cast<double>(y.at(r, c)));
                                da.at(r, c) += static_cast<T>(
                                    static_cast<double>(g.at(r, c)) - sm * gsum);
                            }
                        }
                    },
                    "log_softmax");
    }

    // Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
    Ref gelu(Ref a) {
        const auto& x = val(a);
        TensorT<T> out(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) {
            const double v = static_cast<double>(x.data[i]);
            out.data[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)));
        }
        return push(std::move(out), true,
                    [a](Tape& t) {
                        const auto& g = t.adj_of_last();
                        const auto& x2 = t.val(a);
                        auto& da = t.adj(a);
                        constexpr double inv_sqrt2pi = 0.3989422804014327;
                        for (int64_t i = 0; i < g.numel(); ++i) {
                            const double v = static_cast<double>(x2.data[i]);
                            const double cdf =
                                0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
                            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
                            da.data[i] += static_cast<T>(static_cast<double>(g.data[i]) *
                                                         (cdf + v * pdf));
                        }
                    },
                    "gelu");
    }

    // Inverted dropout. Identity (and unrecorded) in eval mode.
    Ref dropout(Ref a, double p, RngStream& rng, bool train) {
        if (p < 0.0 || p >= 1.0) {
            throw ConfigError("dropout: p must be in [0,1), got " + std::to_string(p));
        }
        if (!train || p == 0.0) return a;
        const auto& x = val(a);
        auto mask = std::make_shared<std::vector<T>>(x.numel());
        const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
        TensorT<T> out(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) {
            const T m = rng.next_double() < p ? T(0) : keep_scale;
            (*mask)[i] = m;
            out.data[i] = x.data[i] * m;
        }
        return push(std::move(out), true,
                    [a, mask](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (int64_t i = 0; i < g.numel(); ++i) {
                            da.data[i] += g.data[i] * (*mask)[i];
                        }
                    },
                    "dropout");
    }

    Ref concat_rows(const std::vector<Ref>& xs) {
        if (xs.empty()) throw ConfigError("concat_rows: empty input list");
        int cols = require_rank2(xs[0], "concat_rows").cols();
        int rows = 0;
        for (Ref r : xs) {
            const auto& x = require_rank2(r, "concat_rows");
            if (x.cols() != cols) {
                throw ConfigError("concat_rows: width mismatch " + shape_str(x.shape));
            }
            rows += x.rows();
        }
        TensorT<T> out({rows, cols});
        int at = 0;
        for (Ref r : xs) {
            const auto& x = val(r);
            std::copy(x.data.begin(), x.data.end(), out.data.begin() + at);
            at += static_cast<int>(x.numel());
        }
        auto parts = std::make_shared<std::vector<Ref>>(xs);
        return push(std::move(out), true,
                    [parts](Tape& t) {
                        const auto& g = t.adj_of_last();
                        int64_t at2 = 0;
                        for (Ref r : *parts) {
                            auto& da = t.adj(r);
                            for (int64_t i = 0; i < da.numel(); ++i) {
                                da.data[i] += g.data[at2 + i];
                            }
                            at2 += da.numel();
                        }
                    },
                    "concat_rows");
    }

    Ref slice_rows(Ref a, int r0, int r1) {
        const auto& x = require_rank2(a, "slice_rows");
        if (r0 < 0 || r1 > x.rows() || r0 >= r1) {
            throw ConfigError("slice_rows: bad range [" + std::to_string(r0) + "," +
                              std::to_string(r1) + ") for " + shape_str(x.shape));
        }
        const int C = x.cols();
        TensorT<T> out({r1 - r0, C});
        std::copy(x.data.begin() + static_cast<size_t>(r0) * C,
                  x.data.begin() + static_cast<size_t>(r1) * C, out.data.begin());
        return push(std::move(out), true,
                    [a, r0, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (int r = 0; r < g.rows(); ++r) {
                            for (int c = 0; c < C; ++c) da.at(r0 + r, c) += g.at(r, c);
                        }
                    },
                    "slice_rows");
    }

    Ref slice_cols(Ref a, int c0, int c1) {
        const auto& x = require_rank2(a, "slice_cols");
        if (c0 < 0 || c1 > x.cols() || c0 >= c1) {
            throw ConfigError("slice_cols: bad range [" + std::to_string(c0) + "," +
                              std::to_string(c1) + ") for " + shape_str(x.shape));
        }
        TensorT<T> out({x.rows(), c1 - c0});
        for (int r = 0; r < x.rows(); ++r) {
            for (int c = c0; c < c1; ++c) out.at(r, c - c0) = x.at(r, c);
        }
        return push(std::move(out), true,
                    [a, c0](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (int r = 0; r < g.rows(); ++r) {
                            for (int c = 0; c < g.cols(); ++c) da.at(r, c0 + c) += g.at(r, c);
                        }
                    },
                    "slice_cols");
    }

    Ref concat_cols(const std::vector<Ref>& xs) {
        if (xs.empty()) throw ConfigError("concat_cols: empty input list");
        int rows = require_rank2(xs[0], "concat_cols").rows();
        int cols = 0;
        for (Ref r : xs) {
            const auto& x = require_rank2(r, "concat_cols");
            if (x.rows() != rows) {
                throw ConfigError("concat_cols: height mismatch " + shape_str(x.shape));
            }
            cols += x.cols();
        }
        TensorT<T> out({rows, cols});
        int at = 0;
        for (Ref r : xs) {
            const auto& x = val(r);
            for (int i = 0; i < rows; ++i) {
                for (int c = 0; c < x.cols(); ++c) out.at(i, at + c) = x.at(i, c);
            }
            at += x.cols();
        }
        auto parts = std::make_shared<std::vector<Ref>>(xs);
        return push(std::move(out), true,
                    [parts, rows](Tape& t) {
                        const auto& g = t.adj_of_last();
                        int at2 = 0;
                        for (Ref r : *parts) {
                            auto& da = t.adj(r);
                            for (int i = 0; i < rows; ++i) {
                                for (int c = 0; c < da.cols(); ++c) {
                                    da.at(i, c) += g.at(i, at2 + c);
                                }
                            }
                            at2 += da.cols();
                        }
                    },
                    "concat_cols");
    }

    Ref gather_rows(Ref a, std::vector<int> idx) {
        const auto& x = require_rank2(a, "gather_rows");
        if (idx.empty()) throw ConfigError("gather_rows: empty index set");
        for (int i : idx) {
            if (i < 0 || i >= x.rows()) {
                throw ConfigError("gather_rows: index " + std::to_string(i) +
                                  " out of range for " + shape_str(x.shape));
            }
        }
        const int C = x.cols();
        TensorT<T> out({static_cast<int>(idx.size()), C});
        for (size_t r = 0; r < idx.size(); ++r) {
            std::copy(x.data.begin() + static_cast<size_t>(idx[r]) * C,
                      x.data.begin() + static_cast<size_t>(idx[r] + 1) * C,
                      out.data.begin() + r * C);
        }
        auto ix = std::make_shared<std::vector<int>>(std::move(idx));
        return push(std::move(out), true,
                    [a, ix, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (size_t r = 0; r < ix->size(); ++r) {
                            for (int c = 0; c < C; ++c) {
                                da.at((*ix)[r], c) += g.at(static_cast<int>(r), c);
                            }
                        }
                    },
                    "gather_rows");
    }

    // Repeat a [1,C] row n times -> [n,C].
    Ref tile_rows(Ref a, int n) {
        const auto& x = require_rank2(a, "tile_rows");
        if (x.rows() != 1) throw ConfigError("tile_rows: expected [1,C], got " + shape_str(x.shape));
        if (n <= 0) throw ConfigError("tile_rows: n must be positive");
        const int C = x.cols();
        TensorT<T> out({n, C});
        for (int r = 0; r < n; ++r) {
            std::copy(x.data.begin(), x.data.end(), out.data.begin() + static_cast<size_t>(r) * C);
        }
        return push(std::move(out), true,
                    [a, C](Tape& t) {
                        const auto& g = t.adj_of_last();
                        auto& da = t.adj(a);
                        for (int r = 0; r < g.rows(); ++r) {
                            for (int c = 0; c < C; ++c) da.data[c] += g.at(r, c);
                        }
                    },
                    "tile_rows");
    }

    // Single element of [R,C] as a scalar node.
    Ref pick(Ref a, int r, int c) {
        const auto& x = require_rank2(a, "pick");
        if (r < 0 || r >= x.rows() || c < 0 || c >= x.cols()) {
            throw ConfigError("pick: (" + std::to_string(r) + "," + std::to_string(c) +
                              ") out of range for " + shape_str(x.shape));
        }
        return push(TensorT<T>::scalar(x.at(r, c)), true,
                    [a, r, c](Tape& t) {
                        t.adj(a).at(r, c) += t.adj_of_last().data[0];
                    },
                    "pick");
    }

    Ref log(Ref a) {
        const auto& x = val(a);
        TensorT<T> out(x.shape);
        for (int64_t i = 0; i < x.numel(); ++i) {
            out.data[i] = static_cast<T>(std::log(static_cast<double>(x.data[i])));
        }
        return push(std::move(out), true,
                    [a](Tape& t) {
                        const auto& g = t.adj_of_last();
                        const auto& x2 = t.val(a);
                        auto& da = t.adj(a);
                        for (int64_t i = 0; i < g.numel(); ++i) {
                            da.data[i] += static_cast<T>(static_cast<double>(g.data[i]) /
                                                         static_cast<double>(x2.data[i]));
                        }
                    },
                    "log");
    }

    // Reverse sweep from a scalar loss. Every reachable op's closure runs
    // exactly once, in reverse recording order.
    void backward(Ref loss) {
        if (val(loss).numel() != 1) {
            throw NumericError("backward: loss must be scalar, got shape " +
                               shape_str(val(loss).shape));
        }
        adj(loss).data[0] = T(1);
        backward_visits_ = 0;
        for (int i = loss.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.adj_alloc && n.back) {
                sweep_pos_ = i;
                n.back(*this);
                ++backward_visits_;
            }
        }
    }

    // Accessors used inside backward closures.
    const TensorT<T>& adj_of_last() const { return nodes_[sweep_pos_].adjoint; }
    Ref last_ref() const { return Ref{sweep_pos_}; }

  private:
    struct Node {
        TensorT<T> value;
        TensorT<T> adjoint;
        bool adj_alloc = false;
        bool needs_grad = false;
        BackFn back;
        const char* kind = "";
    };

    static void accum(TensorT<T>& into, const TensorT<T>& g) {
        for (int64_t i = 0; i < g.numel(); ++i) into.data[i] += g.data[i];
    }

    static TensorT<T> matmul_value(const TensorT<T>& x, const TensorT<T>& y) {
        const int M = x.rows(), K = x.cols(), N = y.cols();
        TensorT<T> out({M, N});
        for (int i = 0; i < M; ++i) {
            T* orow = out.data.data() + static_cast<size_t>(i) * N;
            for (int k = 0; k < K; ++k) {
                const T a = x.at(i, k);
                if (a == T(0)) continue;
                const T* brow = y.data.data() + static_cast<size_t>(k) * N;
                for (int j = 0; j < N; ++j) orow[j] += a * brow[j];
            }
        }
        return out;
    }

    const Node& node(Ref r) const {
        if (!r.valid() || r.id >= static_cast<int>(nodes_.size())) {
            throw ConfigError("tape: invalid node reference");
        }
        return nodes_[r.id];
    }
    Node& node(Ref r) { return const_cast<Node&>(std::as_const(*this).node(r)); }

    Ref push(TensorT<T> value, bool needs_grad, BackFn back, const char* kind) {
        require_finite(value, kind);
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        n.back = std::move(back);
        n.kind = kind;
        nodes_.push_back(std::move(n));
        if (nodes_.back().back) ++op_count_;
        return Ref{static_cast<int>(nodes_.size()) - 1};
    }

    const TensorT<T>& require_rank2(Ref r, const char* kind) const {
        const auto& x = val(r);
        if (x.rank() != 2) {
            throw ConfigError(std::string(kind) + ": expected rank-2 tensor, got " +
                              shape_str(x.shape));
        }
        return x;
    }

    std::vector<Node> nodes_;
    size_t op_count_ = 0;
    size_t backward_visits_ = 0;
    int sweep_pos_ = -1;
};

using TapeF = Tape<float>;
using TapeD = Tape<double>;

}  // namespace denomae
