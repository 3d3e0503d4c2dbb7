// Copyright Contributors to the rnd-avatar project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <rnda/core/tape.hpp>

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <string>
#include <vector>

/// Differentiable primitives recorded on a Tape.
namespace rnda::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

// Index bookkeeping for numpy-style broadcasting of two operands.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;
    bool same = false;

    static bool make(const Shape &a, const Shape &b, Broadcast &bc) {
        bc.same = a == b;
        std::size_t r = std::max(a.size(), b.size());
        bc.out.assign(r, 1);
        bc.stride_a.assign(r, 0);
        bc.stride_b.assign(r, 0);
        std::size_t sa = 1, sb = 1;
        for (std::size_t k = 0; k < r; ++k) {
            std::size_t d = r - 1 - k;
            std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
            std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
            if (da != db && da != 1 && db != 1) return false;
            bc.out[d] = std::max(da, db);
            bc.stride_a[d] = da == 1 ? 0 : sa;
            bc.stride_b[d] = db == 1 ? 0 : sb;
            sa *= da;
            sb *= db;
        }
        return true;
    }

    template <class Fn> void for_each(Fn &&fn) const {
        std::size_t n = numel(out);
        if (same) {
            for (std::size_t o = 0; o < n; ++o) fn(o, o, o);
            return;
        }
        std::size_t r = out.size();
        std::vector<std::size_t> idx(r, 0);
        std::size_t ia = 0, ib = 0;
        for (std::size_t o = 0; o < n; ++o) {
            fn(o, ia, ib);
            for (std::size_t d = r; d-- > 0;) {
                ++idx[d];
                ia += stride_a[d];
                ib += stride_b[d];
                if (idx[d] < out[d]) break;
                ia -= stride_a[d] * out[d];
                ib -= stride_b[d] * out[d];
                idx[d] = 0;
            }
        }
    }
};

inline std::size_t rows_of(const Shape &s) { return s.empty() ? 1 : numel(s) / s.back(); }
inline std::size_t last_of(const Shape &s) { return s.empty() ? 1 : s.back(); }

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

/// Broadcasting binary op. `da(x, y, out)` and `db(x, y, out)` are the local partials.
template <class F, class DA, class DB>
Var binary(const char *name, Var a, Var b, F f, DA da, DB db) {
    detail::Broadcast bc;
    if (!detail::Broadcast::make(a.shape(), b.shape(), bc))
        a.tape().shape_error(name, to_string(a.shape()) + " vs " + to_string(b.shape()));
    return a.tape().record(
        name, {a, b},
        [bc, f](InputValues in) {
            const Tensor &x = *in[0];
            const Tensor &y = *in[1];
            Tensor out(bc.out);
            bc.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) { out[o] = f(x[ia], y[ib]); });
            return out;
        },
        [bc, da, db](const Tensor &g, const Tensor &out, InputValues in, InputGrads gr) {
            const Tensor &x = *in[0];
            const Tensor &y = *in[1];
            Tensor *gx = gr[0];
            Tensor *gy = gr[1];
            bc.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
                if (gx) (*gx)[ia] += g[o] * da(x[ia], y[ib], out[o]);
                if (gy) (*gy)[ib] += g[o] * db(x[ia], y[ib], out[o]);
            });
        });
}

template <class F, class DF> Var unary(const char *name, Var a, F f, DF df) {
    return a.tape().record(
        name, {a},
        [f](InputValues in) {
            Tensor out(in[0]->shape());
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = f((*in[0])[i]);
            return out;
        },
        [df](const Tensor &g, const Tensor &out, InputValues in, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i) (*gr[0])[i] += g[i] * df((*in[0])[i], out[i]);
        });
}

inline Var add(Var a, Var b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

inline Var div(Var a, Var b) {
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double out) { return -out / y; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }

inline Var scale(Var a, double s) {
    return unary(
        "scale", a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Var add_scalar(Var a, double s) {
    return unary(
        "add_scalar", a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var exp(Var a) {
    return unary(
        "exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
    return unary(
        "log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var tanh(Var a) {
    return unary(
        "tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline double sigmoid_value(double x) {
    return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline Var sigmoid(Var a) {
    return unary(
        "sigmoid", a, [](double x) { return sigmoid_value(x); }, [](double, double y) { return y * (1.0 - y); });
}

inline double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Var softplus(Var a) {
    return unary(
        "softplus", a, [](double x) { return softplus_value(x); },
        [](double x, double) { return sigmoid_value(x); });
}

inline Var sin(Var a) {
    return unary(
        "sin", a, [](double x) { return std::sin(x); }, [](double x, double) { return std::cos(x); });
}

inline Var cos(Var a) {
    return unary(
        "cos", a, [](double x) { return std::cos(x); }, [](double x, double) { return -std::sin(x); });
}

inline Var square(Var a) {
    return unary(
        "square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var sqrt(Var a) {
    return unary(
        "sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

/// Huber-style smooth |x|: 0.5 x^2 / beta inside |x| < beta, |x| - 0.5 beta outside.
inline Var smooth_abs(Var a, double beta) {
    return unary(
        "smooth_abs", a,
        [beta](double x) {
            double ax = std::abs(x);
            return ax < beta ? 0.5 * x * x / beta : ax - 0.5 * beta;
        },
        [beta](double x, double) {
            if (std::abs(x) < beta) return x / beta;
            return x > 0 ? 1.0 : -1.0;
        });
}

/// min(x, cap); the gradient is zero where the cap is active.
inline Var minimum(Var a, double cap) {
    return unary(
        "minimum", a, [cap](double x) { return std::min(x, cap); },
        [cap](double x, double) { return x < cap ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// (m x k) * (k x n).
inline Var matmul(Var a, Var b) {
    const Shape &sa = a.shape();
    const Shape &sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        a.tape().shape_error("matmul", to_string(sa) + " x " + to_string(sb));
    std::size_t m = sa[0], k = sa[1], n = sb[1];
    return a.tape().record(
        "matmul", {a, b},
        [m, k, n](InputValues in) {
            Tensor out({m, n});
            detail::Map(out.data(), m, n).noalias() =
                detail::MapC(in[0]->data(), m, k) * detail::MapC(in[1]->data(), k, n);
            g_mac_count += m * k * n;
            return out;
        },
        [m, k, n](const Tensor &g, const Tensor &, InputValues in, InputGrads gr) {
            detail::MapC G(g.data(), m, n);
            if (gr[0]) detail::Map(gr[0]->data(), m, k).noalias() += G * detail::MapC(in[1]->data(), k, n).transpose();
            if (gr[1]) detail::Map(gr[1]->data(), k, n).noalias() += detail::MapC(in[0]->data(), m, k).transpose() * G;
        });
}

/// Batched (B x m x k) * (B x k x n).
inline Var bmm(Var a, Var b) {
    const Shape &sa = a.shape();
    const Shape &sb = b.shape();
    if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
        a.tape().shape_error("bmm", to_string(sa) + " x " + to_string(sb));
    std::size_t B = sa[0], m = sa[1], k = sa[2], n = sb[2];
    return a.tape().record(
        "bmm", {a, b},
        [B, m, k, n](InputValues in) {
            Tensor out({B, m, n});
            const double *x = in[0]->data();
            const double *y = in[1]->data();
            for (std::size_t q = 0; q < B; ++q) {
                const double *xa = x + q * m * k;
                const double *yb = y + q * k * n;
                double *o = out.data() + q * m * n;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double s = 0.0;
                        for (std::size_t t = 0; t < k; ++t) s += xa[i * k + t] * yb[t * n + j];
                        o[i * n + j] = s;
                    }
            }
            g_mac_count += B * m * k * n;
            return out;
        },
        [B, m, k, n](const Tensor &g, const Tensor &, InputValues in, InputGrads gr) {
            const double *x = in[0]->data();
            const double *y = in[1]->data();
            for (std::size_t q = 0; q < B; ++q) {
                const double *go = g.data() + q * m * n;
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) {
                        double gij = go[i * n + j];
                        if (gij == 0.0) continue;
                        for (std::size_t t = 0; t < k; ++t) {
                            if (gr[0]) (*gr[0])[q * m * k + i * k + t] += gij * y[q * k * n + t * n + j];
                            if (gr[1]) (*gr[1])[q * k * n + t * n + j] += gij * x[q * m * k + i * k + t];
                        }
                    }
            }
        });
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
inline Var transpose(Var a) {
    const Shape &s = a.shape();
    if (s.size() != 2 && s.size() != 3) a.tape().shape_error("transpose", "rank " + std::to_string(s.size()));
    std::size_t B = s.size() == 3 ? s[0] : 1;
    std::size_t m = s[s.size() - 2], n = s.back();
    Shape os = s;
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    return a.tape().record(
        "transpose", {a},
        [B, m, n, os](InputValues in) {
            Tensor out(os);
            for (std::size_t q = 0; q < B; ++q)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) out[q * m * n + j * m + i] = (*in[0])[q * m * n + i * n + j];
            return out;
        },
        [B, m, n](const Tensor &g, const Tensor &, InputValues, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t q = 0; q < B; ++q)
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < n; ++j) (*gr[0])[q * m * n + i * n + j] += g[q * m * n + j * m + i];
        });
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Var reshape(Var a, Shape shape) {
    if (numel(shape) != a.value().size())
        a.tape().shape_error("reshape", to_string(a.shape()) + " -> " + to_string(shape));
    return a.tape().record(
        "reshape", {a}, [shape](InputValues in) { return in[0]->reshaped(shape); },
        [](const Tensor &g, const Tensor &, InputValues, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < g.size(); ++i) (*gr[0])[i] += g[i];
        });
}

inline Var concat(const std::vector<Var> &parts, std::size_t axis) {
    if (parts.empty()) throw Error("concat of zero tensors");
    Tape &t = parts[0].tape();
    Shape out = parts[0].shape();
    if (axis >= out.size()) t.shape_error("concat", "axis out of range");
    out[axis] = 0;
    for (const Var &p : parts) {
        const Shape &s = p.shape();
        if (s.size() != out.size()) t.shape_error("concat", "rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d)
            if (d != axis && s[d] != parts[0].shape()[d])
                t.shape_error("concat", to_string(s) + " vs " + to_string(parts[0].shape()));
        out[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out[d];
    for (std::size_t d = axis + 1; d < out.size(); ++d) inner *= out[d];
    std::vector<std::size_t> widths;
    for (const Var &p : parts) widths.push_back(p.shape()[axis] * inner);
    std::size_t row = out[axis] * inner;
    return t.record(
        "concat", parts,
        [out, outer, widths, row](InputValues in) {
            Tensor r(out);
            std::size_t off = 0;
            for (std::size_t p = 0; p < in.size(); ++p) {
                for (std::size_t o = 0; o < outer; ++o)
                    std::copy_n(in[p]->data() + o * widths[p], widths[p], r.data() + o * row + off);
                off += widths[p];
            }
            return r;
        },
        [outer, widths, row](const Tensor &g, const Tensor &, InputValues, InputGrads gr) {
            std::size_t off = 0;
            for (std::size_t p = 0; p < gr.size(); ++p) {
                if (gr[p])
                    for (std::size_t o = 0; o < outer; ++o)
                        for (std::size_t i = 0; i < widths[p]; ++i) (*gr[p])[o * widths[p] + i] += g[o * row + off + i];
                off += widths[p];
            }
        });
}

/// Elements [begin, end) along `axis`.
inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape &s = a.shape();
    if (axis >= s.size() || begin >= end || end > s[axis])
        a.tape().shape_error("slice", to_string(s) + " axis " + std::to_string(axis) + " [" +
                                          std::to_string(begin) + "," + std::to_string(end) + ")");
    Shape out = s;
    out[axis] = end - begin;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    std::size_t src_row = s[axis] * inner, dst_row = (end - begin) * inner, off = begin * inner;
    return a.tape().record(
        "slice", {a},
        [out, outer, src_row, dst_row, off](InputValues in) {
            Tensor r(out);
            for (std::size_t o = 0; o < outer; ++o)
                std::copy_n(in[0]->data() + o * src_row + off, dst_row, r.data() + o * dst_row);
            return r;
        },
        [outer, src_row, dst_row, off](const Tensor &g, const Tensor &, InputValues, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t o = 0; o < outer; ++o)
                for (std::size_t i = 0; i < dst_row; ++i) (*gr[0])[o * src_row + off + i] += g[o * dst_row + i];
        });
}

/// Rows of a rank-2 tensor selected by index (repeats allowed).
inline Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const Shape &s = a.shape();
    if (s.size() != 2) a.tape().shape_error("gather_rows", "expects rank 2, got " + to_string(s));
    for (std::size_t r : rows)
        if (r >= s[0]) a.tape().shape_error("gather_rows", "row " + std::to_string(r) + " out of range");
    std::size_t c = s[1];
    return a.tape().record(
        "gather_rows", {a},
        [rows, c](InputValues in) {
            Tensor r({rows.size(), c});
            for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(in[0]->data() + rows[i] * c, c, r.data() + i * c);
            return r;
        },
        [rows, c](const Tensor &g, const Tensor &, InputValues, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < rows.size(); ++i)
                for (std::size_t j = 0; j < c; ++j) (*gr[0])[rows[i] * c + j] += g[i * c + j];
        });
}

// ---------------------------------------------------------------------------
// Reductions and normalizations

inline Var sum(Var a) {
    return a.tape().record(
        "sum", {a},
        [](InputValues in) {
            double s = 0.0;
            for (double v : in[0]->values()) s += v;
            return Tensor::scalar(s);
        },
        [](const Tensor &g, const Tensor &, InputValues, InputGrads gr) {
            if (!gr[0]) return;
            for (double &v : gr[0]->values()) v += g[0];
        });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Sum over the last axis; the result keeps a trailing axis of length 1.
inline Var sum_last(Var a) {
    Shape out = a.shape();
    if (out.empty()) a.tape().shape_error("sum_last", "rank 0");
    std::size_t rows = detail::rows_of(out), n = out.back();
    out.back() = 1;
    return a.tape().record(
        "sum_last", {a},
        [out, rows, n](InputValues in) {
            Tensor r(out);
            for (std::size_t i = 0; i < rows; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += (*in[0])[i * n + j];
                r[i] = s;
            }
            return r;
        },
        [rows, n](const Tensor &g, const Tensor &, InputValues, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < n; ++j) (*gr[0])[i * n + j] += g[i];
        });
}

/// Euclidean norm over the last axis (trailing axis kept with length 1).
inline Var l2norm(Var a) {
    Shape out = a.shape();
    if (out.empty()) a.tape().shape_error("l2norm", "rank 0");
    std::size_t rows = detail::rows_of(out), n = out.back();
    out.back() = 1;
    return a.tape().record(
        "l2norm", {a},
        [out, rows, n](InputValues in) {
            Tensor r(out);
            for (std::size_t i = 0; i < rows; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < n; ++j) s += (*in[0])[i * n + j] * (*in[0])[i * n + j];
                r[i] = std::sqrt(s);
            }
            return r;
        },
        [rows, n](const Tensor &g, const Tensor &out, InputValues in, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < rows; ++i) {
                if (out[i] == 0.0) continue;
                for (std::size_t j = 0; j < n; ++j) (*gr[0])[i * n + j] += g[i] * (*in[0])[i * n + j] / out[i];
            }
        });
}

/// Rows scaled to unit norm over the last axis. Rows with norm below `eps`
/// are replaced by `fallback` (or left at zero if `fallback` is empty) and
/// receive no gradient.
inline Var normalize(Var a, std::vector<double> fallback = {}, double eps = 1e-12) {
    const Shape &s = a.shape();
    if (s.empty()) a.tape().shape_error("normalize", "rank 0");
    std::size_t rows = detail::rows_of(s), n = s.back();
    if (!fallback.empty() && fallback.size() != n) a.tape().shape_error("normalize", "fallback length");
    return a.tape().record(
        "normalize", {a},
        [rows, n, fallback, eps](InputValues in) {
            Tensor r(in[0]->shape());
            for (std::size_t i = 0; i < rows; ++i) {
                const double *x = in[0]->data() + i * n;
                double s2 = 0.0;
                for (std::size_t j = 0; j < n; ++j) s2 += x[j] * x[j];
                double len = std::sqrt(s2);
                // Vectors already unit to rounding pass through, so renormalizing is idempotent.
                if (std::abs(s2 - 1.0) <= 4 * std::numeric_limits<double>::epsilon()) len = 1.0;
                for (std::size_t j = 0; j < n; ++j)
                    r[i * n + j] = len < eps ? (fallback.empty() ? 0.0 : fallback[j]) : x[j] / len;
            }
            return r;
        },
        [rows, n, eps](const Tensor &g, const Tensor &out, InputValues in, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < rows; ++i) {
                const double *x = in[0]->data() + i * n;
                double s2 = 0.0;
                for (std::size_t j = 0; j < n; ++j) s2 += x[j] * x[j];
                double len = std::sqrt(s2);
                if (len < eps) continue;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * out[i * n + j];
                for (std::size_t j = 0; j < n; ++j) (*gr[0])[i * n + j] += (g[i * n + j] - out[i * n + j] * dot) / len;
            }
        });
}

/// Softmax over the last axis.
inline Var softmax(Var a) {
    const Shape &s = a.shape();
    if (s.empty()) a.tape().shape_error("softmax", "rank 0");
    std::size_t rows = detail::rows_of(s), n = s.back();
    return a.tape().record(
        "softmax", {a},
        [rows, n](InputValues in) {
            Tensor r(in[0]->shape());
            for (std::size_t i = 0; i < rows; ++i) {
                const double *x = in[0]->data() + i * n;
                double m = *std::max_element(x, x + n);
                double z = 0.0;
                for (std::size_t j = 0; j < n; ++j) z += (r[i * n + j] = std::exp(x[j] - m));
                for (std::size_t j = 0; j < n; ++j) r[i * n + j] /= z;
            }
            return r;
        },
        [rows, n](const Tensor &g, const Tensor &y, InputValues, InputGrads gr) {
            if (!gr[0]) return;
            for (std::size_t i = 0; i < rows; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[i * n + j] * y[i * n + j];
                for (std::size_t j = 0; j < n; ++j) (*gr[0])[i * n + j] += y[i * n + j] * (g[i * n + j] - dot);
            }
        });
}

// ---------------------------------------------------------------------------
// Fused blocks

/// Single-head scaled dot-product attention: softmax(Q K^T / sqrt(d)) V.
/// Q: n x d, K: m x d, V: m x dv.
inline Var attention(Var q, Var k, Var v) {
    const Shape &sq = q.shape(), &sk = k.shape(), &sv = v.shape();
    if (sq.size() != 2 || sk.size() != 2 || sv.size() != 2 || sq[1] != sk[1] || sk[0] != sv[0])
        q.tape().shape_error("attention", "Q" + to_string(sq) + " K" + to_string(sk) + " V" + to_string(sv));
    std::size_t n = sq[0], d = sq[1], m = sk[0], dv = sv[1];
    double sc = 1.0 / std::sqrt(static_cast<double>(d));
    auto probs = [n, d, m, sc](const Tensor &Q, const Tensor &K) {
        detail::RowMat P = (detail::MapC(Q.data(), n, d) * detail::MapC(K.data(), m, d).transpose()) * sc;
        for (Eigen::Index i = 0; i < P.rows(); ++i) {
            double mx = P.row(i).maxCoeff();
            P.row(i) = (P.row(i).array() - mx).exp();
            P.row(i) /= P.row(i).sum();
        }
        return P;
    };
    return q.tape().record(
        "attention", {q, k, v},
        [probs, n, m, dv, d](InputValues in) {
            detail::RowMat P = probs(*in[0], *in[1]);
            Tensor out({n, dv});
            detail::Map(out.data(), n, dv).noalias() = P * detail::MapC(in[2]->data(), m, dv);
            g_mac_count += n * m * d + n * m * dv;
            return out;
        },
        [probs, n, d, m, dv, sc](const Tensor &g, const Tensor &, InputValues in, InputGrads gr) {
            detail::RowMat P = probs(*in[0], *in[1]);
            detail::MapC G(g.data(), n, dv);
            detail::MapC V(in[2]->data(), m, dv);
            if (gr[2]) detail::Map(gr[2]->data(), m, dv).noalias() += P.transpose() * G;
            if (!gr[0] && !gr[1]) return;
            detail::RowMat gP = G * V.transpose();
            detail::RowMat gS = P.array() * (gP.colwise() - (gP.array() * P.array()).rowwise().sum().matrix()).array();
            gS *= sc;
            if (gr[0]) detail::Map(gr[0]->data(), n, d).noalias() += gS * detail::MapC(in[1]->data(), m, d);
            if (gr[1]) detail::Map(gr[1]->data(), m, d).noalias() += gS.transpose() * detail::MapC(in[0]->data(), n, d);
        });
}

/// 2D convolution of an H x W x Cin image with a (k*k*Cin) x Cout kernel
/// plus bias (Cout), zero padding, given stride.
inline Var conv2d(Var x, Var w, Var b, std::size_t ksize, std::size_t stride, std::size_t pad) {
    const Shape &sx = x.shape(), &sw = w.shape(), &sb = b.shape();
    if (sx.size() != 3 || sw.size() != 2 || sw[0] != ksize * ksize * sx[2] || sb.size() != 1 || sb[0] != sw[1])
        x.tape().shape_error("conv2d", "x" + to_string(sx) + " w" + to_string(sw) + " b" + to_string(sb));
    std::size_t H = sx[0], W = sx[1], C = sx[2], Co = sw[1];
    if (H + 2 * pad < ksize || W + 2 * pad < ksize) x.tape().shape_error("conv2d", "image smaller than kernel");
    std::size_t Ho = (H + 2 * pad - ksize) / stride + 1, Wo = (W + 2 * pad - ksize) / stride + 1;
    std::size_t K = ksize * ksize * C;
    auto im2col = [=](const Tensor &img) {
        detail::RowMat cols = detail::RowMat::Zero(Ho * Wo, K);
        for (std::size_t oy = 0; oy < Ho; ++oy)
            for (std::size_t ox = 0; ox < Wo; ++ox)
                for (std::size_t ky = 0; ky < ksize; ++ky)
                    for (std::size_t kx = 0; kx < ksize; ++kx) {
                        long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                        long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                        if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W)) continue;
                        for (std::size_t c = 0; c < C; ++c)
                            cols(oy * Wo + ox, (ky * ksize + kx) * C + c) = img[(iy * W + ix) * C + c];
                    }
        return cols;
    };
    return x.tape().record(
        "conv2d", {x, w, b},
        [=](InputValues in) {
            detail::RowMat cols = im2col(*in[0]);
            Tensor out({Ho, Wo, Co});
            detail::Map O(out.data(), Ho * Wo, Co);
            O.noalias() = cols * detail::MapC(in[1]->data(), K, Co);
            for (std::size_t r = 0; r < Ho * Wo; ++r)
                for (std::size_t c = 0; c < Co; ++c) O(r, c) += (*in[2])[c];
            g_mac_count += Ho * Wo * K * Co;
            return out;
        },
        [=](const Tensor &g, const Tensor &, InputValues in, InputGrads gr) {
            detail::MapC G(g.data(), Ho * Wo, Co);
            if (gr[2])
                for (std::size_t r = 0; r < Ho * Wo; ++r)
                    for (std::size_t c = 0; c < Co; ++c) (*gr[2])[c] += G(r, c);
            if (gr[1]) detail::Map(gr[1]->data(), K, Co).noalias() += im2col(*in[0]).transpose() * G;
            if (gr[0]) {
                detail::RowMat gcols = G * detail::MapC(in[1]->data(), K, Co).transpose();
                for (std::size_t oy = 0; oy < Ho; ++oy)
                    for (std::size_t ox = 0; ox < Wo; ++ox)
                        for (std::size_t ky = 0; ky < ksize; ++ky)
                            for (std::size_t kx = 0; kx < ksize; ++kx) {
                                long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                                long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(H) || ix >= static_cast<long>(W))
                                    continue;
                                for (std::size_t c = 0; c < C; ++c)
                                    (*gr[0])[(iy * W + ix) * C + c] += gcols(oy * Wo + ox, (ky * ksize + kx) * C + c);
                            }
            }
        });
}

} // namespace rnda::ad
