#include "pagoda/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace pagoda {

namespace {

Var make(Tensor value, const char* op, std::vector<Var> parents) {
    auto n = std::make_shared<Node>(std::move(value));
    n->op = op;
    n->parents = std::move(parents);
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw autograd_error(std::string(op) + ": shape mismatch " + shape_str(a->value.shape) +
                             " vs " + shape_str(b->value.shape));
}

template <class F, class DF>
Var unary(const Var& a, const char* op, F f, DF df) {
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a->value[i]);
    auto n = make(std::move(out), op, {a});
    Node* ap = a.get();
    Node* np = n.get();
    n->backward_fn = [ap, np, df]() {
        for (std::size_t i = 0; i < np->grad.size(); ++i)
            ap->grad[i] += np->grad[i] * df(ap->value[i], np->value[i]);
    };
    return n;
}

} // namespace

Var leaf(Tensor value) { return std::make_shared<Node>(std::move(value)); }
Var constant(Tensor value) { return leaf(std::move(value)); }

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a->value;
    out += b->value;
    auto n = make(std::move(out), "add", {a, b});
    Node *ap = a.get(), *bp = b.get(), *np = n.get();
    n->backward_fn = [ap, bp, np]() {
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
            ap->grad[i] += np->grad[i];
            bp->grad[i] += np->grad[i];
        }
    };
    return n;
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b->value[i];
    auto n = make(std::move(out), "sub", {a, b});
    Node *ap = a.get(), *bp = b.get(), *np = n.get();
    n->backward_fn = [ap, bp, np]() {
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
            ap->grad[i] += np->grad[i];
            bp->grad[i] -= np->grad[i];
        }
    };
    return n;
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->value[i] * b->value[i];
    auto n = make(std::move(out), "mul", {a, b});
    Node *ap = a.get(), *bp = b.get(), *np = n.get();
    n->backward_fn = [ap, bp, np]() {
        for (std::size_t i = 0; i < np->grad.size(); ++i) {
            ap->grad[i] += np->grad[i] * bp->value[i];
            bp->grad[i] += np->grad[i] * ap->value[i];
        }
    };
    return n;
}

Var neg(const Var& a) {
    return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(const Var& a, double s) {
    return unary(a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var shift(const Var& a, double s) {
    return unary(a, "shift", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var relu(const Var& a) {
    return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                 [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var silu(const Var& a) {
    return unary(a, "silu", [](double x) { return x / (1.0 + std::exp(-x)); },
                 [](double x, double) {
                     double s = 1.0 / (1.0 + std::exp(-x));
                     return s * (1.0 + x * (1.0 - s));
                 });
}

Var tanh_v(const Var& a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary(a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](double, double y) { return y * (1.0 - y); });
}

Var exp_v(const Var& a) {
    return unary(a, "exp", [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
}

Var log_v(const Var& a) {
    return unary(a, "log", [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
}

Var softplus(const Var& a) {
    // log(1+e^x) = max(x,0) + log1p(e^{-|x|})
    return unary(a, "softplus",
                 [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::fabs(x))); },
                 [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var square(const Var& a) {
    return unary(a, "square", [](double x) { return x * x; },
                 [](double x, double) { return 2.0 * x; });
}

Var reshape(const Var& a, std::vector<std::size_t> shape) {
    if (Tensor::count(shape) != a->value.size())
        throw autograd_error("reshape: element count mismatch");
    Tensor out(std::move(shape), a->value.data);
    auto n = make(std::move(out), "reshape", {a});
    Node *ap = a.get(), *np = n.get();
    n->backward_fn = [ap, np]() {
        for (std::size_t i = 0; i < np->grad.size(); ++i) ap->grad[i] += np->grad[i];
    };
    return n;
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a->value.data) s += v;
    auto n = make(Tensor::scalar(s), "sum", {a});
    Node *ap = a.get(), *np = n.get();
    n->backward_fn = [ap, np]() {
        double g = np->grad[0];
        for (std::size_t i = 0; i < ap->grad.size(); ++i) ap->grad[i] += g;
    };
    return n;
}

Var mean(const Var& a) {
    if (a->value.size() == 0) throw autograd_error("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a->value.size()));
}

Var sum_rows(const Var& a) {
    if (a->value.rank() != 2) throw autograd_error("sum_rows: rank-2 input required");
    std::size_t m = a->value.dim(0), k = a->value.dim(1);
    Tensor out({m});
    for (std::size_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += a->value.data[r * k + c];
        out[r] = s;
    }
    auto n = make(std::move(out), "sum_rows", {a});
    Node *ap = a.get(), *np = n.get();
    n->backward_fn = [ap, np, m, k]() {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < k; ++c) ap->grad.data[r * k + c] += np->grad[r];
    };
    return n;
}

Var concat_cols(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(0) != b->value.dim(0))
        throw autograd_error("concat_cols: need rank-2 with equal row counts");
    std::size_t m = a->value.dim(0), p = a->value.dim(1), q = b->value.dim(1);
    Tensor out({m, p + q});
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c < p; ++c) out.data[r * (p + q) + c] = a->value.data[r * p + c];
        for (std::size_t c = 0; c < q; ++c) out.data[r * (p + q) + p + c] = b->value.data[r * q + c];
    }
    auto n = make(std::move(out), "concat_cols", {a, b});
    Node *ap = a.get(), *bp = b.get(), *np = n.get();
    n->backward_fn = [ap, bp, np, m, p, q]() {
        for (std::size_t r = 0; r < m; ++r) {
            for (std::size_t c = 0; c < p; ++c) ap->grad.data[r * p + c] += np->grad.data[r * (p + q) + c];
            for (std::size_t c = 0; c < q; ++c) bp->grad.data[r * q + c] += np->grad.data[r * (p + q) + p + c];
        }
    };
    return n;
}

Var matmul(const Var& a, const Var& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
        throw autograd_error("matmul: incompatible shapes " + shape_str(a->value.shape) + " x " +
                             shape_str(b->value.shape));
    std::size_t m = a->value.dim(0), k = a->value.dim(1), n_cols = b->value.dim(1);
    Tensor out({m, n_cols});
    const double* A = a->value.data.data();
    const double* B = b->value.data.data();
    double* C = out.data.data();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t kk = 0; kk < k; ++kk) {
            double aik = A[i * k + kk];
            const double* brow = B + kk * n_cols;
            double* crow = C + i * n_cols;
            for (std::size_t j = 0; j < n_cols; ++j) crow[j] += aik * brow[j];
        }
    auto n = make(std::move(out), "matmul", {a, b});
    Node *ap = a.get(), *bp = b.get(), *np = n.get();
    n->backward_fn = [ap, bp, np, m, k, n_cols]() {
        const double* G = np->grad.data.data();
        const double* A = ap->value.data.data();
        const double* B = bp->value.data.data();
        double* dA = ap->grad.data.data();
        double* dB = bp->grad.data.data();
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n_cols; ++j) {
                double g = G[i * n_cols + j];
                const double* brow = B; // B[kk * n_cols + j]
                for (std::size_t kk = 0; kk < k; ++kk) dA[i * k + kk] += g * brow[kk * n_cols + j];
            }
        // dB = A^T * G
        for (std::size_t kk = 0; kk < k; ++kk)
            for (std::size_t i = 0; i < m; ++i) {
                double aik = A[i * k + kk];
                const double* grow = G + i * n_cols;
                double* brow = dB + kk * n_cols;
                for (std::size_t j = 0; j < n_cols; ++j) brow[j] += aik * grow[j];
            }
    };
    return n;
}

Var add_row(const Var& a, const Var& bias) {
    if (a->value.rank() != 2 || bias->value.rank() != 1 || a->value.dim(1) != bias->value.dim(0))
        throw autograd_error("add_row: need (m,n) + (n,)");
    std::size_t m = a->value.dim(0), n_cols = a->value.dim(1);
    Tensor out = a->value;
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n_cols; ++c) out.data[r * n_cols + c] += bias->value[c];
    auto n = make(std::move(out), "add_row", {a, bias});
    Node *ap = a.get(), *bp = bias.get(), *np = n.get();
    n->backward_fn = [ap, bp, np, m, n_cols]() {
        for (std::size_t r = 0; r < m; ++r)
            for (std::size_t c = 0; c < n_cols; ++c) {
                ap->grad.data[r * n_cols + c] += np->grad.data[r * n_cols + c];
                bp->grad[c] += np->grad.data[r * n_cols + c];
            }
    };
    return n;
}

Var gather_rows(const Var& table, const std::vector<std::size_t>& ids) {
    if (table->value.rank() != 2) throw autograd_error("gather_rows: rank-2 table required");
    std::size_t v = table->value.dim(0), e = table->value.dim(1);
    Tensor out({ids.size(), e});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= v) throw autograd_error("gather_rows: id out of range");
        for (std::size_t c = 0; c < e; ++c) out.data[r * e + c] = table->value.data[ids[r] * e + c];
    }
    auto n = make(std::move(out), "gather_rows", {table});
    Node *tp = table.get(), *np = n.get();
    auto idc = ids;
    n->backward_fn = [tp, np, idc, e]() {
        for (std::size_t r = 0; r < idc.size(); ++r)
            for (std::size_t c = 0; c < e; ++c) tp->grad.data[idc[r] * e + c] += np->grad.data[r * e + c];
    };
    return n;
}

// ---------------------------------------------------------------------------
// Convolutions. Generic over 1-D/2-D by treating 1-D as H=1 would complicate
// the near-identity init bookkeeping, so both are written out.
// ---------------------------------------------------------------------------

Var conv1d(const Var& x, const Var& kernel, const Var& bias) {
    // x (B,L,Cin), kernel (K,Cin,Cout) with K odd, bias (Cout)
    if (x->value.rank() != 3 || kernel->value.rank() != 3)
        throw autograd_error("conv1d: bad ranks");
    std::size_t B = x->value.dim(0), L = x->value.dim(1), Ci = x->value.dim(2);
    std::size_t K = kernel->value.dim(0), Co = kernel->value.dim(2);
    if (kernel->value.dim(1) != Ci || K % 2 != 1) throw autograd_error("conv1d: kernel mismatch");
    long pad = static_cast<long>(K / 2);
    Tensor out({B, L, Co});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t l = 0; l < L; ++l)
            for (std::size_t co = 0; co < Co; ++co) {
                double s = bias->value[co];
                for (std::size_t k = 0; k < K; ++k) {
                    long il = static_cast<long>(l) + static_cast<long>(k) - pad;
                    if (il < 0 || il >= static_cast<long>(L)) continue;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        s += x->value.data[(b * L + il) * Ci + ci] *
                             kernel->value.data[(k * Ci + ci) * Co + co];
                }
                out.data[(b * L + l) * Co + co] = s;
            }
    auto n = make(std::move(out), "conv1d", {x, kernel, bias});
    Node *xp = x.get(), *kp = kernel.get(), *bp = bias.get(), *np = n.get();
    n->backward_fn = [=]() {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t l = 0; l < L; ++l)
                for (std::size_t co = 0; co < Co; ++co) {
                    double g = np->grad.data[(b * L + l) * Co + co];
                    bp->grad[co] += g;
                    for (std::size_t k = 0; k < K; ++k) {
                        long il = static_cast<long>(l) + static_cast<long>(k) - pad;
                        if (il < 0 || il >= static_cast<long>(L)) continue;
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            xp->grad.data[(b * L + il) * Ci + ci] +=
                                g * kp->value.data[(k * Ci + ci) * Co + co];
                            kp->grad.data[(k * Ci + ci) * Co + co] +=
                                g * xp->value.data[(b * L + il) * Ci + ci];
                        }
                    }
                }
    };
    return n;
}

Var conv_transpose1d_x2(const Var& x, const Var& kernel, const Var& bias) {
    // x (B,L,Cin), kernel (4,Cin,Cout), stride 2, pad 1 -> (B,2L,Cout).
    // Input i, tap k lands on output 2i-1+k.
    if (x->value.rank() != 3 || kernel->value.rank() != 3 || kernel->value.dim(0) != 4)
        throw autograd_error("conv_transpose1d_x2: bad shapes");
    std::size_t B = x->value.dim(0), L = x->value.dim(1), Ci = x->value.dim(2);
    std::size_t Co = kernel->value.dim(2);
    if (kernel->value.dim(1) != Ci) throw autograd_error("conv_transpose1d_x2: channel mismatch");
    std::size_t Lo = 2 * L;
    Tensor out({B, Lo, Co});
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t o = 0; o < Lo; ++o)
            for (std::size_t co = 0; co < Co; ++co) out.data[(b * Lo + o) * Co + co] = bias->value[co];
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < L; ++i)
            for (std::size_t k = 0; k < 4; ++k) {
                long o = 2 * static_cast<long>(i) - 1 + static_cast<long>(k);
                if (o < 0 || o >= static_cast<long>(Lo)) continue;
                for (std::size_t ci = 0; ci < Ci; ++ci) {
                    double v = x->value.data[(b * L + i) * Ci + ci];
                    for (std::size_t co = 0; co < Co; ++co)
                        out.data[(b * Lo + o) * Co + co] += v * kernel->value.data[(k * Ci + ci) * Co + co];
                }
            }
    auto n = make(std::move(out), "conv_transpose1d_x2", {x, kernel, bias});
    Node *xp = x.get(), *kp = kernel.get(), *bp = bias.get(), *np = n.get();
    n->backward_fn = [=]() {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Lo; ++o)
                for (std::size_t co = 0; co < Co; ++co) bp->grad[co] += np->grad.data[(b * Lo + o) * Co + co];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t k = 0; k < 4; ++k) {
                    long o = 2 * static_cast<long>(i) - 1 + static_cast<long>(k);
                    if (o < 0 || o >= static_cast<long>(Lo)) continue;
                    for (std::size_t ci = 0; ci < Ci; ++ci)
                        for (std::size_t co = 0; co < Co; ++co) {
                            double g = np->grad.data[(b * Lo + o) * Co + co];
                            xp->grad.data[(b * L + i) * Ci + ci] +=
                                g * kp->value.data[(k * Ci + ci) * Co + co];
                            kp->grad.data[(k * Ci + ci) * Co + co] +=
                                g * xp->value.data[(b * L + i) * Ci + ci];
                        }
                }
    };
    return n;
}

Var conv2d(const Var& x, const Var& kernel, const Var& bias) {
    // x (B,H,W,Cin), kernel (Kh,Kw,Cin,Cout) odd, same padding
    if (x->value.rank() != 4 || kernel->value.rank() != 4)
        throw autograd_error("conv2d: bad ranks");
    std::size_t B = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), Ci = x->value.dim(3);
    std::size_t Kh = kernel->value.dim(0), Kw = kernel->value.dim(1), Co = kernel->value.dim(3);
    if (kernel->value.dim(2) != Ci || Kh % 2 != 1 || Kw % 2 != 1)
        throw autograd_error("conv2d: kernel mismatch");
    long ph = static_cast<long>(Kh / 2), pw = static_cast<long>(Kw / 2);
    Tensor out({B, H, W, Co});
    auto xin = [&](std::size_t b, long h, long w, std::size_t c) {
        return x->value.data[((b * H + h) * W + w) * Ci + c];
    };
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t h = 0; h < H; ++h)
            for (std::size_t w = 0; w < W; ++w)
                for (std::size_t co = 0; co < Co; ++co) {
                    double s = bias->value[co];
                    for (std::size_t kh = 0; kh < Kh; ++kh)
                        for (std::size_t kw = 0; kw < Kw; ++kw) {
                            long ih = static_cast<long>(h + kh) - ph, iw = static_cast<long>(w + kw) - pw;
                            if (ih < 0 || ih >= static_cast<long>(H) || iw < 0 || iw >= static_cast<long>(W))
                                continue;
                            for (std::size_t ci = 0; ci < Ci; ++ci)
                                s += xin(b, ih, iw, ci) *
                                     kernel->value.data[((kh * Kw + kw) * Ci + ci) * Co + co];
                        }
                    out.data[((b * H + h) * W + w) * Co + co] = s;
                }
    auto n = make(std::move(out), "conv2d", {x, kernel, bias});
    Node *xp = x.get(), *kp = kernel.get(), *bp = bias.get(), *np = n.get();
    n->backward_fn = [=]() {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < H; ++h)
                for (std::size_t w = 0; w < W; ++w)
                    for (std::size_t co = 0; co < Co; ++co) {
                        double g = np->grad.data[((b * H + h) * W + w) * Co + co];
                        bp->grad[co] += g;
                        for (std::size_t kh = 0; kh < Kh; ++kh)
                            for (std::size_t kw = 0; kw < Kw; ++kw) {
                                long ih = static_cast<long>(h + kh) - ph,
                                     iw = static_cast<long>(w + kw) - pw;
                                if (ih < 0 || ih >= static_cast<long>(H) || iw < 0 ||
                                    iw >= static_cast<long>(W))
                                    continue;
                                for (std::size_t ci = 0; ci < Ci; ++ci) {
                                    xp->grad.data[((b * H + ih) * W + iw) * Ci + ci] +=
                                        g * kp->value.data[((kh * Kw + kw) * Ci + ci) * Co + co];
                                    kp->grad.data[((kh * Kw + kw) * Ci + ci) * Co + co] +=
                                        g * xp->value.data[((b * H + ih) * W + iw) * Ci + ci];
                                }
                            }
                    }
    };
    return n;
}

Var conv_transpose2d_x2(const Var& x, const Var& kernel, const Var& bias) {
    // x (B,H,W,Cin), kernel (4,4,Cin,Cout), stride 2, pad 1 -> (B,2H,2W,Cout)
    if (x->value.rank() != 4 || kernel->value.rank() != 4 || kernel->value.dim(0) != 4 ||
        kernel->value.dim(1) != 4)
        throw autograd_error("conv_transpose2d_x2: bad shapes");
    std::size_t B = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2), Ci = x->value.dim(3);
    std::size_t Co = kernel->value.dim(3);
    if (kernel->value.dim(2) != Ci) throw autograd_error("conv_transpose2d_x2: channel mismatch");
    std::size_t Ho = 2 * H, Wo = 2 * W;
    Tensor out({B, Ho, Wo, Co});
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = bias->value[i % Co];
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < H; ++i)
            for (std::size_t j = 0; j < W; ++j)
                for (std::size_t kh = 0; kh < 4; ++kh)
                    for (std::size_t kw = 0; kw < 4; ++kw) {
                        long oh = 2 * static_cast<long>(i) - 1 + static_cast<long>(kh);
                        long ow = 2 * static_cast<long>(j) - 1 + static_cast<long>(kw);
                        if (oh < 0 || oh >= static_cast<long>(Ho) || ow < 0 || ow >= static_cast<long>(Wo))
                            continue;
                        for (std::size_t ci = 0; ci < Ci; ++ci) {
                            double v = x->value.data[((b * H + i) * W + j) * Ci + ci];
                            for (std::size_t co = 0; co < Co; ++co)
                                out.data[((b * Ho + oh) * Wo + ow) * Co + co] +=
                                    v * kernel->value.data[((kh * 4 + kw) * Ci + ci) * Co + co];
                        }
                    }
    auto n = make(std::move(out), "conv_transpose2d_x2", {x, kernel, bias});
    Node *xp = x.get(), *kp = kernel.get(), *bp = bias.get(), *np = n.get();
    n->backward_fn = [=]() {
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t o = 0; o < Ho * Wo; ++o)
                for (std::size_t co = 0; co < Co; ++co)
                    bp->grad[co] += np->grad.data[(b * Ho * Wo + o) * Co + co];
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < H; ++i)
                for (std::size_t j = 0; j < W; ++j)
                    for (std::size_t kh = 0; kh < 4; ++kh)
                        for (std::size_t kw = 0; kw < 4; ++kw) {
                            long oh = 2 * static_cast<long>(i) - 1 + static_cast<long>(kh);
                            long ow = 2 * static_cast<long>(j) - 1 + static_cast<long>(kw);
                            if (oh < 0 || oh >= static_cast<long>(Ho) || ow < 0 ||
                                ow >= static_cast<long>(Wo))
                                continue;
                            for (std::size_t ci = 0; ci < Ci; ++ci)
                                for (std::size_t co = 0; co < Co; ++co) {
                                    double g = np->grad.data[((b * Ho + oh) * Wo + ow) * Co + co];
                                    xp->grad.data[((b * H + i) * W + j) * Ci + ci] +=
                                        g * kp->value.data[((kh * 4 + kw) * Ci + ci) * Co + co];
                                    kp->grad.data[((kh * 4 + kw) * Ci + ci) * Co + co] +=
                                        g * xp->value.data[((b * H + i) * W + j) * Ci + ci];
                                }
                        }
    };
    return n;
}

std::vector<Node*> topo_order(const Var& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order; // parents before children
}

void backward(const Var& root) {
    if (root->value.size() != 1)
        throw autograd_error("backward: root must be scalar, got " + shape_str(root->value.shape));
    auto order = topo_order(root);
    for (Node* n : order) {
        if (!n->value.all_finite())
            throw autograd_error(std::string("backward: non-finite value in forward graph at op '") +
                                 n->op + "'");
        std::fill(n->grad.data.begin(), n->grad.data.end(), 0.0);
    }
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

} // namespace pagoda
