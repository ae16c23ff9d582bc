#include "dpig/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dpig::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!same_shape(a, b)) {
        throw ShapeError(std::string(op) + ": operand shapes differ, " + shape_str(a.shape) +
                         " vs " + shape_str(b.shape));
    }
}

ValueId finish(Tape& t, Tensor out, const std::vector<ValueId>& parents, Tape::BackFn back,
               const char* op) {
    check_finite(out, op);
    return t.add_node(std::move(out), parents, std::move(back));
}

}  // namespace

ValueId add(Tape& t, ValueId a, ValueId b) {
    const Tensor& xa = t.value(a);
    const Tensor& xb = t.value(b);
    require_same_shape(xa, xb, "add");
    Tensor out = xa;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = xa.data[i] + xb.data[i];
    return finish(
        t, std::move(out), {a, b},
        [a, b](Tape& tp, const std::vector<double>& g) {
            if (tp.wants_grad(a)) {
                auto& ga = tp.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.wants_grad(b)) {
                auto& gb = tp.grad_buf(b);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        },
        "add");
}

ValueId sub(Tape& t, ValueId a, ValueId b) {
    const Tensor& xa = t.value(a);
    const Tensor& xb = t.value(b);
    require_same_shape(xa, xb, "sub");
    Tensor out = xa;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = xa.data[i] - xb.data[i];
    return finish(
        t, std::move(out), {a, b},
        [a, b](Tape& tp, const std::vector<double>& g) {
            if (tp.wants_grad(a)) {
                auto& ga = tp.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (tp.wants_grad(b)) {
                auto& gb = tp.grad_buf(b);
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        },
        "sub");
}

ValueId mul(Tape& t, ValueId a, ValueId b) {
    const Tensor& xa = t.value(a);
    const Tensor& xb = t.value(b);
    require_same_shape(xa, xb, "mul");
    Tensor out = xa;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = xa.data[i] * xb.data[i];
    return finish(
        t, std::move(out), {a, b},
        [a, b](Tape& tp, const std::vector<double>& g) {
            const Tensor& va = tp.value(a);
            const Tensor& vb = tp.value(b);
            if (tp.wants_grad(a)) {
                auto& ga = tp.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb.data[i];
            }
            if (tp.wants_grad(b)) {
                auto& gb = tp.grad_buf(b);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va.data[i];
            }
        },
        "mul");
}

ValueId div(Tape& t, ValueId a, ValueId b) {
    const Tensor& xa = t.value(a);
    const Tensor& xb = t.value(b);
    require_same_shape(xa, xb, "div");
    Tensor out = xa;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = xa.data[i] / xb.data[i];
    return finish(
        t, std::move(out), {a, b},
        [a, b](Tape& tp, const std::vector<double>& g) {
            const Tensor& va = tp.value(a);
            const Tensor& vb = tp.value(b);
            if (tp.wants_grad(a)) {
                auto& ga = tp.grad_buf(a);
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb.data[i];
            }
            if (tp.wants_grad(b)) {
                auto& gb = tp.grad_buf(b);
                for (size_t i = 0; i < g.size(); ++i)
                    gb[i] += g[i] * (-(va.data[i] / (vb.data[i] * vb.data[i])));
            }
        },
        "div");
}

ValueId affine(Tape& t, ValueId x, double scale, double shift) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = scale * v + shift;
    return finish(
        t, std::move(out), {x},
        [x, scale](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * scale;
        },
        "affine");
}

ValueId log(Tape& t, ValueId x) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = std::log(v);
    return finish(
        t, std::move(out), {x},
        [x](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] / vx.data[i];
        },
        "log");
}

ValueId exp(Tape& t, ValueId x) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = std::exp(v);
    std::vector<double> saved = out.data;
    return finish(
        t, std::move(out), {x},
        [x, saved](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * saved[i];
        },
        "exp");
}

ValueId clamp(Tape& t, ValueId x, double lo, double hi) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = std::min(std::max(v, lo), hi);
    return finish(
        t, std::move(out), {x},
        [x, lo, hi](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) {
                if (vx.data[i] > lo && vx.data[i] < hi) gx[i] += g[i];
            }
        },
        "clamp");
}

ValueId clamp_min(Tape& t, ValueId x, double lo) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = std::max(v, lo);
    return finish(
        t, std::move(out), {x},
        [x, lo](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) {
                if (vx.data[i] > lo) gx[i] += g[i];
            }
        },
        "clamp_min");
}

ValueId relu(Tape& t, ValueId x) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return finish(
        t, std::move(out), {x},
        [x](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) {
                if (vx.data[i] > 0.0) gx[i] += g[i];
            }
        },
        "relu");
}

ValueId leaky_relu(Tape& t, ValueId x, double slope) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = v > 0.0 ? v : slope * v;
    return finish(
        t, std::move(out), {x},
        [x, slope](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) {
                gx[i] += vx.data[i] > 0.0 ? g[i] : g[i] * slope;
            }
        },
        "leaky_relu");
}

ValueId sigmoid(Tape& t, ValueId x) {
    const Tensor& xv = t.value(x);
    Tensor out = xv;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    std::vector<double> saved = out.data;
    return finish(
        t, std::move(out), {x},
        [x, saved](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) {
                gx[i] += g[i] * (saved[i] * (1.0 - saved[i]));
            }
        },
        "sigmoid");
}

ValueId sum_all(Tape& t, ValueId x) {
    const Tensor& xv = t.value(x);
    double s = 0.0;
    for (double v : xv.data) s += v;
    return finish(
        t, Tensor::scalar(s), {x},
        [x](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
        },
        "sum_all");
}

ValueId mean_all(Tape& t, ValueId x) {
    const Tensor& xv = t.value(x);
    const double inv = 1.0 / static_cast<double>(xv.numel());
    double s = 0.0;
    for (double v : xv.data) s += v;
    return finish(
        t, Tensor::scalar(s * inv), {x},
        [x, inv](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * inv;
        },
        "mean_all");
}

ValueId sum_cols(Tape& t, ValueId x) {
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2) throw ShapeError("sum_cols expects rank-2, got " + shape_str(xv.shape));
    const int64_t m = xv.shape[0], k = xv.shape[1];
    Tensor out = Tensor::zeros({m});
    for (int64_t r = 0; r < m; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < k; ++c) s += xv.data[static_cast<size_t>(r * k + c)];
        out.data[static_cast<size_t>(r)] = s;
    }
    return finish(
        t, std::move(out), {x},
        [x, m, k](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (int64_t r = 0; r < m; ++r) {
                for (int64_t c = 0; c < k; ++c) gx[static_cast<size_t>(r * k + c)] += g[static_cast<size_t>(r)];
            }
        },
        "sum_cols");
}

ValueId reshape(Tape& t, ValueId x, std::vector<int64_t> shape) {
    const Tensor& xv = t.value(x);
    if (shape_numel(shape) != xv.numel()) {
        throw ShapeError("reshape to " + shape_str(shape) + " from " + shape_str(xv.shape) +
                         " changes element count");
    }
    Tensor out(std::move(shape), xv.data);
    return finish(
        t, std::move(out), {x},
        [x](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        },
        "reshape");
}

ValueId slice_cols(Tape& t, ValueId x, int64_t c0, int64_t c1) {
    const Tensor& xv = t.value(x);
    if (xv.rank() != 2) throw ShapeError("slice_cols expects rank-2, got " + shape_str(xv.shape));
    const int64_t m = xv.shape[0], k = xv.shape[1];
    if (c0 < 0 || c1 > k || c0 >= c1) {
        throw ShapeError("slice_cols [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") invalid for " + shape_str(xv.shape));
    }
    const int64_t w = c1 - c0;
    Tensor out = Tensor::zeros({m, w});
    for (int64_t r = 0; r < m; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            out.data[static_cast<size_t>(r * w + c)] = xv.data[static_cast<size_t>(r * k + c0 + c)];
        }
    }
    return finish(
        t, std::move(out), {x},
        [x, m, k, c0, w](Tape& tp, const std::vector<double>& g) {
            auto& gx = tp.grad_buf(x);
            for (int64_t r = 0; r < m; ++r) {
                for (int64_t c = 0; c < w; ++c) {
                    gx[static_cast<size_t>(r * k + c0 + c)] += g[static_cast<size_t>(r * w + c)];
                }
            }
        },
        "slice_cols");
}

ValueId dense(Tape& t, ValueId x, ValueId w, ValueId b) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1) {
        throw ShapeError("dense expects x[m,in] w[out,in] b[out], got x=" + shape_str(xv.shape) +
                         " w=" + shape_str(wv.shape) + " b=" + shape_str(bv.shape));
    }
    const int64_t m = xv.shape[0], in = xv.shape[1], outn = wv.shape[0];
    if (wv.shape[1] != in || bv.shape[0] != outn) {
        throw ShapeError("dense shape mismatch: x=" + shape_str(xv.shape) +
                         " w=" + shape_str(wv.shape) + " b=" + shape_str(bv.shape));
    }
    Tensor out = Tensor::zeros({m, outn});
    for (int64_t n = 0; n < m; ++n) {
        for (int64_t o = 0; o < outn; ++o) {
            double acc = bv.data[static_cast<size_t>(o)];
            for (int64_t i = 0; i < in; ++i) {
                acc += xv.data[static_cast<size_t>(n * in + i)] * wv.data[static_cast<size_t>(o * in + i)];
            }
            out.data[static_cast<size_t>(n * outn + o)] = acc;
        }
    }
    return finish(
        t, std::move(out), {x, w, b},
        [x, w, b, m, in, outn](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            const Tensor& vw = tp.value(w);
            const bool wx = tp.wants_grad(x);
            const bool ww = tp.wants_grad(w);
            const bool wb = tp.wants_grad(b);
            auto* gx = wx ? &tp.grad_buf(x) : nullptr;
            auto* gw = ww ? &tp.grad_buf(w) : nullptr;
            auto* gb = wb ? &tp.grad_buf(b) : nullptr;
            for (int64_t n = 0; n < m; ++n) {
                for (int64_t o = 0; o < outn; ++o) {
                    const double gv = g[static_cast<size_t>(n * outn + o)];
                    if (wb) (*gb)[static_cast<size_t>(o)] += gv;
                    for (int64_t i = 0; i < in; ++i) {
                        if (ww)
                            (*gw)[static_cast<size_t>(o * in + i)] +=
                                gv * vx.data[static_cast<size_t>(n * in + i)];
                        if (wx)
                            (*gx)[static_cast<size_t>(n * in + i)] +=
                                gv * vw.data[static_cast<size_t>(o * in + i)];
                    }
                }
            }
        },
        "dense");
}

namespace {

struct ConvDims {
    int64_t n, ic, h, w, oc, k, oh, ow;
};

ConvDims conv_dims(const Tensor& x, const Tensor& wt, const Tensor& b, int64_t stride, int64_t pad) {
    if (x.rank() != 4 || wt.rank() != 4 || b.rank() != 1) {
        throw ShapeError("conv2d expects x[n,ic,h,w] w[oc,ic,k,k] b[oc], got x=" +
                         shape_str(x.shape) + " w=" + shape_str(wt.shape) + " b=" + shape_str(b.shape));
    }
    ConvDims d{};
    d.n = x.shape[0];
    d.ic = x.shape[1];
    d.h = x.shape[2];
    d.w = x.shape[3];
    d.oc = wt.shape[0];
    d.k = wt.shape[2];
    if (wt.shape[1] != d.ic || wt.shape[3] != d.k || b.shape[0] != d.oc) {
        throw ShapeError("conv2d channel mismatch: x=" + shape_str(x.shape) +
                         " w=" + shape_str(wt.shape) + " b=" + shape_str(b.shape));
    }
    if (stride < 1) throw ShapeError("conv2d stride must be >= 1");
    const int64_t num_h = d.h + 2 * pad - d.k;
    const int64_t num_w = d.w + 2 * pad - d.k;
    if (num_h < 0 || num_w < 0 || num_h % stride != 0 || num_w % stride != 0) {
        throw ShapeError("conv2d output size not integral: input " + shape_str(x.shape) +
                         ", kernel " + std::to_string(d.k) + ", stride " + std::to_string(stride) +
                         ", pad " + std::to_string(pad) + " gives (h+2p-k)/s = " +
                         std::to_string(num_h) + "/" + std::to_string(stride));
    }
    d.oh = num_h / stride + 1;
    d.ow = num_w / stride + 1;
    return d;
}

}  // namespace

namespace {

// valid kernel index range so that pos*stride - pad + k lies in [0, limit)
inline void kernel_range(int64_t pos, int64_t stride, int64_t pad, int64_t ksize, int64_t limit,
                         int64_t& lo, int64_t& hi) {
    const int64_t base = pos * stride - pad;
    lo = base < 0 ? -base : 0;
    hi = limit - base < ksize ? limit - base : ksize;
}

}  // namespace

ValueId conv2d(Tape& t, ValueId x, ValueId w, ValueId b, int64_t stride, int64_t pad) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    const ConvDims d = conv_dims(xv, wv, bv, stride, pad);
    Tensor out = Tensor::zeros({d.n, d.oc, d.oh, d.ow});
    for (int64_t n = 0; n < d.n; ++n) {
        for (int64_t oc = 0; oc < d.oc; ++oc) {
            for (int64_t oy = 0; oy < d.oh; ++oy) {
                int64_t ky_lo, ky_hi;
                kernel_range(oy, stride, pad, d.k, d.h, ky_lo, ky_hi);
                for (int64_t ox = 0; ox < d.ow; ++ox) {
                    int64_t kx_lo, kx_hi;
                    kernel_range(ox, stride, pad, d.k, d.w, kx_lo, kx_hi);
                    const int64_t ix0 = ox * stride - pad;
                    double acc = bv.data[static_cast<size_t>(oc)];
                    for (int64_t ic = 0; ic < d.ic; ++ic) {
                        for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                            const int64_t iy = oy * stride - pad + ky;
                            const double* xrow = xv.data.data() + ((n * d.ic + ic) * d.h + iy) * d.w;
                            const double* wrow = wv.data.data() + ((oc * d.ic + ic) * d.k + ky) * d.k;
                            for (int64_t kx = kx_lo; kx < kx_hi; ++kx) {
                                acc += xrow[ix0 + kx] * wrow[kx];
                            }
                        }
                    }
                    out.data[static_cast<size_t>(out.off4(n, oc, oy, ox))] = acc;
                }
            }
        }
    }
    return finish(
        t, std::move(out), {x, w, b},
        [x, w, b, d, stride, pad](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            const Tensor& vw = tp.value(w);
            const bool wantx = tp.wants_grad(x);
            const bool wantw = tp.wants_grad(w);
            const bool wantb = tp.wants_grad(b);
            auto* gx = wantx ? &tp.grad_buf(x) : nullptr;
            auto* gw = wantw ? &tp.grad_buf(w) : nullptr;
            auto* gb = wantb ? &tp.grad_buf(b) : nullptr;
            for (int64_t n = 0; n < d.n; ++n) {
                for (int64_t oc = 0; oc < d.oc; ++oc) {
                    for (int64_t oy = 0; oy < d.oh; ++oy) {
                        int64_t ky_lo, ky_hi;
                        kernel_range(oy, stride, pad, d.k, d.h, ky_lo, ky_hi);
                        for (int64_t ox = 0; ox < d.ow; ++ox) {
                            const double gv =
                                g[static_cast<size_t>(((n * d.oc + oc) * d.oh + oy) * d.ow + ox)];
                            if (wantb) (*gb)[static_cast<size_t>(oc)] += gv;
                            int64_t kx_lo, kx_hi;
                            kernel_range(ox, stride, pad, d.k, d.w, kx_lo, kx_hi);
                            const int64_t ix0 = ox * stride - pad;
                            for (int64_t ic = 0; ic < d.ic; ++ic) {
                                for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                                    const int64_t iy = oy * stride - pad + ky;
                                    const int64_t xbase = ((n * d.ic + ic) * d.h + iy) * d.w;
                                    const int64_t wbase = ((oc * d.ic + ic) * d.k + ky) * d.k;
                                    const double* xrow = vx.data.data() + xbase;
                                    const double* wrow = vw.data.data() + wbase;
                                    for (int64_t kx = kx_lo; kx < kx_hi; ++kx) {
                                        if (wantw)
                                            (*gw)[static_cast<size_t>(wbase + kx)] +=
                                                gv * xrow[ix0 + kx];
                                        if (wantx)
                                            (*gx)[static_cast<size_t>(xbase + ix0 + kx)] +=
                                                gv * wrow[kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        },
        "conv2d");
}

ValueId tconv2d(Tape& t, ValueId x, ValueId w, ValueId b, int64_t stride, int64_t pad) {
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (xv.rank() != 4 || wv.rank() != 4 || bv.rank() != 1) {
        throw ShapeError("tconv2d expects x[n,ic,h,w] w[ic,oc,k,k] b[oc], got x=" +
                         shape_str(xv.shape) + " w=" + shape_str(wv.shape) + " b=" + shape_str(bv.shape));
    }
    const int64_t n = xv.shape[0], ic = xv.shape[1], h = xv.shape[2], wd = xv.shape[3];
    const int64_t oc = wv.shape[1], k = wv.shape[2];
    if (wv.shape[0] != ic || wv.shape[3] != k || bv.shape[0] != oc) {
        throw ShapeError("tconv2d channel mismatch: x=" + shape_str(xv.shape) +
                         " w=" + shape_str(wv.shape) + " b=" + shape_str(bv.shape));
    }
    if (stride < 1) throw ShapeError("tconv2d stride must be >= 1");
    const int64_t oh = (h - 1) * stride - 2 * pad + k;
    const int64_t ow = (wd - 1) * stride - 2 * pad + k;
    if (oh <= 0 || ow <= 0) {
        throw ShapeError("tconv2d output size not positive: input " + shape_str(xv.shape) +
                         ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                         ", pad " + std::to_string(pad) + " gives " + std::to_string(oh) + "x" +
                         std::to_string(ow));
    }
    Tensor out = Tensor::zeros({n, oc, oh, ow});
    for (int64_t ni = 0; ni < n; ++ni) {
        for (int64_t o = 0; o < oc; ++o) {
            const double bias = bv.data[static_cast<size_t>(o)];
            for (int64_t y = 0; y < oh; ++y) {
                for (int64_t xx = 0; xx < ow; ++xx) {
                    out.data[static_cast<size_t>(out.off4(ni, o, y, xx))] = bias;
                }
            }
        }
        for (int64_t i = 0; i < ic; ++i) {
            for (int64_t iy = 0; iy < h; ++iy) {
                int64_t ky_lo, ky_hi;
                kernel_range(iy, stride, pad, k, oh, ky_lo, ky_hi);
                for (int64_t ix = 0; ix < wd; ++ix) {
                    const double v = xv.data[static_cast<size_t>(xv.off4(ni, i, iy, ix))];
                    int64_t kx_lo, kx_hi;
                    kernel_range(ix, stride, pad, k, ow, kx_lo, kx_hi);
                    const int64_t ox0 = ix * stride - pad;
                    for (int64_t o = 0; o < oc; ++o) {
                        for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                            const int64_t oy = iy * stride - pad + ky;
                            double* orow =
                                out.data.data() + ((ni * oc + o) * oh + oy) * ow;
                            const double* wrow = wv.data.data() + ((i * oc + o) * k + ky) * k;
                            for (int64_t kx = kx_lo; kx < kx_hi; ++kx) {
                                orow[ox0 + kx] += v * wrow[kx];
                            }
                        }
                    }
                }
            }
        }
    }
    return finish(
        t, std::move(out), {x, w, b},
        [x, w, b, n, ic, h, wd, oc, k, oh, ow, stride, pad](Tape& tp, const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            const Tensor& vw = tp.value(w);
            const bool wantx = tp.wants_grad(x);
            const bool wantw = tp.wants_grad(w);
            const bool wantb = tp.wants_grad(b);
            auto* gx = wantx ? &tp.grad_buf(x) : nullptr;
            auto* gw = wantw ? &tp.grad_buf(w) : nullptr;
            auto* gb = wantb ? &tp.grad_buf(b) : nullptr;
            auto gidx = [oc, oh, ow](int64_t ni, int64_t o, int64_t y, int64_t xx) {
                return static_cast<size_t>(((ni * oc + o) * oh + y) * ow + xx);
            };
            for (int64_t ni = 0; ni < n; ++ni) {
                for (int64_t i = 0; i < ic; ++i) {
                    for (int64_t iy = 0; iy < h; ++iy) {
                        int64_t ky_lo, ky_hi;
                        kernel_range(iy, stride, pad, k, oh, ky_lo, ky_hi);
                        for (int64_t ix = 0; ix < wd; ++ix) {
                            const double xval = vx.data[static_cast<size_t>(vx.off4(ni, i, iy, ix))];
                            int64_t kx_lo, kx_hi;
                            kernel_range(ix, stride, pad, k, ow, kx_lo, kx_hi);
                            const int64_t ox0 = ix * stride - pad;
                            double acc = 0.0;
                            for (int64_t o = 0; o < oc; ++o) {
                                for (int64_t ky = ky_lo; ky < ky_hi; ++ky) {
                                    const int64_t oy = iy * stride - pad + ky;
                                    const double* grow = g.data() + gidx(ni, o, oy, 0);
                                    const int64_t wbase = ((i * oc + o) * k + ky) * k;
                                    const double* wrow = vw.data.data() + wbase;
                                    for (int64_t kx = kx_lo; kx < kx_hi; ++kx) {
                                        const double gv = grow[ox0 + kx];
                                        acc += gv * wrow[kx];
                                        if (wantw) (*gw)[static_cast<size_t>(wbase + kx)] += gv * xval;
                                    }
                                }
                            }
                            if (wantx) (*gx)[static_cast<size_t>(vx.off4(ni, i, iy, ix))] += acc;
                        }
                    }
                }
            }
            if (wantb) {
                for (int64_t ni = 0; ni < n; ++ni) {
                    for (int64_t o = 0; o < oc; ++o) {
                        for (int64_t y = 0; y < oh; ++y) {
                            for (int64_t xx = 0; xx < ow; ++xx) {
                                (*gb)[static_cast<size_t>(o)] += g[gidx(ni, o, y, xx)];
                            }
                        }
                    }
                }
            }
        },
        "tconv2d");
}

ValueId batch_norm2d(Tape& t, ValueId x, ValueId gamma, ValueId beta, Tensor& running_mean,
                     Tensor& running_var, double eps, double momentum, bool training) {
    const Tensor& xv = t.value(x);
    const Tensor& gv = t.value(gamma);
    const Tensor& bv = t.value(beta);
    if (xv.rank() != 4) throw ShapeError("batch_norm2d expects x[n,c,h,w], got " + shape_str(xv.shape));
    const int64_t n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    if (gv.rank() != 1 || gv.shape[0] != c || bv.rank() != 1 || bv.shape[0] != c ||
        running_mean.numel() != c || running_var.numel() != c) {
        throw ShapeError("batch_norm2d parameter shapes do not match channel count " +
                         std::to_string(c));
    }
    const int64_t cnt = n * h * w;
    Tensor out = Tensor::zeros({n, c, h, w});
    std::vector<double> mean(static_cast<size_t>(c), 0.0);
    std::vector<double> inv(static_cast<size_t>(c), 0.0);
    if (training) {
        for (int64_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (int64_t ni = 0; ni < n; ++ni)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t xx = 0; xx < w; ++xx)
                        s += xv.data[static_cast<size_t>(xv.off4(ni, ch, y, xx))];
            const double mu = s / static_cast<double>(cnt);
            double vs = 0.0;
            for (int64_t ni = 0; ni < n; ++ni)
                for (int64_t y = 0; y < h; ++y)
                    for (int64_t xx = 0; xx < w; ++xx) {
                        const double dlt = xv.data[static_cast<size_t>(xv.off4(ni, ch, y, xx))] - mu;
                        vs += dlt * dlt;
                    }
            const double var = vs / static_cast<double>(cnt);  // biased
            mean[static_cast<size_t>(ch)] = mu;
            inv[static_cast<size_t>(ch)] = 1.0 / std::sqrt(var + eps);
            running_mean.data[static_cast<size_t>(ch)] =
                (1.0 - momentum) * running_mean.data[static_cast<size_t>(ch)] + momentum * mu;
            running_var.data[static_cast<size_t>(ch)] =
                (1.0 - momentum) * running_var.data[static_cast<size_t>(ch)] + momentum * var;
        }
    } else {
        for (int64_t ch = 0; ch < c; ++ch) {
            mean[static_cast<size_t>(ch)] = running_mean.data[static_cast<size_t>(ch)];
            inv[static_cast<size_t>(ch)] =
                1.0 / std::sqrt(running_var.data[static_cast<size_t>(ch)] + eps);
        }
    }
    for (int64_t ni = 0; ni < n; ++ni)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double mu = mean[static_cast<size_t>(ch)];
            const double iv = inv[static_cast<size_t>(ch)];
            const double ga = gv.data[static_cast<size_t>(ch)];
            const double be = bv.data[static_cast<size_t>(ch)];
            for (int64_t y = 0; y < h; ++y)
                for (int64_t xx = 0; xx < w; ++xx) {
                    const size_t idx = static_cast<size_t>(xv.off4(ni, ch, y, xx));
                    out.data[idx] = ga * ((xv.data[idx] - mu) * iv) + be;
                }
        }
    return finish(
        t, std::move(out), {x, gamma, beta},
        [x, gamma, beta, n, c, h, w, cnt, mean, inv, training](Tape& tp,
                                                               const std::vector<double>& g) {
            const Tensor& vx = tp.value(x);
            const Tensor& vgamma = tp.value(gamma);
            const bool wantx = tp.wants_grad(x);
            const bool wantg = tp.wants_grad(gamma);
            const bool wantb = tp.wants_grad(beta);
            auto* gx = wantx ? &tp.grad_buf(x) : nullptr;
            auto* gg = wantg ? &tp.grad_buf(gamma) : nullptr;
            auto* gb = wantb ? &tp.grad_buf(beta) : nullptr;
            for (int64_t ch = 0; ch < c; ++ch) {
                const double mu = mean[static_cast<size_t>(ch)];
                const double iv = inv[static_cast<size_t>(ch)];
                const double ga = vgamma.data[static_cast<size_t>(ch)];
                // s1 = sum gy, s2 = sum gy*(x-mu), s3 = sum (x-mu)
                double s1 = 0.0, s2 = 0.0, s3 = 0.0;
                for (int64_t ni = 0; ni < n; ++ni)
                    for (int64_t y = 0; y < h; ++y)
                        for (int64_t xx = 0; xx < w; ++xx) {
                            const size_t idx = static_cast<size_t>(vx.off4(ni, ch, y, xx));
                            s1 += g[idx];
                            s2 += g[idx] * (vx.data[idx] - mu);
                            s3 += vx.data[idx] - mu;
                        }
                if (wantg) (*gg)[static_cast<size_t>(ch)] += s2 * iv;
                if (wantb) (*gb)[static_cast<size_t>(ch)] += s1;
                if (!wantx) continue;
                if (training) {
                    const double dvar = s2 * ga * (-0.5) * iv * iv * iv;
                    const double dmu = (-iv * ga) * s1 + dvar * (-2.0 / static_cast<double>(cnt)) * s3;
                    for (int64_t ni = 0; ni < n; ++ni)
                        for (int64_t y = 0; y < h; ++y)
                            for (int64_t xx = 0; xx < w; ++xx) {
                                const size_t idx = static_cast<size_t>(vx.off4(ni, ch, y, xx));
                                (*gx)[idx] += g[idx] * ga * iv +
                                              dvar * 2.0 * (vx.data[idx] - mu) / static_cast<double>(cnt) +
                                              dmu / static_cast<double>(cnt);
                            }
                } else {
                    for (int64_t ni = 0; ni < n; ++ni)
                        for (int64_t y = 0; y < h; ++y)
                            for (int64_t xx = 0; xx < w; ++xx) {
                                const size_t idx = static_cast<size_t>(vx.off4(ni, ch, y, xx));
                                (*gx)[idx] += g[idx] * ga * iv;
                            }
                }
            }
        },
        "batch_norm2d");
}

ValueId cross_entropy_logits(Tape& t, ValueId logits, ValueId target) {
    const Tensor& lv = t.value(logits);
    const Tensor& tv = t.value(target);
    require_same_shape(lv, tv, "cross_entropy_logits");
    if (lv.rank() != 2) {
        throw ShapeError("cross_entropy_logits expects rank-2, got " + shape_str(lv.shape));
    }
    const int64_t m = lv.shape[0], k = lv.shape[1];
    Tensor out = Tensor::zeros({m});
    std::vector<double> probs(static_cast<size_t>(m * k), 0.0);
    for (int64_t r = 0; r < m; ++r) {
        double mx = lv.data[static_cast<size_t>(r * k)];
        for (int64_t c = 1; c < k; ++c) mx = std::max(mx, lv.data[static_cast<size_t>(r * k + c)]);
        double z = 0.0;
        for (int64_t c = 0; c < k; ++c) {
            const double e = std::exp(lv.data[static_cast<size_t>(r * k + c)] - mx);
            probs[static_cast<size_t>(r * k + c)] = e;
            z += e;
        }
        const double lse = mx + std::log(z);
        double dot = 0.0;
        for (int64_t c = 0; c < k; ++c) {
            probs[static_cast<size_t>(r * k + c)] /= z;
            dot += tv.data[static_cast<size_t>(r * k + c)] * lv.data[static_cast<size_t>(r * k + c)];
        }
        out.data[static_cast<size_t>(r)] = lse - dot;
    }
    return finish(
        t, std::move(out), {logits, target},
        [logits, target, m, k, probs](Tape& tp, const std::vector<double>& g) {
            if (!tp.wants_grad(logits)) return;
            const Tensor& vt = tp.value(target);
            auto& gl = tp.grad_buf(logits);
            for (int64_t r = 0; r < m; ++r) {
                const double gv = g[static_cast<size_t>(r)];
                for (int64_t c = 0; c < k; ++c) {
                    const size_t idx = static_cast<size_t>(r * k + c);
                    gl[idx] += gv * (probs[idx] - vt.data[idx]);
                }
            }
        },
        "cross_entropy_logits");
}

}  // namespace dpig::ops
