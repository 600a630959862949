#include "odvqa/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cmath>
#include <limits>
#include <string>

#include "odvqa/kernels/kernels.hpp"

namespace odvqa {

namespace {
std::atomic<bool> relu_fault{false};
thread_local bool kink_tracking = false;
thread_local std::uint64_t kink_hash = 0;

void kink_mix(std::uint64_t v) { kink_hash = (kink_hash ^ v) * 0x100000001b3ULL; }
}  // namespace

namespace debug {
void set_relu_gradient_fault(bool on) { relu_fault.store(on); }
void set_kink_tracking(bool on) {
    kink_tracking = on;
    kink_hash = 0xcbf29ce484222325ULL;
}
std::uint64_t kink_fingerprint() { return kink_hash; }
}  // namespace debug

namespace {

[[noreturn]] void shape_fail(const std::string& op, const std::string& detail) {
    throw ShapeError(op + ": " + detail);
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a, const Var<T>& b) {
    if (a.tape != b.tape) throw std::logic_error("operands recorded on different tapes");
    return *a.tape;
}

void require_axis(const std::string& op, const Shape& s, std::size_t axis) {
    if (axis >= s.size()) shape_fail(op, "axis " + std::to_string(axis) + " invalid for rank " + std::to_string(s.size()));
}

// Odometer over an output shape carrying offsets into two (possibly broadcast) inputs.
struct Broadcast {
    Shape out;
    std::vector<std::size_t> sa, sb;  // input strides, 0 on broadcast axes

    Broadcast(const std::string& op, const Shape& a, const Shape& b) {
        if (a.size() != b.size()) shape_fail(op, "rank mismatch " + to_string(a) + " vs " + to_string(b));
        out.resize(a.size());
        const auto stra = strides_of(a), strb = strides_of(b);
        sa.resize(a.size());
        sb.resize(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (a[i] != b[i] && a[i] != 1 && b[i] != 1)
                shape_fail(op, "axis " + std::to_string(i) + " extents " + std::to_string(a[i]) + " and " +
                                   std::to_string(b[i]) + " do not broadcast");
            out[i] = std::max(a[i], b[i]);
            sa[i] = a[i] == 1 ? 0 : stra[i];
            sb[i] = b[i] == 1 ? 0 : strb[i];
        }
    }

    template <typename F>
    void for_each(F&& f) const {
        const std::size_t n = numel(out), r = out.size();
        std::vector<std::size_t> idx(r, 0);
        std::size_t oa = 0, ob = 0;
        for (std::size_t o = 0; o < n; ++o) {
            f(o, oa, ob);
            for (std::size_t ax = r; ax-- > 0;) {
                if (++idx[ax] < out[ax]) {
                    oa += sa[ax];
                    ob += sb[ax];
                    break;
                }
                oa -= sa[ax] * (out[ax] - 1);
                ob -= sb[ax] * (out[ax] - 1);
                idx[ax] = 0;
            }
        }
    }
};

enum class BinOp { add, sub, mul };

template <typename T>
Var<T> binary(const Var<T>& a, const Var<T>& b, BinOp op, const char* name) {
    Tape<T>& tape = tape_of(a, b);
    const Tensor<T>& av = a.value();
    const Tensor<T>& bv = b.value();
    if (av.shape() == bv.shape()) {
        Tensor<T> out(av.shape());
        const std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i)
            out[i] = op == BinOp::add ? av[i] + bv[i] : op == BinOp::sub ? av[i] - bv[i] : av[i] * bv[i];
        return tape.record(std::move(out), {a, b}, [a, b, op](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
            const std::size_t n = g.size();
            if (Tensor<T>* ga = t.grad_sink(a)) {
                if (op == BinOp::mul) {
                    const Tensor<T>& bv = b.value();
                    for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i] * bv[i];
                } else {
                    for (std::size_t i = 0; i < n; ++i) (*ga)[i] += g[i];
                }
            }
            if (Tensor<T>* gb = t.grad_sink(b)) {
                if (op == BinOp::mul) {
                    const Tensor<T>& av = a.value();
                    for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i] * av[i];
                } else if (op == BinOp::sub) {
                    for (std::size_t i = 0; i < n; ++i) (*gb)[i] -= g[i];
                } else {
                    for (std::size_t i = 0; i < n; ++i) (*gb)[i] += g[i];
                }
            }
        });
    }
    Broadcast plan(name, av.shape(), bv.shape());
    Tensor<T> out(plan.out);
    plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
        out[o] = op == BinOp::add ? av[ia] + bv[ib] : op == BinOp::sub ? av[ia] - bv[ib] : av[ia] * bv[ib];
    });
    return tape.record(std::move(out), {a, b}, [a, b, op, plan](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* ga = t.grad_sink(a);
        Tensor<T>* gb = t.grad_sink(b);
        const Tensor<T>& av = a.value();
        const Tensor<T>& bv = b.value();
        plan.for_each([&](std::size_t o, std::size_t ia, std::size_t ib) {
            if (ga) (*ga)[ia] += op == BinOp::mul ? g[o] * bv[ib] : g[o];
            if (gb) (*gb)[ib] += op == BinOp::mul ? g[o] * av[ia] : op == BinOp::sub ? -g[o] : g[o];
        });
    });
}

// outer x n x inner decomposition around one axis.
struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
    AxisSplit(const Shape& s, std::size_t axis) {
        for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
        n = s[axis];
        for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    }
};

const char* kind_name(PoolKind k) { return k == PoolKind::max ? "max" : "avg"; }

}  // namespace

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
    return binary(a, b, BinOp::add, "add");
}
template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
    return binary(a, b, BinOp::sub, "sub");
}
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
    return binary(a, b, BinOp::mul, "mul");
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v *= factor;
    return x.tape->record(std::move(out), {x}, [x, factor](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += factor * g[i];
    });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    if (kink_tracking)
        for (const T& v : out.values()) kink_mix(v > T(0));
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        const Tensor<T>& xv = x.value();
        const T sign = relu_fault.load() ? T(-1) : T(1);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > T(0)) (*gx)[i] += sign * g[i];
    });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
    Tensor<T> out = x.value();
    for (auto& v : out.values()) v = T(1) / (T(1) + std::exp(-v));
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& y) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * y[i] * (T(1) - y[i]);
    });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
    T s(0);
    for (T v : x.value().values()) s += v;
    return x.tape->record(Tensor<T>::scalar(s), {x}, [x](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (auto& v : gx->values()) v += g[0];
    });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
    return scale(sum(x), T(1) / static_cast<T>(x.value().size()));
}

template <typename T>
Var<T> pick(const Var<T>& x, std::size_t flat_index) {
    if (flat_index >= x.value().size()) throw std::out_of_range("pick: index outside tensor");
    return x.tape->record(Tensor<T>::scalar(x.value()[flat_index]), {x},
                          [x, flat_index](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) { (*t.grad_sink(x))[flat_index] += g[0]; });
}

template <typename T>
Var<T> reduce_mean(const Var<T>& x, std::size_t axis) {
    require_axis("reduce_mean", x.shape(), axis);
    const AxisSplit s(x.shape(), axis);
    Shape os = x.shape();
    os[axis] = 1;
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    const T inv = T(1) / static_cast<T>(s.n);
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t k = 0; k < s.n; ++k)
            for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += xv[(o * s.n + k) * s.inner + i] * inv;
    return x.tape->record(std::move(out), {x}, [x, s, inv](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t k = 0; k < s.n; ++k)
                for (std::size_t i = 0; i < s.inner; ++i) (*gx)[(o * s.n + k) * s.inner + i] += g[o * s.inner + i] * inv;
    });
}

template <typename T>
Var<T> reduce_max(const Var<T>& x, std::size_t axis) {
    require_axis("reduce_max", x.shape(), axis);
    const AxisSplit s(x.shape(), axis);
    Shape os = x.shape();
    os[axis] = 1;
    Tensor<T> out(os);
    std::vector<std::size_t> arg(out.size());
    const Tensor<T>& xv = x.value();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            std::size_t best = o * s.n * s.inner + i;
            for (std::size_t k = 1; k < s.n; ++k) {
                const std::size_t idx = (o * s.n + k) * s.inner + i;
                if (xv[idx] > xv[best]) best = idx;
            }
            out[o * s.inner + i] = xv[best];
            arg[o * s.inner + i] = best;
        }
    if (kink_tracking)
        for (std::size_t a : arg) kink_mix(a);
    return x.tape->record(std::move(out), {x}, [x, arg = std::move(arg)](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t o = 0; o < g.size(); ++o) (*gx)[arg[o]] += g[o];
    });
}

template <typename T>
Var<T> global_average_pool(const Var<T>& x, std::size_t keep) {
    const Shape& xs = x.shape();
    if (keep == 0 || keep >= xs.size())
        shape_fail("global_average_pool", "cannot keep " + std::to_string(keep) + " axes of " + to_string(xs));
    Shape os(xs.begin(), xs.begin() + static_cast<std::ptrdiff_t>(keep));
    const std::size_t groups = numel(os), span = x.value().size() / groups;
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    const T inv = T(1) / static_cast<T>(span);
    for (std::size_t gi = 0; gi < groups; ++gi) {
        T s(0);
        for (std::size_t k = 0; k < span; ++k) s += xv[gi * span + k];
        out[gi] = s * inv;
    }
    return x.tape->record(std::move(out), {x}, [x, span, inv](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t gi = 0; gi < g.size(); ++gi)
            for (std::size_t k = 0; k < span; ++k) (*gx)[gi * span + k] += g[gi] * inv;
    });
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
    Tensor<T> out = x.value().reshaped(std::move(shape));
    return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i];
    });
}

template <typename T>
Var<T> permute(const Var<T>& x, const std::vector<std::size_t>& order) {
    const Shape& xs = x.shape();
    if (order.size() != xs.size()) shape_fail("permute", "order rank does not match " + to_string(xs));
    std::vector<bool> seen(order.size(), false);
    for (std::size_t ax : order) {
        if (ax >= xs.size() || seen[ax]) shape_fail("permute", "order is not a permutation");
        seen[ax] = true;
    }
    const auto xstr = strides_of(xs);
    Shape os(xs.size());
    std::vector<std::size_t> src_stride(xs.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        os[i] = xs[order[i]];
        src_stride[i] = xstr[order[i]];
    }
    // Reuse the broadcast odometer; its second stream is unused.
    Broadcast plan("permute", os, os);
    plan.sa = src_stride;
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    plan.for_each([&](std::size_t o, std::size_t ia, std::size_t) { out[o] = xv[ia]; });
    return x.tape->record(std::move(out), {x}, [x, plan](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        plan.for_each([&](std::size_t o, std::size_t ia, std::size_t) { (*gx)[ia] += g[o]; });
    });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat: no operands");
    const Shape& first = parts.front().shape();
    require_axis("concat", first, axis);
    Shape os = first;
    os[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size()) shape_fail("concat", "rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != first[i])
                shape_fail("concat", "axis " + std::to_string(i) + " differs: " + to_string(s) + " vs " + to_string(first));
        os[axis] += s[axis];
    }
    const AxisSplit outer_split(os, axis);
    Tensor<T> out(os);
    std::vector<std::size_t> offsets;
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t chunk = p.shape()[axis] * outer_split.inner;
        const Tensor<T>& pv = p.value();
        for (std::size_t o = 0; o < outer_split.outer; ++o)
            std::copy_n(pv.data() + o * chunk, chunk, out.data() + o * outer_split.n * outer_split.inner + off);
        off += chunk;
    }
    Tape<T>& tape = *parts.front().tape;
    return tape.record(std::move(out), parts, [parts, offsets, outer_split, axis](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        for (std::size_t k = 0; k < parts.size(); ++k) {
            Tensor<T>* gp = t.grad_sink(parts[k]);
            if (!gp) continue;
            const std::size_t chunk = parts[k].shape()[axis] * outer_split.inner;
            for (std::size_t o = 0; o < outer_split.outer; ++o) {
                const T* src = g.data() + o * outer_split.n * outer_split.inner + offsets[k];
                T* dst = gp->data() + o * chunk;
                for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
            }
        }
    });
}

template <typename T>
Var<T> slice(const Var<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& xs = x.shape();
    require_axis("slice", xs, axis);
    if (begin >= end || end > xs[axis])
        shape_fail("slice", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for axis " +
                                std::to_string(axis) + " of " + to_string(xs));
    const AxisSplit split(xs, axis);
    Shape os = xs;
    os[axis] = end - begin;
    const std::size_t chunk = (end - begin) * split.inner;
    const std::size_t offset = begin * split.inner;
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    for (std::size_t o = 0; o < split.outer; ++o)
        std::copy_n(xv.data() + o * split.n * split.inner + offset, chunk, out.data() + o * chunk);
    return x.tape->record(std::move(out), {x}, [x, split, chunk, offset](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t o = 0; o < split.outer; ++o) {
            const T* src = g.data() + o * chunk;
            T* dst = gx->data() + o * split.n * split.inner + offset;
            for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
        }
    });
}

template <typename T>
Var<T> softmax(const Var<T>& x, std::size_t axis) {
    require_axis("softmax", x.shape(), axis);
    const AxisSplit s(x.shape(), axis);
    Tensor<T> out(x.shape());
    const Tensor<T>& xv = x.value();
    for (std::size_t o = 0; o < s.outer; ++o)
        for (std::size_t i = 0; i < s.inner; ++i) {
            const std::size_t base = o * s.n * s.inner + i;
            T mx = xv[base];
            for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, xv[base + k * s.inner]);
            T z(0);
            for (std::size_t k = 0; k < s.n; ++k) {
                const T e = std::exp(xv[base + k * s.inner] - mx);
                out[base + k * s.inner] = e;
                z += e;
            }
            for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
        }
    return x.tape->record(std::move(out), {x}, [x, s](Tape<T>& t, const Tensor<T>& g, const Tensor<T>& yv) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t o = 0; o < s.outer; ++o)
            for (std::size_t i = 0; i < s.inner; ++i) {
                const std::size_t base = o * s.n * s.inner + i;
                T dotv(0);
                for (std::size_t k = 0; k < s.n; ++k) dotv += g[base + k * s.inner] * yv[base + k * s.inner];
                for (std::size_t k = 0; k < s.n; ++k) {
                    const std::size_t idx = base + k * s.inner;
                    (*gx)[idx] += yv[idx] * (g[idx] - dotv);
                }
            }
    });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (ws.size() != 2) shape_fail("linear", "weight must be [out, in], got " + to_string(ws));
    const std::size_t in = ws[1], outc = ws[0];
    if (xs.back() != in) shape_fail("linear", "input last axis " + std::to_string(xs.back()) + " vs weight in " + std::to_string(in));
    if (bias.shape() != Shape{outc}) shape_fail("linear", "bias " + to_string(bias.shape()) + " vs out " + std::to_string(outc));
    const std::size_t rows = x.value().size() / in;
    Shape os = xs;
    os.back() = outc;
    Tensor<T> out(os);
    const auto& k = kernels::active<T>();
    k.gemm_nt(rows, outc, in, x.value().data(), in, weight.value().data(), in, out.data(), outc, false);
    const Tensor<T>& bv = bias.value();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < outc; ++c) out[r * outc + c] += bv[c];
    return x.tape->record(std::move(out), {x, weight, bias}, [x, weight, bias, rows, in, outc](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const auto& k = kernels::active<T>();
        if (Tensor<T>* gx = t.grad_sink(x))
            k.gemm_nn(rows, in, outc, g.data(), outc, weight.value().data(), in, gx->data(), in, true);
        if (Tensor<T>* gw = t.grad_sink(weight))
            k.gemm_tn(outc, in, rows, g.data(), outc, x.value().data(), in, gw->data(), in, true);
        if (Tensor<T>* gb = t.grad_sink(bias))
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < outc; ++c) (*gb)[c] += g[r * outc + c];
    });
}

template <typename T>
Var<T> conv1x1(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() < 2) shape_fail("conv1x1", "input must be [B, C, ...], got " + to_string(xs));
    if (ws.size() < 2 || numel(ws) != ws[0] * ws[1])
        shape_fail("conv1x1", "weight must be [Cout, Cin, 1...], got " + to_string(ws));
    const std::size_t cin = ws[1], cout = ws[0];
    if (xs[1] != cin) shape_fail("conv1x1", "input channels " + std::to_string(xs[1]) + " vs weight " + std::to_string(cin));
    if (bias.shape() != Shape{cout}) shape_fail("conv1x1", "bias shape " + to_string(bias.shape()));
    const std::size_t batch = xs[0];
    const std::size_t pix = x.value().size() / (batch * cin);
    Shape os = xs;
    os[1] = cout;
    Tensor<T> out(os);
    const auto& k = kernels::active<T>();
    for (std::size_t b = 0; b < batch; ++b) {
        T* ob = out.data() + b * cout * pix;
        k.gemm_nn(cout, pix, cin, weight.value().data(), cin, x.value().data() + b * cin * pix, pix, ob, pix, false);
        for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t p = 0; p < pix; ++p) ob[c * pix + p] += bias.value()[c];
    }
    return x.tape->record(std::move(out), {x, weight, bias},
                          [x, weight, bias, batch, cin, cout, pix](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const auto& k = kernels::active<T>();
        Tensor<T>* gx = t.grad_sink(x);
        Tensor<T>* gw = t.grad_sink(weight);
        Tensor<T>* gb = t.grad_sink(bias);
        for (std::size_t b = 0; b < batch; ++b) {
            const T* gob = g.data() + b * cout * pix;
            if (gx) k.gemm_tn(cin, pix, cout, weight.value().data(), cin, gob, pix, gx->data() + b * cin * pix, pix, true);
            if (gw) k.gemm_nt(cout, cin, pix, gob, pix, x.value().data() + b * cin * pix, pix, gw->data(), cin, true);
            if (gb)
                for (std::size_t c = 0; c < cout; ++c)
                    for (std::size_t p = 0; p < pix; ++p) (*gb)[c] += gob[c * pix + p];
        }
    });
}

namespace {

// [C, P] <-> [P, C] for one sample.
template <typename T>
void to_channels_last(const T* x, std::size_t c, std::size_t pix, T* out) {
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < pix; ++p) out[p * c + ch] = x[ch * pix + p];
}

template <typename T>
void add_channels_first(const T* x, std::size_t c, std::size_t pix, T* out) {
    for (std::size_t p = 0; p < pix; ++p)
        for (std::size_t ch = 0; ch < c; ++ch) out[ch * pix + p] += x[p * c + ch];
}

}  // namespace

// Columns are built channels-last: row p of a sample's [P', taps * Cin] matrix
// holds every tap of output pixel p, so the weight is used as [Cout, taps, Cin].
template <typename T>
Var<T> conv2d_sampled(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                      std::shared_ptr<const KernelSamplingGrid> grid) {
    if (!grid) throw std::invalid_argument("conv2d_sampled: null grid");
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    const bool batched = xs.size() == 4;
    if (xs.size() != 3 && xs.size() != 4) shape_fail("conv2d_sampled", "input must be [C,H,W] or [B,C,H,W], got " + to_string(xs));
    const std::size_t batch = batched ? xs[0] : 1;
    const std::size_t cin = xs[xs.size() - 3], h = xs[xs.size() - 2], w = xs[xs.size() - 1];
    if (h != grid->in_height || w != grid->in_width)
        shape_fail("conv2d_sampled", "input H,W = " + std::to_string(h) + "," + std::to_string(w) + " but grid expects " +
                                         std::to_string(grid->in_height) + "," + std::to_string(grid->in_width));
    if (ws.size() != 4 || ws[2] != grid->kernel || ws[3] != grid->kernel)
        shape_fail("conv2d_sampled", "weight " + to_string(ws) + " does not match grid kernel " + std::to_string(grid->kernel));
    if (ws[1] != cin) shape_fail("conv2d_sampled", "input channels " + std::to_string(cin) + " vs weight Cin " + std::to_string(ws[1]));
    const std::size_t cout = ws[0];
    if (bias.shape() != Shape{cout}) shape_fail("conv2d_sampled", "bias " + to_string(bias.shape()) + " vs Cout " + std::to_string(cout));

    const std::size_t taps = grid->taps(), kdim = cin * taps, npix = grid->out_pixels(), in_pix = h * w;
    Shape os = batched ? Shape{batch, cout, grid->out_height, grid->out_width} : Shape{cout, grid->out_height, grid->out_width};

    // weight [Cout, Cin, taps] -> [Cout, taps, Cin]
    auto wr = std::make_shared<std::vector<T>>(cout * kdim);
    const Tensor<T>& wv = weight.value();
    for (std::size_t o = 0; o < cout; ++o)
        for (std::size_t c = 0; c < cin; ++c)
            for (std::size_t t = 0; t < taps; ++t) (*wr)[(o * taps + t) * cin + c] = wv[(o * cin + c) * taps + t];

    const bool keep = x.tape->recording();
    auto cols = std::make_shared<std::vector<T>>((keep ? batch : 1) * npix * kdim);
    std::vector<T> xt(in_pix * cin);
    Tensor<T> out(os);
    const auto& k = kernels::active<T>();
    const T* gw_table = grid->template gather_weights<T>();
    for (std::size_t b = 0; b < batch; ++b) {
        to_channels_last(x.value().data() + b * cin * in_pix, cin, in_pix, xt.data());
        T* col = cols->data() + (keep ? b : 0) * npix * kdim;
        k.gather4(npix * taps, grid->gather_src.data(), gw_table, xt.data(), cin, col);
        T* ob = out.data() + b * cout * npix;
        k.gemm_nt(cout, npix, kdim, wr->data(), kdim, col, kdim, ob, npix, false);
        for (std::size_t c = 0; c < cout; ++c) {
            const T bc = bias.value()[c];
            for (std::size_t p = 0; p < npix; ++p) ob[c * npix + p] += bc;
        }
    }
    return x.tape->record(std::move(out), {x, weight, bias},
                          [x, weight, bias, grid, wr, cols, batch, cin, cout, taps, kdim, npix, in_pix](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const auto& k = kernels::active<T>();
        Tensor<T>* gx = t.grad_sink(x);
        Tensor<T>* gw = t.grad_sink(weight);
        Tensor<T>* gb = t.grad_sink(bias);
        std::vector<T> gwr(gw ? cout * kdim : 0);
        std::vector<T> dcol(gx ? npix * kdim : 0), gxt(gx ? in_pix * cin : 0);
        const T* gw_table = grid->template gather_weights<T>();
        for (std::size_t b = 0; b < batch; ++b) {
            const T* gob = g.data() + b * cout * npix;
            const T* col = cols->data() + b * npix * kdim;
            if (gw) k.gemm_nn(cout, kdim, npix, gob, npix, col, kdim, gwr.data(), kdim, true);
            if (gx) {
                k.gemm_tn(npix, kdim, cout, gob, npix, wr->data(), kdim, dcol.data(), kdim, false);
                std::fill(gxt.begin(), gxt.end(), T(0));
                k.scatter4(npix * taps, grid->gather_src.data(), gw_table, dcol.data(), cin, gxt.data());
                add_channels_first(gxt.data(), cin, in_pix, gx->data() + b * cin * in_pix);
            }
            if (gb)
                for (std::size_t c = 0; c < cout; ++c)
                    for (std::size_t p = 0; p < npix; ++p) (*gb)[c] += gob[c * npix + p];
        }
        if (gw)
            for (std::size_t o = 0; o < cout; ++o)
                for (std::size_t c = 0; c < cin; ++c)
                    for (std::size_t tp = 0; tp < taps; ++tp) (*gw)[(o * cin + c) * taps + tp] += gwr[(o * taps + tp) * cin + c];
    });
}

namespace {

struct Vol {
    std::size_t s, h, w;
    std::size_t size() const { return s * h * w; }
};

// Zero-padded "same" im2col for a k^3 stencil over one [C, S, H, W] sample.
template <typename T>
void vol2col(const T* x, std::size_t cin, Vol v, std::size_t k, T* col) {
    const long long half = static_cast<long long>(k / 2);
    const std::size_t n = v.size();
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b)
                for (std::size_t d = 0; d < k; ++d) {
                    T* row = col + (((c * k + a) * k + b) * k + d) * n;
                    for (std::size_t s = 0; s < v.s; ++s) {
                        const long long ss = static_cast<long long>(s + a) - half;
                        for (std::size_t i = 0; i < v.h; ++i) {
                            const long long ii = static_cast<long long>(i + b) - half;
                            for (std::size_t j = 0; j < v.w; ++j) {
                                const long long jj = static_cast<long long>(j + d) - half;
                                const bool inside = ss >= 0 && ss < static_cast<long long>(v.s) && ii >= 0 &&
                                                    ii < static_cast<long long>(v.h) && jj >= 0 &&
                                                    jj < static_cast<long long>(v.w);
                                row[(s * v.h + i) * v.w + j] =
                                    inside ? x[c * n + (static_cast<std::size_t>(ss) * v.h + static_cast<std::size_t>(ii)) * v.w +
                                               static_cast<std::size_t>(jj)]
                                           : T(0);
                            }
                        }
                    }
                }
}

template <typename T>
void col2vol(const T* col, std::size_t cin, Vol v, std::size_t k, T* gx) {
    const long long half = static_cast<long long>(k / 2);
    const std::size_t n = v.size();
    for (std::size_t c = 0; c < cin; ++c)
        for (std::size_t a = 0; a < k; ++a)
            for (std::size_t b = 0; b < k; ++b)
                for (std::size_t d = 0; d < k; ++d) {
                    const T* row = col + (((c * k + a) * k + b) * k + d) * n;
                    for (std::size_t s = 0; s < v.s; ++s) {
                        const long long ss = static_cast<long long>(s + a) - half;
                        if (ss < 0 || ss >= static_cast<long long>(v.s)) continue;
                        for (std::size_t i = 0; i < v.h; ++i) {
                            const long long ii = static_cast<long long>(i + b) - half;
                            if (ii < 0 || ii >= static_cast<long long>(v.h)) continue;
                            for (std::size_t j = 0; j < v.w; ++j) {
                                const long long jj = static_cast<long long>(j + d) - half;
                                if (jj < 0 || jj >= static_cast<long long>(v.w)) continue;
                                gx[c * n + (static_cast<std::size_t>(ss) * v.h + static_cast<std::size_t>(ii)) * v.w +
                                   static_cast<std::size_t>(jj)] += row[(s * v.h + i) * v.w + j];
                            }
                        }
                    }
                }
}

}  // namespace

template <typename T>
Var<T> conv3d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
    const Shape& xs = x.shape();
    const Shape& ws = weight.shape();
    if (xs.size() != 5) shape_fail("conv3d", "input must be [B,C,S,H,W], got " + to_string(xs));
    if (ws.size() != 5 || ws[2] != ws[3] || ws[3] != ws[4] || ws[2] % 2 == 0)
        shape_fail("conv3d", "weight must be [Cout,Cin,k,k,k] with odd k, got " + to_string(ws));
    if (ws[1] != xs[1]) shape_fail("conv3d", "input channels " + std::to_string(xs[1]) + " vs weight Cin " + std::to_string(ws[1]));
    const std::size_t cout = ws[0], cin = ws[1], ksz = ws[2], batch = xs[0];
    if (bias.shape() != Shape{cout}) shape_fail("conv3d", "bias " + to_string(bias.shape()));
    const Vol v{xs[2], xs[3], xs[4]};
    const std::size_t n = v.size(), kdim = cin * ksz * ksz * ksz;
    Tensor<T> out(Shape{batch, cout, v.s, v.h, v.w});
    std::vector<T> col(kdim * n);
    const auto& k = kernels::active<T>();
    for (std::size_t b = 0; b < batch; ++b) {
        vol2col(x.value().data() + b * cin * n, cin, v, ksz, col.data());
        T* ob = out.data() + b * cout * n;
        k.gemm_nn(cout, n, kdim, weight.value().data(), kdim, col.data(), n, ob, n, false);
        for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t p = 0; p < n; ++p) ob[c * n + p] += bias.value()[c];
    }
    return x.tape->record(std::move(out), {x, weight, bias},
                          [x, weight, bias, v, batch, cin, cout, ksz, kdim, n](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const auto& k = kernels::active<T>();
        Tensor<T>* gx = t.grad_sink(x);
        Tensor<T>* gw = t.grad_sink(weight);
        Tensor<T>* gb = t.grad_sink(bias);
        std::vector<T> col(kdim * n);
        for (std::size_t b = 0; b < batch; ++b) {
            const T* gob = g.data() + b * cout * n;
            if (gw) {
                vol2col(x.value().data() + b * cin * n, cin, v, ksz, col.data());
                k.gemm_nt(cout, kdim, n, gob, n, col.data(), n, gw->data(), kdim, true);
            }
            if (gx) {
                k.gemm_tn(kdim, n, cout, weight.value().data(), kdim, gob, n, col.data(), n, false);
                col2vol(col.data(), cin, v, ksz, gx->data() + b * cin * n);
            }
            if (gb)
                for (std::size_t c = 0; c < cout; ++c)
                    for (std::size_t p = 0; p < n; ++p) (*gb)[c] += gob[c * n + p];
        }
    });
}

template <typename T>
Var<T> matmul_batched(const Var<T>& a, const Var<T>& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    if (as.size() != 3 || bs.size() != 3) shape_fail("matmul_batched", "operands must be rank 3");
    if (as[0] != bs[0]) shape_fail("matmul_batched", "batch extents " + std::to_string(as[0]) + " vs " + std::to_string(bs[0]));
    if (as[2] != bs[1]) shape_fail("matmul_batched", "inner extents " + std::to_string(as[2]) + " vs " + std::to_string(bs[1]));
    const std::size_t nb = as[0], m = as[1], kk = as[2], n = bs[2];
    Tensor<T> out(Shape{nb, m, n});
    const auto& k = kernels::active<T>();
    for (std::size_t i = 0; i < nb; ++i)
        k.gemm_nn(m, n, kk, a.value().data() + i * m * kk, kk, b.value().data() + i * kk * n, n, out.data() + i * m * n, n, false);
    Tape<T>& tape = tape_of(a, b);
    return tape.record(std::move(out), {a, b}, [a, b, nb, m, kk, n](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        const auto& k = kernels::active<T>();
        Tensor<T>* ga = t.grad_sink(a);
        Tensor<T>* gb = t.grad_sink(b);
        for (std::size_t i = 0; i < nb; ++i) {
            const T* gi = g.data() + i * m * n;
            if (ga) k.gemm_nt(m, kk, n, gi, n, b.value().data() + i * kk * n, n, ga->data() + i * m * kk, kk, true);
            if (gb) k.gemm_tn(kk, n, m, a.value().data() + i * m * kk, kk, gi, n, gb->data() + i * kk * n, n, true);
        }
    });
}

namespace {

// Sparse 1D interpolation: each output index reads up to two inputs.
struct Taps1d {
    std::vector<std::size_t> i0, i1;
    std::vector<double> w0, w1;
};

Taps1d taps_for(std::size_t in, Resize mode) {
    Taps1d t;
    const std::size_t out = mode == Resize::down2 ? in / 2 : in * 2;
    t.i0.resize(out);
    t.i1.resize(out);
    t.w0.resize(out);
    t.w1.resize(out);
    for (std::size_t o = 0; o < out; ++o) {
        if (mode == Resize::down2) {
            t.i0[o] = 2 * o;
            t.i1[o] = 2 * o + 1;
            t.w0[o] = t.w1[o] = 0.5;
        } else {
            double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const auto lo = static_cast<std::size_t>(std::floor(src));
            const std::size_t hi = std::min(lo + 1, in - 1);
            const double f = src - static_cast<double>(lo);
            t.i0[o] = lo;
            t.i1[o] = hi;
            t.w0[o] = 1.0 - f;
            t.w1[o] = f;
        }
    }
    return t;
}

}  // namespace

template <typename T>
Var<T> resize(const Var<T>& x, Resize mode) {
    const Shape& xs = x.shape();
    if (xs.size() < 2) shape_fail("resize", "needs at least two axes");
    const std::size_t h = xs[xs.size() - 2], w = xs[xs.size() - 1];
    if (mode == Resize::down2 && (h % 2 || w % 2))
        shape_fail("resize", "down2 requires even H,W, got " + std::to_string(h) + "x" + std::to_string(w));
    const Taps1d th = taps_for(h, mode), tw = taps_for(w, mode);
    const std::size_t oh = th.i0.size(), ow = tw.i0.size();
    const std::size_t planes = x.value().size() / (h * w);
    Shape os = xs;
    os[os.size() - 2] = oh;
    os[os.size() - 1] = ow;
    Tensor<T> out(os);
    const Tensor<T>& xv = x.value();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* xp = xv.data() + pl * h * w;
        T* op = out.data() + pl * oh * ow;
        for (std::size_t i = 0; i < oh; ++i)
            for (std::size_t j = 0; j < ow; ++j) {
                const T* r0 = xp + th.i0[i] * w;
                const T* r1 = xp + th.i1[i] * w;
                const T a = static_cast<T>(tw.w0[j]) * r0[tw.i0[j]] + static_cast<T>(tw.w1[j]) * r0[tw.i1[j]];
                const T b = static_cast<T>(tw.w0[j]) * r1[tw.i0[j]] + static_cast<T>(tw.w1[j]) * r1[tw.i1[j]];
                op[i * ow + j] = static_cast<T>(th.w0[i]) * a + static_cast<T>(th.w1[i]) * b;
            }
    }
    return x.tape->record(std::move(out), {x}, [x, th, tw, planes, h, w, oh, ow](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        for (std::size_t pl = 0; pl < planes; ++pl) {
            T* gp = gx->data() + pl * h * w;
            const T* gop = g.data() + pl * oh * ow;
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j) {
                    const T v = gop[i * ow + j];
                    const T a = static_cast<T>(th.w0[i]) * v, b = static_cast<T>(th.w1[i]) * v;
                    gp[th.i0[i] * w + tw.i0[j]] += a * static_cast<T>(tw.w0[j]);
                    gp[th.i0[i] * w + tw.i1[j]] += a * static_cast<T>(tw.w1[j]);
                    gp[th.i1[i] * w + tw.i0[j]] += b * static_cast<T>(tw.w0[j]);
                    gp[th.i1[i] * w + tw.i1[j]] += b * static_cast<T>(tw.w1[j]);
                }
        }
    });
}

template <typename T>
Var<T> pool3d(const Var<T>& x, std::array<std::size_t, 3> window, std::array<std::size_t, 3> stride, PoolKind kind) {
    const Shape& xs = x.shape();
    if (xs.size() < 3) shape_fail("pool3d", "needs at least three axes, got " + to_string(xs));
    const std::size_t r = xs.size();
    const std::array<std::size_t, 3> in{xs[r - 3], xs[r - 2], xs[r - 1]};
    std::array<std::size_t, 3> out{};
    for (int a = 0; a < 3; ++a) {
        if (window[a] == 0 || stride[a] == 0) shape_fail("pool3d", "zero window or stride");
        if (window[a] > in[a])
            shape_fail("pool3d", std::string(kind_name(kind)) + " window " + std::to_string(window[a]) + " exceeds extent " +
                                     std::to_string(in[a]) + " on axis " + std::to_string(r - 3 + a));
        out[a] = (in[a] - window[a] + stride[a] - 1) / stride[a] + 1;
    }
    const std::size_t planes = x.value().size() / (in[0] * in[1] * in[2]);
    const std::size_t in_vol = in[0] * in[1] * in[2], out_vol = out[0] * out[1] * out[2];
    Shape os = xs;
    for (int a = 0; a < 3; ++a) os[r - 3 + a] = out[a];
    Tensor<T> result(os);
    std::vector<std::size_t> arg(kind == PoolKind::max ? result.size() : 0);
    std::vector<T> inv_count(out_vol);
    const Tensor<T>& xv = x.value();
    for (std::size_t pl = 0; pl < planes; ++pl) {
        const T* xp = xv.data() + pl * in_vol;
        for (std::size_t s = 0; s < out[0]; ++s)
            for (std::size_t i = 0; i < out[1]; ++i)
                for (std::size_t j = 0; j < out[2]; ++j) {
                    const std::size_t o = (s * out[1] + i) * out[2] + j;
                    const std::size_t s0 = s * stride[0], i0 = i * stride[1], j0 = j * stride[2];
                    const std::size_t s1 = std::min(s0 + window[0], in[0]), i1 = std::min(i0 + window[1], in[1]),
                                      j1 = std::min(j0 + window[2], in[2]);
                    T acc = kind == PoolKind::max ? -std::numeric_limits<T>::infinity() : T(0);
                    std::size_t best = 0;
                    for (std::size_t a = s0; a < s1; ++a)
                        for (std::size_t b = i0; b < i1; ++b)
                            for (std::size_t c = j0; c < j1; ++c) {
                                const std::size_t idx = (a * in[1] + b) * in[2] + c;
                                if (kind == PoolKind::max) {
                                    if (xp[idx] > acc) {
                                        acc = xp[idx];
                                        best = idx;
                                    }
                                } else {
                                    acc += xp[idx];
                                }
                            }
                    const std::size_t count = (s1 - s0) * (i1 - i0) * (j1 - j0);
                    inv_count[o] = T(1) / static_cast<T>(count);
                    if (kind == PoolKind::max) {
                        result[pl * out_vol + o] = acc;
                        arg[pl * out_vol + o] = pl * in_vol + best;
                    } else {
                        result[pl * out_vol + o] = acc * inv_count[o];
                    }
                }
    }
    if (kink_tracking && kind == PoolKind::max)
        for (std::size_t a : arg) kink_mix(a);
    return x.tape->record(std::move(result), {x},
                          [x, kind, arg = std::move(arg), inv_count = std::move(inv_count), window, stride, in, out, planes,
                           in_vol, out_vol](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        if (kind == PoolKind::max) {
            for (std::size_t o = 0; o < g.size(); ++o) (*gx)[arg[o]] += g[o];
            return;
        }
        for (std::size_t pl = 0; pl < planes; ++pl) {
            T* gp = gx->data() + pl * in_vol;
            for (std::size_t s = 0; s < out[0]; ++s)
                for (std::size_t i = 0; i < out[1]; ++i)
                    for (std::size_t j = 0; j < out[2]; ++j) {
                        const std::size_t o = (s * out[1] + i) * out[2] + j;
                        const T v = g[pl * out_vol + o] * inv_count[o];
                        const std::size_t s0 = s * stride[0], i0 = i * stride[1], j0 = j * stride[2];
                        const std::size_t s1 = std::min(s0 + window[0], in[0]), i1 = std::min(i0 + window[1], in[1]),
                                          j1 = std::min(j0 + window[2], in[2]);
                        for (std::size_t a = s0; a < s1; ++a)
                            for (std::size_t b = i0; b < i1; ++b)
                                for (std::size_t c = j0; c < j1; ++c) gp[(a * in[1] + b) * in[2] + c] += v;
                    }
        }
    });
}

template <typename T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Parameter<T>& running_mean,
                  Parameter<T>& running_var, BnMode mode, BatchNormOptions options) {
    const Shape& xs = x.shape();
    if (xs.size() < 2) shape_fail("batch_norm", "input must be [B, C, ...], got " + to_string(xs));
    const std::size_t batch = xs[0], ch = xs[1];
    const std::size_t inner = x.value().size() / (batch * ch);
    const Shape cs{ch};
    if (gamma.shape() != cs || beta.shape() != cs || running_mean.value.shape() != cs || running_var.value.shape() != cs)
        shape_fail("batch_norm", "per-channel tensors must have shape [" + std::to_string(ch) + "]");
    if (mode == BnMode::train && batch < 2)
        throw std::invalid_argument("batch_norm: train mode needs a batch of at least 2 (got 1)");

    const std::size_t count = batch * inner;
    const Tensor<T>& xv = x.value();
    std::vector<T> mu(ch), inv_std(ch);
    if (mode == BnMode::train) {
        for (std::size_t c = 0; c < ch; ++c) {
            double s = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = xv.data() + (b * ch + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) s += p[i];
            }
            const double m = s / static_cast<double>(count);
            double ss = 0.0;
            for (std::size_t b = 0; b < batch; ++b) {
                const T* p = xv.data() + (b * ch + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - m) * (p[i] - m);
            }
            const double var = ss / static_cast<double>(count);
            mu[c] = static_cast<T>(m);
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + options.eps));
            const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
            running_mean.value[c] =
                static_cast<T>(options.momentum * running_mean.value[c] + (1.0 - options.momentum) * m);
            running_var.value[c] =
                static_cast<T>(options.momentum * running_var.value[c] + (1.0 - options.momentum) * unbiased);
        }
    } else {
        for (std::size_t c = 0; c < ch; ++c) {
            mu[c] = running_mean.value[c];
            inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var.value[c]) + options.eps));
        }
    }
    Tensor<T> xhat(xs), out(xs);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < ch; ++c) {
            const std::size_t base = (b * ch + c) * inner;
            const T gm = gamma.value()[c], bt = beta.value()[c];
            for (std::size_t i = 0; i < inner; ++i) {
                const T xh = (xv[base + i] - mu[c]) * inv_std[c];
                xhat[base + i] = xh;
                out[base + i] = gm * xh + bt;
            }
        }
    Tape<T>& tape = *x.tape;
    return tape.record(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, mode, xhat = std::move(xhat), inv_std, batch, ch, inner, count](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gx = t.grad_sink(x);
        Tensor<T>* gg = t.grad_sink(gamma);
        Tensor<T>* gb = t.grad_sink(beta);
        for (std::size_t c = 0; c < ch; ++c) {
            T sum_g(0), sum_gx(0);
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t base = (b * ch + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    sum_g += g[base + i];
                    sum_gx += g[base + i] * xhat[base + i];
                }
            }
            if (gg) (*gg)[c] += sum_gx;
            if (gb) (*gb)[c] += sum_g;
            if (!gx) continue;
            const T gm = gamma.value()[c];
            if (mode == BnMode::infer) {
                for (std::size_t b = 0; b < batch; ++b) {
                    const std::size_t base = (b * ch + c) * inner;
                    for (std::size_t i = 0; i < inner; ++i) (*gx)[base + i] += g[base + i] * gm * inv_std[c];
                }
                continue;
            }
            const T n = static_cast<T>(count);
            for (std::size_t b = 0; b < batch; ++b) {
                const std::size_t base = (b * ch + c) * inner;
                for (std::size_t i = 0; i < inner; ++i)
                    (*gx)[base + i] +=
                        gm * inv_std[c] * (g[base + i] - sum_g / n - xhat[base + i] * sum_gx / n);
            }
        }
    });
}

template <typename T>
Var<T> mse_loss(const Var<T>& pred, const Tensor<T>& target) {
    const Tensor<T>& pv = pred.value();
    if (pv.size() != target.size())
        shape_fail("mse_loss", "prediction has " + std::to_string(pv.size()) + " values, target " + std::to_string(target.size()));
    const std::size_t n = pv.size();
    T s(0);
    for (std::size_t i = 0; i < n; ++i) s += (pv[i] - target[i]) * (pv[i] - target[i]);
    return pred.tape->record(Tensor<T>::scalar(s / static_cast<T>(n)), {pred}, [pred, target, n](Tape<T>& t, const Tensor<T>& g, const Tensor<T>&) {
        Tensor<T>* gp = t.grad_sink(pred);
        const Tensor<T>& pv = pred.value();
        for (std::size_t i = 0; i < n; ++i) (*gp)[i] += g[0] * T(2) * (pv[i] - target[i]) / static_cast<T>(n);
    });
}

#define ODVQA_INSTANTIATE_OPS(T)                                                                                     \
    template Var<T> add(const Var<T>&, const Var<T>&);                                                               \
    template Var<T> sub(const Var<T>&, const Var<T>&);                                                               \
    template Var<T> mul(const Var<T>&, const Var<T>&);                                                               \
    template Var<T> scale(const Var<T>&, T);                                                                         \
    template Var<T> relu(const Var<T>&);                                                                             \
    template Var<T> sigmoid(const Var<T>&);                                                                          \
    template Var<T> sum(const Var<T>&);                                                                              \
    template Var<T> mean(const Var<T>&);                                                                             \
    template Var<T> pick(const Var<T>&, std::size_t);                                                                \
    template Var<T> reduce_mean(const Var<T>&, std::size_t);                                                         \
    template Var<T> reduce_max(const Var<T>&, std::size_t);                                                          \
    template Var<T> global_average_pool(const Var<T>&, std::size_t);                                                 \
    template Var<T> reshape(const Var<T>&, Shape);                                                                   \
    template Var<T> permute(const Var<T>&, const std::vector<std::size_t>&);                                         \
    template Var<T> concat(const std::vector<Var<T>>&, std::size_t);                                                 \
    template Var<T> slice(const Var<T>&, std::size_t, std::size_t, std::size_t);                                     \
    template Var<T> softmax(const Var<T>&, std::size_t);                                                             \
    template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                                             \
    template Var<T> conv1x1(const Var<T>&, const Var<T>&, const Var<T>&);                                            \
    template Var<T> conv2d_sampled(const Var<T>&, const Var<T>&, const Var<T>&,                                      \
                                   std::shared_ptr<const KernelSamplingGrid>);                                       \
    template Var<T> conv3d(const Var<T>&, const Var<T>&, const Var<T>&);                                             \
    template Var<T> matmul_batched(const Var<T>&, const Var<T>&);                                                    \
    template Var<T> resize(const Var<T>&, Resize);                                                                   \
    template Var<T> pool3d(const Var<T>&, std::array<std::size_t, 3>, std::array<std::size_t, 3>, PoolKind);         \
    template Var<T> batch_norm(const Var<T>&, const Var<T>&, const Var<T>&, Parameter<T>&, Parameter<T>&, BnMode,    \
                               BatchNormOptions);                                                                    \
    template Var<T> mse_loss(const Var<T>&, const Tensor<T>&);

ODVQA_INSTANTIATE_OPS(float)
ODVQA_INSTANTIATE_OPS(double)

}  // namespace odvqa
