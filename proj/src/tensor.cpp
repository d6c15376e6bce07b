#include "splatlab/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

namespace splatlab::ad {

std::string Shape::str() const {
    std::ostringstream os;
    os << "(" << rows << ", " << cols << ")";
    return os.str();
}

namespace {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using CMap = Eigen::Map<const RowMat<T>>;
template <class T>
using MMap = Eigen::Map<RowMat<T>>;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
    throw ShapeError(std::string(op) + ": incompatible shapes " + a.str() + " and " + b.str());
}

[[noreturn]] void shape_error(const char* op, const Shape& a) {
    throw ShapeError(std::string(op) + ": invalid shape " + a.str());
}

template <class T>
void check_same_tape(const char* op, Tensor<T> a, Tensor<T> b) {
    if (a.tape == nullptr || a.tape != b.tape) throw std::invalid_argument(std::string(op) + ": tensors on different tapes");
}

template <class T>
CMap<T> cmap(const Tape<T>& tape, int id) {
    const Shape& s = tape.shape(id);
    return CMap<T>(tape.value(id).data(), s.rows, s.cols);
}

template <class T>
CMap<T> gmap(const Tape<T>& tape, int id) {
    const Shape& s = tape.shape(id);
    return CMap<T>(tape.grad_of(id).data(), s.rows, s.cols);
}

template <class T>
MMap<T> amap(Tape<T>& tape, int id) {
    const Shape& s = tape.shape(id);
    return MMap<T>(tape.accumulate(id).data(), s.rows, s.cols);
}

// Elementwise unary op with derivative expressed through (input, output).
template <class T, class F, class D>
Tensor<T> unary(Tensor<T> a, F f, D dfdx) {
    Tape<T>& tape = *a.tape;
    const auto x = a.value();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
    const int ia = a.id;
    return tape.record(a.shape(), std::move(y), {ia}, [ia, dfdx](Tape<T>& t, int self) {
        const auto g = t.grad_of(self);
        const auto x = t.value(ia);
        const auto y = t.value(self);
        auto ga = t.accumulate(ia);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * dfdx(x[i], y[i]);
    });
}

bool is_row_broadcast(const Shape& a, const Shape& b) { return b.rows == 1 && b.cols == a.cols && a.rows != 1; }

}  // namespace

// ---- Tensor ---------------------------------------------------------------

template <class T>
const Shape& Tensor<T>::shape() const {
    return tape->shape(id);
}

template <class T>
std::span<const T> Tensor<T>::value() const {
    return tape->value(id);
}

template <class T>
T Tensor<T>::item() const {
    if (shape().size() != 1) shape_error("item", shape());
    return value()[0];
}

template <class T>
bool Tensor<T>::requires_grad() const {
    return tape->requires_grad(id);
}

// ---- Tape -----------------------------------------------------------------

template <class T>
Tensor<T> Tape<T>::constant(Shape shape, std::vector<T> value) {
    if (value.size() != shape.size()) shape_error("constant", shape);
    Node n;
    n.shape = shape;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

template <class T>
Tensor<T> Tape<T>::input(Shape shape, std::vector<T> value) {
    Tensor<T> t = constant(shape, std::move(value));
    nodes_.back().requires_grad = true;
    return t;
}

template <class T>
Tensor<T> Tape<T>::param(Parameter<T>& p) {
    if (p.value.size() != p.shape.size()) shape_error("param", p.shape);
    if (p.grad.size() != p.value.size()) p.grad.assign(p.value.size(), T(0));
    Tensor<T> t = input(p.shape, p.value);
    nodes_.back().sink = &p;
    return t;
}

template <class T>
Tensor<T> Tape<T>::record(Shape shape, std::vector<T> value, std::vector<int> parents, BackwardFn backward) {
    if (value.size() != shape.size()) shape_error("record", shape);
    Node n;
    n.shape = shape;
    n.value = std::move(value);
    n.requires_grad = std::any_of(parents.begin(), parents.end(), [&](int p) { return nodes_[p].requires_grad; });
    if (n.requires_grad) {
        n.parents = std::move(parents);
        n.backward = std::move(backward);
    }
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

template <class T>
std::span<T> Tape<T>::accumulate(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
    return n.grad;
}

template <class T>
std::span<const T> Tape<T>::grad(Tensor<T> t) {
    return accumulate(t.id);
}

template <class T>
void Tape<T>::backward(Tensor<T> out) {
    if (out.shape().size() != 1) shape_error("backward (scalar seed)", out.shape());
    const T one(1);
    backward(out, std::span<const T>(&one, 1));
}

template <class T>
void Tape<T>::backward(Tensor<T> out, std::span<const T> seed) {
    if (out.tape != this) throw std::invalid_argument("backward: tensor belongs to another tape");
    if (seed.size() != nodes_[out.id].value.size()) shape_error("backward seed", nodes_[out.id].shape);
    for (Node& n : nodes_) n.grad.clear();
    auto g = accumulate(out.id);
    std::copy(seed.begin(), seed.end(), g.begin());
    for (int id = out.id; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.grad.empty() || !n.requires_grad) continue;
        if (n.backward) n.backward(*this, id);
        if (n.sink != nullptr) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.sink->grad[i] += nodes_[id].grad[i];
        }
    }
}

// ---- ops ------------------------------------------------------------------

template <class T>
Tensor<T> matmul(Tensor<T> a, Tensor<T> b) {
    check_same_tape("matmul", a, b);
    if (a.cols() != b.rows()) shape_error("matmul", a.shape(), b.shape());
    Tape<T>& tape = *a.tape;
    const Shape out{a.rows(), b.cols()};
    std::vector<T> y(out.size());
    MMap<T>(y.data(), out.rows, out.cols).noalias() = cmap(tape, a.id) * cmap(tape, b.id);
    const int ia = a.id, ib = b.id;
    return tape.record(out, std::move(y), {ia, ib}, [ia, ib](Tape<T>& t, int self) {
        const auto g = gmap(t, self);
        if (t.requires_grad(ia)) amap(t, ia).noalias() += g * cmap(t, ib).transpose();
        if (t.requires_grad(ib)) amap(t, ib).noalias() += cmap(t, ia).transpose() * g;
    });
}

template <class T>
Tensor<T> transpose(Tensor<T> a) {
    Tape<T>& tape = *a.tape;
    const Shape out{a.cols(), a.rows()};
    std::vector<T> y(out.size());
    MMap<T>(y.data(), out.rows, out.cols) = cmap(tape, a.id).transpose();
    const int ia = a.id;
    return tape.record(out, std::move(y), {ia}, [ia](Tape<T>& t, int self) {
        amap(t, ia) += gmap(t, self).transpose();
    });
}

namespace {

// Shared implementation of add/sub: out = a + sign * b with optional row broadcast.
template <class T>
Tensor<T> add_signed(const char* op, Tensor<T> a, Tensor<T> b, T sign) {
    check_same_tape(op, a, b);
    const bool bcast = is_row_broadcast(a.shape(), b.shape());
    if (!(a.shape() == b.shape()) && !bcast) shape_error(op, a.shape(), b.shape());
    Tape<T>& tape = *a.tape;
    const auto x = a.value();
    const auto z = b.value();
    const int cols = a.cols();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + sign * z[bcast ? i % cols : i];
    const int ia = a.id, ib = b.id;
    return tape.record(a.shape(), std::move(y), {ia, ib}, [ia, ib, bcast, cols, sign](Tape<T>& t, int self) {
        const auto g = t.grad_of(self);
        if (t.requires_grad(ia)) {
            auto ga = t.accumulate(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (t.requires_grad(ib)) {
            auto gb = t.accumulate(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i % cols : i] += sign * g[i];
        }
    });
}

}  // namespace

template <class T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
    return add_signed("add", a, b, T(1));
}

template <class T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
    return add_signed("sub", a, b, T(-1));
}

template <class T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
    check_same_tape("mul", a, b);
    const bool bcast = is_row_broadcast(a.shape(), b.shape());
    if (!(a.shape() == b.shape()) && !bcast) shape_error("mul", a.shape(), b.shape());
    Tape<T>& tape = *a.tape;
    const auto x = a.value();
    const auto z = b.value();
    const int cols = a.cols();
    std::vector<T> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * z[bcast ? i % cols : i];
    const int ia = a.id, ib = b.id;
    return tape.record(a.shape(), std::move(y), {ia, ib}, [ia, ib, bcast, cols](Tape<T>& t, int self) {
        const auto g = t.grad_of(self);
        const auto x = t.value(ia);
        const auto z = t.value(ib);
        if (t.requires_grad(ia)) {
            auto ga = t.accumulate(ia);
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * z[bcast ? i % cols : i];
        }
        if (t.requires_grad(ib)) {
            auto gb = t.accumulate(ib);
            for (std::size_t i = 0; i < g.size(); ++i) gb[bcast ? i % cols : i] += g[i] * x[i];
        }
    });
}

template <class T>
Tensor<T> scale(Tensor<T> a, T s) {
    return unary(a, [s](T x) { return s * x; }, [s](T, T) { return s; });
}

template <class T>
Tensor<T> relu(Tensor<T> a) {
    // Subgradient at 0 is 0.
    return unary(a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> tanh(Tensor<T> a) {
    return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <class T>
Tensor<T> sigmoid(Tensor<T> a) {
    return unary(
        a,
        [](T x) {
            if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
            const T e = std::exp(x);
            return e / (T(1) + e);
        },
        [](T, T y) { return y * (T(1) - y); });
}

template <class T>
Tensor<T> exp(Tensor<T> a) {
    const T cap = static_cast<T>(kExpMax);
    return unary(a, [cap](T x) { return std::exp(std::min(x, cap)); },
                 [cap](T x, T y) { return x < cap ? y : T(0); });
}

template <class T>
Tensor<T> log(Tensor<T> a) {
    const T floor = static_cast<T>(kLogMin);
    return unary(a, [floor](T x) { return std::log(std::max(x, floor)); },
                 [floor](T x, T) { return x > floor ? T(1) / x : T(0); });
}

template <class T>
Tensor<T> softmax(Tensor<T> a) {
    Tape<T>& tape = *a.tape;
    const Shape s = a.shape();
    const auto x = a.value();
    std::vector<T> y(x.size());
    for (int r = 0; r < s.rows; ++r) {
        const T* xr = x.data() + static_cast<std::size_t>(r) * s.cols;
        T* yr = y.data() + static_cast<std::size_t>(r) * s.cols;
        const T m = *std::max_element(xr, xr + s.cols);
        T z(0);
        for (int c = 0; c < s.cols; ++c) z += (yr[c] = std::exp(xr[c] - m));
        for (int c = 0; c < s.cols; ++c) yr[c] /= z;
    }
    const int ia = a.id;
    return tape.record(s, std::move(y), {ia}, [ia, s](Tape<T>& t, int self) {
        const auto g = t.grad_of(self);
        const auto y = t.value(self);
        auto ga = t.accumulate(ia);
        for (int r = 0; r < s.rows; ++r) {
            const std::size_t o = static_cast<std::size_t>(r) * s.cols;
            T dot(0);
            for (int c = 0; c < s.cols; ++c) dot += g[o + c] * y[o + c];
            for (int c = 0; c < s.cols; ++c) ga[o + c] += y[o + c] * (g[o + c] - dot);
        }
    });
}

template <class T>
Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, T eps) {
    check_same_tape("layer_norm", x, gamma);
    check_same_tape("layer_norm", x, beta);
    const Shape s = x.shape();
    if (gamma.shape() != Shape{1, s.cols}) shape_error("layer_norm gamma", s, gamma.shape());
    if (beta.shape() != Shape{1, s.cols}) shape_error("layer_norm beta", s, beta.shape());
    Tape<T>& tape = *x.tape;
    const auto xv = x.value();
    const auto gv = gamma.value();
    const auto bv = beta.value();
    std::vector<T> y(xv.size());
    // Normalized values and inverse std are recomputed in backward from x.
    for (int r = 0; r < s.rows; ++r) {
        const std::size_t o = static_cast<std::size_t>(r) * s.cols;
        T mu(0), var(0);
        for (int c = 0; c < s.cols; ++c) mu += xv[o + c];
        mu /= s.cols;
        for (int c = 0; c < s.cols; ++c) var += (xv[o + c] - mu) * (xv[o + c] - mu);
        var /= s.cols;
        const T inv = T(1) / std::sqrt(var + eps);
        for (int c = 0; c < s.cols; ++c) y[o + c] = (xv[o + c] - mu) * inv * gv[c] + bv[c];
    }
    const int ix = x.id, ig = gamma.id, ib = beta.id;
    return tape.record(s, std::move(y), {ix, ig, ib}, [ix, ig, ib, s, eps](Tape<T>& t, int self) {
        const auto g = t.grad_of(self);
        const auto xv = t.value(ix);
        const auto gv = t.value(ig);
        const bool need_x = t.requires_grad(ix), need_g = t.requires_grad(ig), need_b = t.requires_grad(ib);
        std::span<T> gx, gg, gb;
        if (need_x) gx = t.accumulate(ix);
        if (need_g) gg = t.accumulate(ig);
        if (need_b) gb = t.accumulate(ib);
        std::vector<T> xhat(s.cols), dxhat(s.cols);
        for (int r = 0; r < s.rows; ++r) {
            const std::size_t o = static_cast<std::size_t>(r) * s.cols;
            T mu(0), var(0);
            for (int c = 0; c < s.cols; ++c) mu += xv[o + c];
            mu /= s.cols;
            for (int c = 0; c < s.cols; ++c) var += (xv[o + c] - mu) * (xv[o + c] - mu);
            var /= s.cols;
            const T inv = T(1) / std::sqrt(var + eps);
            T m1(0), m2(0);
            for (int c = 0; c < s.cols; ++c) {
                xhat[c] = (xv[o + c] - mu) * inv;
                dxhat[c] = g[o + c] * gv[c];
                m1 += dxhat[c];
                m2 += dxhat[c] * xhat[c];
                if (need_g) gg[c] += g[o + c] * xhat[c];
                if (need_b) gb[c] += g[o + c];
            }
            m1 /= s.cols;
            m2 /= s.cols;
            if (need_x) {
                for (int c = 0; c < s.cols; ++c) gx[o + c] += inv * (dxhat[c] - m1 - xhat[c] * m2);
            }
        }
    });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    if (axis != 0 && axis != 1) throw ShapeError("concat: axis must be 0 or 1");
    Tape<T>& tape = *parts[0].tape;
    Shape out = parts[0].shape();
    for (std::size_t k = 1; k < parts.size(); ++k) {
        check_same_tape("concat", parts[0], parts[k]);
        const Shape& s = parts[k].shape();
        if (axis == 1) {
            if (s.rows != out.rows) shape_error("concat", out, s);
            out.cols += s.cols;
        } else {
            if (s.cols != out.cols) shape_error("concat", out, s);
            out.rows += s.rows;
        }
    }
    std::vector<T> y(out.size());
    std::vector<int> ids, offsets;
    int offset = 0;
    for (const auto& p : parts) {
        ids.push_back(p.id);
        offsets.push_back(offset);
        MMap<T> dst(y.data(), out.rows, out.cols);
        if (axis == 1) {
            dst.middleCols(offset, p.cols()) = cmap(tape, p.id);
        } else {
            dst.middleRows(offset, p.rows()) = cmap(tape, p.id);
        }
        offset += axis == 1 ? p.cols() : p.rows();
    }
    return tape.record(out, std::move(y), ids, [ids, offsets, axis](Tape<T>& t, int self) {
        const auto g = gmap(t, self);
        for (std::size_t k = 0; k < ids.size(); ++k) {
            if (!t.requires_grad(ids[k])) continue;
            const Shape& s = t.shape(ids[k]);
            if (axis == 1) {
                amap(t, ids[k]) += g.middleCols(offsets[k], s.cols);
            } else {
                amap(t, ids[k]) += g.middleRows(offsets[k], s.rows);
            }
        }
    });
}

template <class T>
Tensor<T> gather(Tensor<T> a, std::vector<int> index) {
    const Shape s = a.shape();
    for (int i : index) {
        if (i < 0 || i >= s.rows) throw ShapeError("gather: index " + std::to_string(i) + " out of range for " + s.str());
    }
    Tape<T>& tape = *a.tape;
    const Shape out{static_cast<int>(index.size()), s.cols};
    const auto x = a.value();
    std::vector<T> y(out.size());
    for (std::size_t r = 0; r < index.size(); ++r) {
        std::copy_n(x.data() + static_cast<std::size_t>(index[r]) * s.cols, s.cols, y.data() + r * s.cols);
    }
    const int ia = a.id;
    return tape.record(out, std::move(y), {ia}, [ia, index = std::move(index), cols = s.cols](Tape<T>& t, int self) {
        const auto g = t.grad_of(self);
        auto ga = t.accumulate(ia);
        for (std::size_t r = 0; r < index.size(); ++r) {
            const std::size_t src = r * cols, dst = static_cast<std::size_t>(index[r]) * cols;
            for (int c = 0; c < cols; ++c) ga[dst + c] += g[src + c];
        }
    });
}

template <class T>
Tensor<T> scatter_mean(Tensor<T> a, std::vector<int> index, int groups) {
    const Shape s = a.shape();
    if (static_cast<int>(index.size()) != s.rows) {
        throw ShapeError("scatter_mean: index length " + std::to_string(index.size()) + " does not match " + s.str());
    }
    std::vector<int> count(groups, 0);
    for (int i : index) {
        if (i < 0 || i >= groups) throw ShapeError("scatter_mean: group " + std::to_string(i) + " out of range");
        ++count[i];
    }
    Tape<T>& tape = *a.tape;
    const Shape out{groups, s.cols};
    const auto x = a.value();
    std::vector<T> y(out.size(), T(0));
    for (int r = 0; r < s.rows; ++r) {
        const std::size_t src = static_cast<std::size_t>(r) * s.cols, dst = static_cast<std::size_t>(index[r]) * s.cols;
        for (int c = 0; c < s.cols; ++c) y[dst + c] += x[src + c];
    }
    for (int gi = 0; gi < groups; ++gi) {
        if (count[gi] == 0) continue;
        for (int c = 0; c < s.cols; ++c) y[static_cast<std::size_t>(gi) * s.cols + c] /= static_cast<T>(count[gi]);
    }
    const int ia = a.id;
    return tape.record(out, std::move(y), {ia},
                       [ia, index = std::move(index), count = std::move(count), cols = s.cols](Tape<T>& t, int self) {
                           const auto g = t.grad_of(self);
                           auto ga = t.accumulate(ia);
                           for (std::size_t r = 0; r < index.size(); ++r) {
                               const std::size_t src = static_cast<std::size_t>(index[r]) * cols, dst = r * cols;
                               const T w = T(1) / static_cast<T>(count[index[r]]);
                               for (int c = 0; c < cols; ++c) ga[dst + c] += w * g[src + c];
                           }
                       });
}

template <class T>
Tensor<T> slice(Tensor<T> a, int begin, int end) {
    const Shape s = a.shape();
    if (begin < 0 || end > s.cols || begin >= end) {
        throw ShapeError("slice: columns [" + std::to_string(begin) + ", " + std::to_string(end) + ") of " + s.str());
    }
    Tape<T>& tape = *a.tape;
    const Shape out{s.rows, end - begin};
    std::vector<T> y(out.size());
    MMap<T>(y.data(), out.rows, out.cols) = cmap(tape, a.id).middleCols(begin, out.cols);
    const int ia = a.id;
    return tape.record(out, std::move(y), {ia}, [ia, begin, width = out.cols](Tape<T>& t, int self) {
        amap(t, ia).middleCols(begin, width) += gmap(t, self);
    });
}

template <class T>
Tensor<T> sum(Tensor<T> a) {
    Tape<T>& tape = *a.tape;
    T total(0);
    for (T v : a.value()) total += v;
    const int ia = a.id;
    return tape.record({1, 1}, {total}, {ia}, [ia](Tape<T>& t, int self) {
        const T g = t.grad_of(self)[0];
        for (T& v : t.accumulate(ia)) v += g;
    });
}

template <class T>
Tensor<T> mean(Tensor<T> a) {
    const std::size_t n = a.shape().size();
    if (n == 0) shape_error("mean", a.shape());
    return scale(sum(a), T(1) / static_cast<T>(n));
}

template <class T>
Tensor<T> windowed_attention(Tensor<T> qkv, int heads, int window) {
    const Shape s = qkv.shape();
    if (heads <= 0 || window <= 0 || s.cols % (3 * heads) != 0) shape_error("windowed_attention", s);
    Tape<T>& tape = *qkv.tape;
    const int n = s.rows;
    const int d = s.cols / 3;
    const int dh = d / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    const auto x = CMap<T>(qkv.value().data(), n, s.cols);
    std::vector<T> y(static_cast<std::size_t>(n) * d, T(0));
    MMap<T> out(y.data(), n, d);
    // Attention weights per (window, head), kept for the backward pass.
    auto probs = std::make_shared<std::vector<RowMat<T>>>();
    for (int w0 = 0; w0 < n; w0 += window) {
        const int m = std::min(window, n - w0);
        for (int h = 0; h < heads; ++h) {
            const auto q = x.block(w0, h * dh, m, dh);
            const auto k = x.block(w0, d + h * dh, m, dh);
            const auto v = x.block(w0, 2 * d + h * dh, m, dh);
            RowMat<T> p = (q * k.transpose()) * inv_sqrt;
            for (int r = 0; r < m; ++r) {
                const T mx = p.row(r).maxCoeff();
                p.row(r) = (p.row(r).array() - mx).exp().matrix();
                p.row(r) /= p.row(r).sum();
            }
            out.block(w0, h * dh, m, dh).noalias() = p * v;
            probs->push_back(std::move(p));
        }
    }
    const int iq = qkv.id;
    return tape.record({n, d}, std::move(y), {iq}, [iq, heads, window, n, d, dh, inv_sqrt, probs](Tape<T>& t, int self) {
        const auto g = gmap(t, self);
        const auto x = cmap(t, iq);
        auto gx = amap(t, iq);
        std::size_t slot = 0;
        for (int w0 = 0; w0 < n; w0 += window) {
            const int m = std::min(window, n - w0);
            for (int h = 0; h < heads; ++h) {
                const RowMat<T>& p = (*probs)[slot++];
                const auto q = x.block(w0, h * dh, m, dh);
                const auto k = x.block(w0, d + h * dh, m, dh);
                const auto v = x.block(w0, 2 * d + h * dh, m, dh);
                const auto go = g.block(w0, h * dh, m, dh);
                const RowMat<T> dp = go * v.transpose();
                RowMat<T> ds(m, m);
                for (int r = 0; r < m; ++r) {
                    const T dot = dp.row(r).dot(p.row(r));
                    ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
                }
                ds *= inv_sqrt;
                gx.block(w0, h * dh, m, dh).noalias() += ds * k;
                gx.block(w0, d + h * dh, m, dh).noalias() += ds.transpose() * q;
                gx.block(w0, 2 * d + h * dh, m, dh).noalias() += p.transpose() * go;
            }
        }
    });
}

// ---- explicit instantiation ----------------------------------------------

#define SPLATLAB_AD_INSTANTIATE(T)                                                       \
    template struct Tensor<T>;                                                           \
    template class Tape<T>;                                                              \
    template Tensor<T> matmul(Tensor<T>, Tensor<T>);                                     \
    template Tensor<T> transpose(Tensor<T>);                                             \
    template Tensor<T> add(Tensor<T>, Tensor<T>);                                        \
    template Tensor<T> sub(Tensor<T>, Tensor<T>);                                        \
    template Tensor<T> mul(Tensor<T>, Tensor<T>);                                        \
    template Tensor<T> scale(Tensor<T>, T);                                              \
    template Tensor<T> relu(Tensor<T>);                                                  \
    template Tensor<T> tanh(Tensor<T>);                                                  \
    template Tensor<T> sigmoid(Tensor<T>);                                               \
    template Tensor<T> exp(Tensor<T>);                                                   \
    template Tensor<T> log(Tensor<T>);                                                   \
    template Tensor<T> softmax(Tensor<T>);                                               \
    template Tensor<T> layer_norm(Tensor<T>, Tensor<T>, Tensor<T>, T);                   \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, int);                       \
    template Tensor<T> gather(Tensor<T>, std::vector<int>);                              \
    template Tensor<T> scatter_mean(Tensor<T>, std::vector<int>, int);                   \
    template Tensor<T> slice(Tensor<T>, int, int);                                       \
    template Tensor<T> sum(Tensor<T>);                                                   \
    template Tensor<T> mean(Tensor<T>);                                                  \
    template Tensor<T> windowed_attention(Tensor<T>, int, int);

SPLATLAB_AD_INSTANTIATE(float)
SPLATLAB_AD_INSTANTIATE(double)

#undef SPLATLAB_AD_INSTANTIATE

}  // namespace splatlab::ad
