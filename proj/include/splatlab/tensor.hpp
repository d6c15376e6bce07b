#pragma once

// Define-by-run reverse-mode differentiation over rank-2 arrays.
//
// A Tape owns every value produced while it is alive. Tensors are light
// handles (tape pointer + node id). Training runs on Tape<float>; gradient
// checks instantiate the same code on Tape<double>.

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace splatlab::ad {

struct Shape {
    int rows = 0;
    int cols = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols); }
    bool operator==(const Shape&) const = default;
    std::string str() const;
};

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Trainable array living outside any tape. Gradients accumulate across
/// backward calls until zero_grad().
template <class T>
struct Parameter {
    std::string name;
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;

    Parameter() = default;
    Parameter(std::string n, Shape s) : name(std::move(n)), shape(s), value(s.size(), T(0)), grad(s.size(), T(0)) {}
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <class T>
class Tape;

template <class T>
struct Tensor {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Shape& shape() const;
    int rows() const { return shape().rows; }
    int cols() const { return shape().cols; }
    std::span<const T> value() const;
    T item() const;
    bool requires_grad() const;
};

template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf without gradient.
    Tensor<T> constant(Shape shape, std::vector<T> value);
    /// Leaf whose gradient is kept on the tape (read with grad()).
    Tensor<T> input(Shape shape, std::vector<T> value);
    /// Leaf bound to a parameter; backward() accumulates into p.grad.
    Tensor<T> param(Parameter<T>& p);

    /// Appends a node. `backward` reads grad(self) and accumulates into the
    /// parents through accumulate(). It is skipped when no parent needs a gradient.
    Tensor<T> record(Shape shape, std::vector<T> value, std::vector<int> parents, BackwardFn backward);

    /// Reverse sweep from a scalar output (seed 1).
    void backward(Tensor<T> out);
    /// Reverse sweep with an explicit output adjoint of out's shape.
    void backward(Tensor<T> out, std::span<const T> seed);

    const Shape& shape(int id) const { return nodes_[id].shape; }
    std::span<const T> value(int id) const { return nodes_[id].value; }
    bool requires_grad(int id) const { return nodes_[id].requires_grad; }
    /// Gradient of a node after backward(); zeros if none reached it.
    std::span<const T> grad(Tensor<T> t);
    std::span<const T> grad_of(int id) const { return nodes_[id].grad; }
    /// Mutable gradient slot of a parent, allocated on first use.
    std::span<T> accumulate(int id);

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<T> value;
        std::vector<T> grad;
        std::vector<int> parents;
        BackwardFn backward;
        Parameter<T>* sink = nullptr;
        bool requires_grad = false;
    };
    std::vector<Node> nodes_;
};

// ---- primitive ops --------------------------------------------------------
// Every op throws ShapeError naming itself and the offending shapes.

template <class T> Tensor<T> matmul(Tensor<T> a, Tensor<T> b);
template <class T> Tensor<T> transpose(Tensor<T> a);
/// Elementwise sum; `b` may also be a 1 x cols row broadcast over a's rows.
template <class T> Tensor<T> add(Tensor<T> a, Tensor<T> b);
template <class T> Tensor<T> sub(Tensor<T> a, Tensor<T> b);
/// Elementwise product; `b` may be a broadcast row like add().
template <class T> Tensor<T> mul(Tensor<T> a, Tensor<T> b);
template <class T> Tensor<T> scale(Tensor<T> a, T s);
template <class T> Tensor<T> relu(Tensor<T> a);
template <class T> Tensor<T> tanh(Tensor<T> a);
template <class T> Tensor<T> sigmoid(Tensor<T> a);
/// exp with the argument clamped to kExpMax; the clamped region has zero slope.
template <class T> Tensor<T> exp(Tensor<T> a);
/// log with the argument clamped below to kLogMin.
template <class T> Tensor<T> log(Tensor<T> a);
/// Row-wise softmax.
template <class T> Tensor<T> softmax(Tensor<T> a);
/// Row-wise normalization followed by per-column gamma and beta (1 x cols).
template <class T> Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gamma, Tensor<T> beta, T eps = T(1e-5));
/// axis 1 joins columns (equal rows), axis 0 stacks rows (equal cols).
template <class T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int axis = 1);
/// out[i] = a[index[i]] (rows).
template <class T> Tensor<T> gather(Tensor<T> a, std::vector<int> index);
/// out[g] = mean of rows i with index[i] == g; empty groups are zero.
template <class T> Tensor<T> scatter_mean(Tensor<T> a, std::vector<int> index, int groups);
/// Columns [begin, end).
template <class T> Tensor<T> slice(Tensor<T> a, int begin, int end);
template <class T> Tensor<T> sum(Tensor<T> a);
template <class T> Tensor<T> mean(Tensor<T> a);

/// Multi-head self-attention over consecutive, non-overlapping windows of
/// `window` rows. qkv is n x 3d laid out as [Q | K | V]; each of `heads`
/// heads takes a contiguous d/heads slice. The last window may be shorter.
template <class T> Tensor<T> windowed_attention(Tensor<T> qkv, int heads, int window);

inline constexpr double kExpMax = 60.0;
inline constexpr double kLogMin = 1e-30;

}  // namespace splatlab::ad
