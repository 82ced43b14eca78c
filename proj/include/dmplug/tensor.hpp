#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace dmplug {

// Thrown when a caller violates a documented precondition (shape mismatch,
// mixing tapes, backward on a non-scalar, ...).
struct ContractError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Thrown when values leave an operation's mathematical domain (log of a
// non-positive number, division by zero, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

class Tape;

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;   // sized lazily by Tape::backward
    bool is_leaf = false;
    Tape* tape = nullptr;       // non-null iff recorded
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;
};

} // namespace detail

// Dense row-major tensor of doubles. A Tensor is a cheap shared handle; value
// storage lives in the node. Tensors made by the factory functions are plain
// constants. Tensors made by Tape::leaf are grad-enabled and attached to that
// tape; any op consuming an attached tensor records onto the same tape.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double v);
    static Tensor from_data(Shape shape, std::vector<double> data);
    static Tensor scalar(double v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    const std::vector<double>& data() const;
    double item() const;            // scalar tensors only
    double at(int64_t i) const;     // flat index

    // Mutation is only legal on tensors that are not recorded on a tape;
    // recorded values are frozen history.
    std::vector<double>& mutable_data();

    bool on_tape() const;
    bool is_leaf() const;

    // Detached copy of the current value (plain constant).
    Tensor detach() const;

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node> n_;
    friend class Tape;
    friend struct OpCtx;
};

// Records primitive applications in creation order (operands always precede
// their consumers). One tape plus its tensors form a single-threaded unit of
// work; distinct tapes are fully independent. Constants are never written to
// by backward, so frozen weights can be shared across tapes on different
// threads.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor leaf(Shape shape, std::vector<double> init);
    Tensor leaf(const Tensor& init); // copies values

    // Seeds d(loss)/d(loss) = 1 and sweeps recorded nodes in reverse order.
    // Afterwards every leaf of this tape has a gradient (zero if the loss
    // does not depend on it).
    void backward(const Tensor& loss);

    const std::vector<double>& grad(const Tensor& t) const;

    size_t node_count() const { return nodes_.size(); }

private:
    std::vector<std::shared_ptr<detail::Node>> nodes_;
    bool backward_done_ = false;
    friend struct OpCtx;
};

// ---- primitive ops ----
// Binary elementwise ops require equal shapes, except that a one-element
// operand broadcasts against any shape.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor power(const Tensor& a, double p);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);
Tensor broadcast(const Tensor& a, const Shape& shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor conv2d_same(const Tensor& x, const Tensor& k, bool circular = false);
Tensor avg_pool2d(const Tensor& x, int factor);
Tensor softmax_flat(const Tensor& a);
Tensor bilinear_warp(const Tensor& x, const Tensor& disp);
Tensor mse(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

} // namespace dmplug
