#include "dmplug/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dmplug {

int64_t numel(const Shape& s) {
    int64_t n = 1;
    for (int e : s) n *= e;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ',';
        os << s[i];
    }
    os << ']';
    return os.str();
}

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ContractError(msg);
}

void check_shape(const Shape& s) {
    for (int e : s)
        require(e > 0, "tensor extents must be positive, got " + shape_str(s));
}

std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i)
        st[i] = st[i + 1] * s[i + 1];
    return st;
}

} // namespace

using detail::Node;

// ---- Tensor ----

struct OpCtx {
    static std::shared_ptr<Node> node_of(const Tensor& t) { return t.n_; }

    static Tensor wrap(std::shared_ptr<Node> n) { return Tensor(std::move(n)); }

    static Tape* common_tape(const std::vector<std::shared_ptr<Node>>& ins) {
        Tape* tape = nullptr;
        for (const auto& in : ins) {
            if (!in->tape) continue;
            if (tape && tape != in->tape)
                throw ContractError("operands recorded on different tapes");
            tape = in->tape;
        }
        return tape;
    }

    static Tensor make(Shape shape, std::vector<double> value,
                       std::vector<std::shared_ptr<Node>> inputs,
                       std::function<void(Node&)> backward) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(value);
        Tape* tape = common_tape(inputs);
        if (tape) {
            n->tape = tape;
            n->inputs = std::move(inputs);
            n->backward = std::move(backward);
            tape->nodes_.push_back(n);
        }
        return OpCtx::wrap(n);
    }

    // accumulate into an input's grad only when it lives on the tape;
    // constants stay untouched so they can be shared across threads
    static bool wants_grad(const Node& in) { return in.tape != nullptr; }
};

Tensor Tensor::zeros(Shape shape) {
    check_shape(shape);
    auto n = std::make_shared<Node>();
    int64_t sz = numel(shape);
    n->shape = std::move(shape);
    n->value.assign(static_cast<size_t>(sz), 0.0);
    return OpCtx::wrap(n);
}

Tensor Tensor::full(Shape shape, double v) {
    Tensor t = zeros(std::move(shape));
    auto& d = t.n_->value;
    std::fill(d.begin(), d.end(), v);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
    check_shape(shape);
    require(numel(shape) == static_cast<int64_t>(data.size()),
            "data length does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    return OpCtx::wrap(n);
}

Tensor Tensor::scalar(double v) { return from_data({}, {v}); }

const Shape& Tensor::shape() const {
    require(defined(), "use of empty tensor handle");
    return n_->shape;
}

int64_t Tensor::size() const { return numel(shape()); }

const std::vector<double>& Tensor::data() const {
    require(defined(), "use of empty tensor handle");
    return n_->value;
}

double Tensor::item() const {
    require(size() == 1, "item() requires a one-element tensor");
    return n_->value[0];
}

double Tensor::at(int64_t i) const {
    require(defined() && i >= 0 && i < size(), "flat index out of range");
    return n_->value[static_cast<size_t>(i)];
}

std::vector<double>& Tensor::mutable_data() {
    require(defined(), "use of empty tensor handle");
    require(n_->tape == nullptr || n_->is_leaf,
            "recorded intermediate values are immutable");
    return n_->value;
}

bool Tensor::on_tape() const { return defined() && n_->tape != nullptr; }

bool Tensor::is_leaf() const { return defined() && n_->is_leaf; }

Tensor Tensor::detach() const {
    return from_data(shape(), data());
}

// ---- Tape ----

Tensor Tape::leaf(Shape shape, std::vector<double> init) {
    check_shape(shape);
    require(numel(shape) == static_cast<int64_t>(init.size()),
            "leaf data length does not match shape");
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(init);
    n->is_leaf = true;
    n->tape = this;
    nodes_.push_back(n);
    return OpCtx::wrap(n);
}

Tensor Tape::leaf(const Tensor& init) { return leaf(init.shape(), init.data()); }

void Tape::backward(const Tensor& loss) {
    auto ln = OpCtx::node_of(loss);
    require(ln != nullptr, "backward on empty tensor handle");
    require(ln->tape == this, "loss was not recorded on this tape");
    require(numel(ln->shape) == 1, "backward requires a scalar loss");
    for (auto& n : nodes_)
        n->grad.assign(n->value.size(), 0.0);
    ln->grad[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& n = **it;
        if (n.backward) n.backward(n);
    }
    backward_done_ = true;
}

const std::vector<double>& Tape::grad(const Tensor& t) const {
    auto n = OpCtx::node_of(t);
    require(n != nullptr && n->tape == this, "tensor is not on this tape");
    require(backward_done_, "backward has not been run on this tape");
    return n->grad;
}

// ---- elementwise binary ops ----
// Equal shapes, or a one-element operand broadcasting against the other.

namespace {

struct BinPlan {
    Shape shape;
    int64_t n;
    bool a_scalar, b_scalar;
};

BinPlan plan_binary(const Tensor& a, const Tensor& b, const char* opname) {
    BinPlan p;
    p.a_scalar = a.size() == 1;
    p.b_scalar = b.size() == 1;
    if (a.shape() == b.shape()) {
        p.shape = a.shape();
    } else if (p.b_scalar) {
        p.shape = a.shape();
    } else if (p.a_scalar) {
        p.shape = b.shape();
    } else {
        throw ContractError(std::string(opname) + ": shape mismatch " +
                            shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    p.n = numel(p.shape);
    return p;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    BinPlan p = plan_binary(a, b, "add");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(static_cast<size_t>(p.n));
    for (int64_t i = 0; i < p.n; ++i)
        out[i] = av[p.a_scalar ? 0 : i] + bv[p.b_scalar ? 0 : i];
    auto an = OpCtx::node_of(a);
    auto bn = OpCtx::node_of(b);
    return OpCtx::make(p.shape, std::move(out), {an, bn}, [p](Node& o) {
        Node& A = *o.inputs[0];
        Node& B = *o.inputs[1];
        if (OpCtx::wants_grad(A))
            for (int64_t i = 0; i < p.n; ++i) A.grad[p.a_scalar ? 0 : i] += o.grad[i];
        if (OpCtx::wants_grad(B))
            for (int64_t i = 0; i < p.n; ++i) B.grad[p.b_scalar ? 0 : i] += o.grad[i];
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    BinPlan p = plan_binary(a, b, "sub");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(static_cast<size_t>(p.n));
    for (int64_t i = 0; i < p.n; ++i)
        out[i] = av[p.a_scalar ? 0 : i] - bv[p.b_scalar ? 0 : i];
    return OpCtx::make(p.shape, std::move(out), {OpCtx::node_of(a), OpCtx::node_of(b)},
                       [p](Node& o) {
        Node& A = *o.inputs[0];
        Node& B = *o.inputs[1];
        if (OpCtx::wants_grad(A))
            for (int64_t i = 0; i < p.n; ++i) A.grad[p.a_scalar ? 0 : i] += o.grad[i];
        if (OpCtx::wants_grad(B))
            for (int64_t i = 0; i < p.n; ++i) B.grad[p.b_scalar ? 0 : i] -= o.grad[i];
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    BinPlan p = plan_binary(a, b, "mul");
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(static_cast<size_t>(p.n));
    for (int64_t i = 0; i < p.n; ++i)
        out[i] = av[p.a_scalar ? 0 : i] * bv[p.b_scalar ? 0 : i];
    return OpCtx::make(p.shape, std::move(out), {OpCtx::node_of(a), OpCtx::node_of(b)},
                       [p](Node& o) {
        Node& A = *o.inputs[0];
        Node& B = *o.inputs[1];
        if (OpCtx::wants_grad(A))
            for (int64_t i = 0; i < p.n; ++i)
                A.grad[p.a_scalar ? 0 : i] += o.grad[i] * B.value[p.b_scalar ? 0 : i];
        if (OpCtx::wants_grad(B))
            for (int64_t i = 0; i < p.n; ++i)
                B.grad[p.b_scalar ? 0 : i] += o.grad[i] * A.value[p.a_scalar ? 0 : i];
    });
}

Tensor div(const Tensor& a, const Tensor& b) {
    BinPlan p = plan_binary(a, b, "div");
    const auto& av = a.data();
    const auto& bv = b.data();
    for (double d : bv)
        if (d == 0.0) throw DomainError("div: zero denominator");
    std::vector<double> out(static_cast<size_t>(p.n));
    for (int64_t i = 0; i < p.n; ++i)
        out[i] = av[p.a_scalar ? 0 : i] / bv[p.b_scalar ? 0 : i];
    return OpCtx::make(p.shape, std::move(out), {OpCtx::node_of(a), OpCtx::node_of(b)},
                       [p](Node& o) {
        Node& A = *o.inputs[0];
        Node& B = *o.inputs[1];
        for (int64_t i = 0; i < p.n; ++i) {
            double bi = B.value[p.b_scalar ? 0 : i];
            double g = o.grad[i];
            if (OpCtx::wants_grad(A)) A.grad[p.a_scalar ? 0 : i] += g / bi;
            if (OpCtx::wants_grad(B))
                B.grad[p.b_scalar ? 0 : i] -=
                    g * A.value[p.a_scalar ? 0 : i] / (bi * bi);
        }
    });
}

// ---- elementwise unary ops ----

Tensor scale(const Tensor& a, double c) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [c](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i) A.grad[i] += c * o.grad[i];
    });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor exp(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::exp(av[i]);
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i) A.grad[i] += o.grad[i] * o.value[i];
    });
}

Tensor log(const Tensor& a) {
    const auto& av = a.data();
    for (double v : av)
        if (v <= 0.0) throw DomainError("log: non-positive input");
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::log(av[i]);
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i) A.grad[i] += o.grad[i] / A.value[i];
    });
}

Tensor sqrt(const Tensor& a) {
    const auto& av = a.data();
    for (double v : av)
        if (v < 0.0) throw DomainError("sqrt: negative input");
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::sqrt(av[i]);
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i)
            A.grad[i] += o.grad[i] * 0.5 / o.value[i];
    });
}

Tensor tanh(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::tanh(av[i]);
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i)
            A.grad[i] += o.grad[i] * (1.0 - o.value[i] * o.value[i]);
    });
}

Tensor silu(const Tensor& a) {
    const auto& av = a.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-av[i]));
        out[i] = av[i] * s;
    }
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i) {
            double x = A.value[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            A.grad[i] += o.grad[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Tensor power(const Tensor& a, double p) {
    const auto& av = a.data();
    bool p_integer = p == std::floor(p);
    if (!p_integer)
        for (double v : av)
            if (v < 0.0)
                throw DomainError("power: negative base with non-integer exponent");
    std::vector<double> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = std::pow(av[i], p);
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [p](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i) {
            double x = A.value[i];
            double d;
            if (x == 0.0)
                d = (p == 1.0) ? 1.0 : 0.0; // p<1 would blow up; clamp at the edge
            else
                d = p * std::pow(x, p - 1.0);
            A.grad[i] += o.grad[i] * d;
        }
    });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    const auto& av = a.data();
    double s = 0.0;
    for (double v : av) s += v;
    return OpCtx::make({}, {s}, {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        double g = o.grad[0];
        for (auto& gi : A.grad) gi += g;
    });
}

Tensor mean(const Tensor& a) {
    const auto& av = a.data();
    double s = 0.0;
    for (double v : av) s += v;
    double n = static_cast<double>(av.size());
    return OpCtx::make({}, {s / n}, {OpCtx::node_of(a)}, [n](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        double g = o.grad[0] / n;
        for (auto& gi : A.grad) gi += g;
    });
}

Tensor mse(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(),
            "mse: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    const auto& av = a.data();
    const auto& bv = b.data();
    double s = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        double d = av[i] - bv[i];
        s += d * d;
    }
    double n = static_cast<double>(av.size());
    return OpCtx::make({}, {s / n}, {OpCtx::node_of(a), OpCtx::node_of(b)}, [n](Node& o) {
        Node& A = *o.inputs[0];
        Node& B = *o.inputs[1];
        double g = o.grad[0] * 2.0 / n;
        for (size_t i = 0; i < A.value.size(); ++i) {
            double d = g * (A.value[i] - B.value[i]);
            if (OpCtx::wants_grad(A)) A.grad[i] += d;
            if (OpCtx::wants_grad(B)) B.grad[i] -= d;
        }
    });
}

// ---- shape ops ----

Tensor reshape(const Tensor& a, Shape shape) {
    check_shape(shape);
    require(numel(shape) == a.size(),
            "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
                shape_str(shape));
    return OpCtx::make(std::move(shape), a.data(), {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (size_t i = 0; i < o.grad.size(); ++i) A.grad[i] += o.grad[i];
    });
}

Tensor broadcast(const Tensor& a, const Shape& shape) {
    check_shape(shape);
    const Shape& in = a.shape();
    require(in.size() <= shape.size(),
            "broadcast: target rank below input rank");
    size_t off = shape.size() - in.size();
    for (size_t i = 0; i < in.size(); ++i)
        require(in[i] == shape[off + i] || in[i] == 1,
                "broadcast: " + shape_str(in) + " does not broadcast to " +
                    shape_str(shape));
    auto ost = strides_of(shape);
    auto ist = strides_of(in);
    int64_t n = numel(shape);
    const auto& av = a.data();
    // flat output index -> flat input index
    auto map_index = [ost, ist, in, shape, off](int64_t oi) {
        int64_t ii = 0;
        for (size_t d = 0; d < shape.size(); ++d) {
            int64_t c = (oi / ost[d]) % shape[d];
            if (d >= off && in[d - off] != 1) ii += c * ist[d - off];
        }
        return ii;
    };
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) out[i] = av[map_index(i)];
    return OpCtx::make(shape, std::move(out), {OpCtx::node_of(a)},
                       [map_index, n](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (int64_t i = 0; i < n; ++i) A.grad[map_index(i)] += o.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    int rank = static_cast<int>(s0.size());
    require(axis >= 0 && axis < rank, "concat: axis out of range");
    Shape out_shape = s0;
    int64_t axis_total = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        require(static_cast<int>(s.size()) == rank, "concat: rank mismatch");
        for (int d = 0; d < rank; ++d)
            require(d == axis || s[d] == s0[d], "concat: extent mismatch off-axis");
        axis_total += s[axis];
    }
    out_shape[axis] = static_cast<int>(axis_total);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s0[d];
    for (int d = axis + 1; d < rank; ++d) inner *= s0[d];

    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    std::vector<int64_t> offsets(parts.size());
    int64_t axis_off = 0;
    for (size_t pi = 0; pi < parts.size(); ++pi) {
        offsets[pi] = axis_off;
        const auto& pv = parts[pi].data();
        int64_t pa = parts[pi].shape()[axis];
        for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < pa * inner; ++j)
                out[(o * axis_total + axis_off) * inner + j] = pv[o * pa * inner + j];
        axis_off += pa;
    }
    std::vector<std::shared_ptr<Node>> ins;
    std::vector<int64_t> axis_len;
    for (const auto& p : parts) {
        ins.push_back(OpCtx::node_of(p));
        axis_len.push_back(p.shape()[axis]);
    }
    return OpCtx::make(out_shape, std::move(out), std::move(ins),
                       [outer, inner, axis_total, offsets, axis_len](Node& o) {
        for (size_t pi = 0; pi < o.inputs.size(); ++pi) {
            Node& A = *o.inputs[pi];
            if (!OpCtx::wants_grad(A)) continue;
            int64_t pa = axis_len[pi];
            for (int64_t ou = 0; ou < outer; ++ou)
                for (int64_t j = 0; j < pa * inner; ++j)
                    A.grad[ou * pa * inner + j] +=
                        o.grad[(ou * axis_total + offsets[pi]) * inner + j];
        }
    });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    const Shape& s = a.shape();
    int rank = static_cast<int>(s.size());
    require(axis >= 0 && axis < rank, "slice: axis out of range");
    require(start >= 0 && len > 0 && start + len <= s[axis],
            "slice: range out of bounds");
    Shape out_shape = s;
    out_shape[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= s[d];
    for (int d = axis + 1; d < rank; ++d) inner *= s[d];
    int64_t sa = s[axis];
    const auto& av = a.data();
    std::vector<double> out(static_cast<size_t>(numel(out_shape)));
    for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < len * inner; ++j)
            out[o * len * inner + j] = av[(o * sa + start) * inner + j];
    return OpCtx::make(out_shape, std::move(out), {OpCtx::node_of(a)},
                       [outer, inner, sa, start, len](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        for (int64_t ou = 0; ou < outer; ++ou)
            for (int64_t j = 0; j < len * inner; ++j)
                A.grad[(ou * sa + start) * inner + j] += o.grad[ou * len * inner + j];
    });
}

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& as = a.shape();
    const Shape& bs = b.shape();
    require(as.size() == 2, "matmul: left operand must be rank 2");
    require(bs.size() == 2 || bs.size() == 1, "matmul: right operand must be rank 1 or 2");
    int64_t m = as[0], k = as[1];
    bool vec = bs.size() == 1;
    int64_t k2 = bs[0];
    int64_t n = vec ? 1 : bs[1];
    require(k == k2, "matmul: inner dimensions disagree, " + shape_str(as) + " x " +
                         shape_str(bs));
    const auto& av = a.data();
    const auto& bv = b.data();
    std::vector<double> out(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t p = 0; p < k; ++p) {
            double aip = av[i * k + p];
            if (aip == 0.0) continue;
            for (int64_t j = 0; j < n; ++j) out[i * n + j] += aip * bv[p * n + j];
        }
    Shape out_shape = vec ? Shape{static_cast<int>(m)}
                          : Shape{static_cast<int>(m), static_cast<int>(n)};
    return OpCtx::make(out_shape, std::move(out),
                       {OpCtx::node_of(a), OpCtx::node_of(b)}, [m, k, n](Node& o) {
        Node& A = *o.inputs[0];
        Node& B = *o.inputs[1];
        // dA = g . B^T, dB = A^T . g
        if (OpCtx::wants_grad(A))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j) {
                    double g = o.grad[i * n + j];
                    if (g == 0.0) continue;
                    for (int64_t p = 0; p < k; ++p)
                        A.grad[i * k + p] += g * B.value[p * n + j];
                }
        if (OpCtx::wants_grad(B))
            for (int64_t i = 0; i < m; ++i)
                for (int64_t p = 0; p < k; ++p) {
                    double aip = A.value[i * k + p];
                    if (aip == 0.0) continue;
                    for (int64_t j = 0; j < n; ++j)
                        B.grad[p * n + j] += aip * o.grad[i * n + j];
                }
    });
}

// ---- spatial ops ----
// Images are [H,W] or [C,H,W]; the channel loop is shared.

namespace {

struct SpatialDims {
    int64_t c, h, w; // c == 1 for rank-2 inputs
};

SpatialDims spatial_of(const Tensor& x, const char* opname) {
    const Shape& s = x.shape();
    if (s.size() == 2) return {1, s[0], s[1]};
    if (s.size() == 3) return {s[0], s[1], s[2]};
    throw ContractError(std::string(opname) + ": expected rank 2 or 3, got " +
                        shape_str(s));
}

} // namespace

Tensor conv2d_same(const Tensor& x, const Tensor& k, bool circular) {
    SpatialDims d = spatial_of(x, "conv2d_same");
    const Shape& ks = k.shape();
    require(ks.size() == 2 && ks[0] == ks[1], "conv2d_same: kernel must be square");
    require(ks[0] % 2 == 1, "conv2d_same: kernel side must be odd");
    int64_t side = ks[0], c = side / 2;
    int64_t H = d.h, W = d.w;
    const auto& xv = x.data();
    const auto& kv = k.data();
    std::vector<double> out(xv.size(), 0.0);
    auto wrap_i = [](int64_t i, int64_t n) { return ((i % n) + n) % n; };
    for (int64_t ch = 0; ch < d.c; ++ch) {
        const double* xp = xv.data() + ch * H * W;
        double* op = out.data() + ch * H * W;
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                double acc = 0.0;
                for (int64_t u = -c; u <= c; ++u) {
                    int64_t si = i - u;
                    if (circular) si = wrap_i(si, H);
                    else if (si < 0 || si >= H) continue;
                    for (int64_t v = -c; v <= c; ++v) {
                        int64_t sj = j - v;
                        if (circular) sj = wrap_i(sj, W);
                        else if (sj < 0 || sj >= W) continue;
                        acc += kv[(c + u) * side + (c + v)] * xp[si * W + sj];
                    }
                }
                op[i * W + j] = acc;
            }
    }
    return OpCtx::make(x.shape(), std::move(out),
                       {OpCtx::node_of(x), OpCtx::node_of(k)},
                       [d, side, c, circular](Node& o) {
        Node& X = *o.inputs[0];
        Node& K = *o.inputs[1];
        int64_t H = d.h, W = d.w;
        auto wrap_i = [](int64_t i, int64_t n) { return ((i % n) + n) % n; };
        for (int64_t ch = 0; ch < d.c; ++ch) {
            const double* gp = o.grad.data() + ch * H * W;
            const double* xp = X.value.data() + ch * H * W;
            double* xg = OpCtx::wants_grad(X) ? X.grad.data() + ch * H * W : nullptr;
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j) {
                    double g = gp[i * W + j];
                    if (g == 0.0) continue;
                    for (int64_t u = -c; u <= c; ++u) {
                        int64_t si = i - u;
                        if (circular) si = wrap_i(si, H);
                        else if (si < 0 || si >= H) continue;
                        for (int64_t v = -c; v <= c; ++v) {
                            int64_t sj = j - v;
                            if (circular) sj = wrap_i(sj, W);
                            else if (sj < 0 || sj >= W) continue;
                            double kg = g * xp[si * W + sj];
                            if (OpCtx::wants_grad(K))
                                K.grad[(c + u) * side + (c + v)] += kg;
                            if (xg)
                                xg[si * W + sj] += g * K.value[(c + u) * side + (c + v)];
                        }
                    }
                }
        }
    });
}

Tensor avg_pool2d(const Tensor& x, int factor) {
    require(factor >= 1, "avg_pool2d: factor must be >= 1");
    SpatialDims d = spatial_of(x, "avg_pool2d");
    require(d.h % factor == 0 && d.w % factor == 0,
            "avg_pool2d: spatial extents must be divisible by the factor");
    int64_t H = d.h, W = d.w, f = factor;
    int64_t oh = H / f, ow = W / f;
    const auto& xv = x.data();
    std::vector<double> out(static_cast<size_t>(d.c * oh * ow), 0.0);
    double inv = 1.0 / static_cast<double>(f * f);
    for (int64_t ch = 0; ch < d.c; ++ch)
        for (int64_t i = 0; i < oh; ++i)
            for (int64_t j = 0; j < ow; ++j) {
                double acc = 0.0;
                for (int64_t u = 0; u < f; ++u)
                    for (int64_t v = 0; v < f; ++v)
                        acc += xv[ch * H * W + (i * f + u) * W + (j * f + v)];
                out[ch * oh * ow + i * ow + j] = acc * inv;
            }
    Shape out_shape = x.shape().size() == 2
                          ? Shape{static_cast<int>(oh), static_cast<int>(ow)}
                          : Shape{static_cast<int>(d.c), static_cast<int>(oh),
                                  static_cast<int>(ow)};
    return OpCtx::make(out_shape, std::move(out), {OpCtx::node_of(x)},
                       [d, f, oh, ow, inv](Node& o) {
        Node& X = *o.inputs[0];
        if (!OpCtx::wants_grad(X)) return;
        int64_t H = d.h, W = d.w;
        for (int64_t ch = 0; ch < d.c; ++ch)
            for (int64_t i = 0; i < oh; ++i)
                for (int64_t j = 0; j < ow; ++j) {
                    double g = o.grad[ch * oh * ow + i * ow + j] * inv;
                    for (int64_t u = 0; u < f; ++u)
                        for (int64_t v = 0; v < f; ++v)
                            X.grad[ch * H * W + (i * f + u) * W + (j * f + v)] += g;
                }
    });
}

Tensor softmax_flat(const Tensor& a) {
    const auto& av = a.data();
    double mx = av[0];
    for (double v : av) mx = std::max(mx, v);
    std::vector<double> out(av.size());
    double denom = 0.0;
    for (size_t i = 0; i < av.size(); ++i) {
        out[i] = std::exp(av[i] - mx);
        denom += out[i];
    }
    for (auto& v : out) v /= denom;
    return OpCtx::make(a.shape(), std::move(out), {OpCtx::node_of(a)}, [](Node& o) {
        Node& A = *o.inputs[0];
        if (!OpCtx::wants_grad(A)) return;
        double dot = 0.0;
        for (size_t i = 0; i < o.grad.size(); ++i) dot += o.grad[i] * o.value[i];
        for (size_t i = 0; i < o.grad.size(); ++i)
            A.grad[i] += o.value[i] * (o.grad[i] - dot);
    });
}

// Backward warp: output at pixel p samples the input at p - disp(p), bilinear,
// zero outside the frame. disp is [H,W,2] as (row offset, col offset).
Tensor bilinear_warp(const Tensor& x, const Tensor& disp) {
    SpatialDims d = spatial_of(x, "bilinear_warp");
    const Shape& ds = disp.shape();
    require(ds.size() == 3 && ds[0] == d.h && ds[1] == d.w && ds[2] == 2,
            "bilinear_warp: displacement must be [H,W,2] matching the image");
    int64_t H = d.h, W = d.w;
    const auto& xv = x.data();
    const auto& dv = disp.data();
    std::vector<double> out(xv.size(), 0.0);
    auto tap = [H, W](const double* plane, int64_t i, int64_t j) -> double {
        if (i < 0 || i >= H || j < 0 || j >= W) return 0.0;
        return plane[i * W + j];
    };
    for (int64_t ch = 0; ch < d.c; ++ch) {
        const double* xp = xv.data() + ch * H * W;
        double* op = out.data() + ch * H * W;
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                double sy = static_cast<double>(i) - dv[(i * W + j) * 2 + 0];
                double sx = static_cast<double>(j) - dv[(i * W + j) * 2 + 1];
                double fy = std::floor(sy), fx = std::floor(sx);
                int64_t iy = static_cast<int64_t>(fy), ix = static_cast<int64_t>(fx);
                double ry = sy - fy, rx = sx - fx;
                op[i * W + j] =
                    (1 - ry) * (1 - rx) * tap(xp, iy, ix) +
                    (1 - ry) * rx * tap(xp, iy, ix + 1) +
                    ry * (1 - rx) * tap(xp, iy + 1, ix) +
                    ry * rx * tap(xp, iy + 1, ix + 1);
            }
    }
    return OpCtx::make(x.shape(), std::move(out),
                       {OpCtx::node_of(x), OpCtx::node_of(disp)}, [d](Node& o) {
        Node& X = *o.inputs[0];
        Node& D = *o.inputs[1];
        int64_t H = d.h, W = d.w;
        auto inb = [H, W](int64_t i, int64_t j) {
            return i >= 0 && i < H && j >= 0 && j < W;
        };
        for (int64_t ch = 0; ch < d.c; ++ch) {
            const double* gp = o.grad.data() + ch * H * W;
            const double* xp = X.value.data() + ch * H * W;
            double* xg = OpCtx::wants_grad(X) ? X.grad.data() + ch * H * W : nullptr;
            for (int64_t i = 0; i < H; ++i)
                for (int64_t j = 0; j < W; ++j) {
                    double g = gp[i * W + j];
                    if (g == 0.0) continue;
                    double sy = static_cast<double>(i) - D.value[(i * W + j) * 2 + 0];
                    double sx = static_cast<double>(j) - D.value[(i * W + j) * 2 + 1];
                    double fy = std::floor(sy), fx = std::floor(sx);
                    int64_t iy = static_cast<int64_t>(fy),
                            ix = static_cast<int64_t>(fx);
                    double ry = sy - fy, rx = sx - fx;
                    double x00 = inb(iy, ix) ? xp[iy * W + ix] : 0.0;
                    double x01 = inb(iy, ix + 1) ? xp[iy * W + ix + 1] : 0.0;
                    double x10 = inb(iy + 1, ix) ? xp[(iy + 1) * W + ix] : 0.0;
                    double x11 = inb(iy + 1, ix + 1) ? xp[(iy + 1) * W + ix + 1] : 0.0;
                    if (xg) {
                        if (inb(iy, ix)) xg[iy * W + ix] += g * (1 - ry) * (1 - rx);
                        if (inb(iy, ix + 1)) xg[iy * W + ix + 1] += g * (1 - ry) * rx;
                        if (inb(iy + 1, ix)) xg[(iy + 1) * W + ix] += g * ry * (1 - rx);
                        if (inb(iy + 1, ix + 1)) xg[(iy + 1) * W + ix + 1] += g * ry * rx;
                    }
                    if (OpCtx::wants_grad(D)) {
                        double dsy = (1 - rx) * (x10 - x00) + rx * (x11 - x01);
                        double dsx = (1 - ry) * (x01 - x00) + ry * (x11 - x10);
                        // sy = i - disp_y, so d/d(disp_y) flips sign
                        D.grad[(i * W + j) * 2 + 0] += -g * dsy;
                        D.grad[(i * W + j) * 2 + 1] += -g * dsx;
                    }
                }
        }
    });
}

} // namespace dmplug
