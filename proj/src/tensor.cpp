#include "nt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace nt {

std::int64_t numel(const Shape& shape) {
    std::int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Constant: return "constant";
        case Op::MatMul: return "matmul";
        case Op::Add: return "add";
        case Op::Mul: return "mul";
        case Op::Scale: return "scale";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::LogSoftmax: return "log_softmax";
        case Op::Cosine: return "cosine";
        case Op::ClampMin: return "clamp_min";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Square: return "square";
        case Op::GatherRow: return "gather_row";
        case Op::Concat: return "concat";
    }
    return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, const Shape& a, const Shape& b) {
    throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch (" +
                                shape_str(a) + " vs " + shape_str(b) + ")");
}

[[noreturn]] void shape_error(Op op, const Shape& a) {
    throw std::invalid_argument(std::string(op_name(op)) +
                                ": unsupported shape " + shape_str(a));
}

double l2_norm(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

}  // namespace

// ---------------------------------------------------------------- Tensor

const Shape& Tensor::shape() const { return graph().shape_of(id_); }
const std::vector<double>& Tensor::values() const { return graph().values_of(id_); }
const std::vector<double>& Tensor::grad() const { return graph().grad_of(id_); }

double Tensor::value_at(std::int64_t i) const {
    return values().at(static_cast<std::size_t>(i));
}

double Tensor::scalar() const {
    const auto& v = values();
    if (v.size() != 1)
        throw std::logic_error("Tensor::scalar: tensor has " +
                               std::to_string(v.size()) + " elements");
    return v[0];
}

Graph& Tensor::graph() const {
    if (!graph_) throw std::logic_error("Tensor: unbound handle");
    return *graph_;
}

// ---------------------------------------------------------------- Graph

const Graph::Node& Graph::node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw std::logic_error("Graph: dangling node id " + std::to_string(id));
    return nodes_[static_cast<std::size_t>(id)];
}

Graph::Node& Graph::node(int id) {
    return const_cast<Node&>(static_cast<const Graph*>(this)->node(id));
}

int Graph::check_input(const Tensor& t) const {
    if (&t.graph() != this)
        throw std::logic_error("Graph: input tensor belongs to another graph");
    node(t.id());  // bounds check
    return t.id();
}

const Shape& Graph::shape_of(int id) const { return node(id).shape; }
const std::vector<double>& Graph::values_of(int id) const { return node(id).values; }
bool Graph::requires_grad(int id) const { return node(id).requires_grad; }

const std::vector<double>& Graph::grad_of(int id) const {
    const Node& n = node(id);
    if (!backward_done_)
        throw std::logic_error("Graph: gradient read before backward()");
    if (!n.requires_grad)
        throw std::logic_error("Graph: node " + std::to_string(id) +
                               " does not track gradients");
    return n.grad;
}

Tensor Graph::push(Node n) {
    if (backward_done_)
        throw std::logic_error("Graph: finalized by backward(); build a new graph");
    if (n.shape.empty() || numel(n.shape) <= 0)
        throw std::invalid_argument(std::string(op_name(n.op)) +
                                    ": invalid shape " + shape_str(n.shape));
    nodes_.push_back(std::move(n));
    return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Graph::leaf(Shape shape, std::vector<double> values) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
        throw std::invalid_argument("leaf: value count does not match shape " +
                                    shape_str(shape));
    Node n;
    n.op = Op::Leaf;
    n.shape = std::move(shape);
    n.values = std::move(values);
    n.requires_grad = true;
    return push(std::move(n));
}

Tensor Graph::constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != static_cast<std::int64_t>(values.size()))
        throw std::invalid_argument("constant: value count does not match shape " +
                                    shape_str(shape));
    Node n;
    n.op = Op::Constant;
    n.shape = std::move(shape);
    n.values = std::move(values);
    return push(std::move(n));
}

Tensor Graph::constant(double value) { return constant(Shape{1}, {value}); }

Tensor Graph::zeros(Shape shape) {
    auto n = static_cast<std::size_t>(numel(shape));
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

void Graph::note_kink(bool active) {
    kink_sig_ ^= static_cast<std::uint64_t>(active) + 0x9e;
    kink_sig_ *= 1099511628211ull;
}

Tensor Graph::apply(Op op, const std::vector<Tensor>& inputs, double attr,
                    int iattr) {
    Node n;
    n.op = op;
    n.attr = attr;
    n.iattr = iattr;
    n.inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        n.inputs.push_back(check_input(t));
        n.requires_grad = n.requires_grad || node(t.id()).requires_grad;
    }
    forward(n);
    return push(std::move(n));
}

void Graph::forward(Node& n) {
    auto in = [&](std::size_t i) -> const Node& { return node(n.inputs.at(i)); };
    auto expect_arity = [&](std::size_t k) {
        if (n.inputs.size() != k)
            throw std::invalid_argument(std::string(op_name(n.op)) + ": expects " +
                                        std::to_string(k) + " inputs, got " +
                                        std::to_string(n.inputs.size()));
    };

    switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
            throw std::logic_error("forward: leaf nodes carry no primitive");

        case Op::MatMul: {
            expect_arity(2);
            const Node& a = in(0);
            const Node& b = in(1);
            if (a.shape.size() == 2 && b.shape.size() == 2) {
                int m = a.shape[0], k = a.shape[1];
                if (b.shape[0] != k) shape_error(n.op, a.shape, b.shape);
                int p = b.shape[1];
                n.shape = {m, p};
                n.values.assign(static_cast<std::size_t>(m) * p, 0.0);
                for (int i = 0; i < m; ++i)
                    for (int l = 0; l < k; ++l) {
                        double av = a.values[static_cast<std::size_t>(i) * k + l];
                        if (av == 0.0) continue;
                        for (int j = 0; j < p; ++j)
                            n.values[static_cast<std::size_t>(i) * p + j] +=
                                av * b.values[static_cast<std::size_t>(l) * p + j];
                    }
            } else if (a.shape.size() == 2 && b.shape.size() == 1) {
                int m = a.shape[0], k = a.shape[1];
                if (b.shape[0] != k) shape_error(n.op, a.shape, b.shape);
                n.shape = {m};
                n.values.assign(static_cast<std::size_t>(m), 0.0);
                for (int i = 0; i < m; ++i) {
                    double s = 0.0;
                    for (int l = 0; l < k; ++l)
                        s += a.values[static_cast<std::size_t>(i) * k + l] * b.values[static_cast<std::size_t>(l)];
                    n.values[static_cast<std::size_t>(i)] = s;
                }
            } else if (a.shape.size() == 1 && b.shape.size() == 2) {
                int k = a.shape[0];
                if (b.shape[0] != k) shape_error(n.op, a.shape, b.shape);
                int p = b.shape[1];
                n.shape = {p};
                n.values.assign(static_cast<std::size_t>(p), 0.0);
                for (int l = 0; l < k; ++l) {
                    double av = a.values[static_cast<std::size_t>(l)];
                    if (av == 0.0) continue;
                    for (int j = 0; j < p; ++j)
                        n.values[static_cast<std::size_t>(j)] +=
                            av * b.values[static_cast<std::size_t>(l) * p + j];
                }
            } else {
                shape_error(n.op, a.shape, b.shape);
            }
            break;
        }

        case Op::Add: {
            expect_arity(2);
            const Node& a = in(0);
            const Node& b = in(1);
            if (a.shape == b.shape) {
                n.shape = a.shape;
                n.values.resize(a.values.size());
                for (std::size_t i = 0; i < a.values.size(); ++i)
                    n.values[i] = a.values[i] + b.values[i];
            } else if (a.shape.size() == 2 && b.shape.size() == 1 &&
                       a.shape[1] == b.shape[0]) {
                // row-broadcast: each row of a plus b
                int m = a.shape[0], k = a.shape[1];
                n.shape = a.shape;
                n.values.resize(a.values.size());
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < k; ++j)
                        n.values[static_cast<std::size_t>(i) * k + j] =
                            a.values[static_cast<std::size_t>(i) * k + j] +
                            b.values[static_cast<std::size_t>(j)];
            } else {
                shape_error(n.op, a.shape, b.shape);
            }
            break;
        }

        case Op::Mul: {
            expect_arity(2);
            const Node& a = in(0);
            const Node& b = in(1);
            if (a.shape != b.shape) shape_error(n.op, a.shape, b.shape);
            n.shape = a.shape;
            n.values.resize(a.values.size());
            for (std::size_t i = 0; i < a.values.size(); ++i)
                n.values[i] = a.values[i] * b.values[i];
            break;
        }

        case Op::Scale: {
            expect_arity(2);
            const Node& x = in(0);
            const Node& s = in(1);
            if (s.values.size() != 1) shape_error(n.op, x.shape, s.shape);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            double c = s.values[0];
            for (std::size_t i = 0; i < x.values.size(); ++i)
                n.values[i] = x.values[i] * c;
            break;
        }

        case Op::Relu: {
            expect_arity(1);
            const Node& x = in(0);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i) {
                bool active = x.values[i] > 0.0;
                note_kink(active);
                n.values[i] = active ? x.values[i] : 0.0;
            }
            break;
        }

        case Op::Sigmoid: {
            expect_arity(1);
            const Node& x = in(0);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i) {
                double v = x.values[i];
                n.values[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                                       : std::exp(v) / (1.0 + std::exp(v));
            }
            break;
        }

        case Op::Tanh: {
            expect_arity(1);
            const Node& x = in(0);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i)
                n.values[i] = std::tanh(x.values[i]);
            break;
        }

        case Op::Exp: {
            expect_arity(1);
            const Node& x = in(0);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i)
                n.values[i] = std::exp(x.values[i]);
            break;
        }

        case Op::Log: {
            expect_arity(1);
            const Node& x = in(0);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i) {
                if (!(x.values[i] > 0.0))
                    throw std::domain_error("log: non-positive input " +
                                            std::to_string(x.values[i]));
                n.values[i] = std::log(x.values[i]);
            }
            break;
        }

        case Op::LogSoftmax: {
            expect_arity(1);
            const Node& x = in(0);
            int rows = 1, cols = 0;
            if (x.shape.size() == 1) {
                cols = x.shape[0];
            } else if (x.shape.size() == 2) {
                rows = x.shape[0];
                cols = x.shape[1];
            } else {
                shape_error(n.op, x.shape);
            }
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (int r = 0; r < rows; ++r) {
                const double* xr = x.values.data() + static_cast<std::size_t>(r) * cols;
                double* yr = n.values.data() + static_cast<std::size_t>(r) * cols;
                double mx = xr[0];
                for (int j = 1; j < cols; ++j) mx = std::max(mx, xr[j]);
                double lse = 0.0;
                for (int j = 0; j < cols; ++j) lse += std::exp(xr[j] - mx);
                lse = mx + std::log(lse);
                for (int j = 0; j < cols; ++j) yr[j] = xr[j] - lse;
            }
            break;
        }

        case Op::Cosine: {
            expect_arity(2);
            const Node& u = in(0);
            const Node& v = in(1);
            if (u.shape.size() != 1 || v.shape.size() != 1 || u.shape != v.shape)
                shape_error(n.op, u.shape, v.shape);
            double nu = l2_norm(u.values);
            double nv = l2_norm(v.values);
            if (nu == 0.0 || nv == 0.0)
                throw std::domain_error("cosine: zero-norm input vector");
            double d = 0.0;
            for (std::size_t i = 0; i < u.values.size(); ++i)
                d += u.values[i] * v.values[i];
            n.shape = {1};
            n.values = {d / (nu * nv)};
            break;
        }

        case Op::ClampMin: {
            expect_arity(1);
            const Node& x = in(0);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i) {
                bool above = x.values[i] > n.attr;
                note_kink(above);
                n.values[i] = above ? x.values[i] : n.attr;
            }
            break;
        }

        case Op::Sum:
        case Op::Mean: {
            expect_arity(1);
            const Node& x = in(0);
            double s = 0.0;
            for (double v : x.values) s += v;
            if (n.op == Op::Mean) s /= static_cast<double>(x.values.size());
            n.shape = {1};
            n.values = {s};
            break;
        }

        case Op::Square: {
            expect_arity(1);
            const Node& x = in(0);
            n.shape = x.shape;
            n.values.resize(x.values.size());
            for (std::size_t i = 0; i < x.values.size(); ++i)
                n.values[i] = x.values[i] * x.values[i];
            break;
        }

        case Op::GatherRow: {
            expect_arity(1);
            const Node& x = in(0);
            if (x.shape.size() != 2) shape_error(n.op, x.shape);
            if (n.iattr < 0 || n.iattr >= x.shape[0])
                throw std::out_of_range("gather_row: row " + std::to_string(n.iattr) +
                                        " out of range for " + shape_str(x.shape));
            int cols = x.shape[1];
            n.shape = {cols};
            n.values.assign(x.values.begin() + static_cast<std::ptrdiff_t>(n.iattr) * cols,
                            x.values.begin() + static_cast<std::ptrdiff_t>(n.iattr + 1) * cols);
            break;
        }

        case Op::Concat: {
            expect_arity(2);
            const Node& a = in(0);
            const Node& b = in(1);
            if (a.shape.size() == 1 && b.shape.size() == 1) {
                n.shape = {a.shape[0] + b.shape[0]};
            } else if (a.shape.size() == 2 && b.shape.size() == 2 &&
                       a.shape[1] == b.shape[1]) {
                n.shape = {a.shape[0] + b.shape[0], a.shape[1]};
            } else if (a.shape.size() == 2 && b.shape.size() == 1 &&
                       a.shape[1] == b.shape[0]) {
                n.shape = {a.shape[0] + 1, a.shape[1]};  // append one row
            } else {
                shape_error(n.op, a.shape, b.shape);
            }
            n.values.reserve(a.values.size() + b.values.size());
            n.values.insert(n.values.end(), a.values.begin(), a.values.end());
            n.values.insert(n.values.end(), b.values.begin(), b.values.end());
            break;
        }
    }
}

void Graph::backward(const Tensor& root) {
    check_input(root);
    if (backward_done_)
        throw std::logic_error("backward: already run on this graph");
    const Node& r = node(root.id());
    if (numel(r.shape) != 1)
        throw std::invalid_argument("backward: root must be scalar, got " +
                                    shape_str(r.shape));
    backward_done_ = true;
    for (Node& n : nodes_)
        if (n.requires_grad) n.grad.assign(n.values.size(), 0.0);
    if (!r.requires_grad) return;  // nothing trainable feeds the root
    node(root.id()).grad[0] = 1.0;
    for (int id = root.id(); id >= 0; --id) {
        const Node& n = node(id);
        if (!n.requires_grad || n.op == Op::Leaf || n.op == Op::Constant) continue;
        backprop(n);
    }
}

void Graph::backprop(const Node& n) {
    auto in = [&](std::size_t i) -> Node& { return node(n.inputs.at(i)); };
    auto wants = [&](std::size_t i) { return in(i).requires_grad; };
    const std::vector<double>& go = n.grad;

    switch (n.op) {
        case Op::Leaf:
        case Op::Constant:
            return;

        case Op::MatMul: {
            Node& a = in(0);
            Node& b = in(1);
            if (a.shape.size() == 2 && b.shape.size() == 2) {
                int m = a.shape[0], k = a.shape[1], p = b.shape[1];
                if (wants(0))
                    for (int i = 0; i < m; ++i)
                        for (int l = 0; l < k; ++l) {
                            double s = 0.0;
                            for (int j = 0; j < p; ++j)
                                s += go[static_cast<std::size_t>(i) * p + j] *
                                     b.values[static_cast<std::size_t>(l) * p + j];
                            a.grad[static_cast<std::size_t>(i) * k + l] += s;
                        }
                if (wants(1))
                    for (int l = 0; l < k; ++l)
                        for (int j = 0; j < p; ++j) {
                            double s = 0.0;
                            for (int i = 0; i < m; ++i)
                                s += a.values[static_cast<std::size_t>(i) * k + l] *
                                     go[static_cast<std::size_t>(i) * p + j];
                            b.grad[static_cast<std::size_t>(l) * p + j] += s;
                        }
            } else if (a.shape.size() == 2 && b.shape.size() == 1) {
                int m = a.shape[0], k = a.shape[1];
                if (wants(0))
                    for (int i = 0; i < m; ++i)
                        for (int l = 0; l < k; ++l)
                            a.grad[static_cast<std::size_t>(i) * k + l] +=
                                go[static_cast<std::size_t>(i)] * b.values[static_cast<std::size_t>(l)];
                if (wants(1))
                    for (int l = 0; l < k; ++l) {
                        double s = 0.0;
                        for (int i = 0; i < m; ++i)
                            s += a.values[static_cast<std::size_t>(i) * k + l] *
                                 go[static_cast<std::size_t>(i)];
                        b.grad[static_cast<std::size_t>(l)] += s;
                    }
            } else {  // 1D x 2D
                int k = a.shape[0], p = b.shape[1];
                if (wants(0))
                    for (int l = 0; l < k; ++l) {
                        double s = 0.0;
                        for (int j = 0; j < p; ++j)
                            s += b.values[static_cast<std::size_t>(l) * p + j] *
                                 go[static_cast<std::size_t>(j)];
                        a.grad[static_cast<std::size_t>(l)] += s;
                    }
                if (wants(1))
                    for (int l = 0; l < k; ++l)
                        for (int j = 0; j < p; ++j)
                            b.grad[static_cast<std::size_t>(l) * p + j] +=
                                a.values[static_cast<std::size_t>(l)] * go[static_cast<std::size_t>(j)];
            }
            break;
        }

        case Op::Add: {
            Node& a = in(0);
            Node& b = in(1);
            if (a.shape == b.shape) {
                if (wants(0))
                    for (std::size_t i = 0; i < go.size(); ++i) a.grad[i] += go[i];
                if (wants(1))
                    for (std::size_t i = 0; i < go.size(); ++i) b.grad[i] += go[i];
            } else {  // row-broadcast
                int m = a.shape[0], k = a.shape[1];
                if (wants(0))
                    for (std::size_t i = 0; i < go.size(); ++i) a.grad[i] += go[i];
                if (wants(1))
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < k; ++j)
                            b.grad[static_cast<std::size_t>(j)] +=
                                go[static_cast<std::size_t>(i) * k + j];
            }
            break;
        }

        case Op::Mul: {
            Node& a = in(0);
            Node& b = in(1);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i)
                    a.grad[i] += go[i] * b.values[i];
            if (wants(1))
                for (std::size_t i = 0; i < go.size(); ++i)
                    b.grad[i] += go[i] * a.values[i];
            break;
        }

        case Op::Scale: {
            Node& x = in(0);
            Node& s = in(1);
            double c = s.values[0];
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i) x.grad[i] += go[i] * c;
            if (wants(1)) {
                double acc = 0.0;
                for (std::size_t i = 0; i < go.size(); ++i)
                    acc += go[i] * x.values[i];
                s.grad[0] += acc;
            }
            break;
        }

        case Op::Relu: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i)
                    if (x.values[i] > 0.0) x.grad[i] += go[i];
            break;
        }

        case Op::Sigmoid: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i) {
                    double y = n.values[i];
                    x.grad[i] += go[i] * y * (1.0 - y);
                }
            break;
        }

        case Op::Tanh: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i) {
                    double y = n.values[i];
                    x.grad[i] += go[i] * (1.0 - y * y);
                }
            break;
        }

        case Op::Exp: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i)
                    x.grad[i] += go[i] * n.values[i];
            break;
        }

        case Op::Log: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i)
                    x.grad[i] += go[i] / x.values[i];
            break;
        }

        case Op::LogSoftmax: {
            Node& x = in(0);
            if (!wants(0)) break;
            int rows = n.shape.size() == 2 ? n.shape[0] : 1;
            int cols = n.shape.size() == 2 ? n.shape[1] : n.shape[0];
            for (int r = 0; r < rows; ++r) {
                const double* yr = n.values.data() + static_cast<std::size_t>(r) * cols;
                const double* gr = go.data() + static_cast<std::size_t>(r) * cols;
                double gsum = 0.0;
                for (int j = 0; j < cols; ++j) gsum += gr[j];
                double* xr = x.grad.data() + static_cast<std::size_t>(r) * cols;
                for (int j = 0; j < cols; ++j)
                    xr[j] += gr[j] - std::exp(yr[j]) * gsum;
            }
            break;
        }

        case Op::Cosine: {
            Node& u = in(0);
            Node& v = in(1);
            double nu = l2_norm(u.values);
            double nv = l2_norm(v.values);
            double c = n.values[0];
            double g = go[0];
            if (wants(0))
                for (std::size_t i = 0; i < u.values.size(); ++i)
                    u.grad[i] += g * (v.values[i] / (nu * nv) -
                                      c * u.values[i] / (nu * nu));
            if (wants(1))
                for (std::size_t i = 0; i < v.values.size(); ++i)
                    v.grad[i] += g * (u.values[i] / (nu * nv) -
                                      c * v.values[i] / (nv * nv));
            break;
        }

        case Op::ClampMin: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i)
                    if (x.values[i] > n.attr) x.grad[i] += go[i];
            break;
        }

        case Op::Sum: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < x.values.size(); ++i)
                    x.grad[i] += go[0];
            break;
        }

        case Op::Mean: {
            Node& x = in(0);
            if (wants(0)) {
                double g = go[0] / static_cast<double>(x.values.size());
                for (std::size_t i = 0; i < x.values.size(); ++i) x.grad[i] += g;
            }
            break;
        }

        case Op::Square: {
            Node& x = in(0);
            if (wants(0))
                for (std::size_t i = 0; i < go.size(); ++i)
                    x.grad[i] += go[i] * 2.0 * x.values[i];
            break;
        }

        case Op::GatherRow: {
            Node& x = in(0);
            if (wants(0)) {
                int cols = x.shape[1];
                for (int j = 0; j < cols; ++j)
                    x.grad[static_cast<std::size_t>(n.iattr) * cols + j] +=
                        go[static_cast<std::size_t>(j)];
            }
            break;
        }

        case Op::Concat: {
            Node& a = in(0);
            Node& b = in(1);
            std::size_t na = a.values.size();
            if (wants(0))
                for (std::size_t i = 0; i < na; ++i) a.grad[i] += go[i];
            if (wants(1))
                for (std::size_t i = 0; i < b.values.size(); ++i)
                    b.grad[i] += go[na + i];
            break;
        }
    }
}

// ------------------------------------------------------------- wrappers

Tensor matmul(const Tensor& a, const Tensor& b) {
    return a.graph().apply(Op::MatMul, {a, b});
}
Tensor add(const Tensor& a, const Tensor& b) {
    return a.graph().apply(Op::Add, {a, b});
}
Tensor mul(const Tensor& a, const Tensor& b) {
    return a.graph().apply(Op::Mul, {a, b});
}
Tensor scale(const Tensor& x, const Tensor& s) {
    return x.graph().apply(Op::Scale, {x, s});
}
Tensor scale(const Tensor& x, double c) {
    return scale(x, x.graph().constant(c));
}
Tensor relu(const Tensor& x) { return x.graph().apply(Op::Relu, {x}); }
Tensor sigmoid(const Tensor& x) { return x.graph().apply(Op::Sigmoid, {x}); }
Tensor tanh(const Tensor& x) { return x.graph().apply(Op::Tanh, {x}); }
Tensor exp(const Tensor& x) { return x.graph().apply(Op::Exp, {x}); }
Tensor log(const Tensor& x) { return x.graph().apply(Op::Log, {x}); }
Tensor log_softmax(const Tensor& x) {
    return x.graph().apply(Op::LogSoftmax, {x});
}
Tensor cosine(const Tensor& u, const Tensor& v) {
    return u.graph().apply(Op::Cosine, {u, v});
}
Tensor clamp_min(const Tensor& x, double min_value) {
    return x.graph().apply(Op::ClampMin, {x}, min_value);
}
Tensor sum(const Tensor& x) { return x.graph().apply(Op::Sum, {x}); }
Tensor mean(const Tensor& x) { return x.graph().apply(Op::Mean, {x}); }
Tensor square(const Tensor& x) { return x.graph().apply(Op::Square, {x}); }
Tensor gather_row(const Tensor& m, int row) {
    return m.graph().apply(Op::GatherRow, {m}, 0.0, row);
}
Tensor concat(const Tensor& a, const Tensor& b) {
    return a.graph().apply(Op::Concat, {a, b});
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }
Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }
Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }
Tensor add_scalar(const Tensor& x, double c) {
    auto n = static_cast<std::size_t>(numel(x.shape()));
    return add(x, x.graph().constant(x.shape(), std::vector<double>(n, c)));
}

}  // namespace nt
