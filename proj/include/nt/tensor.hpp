#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nt {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class Op {
    Leaf,
    Constant,
    MatMul,
    Add,
    Mul,
    Scale,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    LogSoftmax,
    Cosine,
    ClampMin,
    Sum,
    Mean,
    Square,
    GatherRow,
    Concat,
};

const char* op_name(Op op);

class Graph;

// Handle into a graph node. Cheap to copy; valid for the graph's lifetime.
class Tensor {
  public:
    Tensor() = default;

    const Shape& shape() const;
    const std::vector<double>& values() const;
    double value_at(std::int64_t i) const;
    double scalar() const;  // requires numel == 1
    const std::vector<double>& grad() const;

    int id() const { return id_; }
    Graph& graph() const;
    bool valid() const { return graph_ != nullptr; }

  private:
    friend class Graph;
    Tensor(Graph* g, int id) : graph_(g), id_(id) {}

    Graph* graph_ = nullptr;
    int id_ = -1;
};

// Define-by-run reverse-mode graph over dense double tensors. One graph per
// training step; nodes are topologically ordered by construction. backward()
// finalizes the graph and may run only once.
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    Tensor leaf(Shape shape, std::vector<double> values);
    Tensor constant(Shape shape, std::vector<double> values);
    Tensor constant(double value);
    Tensor zeros(Shape shape);

    Tensor apply(Op op, const std::vector<Tensor>& inputs, double attr = 0.0,
                 int iattr = -1);

    void backward(const Tensor& root);
    bool backward_done() const { return backward_done_; }

    const Shape& shape_of(int id) const;
    const std::vector<double>& values_of(int id) const;
    const std::vector<double>& grad_of(int id) const;
    bool requires_grad(int id) const;

    std::size_t node_count() const { return nodes_.size(); }

    // Hash over the activation pattern of every relu/clamp element seen in
    // forward passes; lets the finite-difference oracle detect kink crossings.
    std::uint64_t kink_signature() const { return kink_sig_; }

  private:
    struct Node {
        Op op;
        std::vector<int> inputs;
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // allocated lazily during backward
        double attr = 0.0;
        int iattr = -1;
        bool requires_grad = false;
    };

    const Node& node(int id) const;
    Node& node(int id);
    int check_input(const Tensor& t) const;
    Tensor push(Node node);
    void forward(Node& n);
    void backprop(const Node& n);
    void note_kink(bool active);

    std::vector<Node> nodes_;
    std::uint64_t kink_sig_ = 1469598103934665603ull;
    bool backward_done_ = false;
};

// Primitive wrappers. All inputs must belong to one graph.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, const Tensor& s);
Tensor scale(const Tensor& x, double c);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor log_softmax(const Tensor& x);
Tensor cosine(const Tensor& u, const Tensor& v);
Tensor clamp_min(const Tensor& x, double min_value);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor square(const Tensor& x);
Tensor gather_row(const Tensor& m, int row);
Tensor concat(const Tensor& a, const Tensor& b);

// Composites.
Tensor neg(const Tensor& x);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor dot(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);

}  // namespace nt
