#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace s4ecg::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One recorded operation. Leaves have no inputs and no backward rule.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> inputs;
    // Reads this node's grad and accumulates into the grads of `inputs`.
    std::function<void(Node&)> backward;
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : m_node(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(m_node); }
    const Shape& shape() const { return m_node->shape; }
    std::size_t dim(std::size_t axis) const { return m_node->shape.at(axis); }
    std::size_t rank() const { return m_node->shape.size(); }
    std::size_t size() const { return m_node->value.size(); }

    std::span<const double> values() const { return m_node->value; }
    std::span<double> mutable_values() { return m_node->value; }
    std::span<const double> grad() const { return m_node->grad; }
    bool has_grad() const { return !m_node->grad.empty(); }
    double item() const;
    double operator[](std::size_t i) const { return m_node->value[i]; }

    bool requires_grad() const { return m_node->requires_grad; }
    void set_requires_grad(bool flag);
    void zero_grad();

    // Copy of the values without graph history.
    Tensor detach() const;

    const NodePtr& node() const { return m_node; }

private:
    NodePtr m_node;
};

// Disables graph recording on this thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool m_previous;
};

bool grad_enabled();

// Builds a result node; records it on the graph only when recording is on and
// some input requires a gradient. Used by fused operations in other modules.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   const char* op, std::function<void(Node&)> backward);
// Sizes node.grad to match node.value (zero-filled) if it is not already.
void ensure_grad(Node& node);

// Accumulates d(loss)/d(leaf) into every reachable leaf that requires a gradient.
void backward(const Tensor& loss);

enum class Elementwise { add, sub, mul, neg, exp, log, gelu, sigmoid, relu };

// Binary ops broadcast over trailing dimensions (numpy rules).
Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b = Tensor{});

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor scale(const Tensor& a, double factor);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

Tensor matmul(const Tensor& a, const Tensor& b);
// x [B, in] with weight [out, in] and optional bias [out] -> [B, out]
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = Tensor{});

enum class Padding { causal, same };

// signal [C_in, L] or [B, C_in, L]; weights [C_out, C_in, k]; bias [C_out] optional.
// Causal padding pads k-1 zeros on the left; same pads (k-1)/2 left and the rest right.
Tensor conv1d(const Tensor& signal, const Tensor& weights, const Tensor& bias, Padding padding);
Tensor causal_conv1d(const Tensor& signal, const Tensor& weights, bool causal);

// Averages over the last axis: [C, L] -> [C], [B, C, L] -> [B, C].
Tensor mean_pool(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor logsumexp(const Tensor& x);  // over the last axis
Tensor select_last(const Tensor& x, std::size_t index);
Tensor flip_last(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
// [B, C, L] -> [B, L, C] style swap of the last two axes of a rank-3 tensor.
Tensor transpose_last2(const Tensor& x);

// Normalizes over axis 1 of [B, C, ...] independently for every other index.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
};

// Channel axis 1 of [B, C] or [B, C, L]; statistics over all other axes.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, bool training, double eps = 1e-5);

// Inverted dropout. Identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

}  // namespace s4ecg::ad
