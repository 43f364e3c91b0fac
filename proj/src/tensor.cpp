#include "s4ecg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include <Eigen/Dense>

namespace s4ecg::ad {

namespace {

thread_local bool g_grad_enabled = true;

constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCubic = 0.044715;

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw DimensionError("cannot broadcast shapes " + to_string(a) + " and " + to_string(b));
        }
        out[i] = std::max(da, db);
    }
    return out;
}

// Flat index into `in` for every flat index of `out`.
std::vector<std::size_t> broadcast_index(const Shape& out, const Shape& in) {
    const std::size_t total = numel(out);
    std::vector<std::size_t> index(total);
    if (in == out) {
        std::iota(index.begin(), index.end(), std::size_t{0});
        return index;
    }
    if (numel(in) == 1) return index;  // all zeros
    const std::size_t rank = out.size();
    const std::size_t offset = rank - in.size();
    std::vector<std::size_t> in_stride(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = rank; i-- > offset;) {
        const std::size_t d = in[i - offset];
        in_stride[i] = d == 1 ? 0 : stride;
        stride *= d;
    }
    std::vector<std::size_t> counter(rank, 0);
    std::size_t cursor = 0;
    for (std::size_t flat = 0; flat < total; ++flat) {
        index[flat] = cursor;
        for (std::size_t axis = rank; axis-- > 0;) {
            ++counter[axis];
            cursor += in_stride[axis];
            if (counter[axis] < out[axis]) break;
            cursor -= in_stride[axis] * counter[axis];
            counter[axis] = 0;
        }
    }
    return index;
}

double gelu_value(double x) {
    const double inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) {
    const double inner = kSqrt2OverPi * (x + kGeluCubic * x * x * x);
    const double th = std::tanh(inner);
    const double dinner = kSqrt2OverPi * (1.0 + 3.0 * kGeluCubic * x * x);
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner;
}

double sigmoid_value(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor binary(Elementwise op, const Tensor& a, const Tensor& b) {
    if (!b.defined()) throw std::invalid_argument("binary elementwise op requires two operands");
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = numel(out_shape);
    auto ia = std::make_shared<std::vector<std::size_t>>(broadcast_index(out_shape, a.shape()));
    auto ib = std::make_shared<std::vector<std::size_t>>(broadcast_index(out_shape, b.shape()));
    const auto va = a.values();
    const auto vb = b.values();
    std::vector<double> out(n);
    switch (op) {
    case Elementwise::add:
        for (std::size_t i = 0; i < n; ++i) out[i] = va[(*ia)[i]] + vb[(*ib)[i]];
        break;
    case Elementwise::sub:
        for (std::size_t i = 0; i < n; ++i) out[i] = va[(*ia)[i]] - vb[(*ib)[i]];
        break;
    case Elementwise::mul:
        for (std::size_t i = 0; i < n; ++i) out[i] = va[(*ia)[i]] * vb[(*ib)[i]];
        break;
    default:
        throw std::invalid_argument("not a binary elementwise op");
    }
    const char* name = op == Elementwise::add ? "add" : op == Elementwise::sub ? "sub" : "mul";
    return make_result(out_shape, std::move(out), {a, b}, name, [op, ia, ib](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const std::size_t count = self.grad.size();
        if (na.requires_grad) {
            ensure_grad(na);
            if (op == Elementwise::mul) {
                for (std::size_t i = 0; i < count; ++i) na.grad[(*ia)[i]] += self.grad[i] * nb.value[(*ib)[i]];
            } else {
                for (std::size_t i = 0; i < count; ++i) na.grad[(*ia)[i]] += self.grad[i];
            }
        }
        if (nb.requires_grad) {
            ensure_grad(nb);
            if (op == Elementwise::mul) {
                for (std::size_t i = 0; i < count; ++i) nb.grad[(*ib)[i]] += self.grad[i] * na.value[(*ia)[i]];
            } else if (op == Elementwise::sub) {
                for (std::size_t i = 0; i < count; ++i) nb.grad[(*ib)[i]] -= self.grad[i];
            } else {
                for (std::size_t i = 0; i < count; ++i) nb.grad[(*ib)[i]] += self.grad[i];
            }
        }
    });
}

template <typename Value, typename Derivative>
Tensor unary(const Tensor& a, const char* name, Value value, Derivative derivative) {
    const auto va = a.values();
    std::vector<double> out(va.size());
    for (std::size_t i = 0; i < va.size(); ++i) out[i] = value(va[i]);
    return make_result(a.shape(), std::move(out), {a}, name, [derivative](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            in.grad[i] += self.grad[i] * derivative(in.value[i], self.value[i]);
        }
    });
}

}  // namespace

void ensure_grad(Node& node) {
    if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
}

std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (numel(shape) != values.size()) {
        throw DimensionError("shape " + to_string(shape) + " does not match " + std::to_string(values.size()) +
                             " values");
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    Tensor t(std::move(node));
    t.set_requires_grad(requires_grad);
    return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item() on tensor of shape " + to_string(shape()));
    return m_node->value[0];
}

void Tensor::set_requires_grad(bool flag) {
    m_node->requires_grad = flag;
    if (flag) {
        ensure_grad(*m_node);
    } else {
        m_node->grad.clear();
    }
}

void Tensor::zero_grad() {
    if (m_node->requires_grad) std::fill(m_node->grad.begin(), m_node->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return from(shape(), m_node->value, false); }

NoGradGuard::NoGradGuard() : m_previous(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = m_previous; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs, const char* op,
                   std::function<void(Node&)> backward_rule) {
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    node->op = op;
    bool record = false;
    if (g_grad_enabled) {
        for (const auto& in : inputs) record = record || (in.defined() && in.requires_grad());
    }
    if (record) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward_rule);
    }
    return Tensor(std::move(node));
}

void backward(const Tensor& loss) {
    if (loss.size() != 1) throw DimensionError("backward() needs a scalar loss, got " + to_string(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS gives a topological order with every node once.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child && child->requires_grad && !visited.contains(child)) {
                visited.insert(child);
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(node);
        stack.pop_back();
    }
    for (Node* node : order) {
        if (node->backward) node->grad.assign(node->value.size(), 0.0);
    }
    ensure_grad(*loss.node());
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward) (*it)->backward(**it);
    }
}

Tensor elementwise(Elementwise op, const Tensor& a, const Tensor& b) {
    switch (op) {
    case Elementwise::add:
    case Elementwise::sub:
    case Elementwise::mul:
        return binary(op, a, b);
    case Elementwise::neg:
        return unary(a, "neg", [](double x) { return -x; }, [](double, double) { return -1.0; });
    case Elementwise::exp:
        return unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
    case Elementwise::log:
        return unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
    case Elementwise::gelu:
        return unary(a, "gelu", gelu_value, [](double x, double) { return gelu_derivative(x); });
    case Elementwise::sigmoid:
        return unary(a, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
    case Elementwise::relu:
        return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                     [](double x, double) { return x > 0 ? 1.0 : 0.0; });
    }
    throw std::invalid_argument("unknown elementwise op");
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(Elementwise::mul, a, b); }
Tensor neg(const Tensor& a) { return elementwise(Elementwise::neg, a); }
Tensor exp(const Tensor& a) { return elementwise(Elementwise::exp, a); }
Tensor log(const Tensor& a) { return elementwise(Elementwise::log, a); }
Tensor gelu(const Tensor& a) { return elementwise(Elementwise::gelu, a); }
Tensor sigmoid(const Tensor& a) { return elementwise(Elementwise::sigmoid, a); }
Tensor relu(const Tensor& a) { return elementwise(Elementwise::relu, a); }

Tensor scale(const Tensor& a, double factor) {
    return unary(a, "scale", [factor](double x) { return factor * x; }, [factor](double, double) { return factor; });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw DimensionError("matmul inner dimensions disagree: " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    const auto va = a.values();
    const auto vb = b.values();
    std::vector<double> out(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = va[i * k + p];
            const double* brow = &vb[p * n];
            double* orow = &out[i * n];
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    }
    return make_result({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node& self) {
        Node& na = *self.inputs[0];
        Node& nb = *self.inputs[1];
        const double* g = self.grad.data();
        if (na.requires_grad) {  // dA = dY B^T
            ensure_grad(na);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * nb.value[p * n + j];
                    na.grad[i * k + p] += acc;
                }
        }
        if (nb.requires_grad) {  // dB = A^T dY
            ensure_grad(nb);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double aip = na.value[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) nb.grad[p * n + j] += aip * g[i * n + j];
                }
        }
    });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
    if (x.rank() != 2 || weight.rank() != 2 || x.dim(1) != weight.dim(1)) {
        throw DimensionError("linear: input " + to_string(x.shape()) + " vs weight " + to_string(weight.shape()));
    }
    const std::size_t batch = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
    if (bias.defined() && bias.size() != out_dim) {
        throw DimensionError("linear: bias " + to_string(bias.shape()) + " vs weight " + to_string(weight.shape()));
    }
    const auto vx = x.values();
    const auto vw = weight.values();
    std::vector<double> out(batch * out_dim);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = bias.defined() ? bias[o] : 0.0;
            for (std::size_t i = 0; i < in; ++i) acc += vw[o * in + i] * vx[b * in + i];
            out[b * out_dim + o] = acc;
        }
    std::vector<Tensor> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result({batch, out_dim}, std::move(out), std::move(inputs), "linear",
                       [batch, in, out_dim](Node& self) {
                           Node& nx = *self.inputs[0];
                           Node& nw = *self.inputs[1];
                           const double* g = self.grad.data();
                           if (nx.requires_grad) {
                               ensure_grad(nx);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t o = 0; o < out_dim; ++o) {
                                       const double go = g[b * out_dim + o];
                                       for (std::size_t i = 0; i < in; ++i) nx.grad[b * in + i] += go * nw.value[o * in + i];
                                   }
                           }
                           if (nw.requires_grad) {
                               ensure_grad(nw);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t o = 0; o < out_dim; ++o) {
                                       const double go = g[b * out_dim + o];
                                       for (std::size_t i = 0; i < in; ++i) nw.grad[o * in + i] += go * nx.value[b * in + i];
                                   }
                           }
                           if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                               Node& nb = *self.inputs[2];
                               ensure_grad(nb);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t o = 0; o < out_dim; ++o) nb.grad[o] += g[b * out_dim + o];
                           }
                       });
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

// Per-tap [c_out, c_in] slices of weights [c_out, c_in, k].
std::vector<RowMatrix> conv_taps(std::span<const double> w, std::size_t c_out, std::size_t c_in, std::size_t k) {
    std::vector<RowMatrix> taps(k, RowMatrix(c_out, c_in));
    for (std::size_t o = 0; o < c_out; ++o)
        for (std::size_t i = 0; i < c_in; ++i)
            for (std::size_t j = 0; j < k; ++j) taps[j](o, i) = w[(o * c_in + i) * k + j];
    return taps;
}

}  // namespace

Tensor conv1d(const Tensor& signal, const Tensor& weights, const Tensor& bias, Padding padding) {
    const bool batched = signal.rank() == 3;
    if (!(signal.rank() == 2 || batched) || weights.rank() != 3) {
        throw DimensionError("conv1d: signal " + to_string(signal.shape()) + ", weights " + to_string(weights.shape()));
    }
    const std::size_t batch = batched ? signal.dim(0) : 1;
    const std::size_t c_in = signal.dim(batched ? 1 : 0);
    const std::size_t len = signal.dim(batched ? 2 : 1);
    const std::size_t c_out = weights.dim(0), k = weights.dim(2);
    if (weights.dim(1) != c_in) {
        throw DimensionError("conv1d channel mismatch: signal " + to_string(signal.shape()) + ", weights " +
                             to_string(weights.shape()));
    }
    if (k == 0) throw DimensionError("conv1d: kernel size must be >= 1");
    if (bias.defined() && bias.size() != c_out) throw DimensionError("conv1d: bias " + to_string(bias.shape()));
    const std::ptrdiff_t pad_left = padding == Padding::causal ? static_cast<std::ptrdiff_t>(k - 1)
                                                               : static_cast<std::ptrdiff_t>((k - 1) / 2);
    const auto vx = signal.values();
    const auto taps = conv_taps(weights.values(), c_out, c_in, k);
    std::vector<double> out(batch * c_out * len, 0.0);
    const auto L = static_cast<std::ptrdiff_t>(len);
    for (std::size_t b = 0; b < batch; ++b) {
        RowMap y(&out[b * c_out * len], c_out, L);
        if (bias.defined())
            for (std::size_t o = 0; o < c_out; ++o) y.row(o).setConstant(bias[o]);
        const ConstRowMap x(&vx[b * c_in * len], c_in, L);
        for (std::size_t j = 0; j < k; ++j) {
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad_left;
            const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
            const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(L, L - shift);
            if (t1 <= t0) continue;
            y.middleCols(t0, t1 - t0).noalias() += taps[j] * x.middleCols(t0 + shift, t1 - t0);
        }
    }
    Shape shape = batched ? Shape{batch, c_out, len} : Shape{c_out, len};
    std::vector<Tensor> inputs{signal, weights};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(shape), std::move(out), std::move(inputs), "conv1d",
                       [batch, c_in, c_out, len, k, pad_left, L](Node& self) {
                           Node& nx = *self.inputs[0];
                           Node& nw = *self.inputs[1];
                           if (nx.requires_grad) ensure_grad(nx);
                           const auto taps = conv_taps(nw.value, c_out, c_in, k);
                           std::vector<RowMatrix> gw(k, RowMatrix::Zero(c_out, c_in));
                           for (std::size_t b = 0; b < batch; ++b) {
                               const ConstRowMap g(&self.grad[b * c_out * len], c_out, L);
                               const ConstRowMap x(&nx.value[b * c_in * len], c_in, L);
                               for (std::size_t j = 0; j < k; ++j) {
                                   const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad_left;
                                   const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -shift);
                                   const std::ptrdiff_t t1 = std::min<std::ptrdiff_t>(L, L - shift);
                                   if (t1 <= t0) continue;
                                   if (nx.requires_grad) {
                                       RowMap gx(&nx.grad[b * c_in * len], c_in, L);
                                       gx.middleCols(t0 + shift, t1 - t0).noalias() +=
                                           taps[j].transpose() * g.middleCols(t0, t1 - t0);
                                   }
                                   if (nw.requires_grad) {
                                       gw[j].noalias() +=
                                           g.middleCols(t0, t1 - t0) * x.middleCols(t0 + shift, t1 - t0).transpose();
                                   }
                               }
                           }
                           if (nw.requires_grad) {
                               ensure_grad(nw);
                               for (std::size_t o = 0; o < c_out; ++o)
                                   for (std::size_t i = 0; i < c_in; ++i)
                                       for (std::size_t j = 0; j < k; ++j) nw.grad[(o * c_in + i) * k + j] += gw[j](o, i);
                           }
                           if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
                               Node& nb = *self.inputs[2];
                               ensure_grad(nb);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t o = 0; o < c_out; ++o) {
                                       const double* g = &self.grad[(b * c_out + o) * len];
                                       nb.grad[o] += std::accumulate(g, g + len, 0.0);
                                   }
                           }
                       });
}

Tensor causal_conv1d(const Tensor& signal, const Tensor& weights, bool causal) {
    return conv1d(signal, weights, Tensor{}, causal ? Padding::causal : Padding::same);
}

Tensor mean_pool(const Tensor& x) {
    if (x.rank() < 2) throw DimensionError("mean_pool expects [C, L] or [B, C, L], got " + to_string(x.shape()));
    const std::size_t len = x.shape().back();
    if (len == 0) throw DimensionError("mean_pool over an empty temporal axis");
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    const std::size_t rows = numel(shape);
    const auto vx = x.values();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        out[r] = std::accumulate(vx.begin() + r * len, vx.begin() + (r + 1) * len, 0.0) / static_cast<double>(len);
    }
    return make_result(std::move(shape), std::move(out), {x}, "mean_pool", [rows, len](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        const double inv = 1.0 / static_cast<double>(len);
        for (std::size_t r = 0; r < rows; ++r) {
            const double g = self.grad[r] * inv;
            for (std::size_t t = 0; t < len; ++t) in.grad[r * len + t] += g;
        }
    });
}

Tensor sum(const Tensor& x) {
    const auto vx = x.values();
    const double total = std::accumulate(vx.begin(), vx.end(), 0.0);
    return make_result({}, {total}, {x}, "sum", [](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        for (double& g : in.grad) g += self.grad[0];
    });
}

Tensor mean(const Tensor& x) {
    if (x.size() == 0) throw DimensionError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor logsumexp(const Tensor& x) {
    if (x.rank() == 0 || x.shape().back() == 0) throw DimensionError("logsumexp over an empty axis");
    const std::size_t n = x.shape().back();
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    const std::size_t rows = numel(shape);
    const auto vx = x.values();
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = &vx[r * n];
        const double peak = *std::max_element(row, row + n);
        if (!std::isfinite(peak)) {
            out[r] = peak;
            continue;
        }
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += std::exp(row[j] - peak);
        out[r] = peak + std::log(acc);
    }
    return make_result(std::move(shape), std::move(out), {x}, "logsumexp", [rows, n](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j)
                in.grad[r * n + j] += self.grad[r] * std::exp(in.value[r * n + j] - self.value[r]);
    });
}

Tensor select_last(const Tensor& x, std::size_t index) {
    if (x.rank() == 0 || index >= x.shape().back()) {
        throw DimensionError("select_last index " + std::to_string(index) + " out of range for " + to_string(x.shape()));
    }
    const std::size_t n = x.shape().back();
    Shape shape(x.shape().begin(), x.shape().end() - 1);
    const std::size_t rows = numel(shape);
    std::vector<double> out(rows);
    for (std::size_t r = 0; r < rows; ++r) out[r] = x[r * n + index];
    return make_result(std::move(shape), std::move(out), {x}, "select_last", [rows, n, index](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        for (std::size_t r = 0; r < rows; ++r) in.grad[r * n + index] += self.grad[r];
    });
}

Tensor flip_last(const Tensor& x) {
    if (x.rank() == 0) return x;
    const std::size_t n = x.shape().back();
    const std::size_t rows = n == 0 ? 0 : x.size() / n;
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < n; ++t) out[r * n + t] = x[r * n + (n - 1 - t)];
    return make_result(x.shape(), std::move(out), {x}, "flip_last", [rows, n](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t t = 0; t < n; ++t) in.grad[r * n + (n - 1 - t)] += self.grad[r * n + t];
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (numel(shape) != x.size()) {
        throw DimensionError("reshape " + to_string(x.shape()) + " -> " + to_string(shape));
    }
    return make_result(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()), {x}, "reshape",
                       [](Node& self) {
                           Node& in = *self.inputs[0];
                           ensure_grad(in);
                           for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i];
                       });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat of zero tensors");
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat axis out of range for " + to_string(first));
    Shape shape = first;
    shape[axis] = 0;
    for (const auto& p : parts) {
        Shape probe = p.shape();
        if (probe.size() != first.size()) throw DimensionError("concat rank mismatch");
        for (std::size_t d = 0; d < probe.size(); ++d) {
            if (d != axis && probe[d] != first[d]) {
                throw DimensionError("concat shape mismatch: " + to_string(first) + " vs " + to_string(probe));
            }
        }
        shape[axis] += probe[axis];
    }
    const std::size_t outer = numel(Shape(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(axis)));
    const std::size_t inner = numel(Shape(first.begin() + static_cast<std::ptrdiff_t>(axis) + 1, first.end()));
    const std::size_t out_block = shape[axis] * inner;
    std::vector<double> out(numel(shape));
    std::vector<std::size_t> offsets;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        offsets.push_back(offset);
        const std::size_t block = p.shape()[axis] * inner;
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(p.values().begin() + o * block, block, out.begin() + o * out_block + offset);
        offset += block;
    }
    return make_result(std::move(shape), std::move(out), parts, "concat",
                       [outer, out_block, offsets](Node& self) {
                           for (std::size_t idx = 0; idx < self.inputs.size(); ++idx) {
                               Node& in = *self.inputs[idx];
                               if (!in.requires_grad) continue;
                               ensure_grad(in);
                               const std::size_t block = in.value.size() / outer;
                               for (std::size_t o = 0; o < outer; ++o)
                                   for (std::size_t j = 0; j < block; ++j)
                                       in.grad[o * block + j] += self.grad[o * out_block + offsets[idx] + j];
                           }
                       });
}

Tensor transpose_last2(const Tensor& x) {
    if (x.rank() != 3) throw DimensionError("transpose_last2 expects rank 3, got " + to_string(x.shape()));
    const std::size_t b_dim = x.dim(0), rows = x.dim(1), cols = x.dim(2);
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < b_dim; ++b)
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) out[(b * cols + c) * rows + r] = x[(b * rows + r) * cols + c];
    return make_result({b_dim, cols, rows}, std::move(out), {x}, "transpose_last2", [b_dim, rows, cols](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        for (std::size_t b = 0; b < b_dim; ++b)
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < cols; ++c)
                    in.grad[(b * rows + r) * cols + c] += self.grad[(b * cols + c) * rows + r];
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    if (x.rank() < 2) throw DimensionError("layer_norm expects [B, C, ...], got " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const std::size_t inner = x.size() / (batch * channels);
    if (gamma.size() != channels || beta.size() != channels) {
        throw DimensionError("layer_norm affine parameters do not match " + std::to_string(channels) + " channels");
    }
    const auto vx = x.values();
    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto inv_std = std::make_shared<std::vector<double>>(batch * inner);
    std::vector<double> mu(inner), var(inner);
    const double inv_c = 1.0 / static_cast<double>(channels);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t base = b * channels * inner;
        std::fill(mu.begin(), mu.end(), 0.0);
        std::fill(var.begin(), var.end(), 0.0);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t t = 0; t < inner; ++t) mu[t] += vx[base + c * inner + t];
        for (double& m : mu) m *= inv_c;
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t t = 0; t < inner; ++t) {
                const double d = vx[base + c * inner + t] - mu[t];
                var[t] += d * d;
            }
        for (std::size_t t = 0; t < inner; ++t) (*inv_std)[b * inner + t] = 1.0 / std::sqrt(var[t] * inv_c + eps);
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t t = 0; t < inner; ++t) {
                const std::size_t i = base + c * inner + t;
                const double h = (vx[i] - mu[t]) * (*inv_std)[b * inner + t];
                (*xhat)[i] = h;
                out[i] = gamma[c] * h + beta[c];
            }
    }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                       [batch, channels, inner, xhat, inv_std](Node& self) {
                           Node& nx = *self.inputs[0];
                           Node& ng = *self.inputs[1];
                           Node& nb = *self.inputs[2];
                           if (ng.requires_grad) ensure_grad(ng);
                           if (nb.requires_grad) ensure_grad(nb);
                           if (nx.requires_grad) ensure_grad(nx);
                           const double inv_c = 1.0 / static_cast<double>(channels);
                           std::vector<double> mean_g(inner), mean_gx(inner);
                           for (std::size_t b = 0; b < batch; ++b) {
                               const std::size_t base = b * channels * inner;
                               std::fill(mean_g.begin(), mean_g.end(), 0.0);
                               std::fill(mean_gx.begin(), mean_gx.end(), 0.0);
                               for (std::size_t c = 0; c < channels; ++c) {
                                   double acc_g = 0.0, acc_b = 0.0;
                                   for (std::size_t t = 0; t < inner; ++t) {
                                       const std::size_t i = base + c * inner + t;
                                       const double g = self.grad[i];
                                       acc_g += g * (*xhat)[i];
                                       acc_b += g;
                                       const double gg = g * ng.value[c];
                                       mean_g[t] += gg;
                                       mean_gx[t] += gg * (*xhat)[i];
                                   }
                                   if (ng.requires_grad) ng.grad[c] += acc_g;
                                   if (nb.requires_grad) nb.grad[c] += acc_b;
                               }
                               if (!nx.requires_grad) continue;
                               for (std::size_t t = 0; t < inner; ++t) {
                                   mean_g[t] *= inv_c;
                                   mean_gx[t] *= inv_c;
                               }
                               for (std::size_t c = 0; c < channels; ++c)
                                   for (std::size_t t = 0; t < inner; ++t) {
                                       const std::size_t i = base + c * inner + t;
                                       const double gg = self.grad[i] * ng.value[c];
                                       nx.grad[i] += (*inv_std)[b * inner + t] *
                                                     (gg - mean_g[t] - (*xhat)[i] * mean_gx[t]);
                                   }
                           }
                       });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state, bool training,
                  double eps) {
    if (x.rank() < 2) throw DimensionError("batch_norm expects [B, C, ...], got " + to_string(x.shape()));
    const std::size_t batch = x.dim(0), channels = x.dim(1);
    const std::size_t inner = x.size() / (batch * channels);
    if (gamma.size() != channels || beta.size() != channels) {
        throw DimensionError("batch_norm affine parameters do not match " + std::to_string(channels) + " channels");
    }
    if (state.running_mean.empty()) {
        state.running_mean.assign(channels, 0.0);
        state.running_var.assign(channels, 1.0);
    }
    const auto vx = x.values();
    const std::size_t count = batch * inner;
    std::vector<double> mu(channels), var(channels);
    if (training) {
        if (count < 2) throw DimensionError("batch_norm in training mode needs more than one value per channel");
        for (std::size_t c = 0; c < channels; ++c) {
            double acc = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t t = 0; t < inner; ++t) acc += vx[(b * channels + c) * inner + t];
            mu[c] = acc / static_cast<double>(count);
            double sq = 0.0;
            for (std::size_t b = 0; b < batch; ++b)
                for (std::size_t t = 0; t < inner; ++t) {
                    const double d = vx[(b * channels + c) * inner + t] - mu[c];
                    sq += d * d;
                }
            var[c] = sq / static_cast<double>(count);
            const double unbiased = sq / static_cast<double>(count - 1);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * mu[c];
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        }
    } else {
        mu = state.running_mean;
        var = state.running_var;
    }
    auto inv_std = std::make_shared<std::vector<double>>(channels);
    for (std::size_t c = 0; c < channels; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t t = 0; t < inner; ++t) {
                const std::size_t i = (b * channels + c) * inner + t;
                (*xhat)[i] = (vx[i] - mu[c]) * (*inv_std)[c];
                out[i] = gamma[c] * (*xhat)[i] + beta[c];
            }
    return make_result(x.shape(), std::move(out), {x, gamma, beta}, "batch_norm",
                       [batch, channels, inner, count, training, xhat, inv_std](Node& self) {
                           Node& nx = *self.inputs[0];
                           Node& ng = *self.inputs[1];
                           Node& nb = *self.inputs[2];
                           if (ng.requires_grad) ensure_grad(ng);
                           if (nb.requires_grad) ensure_grad(nb);
                           if (nx.requires_grad) ensure_grad(nx);
                           for (std::size_t c = 0; c < channels; ++c) {
                               double sum_g = 0.0, sum_gx = 0.0;
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t t = 0; t < inner; ++t) {
                                       const std::size_t i = (b * channels + c) * inner + t;
                                       sum_g += self.grad[i];
                                       sum_gx += self.grad[i] * (*xhat)[i];
                                   }
                               if (ng.requires_grad) ng.grad[c] += sum_gx;
                               if (nb.requires_grad) nb.grad[c] += sum_g;
                               if (!nx.requires_grad) continue;
                               const double scale_c = ng.value[c] * (*inv_std)[c];
                               const double inv_n = 1.0 / static_cast<double>(count);
                               for (std::size_t b = 0; b < batch; ++b)
                                   for (std::size_t t = 0; t < inner; ++t) {
                                       const std::size_t i = (b * channels + c) * inner + t;
                                       if (training) {
                                           nx.grad[i] += scale_c * (self.grad[i] - sum_g * inv_n -
                                                                    (*xhat)[i] * sum_gx * inv_n);
                                       } else {
                                           nx.grad[i] += scale_c * self.grad[i];
                                       }
                                   }
                           }
                       });
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng) {
    if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("dropout probability must lie in [0, 1)");
    if (!training || p == 0.0) return x;
    std::bernoulli_distribution keep(1.0 - p);
    const double factor = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(x.size());
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        (*mask)[i] = keep(rng) ? factor : 0.0;
        out[i] = x[i] * (*mask)[i];
    }
    return make_result(x.shape(), std::move(out), {x}, "dropout", [mask](Node& self) {
        Node& in = *self.inputs[0];
        ensure_grad(in);
        for (std::size_t i = 0; i < self.grad.size(); ++i) in.grad[i] += self.grad[i] * (*mask)[i];
    });
}

}  // namespace s4ecg::ad
