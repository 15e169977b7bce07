#pragma once

#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "loralab/error.hpp"
#include "loralab/matrix.hpp"

namespace loralab {

// A trainable (or frozen) tensor that outlives any single computation graph.
struct Parameter {
    Matrix value;
    bool trainable = true;
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

// One vertex of a define-by-run computation graph. The graph is rebuilt for
// every forward pass; gradients accumulate in fixed topological order so
// repeated runs are bit-identical.
struct Node {
    Matrix value;
    Matrix grad;  // same shape as value, zero until backward()
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    // Reads this->grad and accumulates adjoints into parents' grads.
    std::function<void(Node&)> backprop;
};

inline NodePtr make_leaf(Matrix value, bool requires_grad, const char* op = "leaf") {
    auto n = std::make_shared<Node>();
    n->grad = Matrix(value.rows(), value.cols());
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->op = op;
    return n;
}

// Tracks which Parameter produced which leaf so one iteration's graph can
// share a single leaf per parameter across all dropout instances, and so the
// optimizer can read accumulated gradients back out.
class Graph {
public:
    NodePtr param(Parameter& p) {
        for (auto& [ptr, node] : bindings_)
            if (ptr == &p) return node;
        NodePtr n = make_leaf(p.value, p.trainable, "param");
        bindings_.emplace_back(&p, n);
        return n;
    }

    NodePtr constant(Matrix value) const { return make_leaf(std::move(value), false, "const"); }

    const std::vector<std::pair<Parameter*, NodePtr>>& bindings() const { return bindings_; }

    NodePtr find(const Parameter& p) const {
        for (const auto& [ptr, node] : bindings_)
            if (ptr == &p) return node;
        return nullptr;
    }

private:
    std::vector<std::pair<Parameter*, NodePtr>> bindings_;
};

namespace detail {
inline NodePtr make_op(Matrix value, const char* op, std::vector<NodePtr> parents,
                       std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->grad = Matrix(value.rows(), value.cols());
    n->value = std::move(value);
    n->op = op;
    n->parents = std::move(parents);
    for (const auto& p : n->parents) n->requires_grad = n->requires_grad || p->requires_grad;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

inline void accumulate(Node& parent, const Matrix& adjoint) {
    if (!parent.requires_grad) return;  // frozen leaves keep a zero gradient
    for (std::size_t i = 0; i < adjoint.size(); ++i) parent.grad.flat()[i] += adjoint.flat()[i];
}
}  // namespace detail

// ---- primitives ----

inline NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    Matrix value = matmul(a->value, b->value);
    return detail::make_op(std::move(value), "matmul", {a, b}, [](Node& self) {
        Node& a = *self.parents[0];
        Node& b = *self.parents[1];
        detail::accumulate(a, matmul(self.grad, transpose(b.value)));
        detail::accumulate(b, matmul(transpose(a.value), self.grad));
    });
}

inline NodePtr transpose(const NodePtr& a) {
    return detail::make_op(transpose(a->value), "transpose", {a}, [](Node& self) {
        detail::accumulate(*self.parents[0], transpose(self.grad));
    });
}

inline NodePtr add(const NodePtr& a, const NodePtr& b) {
    return detail::make_op(add(a->value, b->value), "add", {a, b}, [](Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate(*self.parents[1], self.grad);
    });
}

inline NodePtr sub(const NodePtr& a, const NodePtr& b) {
    return detail::make_op(sub(a->value, b->value), "sub", {a, b}, [](Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        detail::accumulate(*self.parents[1], scale(self.grad, -1.0));
    });
}

inline NodePtr hadamard(const NodePtr& a, const NodePtr& b) {
    return detail::make_op(hadamard(a->value, b->value), "hadamard", {a, b}, [](Node& self) {
        detail::accumulate(*self.parents[0], hadamard(self.grad, self.parents[1]->value));
        detail::accumulate(*self.parents[1], hadamard(self.grad, self.parents[0]->value));
    });
}

inline NodePtr relu(const NodePtr& a) {
    Matrix value = a->value;
    for (double& v : value.flat()) v = v > 0.0 ? v : 0.0;
    return detail::make_op(std::move(value), "relu", {a}, [](Node& self) {
        Matrix adj = self.grad;
        const Matrix& x = self.parents[0]->value;
        for (std::size_t i = 0; i < adj.size(); ++i)
            if (x.flat()[i] <= 0.0) adj.flat()[i] = 0.0;
        detail::accumulate(*self.parents[0], adj);
    });
}

inline NodePtr scale(const NodePtr& a, double c) {
    return detail::make_op(scale(a->value, c), "scale", {a}, [c](Node& self) {
        detail::accumulate(*self.parents[0], scale(self.grad, c));
    });
}

// out[i,j] = a[i,j] + bias[0,j]; the only broadcasting in the library.
inline NodePtr add_row_broadcast(const NodePtr& a, const NodePtr& bias) {
    if (bias->value.rows() != 1 || bias->value.cols() != a->value.cols())
        throw dim_error("add_row_broadcast: bias must be 1x" +
                        std::to_string(a->value.cols()) + ", got " + bias->value.shape_str());
    Matrix value = a->value;
    for (std::size_t i = 0; i < value.rows(); ++i)
        for (std::size_t j = 0; j < value.cols(); ++j) value(i, j) += bias->value(0, j);
    return detail::make_op(std::move(value), "add_row_broadcast", {a, bias}, [](Node& self) {
        detail::accumulate(*self.parents[0], self.grad);
        Node& bias = *self.parents[1];
        if (bias.requires_grad) {
            Matrix gb(1, self.grad.cols());
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j) gb(0, j) += self.grad(i, j);
            detail::accumulate(bias, gb);
        }
    });
}

// out[i,j] = a[i,j] * v[0,j]; differentiable in both operands.
inline NodePtr col_scale(const NodePtr& a, const NodePtr& v) {
    if (v->value.rows() != 1 || v->value.cols() != a->value.cols())
        throw dim_error("col_scale: scaler must be 1x" + std::to_string(a->value.cols()) +
                        ", got " + v->value.shape_str());
    Matrix value = a->value;
    for (std::size_t i = 0; i < value.rows(); ++i)
        for (std::size_t j = 0; j < value.cols(); ++j) value(i, j) *= v->value(0, j);
    return detail::make_op(std::move(value), "col_scale", {a, v}, [](Node& self) {
        Node& a = *self.parents[0];
        Node& v = *self.parents[1];
        if (a.requires_grad) {
            Matrix ga = self.grad;
            for (std::size_t i = 0; i < ga.rows(); ++i)
                for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= v.value(0, j);
            detail::accumulate(a, ga);
        }
        if (v.requires_grad) {
            Matrix gv(1, v.value.cols());
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j)
                    gv(0, j) += self.grad(i, j) * a.value(i, j);
            detail::accumulate(v, gv);
        }
    });
}

// out[i,j] = a[i,j] * v[0,i]
inline NodePtr row_scale(const NodePtr& a, const NodePtr& v) {
    if (v->value.rows() != 1 || v->value.cols() != a->value.rows())
        throw dim_error("row_scale: scaler must be 1x" + std::to_string(a->value.rows()) +
                        ", got " + v->value.shape_str());
    Matrix value = a->value;
    for (std::size_t i = 0; i < value.rows(); ++i)
        for (std::size_t j = 0; j < value.cols(); ++j) value(i, j) *= v->value(0, i);
    return detail::make_op(std::move(value), "row_scale", {a, v}, [](Node& self) {
        Node& a = *self.parents[0];
        Node& v = *self.parents[1];
        if (a.requires_grad) {
            Matrix ga = self.grad;
            for (std::size_t i = 0; i < ga.rows(); ++i)
                for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) *= v.value(0, i);
            detail::accumulate(a, ga);
        }
        if (v.requires_grad) {
            Matrix gv(1, v.value.cols());
            for (std::size_t i = 0; i < self.grad.rows(); ++i)
                for (std::size_t j = 0; j < self.grad.cols(); ++j)
                    gv(0, i) += self.grad(i, j) * a.value(i, j);
            detail::accumulate(v, gv);
        }
    });
}

// Frobenius norm squared, as a 1x1 node.
inline NodePtr sum_squares(const NodePtr& a) {
    Matrix value(1, 1);
    value(0, 0) = frobenius_norm_sq(a->value);
    return detail::make_op(std::move(value), "sum_squares", {a}, [](Node& self) {
        detail::accumulate(*self.parents[0], scale(self.parents[0]->value, 2.0 * self.grad(0, 0)));
    });
}

// Mean over the batch of -log softmax(logits)[y], stabilized by the row max.
inline NodePtr softmax_cross_entropy(const NodePtr& logits, std::vector<int> labels) {
    const Matrix& z = logits->value;
    if (labels.size() != z.rows())
        throw dim_error("softmax_cross_entropy: " + std::to_string(labels.size()) +
                        " labels for " + z.shape_str() + " logits");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= z.cols())
            throw index_error("softmax_cross_entropy: label " + std::to_string(y) +
                              " outside [0, " + std::to_string(z.cols()) + ")");
    Matrix probs = softmax_rows(z);
    double loss = 0.0;
    for (std::size_t i = 0; i < z.rows(); ++i)
        loss -= std::log(probs(i, static_cast<std::size_t>(labels[i])));
    loss /= static_cast<double>(z.rows());
    Matrix value(1, 1);
    value(0, 0) = loss;
    return detail::make_op(
        std::move(value), "softmax_cross_entropy", {logits},
        [probs = std::move(probs), labels = std::move(labels)](Node& self) {
            Matrix adj = probs;
            const double g = self.grad(0, 0) / static_cast<double>(adj.rows());
            for (std::size_t i = 0; i < adj.rows(); ++i) {
                adj(i, static_cast<std::size_t>(labels[i])) -= 1.0;
                for (std::size_t j = 0; j < adj.cols(); ++j) adj(i, j) *= g;
            }
            detail::accumulate(*self.parents[0], adj);
        });
}

// Mean over rows of 0.5 * ||pred_row - target_row||^2 (regression loss).
inline NodePtr half_squared_error(const NodePtr& pred, Matrix targets) {
    require_same_shape(pred->value, targets, "half_squared_error");
    double loss = 0.0;
    for (std::size_t i = 0; i < pred->value.size(); ++i) {
        const double d = pred->value.flat()[i] - targets.flat()[i];
        loss += 0.5 * d * d;
    }
    loss /= static_cast<double>(pred->value.rows());
    Matrix value(1, 1);
    value(0, 0) = loss;
    return detail::make_op(std::move(value), "half_squared_error", {pred},
                           [targets = std::move(targets)](Node& self) {
                               const Matrix& p = self.parents[0]->value;
                               const double g =
                                   self.grad(0, 0) / static_cast<double>(p.rows());
                               Matrix adj = sub(p, targets);
                               for (double& v : adj.flat()) v *= g;
                               detail::accumulate(*self.parents[0], adj);
                           });
}

// Arithmetic mean of 1x1 nodes; reduction runs in element order 0..N-1.
inline NodePtr average(std::span<const NodePtr> terms) {
    if (terms.empty()) throw contract_error("average: no terms");
    NodePtr acc = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
    return scale(acc, 1.0 / static_cast<double>(terms.size()));
}

// ---- reverse pass ----

// Fills gradients of every node reachable from loss, in reverse topological
// order. loss must be 1x1.
inline void backward(const NodePtr& loss) {
    if (loss->value.rows() != 1 || loss->value.cols() != 1)
        throw contract_error("backward: loss must be a scalar node, got " +
                             loss->value.shape_str());
    // iterative post-order DFS; parents are visited in stored order so the
    // resulting topological order depends only on graph structure
    std::vector<NodePtr> order;
    std::unordered_set<const Node*> visited;
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(loss, 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodePtr child = node->parents[next++];
            if (!visited.count(child.get())) {
                visited.insert(child.get());
                stack.emplace_back(std::move(child), 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->grad(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->requires_grad && (*it)->backprop) (*it)->backprop(**it);
}

// ---- finite-difference check ----

// Builds the scalar function once for the analytic gradient, then re-evaluates
// it per coordinate for central differences. Returns the max relative error
// with denominator max(|analytic|, |numeric|, 1e-8).
inline double grad_check(const std::function<NodePtr(Graph&)>& f,
                         std::span<Parameter* const> params, double eps) {
    if (eps <= 0.0) throw contract_error("grad_check: eps must be positive");
    Graph g;
    NodePtr loss = f(g);
    backward(loss);
    std::vector<Matrix> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) {
        NodePtr leaf = g.find(*p);
        analytic.push_back(leaf ? leaf->grad : Matrix(p->value.rows(), p->value.cols()));
    }
    auto eval = [&]() {
        Graph fresh;
        return f(fresh)->value(0, 0);
    };
    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Matrix& value = params[pi]->value;
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double saved = value.flat()[i];
            value.flat()[i] = saved + eps;
            const double up = eval();
            value.flat()[i] = saved - eps;
            const double down = eval();
            value.flat()[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = analytic[pi].flat()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace loralab
