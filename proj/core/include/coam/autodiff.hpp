#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "coam/tensor.hpp"

namespace coam {

class Var;

// One node of the dynamic tape. `backward_fn` receives the node's own
// accumulated gradient and adds contributions into the parents' gradients.
struct Node {
    Tensor value;
    Tensor grad;          // same shape as value; lazily allocated
    bool requires_grad = false;
    bool is_leaf = false;  // leaves (parameters/inputs) keep their grad across tapes
    std::string op;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    Tensor& ensure_grad() {
        if (grad.shape != value.shape) grad = Tensor(value.shape);
        return grad;
    }
};

// Value-semantic handle to a tape node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor t, bool requires_grad = false) : node_(std::make_shared<Node>()) {
        node_->value = std::move(t);
        node_->requires_grad = requires_grad;
        node_->is_leaf = true;
    }
    explicit Var(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    const std::vector<int>& shape() const { return node_->value.shape; }
    std::shared_ptr<Node> node() const { return node_; }

    // Detached view of the same values: gradients stop here.
    Var detach() const { return Var(node_->value, false); }

    void zero_grad() {
        if (node_) node_->grad = Tensor(node_->value.shape);
    }

private:
    std::shared_ptr<Node> node_;
};

// Reverse sweep from `root`, seeding with `upstream` (defaults to ones).
// Gradients accumulate additively into every reachable node that requires
// them; running twice doubles leaf gradients.
void backward(const Var& root, const Tensor* upstream = nullptr);

// A named trainable value plus its accumulated gradient (lives on the leaf node).
struct Parameter {
    std::string name;
    Var var;
    bool trainable = true;

    const Tensor& value() const { return var.value(); }
    Tensor& mutable_value() { return var.mutable_value(); }
    const Tensor& gradient() const { return var.grad(); }
    void zero_grad() { var.zero_grad(); }
};

namespace detail {
std::shared_ptr<Node> make_node(Tensor value, std::string op, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> backward_fn);
}

}  // namespace coam
