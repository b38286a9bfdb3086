#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "eventness/rng.hpp"
#include "eventness/tensor.hpp"

namespace eventness::ad {

// A trainable tensor. The gradient is accumulated across backward() calls and
// must be cleared explicitly between optimizer steps.
struct Parameter {
    std::string identifier;
    Tensor tensor;
    Tensor gradient;

    Parameter(std::string id, Tensor t)
        : identifier(std::move(id)), tensor(t.shape()), gradient(t.shape()) {
        tensor = std::move(t);
    }

    void zero_grad() { gradient.fill(0.0); }
};

class Tape;

// Handle into a Tape. Only valid for the tape that produced it.
struct Var {
    std::size_t idx = static_cast<std::size_t>(-1);
};

// Backward closure: reads grad(self), accumulates into parents' grads.
using BackwardFn = std::function<void(Tape&, std::size_t self)>;

// Reverse-mode tape. Nodes are appended in evaluation order, which is a valid
// topological order, so backward() is a single reverse sweep. A tape is
// confined to one thread; build a fresh tape per training step.
class Tape {
public:
    Var leaf(Tensor value);
    Var param(Parameter& p);

    // Extension point for ops defined outside this module (e.g. RoI pooling).
    // The closure must only touch nodes with indices <= self.
    Var push(Tensor value, BackwardFn backward);

    const Tensor& value(Var v) const { return nodes_[v.idx].value; }
    Tensor& grad(Var v) { return nodes_[v.idx].grad; }
    const Tensor& value_at(std::size_t i) const { return nodes_[i].value; }
    Tensor& grad_at(std::size_t i) { return nodes_[i].grad; }
    std::size_t size() const { return nodes_.size(); }

    // input [C_in,H,W], kernels [C_out,C_in,kh,kw]; cross-correlation.
    Var conv2d(Var input, Var kernels, std::size_t stride, std::size_t padding);
    // input [C,H,W], bias [C]; adds bias[c] to every pixel of channel c.
    Var bias_add(Var input, Var bias);
    Var maxpool2d(Var input, std::size_t window, std::size_t stride);
    Var relu(Var input);
    // input [N], weights [M,N], bias [M] -> [M]
    Var linear(Var input, Var weights, Var bias);
    Var softmax(Var input);
    Var cross_entropy(Var logits, std::size_t target);
    Var smooth_l1(Var pred, const Tensor& target);
    // [m*k,H,W] -> [H*W*k, m]; row (i*W+j)*k + a holds channels a*m..a*m+m-1
    // at cell (i,j). Used to view RPN head maps as per-anchor rows.
    Var anchor_rows(Var input, std::size_t k, std::size_t m);
    Var row(Var input, std::size_t i);
    Var add(Var a, Var b);
    Var scale(Var a, double c);
    Var sum(Var a);
    Var average(const std::vector<Var>& scalars);
    Var reshape(Var a, std::vector<std::size_t> shape);

    // Zeroes node gradients, seeds d(loss)/d(loss) = 1, sweeps in reverse,
    // then adds each bound parameter's node gradient into Parameter::gradient.
    // Calling twice without zero_grad doubles parameter gradients exactly.
    void backward(Var loss);

private:
    struct Node {
        Tensor value;
        Tensor grad;
        BackwardFn back;
        Parameter* bound = nullptr;
    };
    std::vector<Node> nodes_;
};

// v <- momentum*v - lr*g; p <- p + v. Velocity state is keyed by parameter
// identity, so the same optimizer instance must be used across steps.
class SgdOptimizer {
public:
    SgdOptimizer(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

    void step(const std::vector<Parameter*>& params);
    static void zero_grad(const std::vector<Parameter*>& params);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    double lr_;
    double momentum_;
    std::unordered_map<const Parameter*, Tensor> velocity_;
};

// He-uniform: values drawn from U(-b, b) with b = sqrt(6/fan_in).
void init_he_uniform(Tensor& t, std::size_t fan_in, Rng& rng);

}  // namespace eventness::ad
