#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "drpose/tensor.hpp"

namespace drpose {

// Primitive operations recorded in a ComputationGraph. Everything the model needs
// is composed from this set.
enum class Op {
    Input,
    Parameter,
    Constant,
    Add,
    Sub,
    Mul,
    MatMul,
    Transpose,
    Reshape,
    Concat,
    Slice,
    Sum,
    Mean,
    Relu,
    Gelu,
    Sigmoid,
    Tanh,
    Softmax,
    LayerNorm,
    Broadcast,
    Sqrt,
};

std::string_view op_name(Op op);

// Handle to a node inside a specific graph.
struct Var {
    std::size_t id = 0;
};

struct Node {
    Op op = Op::Input;
    std::vector<std::size_t> inputs;
    Shape shape;
    std::string name;                   // Input / Parameter binding name
    std::vector<std::size_t> perm;      // Transpose
    std::size_t axis = 0;               // Concat / Slice / Sum / Mean
    std::size_t begin = 0, end = 0;     // Slice
    bool reduce_all = false;            // Sum / Mean
    double eps = 0.0;                   // LayerNorm
    std::size_t constant = 0;           // index into Graph::constants()
};

// Symbolic expression record. Nodes are appended in topological order; every
// builder call infers the output shape and throws ShapeError naming the node on
// a mismatch.
class Graph {
public:
    Var input(std::string name, Shape shape);
    Var parameter(std::string name, Shape shape);
    Var constant(Tensor value);
    Var scalar(double v) { return constant(Tensor::scalar(v)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    // (n,k)x(k,m), (...,n,k)x(k,m), (n,k)x(...,k,m) or matching batched operands.
    Var matmul(Var a, Var b);
    Var transpose(Var a, std::vector<std::size_t> perm);
    Var transpose(Var a);  // swap the last two axes
    Var reshape(Var a, Shape shape);
    Var concat(const std::vector<Var>& parts, std::size_t axis);
    Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
    Var sum(Var a, std::size_t axis);
    Var sum(Var a);
    Var mean(Var a, std::size_t axis);
    Var mean(Var a);
    Var relu(Var a);
    Var gelu(Var a);
    Var sigmoid(Var a);
    Var tanh(Var a);
    Var softmax(Var a);  // over the last axis
    Var layer_norm(Var a, double eps = 1e-5);  // over the last axis, no affine
    Var broadcast(Var a, Shape shape);
    Var sqrt(Var a);

    // Elementwise helpers that insert Broadcast nodes when shapes differ.
    Var badd(Var a, Var b);
    Var bsub(Var a, Var b);
    Var bmul(Var a, Var b);

    void mark_output(std::string name, Var v);

    const Node& node(Var v) const { return nodes_.at(v.id); }
    const Shape& shape(Var v) const { return nodes_.at(v.id).shape; }
    const std::vector<Node>& nodes() const noexcept { return nodes_; }
    const std::vector<Tensor>& constants() const noexcept { return constants_; }
    const std::map<std::string, Var>& outputs() const noexcept { return outputs_; }
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    Var push(Node n);
    void check(Var v) const;
    [[noreturn]] void fail(Op op, const std::string& detail) const;
    Var broadcast_to_common(Var v, const Shape& target);

    std::vector<Node> nodes_;
    std::vector<Tensor> constants_;
    std::map<std::string, Var> outputs_;
};

// Name -> tensor map for the free inputs and parameters of a graph.
class Bindings {
public:
    void set(std::string name, Tensor value) { owned_[std::move(name)] = std::move(value); }
    void set_ref(const std::string& name, const Tensor& value) { refs_[name] = &value; }
    const Tensor* find(const std::string& name) const;

private:
    std::map<std::string, Tensor> owned_;
    std::map<std::string, const Tensor*> refs_;
};

// Value of every node after a forward pass.
class Evaluation {
public:
    Evaluation(const Graph& graph, std::vector<Tensor> values) : graph_(&graph), values_(std::move(values)) {}

    const Tensor& operator[](Var v) const { return values_.at(v.id); }
    const Tensor& output(const std::string& name) const;
    std::map<std::string, Tensor> outputs() const;
    const std::vector<Tensor>& values() const noexcept { return values_; }
    const Graph& graph() const noexcept { return *graph_; }

private:
    const Graph* graph_;
    std::vector<Tensor> values_;
};

Evaluation evaluate(const Graph& graph, const Bindings& bindings);

// d(output)/d(leaf) for every Parameter and Input node, keyed by binding name.
using Gradients = std::map<std::string, Tensor>;
Gradients backward(const Evaluation& eval, Var output);

// Row-major accumulate C(m,n) += A(m,k) * B(k,n). Each C entry sums over k in
// order, so results do not depend on m.
void gemm_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n);

}  // namespace drpose
