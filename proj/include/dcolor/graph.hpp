#pragma once

#include "dcolor/rng.hpp"
#include "dcolor/tensor.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dcolor {

// Trainable tensor with its accumulated gradient.
struct Parameter {
    Tensor value;
    Tensor grad;
};

// Named parameters of a network. Names are unique; shapes are fixed once
// added. Iteration order is lexicographic by name.
class ParameterSet {
public:
    Parameter& add(const std::string& name, Tensor init);
    Parameter& get(const std::string& name);
    const Parameter& get(const std::string& name) const;
    bool contains(const std::string& name) const { return params_.count(name) != 0; }
    std::vector<std::string> names() const;
    std::size_t size() const noexcept { return params_.size(); }
    // Total number of scalar parameters.
    std::size_t count() const;
    void zeroGrad();

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::map<std::string, Parameter> params_;
};

// Running statistics owned by a batch-norm layer.
struct BatchNormStats {
    Tensor mean;
    Tensor var;
};

struct Var {
    static constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    std::size_t id = kNone;
    bool valid() const noexcept { return id != kNone; }
};

enum class Op {
    Input,
    Constant,
    Leaf,
    Param,
    MatMul,
    MatMulTN,
    Gram,
    Add,
    Sub,
    Mul,
    Div,
    AddRow,
    MulRow,
    Scale,
    AddScalar,
    Relu,
    Square,
    Sqrt,
    Exp,
    Log,
    Sum,
    Mean,
    BatchNormTrain,
    BatchNormInfer,
    SoftmaxCrossEntropy,
    Reparameterize,
    NormalizeColumns,
    ConcatRows,
    SliceRows,
};

const char* opName(Op op);

// Define-by-run reverse-mode graph. Each op evaluates eagerly and appends a
// node; node order is a topological order by construction. Rebuild one
// graph per training step.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Named input; never receives a gradient.
    Var input(const std::string& name, Tensor value);
    Var constant(Tensor value);
    // Free leaf; when requiresGrad, its gradient is readable via grad().
    Var leaf(Tensor value, bool requiresGrad = true);
    // Parameter leaf; backward() accumulates into p.grad.
    Var param(Parameter& p);

    Var matmul(Var a, Var b);
    // aᵀ·b
    Var matmulTN(Var a, Var b);
    // aᵀ·a, evaluated on the upper triangle and mirrored.
    Var gram(Var a);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    // Broadcast a row vector (shape [c] or [1, c]) over every row of a.
    Var addRow(Var a, Var row);
    Var mulRow(Var a, Var row);
    Var scale(Var a, double s);
    Var addScalar(Var a, double s);
    Var relu(Var a);
    Var square(Var a);
    Var sqrt(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var sum(Var a);
    Var mean(Var a);
    // Training mode normalizes with batch statistics and updates `running`
    // when non-null; inference mode uses `running` and is affine in x.
    Var batchNorm(Var x, Var gamma, Var beta, BatchNormStats* running, bool training,
                  double eps = 1e-5, double momentum = 0.1);
    // Mean cross-entropy of row-wise softmax(logits) against labels.
    Var softmaxCrossEntropy(Var logits, std::span<const int> labels);
    // mean + exp(logVar / 2) * eps with eps ~ N(0, I) drawn from rng.
    // A null rng selects deterministic mode (eps = 0).
    Var reparameterize(Var mean, Var logVar, Rng* rng);
    // Zero-mean, unit-Euclidean-norm columns. Throws CollapseError if a column
    // is constant over the rows.
    Var normalizeColumns(Var z);
    Var concatRows(Var a, Var b);
    Var sliceRows(Var a, std::size_t begin, std::size_t end);

    const Tensor& value(Var v) const;
    // Gradient of the last backward() loss with respect to v.
    const Tensor& grad(Var v) const;
    bool requiresGrad(Var v) const;

    void output(const std::string& name, Var v);
    Var named(const std::string& name) const;
    std::map<std::string, Tensor> outputs() const;

    // Reverse sweep from a scalar loss. Visits every node once.
    void backward(Var loss);

    std::size_t nodeCount() const noexcept { return nodes_.size(); }

    // Multiply-accumulate accounting. Work done by ops created while a
    // StageScope is active (forward and their later backward) is charged to
    // that stage.
    class StageScope {
    public:
        StageScope(Graph& g, const std::string& stage);
        ~StageScope();
        StageScope(const StageScope&) = delete;
        StageScope& operator=(const StageScope&) = delete;

    private:
        Graph& graph_;
        int previous_;
    };
    std::uint64_t macs(const std::string& stage) const;

private:
    struct Node {
        Op op;
        std::vector<std::size_t> inputs;
        Tensor value;
        Tensor grad;
        bool requiresGrad = false;
        Parameter* param = nullptr;
        std::function<void(Graph&, std::size_t)> backward;
        int stage = -1;
        std::uint64_t backwardMacs = 0;
    };

    Var push(Op op, std::vector<std::size_t> inputs, Tensor value,
             std::function<void(Graph&, std::size_t)> backward, std::uint64_t forwardMacs,
             std::uint64_t backwardMacs);
    const Node& node(Var v) const;
    Tensor& gradOf(std::size_t id);
    bool needs(std::size_t id) const { return nodes_[id].requiresGrad; }
    std::string describe(Op op) const;
    [[noreturn]] void shapeError(Op op, const Tensor& a, const Tensor& b) const;
    Var elementwise(Op op, Var a, Var b);
    Var unary(Op op, Var a);

    std::vector<Node> nodes_;
    std::map<std::string, std::size_t> names_;
    std::vector<std::string> stageNames_;
    std::vector<std::uint64_t> stageMacs_;
    int activeStage_ = -1;
};

} // namespace dcolor
