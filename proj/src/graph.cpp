#include "dcolor/graph.hpp"

#include "dcolor/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dcolor {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

MatMap asMatrix(Tensor& t) {
    return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

ConstMatMap asMatrix(const Tensor& t) {
    return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

bool isRowVector(const Tensor& t, std::size_t cols) {
    return (t.rank() == 1 && t.shape()[0] == cols) ||
           (t.rank() == 2 && t.shape()[0] == 1 && t.shape()[1] == cols);
}

} // namespace

// ---------------------------------------------------------------------------
// ParameterSet

Parameter& ParameterSet::add(const std::string& name, Tensor init) {
    if (params_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    Tensor grad(init.shape());
    auto [it, _] = params_.emplace(name, Parameter{std::move(init), std::move(grad)});
    return it->second;
}

Parameter& ParameterSet::get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

const Parameter& ParameterSet::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

std::vector<std::string> ParameterSet::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& [name, _] : params_) out.push_back(name);
    return out;
}

std::size_t ParameterSet::count() const {
    std::size_t n = 0;
    for (const auto& [_, p] : params_) n += p.value.size();
    return n;
}

void ParameterSet::zeroGrad() {
    for (auto& [_, p] : params_) p.grad.fill(0.0);
}

// ---------------------------------------------------------------------------
// Graph bookkeeping

const char* opName(Op op) {
    switch (op) {
    case Op::Input: return "input";
    case Op::Constant: return "constant";
    case Op::Leaf: return "leaf";
    case Op::Param: return "param";
    case Op::MatMul: return "matmul";
    case Op::MatMulTN: return "matmul_tn";
    case Op::Gram: return "gram";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Div: return "div";
    case Op::AddRow: return "add_row";
    case Op::MulRow: return "mul_row";
    case Op::Scale: return "scale";
    case Op::AddScalar: return "add_scalar";
    case Op::Relu: return "relu";
    case Op::Square: return "square";
    case Op::Sqrt: return "sqrt";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::BatchNormTrain: return "batchnorm_train";
    case Op::BatchNormInfer: return "batchnorm_infer";
    case Op::SoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::Reparameterize: return "reparameterize";
    case Op::NormalizeColumns: return "normalize_columns";
    case Op::ConcatRows: return "concat_rows";
    case Op::SliceRows: return "slice_rows";
    }
    return "unknown";
}

std::string Graph::describe(Op op) const {
    return "node #" + std::to_string(nodes_.size()) + " (" + opName(op) + ")";
}

void Graph::shapeError(Op op, const Tensor& a, const Tensor& b) const {
    throw std::invalid_argument(describe(op) + ": shape mismatch " + shapeString(a.shape()) + " vs " +
                                shapeString(b.shape()));
}

const Graph::Node& Graph::node(Var v) const {
    if (!v.valid() || v.id >= nodes_.size()) throw std::out_of_range("invalid graph variable");
    return nodes_[v.id];
}

Tensor& Graph::gradOf(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
}

Var Graph::push(Op op, std::vector<std::size_t> inputs, Tensor value,
                std::function<void(Graph&, std::size_t)> backward, std::uint64_t forwardMacs,
                std::uint64_t backwardMacs) {
    const std::size_t bad = value.firstNonFinite();
    if (bad != value.size()) {
        std::ostringstream os;
        os << describe(op) << ": non-finite value " << value[bad] << " at element " << bad;
        throw NumericalError(os.str());
    }
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (auto id : inputs) n.requiresGrad = n.requiresGrad || nodes_[id].requiresGrad;
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
    n.stage = activeStage_;
    n.backwardMacs = backwardMacs;
    if (activeStage_ >= 0) stageMacs_[static_cast<std::size_t>(activeStage_)] += forwardMacs;
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

Var Graph::input(const std::string& name, Tensor value) {
    Var v = push(Op::Input, {}, std::move(value), nullptr, 0, 0);
    names_[name] = v.id;
    return v;
}

Var Graph::constant(Tensor value) {
    return push(Op::Constant, {}, std::move(value), nullptr, 0, 0);
}

Var Graph::leaf(Tensor value, bool requiresGrad) {
    Var v = push(Op::Leaf, {}, std::move(value), nullptr, 0, 0);
    nodes_[v.id].requiresGrad = requiresGrad;
    return v;
}

Var Graph::param(Parameter& p) {
    Var v = push(Op::Param, {}, p.value, nullptr, 0, 0);
    nodes_[v.id].requiresGrad = true;
    nodes_[v.id].param = &p;
    return v;
}

const Tensor& Graph::value(Var v) const { return node(v).value; }

const Tensor& Graph::grad(Var v) const {
    const Node& n = node(v);
    if (n.grad.empty()) {
        static const Tensor kEmpty;
        return kEmpty;
    }
    return n.grad;
}

bool Graph::requiresGrad(Var v) const { return node(v).requiresGrad; }

void Graph::output(const std::string& name, Var v) {
    node(v);
    names_[name] = v.id;
}

Var Graph::named(const std::string& name) const {
    auto it = names_.find(name);
    if (it == names_.end()) throw std::out_of_range("no graph value named '" + name + "'");
    return Var{it->second};
}

std::map<std::string, Tensor> Graph::outputs() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, id] : names_) {
        if (nodes_[id].op != Op::Input) out.emplace(name, nodes_[id].value);
    }
    return out;
}

Graph::StageScope::StageScope(Graph& g, const std::string& stage) : graph_(g), previous_(g.activeStage_) {
    auto it = std::find(g.stageNames_.begin(), g.stageNames_.end(), stage);
    if (it == g.stageNames_.end()) {
        g.stageNames_.push_back(stage);
        g.stageMacs_.push_back(0);
        g.activeStage_ = static_cast<int>(g.stageNames_.size() - 1);
    } else {
        g.activeStage_ = static_cast<int>(it - g.stageNames_.begin());
    }
}

Graph::StageScope::~StageScope() { graph_.activeStage_ = previous_; }

std::uint64_t Graph::macs(const std::string& stage) const {
    auto it = std::find(stageNames_.begin(), stageNames_.end(), stage);
    if (it == stageNames_.end()) return 0;
    return stageMacs_[static_cast<std::size_t>(it - stageNames_.begin())];
}

void Graph::backward(Var loss) {
    const Node& root = node(loss);
    if (root.value.size() != 1) {
        throw std::invalid_argument("backward() requires a scalar loss, got shape " +
                                    shapeString(root.value.shape()));
    }
    if (!root.requiresGrad) {
        throw std::invalid_argument("backward(): loss has no path to any parameter");
    }
    for (auto& n : nodes_) n.grad = Tensor();
    gradOf(loss.id)[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.requiresGrad || n.grad.empty()) continue;
        if (n.backward) {
            n.backward(*this, i);
            if (n.stage >= 0) stageMacs_[static_cast<std::size_t>(n.stage)] += n.backwardMacs;
        }
        if (n.param) {
            auto& pg = n.param->grad;
            if (pg.empty() || !pg.sameShape(n.value)) pg = Tensor(n.value.shape());
            for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
        }
    }
}

// ---------------------------------------------------------------------------
// Linear algebra

Var Graph::matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.rows()) shapeError(Op::MatMul, A, B);
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    Tensor out({n, m});
    asMatrix(out).noalias() = asMatrix(A) * asMatrix(B);
    const std::uint64_t work = n * k * m;
    return push(
        Op::MatMul, {a.id, b.id}, std::move(out),
        [](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0], ib = nd.inputs[1];
            const Tensor& G = nd.grad;
            if (g.needs(ia)) asMatrix(g.gradOf(ia)).noalias() += asMatrix(G) * asMatrix(g.nodes_[ib].value).transpose();
            if (g.needs(ib)) asMatrix(g.gradOf(ib)).noalias() += asMatrix(g.nodes_[ia].value).transpose() * asMatrix(G);
        },
        work, 2 * work);
}

Var Graph::matmulTN(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows()) shapeError(Op::MatMulTN, A, B);
    const std::size_t rows = A.rows(), p = A.cols(), q = B.cols();
    Tensor out({p, q});
    asMatrix(out).noalias() = asMatrix(A).transpose() * asMatrix(B);
    const std::uint64_t work = rows * p * q;
    return push(
        Op::MatMulTN, {a.id, b.id}, std::move(out),
        [](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0], ib = nd.inputs[1];
            const Tensor& G = nd.grad;
            // out = Aᵀ B: dA = B Gᵀ, dB = A G
            if (g.needs(ia)) asMatrix(g.gradOf(ia)).noalias() += asMatrix(g.nodes_[ib].value) * asMatrix(G).transpose();
            if (g.needs(ib)) asMatrix(g.gradOf(ib)).noalias() += asMatrix(g.nodes_[ia].value) * asMatrix(G);
        },
        work, 2 * work);
}

Var Graph::gram(Var a) {
    const Tensor& A = value(a);
    if (A.rank() != 2) shapeError(Op::Gram, A, A);
    const std::size_t rows = A.rows(), d = A.cols();
    Tensor out({d, d});
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < rows; ++r) s += A.at(r, i) * A.at(r, j);
            out.at(i, j) = s;
            out.at(j, i) = s;
        }
    }
    const std::uint64_t forward = rows * d * (d + 1) / 2;
    return push(
        Op::Gram, {a.id}, std::move(out),
        [](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0];
            // out = AᵀA: dA = A (G + Gᵀ)
            RowMatrix sym = asMatrix(nd.grad) + asMatrix(nd.grad).transpose();
            asMatrix(g.gradOf(ia)).noalias() += asMatrix(g.nodes_[ia].value) * sym;
        },
        forward, rows * d * d);
}

// ---------------------------------------------------------------------------
// Elementwise

Var Graph::elementwise(Op op, Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.sameShape(B)) shapeError(op, A, B);
    Tensor out(A.shape());
    const std::size_t n = A.size();
    switch (op) {
    case Op::Add: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] + B[i]; break;
    case Op::Sub: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] - B[i]; break;
    case Op::Mul: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] * B[i]; break;
    case Op::Div: for (std::size_t i = 0; i < n; ++i) out[i] = A[i] / B[i]; break;
    default: throw std::logic_error("not an elementwise binary op");
    }
    return push(
        op, {a.id, b.id}, std::move(out),
        [op](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0], ib = nd.inputs[1];
            const Tensor& G = nd.grad;
            const std::size_t n = G.size();
            if (g.needs(ia)) {
                Tensor& da = g.gradOf(ia);
                const Tensor& B = g.nodes_[ib].value;
                switch (op) {
                case Op::Add:
                case Op::Sub: for (std::size_t i = 0; i < n; ++i) da[i] += G[i]; break;
                case Op::Mul: for (std::size_t i = 0; i < n; ++i) da[i] += G[i] * B[i]; break;
                case Op::Div: for (std::size_t i = 0; i < n; ++i) da[i] += G[i] / B[i]; break;
                default: break;
                }
            }
            if (g.needs(ib)) {
                Tensor& db = g.gradOf(ib);
                const Tensor& A = g.nodes_[ia].value;
                const Tensor& B = g.nodes_[ib].value;
                switch (op) {
                case Op::Add: for (std::size_t i = 0; i < n; ++i) db[i] += G[i]; break;
                case Op::Sub: for (std::size_t i = 0; i < n; ++i) db[i] -= G[i]; break;
                case Op::Mul: for (std::size_t i = 0; i < n; ++i) db[i] += G[i] * A[i]; break;
                case Op::Div: for (std::size_t i = 0; i < n; ++i) db[i] -= G[i] * A[i] / (B[i] * B[i]); break;
                default: break;
                }
            }
        },
        n, 2 * n);
}

Var Graph::add(Var a, Var b) { return elementwise(Op::Add, a, b); }
Var Graph::sub(Var a, Var b) { return elementwise(Op::Sub, a, b); }
Var Graph::mul(Var a, Var b) { return elementwise(Op::Mul, a, b); }
Var Graph::div(Var a, Var b) { return elementwise(Op::Div, a, b); }

Var Graph::addRow(Var a, Var row) {
    const Tensor& A = value(a);
    const Tensor& R = value(row);
    if (A.rank() != 2 || !isRowVector(R, A.cols())) shapeError(Op::AddRow, A, R);
    Tensor out = A;
    asMatrix(out).rowwise() += Eigen::Map<const Eigen::RowVectorXd>(R.data(), static_cast<Eigen::Index>(R.size()));
    return push(
        Op::AddRow, {a.id, row.id}, std::move(out),
        [](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0], ir = nd.inputs[1];
            if (g.needs(ia)) asMatrix(g.gradOf(ia)) += asMatrix(nd.grad);
            if (g.needs(ir)) {
                Tensor& dr = g.gradOf(ir);
                Eigen::Map<Eigen::RowVectorXd>(dr.data(), static_cast<Eigen::Index>(dr.size())) +=
                    asMatrix(nd.grad).colwise().sum();
            }
        },
        A.size(), 2 * A.size());
}

Var Graph::mulRow(Var a, Var row) {
    const Tensor& A = value(a);
    const Tensor& R = value(row);
    if (A.rank() != 2 || !isRowVector(R, A.cols())) shapeError(Op::MulRow, A, R);
    Tensor out = A;
    const std::size_t rows = A.rows(), cols = A.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out.at(r, c) *= R[c];
    return push(
        Op::MulRow, {a.id, row.id}, std::move(out),
        [](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0], ir = nd.inputs[1];
            const Tensor& A = g.nodes_[ia].value;
            const Tensor& R = g.nodes_[ir].value;
            const Tensor& G = nd.grad;
            const std::size_t rows = A.rows(), cols = A.cols();
            if (g.needs(ia)) {
                Tensor& da = g.gradOf(ia);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) da.at(r, c) += G.at(r, c) * R[c];
            }
            if (g.needs(ir)) {
                Tensor& dr = g.gradOf(ir);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < cols; ++c) dr[c] += G.at(r, c) * A.at(r, c);
            }
        },
        A.size(), 2 * A.size());
}

Var Graph::scale(Var a, double s) {
    Tensor out = value(a);
    for (auto& x : out.values()) x *= s;
    const std::size_t n = out.size();
    return push(
        Op::Scale, {a.id}, std::move(out),
        [s](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            Tensor& da = g.gradOf(nd.inputs[0]);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += s * nd.grad[i];
        },
        n, n);
}

Var Graph::addScalar(Var a, double s) {
    Tensor out = value(a);
    for (auto& x : out.values()) x += s;
    const std::size_t n = out.size();
    return push(
        Op::AddScalar, {a.id}, std::move(out),
        [](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            Tensor& da = g.gradOf(nd.inputs[0]);
            for (std::size_t i = 0; i < da.size(); ++i) da[i] += nd.grad[i];
        },
        n, n);
}

Var Graph::unary(Op op, Var a) {
    const Tensor& A = value(a);
    Tensor out(A.shape());
    const std::size_t n = A.size();
    for (std::size_t i = 0; i < n; ++i) {
        const double x = A[i];
        switch (op) {
        case Op::Relu: out[i] = x > 0.0 ? x : 0.0; break;
        case Op::Square: out[i] = x * x; break;
        case Op::Sqrt: out[i] = std::sqrt(x); break;
        case Op::Exp: out[i] = std::exp(x); break;
        case Op::Log: out[i] = std::log(x); break;
        default: throw std::logic_error("not a unary op");
        }
    }
    return push(
        op, {a.id}, std::move(out),
        [op](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0];
            const Tensor& A = g.nodes_[ia].value;
            const Tensor& Y = nd.value;
            const Tensor& G = nd.grad;
            Tensor& da = g.gradOf(ia);
            for (std::size_t i = 0; i < G.size(); ++i) {
                switch (op) {
                case Op::Relu: da[i] += A[i] > 0.0 ? G[i] : 0.0; break;
                case Op::Square: da[i] += 2.0 * A[i] * G[i]; break;
                case Op::Sqrt: da[i] += G[i] * 0.5 / Y[i]; break;
                case Op::Exp: da[i] += G[i] * Y[i]; break;
                case Op::Log: da[i] += G[i] / A[i]; break;
                default: break;
                }
            }
        },
        n, n);
}

Var Graph::relu(Var a) { return unary(Op::Relu, a); }
Var Graph::square(Var a) { return unary(Op::Square, a); }
Var Graph::sqrt(Var a) { return unary(Op::Sqrt, a); }
Var Graph::exp(Var a) { return unary(Op::Exp, a); }
Var Graph::log(Var a) { return unary(Op::Log, a); }

Var Graph::sum(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double x : A.values()) s += x;
    return push(
        Op::Sum, {a.id}, Tensor::scalar(s),
        [](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            Tensor& da = g.gradOf(nd.inputs[0]);
            for (auto& x : da.values()) x += nd.grad[0];
        },
        A.size(), A.size());
}

Var Graph::mean(Var a) {
    const Tensor& A = value(a);
    double s = 0.0;
    for (double x : A.values()) s += x;
    const double n = static_cast<double>(A.size());
    return push(
        Op::Mean, {a.id}, Tensor::scalar(s / n),
        [n](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            Tensor& da = g.gradOf(nd.inputs[0]);
            for (auto& x : da.values()) x += nd.grad[0] / n;
        },
        A.size(), A.size());
}

// ---------------------------------------------------------------------------
// Layers and losses

Var Graph::batchNorm(Var x, Var gamma, Var beta, BatchNormStats* running, bool training, double eps,
                     double momentum) {
    const Tensor& X = value(x);
    const Tensor& Gm = value(gamma);
    const Tensor& Bt = value(beta);
    const Op op = training ? Op::BatchNormTrain : Op::BatchNormInfer;
    if (X.rank() != 2) shapeError(op, X, Gm);
    const std::size_t m = X.rows(), c = X.cols();
    if (!isRowVector(Gm, c)) shapeError(op, X, Gm);
    if (!isRowVector(Bt, c)) shapeError(op, X, Bt);

    Tensor mu({c}), invStd({c});
    if (training) {
        if (m < 2) throw std::invalid_argument(describe(op) + ": batch statistics need at least 2 rows");
        Tensor var({c});
        for (std::size_t j = 0; j < c; ++j) {
            double s = 0.0;
            for (std::size_t r = 0; r < m; ++r) s += X.at(r, j);
            mu[j] = s / static_cast<double>(m);
            double v = 0.0;
            for (std::size_t r = 0; r < m; ++r) {
                const double dlt = X.at(r, j) - mu[j];
                v += dlt * dlt;
            }
            var[j] = v / static_cast<double>(m);
            invStd[j] = 1.0 / std::sqrt(var[j] + eps);
        }
        if (running) {
            const double unbias = static_cast<double>(m) / static_cast<double>(m - 1);
            for (std::size_t j = 0; j < c; ++j) {
                running->mean[j] = (1.0 - momentum) * running->mean[j] + momentum * mu[j];
                running->var[j] = (1.0 - momentum) * running->var[j] + momentum * var[j] * unbias;
            }
        }
    } else {
        if (!running) throw std::invalid_argument(describe(op) + ": inference mode needs running statistics");
        for (std::size_t j = 0; j < c; ++j) {
            mu[j] = running->mean[j];
            invStd[j] = 1.0 / std::sqrt(running->var[j] + eps);
        }
    }

    Tensor out({m, c});
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t j = 0; j < c; ++j) out.at(r, j) = Gm[j] * (X.at(r, j) - mu[j]) * invStd[j] + Bt[j];

    return push(
        op, {x.id, gamma.id, beta.id}, std::move(out),
        [training, mu = std::move(mu), invStd = std::move(invStd)](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ix = nd.inputs[0], ig = nd.inputs[1], ib = nd.inputs[2];
            const Tensor& X = g.nodes_[ix].value;
            const Tensor& Gm = g.nodes_[ig].value;
            const Tensor& G = nd.grad;
            const std::size_t m = X.rows(), c = X.cols();
            const double md = static_cast<double>(m);
            for (std::size_t j = 0; j < c; ++j) {
                double sumG = 0.0, sumGx = 0.0;
                for (std::size_t r = 0; r < m; ++r) {
                    const double xh = (X.at(r, j) - mu[j]) * invStd[j];
                    sumG += G.at(r, j);
                    sumGx += G.at(r, j) * xh;
                }
                if (g.needs(ig)) g.gradOf(ig)[j] += sumGx;
                if (g.needs(ib)) g.gradOf(ib)[j] += sumG;
                if (g.needs(ix)) {
                    Tensor& dx = g.gradOf(ix);
                    if (training) {
                        // dx = γ·invStd/m · (m·g − Σg − x̂·Σ(g·x̂))
                        for (std::size_t r = 0; r < m; ++r) {
                            const double xh = (X.at(r, j) - mu[j]) * invStd[j];
                            dx.at(r, j) += Gm[j] * invStd[j] / md * (md * G.at(r, j) - sumG - xh * sumGx);
                        }
                    } else {
                        for (std::size_t r = 0; r < m; ++r) dx.at(r, j) += Gm[j] * invStd[j] * G.at(r, j);
                    }
                }
            }
        },
        4 * m * c, 6 * m * c);
}

Var Graph::softmaxCrossEntropy(Var logits, std::span<const int> labels) {
    const Tensor& L = value(logits);
    if (L.rank() != 2 || L.rows() != labels.size()) {
        throw std::invalid_argument(describe(Op::SoftmaxCrossEntropy) + ": " + std::to_string(labels.size()) +
                                    " labels for logits of shape " + shapeString(L.shape()));
    }
    const std::size_t n = L.rows(), k = L.cols();
    Tensor probs({n, k});
    double loss = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw std::invalid_argument(describe(Op::SoftmaxCrossEntropy) + ": label " + std::to_string(y) +
                                        " out of range for " + std::to_string(k) + " classes");
        }
        double mx = L.at(r, 0);
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, L.at(r, c));
        double z = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            probs.at(r, c) = std::exp(L.at(r, c) - mx);
            z += probs.at(r, c);
        }
        for (std::size_t c = 0; c < k; ++c) probs.at(r, c) /= z;
        loss -= (L.at(r, static_cast<std::size_t>(y)) - mx) - std::log(z);
    }
    loss /= static_cast<double>(n);
    std::vector<int> ys(labels.begin(), labels.end());
    return push(
        Op::SoftmaxCrossEntropy, {logits.id}, Tensor::scalar(loss),
        [probs = std::move(probs), ys = std::move(ys)](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            Tensor& dl = g.gradOf(nd.inputs[0]);
            const std::size_t n = probs.rows(), k = probs.cols();
            const double scale = nd.grad[0] / static_cast<double>(n);
            for (std::size_t r = 0; r < n; ++r) {
                for (std::size_t c = 0; c < k; ++c) {
                    const double target = static_cast<std::size_t>(ys[r]) == c ? 1.0 : 0.0;
                    dl.at(r, c) += scale * (probs.at(r, c) - target);
                }
            }
        },
        3 * n * k, 2 * n * k);
}

Var Graph::reparameterize(Var mean, Var logVar, Rng* rng) {
    const Tensor& M = value(mean);
    const Tensor& LV = value(logVar);
    if (!M.sameShape(LV)) shapeError(Op::Reparameterize, M, LV);
    const std::size_t badLv = LV.firstNonFinite();
    if (badLv != LV.size()) {
        throw NumericalError(describe(Op::Reparameterize) + ": non-finite log-variance at element " +
                             std::to_string(badLv));
    }
    Tensor eps(M.shape());
    if (rng) {
        for (auto& e : eps.values()) e = rng->normal();
    }
    Tensor out(M.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = M[i] + std::exp(0.5 * LV[i]) * eps[i];
    return push(
        Op::Reparameterize, {mean.id, logVar.id}, std::move(out),
        [eps = std::move(eps)](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t im = nd.inputs[0], il = nd.inputs[1];
            const Tensor& G = nd.grad;
            if (g.needs(im)) {
                Tensor& dm = g.gradOf(im);
                for (std::size_t i = 0; i < G.size(); ++i) dm[i] += G[i];
            }
            if (g.needs(il)) {
                Tensor& dl = g.gradOf(il);
                const Tensor& LV = g.nodes_[il].value;
                for (std::size_t i = 0; i < G.size(); ++i) dl[i] += G[i] * 0.5 * std::exp(0.5 * LV[i]) * eps[i];
            }
        },
        2 * M.size(), 2 * M.size());
}

Var Graph::normalizeColumns(Var z) {
    const Tensor& Z = value(z);
    if (Z.rank() != 2) shapeError(Op::NormalizeColumns, Z, Z);
    const std::size_t m = Z.rows(), d = Z.cols();
    if (m < 2) {
        throw std::invalid_argument(describe(Op::NormalizeColumns) + ": need at least 2 rows, got " +
                                    std::to_string(m));
    }
    Tensor out({m, d});
    Tensor norms({d});
    for (std::size_t j = 0; j < d; ++j) {
        bool constant = true;
        double s = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            s += Z.at(r, j);
            constant = constant && Z.at(r, j) == Z.at(0, j);
        }
        const double mu = s / static_cast<double>(m);
        double ss = 0.0;
        for (std::size_t r = 0; r < m; ++r) {
            const double c = Z.at(r, j) - mu;
            out.at(r, j) = c;
            ss += c * c;
        }
        if (constant || ss == 0.0) {
            throw CollapseError(describe(Op::NormalizeColumns) + ": column " + std::to_string(j) +
                                    " is constant across the batch (complete collapse)",
                                j);
        }
        norms[j] = std::sqrt(ss);
        for (std::size_t r = 0; r < m; ++r) out.at(r, j) /= norms[j];
    }
    return push(
        Op::NormalizeColumns, {z.id}, std::move(out),
        [norms = std::move(norms)](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const Tensor& Y = nd.value;
            const Tensor& G = nd.grad;
            Tensor& dz = g.gradOf(nd.inputs[0]);
            const std::size_t m = Y.rows(), d = Y.cols();
            for (std::size_t j = 0; j < d; ++j) {
                double yg = 0.0;
                for (std::size_t r = 0; r < m; ++r) yg += Y.at(r, j) * G.at(r, j);
                // t = (g − y·(y·g)) / n, then remove its mean (centering Jacobian).
                double tMean = 0.0;
                for (std::size_t r = 0; r < m; ++r) tMean += (G.at(r, j) - Y.at(r, j) * yg) / norms[j];
                tMean /= static_cast<double>(m);
                for (std::size_t r = 0; r < m; ++r)
                    dz.at(r, j) += (G.at(r, j) - Y.at(r, j) * yg) / norms[j] - tMean;
            }
        },
        3 * m * d, 3 * m * d);
}

Var Graph::concatRows(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.rank() != 2 || B.rank() != 2 || A.cols() != B.cols()) shapeError(Op::ConcatRows, A, B);
    std::vector<double> v(A.values().begin(), A.values().end());
    v.insert(v.end(), B.values().begin(), B.values().end());
    const std::size_t ra = A.rows();
    Tensor out({A.rows() + B.rows(), A.cols()}, std::move(v));
    return push(
        Op::ConcatRows, {a.id, b.id}, std::move(out),
        [ra](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            const std::size_t ia = nd.inputs[0], ib = nd.inputs[1];
            const std::size_t split = ra * nd.value.cols();
            if (g.needs(ia)) {
                Tensor& da = g.gradOf(ia);
                for (std::size_t i = 0; i < split; ++i) da[i] += nd.grad[i];
            }
            if (g.needs(ib)) {
                Tensor& db = g.gradOf(ib);
                for (std::size_t i = 0; i < db.size(); ++i) db[i] += nd.grad[split + i];
            }
        },
        0, 0);
}

Var Graph::sliceRows(Var a, std::size_t begin, std::size_t end) {
    const Tensor& A = value(a);
    if (A.rank() != 2 || begin >= end || end > A.rows()) {
        throw std::invalid_argument(describe(Op::SliceRows) + ": rows [" + std::to_string(begin) + ", " +
                                    std::to_string(end) + ") out of range for " + shapeString(A.shape()));
    }
    Tensor out = A.rowSlice(begin, end);
    return push(
        Op::SliceRows, {a.id}, std::move(out),
        [begin](Graph& g, std::size_t self) {
            const Node& nd = g.nodes_[self];
            Tensor& da = g.gradOf(nd.inputs[0]);
            const std::size_t offset = begin * nd.value.cols();
            for (std::size_t i = 0; i < nd.grad.size(); ++i) da[offset + i] += nd.grad[i];
        },
        0, 0);
}

} // namespace dcolor
