#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace itcfn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Storage precision of the engine. Float32 is the normal training mode: every
// value an op produces (data and gradients) is rounded to the nearest 32-bit
// float. Float64 keeps the full double result and is used by gradient checks.
enum class Precision { Float32, Float64 };

Precision precision();
void set_precision(Precision p);

// Round a freshly computed value to the active storage precision.
inline double store(double v, Precision p) {
    return p == Precision::Float32 ? static_cast<double>(static_cast<float>(v)) : v;
}
double store(double v);

class PrecisionScope {
public:
    explicit PrecisionScope(Precision p);
    ~PrecisionScope();
    PrecisionScope(const PrecisionScope&) = delete;
    PrecisionScope& operator=(const PrecisionScope&) = delete;

private:
    Precision prev_;
};

// Graph recording is on by default; NoGradGuard disables it for a scope.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

struct Node;
using BackwardFn = std::function<void(Node&)>;

struct Node {
    std::uint64_t id = 0;
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until a backward pass reaches the node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    BackwardFn backward;

    void ensure_grad();
    // grad[i] += v, rounded to the active precision.
    void accumulate(std::size_t i, double v);
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double value, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t dim(std::size_t axis) const;
    std::size_t numel() const;

    std::span<const double> data() const;
    // Direct write access for initializers, optimizers and gradient checks.
    // Does not invalidate graphs already built on this tensor.
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t flat) const { return data()[flat]; }

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    // Value copy that does not participate in the graph.
    Tensor detach() const;
    Tensor clone() const;

    // Reverse-mode pass from a scalar root.
    void backward() const;

    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// While a trace is active, non-smooth ops (relu, leaky_relu, abs, max_pool3d,
// codebook quantization) fold their branch decisions into it. Two forward
// passes with equal traces took the same side of every kink.
class BranchTrace {
public:
    BranchTrace();
    ~BranchTrace();
    BranchTrace(const BranchTrace&) = delete;
    BranchTrace& operator=(const BranchTrace&) = delete;

    std::uint64_t value() const { return hash_; }

    static bool active();
    static void mix(std::uint64_t v);

private:
    std::uint64_t hash_ = 1469598103934665603ull;
    BranchTrace* prev_ = nullptr;
};

// Ordered record of the operations reachable from a root. Every op appears
// after all of its inputs.
class Tape {
public:
    static Tape record(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node*>& nodes() const { return nodes_; }

    // Seeds the root with d(root)/d(root) = 1 and runs every backward rule in
    // reverse order.
    void run_backward() const;

private:
    std::vector<Node*> nodes_;
};

// Builds the result node of an op. Rounds data to the active precision, marks
// the node as requiring grad when any parent does and recording is enabled,
// and attaches the backward rule only in that case.
Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::vector<Tensor> parents, BackwardFn backward);

}  // namespace itcfn
