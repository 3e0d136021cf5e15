#include "itcfn/tensor.hpp"

#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace itcfn {

namespace {

thread_local Precision g_precision = Precision::Float32;
thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_id = 1;
thread_local BranchTrace* g_trace = nullptr;

std::shared_ptr<Node> new_node(const Shape& shape, std::vector<double> data) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                    " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->id = g_next_id++;
    node->shape = shape;
    node->data = std::move(data);
    return node;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Precision precision() { return g_precision; }
void set_precision(Precision p) { g_precision = p; }
double store(double v) { return store(v, g_precision); }

PrecisionScope::PrecisionScope(Precision p) : prev_(g_precision) { g_precision = p; }
PrecisionScope::~PrecisionScope() { g_precision = prev_; }

bool grad_enabled() { return g_grad_enabled; }
NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

BranchTrace::BranchTrace() : prev_(g_trace) { g_trace = this; }

BranchTrace::~BranchTrace() { g_trace = prev_; }

bool BranchTrace::active() { return g_trace != nullptr; }

void BranchTrace::mix(std::uint64_t v) {
    if (!g_trace) return;
    g_trace->hash_ = (g_trace->hash_ ^ v) * 1099511628211ull;
}

void Node::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

void Node::accumulate(std::size_t i, double v) { grad[i] = store(grad[i] + v); }

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return full(shape, 0.0, requires_grad);
}

Tensor Tensor::full(const Shape& shape, double value, bool requires_grad) {
    auto node = new_node(shape, std::vector<double>(shape_numel(shape), store(value)));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
    for (auto& v : data) v = store(v);
    auto node = new_node(shape, std::move(data));
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({}, {value}); }

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    if (axis >= rank()) {
        throw std::out_of_range("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                                shape_str(shape()));
    }
    return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<const double> Tensor::data() const { return node_->data; }
std::span<double> Tensor::mutable_data() { return node_->data; }

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("tensor: item() on shape " + shape_str(shape()));
    return node_->data[0];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return node_->grad.size() == node_->data.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("tensor: no gradient has been accumulated");
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(new_node(node_->shape, node_->data)); }

Tensor Tensor::clone() const {
    Tensor t = detach();
    t.node_->requires_grad = node_->requires_grad;
    return t;
}

void Tensor::backward() const {
    if (numel() != 1) {
        throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(shape()));
    }
    Tape::record(*this).run_backward();
}

Tape Tape::record(const Tensor& root) {
    Tape tape;
    std::unordered_set<const Node*> visited;
    // Iterative post-order DFS; parents are pushed in reverse so they are
    // visited in declaration order, which keeps the tape order deterministic.
    std::vector<std::pair<Node*, bool>> stack;
    stack.emplace_back(root.node_ptr().get(), false);
    while (!stack.empty()) {
        auto [node, expanded] = stack.back();
        stack.pop_back();
        if (expanded) {
            tape.nodes_.push_back(node);
            continue;
        }
        if (!node->requires_grad || visited.count(node)) continue;
        visited.insert(node);
        stack.emplace_back(node, true);
        for (auto it = node->parents.rbegin(); it != node->parents.rend(); ++it) {
            if ((*it)->requires_grad && !visited.count(it->get())) stack.emplace_back(it->get(), false);
        }
    }
    return tape;
}

void Tape::run_backward() const {
    if (nodes_.empty()) return;
    Node* root = nodes_.back();
    root->ensure_grad();
    root->grad[0] = store(root->grad[0] + 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node* n = *it;
        if (!n->backward) continue;
        for (auto& p : n->parents) {
            if (p->requires_grad) p->ensure_grad();
        }
        n->ensure_grad();
        n->backward(*n);
    }
}

Tensor make_result(const char* op, Shape shape, std::vector<double> data, std::vector<Tensor> parents,
                   BackwardFn backward) {
    const Precision p = g_precision;
    if (p == Precision::Float32) {
        for (auto& v : data) v = store(v, p);
    }
    auto node = new_node(shape, std::move(data));
    node->op = op;
    bool any = false;
    if (g_grad_enabled) {
        for (const auto& t : parents) any = any || t.requires_grad();
    }
    if (any) {
        node->requires_grad = true;
        node->parents.reserve(parents.size());
        for (const auto& t : parents) node->parents.push_back(t.node_ptr());
        node->backward = std::move(backward);
    }
    return Tensor(std::move(node));
}

}  // namespace itcfn
