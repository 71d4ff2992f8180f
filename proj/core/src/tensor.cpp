#include "spritediff/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "spritediff/errors.hpp"

namespace spritediff {

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

bool same_shape(const Shape& a, const Shape& b) {
    return a == b;
}

void TensorNode::ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

namespace {

thread_local bool g_grad_enabled = true;

NodePtr new_leaf(Shape shape, std::vector<double> data) {
    if (shape_numel(shape) != static_cast<int64_t>(data.size()))
        throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    return n;
}

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

Tensor Tensor::zeros(const Shape& shape) {
    return Tensor(new_leaf(shape, std::vector<double>(shape_numel(shape), 0.0)));
}

Tensor Tensor::full(const Shape& shape, double value) {
    return Tensor(new_leaf(shape, std::vector<double>(shape_numel(shape), value)));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data) {
    return Tensor(new_leaf(shape, std::move(data)));
}

Tensor Tensor::scalar(double value) {
    return Tensor(new_leaf({1}, {value}));
}

Tensor Tensor::gaussian(const Shape& shape, Rng& rng) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.gaussian();
    return Tensor(new_leaf(shape, std::move(d)));
}

Tensor Tensor::uniform(const Shape& shape, Rng& rng, double lo, double hi) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = rng.uniform(lo, hi);
    return Tensor(new_leaf(shape, std::move(d)));
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }

int Tensor::dim(int i) const {
    int r = rank();
    if (i < 0) i += r;
    if (i < 0 || i >= r) throw ShapeError("tensor: dim index out of range");
    return node_->shape[i];
}

int64_t Tensor::numel() const { return static_cast<int64_t>(node_->data.size()); }

const std::vector<double>& Tensor::data() const { return node_->data; }

std::vector<double>& Tensor::mutable_data() { return node_->data; }

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

bool Tensor::has_grad() const { return !node_->grad.empty(); }

bool Tensor::requires_grad() const { return node_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) node_->grad.assign(node_->data.size(), 0.0);
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("tensor: item() on non-scalar shape " + shape_str(shape()));
    return node_->data[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size()) throw ShapeError("tensor: at() rank mismatch");
    int64_t flat = 0;
    int i = 0;
    for (int v : idx) {
        if (v < 0 || v >= s[i]) throw ShapeError("tensor: at() index out of range");
        flat = flat * s[i] + v;
        ++i;
    }
    return node_->data[flat];
}

Tensor Tensor::detach() const {
    return Tensor(new_leaf(node_->shape, node_->data));
}

bool Tensor::all_finite() const {
    for (double v : node_->data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn) {
    bool needs = false;
    if (g_grad_enabled)
        for (const auto& p : parents)
            if (p.defined() && p.requires_grad()) needs = true;
    auto n = new_leaf(std::move(shape), std::move(data));
    if (needs) {
        n->requires_grad = true;
        n->backward_fn = std::move(backward_fn);
        n->parents.reserve(parents.size());
        for (auto& p : parents)
            if (p.defined()) n->parents.push_back(p.node());
    }
    return Tensor(n);
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw ContractError("backward: loss must be a defined scalar");
    if (!loss.requires_grad()) return;

    // Reverse post-order DFS gives a topological order from the loss toward
    // the leaves; consumers always run before the nodes they feed.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    struct Frame {
        TensorNode* node;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.node->parents.size()) {
            TensorNode* p = f.node->parents[f.next_parent++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.node);
            stack.pop_back();
        }
    }

    // Interior grads are scratch for this call; only leaf grads accumulate
    // across repeated backward() invocations.
    for (TensorNode* n : order) {
        if (n->backward_fn) {
            n->ensure_grad();
            std::fill(n->grad.begin(), n->grad.end(), 0.0);
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

}  // namespace spritediff
