#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "spritediff/rng.hpp"

namespace spritediff {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

struct TensorNode {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation; data.size() once live
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;  // empty for leaves

    void ensure_grad();
};

using NodePtr = std::shared_ptr<TensorNode>;

// Dense row-major float64 array with an optional reverse-mode tape. Value
// semantics: copying a Tensor copies the handle, not the buffer; every op
// returns a fresh buffer (no aliasing across mutation, slices copy).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor from_data(const Shape& shape, std::vector<double> data);
    static Tensor scalar(double value);
    // Leaf filled with N(0,1) / U(lo,hi) draws in row-major order.
    static Tensor gaussian(const Shape& shape, Rng& rng);
    static Tensor uniform(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int dim(int i) const;  // negative i counts from the back
    int64_t numel() const;

    const std::vector<double>& data() const;
    std::vector<double>& mutable_data();  // leaves only (parameters, buffers)
    const std::vector<double>& grad() const;
    bool has_grad() const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool v);
    void zero_grad();

    double item() const;                          // scalar tensors
    double at(std::initializer_list<int>) const;  // row-major element access

    // Copy of the values with no tape and no grad requirement.
    Tensor detach() const;
    bool all_finite() const;

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

// Populates grad buffers of every requires_grad tensor reachable from loss
// with d loss / d tensor. Repeated calls accumulate.
void backward(const Tensor& loss);

bool grad_enabled();

// RAII scope that disables tape recording (inference / data generation).
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

// Internal helper for op implementations: wires shape/data/parents into a
// node, recording the tape only when grad mode is on and a parent needs it.
Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorNode&)> backward_fn);

}  // namespace spritediff
