#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ustep/errors.hpp"

namespace ustep {

/// When enabled, every op validates that its output is finite and throws
/// DataError otherwise. Defaults to on in debug builds, off in release
/// builds (the optimizer step still validates parameters either way).
bool debug_checks_enabled();
void set_debug_checks(bool enabled);

/// Thread-local switch controlling whether new ops record the backward
/// graph. Inference paths (rollout, evaluation, finite differences) disable
/// it to avoid building throwaway graphs.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool enabled);
};

struct NoGradGuard {
    NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(prev_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

namespace detail {

struct TensorNode {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad; // empty until first needed
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop; // propagates node.grad into parents

    int64_t size() const { return static_cast<int64_t>(data.size()); }
};

} // namespace detail

/// Dense row-major tensor of doubles participating in a reverse-mode
/// differentiation graph. Copies are shallow (shared storage); tensors are
/// treated as immutable after creation except for their grad buffer and the
/// explicit leaf mutation used by initializers and the optimizer.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> values,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int64_t>& shape() const;
    int64_t size() const;
    bool is_scalar() const { return size() == 1; }

    /// Value of a single-element tensor.
    double item() const;

    /// Spans borrow the tensor's storage, so they are only obtainable from
    /// lvalues; bind a temporary to a name first.
    std::span<const double> data() const&;
    std::span<const double> data() const&& = delete;
    /// Direct mutable access to the values. Only leaves may be mutated;
    /// mutating a graph-produced tensor invalidates recorded gradients.
    std::span<double> mutable_data() &;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const double> grad() const&;
    std::span<const double> grad() const&& = delete;
    std::span<double> mutable_grad() &;
    /// Allocates (zeroed) the grad buffer if absent.
    void ensure_grad();
    void zero_grad();

    /// Same storage, detached from any recorded graph.
    Tensor detach() const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    detail::TensorNode& req() const;

    std::shared_ptr<detail::TensorNode> node_;

    friend Tensor make_op_result(std::vector<int64_t> shape, std::vector<double> data,
                                 std::vector<Tensor> inputs,
                                 std::function<void(detail::TensorNode&)> backprop);
};

// Elementwise ops (identical shapes; no broadcasting).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor sigmoid(const Tensor& x);
/// Smooth ramp x * sigmoid(x).
Tensor silu(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Same-size 2D cross-correlation with zero padding (k odd, pad = (k-1)/2).
/// input: [Cin, H, W], weight: [Cout, Cin, k, k], bias: [Cout].
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias);

/// Sub-range [first, last) of the leading dimension.
Tensor slice_leading(const Tensor& x, int64_t first, int64_t last);

/// Reverse-mode sweep from a scalar loss. Accumulates into the grad buffers
/// of every reachable tensor that requires grad; repeated calls without
/// zeroing add up.
void backward(const Tensor& loss);

} // namespace ustep
