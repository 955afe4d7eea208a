#include "ustep/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <utility>

namespace ustep {

namespace {

#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif

thread_local bool g_grad_enabled = true;

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) {
            throw ShapeError("tensor: dimension sizes must be positive");
        }
        n *= d;
    }
    return n;
}

void check_finite(const detail::TensorNode& node, const char* op) {
    if (!g_debug_checks) {
        return;
    }
    for (double v : node.data) {
        if (!std::isfinite(v)) {
            throw DataError(std::string(op) + ": non-finite value produced");
        }
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": operand shapes differ");
    }
}

} // namespace

bool debug_checks_enabled() { return g_debug_checks; }
void set_debug_checks(bool enabled) { g_debug_checks = enabled; }

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool enabled) { g_grad_enabled = enabled; }

detail::TensorNode& Tensor::req() const {
    if (!node_) {
        throw ConfigError("tensor: use of an undefined tensor");
    }
    return *node_;
}

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
    const int64_t n = shape_numel(shape);
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data.assign(static_cast<size_t>(n), value);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> values,
                         bool requires_grad) {
    const int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(values.size())) {
        throw ShapeError("tensor: value count does not match shape product");
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    check_finite(*node, "from_data");
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

const std::vector<int64_t>& Tensor::shape() const { return req().shape; }
int64_t Tensor::size() const { return req().size(); }

double Tensor::item() const {
    if (size() != 1) {
        throw ShapeError("item: tensor is not a scalar");
    }
    return req().data[0];
}

std::span<const double> Tensor::data() const& { return req().data; }
std::span<double> Tensor::mutable_data() & { return req().data; }

bool Tensor::requires_grad() const { return req().requires_grad; }
bool Tensor::has_grad() const { return !req().grad.empty(); }

std::span<const double> Tensor::grad() const& {
    auto& node = req();
    if (node.grad.empty()) {
        throw ConfigError("grad: no gradient buffer allocated");
    }
    return node.grad;
}

std::span<double> Tensor::mutable_grad() & {
    ensure_grad();
    return req().grad;
}

void Tensor::ensure_grad() {
    auto& node = req();
    if (node.grad.empty()) {
        node.grad.assign(node.data.size(), 0.0);
    }
}

void Tensor::zero_grad() {
    auto& node = req();
    node.grad.assign(node.data.size(), 0.0);
}

Tensor Tensor::detach() const {
    auto& node = req();
    auto copy = std::make_shared<detail::TensorNode>();
    copy->shape = node.shape;
    copy->data = node.data;
    copy->requires_grad = false;
    return Tensor(std::move(copy));
}

// Shared construction path for every op: assembles the output node and, when
// grad mode is on and an input requires grad, records the backward closure.
Tensor make_op_result(std::vector<int64_t> shape, std::vector<double> data,
                      std::vector<Tensor> inputs,
                      std::function<void(detail::TensorNode&)> backprop) {
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->data = std::move(data);

    bool needs_grad = false;
    if (GradMode::enabled()) {
        for (const auto& t : inputs) {
            if (t.requires_grad()) {
                needs_grad = true;
                break;
            }
        }
    }
    if (needs_grad) {
        node->requires_grad = true;
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) {
            node->parents.push_back(t.node());
        }
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

namespace {

std::vector<double>& parent_grad(detail::TensorNode& node, size_t i) {
    auto& p = *node.parents[i];
    if (p.grad.empty()) {
        p.grad.assign(p.data.size(), 0.0);
    }
    return p.grad;
}

Tensor finalize(Tensor out, const char* op) {
    check_finite(*out.node(), op);
    return out;
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] + bv[i];
    }
    auto backprop = [](detail::TensorNode& node) {
        for (size_t p = 0; p < 2; ++p) {
            if (!node.parents[p]->requires_grad) {
                continue;
            }
            auto& g = parent_grad(node, p);
            for (size_t i = 0; i < g.size(); ++i) {
                g[i] += node.grad[i];
            }
        }
    };
    return finalize(make_op_result(a.shape(), std::move(out), {a, b}, backprop), "add");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<double> out(av.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = av[i] * bv[i];
    }
    auto backprop = [](detail::TensorNode& node) {
        const auto& av = node.parents[0]->data;
        const auto& bv = node.parents[1]->data;
        if (node.parents[0]->requires_grad) {
            auto& ga = parent_grad(node, 0);
            for (size_t i = 0; i < ga.size(); ++i) {
                ga[i] += node.grad[i] * bv[i];
            }
        }
        if (node.parents[1]->requires_grad) {
            auto& gb = parent_grad(node, 1);
            for (size_t i = 0; i < gb.size(); ++i) {
                gb[i] += node.grad[i] * av[i];
            }
        }
    };
    return finalize(make_op_result(a.shape(), std::move(out), {a, b}, backprop), "mul");
}

Tensor scale(const Tensor& x, double factor) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * factor;
    }
    auto backprop = [factor](detail::TensorNode& node) {
        if (!node.parents[0]->requires_grad) {
            return;
        }
        auto& g = parent_grad(node, 0);
        for (size_t i = 0; i < g.size(); ++i) {
            g[i] += node.grad[i] * factor;
        }
    };
    return finalize(make_op_result(x.shape(), std::move(out), {x}, backprop), "scale");
}

namespace {

// Overflow-safe logistic.
double stable_sigmoid(double v) {
    if (v >= 0.0) {
        return 1.0 / (1.0 + std::exp(-v));
    }
    const double e = std::exp(v);
    return e / (1.0 + e);
}

} // namespace

Tensor sigmoid(const Tensor& x) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = stable_sigmoid(xv[i]);
    }
    auto backprop = [](detail::TensorNode& node) {
        if (!node.parents[0]->requires_grad) {
            return;
        }
        auto& g = parent_grad(node, 0);
        for (size_t i = 0; i < g.size(); ++i) {
            const double s = node.data[i];
            g[i] += node.grad[i] * s * (1.0 - s);
        }
    };
    return finalize(make_op_result(x.shape(), std::move(out), {x}, backprop), "sigmoid");
}

Tensor silu(const Tensor& x) {
    const auto xv = x.data();
    std::vector<double> out(xv.size());
    for (size_t i = 0; i < out.size(); ++i) {
        out[i] = xv[i] * stable_sigmoid(xv[i]);
    }
    auto backprop = [](detail::TensorNode& node) {
        if (!node.parents[0]->requires_grad) {
            return;
        }
        const auto& xv = node.parents[0]->data;
        auto& g = parent_grad(node, 0);
        for (size_t i = 0; i < g.size(); ++i) {
            const double s = stable_sigmoid(xv[i]);
            g[i] += node.grad[i] * (s + xv[i] * s * (1.0 - s));
        }
    };
    return finalize(make_op_result(x.shape(), std::move(out), {x}, backprop), "silu");
}

Tensor sum(const Tensor& x) {
    const auto xv = x.data();
    double total = 0.0;
    for (double v : xv) {
        total += v;
    }
    auto backprop = [](detail::TensorNode& node) {
        if (!node.parents[0]->requires_grad) {
            return;
        }
        auto& g = parent_grad(node, 0);
        const double seed = node.grad[0];
        for (double& gi : g) {
            gi += seed;
        }
    };
    return finalize(make_op_result({1}, {total}, {x}, backprop), "sum");
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
    require_same_shape(pred, target, "mse_loss");
    const auto pv = pred.data();
    const auto tv = target.data();
    const double inv_n = 1.0 / static_cast<double>(pv.size());
    double acc = 0.0;
    for (size_t i = 0; i < pv.size(); ++i) {
        const double d = pv[i] - tv[i];
        acc += d * d;
    }
    auto backprop = [inv_n](detail::TensorNode& node) {
        const auto& pv = node.parents[0]->data;
        const auto& tv = node.parents[1]->data;
        const double seed = node.grad[0];
        if (node.parents[0]->requires_grad) {
            auto& g = parent_grad(node, 0);
            for (size_t i = 0; i < g.size(); ++i) {
                g[i] += seed * 2.0 * (pv[i] - tv[i]) * inv_n;
            }
        }
        if (node.parents[1]->requires_grad) {
            auto& g = parent_grad(node, 1);
            for (size_t i = 0; i < g.size(); ++i) {
                g[i] -= seed * 2.0 * (pv[i] - tv[i]) * inv_n;
            }
        }
    };
    return finalize(make_op_result({1}, {acc * inv_n}, {pred, target}, backprop), "mse_loss");
}

namespace {

struct ConvDims {
    int64_t cin, h, w, cout, k, pad;
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const auto& is = input.shape();
    const auto& ws = weight.shape();
    const auto& bs = bias.shape();
    if (is.size() != 3) {
        throw ShapeError("conv2d: input must be [C, H, W]");
    }
    if (ws.size() != 4 || ws[2] != ws[3]) {
        throw ShapeError("conv2d: weight must be [Cout, Cin, k, k]");
    }
    if (bs.size() != 1 || bs[0] != ws[0]) {
        throw ShapeError("conv2d: bias must be [Cout]");
    }
    if (is[0] != ws[1]) {
        throw ShapeError("conv2d: input channels do not match weight channels");
    }
    if (ws[2] % 2 == 0) {
        throw ConfigError("conv2d: kernel size must be odd");
    }
    return {is[0], is[1], is[2], ws[0], ws[2], (ws[2] - 1) / 2};
}

// Forward: per (cout, cin, ky, kx) a shifted axpy over the image. Keeps the
// inner loop branch-free and unit-stride.
void conv_forward(const ConvDims& d, const double* in, const double* w, const double* b,
                  double* out) {
    const int64_t hw = d.h * d.w;
    for (int64_t co = 0; co < d.cout; ++co) {
        double* out_c = out + co * hw;
        std::fill(out_c, out_c + hw, b[co]);
        for (int64_t ci = 0; ci < d.cin; ++ci) {
            const double* in_c = in + ci * hw;
            const double* w_cc = w + (co * d.cin + ci) * d.k * d.k;
            for (int64_t ky = 0; ky < d.k; ++ky) {
                const int64_t dy = ky - d.pad;
                const int64_t y0 = std::max<int64_t>(0, -dy);
                const int64_t y1 = std::min<int64_t>(d.h, d.h - dy);
                for (int64_t kx = 0; kx < d.k; ++kx) {
                    const int64_t dx = kx - d.pad;
                    const int64_t x0 = std::max<int64_t>(0, -dx);
                    const int64_t x1 = std::min<int64_t>(d.w, d.w - dx);
                    const double wv = w_cc[ky * d.k + kx];
                    for (int64_t y = y0; y < y1; ++y) {
                        const double* in_row = in_c + (y + dy) * d.w + dx;
                        double* out_row = out_c + y * d.w;
                        for (int64_t x = x0; x < x1; ++x) {
                            out_row[x] += wv * in_row[x];
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
    const ConvDims d = conv_dims(input, weight, bias);
    std::vector<double> out(static_cast<size_t>(d.cout * d.h * d.w));
    conv_forward(d, input.data().data(), weight.data().data(), bias.data().data(), out.data());

    auto backprop = [d](detail::TensorNode& node) {
        const double* gout = node.grad.data();
        const auto& in = node.parents[0]->data;
        const auto& w = node.parents[1]->data;
        const int64_t hw = d.h * d.w;

        if (node.parents[0]->requires_grad) {
            auto& gin = parent_grad(node, 0);
            // d/d_in: correlate the output gradient with the kernel using
            // opposite offsets.
            for (int64_t co = 0; co < d.cout; ++co) {
                const double* gout_c = gout + co * hw;
                for (int64_t ci = 0; ci < d.cin; ++ci) {
                    double* gin_c = gin.data() + ci * hw;
                    const double* w_cc = w.data() + (co * d.cin + ci) * d.k * d.k;
                    for (int64_t ky = 0; ky < d.k; ++ky) {
                        const int64_t dy = ky - d.pad;
                        const int64_t y0 = std::max<int64_t>(0, -dy);
                        const int64_t y1 = std::min<int64_t>(d.h, d.h - dy);
                        for (int64_t kx = 0; kx < d.k; ++kx) {
                            const int64_t dx = kx - d.pad;
                            const int64_t x0 = std::max<int64_t>(0, -dx);
                            const int64_t x1 = std::min<int64_t>(d.w, d.w - dx);
                            const double wv = w_cc[ky * d.k + kx];
                            for (int64_t y = y0; y < y1; ++y) {
                                double* gin_row = gin_c + (y + dy) * d.w + dx;
                                const double* gout_row = gout_c + y * d.w;
                                for (int64_t x = x0; x < x1; ++x) {
                                    gin_row[x] += wv * gout_row[x];
                                }
                            }
                        }
                    }
                }
            }
        }

        if (node.parents[1]->requires_grad) {
            auto& gw = parent_grad(node, 1);
            for (int64_t co = 0; co < d.cout; ++co) {
                const double* gout_c = gout + co * hw;
                for (int64_t ci = 0; ci < d.cin; ++ci) {
                    const double* in_c = in.data() + ci * hw;
                    double* gw_cc = gw.data() + (co * d.cin + ci) * d.k * d.k;
                    for (int64_t ky = 0; ky < d.k; ++ky) {
                        const int64_t dy = ky - d.pad;
                        const int64_t y0 = std::max<int64_t>(0, -dy);
                        const int64_t y1 = std::min<int64_t>(d.h, d.h - dy);
                        for (int64_t kx = 0; kx < d.k; ++kx) {
                            const int64_t dx = kx - d.pad;
                            const int64_t x0 = std::max<int64_t>(0, -dx);
                            const int64_t x1 = std::min<int64_t>(d.w, d.w - dx);
                            double acc = 0.0;
                            for (int64_t y = y0; y < y1; ++y) {
                                const double* in_row = in_c + (y + dy) * d.w + dx;
                                const double* gout_row = gout_c + y * d.w;
                                for (int64_t x = x0; x < x1; ++x) {
                                    acc += in_row[x] * gout_row[x];
                                }
                            }
                            gw_cc[ky * d.k + kx] += acc;
                        }
                    }
                }
            }
        }

        if (node.parents[2]->requires_grad) {
            auto& gb = parent_grad(node, 2);
            for (int64_t co = 0; co < d.cout; ++co) {
                const double* gout_c = gout + co * hw;
                double acc = 0.0;
                for (int64_t i = 0; i < hw; ++i) {
                    acc += gout_c[i];
                }
                gb[co] += acc;
            }
        }
    };

    return finalize(
        make_op_result({d.cout, d.h, d.w}, std::move(out), {input, weight, bias}, backprop),
        "conv2d");
}

Tensor slice_leading(const Tensor& x, int64_t first, int64_t last) {
    const auto& xs = x.shape();
    if (xs.empty()) {
        throw ShapeError("slice_leading: tensor has no dimensions");
    }
    if (first < 0 || last <= first || last > xs[0]) {
        throw ShapeError("slice_leading: range out of bounds");
    }
    int64_t row = 1;
    for (size_t i = 1; i < xs.size(); ++i) {
        row *= xs[i];
    }
    std::vector<int64_t> out_shape = xs;
    out_shape[0] = last - first;
    const auto xv = x.data();
    std::vector<double> out(xv.begin() + first * row, xv.begin() + last * row);

    auto backprop = [first, row](detail::TensorNode& node) {
        if (!node.parents[0]->requires_grad) {
            return;
        }
        auto& g = parent_grad(node, 0);
        const int64_t offset = first * row;
        for (size_t i = 0; i < node.grad.size(); ++i) {
            g[static_cast<size_t>(offset) + i] += node.grad[i];
        }
    };
    return finalize(make_op_result(std::move(out_shape), std::move(out), {x}, backprop),
                    "slice_leading");
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ConfigError("backward: loss must be a defined scalar tensor");
    }
    auto root = loss.node();
    if (!root->requires_grad) {
        return; // loss does not depend on any tracked tensor
    }

    // Iterative post-order DFS; children precede parents in `order`.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> visited;
    std::vector<std::pair<detail::TensorNode*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            detail::TensorNode* parent = node->parents[next_parent].get();
            ++next_parent;
            if (parent->requires_grad && visited.insert(parent).second) {
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior nodes get a fresh buffer per sweep; only leaves accumulate
    // across repeated backward calls.
    for (auto* node : order) {
        if (node->backprop) {
            node->grad.assign(node->data.size(), 0.0);
        }
    }

    if (root->grad.empty()) {
        root->grad.assign(1, 0.0);
    }
    root->grad[0] += 1.0;

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* node = *it;
        if (node->backprop && !node->grad.empty()) {
            node->backprop(*node);
        }
    }
}

} // namespace ustep
