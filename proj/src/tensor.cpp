#include "mmel/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace mmel::diff {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<NodeRef> parents;
    // Reads this->grad and accumulates into parent grads (or the sink for
    // parameter leaves). Present only on interior nodes.
    std::function<void(Node&, GradSink*)> backprop;
    int param_slot = -1;
    bool requires_grad = false;
    bool consumed = false;
};

namespace {

thread_local int no_grad_depth = 0;

NodeRef make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

// Routes a node's gradient buffer to the right destination and returns it
// zero-extended to the node size.
std::vector<double>& grad_buffer_for(Node& node, GradSink* sink) {
    if (node.param_slot >= 0 && sink != nullptr) {
        auto& buf = sink->slots.at(static_cast<size_t>(node.param_slot));
        if (buf.size() != node.value.size()) buf.assign(node.value.size(), 0.0);
        return buf;
    }
    if (node.grad.size() != node.value.size()) node.grad.assign(node.value.size(), 0.0);
    return node.grad;
}

} // namespace

bool grad_enabled() { return no_grad_depth == 0; }

} // namespace detail

using detail::Node;
using detail::NodeRef;

int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

// --- Tensor ---------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
    auto n = numel(shape);
    if (n < 0) throw std::invalid_argument("Tensor: negative extent in " + shape_str(shape));
    return Tensor(detail::make_node(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0)));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
    if (numel(shape) != static_cast<int64_t>(values.size())) {
        throw std::invalid_argument("Tensor: " + shape_str(shape) + " does not hold " +
                                    std::to_string(values.size()) + " values");
    }
    return Tensor(detail::make_node(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double v) { return from_data({1}, {v}); }

Tensor Tensor::param(Shape shape, std::vector<double> values, int slot) {
    Tensor t = from_data(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    t.node_->param_slot = slot;
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
int64_t Tensor::size() const { return static_cast<int64_t>(node_->value.size()); }
std::span<const double> Tensor::data() const { return node_->value; }
std::span<double> Tensor::mutable_data() { return node_->value; }
bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
int Tensor::param_slot() const { return node_ ? node_->param_slot : -1; }

double Tensor::value() const {
    if (!node_ || node_->value.size() != 1) {
        throw std::logic_error("Tensor::value: tensor is not a scalar");
    }
    return node_->value[0];
}

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw std::logic_error("Tensor::grad: gradient not populated");
    return node_->grad;
}

void Tensor::clear_grad() {
    if (node_) node_->grad.clear();
}

void Tensor::accumulate_grad(std::span<const double> g) {
    if (!node_ || static_cast<int64_t>(g.size()) != size()) {
        throw std::invalid_argument("accumulate_grad: size mismatch");
    }
    if (node_->grad.size() != node_->value.size()) node_->grad.assign(node_->value.size(), 0.0);
    for (size_t i = 0; i < g.size(); ++i) node_->grad[i] += g[i];
}

NoGradGuard::NoGradGuard() { ++detail::no_grad_depth; }
NoGradGuard::~NoGradGuard() { --detail::no_grad_depth; }

bool grad_recording_enabled() { return detail::grad_enabled(); }

// --- backward --------------------------------------------------------------

namespace {

// Post-order over the requires_grad subgraph, iteratively (graphs from deep
// models would overflow a recursive walk only in pathological cases, but
// the iterative form costs nothing).
std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void run_backward(const Tensor& loss, GradSink* sink) {
    NodeRef root = loss.node();
    if (!root) throw std::invalid_argument("backward: undefined tensor");
    if (root->value.size() != 1) {
        throw std::invalid_argument("backward: loss must be a scalar, got " +
                                    shape_str(root->shape));
    }
    if (!root->requires_grad) {
        throw std::invalid_argument("backward: loss is not attached to a recorded tape");
    }
    if (root->consumed) {
        throw std::logic_error("backward: tape already consumed; differentiating the same "
                               "loss twice is unsupported");
    }
    root->consumed = true;

    std::vector<Node*> order = topo_order(root.get());
    // Interior grads start at zero for this sweep; parameter grads keep
    // accumulating until the optimizer clears them.
    for (Node* n : order) {
        if (n->param_slot < 0) n->grad.assign(n->value.size(), 0.0);
    }
    root->grad.assign(1, 1.0);

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n, sink);
    }
}

} // namespace

void backward(const Tensor& loss) { run_backward(loss, nullptr); }
void backward(const Tensor& loss, GradSink& sink) { run_backward(loss, &sink); }

// --- op helpers -------------------------------------------------------------

namespace {

// Wires parents and the backprop closure onto out when recording is on and
// some parent participates in differentiation.
void link(const NodeRef& out, std::vector<NodeRef> parents,
          std::function<void(Node&, GradSink*)> backprop) {
    if (!detail::grad_enabled()) return;
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (!any) return;
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backprop = std::move(backprop);
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw std::invalid_argument(std::string(op) + ": undefined tensor");
}

} // namespace

// --- dense -------------------------------------------------------------------

Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor* bias) {
    check_defined(x, "dense");
    check_defined(w, "dense");
    if (x.shape().size() != 2 || w.shape().size() != 2) {
        throw std::invalid_argument("dense: expected x [n,in] and w [out,in], got " +
                                    shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const int n = x.shape()[0], in = x.shape()[1];
    const int out = w.shape()[0], win = w.shape()[1];
    if (in != win) {
        throw std::invalid_argument("dense: input width " + std::to_string(in) +
                                    " does not match weight width " + std::to_string(win));
    }
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != out)) {
        throw std::invalid_argument("dense: bias shape " + shape_str(bias->shape()) +
                                    " does not match " + std::to_string(out) + " outputs");
    }

    auto node = detail::make_node({n, out}, std::vector<double>(static_cast<size_t>(n) * out));
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    const double* bp = bias ? bias->data().data() : nullptr;
    double* yp = node->value.data();
    for (int r = 0; r < n; ++r) {
        const double* xr = xp + static_cast<size_t>(r) * in;
        double* yr = yp + static_cast<size_t>(r) * out;
        for (int o = 0; o < out; ++o) {
            const double* wr = wp + static_cast<size_t>(o) * in;
            double acc = bp ? bp[o] : 0.0;
            for (int i = 0; i < in; ++i) acc += xr[i] * wr[i];
            yr[o] = acc;
        }
    }

    std::vector<NodeRef> parents{x.node(), w.node()};
    if (bias) parents.push_back(bias->node());
    link(node, std::move(parents), [n, in, out](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        const double* g = self.grad.data();
        if (xn.requires_grad) {
            double* gx = detail::grad_buffer_for(xn, sink).data();
            const double* wp2 = wn.value.data();
            for (int r = 0; r < n; ++r) {
                const double* gr = g + static_cast<size_t>(r) * out;
                double* gxr = gx + static_cast<size_t>(r) * in;
                for (int o = 0; o < out; ++o) {
                    const double gv = gr[o];
                    const double* wr = wp2 + static_cast<size_t>(o) * in;
                    for (int i = 0; i < in; ++i) gxr[i] += gv * wr[i];
                }
            }
        }
        if (wn.requires_grad) {
            double* gw = detail::grad_buffer_for(wn, sink).data();
            const double* xp2 = xn.value.data();
            for (int r = 0; r < n; ++r) {
                const double* gr = g + static_cast<size_t>(r) * out;
                const double* xr = xp2 + static_cast<size_t>(r) * in;
                for (int o = 0; o < out; ++o) {
                    const double gv = gr[o];
                    double* gwr = gw + static_cast<size_t>(o) * in;
                    for (int i = 0; i < in; ++i) gwr[i] += gv * xr[i];
                }
            }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Node& bn = *self.parents[2];
            double* gb = detail::grad_buffer_for(bn, sink).data();
            for (int r = 0; r < n; ++r) {
                const double* gr = g + static_cast<size_t>(r) * out;
                for (int o = 0; o < out; ++o) gb[o] += gr[o];
            }
        }
    });
    return Tensor(node);
}

// --- conv3x3 ------------------------------------------------------------------

Tensor conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor* bias) {
    check_defined(x, "conv3x3");
    check_defined(w, "conv3x3");
    if (x.shape().size() != 4) {
        throw std::invalid_argument("conv3x3: expected input [n,c,h,w], got " +
                                    shape_str(x.shape()));
    }
    if (w.shape().size() != 4 || w.shape()[2] != 3 || w.shape()[3] != 3) {
        throw std::invalid_argument("conv3x3: expected kernel [oc,ic,3,3], got " +
                                    shape_str(w.shape()));
    }
    const int n = x.shape()[0], ic = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
    const int oc = w.shape()[0];
    if (w.shape()[1] != ic) {
        throw std::invalid_argument("conv3x3: kernel expects " + std::to_string(w.shape()[1]) +
                                    " input channels, input has " + std::to_string(ic));
    }
    if (bias && (bias->shape().size() != 1 || bias->shape()[0] != oc)) {
        throw std::invalid_argument("conv3x3: bias shape " + shape_str(bias->shape()) +
                                    " does not match " + std::to_string(oc) + " channels");
    }

    const size_t plane = static_cast<size_t>(h) * wd;
    auto node = detail::make_node({n, oc, h, wd},
                                  std::vector<double>(static_cast<size_t>(n) * oc * plane));
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    const double* bp = bias ? bias->data().data() : nullptr;
    double* yp = node->value.data();

    for (int b = 0; b < n; ++b) {
        for (int o = 0; o < oc; ++o) {
            double* op = yp + (static_cast<size_t>(b) * oc + o) * plane;
            std::fill(op, op + plane, bp ? bp[o] : 0.0);
            for (int c = 0; c < ic; ++c) {
                const double* cp = xp + (static_cast<size_t>(b) * ic + c) * plane;
                const double* k = wp + (static_cast<size_t>(o) * ic + c) * 9;
                for (int ky = 0; ky < 3; ++ky) {
                    const int dy = ky - 1;
                    const int i0 = std::max(0, -dy), i1 = h - std::max(0, dy);
                    for (int kx = 0; kx < 3; ++kx) {
                        const int dx = kx - 1;
                        const double kv = k[ky * 3 + kx];
                        const int j0 = std::max(0, -dx), j1 = wd - std::max(0, dx);
                        for (int i = i0; i < i1; ++i) {
                            const double* xrow = cp + static_cast<size_t>(i + dy) * wd + dx;
                            double* orow = op + static_cast<size_t>(i) * wd;
                            for (int j = j0; j < j1; ++j) orow[j] += kv * xrow[j];
                        }
                    }
                }
            }
        }
    }

    std::vector<NodeRef> parents{x.node(), w.node()};
    if (bias) parents.push_back(bias->node());
    link(node, std::move(parents), [n, ic, oc, h, wd, plane](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        Node& wn = *self.parents[1];
        const double* g = self.grad.data();
        const double* xp2 = xn.value.data();
        const double* wp2 = wn.value.data();

        if (xn.requires_grad) {
            double* gx = detail::grad_buffer_for(xn, sink).data();
            for (int b = 0; b < n; ++b) {
                for (int o = 0; o < oc; ++o) {
                    const double* gp = g + (static_cast<size_t>(b) * oc + o) * plane;
                    for (int c = 0; c < ic; ++c) {
                        double* gxp = gx + (static_cast<size_t>(b) * ic + c) * plane;
                        const double* k = wp2 + (static_cast<size_t>(o) * ic + c) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int dy = ky - 1;
                            const int i0 = std::max(0, -dy), i1 = h - std::max(0, dy);
                            for (int kx = 0; kx < 3; ++kx) {
                                const int dx = kx - 1;
                                const double kv = k[ky * 3 + kx];
                                const int j0 = std::max(0, -dx), j1 = wd - std::max(0, dx);
                                for (int i = i0; i < i1; ++i) {
                                    double* gxrow = gxp + static_cast<size_t>(i + dy) * wd + dx;
                                    const double* grow = gp + static_cast<size_t>(i) * wd;
                                    for (int j = j0; j < j1; ++j) gxrow[j] += kv * grow[j];
                                }
                            }
                        }
                    }
                }
            }
        }
        if (wn.requires_grad) {
            double* gw = detail::grad_buffer_for(wn, sink).data();
            for (int b = 0; b < n; ++b) {
                for (int o = 0; o < oc; ++o) {
                    const double* gp = g + (static_cast<size_t>(b) * oc + o) * plane;
                    for (int c = 0; c < ic; ++c) {
                        const double* cp = xp2 + (static_cast<size_t>(b) * ic + c) * plane;
                        double* gk = gw + (static_cast<size_t>(o) * ic + c) * 9;
                        for (int ky = 0; ky < 3; ++ky) {
                            const int dy = ky - 1;
                            const int i0 = std::max(0, -dy), i1 = h - std::max(0, dy);
                            for (int kx = 0; kx < 3; ++kx) {
                                const int dx = kx - 1;
                                const int j0 = std::max(0, -dx), j1 = wd - std::max(0, dx);
                                double acc = 0.0;
                                for (int i = i0; i < i1; ++i) {
                                    const double* xrow = cp + static_cast<size_t>(i + dy) * wd + dx;
                                    const double* grow = gp + static_cast<size_t>(i) * wd;
                                    for (int j = j0; j < j1; ++j) acc += grow[j] * xrow[j];
                                }
                                gk[ky * 3 + kx] += acc;
                            }
                        }
                    }
                }
            }
        }
        if (self.parents.size() > 2 && self.parents[2]->requires_grad) {
            Node& bn = *self.parents[2];
            double* gb = detail::grad_buffer_for(bn, sink).data();
            for (int b = 0; b < n; ++b) {
                for (int o = 0; o < oc; ++o) {
                    const double* gp = g + (static_cast<size_t>(b) * oc + o) * plane;
                    double acc = 0.0;
                    for (size_t t = 0; t < plane; ++t) acc += gp[t];
                    gb[o] += acc;
                }
            }
        }
    });
    return Tensor(node);
}

// --- elementwise / structural ---------------------------------------------

Tensor relu(const Tensor& x) {
    check_defined(x, "relu");
    auto node = detail::make_node(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    for (double& v : node->value) v = v > 0.0 ? v : 0.0;
    link(node, {x.node()}, [](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        double* gx = detail::grad_buffer_for(xn, sink).data();
        const double* g = self.grad.data();
        const double* xv = xn.value.data();
        for (size_t i = 0; i < self.value.size(); ++i) {
            if (xv[i] > 0.0) gx[i] += g[i];
        }
    });
    return Tensor(node);
}

Tensor maxpool2(const Tensor& x) {
    check_defined(x, "maxpool2");
    if (x.shape().size() != 4) {
        throw std::invalid_argument("maxpool2: expected input [n,c,h,w], got " +
                                    shape_str(x.shape()));
    }
    const int n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
    const int oh = h / 2, ow = w / 2;
    if (oh == 0 || ow == 0) {
        throw std::invalid_argument("maxpool2: input plane " + std::to_string(h) + "x" +
                                    std::to_string(w) + " too small to pool");
    }
    const size_t planes = static_cast<size_t>(n) * c;
    auto node = detail::make_node({n, c, oh, ow},
                                  std::vector<double>(planes * oh * ow));
    auto arg = std::make_shared<std::vector<int64_t>>(planes * oh * ow);
    const double* xp = x.data().data();
    double* yp = node->value.data();
    for (size_t p = 0; p < planes; ++p) {
        const double* in = xp + p * h * w;
        double* out = yp + p * oh * ow;
        int64_t* ap = arg->data() + p * oh * ow;
        const int64_t base = static_cast<int64_t>(p) * h * w;
        for (int i = 0; i < oh; ++i) {
            for (int j = 0; j < ow; ++j) {
                const int r = 2 * i, cc = 2 * j;
                int64_t best = static_cast<int64_t>(r) * w + cc;
                double bv = in[best];
                const int64_t cand[3] = {best + 1, best + w, best + w + 1};
                for (int64_t k : cand) {
                    if (in[k] > bv) { bv = in[k]; best = k; }
                }
                out[static_cast<size_t>(i) * ow + j] = bv;
                ap[static_cast<size_t>(i) * ow + j] = base + best;
            }
        }
    }
    link(node, {x.node()}, [arg](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        double* gx = detail::grad_buffer_for(xn, sink).data();
        const double* g = self.grad.data();
        const auto& a = *arg;
        for (size_t i = 0; i < self.value.size(); ++i) gx[a[i]] += g[i];
    });
    return Tensor(node);
}

Tensor flatten_rows(const Tensor& x) {
    check_defined(x, "flatten");
    if (x.shape().empty()) throw std::invalid_argument("flatten: rank-0 tensor");
    const int n = x.shape()[0];
    const int64_t rest = n > 0 ? static_cast<int64_t>(x.size()) / n : numel(Shape(x.shape().begin() + 1, x.shape().end()));
    auto node = detail::make_node({n, static_cast<int>(rest)},
                                  std::vector<double>(x.data().begin(), x.data().end()));
    link(node, {x.node()}, [](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        double* gx = detail::grad_buffer_for(xn, sink).data();
        const double* g = self.grad.data();
        for (size_t i = 0; i < self.value.size(); ++i) gx[i] += g[i];
    });
    return Tensor(node);
}

Tensor log_softmax_rows(const Tensor& x) {
    check_defined(x, "log_softmax");
    if (x.shape().empty()) throw std::invalid_argument("log_softmax: rank-0 tensor");
    const int classes = x.shape().back();
    if (classes <= 0) throw std::invalid_argument("log_softmax: empty class dimension");
    const size_t rows = x.size() > 0 ? static_cast<size_t>(x.size()) / classes : 0;
    auto node = detail::make_node(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
    double* yp = node->value.data();
    for (size_t r = 0; r < rows; ++r) {
        double* row = yp + r * classes;
        double m = row[0];
        for (int c2 = 1; c2 < classes; ++c2) m = std::max(m, row[c2]);
        double s = 0.0;
        for (int c2 = 0; c2 < classes; ++c2) s += std::exp(row[c2] - m);
        const double lse = m + std::log(s);
        for (int c2 = 0; c2 < classes; ++c2) row[c2] -= lse;
    }
    link(node, {x.node()}, [classes](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        double* gx = detail::grad_buffer_for(xn, sink).data();
        const double* g = self.grad.data();
        const double* y = self.value.data();
        const size_t rows = self.value.size() / classes;
        for (size_t r = 0; r < rows; ++r) {
            const double* gr = g + r * classes;
            const double* yr = y + r * classes;
            double* gxr = gx + r * classes;
            double gsum = 0.0;
            for (int c2 = 0; c2 < classes; ++c2) gsum += gr[c2];
            for (int c2 = 0; c2 < classes; ++c2) {
                gxr[c2] += gr[c2] - std::exp(yr[c2]) * gsum;
            }
        }
    });
    return Tensor(node);
}

// --- loss primitives --------------------------------------------------------

Tensor pick_negative(const Tensor& x, int64_t index) {
    check_defined(x, "pick_negative");
    if (index < 0 || index >= x.size()) {
        throw std::out_of_range("pick_negative: index " + std::to_string(index) +
                                " outside tensor of " + std::to_string(x.size()) + " values");
    }
    auto node = detail::make_node({1}, {-x.data()[static_cast<size_t>(index)]});
    link(node, {x.node()}, [index](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        detail::grad_buffer_for(xn, sink)[static_cast<size_t>(index)] -= self.grad[0];
    });
    return Tensor(node);
}

Tensor negative_dot_const(const Tensor& x, std::vector<double> target) {
    check_defined(x, "negative_dot_const");
    if (static_cast<int64_t>(target.size()) != x.size()) {
        throw std::invalid_argument("negative_dot_const: target has " +
                                    std::to_string(target.size()) + " values, tensor has " +
                                    std::to_string(x.size()));
    }
    double acc = 0.0;
    for (size_t i = 0; i < target.size(); ++i) acc -= target[i] * x.data()[i];
    auto node = detail::make_node({1}, {acc});
    auto t = std::make_shared<std::vector<double>>(std::move(target));
    link(node, {x.node()}, [t](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        double* gx = detail::grad_buffer_for(xn, sink).data();
        const double g = self.grad[0];
        for (size_t i = 0; i < t->size(); ++i) gx[i] -= g * (*t)[i];
    });
    return Tensor(node);
}

Tensor mse_to_const(const Tensor& x, std::vector<double> target) {
    check_defined(x, "mse_to_const");
    if (static_cast<int64_t>(target.size()) != x.size()) {
        throw std::invalid_argument("mse_to_const: target has " + std::to_string(target.size()) +
                                    " values, tensor has " + std::to_string(x.size()));
    }
    if (target.empty()) throw std::invalid_argument("mse_to_const: empty tensors");
    double acc = 0.0;
    for (size_t i = 0; i < target.size(); ++i) {
        const double d = x.data()[i] - target[i];
        acc += d * d;
    }
    acc /= static_cast<double>(target.size());
    auto node = detail::make_node({1}, {acc});
    auto t = std::make_shared<std::vector<double>>(std::move(target));
    link(node, {x.node()}, [t](Node& self, GradSink* sink) {
        Node& xn = *self.parents[0];
        if (!xn.requires_grad) return;
        double* gx = detail::grad_buffer_for(xn, sink).data();
        const double scale = 2.0 * self.grad[0] / static_cast<double>(t->size());
        for (size_t i = 0; i < t->size(); ++i) {
            gx[i] += scale * (xn.value[i] - (*t)[i]);
        }
    });
    return Tensor(node);
}

Tensor linear_combination(std::span<const Tensor> scalars, std::span<const double> coeffs,
                          double bias) {
    if (scalars.size() != coeffs.size()) {
        throw std::invalid_argument("linear_combination: " + std::to_string(scalars.size()) +
                                    " terms vs " + std::to_string(coeffs.size()) + " coefficients");
    }
    double acc = bias;
    std::vector<NodeRef> parents;
    parents.reserve(scalars.size());
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].size() != 1) {
            throw std::invalid_argument("linear_combination: term " + std::to_string(i) +
                                        " is not a scalar");
        }
        acc += coeffs[i] * scalars[i].value();
        parents.push_back(scalars[i].node());
    }
    auto node = detail::make_node({1}, {acc});
    auto cs = std::make_shared<std::vector<double>>(coeffs.begin(), coeffs.end());
    link(node, std::move(parents), [cs](Node& self, GradSink* sink) {
        const double g = self.grad[0];
        for (size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (!p.requires_grad) continue;
            detail::grad_buffer_for(p, sink)[0] += g * (*cs)[i];
        }
    });
    return Tensor(node);
}

Tensor stack_scalars(std::span<const Tensor> scalars) {
    if (scalars.empty()) throw std::invalid_argument("stack_scalars: empty input");
    std::vector<double> vals(scalars.size());
    std::vector<NodeRef> parents;
    parents.reserve(scalars.size());
    for (size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].size() != 1) {
            throw std::invalid_argument("stack_scalars: element " + std::to_string(i) +
                                        " is not a scalar");
        }
        vals[i] = scalars[i].value();
        parents.push_back(scalars[i].node());
    }
    auto node = detail::make_node({static_cast<int>(scalars.size())}, std::move(vals));
    link(node, std::move(parents), [](Node& self, GradSink* sink) {
        for (size_t i = 0; i < self.parents.size(); ++i) {
            Node& p = *self.parents[i];
            if (!p.requires_grad) continue;
            detail::grad_buffer_for(p, sink)[0] += self.grad[i];
        }
    });
    return Tensor(node);
}

Tensor softmax_scaled(const Tensor& v, double scale) {
    check_defined(v, "softmax_scaled");
    if (v.shape().size() != 1 || v.size() == 0) {
        throw std::invalid_argument("softmax_scaled: expected a nonempty vector");
    }
    const size_t k = static_cast<size_t>(v.size());
    std::vector<double> y(k);
    double m = v.data()[0] * scale;
    for (size_t i = 1; i < k; ++i) m = std::max(m, v.data()[i] * scale);
    double s = 0.0;
    for (size_t i = 0; i < k; ++i) {
        y[i] = std::exp(v.data()[i] * scale - m);
        s += y[i];
    }
    for (size_t i = 0; i < k; ++i) y[i] /= s;
    auto node = detail::make_node({static_cast<int>(k)}, std::move(y));
    link(node, {v.node()}, [scale](Node& self, GradSink* sink) {
        Node& vn = *self.parents[0];
        if (!vn.requires_grad) return;
        double* gv = detail::grad_buffer_for(vn, sink).data();
        const double* g = self.grad.data();
        const double* y2 = self.value.data();
        double dot = 0.0;
        for (size_t i = 0; i < self.value.size(); ++i) dot += g[i] * y2[i];
        for (size_t i = 0; i < self.value.size(); ++i) {
            gv[i] += scale * y2[i] * (g[i] - dot);
        }
    });
    return Tensor(node);
}

Tensor dot(const Tensor& a, const Tensor& b) {
    check_defined(a, "dot");
    check_defined(b, "dot");
    if (a.size() != b.size()) {
        throw std::invalid_argument("dot: size mismatch " + std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()));
    }
    double acc = 0.0;
    for (int64_t i = 0; i < a.size(); ++i) acc += a.data()[i] * b.data()[i];
    auto node = detail::make_node({1}, {acc});
    link(node, {a.node(), b.node()}, [](Node& self, GradSink* sink) {
        Node& an = *self.parents[0];
        Node& bn = *self.parents[1];
        const double g = self.grad[0];
        if (an.requires_grad) {
            double* ga = detail::grad_buffer_for(an, sink).data();
            for (size_t i = 0; i < an.value.size(); ++i) ga[i] += g * bn.value[i];
        }
        if (bn.requires_grad) {
            double* gb = detail::grad_buffer_for(bn, sink).data();
            for (size_t i = 0; i < bn.value.size(); ++i) gb[i] += g * an.value[i];
        }
    });
    return Tensor(node);
}

// --- value helpers -----------------------------------------------------------

int64_t argmax(std::span<const double> v) {
    if (v.empty()) throw std::invalid_argument("argmax: empty range");
    int64_t best = 0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = static_cast<int64_t>(i);
    }
    return best;
}

std::vector<double> probabilities_from_log(std::span<const double> logp) {
    std::vector<double> p(logp.size());
    double s = 0.0;
    for (size_t i = 0; i < logp.size(); ++i) {
        p[i] = std::exp(logp[i]);
        s += p[i];
    }
    if (s > 0.0) {
        for (double& v : p) v /= s;
    }
    return p;
}

} // namespace mmel::diff
