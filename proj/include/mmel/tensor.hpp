#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mmel::diff {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node;
using NodeRef = std::shared_ptr<Node>;

} // namespace detail

/// Per-parameter gradient accumulation target, used when several group
/// losses are differentiated independently and their contributions summed
/// in a fixed order afterwards. Slot indices match Model::params() order.
struct GradSink {
    std::vector<std::vector<double>> slots;
};

/// Dense n-dimensional array of doubles with an optional reverse-mode
/// tape node. Copies are shallow; the underlying node is shared.
///
/// Values are expected to stay finite: NaN or Inf appearing in a loss is
/// treated as an error state by the training loop.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor from_data(Shape shape, std::vector<double> values);
    static Tensor scalar(double v);
    /// Trainable leaf. slot is its index in the owning model's parameter
    /// list and routes gradients into GradSink buffers.
    static Tensor param(Shape shape, std::vector<double> values, int slot);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int64_t size() const;
    std::span<const double> data() const;
    /// Mutable view of the raw values. Only meaningful on leaves
    /// (parameters, inputs); rewriting an interior node corrupts the tape.
    std::span<double> mutable_data();

    bool requires_grad() const;
    int param_slot() const;

    /// Value of a one-element tensor.
    double value() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    void clear_grad();
    /// Adds g into the grad buffer (allocating it at zero first); used
    /// when reducing GradSink contributions into the parameters.
    void accumulate_grad(std::span<const double> g);

    detail::NodeRef node() const { return node_; }
    explicit Tensor(detail::NodeRef n) : node_(std::move(n)) {}

private:
    detail::NodeRef node_;
};

/// Disables tape recording on the current thread for its lifetime
/// (evaluation and teacher predictions).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording_enabled();

/// Reverse-mode sweep from a scalar loss. Accumulates d loss / d param
/// into each reachable parameter's grad buffer. The tape below the loss
/// is consumed: differentiating the same loss twice is an error.
void backward(const Tensor& loss);

/// Same sweep, but parameter gradients go into sink.slots[param_slot]
/// (which must be pre-sized) instead of the parameters' own buffers.
/// Lets independent losses be differentiated concurrently against a
/// shared set of parameters.
void backward(const Tensor& loss, GradSink& sink);

// --- primitive ops ------------------------------------------------------

/// x:[n,in], w:[out,in], bias:[out] or null -> [n,out]
Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor* bias);

/// 3x3 convolution, padding 1, stride 1.
/// x:[n,ic,h,w], w:[oc,ic,3,3], bias:[oc] or null -> [n,oc,h,w]
Tensor conv3x3_forward(const Tensor& x, const Tensor& w, const Tensor* bias);

Tensor relu(const Tensor& x);

/// 2x2 max pooling, stride 2; odd trailing rows/columns are dropped.
Tensor maxpool2(const Tensor& x);

/// [n, d1, ..., dk] -> [n, d1*...*dk]
Tensor flatten_rows(const Tensor& x);

/// Row-wise log-softmax over the last dimension, computed with
/// max-subtraction so each row satisfies logsumexp(row) == 0.
Tensor log_softmax_rows(const Tensor& x);

/// -x[index], the negative log-likelihood pick used by hard cross-entropy.
Tensor pick_negative(const Tensor& x, int64_t index);

/// -sum_i target[i] * x[i] with target held constant.
Tensor negative_dot_const(const Tensor& x, std::vector<double> target);

/// mean((x - target)^2) with target held constant.
Tensor mse_to_const(const Tensor& x, std::vector<double> target);

/// sum_i coeffs[i] * scalars[i] + bias, coefficients held constant.
Tensor linear_combination(std::span<const Tensor> scalars,
                          std::span<const double> coeffs, double bias = 0.0);

/// k scalar nodes -> vector node [k].
Tensor stack_scalars(std::span<const Tensor> scalars);

/// softmax(scale * v) with max-subtraction; gradient flows through v.
Tensor softmax_scaled(const Tensor& v, double scale);

/// Inner product of two equally sized vectors; gradient flows to both.
Tensor dot(const Tensor& a, const Tensor& b);

// --- value-level helpers (no tape) ---------------------------------------

/// argmax of a contiguous range; ties resolve to the lowest index.
int64_t argmax(std::span<const double> v);

/// exp of log-probabilities, renormalized to sum exactly to ~1.
std::vector<double> probabilities_from_log(std::span<const double> logp);

} // namespace mmel::diff
