#pragma once

#include "mmel/tensor.hpp"

#include <string>
#include <variant>
#include <vector>

namespace mmel::diff {

struct DenseLayer {
    int in = 0;
    int out = 0;
    bool has_bias = true;
    Tensor w; // [out, in]
    Tensor b; // [out], undefined when has_bias is false
};

// 3x3 kernel, padding 1, stride 1.
struct Conv2dLayer {
    int in_ch = 0;
    int out_ch = 0;
    Tensor w; // [out_ch, in_ch, 3, 3]
    Tensor b; // [out_ch]
};

struct ReluLayer {};
struct MaxPool2Layer {};
struct FlattenLayer {};
struct LogSoftmaxLayer {};

using Layer = std::variant<DenseLayer, Conv2dLayer, ReluLayer, MaxPool2Layer,
                           FlattenLayer, LogSoftmaxLayer>;

std::string layer_kind(const Layer& layer);

/// Sequential stack of layers over a declared per-sample input shape.
/// Parameters are enumerated in declaration order (weights before bias),
/// which fixes their checkpoint order and GradSink slots.
class Model {
public:
    Model() = default;
    explicit Model(Shape input_shape) : input_shape_(std::move(input_shape)) {}

    Model& add_dense(int in, int out, bool bias = true);
    Model& add_conv2d(int in_ch, int out_ch);
    Model& add_relu();
    Model& add_maxpool2();
    Model& add_flatten();
    Model& add_log_softmax();

    /// He-style initialization, deterministic in the seed.
    void init_params(uint64_t seed);

    /// Checks that consecutive layer shapes compose on the declared input.
    /// Throws naming the first offending layer.
    void validate() const;

    /// batch: [n, input_shape...]. Returns the stack output; a tape is
    /// recorded unless a NoGradGuard is active.
    Tensor forward(const Tensor& batch) const;

    const Shape& input_shape() const { return input_shape_; }
    Shape output_shape() const;

    std::vector<Tensor>& params() { return params_; }
    const std::vector<Tensor>& params() const { return params_; }
    const std::vector<Layer>& layers() const { return layers_; }

    /// Compact architecture string, e.g.
    /// "conv2d(3,8)|relu|maxpool2|flatten|dense(512,10)|logsoftmax".
    std::string signature() const;
    static Model from_signature(Shape input_shape, const std::string& signature);

private:
    Shape input_shape_;
    std::vector<Layer> layers_;
    std::vector<Tensor> params_;

    Tensor register_param(Shape shape);
};

} // namespace mmel::diff
