#include "mmel/model.hpp"

#include "mmel/rng.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mmel::diff {

namespace {

// Per-sample shape after a layer; throws on incompatibility.
Shape compose(const Shape& in, const Layer& layer) {
    if (std::holds_alternative<DenseLayer>(layer)) {
        const auto& d = std::get<DenseLayer>(layer);
        if (in.size() != 1 || in[0] != d.in) {
            throw std::invalid_argument("expected input [" + std::to_string(d.in) + "], got " +
                                        shape_str(in));
        }
        return {d.out};
    }
    if (std::holds_alternative<Conv2dLayer>(layer)) {
        const auto& c = std::get<Conv2dLayer>(layer);
        if (in.size() != 3 || in[0] != c.in_ch) {
            throw std::invalid_argument("expected input [" + std::to_string(c.in_ch) +
                                        ",h,w], got " + shape_str(in));
        }
        return {c.out_ch, in[1], in[2]};
    }
    if (std::holds_alternative<MaxPool2Layer>(layer)) {
        if (in.size() != 3 || in[1] < 2 || in[2] < 2) {
            throw std::invalid_argument("expected input [c,h,w] with h,w >= 2, got " +
                                        shape_str(in));
        }
        return {in[0], in[1] / 2, in[2] / 2};
    }
    if (std::holds_alternative<FlattenLayer>(layer)) {
        return {static_cast<int>(numel(in))};
    }
    if (std::holds_alternative<LogSoftmaxLayer>(layer)) {
        if (in.size() != 1 || in[0] < 1) {
            throw std::invalid_argument("expected a class vector, got " + shape_str(in));
        }
        return in;
    }
    return in; // relu
}

} // namespace

std::string layer_kind(const Layer& layer) {
    if (std::holds_alternative<DenseLayer>(layer)) return "dense";
    if (std::holds_alternative<Conv2dLayer>(layer)) return "conv2d";
    if (std::holds_alternative<ReluLayer>(layer)) return "relu";
    if (std::holds_alternative<MaxPool2Layer>(layer)) return "maxpool2";
    if (std::holds_alternative<FlattenLayer>(layer)) return "flatten";
    return "logsoftmax";
}

Tensor Model::register_param(Shape shape) {
    const auto slot = static_cast<int>(params_.size());
    auto n = numel(shape);
    Tensor t = Tensor::param(std::move(shape), std::vector<double>(static_cast<size_t>(n), 0.0),
                             slot);
    params_.push_back(t);
    return t;
}

Model& Model::add_dense(int in, int out, bool bias) {
    if (in <= 0 || out <= 0) throw std::invalid_argument("dense: extents must be positive");
    DenseLayer d;
    d.in = in;
    d.out = out;
    d.has_bias = bias;
    d.w = register_param({out, in});
    if (bias) d.b = register_param({out});
    layers_.emplace_back(std::move(d));
    return *this;
}

Model& Model::add_conv2d(int in_ch, int out_ch) {
    if (in_ch <= 0 || out_ch <= 0) throw std::invalid_argument("conv2d: channels must be positive");
    Conv2dLayer c;
    c.in_ch = in_ch;
    c.out_ch = out_ch;
    c.w = register_param({out_ch, in_ch, 3, 3});
    c.b = register_param({out_ch});
    layers_.emplace_back(std::move(c));
    return *this;
}

Model& Model::add_relu() {
    layers_.emplace_back(ReluLayer{});
    return *this;
}

Model& Model::add_maxpool2() {
    layers_.emplace_back(MaxPool2Layer{});
    return *this;
}

Model& Model::add_flatten() {
    layers_.emplace_back(FlattenLayer{});
    return *this;
}

Model& Model::add_log_softmax() {
    layers_.emplace_back(LogSoftmaxLayer{});
    return *this;
}

void Model::init_params(uint64_t seed) {
    validate();
    for (size_t li = 0; li < layers_.size(); ++li) {
        Layer& layer = layers_[li];
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            auto rng = RngStream::keyed({seed, 0x696e6974ULL, li, 0});
            const double stddev = std::sqrt(2.0 / d->in);
            for (double& v : d->w.mutable_data()) v = stddev * rng.next_normal();
            if (d->has_bias) {
                for (double& v : d->b.mutable_data()) v = 0.0;
            }
        } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
            auto rng = RngStream::keyed({seed, 0x696e6974ULL, li, 0});
            const double stddev = std::sqrt(2.0 / (c->in_ch * 9.0));
            for (double& v : c->w.mutable_data()) v = stddev * rng.next_normal();
            for (double& v : c->b.mutable_data()) v = 0.0;
        }
    }
}

void Model::validate() const {
    Shape cur = input_shape_;
    for (size_t li = 0; li < layers_.size(); ++li) {
        try {
            cur = compose(cur, layers_[li]);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("layer " + std::to_string(li) + " (" +
                                        layer_kind(layers_[li]) + "): " + e.what());
        }
    }
}

Shape Model::output_shape() const {
    Shape cur = input_shape_;
    for (const auto& layer : layers_) cur = compose(cur, layer);
    return cur;
}

Tensor Model::forward(const Tensor& batch) const {
    if (!batch.defined() || batch.shape().empty()) {
        throw std::invalid_argument("forward: batch must have a leading sample dimension");
    }
    const Shape got(batch.shape().begin() + 1, batch.shape().end());
    if (got != input_shape_) {
        throw std::invalid_argument("forward: model expects per-sample shape " +
                                    shape_str(input_shape_) + ", got " + shape_str(got));
    }
    Tensor cur = batch;
    for (size_t li = 0; li < layers_.size(); ++li) {
        const Layer& layer = layers_[li];
        try {
            if (auto* d = std::get_if<DenseLayer>(&layer)) {
                cur = dense_forward(cur, d->w, d->has_bias ? &d->b : nullptr);
            } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
                cur = conv3x3_forward(cur, c->w, &c->b);
            } else if (std::holds_alternative<ReluLayer>(layer)) {
                cur = relu(cur);
            } else if (std::holds_alternative<MaxPool2Layer>(layer)) {
                cur = maxpool2(cur);
            } else if (std::holds_alternative<FlattenLayer>(layer)) {
                cur = flatten_rows(cur);
            } else {
                cur = log_softmax_rows(cur);
            }
        } catch (const std::exception& e) {
            throw std::invalid_argument("layer " + std::to_string(li) + " (" + layer_kind(layer) +
                                        "): " + e.what());
        }
    }
    return cur;
}

std::string Model::signature() const {
    std::ostringstream os;
    for (size_t li = 0; li < layers_.size(); ++li) {
        if (li) os << "|";
        const Layer& layer = layers_[li];
        if (auto* d = std::get_if<DenseLayer>(&layer)) {
            os << "dense(" << d->in << "," << d->out << (d->has_bias ? "" : ",nobias") << ")";
        } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
            os << "conv2d(" << c->in_ch << "," << c->out_ch << ")";
        } else {
            os << layer_kind(layer);
        }
    }
    return os.str();
}

Model Model::from_signature(Shape input_shape, const std::string& signature) {
    Model m(std::move(input_shape));
    std::stringstream ss(signature);
    std::string tok;
    while (std::getline(ss, tok, '|')) {
        if (tok.empty()) continue;
        if (tok.rfind("dense(", 0) == 0) {
            int in = 0, out = 0;
            char extra[16] = {0};
            if (std::sscanf(tok.c_str(), "dense(%d,%d,%15[^)])", &in, &out, extra) >= 2) {
                m.add_dense(in, out, std::string(extra) != "nobias");
            } else {
                throw std::invalid_argument("bad layer token: " + tok);
            }
        } else if (tok.rfind("conv2d(", 0) == 0) {
            int ic = 0, oc = 0;
            if (std::sscanf(tok.c_str(), "conv2d(%d,%d)", &ic, &oc) == 2) {
                m.add_conv2d(ic, oc);
            } else {
                throw std::invalid_argument("bad layer token: " + tok);
            }
        } else if (tok == "relu") {
            m.add_relu();
        } else if (tok == "maxpool2") {
            m.add_maxpool2();
        } else if (tok == "flatten") {
            m.add_flatten();
        } else if (tok == "logsoftmax") {
            m.add_log_softmax();
        } else {
            throw std::invalid_argument("bad layer token: " + tok);
        }
    }
    m.validate();
    return m;
}

} // namespace mmel::diff
