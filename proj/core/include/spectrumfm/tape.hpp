#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "spectrumfm/mat.hpp"
#include "spectrumfm/params.hpp"
#include "spectrumfm/rng.hpp"

namespace spectrumfm {

// Reverse-mode autodiff over Mats. A Tape is built once per forward pass,
// backward() walks it in reverse creation order, and parameter gradients are
// flushed into a GradSink so parallel workers never touch shared state.
//
// Tapes constructed with grads_enabled=false skip all gradient bookkeeping
// and serve as the single forward implementation for inference paths.
class Tape {
public:
    using NodeId = int;

    explicit Tape(bool grads_enabled = false) : grads_(grads_enabled) {}

    bool grads_enabled() const { return grads_; }

    // Leaves.
    NodeId leaf(const Param& p);              // view of p.value; tracked iff p.trainable
    NodeId input(Mat v, bool track = false);  // owned value
    NodeId constant(Mat v) { return input(std::move(v), false); }

    // Core ops.
    NodeId matmul(NodeId a, NodeId b);     // A * B
    NodeId matmul_nt(NodeId a, NodeId b);  // A * B^T
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);            // elementwise
    NodeId add_rowvec(NodeId x, NodeId bias);  // bias is 1xC, broadcast over rows
    NodeId scale(NodeId a, double k);
    NodeId affine(NodeId a, double k, double c);  // k*x + c
    NodeId gelu(NodeId a);                        // tanh-form GELU
    NodeId sigmoid(NodeId a);
    NodeId tanh_op(NodeId a);
    NodeId softmax_rows(NodeId a);
    NodeId layer_norm_rows(NodeId x, NodeId gain, NodeId bias, double eps);
    NodeId conv1d_same(NodeId x, NodeId w, int kernel);  // x NxCin, w (K*Cin)xCout
    NodeId depthwise3(NodeId x, NodeId w);               // w 3xC, zero padding 1
    NodeId rows(NodeId a, int r0, int n);
    NodeId cols(NodeId a, int c0, int n);
    NodeId hcat(const std::vector<NodeId>& parts);
    NodeId mean_rows(NodeId a);  // 1xC
    NodeId dropout(NodeId a, double rate, Rng& rng);

    // Scalar-valued losses (all 1x1).
    NodeId masked_mse(NodeId pred, const Mat& target, const std::vector<uint8_t>& keep);
    NodeId sqdist(NodeId pred, const Mat& target);
    NodeId cross_entropy_logits(NodeId logits, int label);
    NodeId bce_logit(NodeId logit, double target);

    const Mat& val(NodeId id) const { return node(id).value(); }
    double scalar(NodeId id) const { return val(id).v[0]; }
    const Mat& grad_of(NodeId id) const;

    // Backpropagates from a 1x1 root; parameter gradients land in sink.
    void backward(NodeId root, GradSink& sink);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Mat owned;
        const Mat* view = nullptr;
        Mat grad;
        bool tracked = false;
        const Param* param = nullptr;
        std::function<void(Tape&)> back;

        const Mat& value() const { return view ? *view : owned; }
    };

    Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
    const Node& node(NodeId id) const { return nodes_[static_cast<size_t>(id)]; }

    NodeId push(Mat value, bool tracked);
    Mat& grad(NodeId id) { return node(id).grad; }
    bool tracked(NodeId id) const { return node(id).tracked; }

    std::vector<Node> nodes_;
    bool grads_ = false;
    GradSink* sink_ = nullptr;
};

using NodeId = Tape::NodeId;

// Scalar activations shared by the tape and by plain evaluation code.
double gelu_scalar(double x);
double gelu_grad_scalar(double x);
double sigmoid_scalar(double x);

}  // namespace spectrumfm
