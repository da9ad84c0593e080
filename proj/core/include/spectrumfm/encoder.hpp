#pragma once

#include <vector>

#include "spectrumfm/params.hpp"
#include "spectrumfm/signals.hpp"
#include "spectrumfm/tape.hpp"

namespace spectrumfm::encoder {

// Architecture hyperparameters of the spectrum encoder.
struct EncoderConfig {
    int hidden_dim = 256;  // d
    int ff_dim = 512;      // feedforward inner dimension
    int heads = 8;         // H; per-head dim d_h = d / H
    int layers = 16;       // L stacked blocks
    int frame_len = 128;   // N
    double dropout = 0.1;
    int proj_kernel = 3;  // input projection conv width
    int dw_kernel = 3;    // depthwise conv width (fixed)
    int pw_kernel = 1;    // pointwise conv width (fixed)

    int head_dim() const { return hidden_dim / heads; }
    void validate() const;
};

struct FfnParams {
    Param *w1, *b1, *w2, *b2;
};
struct NormParams {
    Param *gain, *bias;
};
struct AttentionParams {
    // Combined projections, d x d; head h uses the column slice
    // [h*d_h, (h+1)*d_h). These four sites are the LoRA targets.
    Param *w_q, *w_k, *w_v, *w_o;
};
struct ConvParams {
    Param *pw1, *dw, *pw2;
};

struct BlockParams {
    FfnParams ffn1;
    NormParams norm1;
    AttentionParams attn;
    NormParams norm2;
    ConvParams conv;
    NormParams norm_conv;
    FfnParams ffn2;
    NormParams norm3;
};

struct EncoderParams {
    EncoderConfig cfg;
    Param* w_proj = nullptr;  // (proj_kernel*2) x d
    Mat pe;                   // frame_len x d, deterministic in (N, d)
    std::vector<BlockParams> blocks;
};

// The per-position hidden representation, one row per signal position.
using HiddenSequence = Mat;

constexpr double kLayerNormEps = 1e-6;

// Sinusoidal positional encoding; throws ConfigError for odd d.
Mat positional_encoding(int n, int d);

// Allocates and initialises all encoder parameters in the store.
EncoderParams build_encoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng);

// Substitutes effective weights at bind time (LoRA hooks in through this).
class WeightBinder {
public:
    virtual ~WeightBinder() = default;
    virtual NodeId bind(Tape& tape, const Param& w) const = 0;
};

// Training-time context; null pointer means eval mode (no dropout).
struct TrainCtx {
    double dropout_rate = 0.0;
    Rng* rng = nullptr;
};

struct BoundFfn {
    NodeId w1, b1, w2, b2, gain, bias;
};
struct BoundAttn {
    NodeId w_q, w_k, w_v, w_o, gain, bias;
};
struct BoundConv {
    NodeId pw1, dw, pw2, gain, bias;
};
struct BoundBlock {
    BoundFfn ffn1;
    BoundAttn attn;
    BoundConv conv;
    BoundFfn ffn2;
};

BoundBlock bind_block(Tape& tape, const BlockParams& p, const WeightBinder* binder);

// Sub-modules. Every module output is combined with its input through a
// residual connection followed by layer normalization; without the residual
// path around the convolution sandwich, stacks deeper than one block fail
// to train.
NodeId ffn_module(Tape& tape, NodeId x, const BoundFfn& p, const TrainCtx* train);
NodeId mhsa_module(Tape& tape, NodeId x, const BoundAttn& p, int heads, const TrainCtx* train);
NodeId conv_module_tape(Tape& tape, NodeId x, const BoundConv& p, const TrainCtx* train);
NodeId encoder_block_tape(Tape& tape, NodeId x, const BoundBlock& p, int heads,
                          const TrainCtx* train);

// Full forward: projection, positional encoding, L blocks. `input` is len x 2
// with len <= cfg.frame_len (shorter sequences reuse the PE prefix).
NodeId encode_tape(Tape& tape, const EncoderParams& params, NodeId input,
                   const WeightBinder* binder, const TrainCtx* train);

Mat frame_to_input(const signals::NormalizedFrame& frame);

enum class Mode { Train, Eval };

// Plain evaluation wrappers over the tape forward (single implementation).
Mat project(const signals::NormalizedFrame& frame, const Mat& w_proj, int kernel);
Mat feed_forward(const Mat& x, const FfnParams& p, const NormParams& n);
Mat mhsa(const Mat& x, const AttentionParams& p, int heads, const NormParams& n);
Mat conv_module(const Mat& x, const ConvParams& p, const NormParams& n);
Mat encoder_block(const Mat& x, const BlockParams& p, int heads);
Mat encode(const signals::NormalizedFrame& frame, const EncoderParams& params, Mode mode,
           Rng* dropout_rng = nullptr, const WeightBinder* binder = nullptr);

}  // namespace spectrumfm::encoder
