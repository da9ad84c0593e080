#include "spectrumfm/encoder.hpp"

#include <cmath>
#include <string>

namespace spectrumfm::encoder {

void EncoderConfig::validate() const {
    if (hidden_dim < 2 || hidden_dim % 2 != 0)
        throw ConfigError("encoder: hidden_dim must be even and >= 2");
    if (heads < 1 || hidden_dim % heads != 0)
        throw ConfigError("encoder: hidden_dim must be divisible by heads");
    if (head_dim() < 1) throw ConfigError("encoder: head dim must be >= 1");
    if (layers < 1) throw ConfigError("encoder: layers must be >= 1");
    if (ff_dim < 1) throw ConfigError("encoder: ff_dim must be >= 1");
    if (frame_len < 2) throw ConfigError("encoder: frame_len must be >= 2");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder: dropout must be in [0, 1)");
    if (proj_kernel < 1 || proj_kernel % 2 == 0)
        throw ConfigError("encoder: proj_kernel must be odd");
    if (dw_kernel != 3) throw ConfigError("encoder: depthwise kernel is fixed at 3");
    if (pw_kernel != 1) throw ConfigError("encoder: pointwise kernel is fixed at 1");
}

Mat positional_encoding(int n, int d) {
    if (d % 2 != 0) throw ConfigError("positional_encoding: d must be even");
    if (n < 1 || d < 2) throw ConfigError("positional_encoding: invalid size");
    Mat pe(n, d);
    for (int p = 0; p < n; ++p) {
        double* row = pe.row(p);
        for (int i = 0; 2 * i < d; ++i) {
            const double angle = p / std::pow(10000.0, 2.0 * i / d);
            row[2 * i] = std::sin(angle);
            row[2 * i + 1] = std::cos(angle);
        }
    }
    return pe;
}

namespace {

FfnParams build_ffn(ParamStore& store, const std::string& prefix, int d, int ff, Rng& rng) {
    FfnParams p;
    p.w1 = store.create(prefix + ".w1", d, ff);
    p.b1 = store.create(prefix + ".b1", 1, ff);
    p.w2 = store.create(prefix + ".w2", ff, d);
    p.b2 = store.create(prefix + ".b2", 1, d);
    init_xavier_uniform(p.w1->value, d, ff, rng);
    init_xavier_uniform(p.w2->value, ff, d, rng);
    return p;
}

NormParams build_norm(ParamStore& store, const std::string& prefix, int d) {
    NormParams p;
    p.gain = store.create(prefix + ".gain", 1, d);
    p.bias = store.create(prefix + ".bias", 1, d);
    p.gain->value.fill(1.0);
    return p;
}

}  // namespace

EncoderParams build_encoder(ParamStore& store, const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    EncoderParams params;
    params.cfg = cfg;
    const int d = cfg.hidden_dim;
    params.w_proj = store.create("proj.w", cfg.proj_kernel * 2, d);
    init_xavier_uniform(params.w_proj->value, 2 * cfg.proj_kernel, d * cfg.proj_kernel, rng);
    params.pe = positional_encoding(cfg.frame_len, d);
    params.blocks.resize(static_cast<size_t>(cfg.layers));
    for (int l = 0; l < cfg.layers; ++l) {
        const std::string bp = "blocks." + std::to_string(l);
        BlockParams& b = params.blocks[static_cast<size_t>(l)];
        b.ffn1 = build_ffn(store, bp + ".ffn1", d, cfg.ff_dim, rng);
        b.norm1 = build_norm(store, bp + ".ffn1.norm", d);
        b.attn.w_q = store.create(bp + ".attention.w_q", d, d);
        b.attn.w_k = store.create(bp + ".attention.w_k", d, d);
        b.attn.w_v = store.create(bp + ".attention.w_v", d, d);
        b.attn.w_o = store.create(bp + ".attention.w_o", d, d);
        init_xavier_uniform(b.attn.w_q->value, d, d, rng);
        init_xavier_uniform(b.attn.w_k->value, d, d, rng);
        init_xavier_uniform(b.attn.w_v->value, d, d, rng);
        init_xavier_uniform(b.attn.w_o->value, d, d, rng);
        b.norm2 = build_norm(store, bp + ".attention.norm", d);
        b.conv.pw1 = store.create(bp + ".conv.pw1", d, d);
        b.conv.dw = store.create(bp + ".conv.dw", 3, d);
        b.conv.pw2 = store.create(bp + ".conv.pw2", d, d);
        init_xavier_uniform(b.conv.pw1->value, d, d, rng);
        init_xavier_uniform(b.conv.dw->value, 3, 3, rng);
        init_xavier_uniform(b.conv.pw2->value, d, d, rng);
        b.norm_conv = build_norm(store, bp + ".conv.norm", d);
        b.ffn2 = build_ffn(store, bp + ".ffn2", d, cfg.ff_dim, rng);
        b.norm3 = build_norm(store, bp + ".ffn2.norm", d);
    }
    return params;
}

namespace {

NodeId bind_weight(Tape& tape, const Param& w, const WeightBinder* binder) {
    return binder ? binder->bind(tape, w) : tape.leaf(w);
}

NodeId maybe_dropout(Tape& tape, NodeId x, const TrainCtx* train) {
    if (!train || train->dropout_rate <= 0.0) return x;
    if (!train->rng) throw ConfigError("train mode with dropout requires an RNG");
    return tape.dropout(x, train->dropout_rate, *train->rng);
}

}  // namespace

BoundBlock bind_block(Tape& tape, const BlockParams& p, const WeightBinder* binder) {
    BoundBlock b;
    b.ffn1 = {tape.leaf(*p.ffn1.w1), tape.leaf(*p.ffn1.b1), tape.leaf(*p.ffn1.w2),
              tape.leaf(*p.ffn1.b2), tape.leaf(*p.norm1.gain), tape.leaf(*p.norm1.bias)};
    b.attn = {bind_weight(tape, *p.attn.w_q, binder), bind_weight(tape, *p.attn.w_k, binder),
              bind_weight(tape, *p.attn.w_v, binder), bind_weight(tape, *p.attn.w_o, binder),
              tape.leaf(*p.norm2.gain), tape.leaf(*p.norm2.bias)};
    b.conv = {tape.leaf(*p.conv.pw1), tape.leaf(*p.conv.dw), tape.leaf(*p.conv.pw2),
              tape.leaf(*p.norm_conv.gain), tape.leaf(*p.norm_conv.bias)};
    b.ffn2 = {tape.leaf(*p.ffn2.w1), tape.leaf(*p.ffn2.b1), tape.leaf(*p.ffn2.w2),
              tape.leaf(*p.ffn2.b2), tape.leaf(*p.norm3.gain), tape.leaf(*p.norm3.bias)};
    return b;
}

NodeId ffn_module(Tape& tape, NodeId x, const BoundFfn& p, const TrainCtx* train) {
    NodeId h = tape.gelu(tape.add_rowvec(tape.matmul(x, p.w1), p.b1));
    h = tape.add_rowvec(tape.matmul(h, p.w2), p.b2);
    h = maybe_dropout(tape, h, train);
    return tape.layer_norm_rows(tape.add(x, h), p.gain, p.bias, kLayerNormEps);
}

NodeId mhsa_module(Tape& tape, NodeId x, const BoundAttn& p, int heads, const TrainCtx* train) {
    const int d = tape.val(x).cols;
    if (heads < 1 || d % heads != 0) throw ConfigError("mhsa: d must be divisible by heads");
    const int dh = d / heads;
    NodeId q = tape.matmul(x, p.w_q);
    NodeId k = tape.matmul(x, p.w_k);
    NodeId v = tape.matmul(x, p.w_v);
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<NodeId> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        NodeId qh = tape.cols(q, h * dh, dh);
        NodeId kh = tape.cols(k, h * dh, dh);
        NodeId vh = tape.cols(v, h * dh, dh);
        NodeId scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
        NodeId weights = tape.softmax_rows(scores);
        head_outs.push_back(tape.matmul(weights, vh));
    }
    NodeId concat = heads == 1 ? head_outs[0] : tape.hcat(head_outs);
    NodeId out = tape.matmul(concat, p.w_o);
    out = maybe_dropout(tape, out, train);
    return tape.layer_norm_rows(tape.add(x, out), p.gain, p.bias, kLayerNormEps);
}

NodeId conv_module_tape(Tape& tape, NodeId x, const BoundConv& p, const TrainCtx* train) {
    NodeId c = tape.matmul(x, p.pw1);  // pointwise, kernel 1
    c = tape.depthwise3(c, p.dw);
    c = tape.matmul(c, p.pw2);
    c = maybe_dropout(tape, c, train);
    return tape.layer_norm_rows(tape.add(x, c), p.gain, p.bias, kLayerNormEps);
}

NodeId encoder_block_tape(Tape& tape, NodeId x, const BoundBlock& p, int heads,
                          const TrainCtx* train) {
    NodeId h = ffn_module(tape, x, p.ffn1, train);
    h = mhsa_module(tape, h, p.attn, heads, train);
    h = conv_module_tape(tape, h, p.conv, train);
    return ffn_module(tape, h, p.ffn2, train);
}

NodeId encode_tape(Tape& tape, const EncoderParams& params, NodeId input,
                   const WeightBinder* binder, const TrainCtx* train) {
    params.cfg.validate();
    // tape.val() references go stale as ops append nodes; copy the dims
    const int len = tape.val(input).rows;
    const int chans = tape.val(input).cols;
    if (chans != 2) throw ShapeError("encode: input must have 2 channels");
    if (len < 1 || len > params.cfg.frame_len)
        throw ShapeError("encode: input length exceeds configured frame_len");

    NodeId x = tape.conv1d_same(input, tape.leaf(*params.w_proj), params.cfg.proj_kernel);
    Mat pe_slice(len, params.cfg.hidden_dim);
    for (int r = 0; r < len; ++r)
        std::copy(params.pe.row(r), params.pe.row(r) + params.pe.cols, pe_slice.row(r));
    x = tape.add(x, tape.constant(std::move(pe_slice)));
    x = maybe_dropout(tape, x, train);
    for (const auto& block : params.blocks) {
        BoundBlock b = bind_block(tape, block, binder);
        x = encoder_block_tape(tape, x, b, params.cfg.heads, train);
    }
    return x;
}

Mat frame_to_input(const signals::NormalizedFrame& frame) {
    Mat in(frame.n(), 2);
    for (int p = 0; p < frame.n(); ++p) {
        in.at(p, 0) = frame.channels[0][static_cast<size_t>(p)];
        in.at(p, 1) = frame.channels[1][static_cast<size_t>(p)];
    }
    return in;
}

Mat project(const signals::NormalizedFrame& frame, const Mat& w_proj, int kernel) {
    Tape tape;
    NodeId in = tape.input(frame_to_input(frame));
    NodeId w = tape.constant(w_proj);
    return tape.val(tape.conv1d_same(in, w, kernel));
}

Mat feed_forward(const Mat& x, const FfnParams& p, const NormParams& n) {
    Tape tape;
    BoundFfn b{tape.leaf(*p.w1), tape.leaf(*p.b1), tape.leaf(*p.w2),
               tape.leaf(*p.b2), tape.leaf(*n.gain), tape.leaf(*n.bias)};
    return tape.val(ffn_module(tape, tape.input(x), b, nullptr));
}

Mat mhsa(const Mat& x, const AttentionParams& p, int heads, const NormParams& n) {
    Tape tape;
    BoundAttn b{tape.leaf(*p.w_q), tape.leaf(*p.w_k), tape.leaf(*p.w_v),
                tape.leaf(*p.w_o), tape.leaf(*n.gain), tape.leaf(*n.bias)};
    return tape.val(mhsa_module(tape, tape.input(x), b, heads, nullptr));
}

Mat conv_module(const Mat& x, const ConvParams& p, const NormParams& n) {
    Tape tape;
    BoundConv b{tape.leaf(*p.pw1), tape.leaf(*p.dw), tape.leaf(*p.pw2), tape.leaf(*n.gain),
                tape.leaf(*n.bias)};
    return tape.val(conv_module_tape(tape, tape.input(x), b, nullptr));
}

Mat encoder_block(const Mat& x, const BlockParams& p, int heads) {
    Tape tape;
    BoundBlock b = bind_block(tape, p, nullptr);
    return tape.val(encoder_block_tape(tape, tape.input(x), b, heads, nullptr));
}

Mat encode(const signals::NormalizedFrame& frame, const EncoderParams& params, Mode mode,
           Rng* dropout_rng, const WeightBinder* binder) {
    Tape tape;
    NodeId in = tape.input(frame_to_input(frame));
    if (mode == Mode::Train && params.cfg.dropout > 0.0) {
        TrainCtx train{params.cfg.dropout, dropout_rng};
        return tape.val(encode_tape(tape, params, in, binder, &train));
    }
    return tape.val(encode_tape(tape, params, in, binder, nullptr));
}

}  // namespace spectrumfm::encoder
