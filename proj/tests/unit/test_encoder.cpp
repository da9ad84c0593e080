#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "spectrumfm/encoder.hpp"
#include "spectrumfm/pretrain.hpp"

using namespace spectrumfm;
using namespace spectrumfm::encoder;

namespace {

Mat random_mat(int r, int c, Rng& rng, double scale = 1.0) {
    Mat m(r, c);
    for (double& v : m.v) v = scale * rng.gaussian();
    return m;
}

signals::NormalizedFrame random_norm_frame(int n, Rng& rng) {
    signals::NormalizedFrame f;
    for (int ch = 0; ch < 2; ++ch) {
        f.channels[ch].resize(static_cast<size_t>(n));
        for (double& v : f.channels[ch]) v = rng.uniform();
    }
    return f;
}

EncoderConfig toy_config() {
    EncoderConfig cfg;
    cfg.hidden_dim = 8;
    cfg.ff_dim = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.frame_len = 16;
    cfg.dropout = 0.0;
    return cfg;
}

}  // namespace

TEST_CASE("positional encoding matches Eq. 3") {
    Mat pe = positional_encoding(8, 6);
    for (int i = 0; 2 * i < 6; ++i) {
        CHECK(pe.at(0, 2 * i) == doctest::Approx(0.0));
        CHECK(pe.at(0, 2 * i + 1) == doctest::Approx(1.0));
    }
    // sin(1) evaluated independently
    CHECK(pe.at(1, 0) == doctest::Approx(0.8414709848078965).epsilon(1e-12));
    for (int p = 0; p < 8; ++p)
        for (int i = 0; 2 * i < 6; ++i) {
            const double s = pe.at(p, 2 * i), c = pe.at(p, 2 * i + 1);
            CHECK(std::abs(s * s + c * c - 1.0) < 1e-9);
        }
    CHECK_THROWS_AS(positional_encoding(8, 5), ConfigError);
}

TEST_CASE("projection is a same-padded conv over two channels") {
    Rng rng(3);
    const int n = 12, d = 6, kernel = 3;
    Mat w = random_mat(kernel * 2, d, rng);

    signals::NormalizedFrame zero;
    zero.channels[0].assign(n, 0.0);
    zero.channels[1].assign(n, 0.0);
    Mat out_zero = project(zero, w, kernel);
    CHECK(out_zero.rows == n);
    CHECK(out_zero.cols == d);
    for (double v : out_zero.v) CHECK(v == 0.0);

    // single-position impulse only reaches neighbours within the kernel
    signals::NormalizedFrame impulse = zero;
    impulse.channels[0][5] = 1.0;
    Mat out = project(impulse, w, kernel);
    for (int p = 0; p < n; ++p) {
        double mag = 0;
        for (int c = 0; c < d; ++c) mag += std::abs(out.at(p, c));
        if (p >= 4 && p <= 6)
            CHECK(mag > 0.0);
        else
            CHECK(mag == 0.0);
    }

    // full hand convolution oracle
    signals::NormalizedFrame f = random_norm_frame(n, rng);
    Mat got = project(f, w, kernel);
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c) {
            double acc = 0;
            for (int t = -1; t <= 1; ++t) {
                const int src = p + t;
                if (src < 0 || src >= n) continue;
                acc += f.channels[0][static_cast<size_t>(src)] * w.at((t + 1) * 2 + 0, c);
                acc += f.channels[1][static_cast<size_t>(src)] * w.at((t + 1) * 2 + 1, c);
            }
            CHECK(got.at(p, c) == doctest::Approx(acc).epsilon(1e-9));
        }
}

TEST_CASE("GELU values") {
    CHECK(gelu_scalar(0.0) == 0.0);
    // tanh-form GELU at 1, evaluated independently at high precision
    CHECK(gelu_scalar(1.0) == doctest::Approx(0.8411919906082768).epsilon(1e-12));

    // 1x1 feedforward core: x=1, identity weights, zero bias, before RN
    Tape tape;
    Mat x(1, 1), w(1, 1);
    x.v[0] = 1.0;
    w.v[0] = 1.0;
    NodeId inner = tape.gelu(tape.matmul(tape.input(x), tape.constant(w)));
    NodeId pre_rn = tape.matmul(inner, tape.constant(w));
    CHECK(tape.scalar(pre_rn) == doctest::Approx(0.8411919906082768).epsilon(1e-12));
}

TEST_CASE("feed_forward with zero weights is layer-normalized identity") {
    Rng rng(5);
    const int n = 6, d = 8;
    ParamStore store;
    FfnParams ffn{store.create("w1", d, 16), store.create("b1", 1, 16),
                  store.create("w2", 16, d), store.create("b2", 1, d)};
    NormParams norm{store.create("g", 1, d), store.create("b", 1, d)};
    norm.gain->value.fill(1.0);

    Mat x = random_mat(n, d, rng);
    Mat out = feed_forward(x, ffn, norm);
    for (int p = 0; p < n; ++p) {
        double mean = 0;
        for (int c = 0; c < d; ++c) mean += x.at(p, c);
        mean /= d;
        double var = 0;
        for (int c = 0; c < d; ++c) var += (x.at(p, c) - mean) * (x.at(p, c) - mean);
        var /= d;
        for (int c = 0; c < d; ++c) {
            const double expect = (x.at(p, c) - mean) / std::sqrt(var + kLayerNormEps);
            CHECK(out.at(p, c) == doctest::Approx(expect).epsilon(1e-9));
        }
    }
}

TEST_CASE("layer norm output has zero mean and unit variance per position") {
    Rng rng(17);
    Tape tape;
    Mat x = random_mat(10, 16, rng, 2.0);
    Mat gain(1, 16), bias(1, 16);
    gain.fill(1.0);
    NodeId out =
        tape.layer_norm_rows(tape.input(x), tape.constant(gain), tape.constant(bias), kLayerNormEps);
    const Mat& y = tape.val(out);
    for (int p = 0; p < y.rows; ++p) {
        double mean = 0, var = 0;
        for (int c = 0; c < y.cols; ++c) mean += y.at(p, c);
        mean /= y.cols;
        for (int c = 0; c < y.cols; ++c) var += (y.at(p, c) - mean) * (y.at(p, c) - mean);
        var /= y.cols;
        CHECK(std::abs(mean) < 1e-5);
        CHECK(std::abs(var - 1.0) < 1e-5);
    }
}

TEST_CASE("uniform attention when all keys coincide") {
    Rng rng(11);
    const int n = 5, d = 4;
    Mat x = random_mat(n, d, rng);
    Mat v = random_mat(n, d, rng);

    Tape tape;
    Mat zero_scores(n, n);
    NodeId weights = tape.softmax_rows(tape.input(zero_scores));
    for (int p = 0; p < n; ++p)
        for (int j = 0; j < n; ++j)
            CHECK(tape.val(weights).at(p, j) == doctest::Approx(1.0 / n).epsilon(1e-12));
    NodeId ctx = tape.matmul(weights, tape.input(v));
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c) {
            double mean = 0;
            for (int j = 0; j < n; ++j) mean += v.at(j, c);
            mean /= n;
            CHECK(tape.val(ctx).at(p, c) == doctest::Approx(mean).epsilon(1e-9));
        }
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(13);
    Tape tape;
    NodeId s = tape.softmax_rows(tape.input(random_mat(20, 9, rng, 3.0)));
    for (int p = 0; p < 20; ++p) {
        double sum = 0;
        for (int c = 0; c < 9; ++c) sum += tape.val(s).at(p, c);
        CHECK(std::abs(sum - 1.0) < 1e-6);
    }
}

TEST_CASE("single-head attention matches the brute-force oracle") {
    const int n = 3, d = 2;
    ParamStore store;
    AttentionParams attn{store.create("wq", d, d), store.create("wk", d, d),
                         store.create("wv", d, d), store.create("wo", d, d)};
    NormParams norm{store.create("g", 1, d), store.create("b", 1, d)};
    norm.gain->value.fill(1.0);
    // hand-chosen integer weights
    attn.w_q->value.v = {1, 2, 0, 1};
    attn.w_k->value.v = {1, 0, 1, 1};
    attn.w_v->value.v = {2, 1, 0, 1};
    attn.w_o->value.v = {1, 0, 0, 1};
    Mat x(n, d, {1, 0, 0, 1, 1, 1});

    Mat got = mhsa(x, attn, 1, norm);
    Mat want = oracles::brute_force_mhsa_1head(x, attn.w_q->value, attn.w_k->value,
                                               attn.w_v->value, attn.w_o->value, norm.gain->value,
                                               norm.bias->value, kLayerNormEps);
    for (size_t k = 0; k < got.v.size(); ++k) CHECK(std::abs(got.v[k] - want.v[k]) < 1e-6);
}

TEST_CASE("MHSA is permutation equivariant") {
    Rng rng(23);
    const int n = 6, d = 8;
    ParamStore store;
    AttentionParams attn{store.create("wq", d, d), store.create("wk", d, d),
                         store.create("wv", d, d), store.create("wo", d, d)};
    NormParams norm{store.create("g", 1, d), store.create("b", 1, d)};
    norm.gain->value.fill(1.0);
    init_xavier_uniform(attn.w_q->value, d, d, rng);
    init_xavier_uniform(attn.w_k->value, d, d, rng);
    init_xavier_uniform(attn.w_v->value, d, d, rng);
    init_xavier_uniform(attn.w_o->value, d, d, rng);

    Mat x = random_mat(n, d, rng);
    Mat out = mhsa(x, attn, 2, norm);

    const int perm[n] = {3, 0, 5, 1, 4, 2};
    Mat xp(n, d);
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c) xp.at(p, c) = x.at(perm[p], c);
    Mat outp = mhsa(xp, attn, 2, norm);
    for (int p = 0; p < n; ++p)
        for (int c = 0; c < d; ++c) CHECK(std::abs(outp.at(p, c) - out.at(perm[p], c)) < 1e-5);
}

namespace {

// residual + per-position layer norm, by hand
Mat hand_rn(const Mat& x, const Mat& update, const Mat& gain, const Mat& bias) {
    Mat out(x.rows, x.cols);
    for (int p = 0; p < x.rows; ++p) {
        double mean = 0;
        for (int c = 0; c < x.cols; ++c) {
            out.at(p, c) = x.at(p, c) + update.at(p, c);
            mean += out.at(p, c);
        }
        mean /= x.cols;
        double var = 0;
        for (int c = 0; c < x.cols; ++c) var += (out.at(p, c) - mean) * (out.at(p, c) - mean);
        var /= x.cols;
        for (int c = 0; c < x.cols; ++c)
            out.at(p, c) = (out.at(p, c) - mean) / std::sqrt(var + kLayerNormEps) * gain.v[c] +
                           bias.v[c];
    }
    return out;
}

}  // namespace

TEST_CASE("conv module: sandwich path, padding and residual normalization") {
    const int n = 6, d = 4;
    ParamStore store;
    ConvParams conv{store.create("pw1", d, d), store.create("dw", 3, d),
                    store.create("pw2", d, d)};
    NormParams norm{store.create("cg", 1, d), store.create("cb", 1, d)};
    norm.gain->value.fill(1.0);
    for (int c = 0; c < d; ++c) {
        conv.pw1->value.at(c, c) = 1.0;
        conv.pw2->value.at(c, c) = 1.0;
        conv.dw->value.at(1, c) = 1.0;  // depthwise [0, 1, 0]
    }
    Rng rng(31);
    Mat x = random_mat(n, d, rng);

    // identity sandwich: module reduces to RN(x + x)
    Mat out = conv_module(x, conv, norm);
    Mat want = hand_rn(x, x, norm.gain->value, norm.bias->value);
    for (size_t k = 0; k < x.v.size(); ++k) CHECK(out.v[k] == doctest::Approx(want.v[k]).epsilon(1e-9));

    // depthwise [1,1,1] over a position-constant channel: x3 inside, x2 at the
    // zero-padded ends (checked on the raw depthwise op)
    Mat dw_ones(3, d);
    dw_ones.fill(1.0);
    Mat ones(n, d);
    ones.fill(1.0);
    Tape tape;
    const Mat& dw_out = tape.val(tape.depthwise3(tape.input(ones), tape.constant(dw_ones)));
    for (int c = 0; c < d; ++c) {
        CHECK(dw_out.at(0, c) == doctest::Approx(2.0));
        CHECK(dw_out.at(n - 1, c) == doctest::Approx(2.0));
        for (int p = 1; p + 1 < n; ++p) CHECK(dw_out.at(p, c) == doctest::Approx(3.0));
    }

    // zero final pointwise kernel: the sandwich contributes nothing and the
    // module is layer-normalized identity
    conv.pw2->value.zero();
    Mat out3 = conv_module(x, conv, norm);
    Mat zero(n, d);
    Mat want3 = hand_rn(x, zero, norm.gain->value, norm.bias->value);
    for (size_t k = 0; k < x.v.size(); ++k)
        CHECK(out3.v[k] == doctest::Approx(want3.v[k]).epsilon(1e-9));
}

TEST_CASE("encoder block determinism, shape and stability") {
    Rng rng(41);
    ParamStore store;
    EncoderConfig cfg = toy_config();
    EncoderParams params = build_encoder(store, cfg, rng);

    signals::NormalizedFrame f = random_norm_frame(cfg.frame_len, rng);
    Mat h1 = encode(f, params, Mode::Eval);
    Mat h2 = encode(f, params, Mode::Eval);
    CHECK(h1.v == h2.v);  // eval mode has no stochastic path
    CHECK(h1.rows == cfg.frame_len);
    CHECK(h1.cols == cfg.hidden_dim);

    // randomized stability sweep over one block
    EncoderConfig small = cfg;
    small.layers = 1;
    int finite = 0;
    const int trials = 10000;
    for (int t = 0; t < trials; ++t) {
        ParamStore st;
        Rng r(static_cast<uint64_t>(t) + 1);
        EncoderParams p = build_encoder(st, small, r);
        Mat x = random_mat(small.frame_len, small.hidden_dim, r, 3.0);
        Mat out = encoder_block(x, p.blocks[0], small.heads);
        finite += out.all_finite();
    }
    CHECK(finite == trials);
}

TEST_CASE("encode rejects invalid configurations") {
    EncoderConfig cfg = toy_config();
    cfg.layers = 0;
    ParamStore store;
    Rng rng(1);
    CHECK_THROWS_AS(build_encoder(store, cfg, rng), ConfigError);
    cfg.layers = 1;
    cfg.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(build_encoder(store, cfg, rng), ConfigError);
}

TEST_CASE("analytic gradients match finite differences on a small instance") {
    // quick spot check; the acceptance suite runs the full parameter sweep
    EncoderConfig cfg;
    cfg.hidden_dim = 4;
    cfg.ff_dim = 6;
    cfg.heads = 2;
    cfg.layers = 1;
    cfg.frame_len = 6;
    cfg.dropout = 0.0;
    pretrain::PretrainModel model = pretrain::build_pretrain_model(cfg, 5, 77);

    Rng rng(123);
    signals::NormalizedFrame f = random_norm_frame(cfg.frame_len, rng);
    Mat target = frame_to_input(f);
    pretrain::MaskVector mask = pretrain::sample_mask(cfg.frame_len, 0.3, 9);

    auto loss_value = [&]() {
        Tape tape;
        NodeId hidden = encode_tape(tape, model.enc, tape.input(target), nullptr, nullptr);
        NodeId pred = pretrain::recon_decode_tape(tape, hidden, model.dec);
        return tape.scalar(tape.masked_mse(pred, target, mask.keep));
    };

    GradSink sink(model.store);
    {
        Tape tape(true);
        NodeId hidden = encode_tape(tape, model.enc, tape.input(target), nullptr, nullptr);
        NodeId pred = pretrain::recon_decode_tape(tape, hidden, model.dec);
        tape.backward(tape.masked_mse(pred, target, mask.keep), sink);
    }
    oracles::GradCheck gc = oracles::finite_difference_check(model.store, sink, loss_value);
    CHECK(gc.checked > 100);
    CHECK(gc.max_rel_err < 1e-4);
}
