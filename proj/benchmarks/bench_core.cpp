#include <benchmark/benchmark.h>

#include "spectrumfm/encoder.hpp"
#include "spectrumfm/eval.hpp"
#include "spectrumfm/pretrain.hpp"
#include "spectrumfm/signals.hpp"

using namespace spectrumfm;

namespace {

encoder::EncoderConfig bench_config(int d, int layers) {
    encoder::EncoderConfig cfg;
    cfg.hidden_dim = d;
    cfg.ff_dim = 2 * d;
    cfg.heads = 4;
    cfg.layers = layers;
    cfg.frame_len = 128;
    cfg.dropout = 0.0;
    return cfg;
}

signals::NormalizedFrame bench_frame(int n) {
    signals::ScenarioSpec spec;
    spec.modulation = signals::Modulation::QPSK;
    spec.snr_db = 5.0;
    spec.seed = 1;
    return signals::normalize(signals::iq_to_ap(signals::synth_frame(spec, n).frame));
}

void BM_SynthFrame(benchmark::State& state) {
    signals::ScenarioSpec spec;
    spec.modulation = signals::Modulation::QPSK;
    spec.snr_db = 0.0;
    uint64_t seed = 0;
    for (auto _ : state) {
        spec.seed = seed++;
        benchmark::DoNotOptimize(signals::synth_frame(spec, 128));
    }
}
BENCHMARK(BM_SynthFrame);

void BM_EncoderForward(benchmark::State& state) {
    const encoder::EncoderConfig cfg =
        bench_config(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    ParamStore store;
    Rng rng(7);
    encoder::EncoderParams params = encoder::build_encoder(store, cfg, rng);
    signals::NormalizedFrame frame = bench_frame(cfg.frame_len);
    for (auto _ : state)
        benchmark::DoNotOptimize(encoder::encode(frame, params, encoder::Mode::Eval));
}
BENCHMARK(BM_EncoderForward)->Args({32, 4})->Args({64, 4})->Args({256, 16});

void BM_EncoderBackward(benchmark::State& state) {
    const encoder::EncoderConfig cfg =
        bench_config(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)));
    pretrain::PretrainModel model = pretrain::build_pretrain_model(cfg, 32, 7);
    signals::NormalizedFrame frame = bench_frame(cfg.frame_len);
    Mat target = encoder::frame_to_input(frame);
    pretrain::MaskVector mask = pretrain::sample_mask(cfg.frame_len, 0.15, 3);
    GradSink sink(model.store);
    for (auto _ : state) {
        sink.clear();
        Tape tape(true);
        NodeId hidden =
            encoder::encode_tape(tape, model.enc, tape.input(target), nullptr, nullptr);
        NodeId pred = pretrain::recon_decode_tape(tape, hidden, model.dec);
        tape.backward(tape.masked_mse(pred, target, mask.keep), sink);
    }
}
BENCHMARK(BM_EncoderBackward)->Args({32, 4})->Args({64, 4});

void BM_RocCurve(benchmark::State& state) {
    Rng rng(9);
    std::vector<eval::ScoredSample> samples;
    for (int k = 0; k < state.range(0); ++k) {
        const int label = rng.bernoulli(0.5) ? 1 : 0;
        samples.push_back({rng.gaussian() + label, label, label, 0.0});
    }
    for (auto _ : state) benchmark::DoNotOptimize(eval::roc_curve(samples));
}
BENCHMARK(BM_RocCurve)->Arg(1000)->Arg(100000);

}  // namespace

BENCHMARK_MAIN();
