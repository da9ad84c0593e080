// Acceptance suite: runs every acceptance criterion end to end and prints
// one PASS/FAIL line per criterion. Exits nonzero if any criterion fails.
//
// Usage: acceptance --cli <path-to-spectrumfm> --work-dir <dir> [--only N]

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "spectrumfm/encoder.hpp"
#include "spectrumfm/eval.hpp"
#include "spectrumfm/lora.hpp"
#include "spectrumfm/pretrain.hpp"
#include "spectrumfm/signals.hpp"
#include "spectrumfm/tasks.hpp"

using namespace spectrumfm;
namespace fs = std::filesystem;

namespace {

struct Options {
    std::string cli_path;
    std::string work_dir = "acceptance_work";
    std::vector<int> only;  // empty = run everything

    bool selected(int id) const {
        if (only.empty()) return true;
        for (int k : only)
            if (k == id) return true;
        return false;
    }
};

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

// ---- shared desk-scale fixtures ----

encoder::EncoderConfig desk_encoder_config() {
    encoder::EncoderConfig cfg;
    cfg.hidden_dim = 32;
    cfg.ff_dim = 64;
    cfg.heads = 4;
    cfg.layers = 4;
    cfg.frame_len = 128;
    cfg.dropout = 0.0;  // the tiny desk model trains for few steps; dropout noise dominates
    return cfg;
}

std::vector<signals::IQFrame> multimod_pretrain_frames(int total, uint64_t seed0) {
    using signals::Modulation;
    const std::vector<Modulation> mods = {Modulation::BPSK, Modulation::QPSK, Modulation::PSK8,
                                          Modulation::QAM16, Modulation::NOISE_ONLY};
    const std::vector<double> snrs = {-10, -5, 0, 5, 10};
    std::vector<signals::ScenarioSpec> specs;
    for (Modulation m : mods)
        for (double snr : snrs) {
            signals::ScenarioSpec s;
            s.task = signals::Task::SS;
            s.modulation = m;
            s.snr_db = snr;
            s.seed = seed0 + specs.size() * 1000003ULL;
            specs.push_back(s);
        }
    const int per_spec = total / static_cast<int>(specs.size());
    auto [manifest, frames] = signals::generate_dataset(specs, per_spec, 128);
    std::vector<signals::IQFrame> out;
    for (auto& f : frames) out.push_back(std::move(f.frame));
    return out;
}

std::vector<signals::LabeledFrame> ss_task_frames(int per_spec, uint64_t seed0,
                                                  const std::vector<double>& snrs) {
    std::vector<signals::ScenarioSpec> specs;
    for (double snr : snrs)
        for (int occupied = 0; occupied < 2; ++occupied) {
            signals::ScenarioSpec s;
            s.task = signals::Task::SS;
            s.modulation =
                occupied ? signals::Modulation::QPSK : signals::Modulation::NOISE_ONLY;
            s.snr_db = snr;
            s.seed = seed0 + specs.size() * 1000003ULL;
            specs.push_back(s);
        }
    auto [manifest, frames] = signals::generate_dataset(specs, per_spec, 128);
    return std::move(frames);
}

std::vector<signals::LabeledFrame> ad_task_frames(int per_spec, uint64_t seed0,
                                                  const std::vector<double>& snrs) {
    std::vector<signals::ScenarioSpec> specs;
    for (double snr : snrs)
        for (double ratio : {0.5, 1.5}) {
            signals::ScenarioSpec normal;
            normal.task = signals::Task::AD;
            normal.modulation = signals::Modulation::QPSK;
            normal.snr_db = snr;
            normal.seed = seed0 + specs.size() * 1000003ULL;
            specs.push_back(normal);
            signals::ScenarioSpec anomalous = normal;
            anomalous.modulation = signals::Modulation::INTERFERED;
            anomalous.interference_bandwidth_ratio = ratio;
            anomalous.seed = seed0 + specs.size() * 1000003ULL;
            specs.push_back(anomalous);
        }
    auto [manifest, frames] = signals::generate_dataset(specs, per_spec, 128);
    return std::move(frames);
}

std::vector<signals::LabeledFrame> wtc_task_frames(int per_spec, uint64_t seed0,
                                                   const std::vector<double>& snrs) {
    using signals::Modulation;
    const std::vector<std::pair<Modulation, double>> technologies = {
        {Modulation::BPSK, 0.7}, {Modulation::QPSK, 1.0}, {Modulation::QAM16, 1.4}};
    std::vector<signals::ScenarioSpec> specs;
    for (double snr : snrs)
        for (const auto& [mod, bw] : technologies) {
            signals::ScenarioSpec s;
            s.task = signals::Task::WTC;
            s.modulation = mod;
            s.snr_db = snr;
            s.bandwidth_scale = bw;
            s.seed = seed0 + specs.size() * 1000003ULL;
            specs.push_back(s);
        }
    auto [manifest, frames] = signals::generate_dataset(specs, per_spec, 128);
    return std::move(frames);
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split_at(const std::vector<T>& xs, double train_frac,
                                                   uint64_t seed) {
    std::vector<int> idx(xs.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0xACCE97));
    rng.shuffle(idx);
    const size_t cut = static_cast<size_t>(xs.size() * train_frac);
    std::pair<std::vector<T>, std::vector<T>> out;
    for (size_t k = 0; k < idx.size(); ++k)
        (k < cut ? out.first : out.second).push_back(xs[static_cast<size_t>(idx[k])]);
    return out;
}

std::vector<signals::IQFrame> iq_of(const std::vector<signals::LabeledFrame>& frames) {
    std::vector<signals::IQFrame> out;
    for (const auto& f : frames) out.push_back(f.frame);
    return out;
}

std::vector<eval::ScoredSample> score_frames(const tasks::TaskModel& model,
                                             const std::vector<signals::LabeledFrame>& frames) {
    std::vector<tasks::Prediction> preds = tasks::predict(model, iq_of(frames));
    std::vector<eval::ScoredSample> samples(frames.size());
    for (size_t k = 0; k < frames.size(); ++k) {
        samples[k].true_label = frames[k].label;
        samples[k].predicted = preds[k].label;
        samples[k].snr_db = frames[k].snr_db;
        samples[k].score = model.head.cfg.task == signals::Task::WTC
                               ? 0.0
                               : tasks::decision_score(preds[k], model.head.cfg.task);
    }
    return samples;
}

// Pretrained desk model shared between criteria 5-8.
struct DeskPretrain {
    pretrain::PretrainModel model;
    pretrain::PretrainResult result;
    pretrain::PretrainConfig cfg;
    std::vector<signals::IQFrame> train_frames;
    std::vector<signals::IQFrame> val_frames;
    std::string checkpoint_path;
    double seconds = 0.0;
};

struct Context {
    Options opts;
    std::optional<DeskPretrain> desk;

    DeskPretrain& desk_pretrain() {
        if (desk) return *desk;
        DeskPretrain d;
        const double t0 = now_seconds();
        std::vector<signals::IQFrame> frames = multimod_pretrain_frames(2000, 0xD0);
        auto [train, val] = split_at(frames, 0.9, 17);
        d.train_frames = std::move(train);
        d.val_frames = std::move(val);
        d.model = pretrain::build_pretrain_model(desk_encoder_config(), 32, 0x5EED);
        d.cfg.mask_ratio = 0.15;
        // post-norm stacks this deep need the reduced constant rate to train
        d.cfg.lr = 3e-4;
        d.cfg.batch_size = 8;
        d.cfg.epochs = 8;
        d.cfg.early_stop_patience = 8;
        // at d=32 the equal-weight next-slot term drowns out reconstruction
        // learning; keep both objectives but weight the point prediction down
        d.cfg.w_pred = 0.25;
        d.cfg.seed = 41;
        d.result = pretrain::run_pretraining(d.model, d.train_frames, d.val_frames, d.cfg);
        d.seconds = now_seconds() - t0;
        d.checkpoint_path = (fs::path(opts.work_dir) / "desk_pretrained.sfma").string();
        pretrain::save_checkpoint(d.checkpoint_path, d.model);
        desk = std::move(d);
        return *desk;
    }
};

// ---- criteria ----

bool criterion1_gradients(Context&, std::string& detail) {
    const double t0 = now_seconds();
    encoder::EncoderConfig cfg;
    cfg.hidden_dim = 8;
    cfg.ff_dim = 16;
    cfg.heads = 2;
    cfg.layers = 2;
    cfg.frame_len = 16;
    cfg.dropout = 0.0;
    pretrain::PretrainModel model = pretrain::build_pretrain_model(cfg, 12, 0xC1);

    Rng rng(99);
    std::vector<Mat> targets;
    std::vector<pretrain::MaskVector> masks;
    for (int k = 0; k < 2; ++k) {
        Mat t(cfg.frame_len, 2);
        for (double& v : t.v) v = rng.uniform();
        targets.push_back(std::move(t));
        masks.push_back(pretrain::sample_mask(cfg.frame_len, 0.25, 100 + k));
    }

    // recon + next-slot total over both frames
    auto total_loss = [&](Tape& tape) {
        NodeId total = -1;
        for (size_t k = 0; k < targets.size(); ++k) {
            NodeId hidden = encoder::encode_tape(tape, model.enc, tape.input(targets[k]), nullptr,
                                                 nullptr);
            NodeId pred = pretrain::recon_decode_tape(tape, hidden, model.dec);
            NodeId recon = tape.masked_mse(pred, targets[k], masks[k].keep);

            Mat prefix(cfg.frame_len - 1, 2);
            for (int p = 0; p + 1 < cfg.frame_len; ++p) {
                prefix.at(p, 0) = targets[k].at(p, 0);
                prefix.at(p, 1) = targets[k].at(p, 1);
            }
            NodeId hidden2 = encoder::encode_tape(tape, model.enc, tape.input(std::move(prefix)),
                                                  nullptr, nullptr);
            NodeId pred2 = pretrain::next_slot_pred_tape(tape, hidden2, model.next);
            Mat tgt(1, 2);
            tgt.v[0] = targets[k].at(cfg.frame_len - 1, 0);
            tgt.v[1] = targets[k].at(cfg.frame_len - 1, 1);
            NodeId next = tape.sqdist(pred2, tgt);

            NodeId frame_total = tape.add(recon, next);
            total = k == 0 ? frame_total : tape.add(total, frame_total);
        }
        return total;
    };

    GradSink sink(model.store);
    {
        Tape tape(true);
        tape.backward(total_loss(tape), sink);
    }
    auto loss_plain = [&]() {
        Tape t;
        return t.scalar(total_loss(t));
    };

    oracles::GradCheck gc = oracles::finite_difference_check(model.store, sink, loss_plain);
    const long expected = model.store.total_scalars();
    const double secs = now_seconds() - t0;
    std::ostringstream os;
    os << "checked " << gc.checked << "/" << expected << " params, max rel err " << gc.max_rel_err
       << " (worst " << gc.worst_param << ")";
    detail = os.str();
    return gc.checked == expected && gc.max_rel_err < 1e-4 && secs < 120.0;
}

bool criterion2_attention_oracle(Context&, std::string& detail) {
    ParamStore store;
    encoder::AttentionParams attn{store.create("wq", 2, 2), store.create("wk", 2, 2),
                                  store.create("wv", 2, 2), store.create("wo", 2, 2)};
    encoder::NormParams norm{store.create("g", 1, 2), store.create("b", 1, 2)};
    norm.gain->value.fill(1.0);

    const std::vector<std::array<std::vector<double>, 5>> instances = {
        {{{1, 2, 0, 1}, {1, 0, 1, 1}, {2, 1, 0, 1}, {1, 0, 0, 1}, {1, 0, 0, 1, 1, 1}}},
        {{{2, -1, 1, 0}, {0, 1, 1, -1}, {1, 1, -1, 2}, {1, 2, -1, 1}, {2, -1, 0, 3, 1, 0}}},
        {{{1, 0, 0, 2}, {-1, 1, 2, 0}, {3, 1, 1, -2}, {0, 1, 1, 0}, {-1, 2, 2, -2, 0, 1}}},
    };
    double max_err = 0;
    for (const auto& inst : instances) {
        attn.w_q->value.v = inst[0];
        attn.w_k->value.v = inst[1];
        attn.w_v->value.v = inst[2];
        attn.w_o->value.v = inst[3];
        Mat x(3, 2, inst[4]);
        Mat got = encoder::mhsa(x, attn, 1, norm);
        Mat want = oracles::brute_force_mhsa_1head(x, attn.w_q->value, attn.w_k->value,
                                                   attn.w_v->value, attn.w_o->value,
                                                   norm.gain->value, norm.bias->value,
                                                   encoder::kLayerNormEps);
        for (size_t k = 0; k < got.v.size(); ++k)
            max_err = std::max(max_err, std::abs(got.v[k] - want.v[k]));
    }
    std::ostringstream os;
    os << instances.size() << " hand instances (N=3, d=2, H=1), max abs err " << max_err;
    detail = os.str();
    return max_err < 1e-6;
}

bool criterion3_core_properties(Context&, std::string& detail) {
    Rng rng(0xC3);
    // Eq. 1: range and positive-affine invariance
    double max_affine_err = 0;
    for (int trial = 0; trial < 200; ++trial) {
        signals::APFrame ap;
        for (int p = 0; p < 64; ++p) {
            ap.amplitude.push_back(rng.uniform(0.0, 7.0));
            ap.phase.push_back(rng.uniform(-3.1, 3.1));
        }
        signals::NormalizedFrame n1 = signals::normalize(ap);
        for (int ch = 0; ch < 2; ++ch)
            for (double v : n1.channels[static_cast<size_t>(ch)])
                if (v < 0.0 || v > 1.0) {
                    detail = "normalized value outside [0, 1]";
                    return false;
                }
        const double a = rng.uniform(0.05, 9.0), b = rng.uniform(-20.0, 20.0);
        signals::APFrame warped;
        for (size_t p = 0; p < ap.amplitude.size(); ++p) {
            warped.amplitude.push_back(a * ap.amplitude[p] + b);
            warped.phase.push_back(a * ap.phase[p] + b);
        }
        signals::NormalizedFrame n2 = signals::normalize(warped);
        for (int ch = 0; ch < 2; ++ch)
            for (size_t p = 0; p < ap.amplitude.size(); ++p)
                max_affine_err =
                    std::max(max_affine_err, std::abs(n1.channels[static_cast<size_t>(ch)][p] -
                                                      n2.channels[static_cast<size_t>(ch)][p]));
    }

    // Eq. 12: binomial mask statistics over 1e4 draws (N*r = 19.2)
    double total_masked = 0;
    const int draws = 10000;
    for (int s = 0; s < draws; ++s)
        total_masked += pretrain::sample_mask(128, 0.15, static_cast<uint64_t>(s)).masked_count();
    const double mean = total_masked / draws;
    const double sigma_mean = std::sqrt(128 * 0.15 * 0.85 / draws);
    const double z = (mean - 19.2) / sigma_mean;

    // Eq. 13 equals the naive loop oracle
    double max_loss_err = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 32;
        signals::NormalizedFrame target;
        Mat pred(n, 2);
        pretrain::MaskVector m;
        m.ratio = 0.3;
        for (int p = 0; p < n; ++p) {
            target.channels[0].push_back(rng.uniform());
            target.channels[1].push_back(rng.uniform());
            pred.at(p, 0) = rng.uniform();
            pred.at(p, 1) = rng.uniform();
            m.keep.push_back(rng.bernoulli(0.3) ? 0 : 1);
        }
        if (m.masked_count() == 0) m.keep[0] = 0;
        double acc = 0;
        int cnt = 0;
        for (int p = 0; p < n; ++p) {
            if (m.keep[static_cast<size_t>(p)]) continue;
            const double da = pred.at(p, 0) - target.channels[0][static_cast<size_t>(p)];
            const double dp = pred.at(p, 1) - target.channels[1][static_cast<size_t>(p)];
            acc += da * da + dp * dp;
            ++cnt;
        }
        max_loss_err =
            std::max(max_loss_err, std::abs(pretrain::recon_loss(pred, target, m) - acc / cnt));
    }

    std::ostringstream os;
    os << "affine err " << max_affine_err << ", mask mean " << mean << " (|z| = " << std::abs(z)
       << "), recon-loss err " << max_loss_err;
    detail = os.str();
    return max_affine_err < 1e-6 && std::abs(mean - 19.2) < 0.4 && std::abs(z) < 3.0 &&
           max_loss_err < 1e-7;
}

bool criterion4_lora_contracts(Context&, std::string& detail) {
    tasks::TaskHeadConfig head_cfg;
    head_cfg.task = signals::Task::SS;
    head_cfg.gru_hidden = 32;
    encoder::EncoderConfig enc_cfg = desk_encoder_config();
    tasks::TaskModel model = tasks::build_task_model(enc_cfg, head_cfg, 0xC4);

    std::vector<signals::LabeledFrame> frames = ss_task_frames(60, 0xC40, {0.0, 10.0});
    std::vector<Mat> base_out;
    for (int k = 0; k < 4; ++k)
        base_out.push_back(encoder::encode(
            signals::normalize(signals::iq_to_ap(frames[static_cast<size_t>(k)].frame)),
            model.enc, encoder::Mode::Eval));

    lora::LoRAConfig lc;
    lc.rank = 8;
    lc.alpha = 16.0;
    model.adapters =
        lora::attach_adapters(model.store, model.enc, lc, 0xC41, tasks::head_params(model));
    model.has_adapters = true;

    double zero_init_err = 0;
    for (int k = 0; k < 4; ++k) {
        Mat adapted = encoder::encode(
            signals::normalize(signals::iq_to_ap(frames[static_cast<size_t>(k)].frame)),
            model.enc, encoder::Mode::Eval, nullptr, &model.adapters);
        for (size_t i = 0; i < adapted.v.size(); ++i)
            zero_init_err = std::max(
                zero_init_err, std::abs(adapted.v[i] - base_out[static_cast<size_t>(k)].v[i]));
    }
    if (zero_init_err >= 1e-6) {
        detail = "zero-init mismatch " + std::to_string(zero_init_err);
        return false;
    }

    // 100 optimizer steps; frozen tensors must not move a bit
    std::vector<std::pair<std::string, Mat>> frozen;
    for (const auto& p : model.store)
        if (!p->trainable) frozen.emplace_back(p->name, p->value);
    auto [train, val] = split_at(frames, 0.9, 5);
    tasks::FineTuneConfig fc;
    fc.batch_size = 4;
    fc.epochs = (100 * 4) / static_cast<int>(train.size()) + 1;
    fc.seed = 0xC42;
    tasks::FinetuneResult fit = tasks::train_task_model(model, train, val, fc);
    long steps = 0;
    for (const auto& r : fit.curve) steps = std::max(steps, r.step);
    if (steps < 100) {
        detail = "expected at least 100 steps, ran " + std::to_string(steps);
        return false;
    }
    for (const auto& [name, before] : frozen) {
        const Param* p = model.store.find(name);
        if (!p || std::memcmp(p->value.v.data(), before.v.data(),
                              before.v.size() * sizeof(double)) != 0) {
            detail = "frozen tensor changed: " + name;
            return false;
        }
    }

    // merge/unmerge output equivalence
    std::vector<Mat> adapted_out;
    for (int k = 0; k < 4; ++k)
        adapted_out.push_back(encoder::encode(
            signals::normalize(signals::iq_to_ap(frames[static_cast<size_t>(k)].frame)),
            model.enc, encoder::Mode::Eval, nullptr, &model.adapters));
    lora::merge_adapters(model.store, model.adapters);
    double merge_err = 0;
    for (int k = 0; k < 4; ++k) {
        Mat merged = encoder::encode(
            signals::normalize(signals::iq_to_ap(frames[static_cast<size_t>(k)].frame)),
            model.enc, encoder::Mode::Eval);
        for (size_t i = 0; i < merged.v.size(); ++i)
            merge_err = std::max(
                merge_err, std::abs(merged.v[i] - adapted_out[static_cast<size_t>(k)].v[i]));
    }
    lora::unmerge_adapters(model.store, model.adapters);
    for (int k = 0; k < 4; ++k) {
        Mat restored = encoder::encode(
            signals::normalize(signals::iq_to_ap(frames[static_cast<size_t>(k)].frame)),
            model.enc, encoder::Mode::Eval, nullptr, &model.adapters);
        for (size_t i = 0; i < restored.v.size(); ++i)
            merge_err = std::max(
                merge_err, std::abs(restored.v[i] - adapted_out[static_cast<size_t>(k)].v[i]));
    }
    if (merge_err >= 1e-6) {
        detail = "merge/unmerge mismatch " + std::to_string(merge_err);
        return false;
    }

    // default-size accounting: d=256, L=16, four sites per block, GRU head
    encoder::EncoderConfig full_cfg;
    tasks::TaskHeadConfig full_head;
    full_head.task = signals::Task::SS;
    tasks::TaskModel full = tasks::build_task_model(full_cfg, full_head, 0xC43);
    lora::LoRAConfig full_lc;
    full.adapters =
        lora::attach_adapters(full.store, full.enc, full_lc, 0xC44, tasks::head_params(full));
    const long adapter_params = full.adapters.adapter_scalars();
    const double fraction = lora::trainable_fraction(full.store);

    std::ostringstream os;
    os << "zero-init err " << zero_init_err << ", " << steps << " frozen steps, merge err "
       << merge_err << ", adapters " << adapter_params << ", trainable fraction " << fraction;
    detail = os.str();
    return adapter_params == 262144 && fraction <= 0.03;
}

bool criterion5_pretraining_progress(Context& ctx, std::string& detail) {
    DeskPretrain& desk = ctx.desk_pretrain();

    const double initial = desk.result.initial_val_total;
    const double best = desk.result.best_val_total;

    // channel-mean predictor baseline on the same validation masks
    pretrain::EvalLosses model_losses =
        pretrain::evaluate_losses(desk.model, desk.val_frames, desk.cfg);
    double baseline_acc = 0;
    long baseline_n = 0;
    for (size_t i = 0; i < desk.val_frames.size(); ++i) {
        const Mat target = encoder::frame_to_input(
            signals::normalize(signals::iq_to_ap(desk.val_frames[i])));
        pretrain::MaskVector mask =
            pretrain::validation_mask(desk.cfg, static_cast<int>(i), target.rows);
        if (mask.masked_count() == 0) continue;
        double mean_a = 0, mean_p = 0;
        long kept = 0;
        for (int p = 0; p < target.rows; ++p) {
            if (!mask.keep[static_cast<size_t>(p)]) continue;
            mean_a += target.at(p, 0);
            mean_p += target.at(p, 1);
            ++kept;
        }
        if (kept == 0) continue;
        mean_a /= static_cast<double>(kept);
        mean_p /= static_cast<double>(kept);
        double acc = 0;
        for (int p = 0; p < target.rows; ++p) {
            if (mask.keep[static_cast<size_t>(p)]) continue;
            const double da = mean_a - target.at(p, 0);
            const double dp = mean_p - target.at(p, 1);
            acc += da * da + dp * dp;
        }
        baseline_acc += acc / mask.masked_count();
        ++baseline_n;
    }
    const double baseline = baseline_acc / static_cast<double>(baseline_n);

    std::ostringstream os;
    os << "val total " << initial << " -> " << best << " (ratio " << best / initial
       << "), recon MSE " << model_losses.recon << " vs channel-mean " << baseline << ", "
       << desk.seconds << " s";
    detail = os.str();
    return best <= 0.5 * initial && model_losses.recon < baseline && desk.seconds < 900.0;
}

struct SsEvalStats {
    std::map<double, double> acc_by_snr;
    double mean_acc = 0;
    double spearman = 0;
    double high_snr_min_acc = 1.0;
};

SsEvalStats ss_stats(const tasks::TaskModel& model,
                     const std::vector<signals::LabeledFrame>& eval_frames) {
    std::vector<eval::ScoredSample> samples = score_frames(model, eval_frames);
    SsEvalStats stats;
    stats.acc_by_snr = eval::accuracy_by_snr(samples);
    std::vector<double> snrs, accs;
    for (const auto& [snr, acc] : stats.acc_by_snr) {
        snrs.push_back(snr);
        accs.push_back(acc);
        stats.mean_acc += acc;
        if (snr >= 0.0) stats.high_snr_min_acc = std::min(stats.high_snr_min_acc, acc);
    }
    stats.mean_acc /= static_cast<double>(stats.acc_by_snr.size());
    stats.spearman = oracles::spearman_rho(snrs, accs);
    return stats;
}

bool criterion6_desk_ss(Context& ctx, std::string& detail) {
    DeskPretrain& desk = ctx.desk_pretrain();
    const std::vector<double> grid = {-10, -8, -6, -4, -2, 0, 2, 4, 6, 8};

    // 6,000 labeled frames: 10 SNRs x {idle, occupied} x 300
    std::vector<signals::LabeledFrame> labeled = ss_task_frames(300, 0xC60, grid);
    auto [train, val] = split_at(labeled, 0.9, 23);
    std::vector<signals::LabeledFrame> eval_frames = ss_task_frames(60, 0xC61, grid);

    tasks::TaskHeadConfig head_cfg;
    head_cfg.task = signals::Task::SS;
    head_cfg.gru_hidden = 64;
    tasks::FineTuneConfig fc;
    fc.lr = 3e-4;
    fc.batch_size = 64;
    fc.epochs = 2;
    fc.seed = 51;

    tasks::FinetuneOutput tuned = tasks::finetune(desk.checkpoint_path, head_cfg, train, val, fc,
                                                  {"idle", "occupied"});

    // calibrate the operating point to Pfa <= 0.05 on the validation split
    std::vector<tasks::Prediction> val_preds = tasks::predict(tuned.model, iq_of(val));
    std::vector<double> val_scores;
    std::vector<int> val_labels;
    for (size_t k = 0; k < val.size(); ++k) {
        val_scores.push_back(tasks::decision_score(val_preds[k], signals::Task::SS));
        val_labels.push_back(val[k].label);
    }
    tuned.model.threshold = tasks::calibrate_threshold(val_scores, val_labels, 0.05);
    long cal_fp = 0, cal_neg = 0;
    for (size_t k = 0; k < val.size(); ++k) {
        if (val_labels[k] != 0) continue;
        ++cal_neg;
        cal_fp += val_scores[k] >= tuned.model.threshold;
    }
    const double cal_pfa = static_cast<double>(cal_fp) / static_cast<double>(cal_neg);

    SsEvalStats tuned_stats = ss_stats(tuned.model, eval_frames);

    // from-scratch baseline: identical architecture, same training budget,
    // same threshold calibration
    tasks::TaskModel scratch = tasks::build_task_model(desk_encoder_config(), head_cfg, 0xC62);
    scratch.class_names = {"idle", "occupied"};
    tasks::train_task_model(scratch, train, val, fc);
    std::vector<tasks::Prediction> scratch_val = tasks::predict(scratch, iq_of(val));
    std::vector<double> scratch_scores;
    for (const auto& p : scratch_val)
        scratch_scores.push_back(tasks::decision_score(p, signals::Task::SS));
    scratch.threshold = tasks::calibrate_threshold(scratch_scores, val_labels, 0.05);
    SsEvalStats scratch_stats = ss_stats(scratch, eval_frames);

    std::ostringstream os;
    os << "acc@snr>=0 min " << tuned_stats.high_snr_min_acc << ", spearman "
       << tuned_stats.spearman << ", cal Pfa " << cal_pfa << ", mean acc tuned "
       << tuned_stats.mean_acc << " vs scratch " << scratch_stats.mean_acc
       << ", trainable fraction " << tuned.result.trainable_fraction;
    detail = os.str();
    return tuned_stats.high_snr_min_acc >= 0.95 && cal_pfa <= 0.05 &&
           tuned_stats.spearman > 0.9 && tuned_stats.mean_acc > scratch_stats.mean_acc;
}

bool criterion7_desk_ad(Context& ctx, std::string& detail) {
    DeskPretrain& desk = ctx.desk_pretrain();
    const std::vector<double> train_grid = {0, -5, -10, -15, -20};

    std::vector<signals::LabeledFrame> labeled = ad_task_frames(150, 0xC70, train_grid);
    auto [train, val] = split_at(labeled, 0.9, 29);

    tasks::TaskHeadConfig head_cfg;
    head_cfg.task = signals::Task::AD;
    head_cfg.num_classes = 1;
    tasks::FineTuneConfig fc;
    fc.lr = 3e-4;
    fc.batch_size = 64;
    fc.epochs = 2;
    fc.seed = 52;
    tasks::FinetuneOutput tuned = tasks::finetune(desk.checkpoint_path, head_cfg, train, val, fc,
                                                  {"normal", "anomalous"});

    std::map<double, double> auc_by_snr;
    uint64_t seed = 0xC71;
    for (double snr : {0.0, -10.0, -20.0}) {
        std::vector<signals::LabeledFrame> eval_frames = ad_task_frames(150, seed, {snr});
        seed += 7777;
        std::vector<eval::ScoredSample> samples = score_frames(tuned.model, eval_frames);
        auc_by_snr[snr] = eval::auc(eval::roc_curve(samples));
    }

    std::ostringstream os;
    os << "AUC: 0 dB " << auc_by_snr[0.0] << ", -10 dB " << auc_by_snr[-10.0] << ", -20 dB "
       << auc_by_snr[-20.0];
    detail = os.str();
    return auc_by_snr[0.0] >= 0.90 && auc_by_snr[0.0] > auc_by_snr[-10.0] &&
           auc_by_snr[-10.0] > auc_by_snr[-20.0];
}

bool criterion8_desk_wtc(Context& ctx, std::string& detail) {
    DeskPretrain& desk = ctx.desk_pretrain();
    const std::vector<double> grid = {5, 10, 15};

    std::vector<signals::LabeledFrame> labeled = wtc_task_frames(300, 0xC80, grid);
    auto [train, val] = split_at(labeled, 0.9, 31);
    std::vector<signals::LabeledFrame> eval_frames = wtc_task_frames(100, 0xC81, grid);

    tasks::TaskHeadConfig head_cfg;
    head_cfg.task = signals::Task::WTC;
    head_cfg.gru_hidden = 64;
    head_cfg.num_classes = 3;
    tasks::FineTuneConfig fc;
    fc.lr = 3e-4;
    fc.batch_size = 64;
    fc.epochs = 2;
    fc.seed = 53;
    tasks::FinetuneOutput tuned = tasks::finetune(desk.checkpoint_path, head_cfg, train, val, fc,
                                                  {"bpsk", "qpsk", "16qam"});

    std::vector<eval::ScoredSample> samples = score_frames(tuned.model, eval_frames);
    eval::Confusion confusion = eval::confusion_matrix(samples, 3);
    eval::Prf macro = eval::macro_prf(confusion);
    oracles::NaivePrf naive = oracles::naive_macro_prf(confusion);
    const bool oracle_exact = macro.precision == naive.precision &&
                              macro.recall == naive.recall && macro.f1 == naive.f1;

    std::ostringstream os;
    os << "macro F1 " << macro.f1 << " (P " << macro.precision << ", R " << macro.recall
       << "), naive-oracle equality " << (oracle_exact ? "exact" : "BROKEN");
    detail = os.str();
    return macro.f1 >= 0.90 && oracle_exact;
}

bool criterion9_metric_correctness(Context&, std::string& detail) {
    Rng rng(0xC9);

    std::vector<eval::ScoredSample> separable;
    for (int k = 0; k < 200; ++k) {
        const int label = k % 2;
        separable.push_back(
            {label ? 0.7 + 0.3 * rng.uniform() : 0.3 * rng.uniform(), label, label, 0.0});
    }
    const double auc_sep = eval::auc(eval::roc_curve(separable));

    std::vector<eval::ScoredSample> random;
    for (int k = 0; k < 10000; ++k) {
        const int label = rng.bernoulli(0.5) ? 1 : 0;
        random.push_back({rng.uniform(), label, label, 0.0});
    }
    const double auc_rand = eval::auc(eval::roc_curve(random));

    bool brute_ok = true;
    for (int trial = 0; trial < 10 && brute_ok; ++trial) {
        std::vector<eval::ScoredSample> samples;
        const int n = 50 + static_cast<int>(rng.below(150));
        bool pos = false, neg = false;
        for (int k = 0; k < n; ++k) {
            const int label = rng.bernoulli(0.5) ? 1 : 0;
            samples.push_back({std::floor(rng.uniform() * 10.0) / 10.0, label, label, 0.0});
            (label ? pos : neg) = true;
        }
        if (!pos || !neg) continue;
        std::vector<eval::RocPoint> fast = eval::roc_curve(samples);
        auto brute = oracles::brute_force_roc(samples);
        brute_ok = fast.size() == brute.size();
        for (size_t k = 0; brute_ok && k < fast.size(); ++k)
            brute_ok = fast[k].pfa == brute[k].first && fast[k].pd == brute[k].second;
    }

    std::vector<eval::ScoredSample> base;
    for (int k = 0; k < 500; ++k) {
        const int label = rng.bernoulli(0.5) ? 1 : 0;
        base.push_back({rng.gaussian() + label, label, label, 0.0});
    }
    std::vector<eval::ScoredSample> warped = base;
    for (auto& s : warped) s.score = std::atan(2.0 * s.score) * 5.0 + 11.0;
    const bool monotone_exact =
        eval::auc(eval::roc_curve(base)) == eval::auc(eval::roc_curve(warped));

    std::ostringstream os;
    os << "AUC separable " << auc_sep << ", random " << auc_rand << ", brute-force "
       << (brute_ok ? "equal" : "BROKEN") << ", monotone invariance "
       << (monotone_exact ? "exact" : "BROKEN");
    detail = os.str();
    return auc_sep == 1.0 && std::abs(auc_rand - 0.5) < 0.05 && brute_ok && monotone_exact;
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) return {};
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

bool criterion10_cli_smoke(Context& ctx, std::string& detail) {
    const double t0 = now_seconds();
    if (ctx.opts.cli_path.empty()) {
        detail = "no --cli path provided";
        return false;
    }
    const fs::path work = fs::path(ctx.opts.work_dir) / "smoke";
    fs::remove_all(work);
    fs::create_directories(work);

    auto run = [&](const std::string& args) {
        const std::string cmd = ctx.opts.cli_path + " " + args + " > " +
                                (work / "last.log").string() + " 2>&1";
        const int rc = std::system(cmd.c_str());
        return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
    };

    const std::string cfg_path = (work / "cfg.json").string();
    auto write_cfg = [&](const std::string& name, uint64_t seed, const std::string& out,
                         const std::string& extra_paths) {
        std::ofstream os(cfg_path, std::ios::binary);
        os << R"({
  "seed": )" << seed
           << R"(, "out_dir": ")" << out << R"(",
  "encoder": {"hidden_dim": 16, "ff_dim": 32, "heads": 2, "layers": 2, "frame_len": 64, "dropout": 0.1},
  "dataset": {"task": "ss", "name": ")"
           << name << R"(", "frames_per_spec": 30, "snr_grid_db": [0, 10]},
  "pretrain": {"epochs": 2, "batch_size": 16, "decoder_dim": 16},
  "finetune": {"epochs": 2, "batch_size": 16},
  "head": {"gru_hidden": 16},
  "paths": {)" << extra_paths
           << R"(}
})";
    };

    const std::string out1 = (work / "run").string();
    write_cfg("train", 7, out1, "");
    if (run("generate --config " + cfg_path) != 0) {
        detail = "generate failed";
        return false;
    }
    write_cfg("evalset", 7700, out1, "");
    if (run("generate --config " + cfg_path) != 0) {
        detail = "generate (eval) failed";
        return false;
    }
    write_cfg("train", 7, out1,
              R"("train_dataset": ")" + out1 + R"(/train", "eval_dataset": ")" + out1 +
                  R"(/evalset")");
    if (run("pretrain --config " + cfg_path) != 0) {
        detail = "pretrain failed";
        return false;
    }
    if (run("finetune --config " + cfg_path) != 0) {
        detail = "finetune failed";
        return false;
    }
    if (run("eval --config " + cfg_path) != 0) {
        detail = "eval failed";
        return false;
    }
    if (run("report " + out1) != 0) {
        detail = "report failed";
        return false;
    }

    // rerunning eval into a fresh directory reproduces the CSVs bit-exactly
    const std::string out2 = (work / "rerun").string();
    write_cfg("train", 7, out2,
              R"("train_dataset": ")" + out1 + R"(/train", "eval_dataset": ")" + out1 +
                  R"(/evalset", "artifact": ")" + out1 + R"(/ss_artifact")");
    if (run("eval --config " + cfg_path) != 0) {
        detail = "eval rerun failed";
        return false;
    }
    for (const char* f : {"roc.csv", "acc_by_snr.csv", "prf.csv", "confusion.csv"}) {
        const std::string a = read_file(fs::path(out1) / f);
        const std::string b = read_file(fs::path(out2) / f);
        if (a.empty() || a != b) {
            detail = std::string("metrics CSV not reproducible: ") + f;
            return false;
        }
    }

    // dataset and checkpoint round-trips are bit-exact
    auto [manifest, frames] = signals::read_dataset(out1 + "/train");
    const std::string copy_base = (work / "copy").string();
    signals::write_dataset(copy_base, manifest, frames);
    if (read_file(out1 + "/train.f32") != read_file(copy_base + ".f32")) {
        detail = "dataset payload round-trip not bit-exact";
        return false;
    }
    pretrain::PretrainModel model = pretrain::load_checkpoint(out1 + "/pretrained.sfma");
    pretrain::save_checkpoint((work / "ckpt_copy.sfma").string(), model);
    if (read_file(out1 + "/pretrained.sfma") != read_file(work / "ckpt_copy.sfma")) {
        detail = "checkpoint round-trip not bit-exact";
        return false;
    }

    // exit-code contract
    std::ofstream(work / "bad.json") << R"({"pretrain": {"epocs": 1}})";
    if (run("pretrain --config " + (work / "bad.json").string()) != 2) {
        detail = "invalid config key did not exit with code 2";
        return false;
    }
    write_cfg("train", 7, (work / "missing").string(), R"("train_dataset": "/nonexistent/ds")");
    if (run("pretrain --config " + cfg_path) != 3) {
        detail = "missing dataset did not exit with code 3";
        return false;
    }

    const double secs = now_seconds() - t0;
    std::ostringstream os;
    os << "full pipeline, byte-identical eval rerun, bit-exact round-trips, exit codes 2/3, "
       << secs << " s";
    detail = os.str();
    return secs < 1800.0;
}

}  // namespace

int main(int argc, char** argv) {
    Options opts;
    for (int k = 1; k < argc; ++k) {
        const std::string arg = argv[k];
        if (arg == "--cli" && k + 1 < argc) {
            opts.cli_path = argv[++k];
        } else if (arg == "--work-dir" && k + 1 < argc) {
            opts.work_dir = argv[++k];
        } else if (arg == "--only" && k + 1 < argc) {
            std::stringstream ss(argv[++k]);
            std::string item;
            while (std::getline(ss, item, ',')) opts.only.push_back(std::atoi(item.c_str()));
        } else {
            std::cerr << "unknown argument: " << arg << "\n";
            return 2;
        }
    }
    fs::create_directories(opts.work_dir);

    Context ctx;
    ctx.opts = opts;

    struct Criterion {
        int id;
        const char* title;
        std::function<bool(Context&, std::string&)> run;
    };
    const std::vector<Criterion> criteria = {
        {1, "gradient integrity (finite differences, every parameter)", criterion1_gradients},
        {2, "attention equals brute-force oracle", criterion2_attention_oracle},
        {3, "normalization/mask/reconstruction-loss property suites", criterion3_core_properties},
        {4, "LoRA contracts (zero-init, frozen bits, merge, accounting)",
         criterion4_lora_contracts},
        {5, "pretraining progress on desk-scale data", criterion5_pretraining_progress},
        {6, "desk-scale spectrum sensing", criterion6_desk_ss},
        {7, "desk-scale anomaly detection", criterion7_desk_ad},
        {8, "desk-scale technology classification", criterion8_desk_wtc},
        {9, "metric correctness (AUC, ROC brute force, invariances)",
         criterion9_metric_correctness},
        {10, "reproducibility, serialization and CLI smoke run", criterion10_cli_smoke},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!opts.selected(c.id)) continue;
        std::string detail;
        bool ok = false;
        const double t0 = now_seconds();
        try {
            ok = c.run(ctx, detail);
        } catch (const std::exception& e) {
            detail = std::string("exception: ") + e.what();
        }
        const double secs = now_seconds() - t0;
        std::printf("[%s] criterion %d: %s -- %s (%.1f s)\n", ok ? "PASS" : "FAIL", c.id, c.title,
                    detail.c_str(), secs);
        std::fflush(stdout);
        failures += !ok;
    }
    if (failures)
        std::printf("%d criterion(s) FAILED\n", failures);
    else
        std::printf("all criteria passed\n");
    return failures == 0 ? 0 : 1;
}
