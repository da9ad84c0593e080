#include "spectrumfm/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <numeric>

#include <json.hpp>

#include "spectrumfm/checkpoint.hpp"
#include "spectrumfm/parallel.hpp"

namespace spectrumfm::pretrain {

MaskVector sample_mask(int n, double r, uint64_t seed) {
    if (!(r > 0.0 && r < 1.0)) throw ConfigError("sample_mask: mask ratio must be in (0, 1)");
    if (n < 1) throw ConfigError("sample_mask: n must be >= 1");
    MaskVector m;
    m.ratio = r;
    m.keep.resize(static_cast<size_t>(n));
    for (int attempt = 0; attempt < 2; ++attempt) {
        Rng rng(mix_seed(seed, 0x6d61736bULL, static_cast<uint64_t>(attempt)));
        for (auto& k : m.keep) k = rng.bernoulli(r) ? 0 : 1;
        if (m.masked_count() > 0) break;
    }
    return m;
}

signals::NormalizedFrame apply_mask(const signals::NormalizedFrame& x, const MaskVector& m) {
    if (static_cast<int>(m.keep.size()) != x.n())
        throw ShapeError("apply_mask: mask length does not match frame");
    signals::NormalizedFrame out = x;
    for (size_t p = 0; p < m.keep.size(); ++p) {
        if (m.keep[p]) continue;
        out.channels[0][p] = 0.0;
        out.channels[1][p] = 0.0;
    }
    return out;
}

double recon_loss(const Mat& pred, const signals::NormalizedFrame& target, const MaskVector& m) {
    Tape tape;
    Mat tgt = encoder::frame_to_input(target);
    NodeId p = tape.input(pred);
    return tape.scalar(tape.masked_mse(p, tgt, m.keep));
}

NodeId recon_decode_tape(Tape& tape, NodeId hidden, const ReconDecoderParams& p) {
    NodeId h = tape.gelu(tape.add_rowvec(tape.matmul(hidden, tape.leaf(*p.w1)), tape.leaf(*p.b1)));
    return tape.add_rowvec(tape.matmul(h, tape.leaf(*p.w2)), tape.leaf(*p.b2));
}

Mat recon_decode(const Mat& hidden, const ReconDecoderParams& p) {
    Tape tape;
    return tape.val(recon_decode_tape(tape, tape.input(hidden), p));
}

NodeId next_slot_pred_tape(Tape& tape, NodeId hidden, const NextSlotHead& head) {
    const int n = tape.val(hidden).rows;
    if (n < 1) throw ConfigError("next_slot: need at least one hidden position");
    NodeId last = tape.rows(hidden, n - 1, 1);
    return tape.add_rowvec(tape.matmul(last, tape.leaf(*head.w)), tape.leaf(*head.b));
}

double next_slot_loss(const Mat& hidden, const NextSlotHead& head,
                      const std::array<double, 2>& target) {
    Tape tape;
    NodeId pred = next_slot_pred_tape(tape, tape.input(hidden), head);
    Mat tgt(1, 2);
    tgt.v[0] = target[0];
    tgt.v[1] = target[1];
    return tape.scalar(tape.sqdist(pred, tgt));
}

void PretrainConfig::validate() const {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
        throw ConfigError("pretrain: mask_ratio must be in (0, 1)");
    if (lr < 0.0) throw ConfigError("pretrain: lr must be >= 0");
    if (batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("pretrain: epochs must be >= 1");
    if (early_stop_patience < 1) throw ConfigError("pretrain: early_stop_patience must be >= 1");
    if (w_recon < 0.0 || w_pred < 0.0) throw ConfigError("pretrain: loss weights must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("pretrain: weight_decay must be >= 0");
}

PretrainModel build_pretrain_model(const encoder::EncoderConfig& cfg, int decoder_dim,
                                   uint64_t init_seed) {
    if (decoder_dim < 1) throw ConfigError("pretrain: decoder_dim must be >= 1");
    PretrainModel m;
    Rng rng(mix_seed(init_seed, 0x696e6974ULL));
    m.enc = encoder::build_encoder(m.store, cfg, rng);
    const int d = cfg.hidden_dim;
    m.dec.dim = decoder_dim;
    m.dec.w1 = m.store.create("recon.w1", d, decoder_dim);
    m.dec.b1 = m.store.create("recon.b1", 1, decoder_dim);
    m.dec.w2 = m.store.create("recon.w2", decoder_dim, 2);
    m.dec.b2 = m.store.create("recon.b2", 1, 2);
    init_xavier_uniform(m.dec.w1->value, d, decoder_dim, rng);
    init_xavier_uniform(m.dec.w2->value, decoder_dim, 2, rng);
    m.next.w = m.store.create("next_slot.w", d, 2);
    m.next.b = m.store.create("next_slot.b", 1, 2);
    init_xavier_uniform(m.next.w->value, d, 2, rng);
    return m;
}

namespace {

struct PreparedFrame {
    Mat target;  // Nx2 normalized amplitude/phase
};

PreparedFrame prepare(const signals::IQFrame& f) {
    return {encoder::frame_to_input(signals::normalize(signals::iq_to_ap(f)))};
}

struct FrameLosses {
    double recon = 0.0;
    double pred = 0.0;
    bool has_recon = false;
};

// Forward (and optionally backward) for one frame: masked reconstruction
// plus next-slot prediction on the unmasked first N-1 positions.
FrameLosses frame_losses(Tape& tape, const PretrainModel& model, const PreparedFrame& pf,
                         const MaskVector& mask, const PretrainConfig& cfg, Rng* dropout_rng,
                         GradSink* sink) {
    const int n = pf.target.rows;
    FrameLosses out;

    encoder::TrainCtx train{model.enc.cfg.dropout, dropout_rng};
    const encoder::TrainCtx* ctx = dropout_rng ? &train : nullptr;

    std::vector<NodeId> terms;
    Mat masked = pf.target;
    for (int p = 0; p < n; ++p) {
        if (mask.keep[static_cast<size_t>(p)]) continue;
        masked.at(p, 0) = 0.0;
        masked.at(p, 1) = 0.0;
    }
    if (mask.masked_count() > 0) {
        NodeId hidden =
            encoder::encode_tape(tape, model.enc, tape.input(std::move(masked)), nullptr, ctx);
        NodeId pred = recon_decode_tape(tape, hidden, model.dec);
        NodeId loss = tape.masked_mse(pred, pf.target, mask.keep);
        out.recon = tape.scalar(loss);
        out.has_recon = true;
        if (cfg.w_recon != 1.0) loss = tape.scale(loss, cfg.w_recon);
        terms.push_back(loss);
    }

    Mat prefix(n - 1, 2);
    for (int p = 0; p + 1 < n; ++p) {
        prefix.at(p, 0) = pf.target.at(p, 0);
        prefix.at(p, 1) = pf.target.at(p, 1);
    }
    NodeId hidden2 =
        encoder::encode_tape(tape, model.enc, tape.input(std::move(prefix)), nullptr, ctx);
    NodeId pred2 = next_slot_pred_tape(tape, hidden2, model.next);
    Mat tgt(1, 2);
    tgt.v[0] = pf.target.at(n - 1, 0);
    tgt.v[1] = pf.target.at(n - 1, 1);
    NodeId loss2 = tape.sqdist(pred2, tgt);
    out.pred = tape.scalar(loss2);
    if (cfg.w_pred != 1.0) loss2 = tape.scale(loss2, cfg.w_pred);
    terms.push_back(loss2);

    if (sink) {
        NodeId total = terms[0];
        for (size_t i = 1; i < terms.size(); ++i) total = tape.add(total, terms[i]);
        tape.backward(total, *sink);
    }
    return out;
}

struct ValLosses {
    double recon = 0.0, pred = 0.0, total = 0.0;
};

ValLosses eval_split(const PretrainModel& model, const std::vector<PreparedFrame>& frames,
                     const PretrainConfig& cfg, int threads) {
    std::vector<double> recon_by_worker(static_cast<size_t>(threads), 0.0);
    std::vector<double> pred_by_worker(static_cast<size_t>(threads), 0.0);
    parallel_chunks(static_cast<int>(frames.size()), threads, [&](int b, int e, int w) {
        for (int i = b; i < e; ++i) {
            const auto& pf = frames[static_cast<size_t>(i)];
            MaskVector mask = validation_mask(cfg, i, pf.target.rows);
            Tape tape(false);
            FrameLosses fl = frame_losses(tape, model, pf, mask, cfg, nullptr, nullptr);
            recon_by_worker[static_cast<size_t>(w)] += fl.has_recon ? fl.recon : 0.0;
            pred_by_worker[static_cast<size_t>(w)] += fl.pred;
        }
    });
    ValLosses out;
    for (int w = 0; w < threads; ++w) {
        out.recon += recon_by_worker[static_cast<size_t>(w)];
        out.pred += pred_by_worker[static_cast<size_t>(w)];
    }
    const double n = static_cast<double>(frames.size());
    out.recon /= n;
    out.pred /= n;
    out.total = cfg.w_recon * out.recon + cfg.w_pred * out.pred;
    return out;
}

std::vector<Mat> snapshot_params(const ParamStore& store) {
    std::vector<Mat> snap;
    snap.reserve(store.count());
    for (const auto& p : store) snap.push_back(p->value);
    return snap;
}

void restore_params(ParamStore& store, const std::vector<Mat>& snap) {
    size_t i = 0;
    for (const auto& p : store) p->value = snap[i++];
}

}  // namespace

MaskVector validation_mask(const PretrainConfig& cfg, int val_index, int n) {
    return sample_mask(n, cfg.mask_ratio,
                       mix_seed(cfg.seed, 0x76616cULL, static_cast<uint64_t>(val_index)));
}

EvalLosses evaluate_losses(const PretrainModel& model, std::span<const signals::IQFrame> frames,
                           const PretrainConfig& cfg) {
    std::vector<PreparedFrame> prepared;
    prepared.reserve(frames.size());
    for (const auto& f : frames) prepared.push_back(prepare(f));
    ValLosses v = eval_split(model, prepared, cfg, resolve_threads(cfg.threads));
    return {v.recon, v.pred, v.total};
}

PretrainResult run_pretraining(PretrainModel& model, std::span<const signals::IQFrame> train,
                               std::span<const signals::IQFrame> val, const PretrainConfig& cfg,
                               const PretrainHooks* hooks) {
    cfg.validate();
    if (train.empty() || val.empty())
        throw ConfigError("run_pretraining: train and validation splits must be nonempty");

    const int threads = resolve_threads(cfg.threads);
    std::vector<PreparedFrame> train_frames, val_frames;
    train_frames.reserve(train.size());
    for (const auto& f : train) train_frames.push_back(prepare(f));
    val_frames.reserve(val.size());
    for (const auto& f : val) val_frames.push_back(prepare(f));

    PretrainResult result;
    AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    EarlyStopping stopper(cfg.early_stop_patience);

    ValLosses v0 = eval_split(model, val_frames, cfg, threads);
    result.initial_val_total = v0.total;
    result.curve.push_back({0, v0.recon, v0.pred, v0.total, "val"});

    std::vector<Mat> best = snapshot_params(model.store);
    double best_val = v0.total;
    int best_epoch = 0;

    std::vector<int> order(train_frames.size());
    std::iota(order.begin(), order.end(), 0);

    GradSink main_sink(model.store);
    std::vector<GradSink> worker_sinks;
    for (int w = 0; w < threads; ++w) worker_sinks.emplace_back(model.store);

    long step = 0;
    int epochs_run = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        epochs_run = epoch;
        Rng shuffle_rng(mix_seed(cfg.seed, 0x73687566ULL, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);

        for (size_t batch_start = 0, batch_idx = 0; batch_start < order.size();
             batch_start += static_cast<size_t>(cfg.batch_size), ++batch_idx) {
            const size_t batch_end =
                std::min(order.size(), batch_start + static_cast<size_t>(cfg.batch_size));
            const int batch_n = static_cast<int>(batch_end - batch_start);

            main_sink.clear();
            std::vector<double> recon_sum(static_cast<size_t>(threads), 0.0);
            std::vector<double> pred_sum(static_cast<size_t>(threads), 0.0);
            parallel_chunks(batch_n, threads, [&](int b, int e, int w) {
                GradSink& sink = worker_sinks[static_cast<size_t>(w)];
                sink.clear();
                for (int k = b; k < e; ++k) {
                    const int idx = order[batch_start + static_cast<size_t>(k)];
                    const auto& pf = train_frames[static_cast<size_t>(idx)];
                    MaskVector mask =
                        sample_mask(pf.target.rows, cfg.mask_ratio,
                                    mix_seed(cfg.seed, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(idx), 0x6d));
                    Rng dropout_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(idx), 0x64));
                    Rng* drop = model.enc.cfg.dropout > 0.0 ? &dropout_rng : nullptr;
                    Tape tape(true);
                    FrameLosses fl = frame_losses(tape, model, pf, mask, cfg, drop, &sink);
                    recon_sum[static_cast<size_t>(w)] += fl.has_recon ? fl.recon : 0.0;
                    pred_sum[static_cast<size_t>(w)] += fl.pred;
                }
            });
            double recon_mean = 0.0, pred_mean = 0.0;
            for (int w = 0; w < threads && w < batch_n; ++w) {
                main_sink.add_from(worker_sinks[static_cast<size_t>(w)]);
                recon_mean += recon_sum[static_cast<size_t>(w)];
                pred_mean += pred_sum[static_cast<size_t>(w)];
            }
            recon_mean /= batch_n;
            pred_mean /= batch_n;
            const double total = cfg.w_recon * recon_mean + cfg.w_pred * pred_mean;
            if (!std::isfinite(recon_mean))
                throw TrainError("pretrain: non-finite reconstruction loss in epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batch_idx));
            if (!std::isfinite(pred_mean))
                throw TrainError("pretrain: non-finite next-slot loss in epoch " +
                                 std::to_string(epoch) + ", batch " + std::to_string(batch_idx));

            opt.step(model.store, main_sink, 1.0 / batch_n);
            ++step;
            result.curve.push_back({step, recon_mean, pred_mean, total, "train"});
        }

        ValLosses v = eval_split(model, val_frames, cfg, threads);
        double observed = v.total;
        if (hooks && hooks->override_val) observed = hooks->override_val(epoch, observed);
        result.curve.push_back({step, v.recon, v.pred, observed, "val"});

        if (observed < best_val) {
            best_val = observed;
            best_epoch = epoch;
            best = snapshot_params(model.store);
        }
        if (stopper.observe(observed)) break;
    }

    restore_params(model.store, best);
    result.best_val_total = best_val;
    result.best_epoch = best_epoch;
    result.epochs_run = epochs_run;
    return result;
}

void write_loss_curve_csv(const std::string& path, std::span<const LossRecord> curve) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_loss_curve_csv: cannot open " + path);
    os << "step,recon,pred,total,split\n";
    char buf[160];
    for (const auto& r : curve) {
        std::snprintf(buf, sizeof buf, "%ld,%.10g,%.10g,%.10g,%s\n", r.step, r.recon, r.pred,
                      r.total, r.split.c_str());
        os << buf;
    }
    if (!os) throw DataError("write_loss_curve_csv: write failed");
}

std::string encoder_config_to_json(const encoder::EncoderConfig& cfg) {
    nlohmann::ordered_json j;
    j["hidden_dim"] = cfg.hidden_dim;
    j["ff_dim"] = cfg.ff_dim;
    j["heads"] = cfg.heads;
    j["layers"] = cfg.layers;
    j["frame_len"] = cfg.frame_len;
    j["dropout"] = cfg.dropout;
    j["proj_kernel"] = cfg.proj_kernel;
    return j.dump();
}

encoder::EncoderConfig encoder_config_from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const std::exception& e) {
        throw DataError(std::string("encoder config parse: ") + e.what());
    }
    encoder::EncoderConfig cfg;
    cfg.hidden_dim = j.at("hidden_dim").get<int>();
    cfg.ff_dim = j.at("ff_dim").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.layers = j.at("layers").get<int>();
    cfg.frame_len = j.at("frame_len").get<int>();
    cfg.dropout = j.at("dropout").get<double>();
    cfg.proj_kernel = j.at("proj_kernel").get<int>();
    cfg.validate();
    return cfg;
}

void save_checkpoint(const std::string& path, const PretrainModel& model) {
    nlohmann::ordered_json meta;
    meta["kind"] = "pretrain";
    meta["encoder"] = nlohmann::ordered_json::parse(encoder_config_to_json(model.enc.cfg));
    meta["decoder_dim"] = model.dec.dim;
    checkpoint::save_store(path, model.store, meta.dump());
}

PretrainModel load_checkpoint(const std::string& path) {
    checkpoint::Archive archive = checkpoint::load_archive(path);
    nlohmann::json meta = nlohmann::json::parse(archive.meta_json);
    if (meta.value("kind", "") != "pretrain")
        throw DataError("load_checkpoint: not a pretrain checkpoint: " + path);
    encoder::EncoderConfig cfg = encoder_config_from_json(meta.at("encoder").dump());
    PretrainModel model = build_pretrain_model(cfg, meta.at("decoder_dim").get<int>(), 0);
    checkpoint::load_store(archive, model.store);
    return model;
}

}  // namespace spectrumfm::pretrain
