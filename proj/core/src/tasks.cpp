#include "spectrumfm/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "spectrumfm/parallel.hpp"
#include "spectrumfm/pretrain.hpp"

namespace spectrumfm::tasks {

void TaskHeadConfig::validate() const {
    switch (task) {
        case Task::SS:
            if (num_classes != 2) throw ConfigError("head: SS requires num_classes == 2");
            break;
        case Task::WTC:
            if (num_classes < 2) throw ConfigError("head: WTC requires num_classes >= 2");
            break;
        case Task::AD:
            if (num_classes != 1) throw ConfigError("head: AD scores a single class");
            break;
    }
    if (task != Task::AD && gru_hidden < 1) throw ConfigError("head: gru_hidden must be >= 1");
}

void FineTuneConfig::validate() const {
    if (lr < 0.0) throw ConfigError("finetune: lr must be >= 0");
    if (batch_size < 1) throw ConfigError("finetune: batch_size must be >= 1");
    if (epochs < 1) throw ConfigError("finetune: epochs must be >= 1");
    if (weight_decay < 0.0) throw ConfigError("finetune: weight_decay must be >= 0");
}

TaskModel build_task_model(const encoder::EncoderConfig& enc_cfg, const TaskHeadConfig& head_cfg,
                           uint64_t init_seed, const checkpoint::Archive* base) {
    head_cfg.validate();
    TaskModel m;
    Rng rng(mix_seed(init_seed, 0x7461736bULL));
    m.enc = encoder::build_encoder(m.store, enc_cfg, rng);
    if (base) checkpoint::load_store(*base, m.store);

    m.head.cfg = head_cfg;
    const int d = enc_cfg.hidden_dim;
    if (head_cfg.task == Task::AD) {
        m.head.ad.w = m.store.create("head.ad.w", d, 1);
        m.head.ad.b = m.store.create("head.ad.b", 1, 1);
        init_xavier_uniform(m.head.ad.w->value, d, 1, rng);
    } else {
        const int h = head_cfg.gru_hidden;
        m.head.gru.hidden = h;
        m.head.gru.w = m.store.create("head.gru.w", d, 3 * h);
        m.head.gru.u = m.store.create("head.gru.u", h, 3 * h);
        m.head.gru.b = m.store.create("head.gru.b", 1, 3 * h);
        m.head.gru.out_w = m.store.create("head.out.w", h, head_cfg.num_classes);
        m.head.gru.out_b = m.store.create("head.out.b", 1, head_cfg.num_classes);
        init_xavier_uniform(m.head.gru.w->value, d, h, rng);
        init_xavier_uniform(m.head.gru.u->value, h, h, rng);
        init_xavier_uniform(m.head.gru.out_w->value, h, head_cfg.num_classes, rng);
    }
    return m;
}

std::vector<Param*> head_params(const TaskModel& model) {
    std::vector<Param*> out;
    if (model.head.cfg.task == Task::AD) {
        out = {model.head.ad.w, model.head.ad.b};
    } else {
        out = {model.head.gru.w, model.head.gru.u, model.head.gru.b, model.head.gru.out_w,
               model.head.gru.out_b};
    }
    return out;
}

namespace {

NodeId gru_final_state(Tape& tape, NodeId hidden, const GruHeadParams& gru) {
    const int n = tape.val(hidden).rows;
    const int h = gru.hidden;
    NodeId xw = tape.add_rowvec(tape.matmul(hidden, tape.leaf(*gru.w)), tape.leaf(*gru.b));
    NodeId u = tape.leaf(*gru.u);
    NodeId state = tape.constant(Mat(1, h));
    for (int t = 0; t < n; ++t) {
        NodeId xw_t = tape.rows(xw, t, 1);
        NodeId uh = tape.matmul(state, u);
        NodeId z = tape.sigmoid(tape.add(tape.cols(xw_t, 0, h), tape.cols(uh, 0, h)));
        NodeId r = tape.sigmoid(tape.add(tape.cols(xw_t, h, h), tape.cols(uh, h, h)));
        NodeId n_gate =
            tape.tanh_op(tape.add(tape.cols(xw_t, 2 * h, h), tape.mul(r, tape.cols(uh, 2 * h, h))));
        state = tape.add(tape.mul(tape.affine(z, -1.0, 1.0), n_gate), tape.mul(z, state));
    }
    return state;
}

}  // namespace

NodeId head_logits_tape(Tape& tape, NodeId hidden, const TaskHeadParams& head,
                        const encoder::TrainCtx* train) {
    (void)train;
    if (head.cfg.task == Task::AD) {
        NodeId pooled = tape.mean_rows(hidden);
        return tape.add_rowvec(tape.matmul(pooled, tape.leaf(*head.ad.w)),
                               tape.leaf(*head.ad.b));
    }
    NodeId state = gru_final_state(tape, hidden, head.gru);
    return tape.add_rowvec(tape.matmul(state, tape.leaf(*head.gru.out_w)),
                           tape.leaf(*head.gru.out_b));
}

Prediction head_forward(const Mat& hidden, const TaskHeadParams& head, double threshold) {
    Tape tape;
    NodeId logits = head_logits_tape(tape, tape.input(hidden), head, nullptr);
    Prediction p;
    p.threshold = threshold;
    if (head.cfg.task == Task::AD) {
        p.anomaly_score = sigmoid_scalar(tape.scalar(logits));
        p.label = p.anomaly_score >= threshold ? 1 : 0;
        return p;
    }
    const Mat& probs = tape.val(tape.softmax_rows(logits));
    p.class_probs.assign(probs.v.begin(), probs.v.end());
    if (head.cfg.task == Task::SS) {
        p.label = p.class_probs[1] >= threshold ? 1 : 0;
    } else {
        p.label = static_cast<int>(
            std::max_element(p.class_probs.begin(), p.class_probs.end()) - p.class_probs.begin());
    }
    return p;
}

namespace {

void validate_labels(Task task, int num_classes, std::span<const signals::LabeledFrame> frames) {
    for (const auto& f : frames) {
        const int limit = task == Task::AD ? 2 : num_classes;
        if (f.label < 0 || f.label >= limit)
            throw DataError("finetune: label " + std::to_string(f.label) +
                            " inconsistent with task class set");
        if (f.task != task) throw DataError("finetune: frame task does not match head task");
    }
}

struct PreparedSample {
    Mat input;  // Nx2 normalized
    int label;
};

std::vector<PreparedSample> prepare_all(std::span<const signals::LabeledFrame> frames) {
    std::vector<PreparedSample> out;
    out.reserve(frames.size());
    for (const auto& f : frames)
        out.push_back(
            {encoder::frame_to_input(signals::normalize(signals::iq_to_ap(f.frame))), f.label});
    return out;
}

double sample_loss(Tape& tape, const TaskModel& model, const PreparedSample& s,
                   const encoder::TrainCtx* train, GradSink* sink) {
    NodeId hidden =
        encoder::encode_tape(tape, model.enc, tape.input(s.input), model.binder(), train);
    NodeId logits = head_logits_tape(tape, hidden, model.head, train);
    NodeId loss = model.head.cfg.task == Task::AD
                      ? tape.bce_logit(logits, static_cast<double>(s.label))
                      : tape.cross_entropy_logits(logits, s.label);
    const double value = tape.scalar(loss);
    if (sink) tape.backward(loss, *sink);
    return value;
}

double eval_mean_loss(const TaskModel& model, const std::vector<PreparedSample>& samples,
                      int threads) {
    std::vector<double> sums(static_cast<size_t>(threads), 0.0);
    parallel_chunks(static_cast<int>(samples.size()), threads, [&](int b, int e, int w) {
        for (int i = b; i < e; ++i) {
            Tape tape(false);
            sums[static_cast<size_t>(w)] +=
                sample_loss(tape, model, samples[static_cast<size_t>(i)], nullptr, nullptr);
        }
    });
    double total = 0.0;
    for (double s : sums) total += s;
    return total / static_cast<double>(samples.size());
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

FinetuneResult train_task_model(TaskModel& model, std::span<const signals::LabeledFrame> train,
                                std::span<const signals::LabeledFrame> val,
                                const FineTuneConfig& cfg) {
    cfg.validate();
    if (train.empty() || val.empty())
        throw ConfigError("train_task_model: train and validation splits must be nonempty");
    validate_labels(model.head.cfg.task, model.head.cfg.num_classes, train);
    validate_labels(model.head.cfg.task, model.head.cfg.num_classes, val);

    const int threads = resolve_threads(cfg.threads);
    std::vector<PreparedSample> train_s = prepare_all(train);
    std::vector<PreparedSample> val_s = prepare_all(val);

    FinetuneResult result;
    result.trainable_fraction = lora::trainable_fraction(model.store);

    AdamW opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});
    GradSink main_sink(model.store);
    std::vector<GradSink> worker_sinks;
    for (int w = 0; w < threads; ++w) worker_sinks.emplace_back(model.store);

    std::vector<int> order(train_s.size());
    std::iota(order.begin(), order.end(), 0);

    double best_val = eval_mean_loss(model, val_s, threads);
    int best_epoch = 0;
    std::vector<Mat> best = snapshot_params(model.store);
    result.curve.push_back({0, best_val, "val"});

    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        Rng shuffle_rng(mix_seed(cfg.seed, 0x66746e65ULL, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        for (size_t batch_start = 0, batch_idx = 0; batch_start < order.size();
             batch_start += static_cast<size_t>(cfg.batch_size), ++batch_idx) {
            const size_t batch_end =
                std::min(order.size(), batch_start + static_cast<size_t>(cfg.batch_size));
            const int batch_n = static_cast<int>(batch_end - batch_start);
            main_sink.clear();
            std::vector<double> loss_sums(static_cast<size_t>(threads), 0.0);
            parallel_chunks(batch_n, threads, [&](int b, int e, int w) {
                GradSink& sink = worker_sinks[static_cast<size_t>(w)];
                sink.clear();
                for (int k = b; k < e; ++k) {
                    const int idx = order[batch_start + static_cast<size_t>(k)];
                    Rng dropout_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(idx), 0x64));
                    encoder::TrainCtx train_ctx{model.enc.cfg.dropout, &dropout_rng};
                    const encoder::TrainCtx* ctx =
                        model.enc.cfg.dropout > 0.0 ? &train_ctx : nullptr;
                    Tape tape(true);
                    loss_sums[static_cast<size_t>(w)] +=
                        sample_loss(tape, model, train_s[static_cast<size_t>(idx)], ctx, &sink);
                }
            });
            double mean_loss = 0.0;
            for (int w = 0; w < threads && w < batch_n; ++w) {
                main_sink.add_from(worker_sinks[static_cast<size_t>(w)]);
                mean_loss += loss_sums[static_cast<size_t>(w)];
            }
            mean_loss /= batch_n;
            if (!std::isfinite(mean_loss))
                throw TrainError("finetune: non-finite loss in epoch " + std::to_string(epoch) +
                                 ", batch " + std::to_string(batch_idx));
            opt.step(model.store, main_sink, 1.0 / batch_n);
            ++step;
            result.curve.push_back({step, mean_loss, "train"});
        }
        const double val_loss = eval_mean_loss(model, val_s, threads);
        result.curve.push_back({step, val_loss, "val"});
        if (val_loss < best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            best = snapshot_params(model.store);
        }
    }
    restore_params(model.store, best);
    result.best_val_loss = best_val;
    result.best_epoch = best_epoch;
    return result;
}

FinetuneOutput finetune(const std::string& base_checkpoint_path, const TaskHeadConfig& head_cfg,
                        std::span<const signals::LabeledFrame> train,
                        std::span<const signals::LabeledFrame> val, const FineTuneConfig& cfg,
                        const std::vector<std::string>& class_names) {
    checkpoint::Archive archive = checkpoint::load_archive(base_checkpoint_path);
    nlohmann::json meta = nlohmann::json::parse(archive.meta_json);
    encoder::EncoderConfig enc_cfg = pretrain::encoder_config_from_json(meta.at("encoder").dump());

    FinetuneOutput out{build_task_model(enc_cfg, head_cfg, cfg.seed, &archive), {}};
    std::vector<Param*> heads = head_params(out.model);
    out.model.adapters = lora::attach_adapters(out.model.store, out.model.enc, cfg.lora, cfg.seed,
                                               heads);
    out.model.has_adapters = true;
    out.model.class_names = class_names;
    out.result = train_task_model(out.model, train, val, cfg);
    return out;
}

std::vector<Prediction> predict(const TaskModel& model, std::span<const signals::IQFrame> frames,
                                int threads) {
    const int n = model.enc.cfg.frame_len;
    for (const auto& f : frames)
        if (f.n() != n)
            throw ShapeError("predict: frame length " + std::to_string(f.n()) +
                             " does not match model frame_len " + std::to_string(n));
    std::vector<Prediction> out(frames.size());
    parallel_chunks(static_cast<int>(frames.size()), resolve_threads(threads),
                    [&](int b, int e, int) {
                        for (int i = b; i < e; ++i) {
                            const auto& f = frames[static_cast<size_t>(i)];
                            Mat hidden = encoder::encode(
                                signals::normalize(signals::iq_to_ap(f)), model.enc,
                                encoder::Mode::Eval, nullptr, model.binder());
                            out[static_cast<size_t>(i)] =
                                head_forward(hidden, model.head, model.threshold);
                        }
                    });
    return out;
}

double decision_score(const Prediction& p, Task task) {
    switch (task) {
        case Task::SS: return p.class_probs.at(1);
        case Task::AD: return p.anomaly_score;
        case Task::WTC: throw EvalError("decision_score: WTC has no binary score");
    }
    throw EvalError("decision_score: unknown task");
}

double calibrate_threshold(std::span<const double> scores, std::span<const int> labels,
                           double target_pfa) {
    if (scores.size() != labels.size())
        throw ShapeError("calibrate_threshold: scores/labels length mismatch");
    if (!(target_pfa >= 0.0 && target_pfa <= 1.0))
        throw ConfigError("calibrate_threshold: target_pfa must be in [0, 1]");
    long negatives = 0, positives = 0;
    for (int l : labels) (l == 0 ? negatives : positives)++;
    if (negatives == 0 || positives == 0)
        throw DataError("calibrate_threshold: both classes must be present");

    std::vector<double> distinct(scores.begin(), scores.end());
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

    // Decision rule is score >= threshold. Pfa(t) is nonincreasing in t, so
    // scan candidates upward for the first feasible one, then return the
    // midpoint of the feasible gap below it.
    for (size_t i = 0; i < distinct.size(); ++i) {
        const double t = distinct[i];
        long fp = 0;
        for (size_t k = 0; k < scores.size(); ++k)
            if (labels[k] == 0 && scores[k] >= t) ++fp;
        const double pfa = static_cast<double>(fp) / static_cast<double>(negatives);
        if (pfa <= target_pfa) {
            if (i == 0) return t;
            return 0.5 * (distinct[i - 1] + t);
        }
    }
    return distinct.back() + 1.0;  // nothing feasible below: reject everything
}

void save_task_artifact(const std::string& base_path, const TaskModel& model,
                        const std::string& base_checkpoint_path) {
    if (!model.has_adapters) throw ConfigError("save_task_artifact: model has no adapters");
    nlohmann::ordered_json meta;
    meta["kind"] = "task_artifact";
    meta["task"] = signals::task_name(model.head.cfg.task);
    meta["class_names"] = model.class_names;
    meta["threshold"] = model.threshold;
    meta["num_classes"] = model.head.cfg.num_classes;
    meta["gru_hidden"] = model.head.cfg.gru_hidden;
    meta["encoder"] = nlohmann::ordered_json::parse(pretrain::encoder_config_to_json(model.enc.cfg));
    meta["lora"] = nlohmann::ordered_json::parse(lora::lora_config_to_json(model.adapters.config()));
    meta["base_checkpoint"] = base_checkpoint_path;
    meta["base_fingerprint"] = checkpoint::file_fingerprint(base_checkpoint_path);

    std::vector<checkpoint::ArchiveEntry> tensors = lora::adapter_entries(model.adapters);
    for (Param* h : head_params(model)) tensors.push_back({h->name, h->value});
    checkpoint::save_archive(base_path + ".tensors", meta.dump(), tensors);

    std::ofstream os(base_path + ".task.json", std::ios::binary);
    if (!os) throw DataError("save_task_artifact: cannot open " + base_path + ".task.json");
    os << meta.dump(2) << "\n";
    if (!os) throw DataError("save_task_artifact: metadata write failed");
}

TaskModel load_task_artifact(const std::string& base_path,
                             const std::string& checkpoint_override) {
    std::ifstream is(base_path + ".task.json", std::ios::binary);
    if (!is) throw DataError("load_task_artifact: cannot open " + base_path + ".task.json");
    nlohmann::json meta;
    try {
        is >> meta;
    } catch (const std::exception& e) {
        throw DataError(std::string("load_task_artifact: malformed metadata: ") + e.what());
    }
    if (meta.value("kind", "") != "task_artifact")
        throw DataError("load_task_artifact: not a task artifact: " + base_path);

    TaskHeadConfig head_cfg;
    head_cfg.task = signals::task_from_name(meta.at("task").get<std::string>());
    head_cfg.num_classes = meta.at("num_classes").get<int>();
    head_cfg.gru_hidden = meta.at("gru_hidden").get<int>();
    encoder::EncoderConfig enc_cfg = pretrain::encoder_config_from_json(meta.at("encoder").dump());

    const std::string ckpt_path =
        checkpoint_override.empty() ? meta.at("base_checkpoint").get<std::string>()
                                    : checkpoint_override;
    checkpoint::Archive base = checkpoint::load_archive(ckpt_path);

    TaskModel model = build_task_model(enc_cfg, head_cfg, 0, &base);
    checkpoint::Archive artifact = checkpoint::load_archive(base_path + ".tensors");
    std::vector<Param*> heads = head_params(model);
    model.adapters = lora::load_adapters(artifact, model.store, model.enc, heads);
    model.has_adapters = true;

    std::string problems;
    for (Param* h : heads) {
        const Mat* m = artifact.find(h->name);
        if (!m) {
            problems += (problems.empty() ? "" : ", ") + h->name + " (missing)";
            continue;
        }
        if (m->rows != h->value.rows || m->cols != h->value.cols) {
            problems += (problems.empty() ? "" : ", ") + h->name + " (shape mismatch)";
            continue;
        }
        h->value = *m;
    }
    if (!problems.empty())
        throw DataError("load_task_artifact: incompatible head tensors: " + problems);

    model.threshold = meta.at("threshold").get<double>();
    model.class_names = meta.at("class_names").get<std::vector<std::string>>();
    return model;
}

}  // namespace spectrumfm::tasks
