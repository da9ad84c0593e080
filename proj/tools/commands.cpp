#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "spectrumfm/checkpoint.hpp"
#include "spectrumfm/eval.hpp"
#include "spectrumfm/pretrain.hpp"
#include "spectrumfm/tasks.hpp"
#include "spectrumfm/version.hpp"

namespace spectrumfm::cli {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw DataError("cannot open " + tmp.string());
        os << text;
        if (!os) throw DataError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

// Collects run metadata and writes run_record.json atomically at the end.
class RunRecord {
public:
    RunRecord(const RunConfig& cfg, const std::string& command) : out_dir_(cfg.out_dir) {
        record_["command"] = command;
        record_["tool_version"] = std::string("spectrumfm ") + kVersion;
        record_["config_fingerprint"] = cfg.fingerprint();
        record_["started_at"] = iso_timestamp();
        record_["artifacts"] = ordered_json::array();
        record_["metrics"] = ordered_json::object();
    }

    void add_artifact(const std::string& path) { record_["artifacts"].push_back(path); }
    void add_metric(const std::string& key, double value) { record_["metrics"][key] = value; }
    void add_metric(const std::string& key, const std::string& value) {
        record_["metrics"][key] = value;
    }

    void finish() {
        record_["finished_at"] = iso_timestamp();
        write_text_atomic(fs::path(out_dir_) / "run_record.json", record_.dump(2) + "\n");
    }

private:
    std::string out_dir_;
    ordered_json record_;
};

void require_input(const std::string& path, const std::string& what) {
    if (path.empty()) throw ConfigError("missing required path: " + what);
}

// Deterministic train/val split by shuffled index.
std::pair<std::vector<signals::LabeledFrame>, std::vector<signals::LabeledFrame>> split_frames(
    const std::vector<signals::LabeledFrame>& frames, double val_fraction, uint64_t seed) {
    std::vector<int> idx(frames.size());
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(mix_seed(seed, 0x73706c6974ULL));
    rng.shuffle(idx);
    const size_t val_n = std::max<size_t>(1, static_cast<size_t>(frames.size() * val_fraction));
    std::vector<signals::LabeledFrame> train, val;
    for (size_t k = 0; k < idx.size(); ++k) {
        if (k < idx.size() - val_n)
            train.push_back(frames[static_cast<size_t>(idx[k])]);
        else
            val.push_back(frames[static_cast<size_t>(idx[k])]);
    }
    return {std::move(train), std::move(val)};
}

std::vector<signals::IQFrame> iq_only(const std::vector<signals::LabeledFrame>& frames) {
    std::vector<signals::IQFrame> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(f.frame);
    return out;
}

encoder::EncoderConfig encoder_config_of(const RunConfig& cfg) {
    encoder::EncoderConfig e;
    e.hidden_dim = cfg.encoder.hidden_dim;
    e.ff_dim = cfg.encoder.ff_dim;
    e.heads = cfg.encoder.heads;
    e.layers = cfg.encoder.layers;
    e.frame_len = cfg.encoder.frame_len;
    e.dropout = cfg.encoder.dropout;
    e.proj_kernel = cfg.encoder.proj_kernel;
    e.validate();
    return e;
}

std::string default_checkpoint_path(const RunConfig& cfg) {
    return cfg.paths.checkpoint.empty()
               ? (fs::path(cfg.out_dir) / "pretrained.sfma").string()
               : cfg.paths.checkpoint;
}

std::string default_artifact_path(const RunConfig& cfg, signals::Task task) {
    return cfg.paths.artifact.empty()
               ? (fs::path(cfg.out_dir) / (std::string(signals::task_name(task)) + "_artifact"))
                     .string()
               : cfg.paths.artifact;
}

}  // namespace

std::vector<signals::ScenarioSpec> build_scenarios(const RunConfig& cfg) {
    const signals::Task task = signals::task_from_name(cfg.dataset.task);
    if (cfg.dataset.snr_grid_db.empty()) throw ConfigError("dataset.snr_grid_db must be nonempty");
    if (cfg.dataset.modulations.empty()) throw ConfigError("dataset.modulations must be nonempty");

    std::vector<signals::ScenarioSpec> specs;
    auto push = [&](signals::Modulation mod, double snr, double ratio, double bw) {
        signals::ScenarioSpec s;
        s.task = task;
        s.modulation = mod;
        s.snr_db = snr;
        s.interference_bandwidth_ratio = ratio;
        s.bandwidth_scale = bw;
        s.seed = cfg.seed + cfg.dataset.seed_stride * (specs.size() + 1);
        specs.push_back(s);
    };

    switch (task) {
        case signals::Task::SS:
            // one idle spec per occupied spec keeps the classes balanced
            for (double snr : cfg.dataset.snr_grid_db) {
                for (const auto& m : cfg.dataset.modulations) {
                    push(signals::modulation_from_name(m), snr, 1.0, 1.0);
                    push(signals::Modulation::NOISE_ONLY, snr, 1.0, 1.0);
                }
            }
            break;
        case signals::Task::AD:
            if (cfg.dataset.interference_ratios.empty())
                throw ConfigError("dataset.interference_ratios must be nonempty for ad");
            for (double snr : cfg.dataset.snr_grid_db) {
                for (double ratio : cfg.dataset.interference_ratios) {
                    push(signals::modulation_from_name(cfg.dataset.modulations[0]), snr, 1.0, 1.0);
                    push(signals::Modulation::INTERFERED, snr, ratio, 1.0);
                }
            }
            break;
        case signals::Task::WTC:
            if (!cfg.dataset.bandwidth_scales.empty() &&
                cfg.dataset.bandwidth_scales.size() != cfg.dataset.modulations.size())
                throw ConfigError(
                    "dataset.bandwidth_scales must match dataset.modulations in length");
            for (double snr : cfg.dataset.snr_grid_db) {
                for (size_t k = 0; k < cfg.dataset.modulations.size(); ++k) {
                    const double bw = cfg.dataset.bandwidth_scales.empty()
                                          ? 1.0
                                          : cfg.dataset.bandwidth_scales[k];
                    push(signals::modulation_from_name(cfg.dataset.modulations[k]), snr, 1.0, bw);
                }
            }
            break;
    }
    return specs;
}

void cmd_generate(const RunConfig& cfg) {
    fs::create_directories(cfg.out_dir);
    RunRecord record(cfg, "generate");

    const auto specs = build_scenarios(cfg);
    auto [manifest, frames] =
        signals::generate_dataset(specs, cfg.dataset.frames_per_spec, cfg.encoder.frame_len);

    const std::string base = (fs::path(cfg.out_dir) / cfg.dataset.name).string();
    const std::string tmp = base + ".tmp";
    signals::write_dataset(tmp, manifest, frames);
    fs::rename(tmp + ".manifest.json", base + ".manifest.json");
    fs::rename(tmp + ".f32", base + ".f32");

    record.add_artifact(base + ".manifest.json");
    record.add_artifact(base + ".f32");
    record.add_metric("num_frames", static_cast<double>(manifest.num_frames));
    record.add_metric("num_specs", static_cast<double>(specs.size()));
    record.finish();
    std::cout << "generated " << manifest.num_frames << " frames -> " << base << "\n";
}

void cmd_pretrain(const RunConfig& cfg) {
    require_input(cfg.paths.train_dataset, "paths.train_dataset");
    fs::create_directories(cfg.out_dir);
    RunRecord record(cfg, "pretrain");

    auto [manifest, frames] = signals::read_dataset(cfg.paths.train_dataset);
    std::vector<signals::IQFrame> train_iq, val_iq;
    if (!cfg.paths.val_dataset.empty()) {
        auto [vm, vframes] = signals::read_dataset(cfg.paths.val_dataset);
        train_iq = iq_only(frames);
        val_iq = iq_only(vframes);
    } else {
        auto [train, val] = split_frames(frames, cfg.pretrain.val_fraction, cfg.seed);
        train_iq = iq_only(train);
        val_iq = iq_only(val);
    }

    pretrain::PretrainModel model =
        pretrain::build_pretrain_model(encoder_config_of(cfg), cfg.pretrain.decoder_dim, cfg.seed);
    pretrain::PretrainConfig pc;
    pc.mask_ratio = cfg.pretrain.mask_ratio;
    pc.lr = cfg.pretrain.lr;
    pc.batch_size = cfg.pretrain.batch_size;
    pc.epochs = cfg.pretrain.epochs;
    pc.weight_decay = cfg.pretrain.weight_decay;
    pc.early_stop_patience = cfg.pretrain.early_stop_patience;
    pc.w_recon = cfg.pretrain.loss_weights[0];
    pc.w_pred = cfg.pretrain.loss_weights[1];
    pc.seed = cfg.seed;
    pc.threads = cfg.threads;

    pretrain::PretrainResult result = pretrain::run_pretraining(model, train_iq, val_iq, pc);

    const std::string ckpt = (fs::path(cfg.out_dir) / "pretrained.sfma").string();
    pretrain::save_checkpoint(ckpt + ".tmp", model);
    fs::rename(ckpt + ".tmp", ckpt);
    const std::string curve = (fs::path(cfg.out_dir) / "loss_curve.csv").string();
    pretrain::write_loss_curve_csv(curve, result.curve);

    record.add_artifact(ckpt);
    record.add_artifact(curve);
    record.add_metric("initial_val_total", result.initial_val_total);
    record.add_metric("best_val_total", result.best_val_total);
    record.add_metric("best_epoch", static_cast<double>(result.best_epoch));
    record.add_metric("epochs_run", static_cast<double>(result.epochs_run));
    record.finish();
    std::cout << "pretrained " << result.epochs_run << " epochs, best val total "
              << result.best_val_total << " (epoch " << result.best_epoch << ") -> " << ckpt
              << "\n";
}

void cmd_finetune(const RunConfig& cfg) {
    require_input(cfg.paths.train_dataset, "paths.train_dataset");
    fs::create_directories(cfg.out_dir);
    RunRecord record(cfg, "finetune");

    auto [manifest, frames] = signals::read_dataset(cfg.paths.train_dataset);
    const signals::Task task = manifest.task;
    std::vector<signals::LabeledFrame> train, val;
    if (!cfg.paths.val_dataset.empty()) {
        auto [vm, vframes] = signals::read_dataset(cfg.paths.val_dataset);
        if (vm.task != task) throw DataError("finetune: train/val task mismatch");
        train = std::move(frames);
        val = std::move(vframes);
    } else {
        std::tie(train, val) = split_frames(frames, cfg.finetune.val_fraction, cfg.seed);
    }

    tasks::TaskHeadConfig head_cfg;
    head_cfg.task = task;
    head_cfg.gru_hidden = cfg.head.gru_hidden;
    head_cfg.num_classes =
        task == signals::Task::AD ? 1 : static_cast<int>(manifest.class_names.size());

    tasks::FineTuneConfig fc;
    fc.lr = cfg.finetune.lr;
    fc.batch_size = cfg.finetune.batch_size;
    fc.epochs = cfg.finetune.epochs;
    fc.weight_decay = cfg.finetune.weight_decay;
    fc.seed = cfg.seed;
    fc.threads = cfg.threads;
    fc.lora.rank = cfg.lora.rank;
    fc.lora.alpha = cfg.lora.alpha;
    fc.lora.targets = cfg.lora.targets;

    const std::string ckpt = default_checkpoint_path(cfg);
    tasks::FinetuneOutput out =
        tasks::finetune(ckpt, head_cfg, train, val, fc, manifest.class_names);

    // decision threshold calibrated on the validation split
    if (task != signals::Task::WTC) {
        std::vector<signals::IQFrame> val_iq = iq_only(val);
        std::vector<tasks::Prediction> preds = tasks::predict(out.model, val_iq, cfg.threads);
        std::vector<double> scores;
        std::vector<int> labels;
        for (size_t i = 0; i < preds.size(); ++i) {
            scores.push_back(tasks::decision_score(preds[i], task));
            labels.push_back(val[i].label);
        }
        out.model.threshold =
            tasks::calibrate_threshold(scores, labels, cfg.finetune.target_pfa);
    }

    const std::string artifact = default_artifact_path(cfg, task);
    tasks::save_task_artifact(artifact, out.model, ckpt);
    const std::string curve = (fs::path(cfg.out_dir) / "finetune_curve.csv").string();
    {
        std::ofstream os(curve, std::ios::binary);
        if (!os) throw DataError("cannot open " + curve);
        os << "step,loss,split\n";
        char buf[120];
        for (const auto& r : out.result.curve) {
            std::snprintf(buf, sizeof buf, "%ld,%.10g,%s\n", r.step, r.loss, r.split.c_str());
            os << buf;
        }
    }

    record.add_artifact(artifact + ".task.json");
    record.add_artifact(artifact + ".tensors");
    record.add_artifact(curve);
    record.add_metric("best_val_loss", out.result.best_val_loss);
    record.add_metric("trainable_fraction", out.result.trainable_fraction);
    record.add_metric("threshold", out.model.threshold);
    record.finish();
    std::cout << "finetuned " << signals::task_name(task) << ": best val loss "
              << out.result.best_val_loss << ", trainable fraction "
              << out.result.trainable_fraction << " -> " << artifact << "\n";
}

void cmd_eval(const RunConfig& cfg) {
    require_input(cfg.paths.eval_dataset, "paths.eval_dataset");
    fs::create_directories(cfg.out_dir);
    RunRecord record(cfg, "eval");

    auto [manifest, frames] = signals::read_dataset(cfg.paths.eval_dataset);
    const signals::Task task = manifest.task;
    const std::string artifact = default_artifact_path(cfg, task);
    tasks::TaskModel model = tasks::load_task_artifact(artifact, cfg.paths.checkpoint);
    if (model.head.cfg.task != task)
        throw DataError("eval: artifact task does not match dataset task");

    std::vector<signals::IQFrame> iq = iq_only(frames);
    std::vector<tasks::Prediction> preds = tasks::predict(model, iq, cfg.threads);

    std::vector<eval::ScoredSample> samples(frames.size());
    for (size_t i = 0; i < frames.size(); ++i) {
        samples[i].true_label = frames[i].label;
        samples[i].predicted = preds[i].label;
        samples[i].snr_db = frames[i].snr_db;
        samples[i].score = task == signals::Task::WTC
                               ? 0.0
                               : tasks::decision_score(preds[i], task);
    }
    const int num_classes = static_cast<int>(manifest.class_names.size());
    eval::EvalReport report =
        eval::build_report(samples, num_classes, manifest.class_names, task != signals::Task::WTC);
    eval::write_report_csvs(cfg.out_dir, report);

    ordered_json summary;
    summary["task"] = signals::task_name(task);
    summary["config_fingerprint"] = cfg.fingerprint();
    summary["artifact"] = artifact;
    summary["artifact_fingerprint"] = checkpoint::file_fingerprint(artifact + ".tensors");
    summary["eval_dataset"] = cfg.paths.eval_dataset;
    summary["num_samples"] = report.num_samples;
    summary["overall_accuracy"] = report.overall_accuracy;
    summary["macro_precision"] = report.macro.precision;
    summary["macro_recall"] = report.macro.recall;
    summary["macro_f1"] = report.macro.f1;
    if (report.has_roc) {
        summary["auc"] = report.auc;
        summary["pd_at_target_pfa"] = eval::pd_at_pfa(report.roc, cfg.finetune.target_pfa);
        summary["target_pfa"] = cfg.finetune.target_pfa;
        summary["threshold"] = model.threshold;
    }
    write_text_atomic(fs::path(cfg.out_dir) / "summary.json", summary.dump(2) + "\n");

    for (const char* f : {"roc.csv", "acc_by_snr.csv", "prf.csv", "confusion.csv", "summary.json"})
        if (fs::exists(fs::path(cfg.out_dir) / f))
            record.add_artifact((fs::path(cfg.out_dir) / f).string());
    record.add_metric("overall_accuracy", report.overall_accuracy);
    record.add_metric("macro_f1", report.macro.f1);
    if (report.has_roc) record.add_metric("auc", report.auc);
    record.finish();
    std::cout << "evaluated " << report.num_samples << " frames: accuracy "
              << report.overall_accuracy << (report.has_roc ? ", auc " : "")
              << (report.has_roc ? std::to_string(report.auc) : std::string()) << " -> "
              << cfg.out_dir << "\n";
}

void cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report: at least one run directory is required");
    ordered_json merged = ordered_json::array();
    std::string csv = "run_dir,task,num_samples,overall_accuracy,macro_f1,auc,config_fingerprint\n";
    for (const auto& dir : run_dirs) {
        const fs::path summary_path = fs::path(dir) / "summary.json";
        std::ifstream is(summary_path, std::ios::binary);
        if (!is) throw DataError("report: cannot open " + summary_path.string());
        ordered_json summary;
        try {
            is >> summary;
        } catch (const std::exception& e) {
            throw DataError("report: malformed summary in " + dir + ": " + e.what());
        }
        merged.push_back({{"run_dir", dir}, {"summary", summary}});
        char buf[256];
        std::snprintf(buf, sizeof buf, "%s,%s,%ld,%.10g,%.10g,%s,%s\n", dir.c_str(),
                      summary.value("task", std::string("?")).c_str(),
                      static_cast<long>(summary.value("num_samples", 0)),
                      summary.value("overall_accuracy", 0.0), summary.value("macro_f1", 0.0),
                      summary.contains("auc")
                          ? std::to_string(summary["auc"].get<double>()).c_str()
                          : "",
                      summary.value("config_fingerprint", std::string()).c_str());
        csv += buf;
    }
    std::cout << csv;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text_atomic(fs::path(out_dir) / "merged_summary.csv", csv);
        write_text_atomic(fs::path(out_dir) / "merged_summary.json", merged.dump(2) + "\n");
        std::cout << "merged summary -> " << out_dir << "\n";
    }
}

}  // namespace spectrumfm::cli
