#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spectrumfm/checkpoint.hpp"
#include "spectrumfm/encoder.hpp"
#include "spectrumfm/lora.hpp"
#include "spectrumfm/signals.hpp"

namespace spectrumfm::tasks {

using signals::Task;

struct TaskHeadConfig {
    Task task = Task::SS;
    int gru_hidden = 128;  // SS/WTC aggregation width
    int num_classes = 2;   // SS: 2, WTC: >= 2, AD: 1 (score)

    void validate() const;
};

// Single-layer unidirectional GRU over the N hidden states; the final state
// feeds a linear layer. Gates are packed (z, r, n) along the 3h axis.
struct GruHeadParams {
    Param *w = nullptr, *u = nullptr, *b = nullptr;  // d x 3h, h x 3h, 1 x 3h
    Param *out_w = nullptr, *out_b = nullptr;        // h x C, 1 x C
    int hidden = 0;
};

// Mean-pool over positions, then linear to one logit.
struct AdHeadParams {
    Param *w = nullptr, *b = nullptr;  // d x 1, 1 x 1
};

struct TaskHeadParams {
    TaskHeadConfig cfg;
    GruHeadParams gru;
    AdHeadParams ad;
};

struct Prediction {
    std::vector<double> class_probs;  // SS/WTC
    double anomaly_score = 0.0;       // AD, in [0, 1]
    int label = 0;
    double threshold = 0.5;
};

struct FineTuneConfig {
    double lr = 1e-3;
    int batch_size = 256;
    int epochs = 3;
    lora::LoRAConfig lora;
    uint64_t seed = 0;
    double weight_decay = 0.01;
    int threads = 0;

    void validate() const;
};

struct TaskModel {
    ParamStore store;
    encoder::EncoderParams enc;
    TaskHeadParams head;
    lora::LoraSet adapters;
    bool has_adapters = false;
    double threshold = 0.5;
    std::vector<std::string> class_names;

    const encoder::WeightBinder* binder() const { return has_adapters ? &adapters : nullptr; }
};

// Fresh model; when `base` is given the encoder tensors are loaded from it
// before the head params are created.
TaskModel build_task_model(const encoder::EncoderConfig& enc_cfg, const TaskHeadConfig& head_cfg,
                           uint64_t init_seed, const checkpoint::Archive* base = nullptr);

std::vector<Param*> head_params(const TaskModel& model);

// Logits on the tape: 1 x num_classes for SS/WTC, 1 x 1 for AD.
NodeId head_logits_tape(Tape& tape, NodeId hidden, const TaskHeadParams& head,
                        const encoder::TrainCtx* train);

// Task head on a precomputed hidden sequence (eval mode).
Prediction head_forward(const Mat& hidden, const TaskHeadParams& head, double threshold = 0.5);

struct FitRecord {
    long step;
    double loss;
    std::string split;
};

struct FinetuneResult {
    std::vector<FitRecord> curve;
    double best_val_loss = 0.0;
    int best_epoch = 0;
    double trainable_fraction = 0.0;
};

// Supervised trainer over whatever params are currently trainable (adapters
// plus head after attach_adapters; everything for a from-scratch baseline).
// Keeps the best-validation parameters.
FinetuneResult train_task_model(TaskModel& model, std::span<const signals::LabeledFrame> train,
                                std::span<const signals::LabeledFrame> val,
                                const FineTuneConfig& cfg);

// Full fine-tuning path: load base checkpoint, attach adapters, train.
struct FinetuneOutput {
    TaskModel model;
    FinetuneResult result;
};
FinetuneOutput finetune(const std::string& base_checkpoint_path, const TaskHeadConfig& head_cfg,
                        std::span<const signals::LabeledFrame> train,
                        std::span<const signals::LabeledFrame> val, const FineTuneConfig& cfg,
                        const std::vector<std::string>& class_names);

// Deterministic, order-preserving batch inference.
std::vector<Prediction> predict(const TaskModel& model, std::span<const signals::IQFrame> frames,
                                int threads = 0);

// Binary decision score in [0, 1]: P(class 1) for SS, sigmoid logit for AD.
double decision_score(const Prediction& p, Task task);

// Smallest threshold whose empirical false-alarm rate on (scores, labels)
// stays within target_pfa; returns the midpoint of the feasible gap.
double calibrate_threshold(std::span<const double> scores, std::span<const int> labels,
                           double target_pfa);

// Artifact = <base>.task.json metadata + <base>.tensors adapter/head archive.
void save_task_artifact(const std::string& base_path, const TaskModel& model,
                        const std::string& base_checkpoint_path);
TaskModel load_task_artifact(const std::string& base_path,
                             const std::string& checkpoint_override = "");

}  // namespace spectrumfm::tasks
