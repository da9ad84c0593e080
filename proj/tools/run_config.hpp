#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spectrumfm/lora.hpp"
#include "spectrumfm/signals.hpp"

namespace spectrumfm::cli {

// Declarative run configuration. Every field has a working default; a config
// file only needs to override what differs (typically dataset paths).
// Unknown keys anywhere in the file are rejected with their dotted path.
struct RunConfig {
    uint64_t seed = 1;
    std::string out_dir = "runs/out";
    int threads = 0;

    struct Encoder {
        int hidden_dim = 256;
        int ff_dim = 512;
        int heads = 8;
        int layers = 16;
        int frame_len = 128;
        double dropout = 0.1;
        int proj_kernel = 3;
    } encoder;

    struct Dataset {
        std::string task = "ss";
        std::string name = "dataset";
        int frames_per_spec = 64;
        std::vector<double> snr_grid_db = {-10, -8, -6, -4, -2, 0, 2, 4, 6, 8, 10};
        std::vector<std::string> modulations = {"qpsk"};
        std::vector<double> interference_ratios = {0.5, 1.5};
        std::vector<double> bandwidth_scales;  // per WTC technology; empty = all 1.0
        uint64_t seed_stride = 1000003;
    } dataset;

    struct Pretrain {
        double mask_ratio = 0.15;
        double lr = 1e-3;
        int batch_size = 256;
        int epochs = 10;
        double weight_decay = 0.01;
        int early_stop_patience = 3;
        std::vector<double> loss_weights = {1.0, 1.0};
        int decoder_dim = 128;
        double val_fraction = 0.1;
    } pretrain;

    struct Lora {
        int rank = 8;
        double alpha = 16.0;
        std::vector<std::string> targets = {"w_q", "w_k", "w_v", "w_o"};
    } lora;

    struct Finetune {
        double lr = 1e-3;
        int batch_size = 256;
        int epochs = 3;
        double weight_decay = 0.01;
        double val_fraction = 0.1;
        double target_pfa = 0.05;
    } finetune;

    struct Head {
        int gru_hidden = 128;
    } head;

    struct Paths {
        std::string train_dataset;
        std::string val_dataset;
        std::string eval_dataset;
        std::string checkpoint;
        std::string artifact;
    } paths;

    // Canonical JSON of the effective configuration (defaults + overrides).
    std::string canonical_json() const;
    std::string fingerprint() const;
};

// Loads and strictly validates a config file; empty path gives pure defaults.
RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json_text(const std::string& text);

}  // namespace spectrumfm::cli
