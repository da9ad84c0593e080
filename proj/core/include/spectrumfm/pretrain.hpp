#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spectrumfm/encoder.hpp"
#include "spectrumfm/signals.hpp"

namespace spectrumfm::pretrain {

// Bernoulli keep-mask over positions: keep[p] == 1 keeps the sample,
// 0 masks it. The expected masked fraction is `ratio`.
struct MaskVector {
    std::vector<uint8_t> keep;
    double ratio = 0.0;

    int masked_count() const {
        int m = 0;
        for (uint8_t k : keep) m += (k == 0);
        return m;
    }
};

// Deterministic in (n, r, seed). An all-kept draw is resampled once; the
// caller skips the reconstruction term if the resample is all-kept too.
MaskVector sample_mask(int n, double r, uint64_t seed);

signals::NormalizedFrame apply_mask(const signals::NormalizedFrame& x, const MaskVector& m);

// Mean over masked positions of the squared distance between predicted and
// true (amplitude, phase) pairs. pred is Nx2. Throws EvalError when the mask
// has no masked positions.
double recon_loss(const Mat& pred, const signals::NormalizedFrame& target, const MaskVector& m);

struct ReconDecoderParams {
    Param *w1, *b1, *w2, *b2;
    int dim = 128;  // inner width of the two-layer decoder
};

struct NextSlotHead {
    Param *w, *b;  // d -> 2 on the final hidden state
};

// Per-position d -> dim (GELU) -> 2 decoding of the hidden sequence.
NodeId recon_decode_tape(Tape& tape, NodeId hidden, const ReconDecoderParams& p);
Mat recon_decode(const Mat& hidden, const ReconDecoderParams& p);

NodeId next_slot_pred_tape(Tape& tape, NodeId hidden, const NextSlotHead& head);

// Squared-distance loss of the linear head's prediction for position N,
// given hidden states over the first N-1 positions.
double next_slot_loss(const Mat& hidden, const NextSlotHead& head,
                      const std::array<double, 2>& target);

struct PretrainConfig {
    double mask_ratio = 0.15;
    double lr = 1e-3;
    int batch_size = 256;
    int epochs = 10;
    double weight_decay = 0.01;
    int early_stop_patience = 3;
    double w_recon = 1.0;
    double w_pred = 1.0;
    uint64_t seed = 0;
    int threads = 0;  // 0 = use up to 8 hardware threads

    void validate() const;
};

struct PretrainModel {
    ParamStore store;
    encoder::EncoderParams enc;
    ReconDecoderParams dec;
    NextSlotHead next;
};

PretrainModel build_pretrain_model(const encoder::EncoderConfig& cfg, int decoder_dim,
                                   uint64_t init_seed);

// Stops once the validation metric has failed to improve for `patience`
// consecutive observations.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience) : patience_(patience) {}

    // Returns true when training should halt after this observation.
    bool observe(double val) {
        ++rounds_;
        if (val < best_) {
            best_ = val;
            since_best_ = 0;
            return false;
        }
        ++since_best_;
        return since_best_ >= patience_;
    }

    int rounds() const { return rounds_; }
    double best() const { return best_; }

private:
    int patience_;
    double best_ = std::numeric_limits<double>::infinity();
    int since_best_ = 0;
    int rounds_ = 0;
};

struct LossRecord {
    long step;
    double recon;
    double pred;
    double total;
    std::string split;  // "train" or "val"
};

struct PretrainResult {
    std::vector<LossRecord> curve;
    double initial_val_total = 0.0;  // validation loss before any update
    double best_val_total = 0.0;
    int best_epoch = 0;
    int epochs_run = 0;
};

struct PretrainHooks {
    // Test hook: substitutes the validation metric seen by early stopping.
    std::function<double(int round, double measured)> override_val;
};

// Joint masked-reconstruction + next-slot training with AdamW and early
// stopping; the best-validation parameters are restored before returning.
PretrainResult run_pretraining(PretrainModel& model, std::span<const signals::IQFrame> train,
                               std::span<const signals::IQFrame> val, const PretrainConfig& cfg,
                               const PretrainHooks* hooks = nullptr);

// The deterministic mask used for validation frame `val_index`.
MaskVector validation_mask(const PretrainConfig& cfg, int val_index, int n);

struct EvalLosses {
    double recon, pred, total;
};
EvalLosses evaluate_losses(const PretrainModel& model, std::span<const signals::IQFrame> frames,
                           const PretrainConfig& cfg);

void write_loss_curve_csv(const std::string& path, std::span<const LossRecord> curve);

void save_checkpoint(const std::string& path, const PretrainModel& model);
PretrainModel load_checkpoint(const std::string& path);

std::string encoder_config_to_json(const encoder::EncoderConfig& cfg);
encoder::EncoderConfig encoder_config_from_json(const std::string& json_text);

}  // namespace spectrumfm::pretrain
