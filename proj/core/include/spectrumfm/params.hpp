#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "spectrumfm/mat.hpp"
#include "spectrumfm/rng.hpp"

namespace spectrumfm {

// One learnable tensor, addressed by a stable dotted path (e.g.
// "blocks.3.attention.w_q"). Pointers stay valid for the life of the store.
struct Param {
    std::string name;
    int index = -1;  // position in the owning store
    Mat value;
    bool trainable = true;
};

class ParamStore {
public:
    Param* create(std::string name, int rows, int cols);
    Param* find(std::string_view name) const;  // nullptr when absent
    Param* require(std::string_view name) const;

    // Removes params (used when adapters are merged away) and reindexes.
    void erase_prefix(std::string_view prefix);

    size_t count() const { return params_.size(); }
    Param* at(size_t i) const { return params_[i].get(); }

    long total_scalars() const;
    long trainable_scalars() const;

    void set_all_trainable(bool t);

    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<std::unique_ptr<Param>> params_;
};

// Per-worker gradient accumulator, indexed by Param::index. Kept separate
// from the params so parallel workers can reduce deterministically.
class GradSink {
public:
    explicit GradSink(const ParamStore& store);

    void accumulate(const Param& p, const Mat& g);
    const Mat* grad_for(const Param& p) const;  // nullptr if untouched
    void add_from(const GradSink& other);
    void clear();

private:
    std::vector<Mat> grads_;
    std::vector<bool> touched_;
};

// Xavier-uniform init in +/- sqrt(6 / (fan_in + fan_out)).
void init_xavier_uniform(Mat& m, int fan_in, int fan_out, Rng& rng);
void init_gaussian(Mat& m, double stddev, Rng& rng);

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// Decoupled weight decay Adam over the trainable params of a store.
class AdamW {
public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) {}

    // Applies one update using sink gradients scaled by grad_scale
    // (typically 1/batch_size). Params without gradients are skipped.
    void step(ParamStore& store, const GradSink& sink, double grad_scale);

    long steps_taken() const { return t_; }

private:
    struct Moments {
        Mat m, v;
    };
    AdamWConfig cfg_;
    std::vector<Moments> moments_;  // by param index
    long t_ = 0;
};

}  // namespace spectrumfm
