#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "spectrumfm/checkpoint.hpp"
#include "spectrumfm/encoder.hpp"

namespace spectrumfm::lora {

struct LoRAConfig {
    int rank = 8;         // a
    double alpha = 16.0;  // plain multiplier on A*B
    std::vector<std::string> targets = {"w_q", "w_k", "w_v", "w_o"};

    void validate(int hidden_dim) const;
};

// Low-rank update attached to one frozen base matrix W: the adapted weight
// is W + alpha * A * B. A starts Gaussian(0, 0.01), B starts at zero, so the
// adapted model initially equals the base model.
struct LoRAAdapter {
    std::string base_ref;  // dotted path of the frozen matrix
    const Param* base = nullptr;
    Param* a = nullptr;  // d x rank
    Param* b = nullptr;  // rank x d
    double alpha = 0.0;
};

// Binder: substitutes W + alpha*A*B for adapted sites during forward passes.
class LoraSet : public encoder::WeightBinder {
public:
    NodeId bind(Tape& tape, const Param& w) const override;

    const LoRAAdapter* adapter_for(const Param& w) const;
    const std::vector<LoRAAdapter>& adapters() const { return items_; }
    const LoRAConfig& config() const { return cfg_; }
    bool merged() const { return merged_; }
    long adapter_scalars() const;

private:
    friend LoraSet attach_adapters(ParamStore&, encoder::EncoderParams&, const LoRAConfig&,
                                   uint64_t, std::span<Param* const>);
    friend void merge_adapters(ParamStore&, LoraSet&);
    friend void unmerge_adapters(ParamStore&, LoraSet&);
    friend LoraSet load_adapters(const checkpoint::Archive&, ParamStore&, encoder::EncoderParams&,
                                 std::span<Param* const>);

    void reindex();

    LoRAConfig cfg_;
    std::vector<LoRAAdapter> items_;
    std::unordered_map<const Param*, size_t> by_base_;
    bool merged_ = false;
    // Saved A/B values while merged, so the merge can be undone.
    std::vector<std::pair<Mat, Mat>> merged_values_;
};

// Creates adapters on every targeted attention projection of every block,
// freezes everything else, then re-enables the given head params. Requires
// rank < hidden_dim.
LoraSet attach_adapters(ParamStore& store, encoder::EncoderParams& enc, const LoRAConfig& cfg,
                        uint64_t seed, std::span<Param* const> trainable_heads = {});

// W + alpha * A * B without mutating W.
Mat effective_weight(const Mat& w, const Mat& a, const Mat& b, double alpha);
Mat effective_weight(const LoRAAdapter& adapter);

// (trainable scalars) / (total scalars); throws ConfigError("nothing to
// train") when no parameter is trainable.
double trainable_fraction(const ParamStore& store);

// Folds every adapter into its base (W += alpha*A*B) and removes the adapter
// params from the store. Merging an already-merged set is an error.
void merge_adapters(ParamStore& store, LoraSet& set);
// Restores the frozen bases and re-registers the adapter params.
void unmerge_adapters(ParamStore& store, LoraSet& set);

std::string lora_config_to_json(const LoRAConfig& cfg);
LoRAConfig lora_config_from_json(const std::string& json_text);

// Adapter tensors under "lora.<base_ref>.{a,b}" for archiving.
std::vector<checkpoint::ArchiveEntry> adapter_entries(const LoraSet& set);

// Recreates adapters from an archive on a model whose base matrices match by
// name and shape; any offending sites are listed in the thrown DataError.
LoraSet load_adapters(const checkpoint::Archive& archive, ParamStore& store,
                      encoder::EncoderParams& enc, std::span<Param* const> trainable_heads = {});

}  // namespace spectrumfm::lora
