#include "spectrumfm/lora.hpp"

#include <algorithm>

#include <json.hpp>

namespace spectrumfm::lora {

namespace {
const std::vector<std::string> kKnownTargets = {"w_q", "w_k", "w_v", "w_o"};
}

void LoRAConfig::validate(int hidden_dim) const {
    if (rank < 1) throw ConfigError("lora: rank must be >= 1");
    if (rank >= hidden_dim) throw ConfigError("lora: rank must be < hidden_dim");
    if (alpha <= 0.0) throw ConfigError("lora: alpha must be > 0");
    if (targets.empty()) throw ConfigError("lora: target set must be nonempty");
    for (const auto& t : targets)
        if (std::find(kKnownTargets.begin(), kKnownTargets.end(), t) == kKnownTargets.end())
            throw ConfigError("lora: unknown target site: " + t);
}

NodeId LoraSet::bind(Tape& tape, const Param& w) const {
    const LoRAAdapter* ad = adapter_for(w);
    if (!ad || merged_) return tape.leaf(w);
    NodeId update = tape.matmul(tape.leaf(*ad->a), tape.leaf(*ad->b));
    return tape.add(tape.leaf(w), tape.scale(update, ad->alpha));
}

const LoRAAdapter* LoraSet::adapter_for(const Param& w) const {
    auto it = by_base_.find(&w);
    return it == by_base_.end() ? nullptr : &items_[it->second];
}

long LoraSet::adapter_scalars() const {
    long n = 0;
    for (const auto& ad : items_) {
        if (ad.a) n += static_cast<long>(ad.a->value.size());
        if (ad.b) n += static_cast<long>(ad.b->value.size());
    }
    return n;
}

void LoraSet::reindex() {
    by_base_.clear();
    for (size_t i = 0; i < items_.size(); ++i) by_base_[items_[i].base] = i;
}

LoraSet attach_adapters(ParamStore& store, encoder::EncoderParams& enc, const LoRAConfig& cfg,
                        uint64_t seed, std::span<Param* const> trainable_heads) {
    cfg.validate(enc.cfg.hidden_dim);
    LoraSet set;
    set.cfg_ = cfg;
    Rng rng(mix_seed(seed, 0x6c6f7261ULL));

    store.set_all_trainable(false);
    for (size_t l = 0; l < enc.blocks.size(); ++l) {
        const auto& attn = enc.blocks[l].attn;
        const std::pair<std::string, Param*> sites[] = {
            {"w_q", attn.w_q}, {"w_k", attn.w_k}, {"w_v", attn.w_v}, {"w_o", attn.w_o}};
        for (const auto& [site, base] : sites) {
            if (std::find(cfg.targets.begin(), cfg.targets.end(), site) == cfg.targets.end())
                continue;
            LoRAAdapter ad;
            ad.base_ref = base->name;
            ad.base = base;
            ad.alpha = cfg.alpha;
            ad.a = store.create("lora." + base->name + ".a", base->value.rows, cfg.rank);
            ad.b = store.create("lora." + base->name + ".b", cfg.rank, base->value.cols);
            init_gaussian(ad.a->value, 0.01, rng);
            // b stays zero: the adapted model starts equal to the base model
            set.items_.push_back(ad);
        }
    }
    for (Param* h : trainable_heads) h->trainable = true;
    set.reindex();
    return set;
}

Mat effective_weight(const Mat& w, const Mat& a, const Mat& b, double alpha) {
    if (a.cols != b.rows || a.rows != w.rows || b.cols != w.cols)
        throw ShapeError("effective_weight: shape mismatch");
    Mat out = w;
    Mat update(a.rows, b.cols);
    gemm(a, false, b, false, update, false);
    for (size_t i = 0; i < out.v.size(); ++i) out.v[i] += alpha * update.v[i];
    return out;
}

Mat effective_weight(const LoRAAdapter& adapter) {
    return effective_weight(adapter.base->value, adapter.a->value, adapter.b->value,
                            adapter.alpha);
}

double trainable_fraction(const ParamStore& store) {
    const long trainable = store.trainable_scalars();
    const long total = store.total_scalars();
    if (trainable == 0) throw ConfigError("trainable_fraction: nothing to train");
    return static_cast<double>(trainable) / static_cast<double>(total);
}

void merge_adapters(ParamStore& store, LoraSet& set) {
    if (set.merged_ || set.items_.empty())
        throw ConfigError("merge_adapters: no attached adapters to merge");
    set.merged_values_.clear();
    for (auto& ad : set.items_) {
        Mat merged = effective_weight(ad);
        const_cast<Param*>(ad.base)->value = std::move(merged);
        set.merged_values_.emplace_back(ad.a->value, ad.b->value);
    }
    store.erase_prefix("lora.");
    for (auto& ad : set.items_) {
        ad.a = nullptr;
        ad.b = nullptr;
    }
    set.merged_ = true;
}

void unmerge_adapters(ParamStore& store, LoraSet& set) {
    if (!set.merged_) throw ConfigError("unmerge_adapters: adapters are not merged");
    for (size_t i = 0; i < set.items_.size(); ++i) {
        LoRAAdapter& ad = set.items_[i];
        const auto& [av, bv] = set.merged_values_[i];
        ad.a = store.create("lora." + ad.base_ref + ".a", av.rows, av.cols);
        ad.b = store.create("lora." + ad.base_ref + ".b", bv.rows, bv.cols);
        ad.a->value = av;
        ad.b->value = bv;
        Mat update(av.rows, bv.cols);
        gemm(av, false, bv, false, update, false);
        Param* base = const_cast<Param*>(ad.base);
        for (size_t k = 0; k < base->value.v.size(); ++k)
            base->value.v[k] -= ad.alpha * update.v[k];
    }
    set.merged_values_.clear();
    set.merged_ = false;
}

std::string lora_config_to_json(const LoRAConfig& cfg) {
    nlohmann::ordered_json j;
    j["rank"] = cfg.rank;
    j["alpha"] = cfg.alpha;
    j["targets"] = cfg.targets;
    return j.dump();
}

LoRAConfig lora_config_from_json(const std::string& json_text) {
    nlohmann::json j = nlohmann::json::parse(json_text);
    LoRAConfig cfg;
    cfg.rank = j.at("rank").get<int>();
    cfg.alpha = j.at("alpha").get<double>();
    cfg.targets = j.at("targets").get<std::vector<std::string>>();
    return cfg;
}

std::vector<checkpoint::ArchiveEntry> adapter_entries(const LoraSet& set) {
    if (set.merged()) throw ConfigError("adapter_entries: adapters are merged");
    std::vector<checkpoint::ArchiveEntry> out;
    for (const auto& ad : set.adapters()) {
        out.push_back({"lora." + ad.base_ref + ".a", ad.a->value});
        out.push_back({"lora." + ad.base_ref + ".b", ad.b->value});
    }
    return out;
}

LoraSet load_adapters(const checkpoint::Archive& archive, ParamStore& store,
                      encoder::EncoderParams& enc, std::span<Param* const> trainable_heads) {
    nlohmann::json meta = nlohmann::json::parse(archive.meta_json);
    LoRAConfig cfg = lora_config_from_json(meta.at("lora").dump());
    LoraSet set = attach_adapters(store, enc, cfg, 0, trainable_heads);

    std::string problems;
    for (auto& ad : set.items_) {
        const Mat* a = archive.find("lora." + ad.base_ref + ".a");
        const Mat* b = archive.find("lora." + ad.base_ref + ".b");
        if (!a || !b) {
            problems += (problems.empty() ? "" : ", ") + ad.base_ref + " (missing tensors)";
            continue;
        }
        if (a->rows != ad.a->value.rows || a->cols != ad.a->value.cols ||
            b->rows != ad.b->value.rows || b->cols != ad.b->value.cols) {
            problems += (problems.empty() ? "" : ", ") + ad.base_ref + " (shape mismatch)";
            continue;
        }
        ad.a->value = *a;
        ad.b->value = *b;
    }
    if (!problems.empty())
        throw DataError("load_adapters: incompatible adapter sites: " + problems);
    return set;
}

}  // namespace spectrumfm::lora
