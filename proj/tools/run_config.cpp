#include "run_config.hpp"

#include <fstream>

#include <json.hpp>

#include "spectrumfm/checkpoint.hpp"

namespace spectrumfm::cli {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json defaults_json() {
    const RunConfig d;
    ordered_json j;
    j["seed"] = d.seed;
    j["out_dir"] = d.out_dir;
    j["threads"] = d.threads;
    j["encoder"] = {{"hidden_dim", d.encoder.hidden_dim}, {"ff_dim", d.encoder.ff_dim},
                    {"heads", d.encoder.heads},           {"layers", d.encoder.layers},
                    {"frame_len", d.encoder.frame_len},   {"dropout", d.encoder.dropout},
                    {"proj_kernel", d.encoder.proj_kernel}};
    j["dataset"] = {{"task", d.dataset.task},
                    {"name", d.dataset.name},
                    {"frames_per_spec", d.dataset.frames_per_spec},
                    {"snr_grid_db", d.dataset.snr_grid_db},
                    {"modulations", d.dataset.modulations},
                    {"interference_ratios", d.dataset.interference_ratios},
                    {"bandwidth_scales", d.dataset.bandwidth_scales},
                    {"seed_stride", d.dataset.seed_stride}};
    j["pretrain"] = {{"mask_ratio", d.pretrain.mask_ratio},
                     {"lr", d.pretrain.lr},
                     {"batch_size", d.pretrain.batch_size},
                     {"epochs", d.pretrain.epochs},
                     {"weight_decay", d.pretrain.weight_decay},
                     {"early_stop_patience", d.pretrain.early_stop_patience},
                     {"loss_weights", d.pretrain.loss_weights},
                     {"decoder_dim", d.pretrain.decoder_dim},
                     {"val_fraction", d.pretrain.val_fraction}};
    j["lora"] = {{"rank", d.lora.rank}, {"alpha", d.lora.alpha}, {"targets", d.lora.targets}};
    j["finetune"] = {{"lr", d.finetune.lr},
                     {"batch_size", d.finetune.batch_size},
                     {"epochs", d.finetune.epochs},
                     {"weight_decay", d.finetune.weight_decay},
                     {"val_fraction", d.finetune.val_fraction},
                     {"target_pfa", d.finetune.target_pfa}};
    j["head"] = {{"gru_hidden", d.head.gru_hidden}};
    j["paths"] = {{"train_dataset", d.paths.train_dataset},
                  {"val_dataset", d.paths.val_dataset},
                  {"eval_dataset", d.paths.eval_dataset},
                  {"checkpoint", d.paths.checkpoint},
                  {"artifact", d.paths.artifact}};
    return j;
}

// Walks the user config against the schema of the defaults; any key the
// schema does not know is rejected with its dotted path.
void validate_and_merge(ordered_json& base, const ordered_json& user, const std::string& path) {
    if (!user.is_object())
        throw ConfigError("config: expected an object at " + (path.empty() ? "<root>" : path));
    for (const auto& [key, value] : user.items()) {
        const std::string here = path.empty() ? key : path + "." + key;
        if (!base.contains(key)) throw ConfigError("config: unknown key " + here);
        ordered_json& slot = base[key];
        if (slot.is_object()) {
            validate_and_merge(slot, value, here);
            continue;
        }
        if (slot.is_array() != value.is_array())
            throw ConfigError("config: type mismatch at " + here);
        if (slot.is_string() && !value.is_string())
            throw ConfigError("config: type mismatch at " + here);
        if (slot.is_number() && !value.is_number())
            throw ConfigError("config: type mismatch at " + here);
        slot = value;
    }
}

RunConfig from_json(const ordered_json& j) {
    RunConfig c;
    try {
        c.seed = j.at("seed").get<uint64_t>();
        c.out_dir = j.at("out_dir").get<std::string>();
        c.threads = j.at("threads").get<int>();
        const auto& e = j.at("encoder");
        c.encoder = {e.at("hidden_dim").get<int>(), e.at("ff_dim").get<int>(),
                     e.at("heads").get<int>(),      e.at("layers").get<int>(),
                     e.at("frame_len").get<int>(),  e.at("dropout").get<double>(),
                     e.at("proj_kernel").get<int>()};
        const auto& d = j.at("dataset");
        c.dataset.task = d.at("task").get<std::string>();
        c.dataset.name = d.at("name").get<std::string>();
        c.dataset.frames_per_spec = d.at("frames_per_spec").get<int>();
        c.dataset.snr_grid_db = d.at("snr_grid_db").get<std::vector<double>>();
        c.dataset.modulations = d.at("modulations").get<std::vector<std::string>>();
        c.dataset.interference_ratios = d.at("interference_ratios").get<std::vector<double>>();
        c.dataset.bandwidth_scales = d.at("bandwidth_scales").get<std::vector<double>>();
        c.dataset.seed_stride = d.at("seed_stride").get<uint64_t>();
        const auto& p = j.at("pretrain");
        c.pretrain.mask_ratio = p.at("mask_ratio").get<double>();
        c.pretrain.lr = p.at("lr").get<double>();
        c.pretrain.batch_size = p.at("batch_size").get<int>();
        c.pretrain.epochs = p.at("epochs").get<int>();
        c.pretrain.weight_decay = p.at("weight_decay").get<double>();
        c.pretrain.early_stop_patience = p.at("early_stop_patience").get<int>();
        c.pretrain.loss_weights = p.at("loss_weights").get<std::vector<double>>();
        c.pretrain.decoder_dim = p.at("decoder_dim").get<int>();
        c.pretrain.val_fraction = p.at("val_fraction").get<double>();
        const auto& l = j.at("lora");
        c.lora.rank = l.at("rank").get<int>();
        c.lora.alpha = l.at("alpha").get<double>();
        c.lora.targets = l.at("targets").get<std::vector<std::string>>();
        const auto& f = j.at("finetune");
        c.finetune.lr = f.at("lr").get<double>();
        c.finetune.batch_size = f.at("batch_size").get<int>();
        c.finetune.epochs = f.at("epochs").get<int>();
        c.finetune.weight_decay = f.at("weight_decay").get<double>();
        c.finetune.val_fraction = f.at("val_fraction").get<double>();
        c.finetune.target_pfa = f.at("target_pfa").get<double>();
        c.head.gru_hidden = j.at("head").at("gru_hidden").get<int>();
        const auto& paths = j.at("paths");
        c.paths.train_dataset = paths.at("train_dataset").get<std::string>();
        c.paths.val_dataset = paths.at("val_dataset").get<std::string>();
        c.paths.eval_dataset = paths.at("eval_dataset").get<std::string>();
        c.paths.checkpoint = paths.at("checkpoint").get<std::string>();
        c.paths.artifact = paths.at("artifact").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    if (c.pretrain.loss_weights.size() != 2)
        throw ConfigError("config: pretrain.loss_weights must have exactly two entries");
    if (!(c.pretrain.val_fraction > 0.0 && c.pretrain.val_fraction < 1.0) ||
        !(c.finetune.val_fraction > 0.0 && c.finetune.val_fraction < 1.0))
        throw ConfigError("config: val_fraction must be in (0, 1)");
    signals::task_from_name(c.dataset.task);
    for (const auto& m : c.dataset.modulations) signals::modulation_from_name(m);
    return c;
}

ordered_json to_json(const RunConfig& c) {
    ordered_json j = defaults_json();
    j["seed"] = c.seed;
    j["out_dir"] = c.out_dir;
    j["threads"] = c.threads;
    j["encoder"]["hidden_dim"] = c.encoder.hidden_dim;
    j["encoder"]["ff_dim"] = c.encoder.ff_dim;
    j["encoder"]["heads"] = c.encoder.heads;
    j["encoder"]["layers"] = c.encoder.layers;
    j["encoder"]["frame_len"] = c.encoder.frame_len;
    j["encoder"]["dropout"] = c.encoder.dropout;
    j["encoder"]["proj_kernel"] = c.encoder.proj_kernel;
    j["dataset"]["task"] = c.dataset.task;
    j["dataset"]["name"] = c.dataset.name;
    j["dataset"]["frames_per_spec"] = c.dataset.frames_per_spec;
    j["dataset"]["snr_grid_db"] = c.dataset.snr_grid_db;
    j["dataset"]["modulations"] = c.dataset.modulations;
    j["dataset"]["interference_ratios"] = c.dataset.interference_ratios;
    j["dataset"]["bandwidth_scales"] = c.dataset.bandwidth_scales;
    j["dataset"]["seed_stride"] = c.dataset.seed_stride;
    j["pretrain"]["mask_ratio"] = c.pretrain.mask_ratio;
    j["pretrain"]["lr"] = c.pretrain.lr;
    j["pretrain"]["batch_size"] = c.pretrain.batch_size;
    j["pretrain"]["epochs"] = c.pretrain.epochs;
    j["pretrain"]["weight_decay"] = c.pretrain.weight_decay;
    j["pretrain"]["early_stop_patience"] = c.pretrain.early_stop_patience;
    j["pretrain"]["loss_weights"] = c.pretrain.loss_weights;
    j["pretrain"]["decoder_dim"] = c.pretrain.decoder_dim;
    j["pretrain"]["val_fraction"] = c.pretrain.val_fraction;
    j["lora"]["rank"] = c.lora.rank;
    j["lora"]["alpha"] = c.lora.alpha;
    j["lora"]["targets"] = c.lora.targets;
    j["finetune"]["lr"] = c.finetune.lr;
    j["finetune"]["batch_size"] = c.finetune.batch_size;
    j["finetune"]["epochs"] = c.finetune.epochs;
    j["finetune"]["weight_decay"] = c.finetune.weight_decay;
    j["finetune"]["val_fraction"] = c.finetune.val_fraction;
    j["finetune"]["target_pfa"] = c.finetune.target_pfa;
    j["head"]["gru_hidden"] = c.head.gru_hidden;
    j["paths"]["train_dataset"] = c.paths.train_dataset;
    j["paths"]["val_dataset"] = c.paths.val_dataset;
    j["paths"]["eval_dataset"] = c.paths.eval_dataset;
    j["paths"]["checkpoint"] = c.paths.checkpoint;
    j["paths"]["artifact"] = c.paths.artifact;
    return j;
}

}  // namespace

std::string RunConfig::canonical_json() const { return to_json(*this).dump(2); }

std::string RunConfig::fingerprint() const { return checkpoint::fnv1a_hex(canonical_json()); }

RunConfig run_config_from_json_text(const std::string& text) {
    ordered_json user;
    try {
        user = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
    ordered_json merged = defaults_json();
    validate_and_merge(merged, user, "");
    return from_json(merged);
}

RunConfig load_run_config(const std::string& path) {
    if (path.empty()) return RunConfig{};
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return run_config_from_json_text(text);
}

}  // namespace spectrumfm::cli
