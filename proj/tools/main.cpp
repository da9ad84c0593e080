#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "commands.hpp"
#include "run_config.hpp"
#include "spectrumfm/error.hpp"
#include "spectrumfm/version.hpp"

namespace {

// Exit codes: 0 success, 1 runtime failure, 2 config error, 3 data error.
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string task;
    uint64_t seed = 0;
    bool seed_set = false;
    bool out_set = false;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "Path to the run configuration (JSON)");
    cmd->add_option("--out", flags.out_dir, "Output directory (overrides config)")
        ->each([&](const std::string&) { flags.out_set = true; });
    cmd->add_option("--seed", flags.seed, "Global seed (overrides config)")
        ->each([&](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--task", flags.task, "Task: ss, ad or wtc (overrides config)")
        ->check(CLI::IsMember({"ss", "ad", "wtc"}));
}

spectrumfm::cli::RunConfig resolve_config(const CommonFlags& flags) {
    spectrumfm::cli::RunConfig cfg = spectrumfm::cli::load_run_config(flags.config_path);
    if (flags.seed_set) cfg.seed = flags.seed;
    if (flags.out_set) cfg.out_dir = flags.out_dir;
    if (!flags.task.empty()) cfg.dataset.task = flags.task;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SpectrumFM: spectrum-cognition model training and evaluation"};
    app.set_version_flag("--version", std::string("spectrumfm ") + spectrumfm::kVersion);
    app.require_subcommand(1);

    CommonFlags generate_flags, pretrain_flags, finetune_flags, eval_flags;
    CLI::App* generate = app.add_subcommand("generate", "Synthesize a labeled dataset");
    add_common(generate, generate_flags);
    CLI::App* pretrain = app.add_subcommand("pretrain", "Self-supervised encoder pre-training");
    add_common(pretrain, pretrain_flags);
    CLI::App* finetune = app.add_subcommand("finetune", "LoRA fine-tuning for a downstream task");
    add_common(finetune, finetune_flags);
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate an artifact and emit report CSVs");
    add_common(eval_cmd, eval_flags);

    std::vector<std::string> report_dirs;
    std::string report_out;
    CLI::App* report = app.add_subcommand("report", "Merge summaries from finished run dirs");
    report->add_option("dirs", report_dirs, "Run directories to merge")->required();
    report->add_option("--out", report_out, "Directory for the merged summary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (generate->parsed()) spectrumfm::cli::cmd_generate(resolve_config(generate_flags));
        if (pretrain->parsed()) spectrumfm::cli::cmd_pretrain(resolve_config(pretrain_flags));
        if (finetune->parsed()) spectrumfm::cli::cmd_finetune(resolve_config(finetune_flags));
        if (eval_cmd->parsed()) spectrumfm::cli::cmd_eval(resolve_config(eval_flags));
        if (report->parsed()) spectrumfm::cli::cmd_report(report_dirs, report_out);
    } catch (const spectrumfm::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const spectrumfm::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
