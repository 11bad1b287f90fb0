#include "dcolor/dcolor.h"

#include <CLI11.hpp>
#include <json.hpp>

#include <iostream>
#include <string>
#include <vector>

namespace {

struct Invocation {
    std::string config;
    std::vector<std::string> overrides;
    std::string output;
};

int report(dcolor_status status, const std::string& command) {
    if (status == DCOLOR_OK) return 0;
    nlohmann::json err = {{"command", command},
                          {"status", dcolor_status_name(status)},
                          {"exit_code", static_cast<int>(status)},
                          {"message", dcolor_last_error()}};
    std::cerr << err.dump() << std::endl;
    switch (status) {
    case DCOLOR_CONFIG_ERROR:
    case DCOLOR_INVALID_ARGUMENT: return 2;
    case DCOLOR_PREREQUISITE_MISSING: return 3;
    case DCOLOR_NUMERICAL_FAILURE: return 4;
    default: return 1;
    }
}

void printSummary(char* s) {
    if (s) {
        std::cout << s << std::endl;
        dcolor_string_free(s);
    }
}

void addCommon(CLI::App* sub, Invocation& inv, bool configRequired) {
    auto* opt = sub->add_option("-c,--config", inv.config, "JSON config file or run manifest");
    if (configRequired) opt->required();
    sub->add_option("-s,--set", inv.overrides, "Override a config field, key=value (dotted or unique suffix)");
    sub->add_option("-o,--output", inv.output, "Run directory (overrides output_dir)");
}

dcolor_status loadConfig(const Invocation& inv, dcolor_config** cfg) {
    std::vector<std::string> all = inv.overrides;
    if (!inv.output.empty()) all.push_back("output_dir=" + nlohmann::json(inv.output).dump());
    std::vector<const char*> ptrs;
    for (const auto& s : all) ptrs.push_back(s.c_str());
    if (inv.config.empty()) return dcolor_config_default(ptrs.data(), ptrs.size(), cfg);
    return dcolor_config_load(inv.config.c_str(), ptrs.data(), ptrs.size(), cfg);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Direct-coloring self-supervised learning testbed"};
    app.set_version_flag("--version", dcolor_version());
    app.require_subcommand(1);

    Invocation inv;
    bool resume = false;
    bool svg = false;
    std::string axis;
    std::vector<std::string> values;

    auto* computeTarget = app.add_subcommand("compute-target", "Train the VAE pair and write the target matrix E");
    addCommon(computeTarget, inv, true);
    auto* pretrain = app.add_subcommand("pretrain", "Pretrain with coloring and whitening losses");
    addCommon(pretrain, inv, true);
    pretrain->add_flag("--resume", resume, "Continue from the run's checkpoint up to the configured epochs");
    auto* eval = app.add_subcommand("eval", "Linear evaluation of the frozen encoder");
    addCommon(eval, inv, true);
    auto* diagnose = app.add_subcommand("diagnose", "Collapse diagnostics of the checkpoint");
    addCommon(diagnose, inv, true);
    diagnose->add_flag("--svg", svg, "Also plot the training metrics");
    auto* sweep = app.add_subcommand("sweep", "Pretrain and evaluate once per value of one axis");
    addCommon(sweep, inv, true);
    sweep->add_option("--axis", axis, "lambda, projector_dim, tap_index or target_source")->required();
    sweep->add_option("--values", values, "Values for the axis")->required()->delimiter(',');
    auto* showConfig = app.add_subcommand("show-config", "Print the resolved config as JSON");
    addCommon(showConfig, inv, false);

    CLI11_PARSE(app, argc, argv);

    const std::string command = app.get_subcommands().front()->get_name();
    dcolor_config* cfg = nullptr;
    dcolor_status status = loadConfig(inv, &cfg);
    if (status != DCOLOR_OK) return report(status, command);

    char* out = nullptr;
    if (command == "compute-target") {
        status = dcolor_compute_target(cfg, &out);
    } else if (command == "pretrain") {
        status = dcolor_pretrain(cfg, resume ? 1 : 0, &out);
    } else if (command == "eval") {
        status = dcolor_eval(cfg, nullptr, &out);
    } else if (command == "diagnose") {
        status = dcolor_diagnose(cfg, svg ? 1 : 0, &out);
    } else if (command == "sweep") {
        std::vector<const char*> ptrs;
        for (const auto& v : values) ptrs.push_back(v.c_str());
        status = dcolor_sweep(cfg, axis.c_str(), ptrs.data(), ptrs.size(), &out);
    } else {
        status = dcolor_config_to_json(cfg, &out);
    }
    dcolor_config_free(cfg);
    if (status != DCOLOR_OK) return report(status, command);
    printSummary(out);
    return 0;
}
