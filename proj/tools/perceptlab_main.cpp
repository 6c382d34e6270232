#include <map>
#include <string>

#include <CLI11.hpp>

#include "perceptlab/cli/runner.hpp"

int main(int argc, char** argv) {
    CLI::App app{"perceptual metrics, relativistic adversarial SR training, "
                 "and IQA evaluation"};
    app.require_subcommand(1);

    static const std::map<std::string, std::string> blurbs = {
        {"train-metric", "fit perceptual weights on an FR quality manifest"},
        {"eval-metric", "run the FR benchmark suite for a metric"},
        {"train-sr", "two-stage SR training under a composite objective"},
        {"eval-sr", "PSNR + perceptual distance of an SR checkpoint"},
        {"transfer", "discriminator-to-IQA transfer study"},
        {"sweep", "adversarial-weight stability sweep"},
        {"report", "evaluator score tables from manifests"},
    };

    std::string config, setting, out;
    for (const auto& name : perceptlab::cli::subcommand_names()) {
        CLI::App* sub = app.add_subcommand(name, blurbs.at(name));
        sub->add_option("--config", config, "experiment config (JSON)")->required();
        sub->add_option("--setting", setting,
                        "objective setting override: P, RP, PA, or RPA");
        sub->add_option("--out", out,
                        "run directory (default: <output_dir>/<subcommand>)");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    perceptlab::cli::RunOptions opt;
    opt.subcommand = app.get_subcommands().front()->get_name();
    opt.config_path = config;
    if (!setting.empty()) opt.setting = setting;
    if (!out.empty()) opt.out_dir = out;
    return perceptlab::cli::dispatch(opt);
}
