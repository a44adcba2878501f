#include <string>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"Optimum shifting for fully connected classifiers"};
    app.require_subcommand(1);

    optshift::cli::CliOptions opts;
    auto add_common = [&](CLI::App* sub, bool with_checkpoint) {
        sub->add_option("--config", opts.config_path, "key=value config file");
        sub->add_option("--set", opts.overrides, "config override key=value (repeatable)");
        sub->add_option("--out", opts.out_dir, "output directory");
        sub->add_option("--seed", opts.seed, "seed override");
        sub->add_option("--probes", opts.probes, "Hessian probe count override");
        sub->add_flag("--quiet", opts.quiet, "suppress the summary line");
        if (with_checkpoint) {
            sub->add_option("--checkpoint", opts.checkpoint_path, "model checkpoint")
                ->required();
        }
    };

    CLI::App* train = app.add_subcommand("train", "train a model, optionally with shifting");
    add_common(train, false);
    CLI::App* os_apply = app.add_subcommand("os-apply", "minimum-norm shift of a checkpoint");
    add_common(os_apply, true);
    CLI::App* hessian = app.add_subcommand("hessian", "sharpness diagnostics for a checkpoint");
    add_common(hessian, true);
    CLI::App* sweep = app.add_subcommand("sweep", "train across a list of shift batch sizes");
    add_common(sweep, false);

    CLI11_PARSE(app, argc, argv);

    using optshift::cli::run_guarded;
    if (train->parsed()) return run_guarded(optshift::cli::cmd_train, opts);
    if (os_apply->parsed()) return run_guarded(optshift::cli::cmd_os_apply, opts);
    if (hessian->parsed()) return run_guarded(optshift::cli::cmd_hessian, opts);
    if (sweep->parsed()) return run_guarded(optshift::cli::cmd_sweep, opts);
    return 1;
}
