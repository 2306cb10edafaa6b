#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "commands.hpp"
#include "earvit/error.hpp"

namespace {

using namespace earvit;
using namespace earvit::cli;

constexpr int kValidationFailure = 1;
constexpr int kRuntimeFailure = 2;

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant;
    std::optional<int> patch;
    std::optional<int> stride;
    std::optional<std::string> data;
};

void add_run_flags(CLI::App* cmd, Options& o, bool model_overrides) {
    cmd->add_option("--config", o.config, "Run config (INI); defaults apply when omitted")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Seed for this command's stochastic step");
    cmd->add_option("--data", o.data, "Dataset root, overrides data.root");
    if (model_overrides) {
        cmd->add_option("--variant", o.variant, "T, S, B, L or custom");
        cmd->add_option("--patch", o.patch, "Patch side P");
        cmd->add_option("--stride", o.stride, "Stride S");
    }
}

// Config file plus command-line overrides, validated once more.
RunConfig resolve(const Options& o) {
    RunConfig c = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    if (o.variant) c.set_variant(*o.variant);
    if (o.patch || o.stride) c.set_grid(o.patch.value_or(c.model.grid.patch_size), o.stride.value_or(c.model.grid.stride));
    if (o.data) c.data_root = *o.data;
    c.validate();
    return c;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch-overlap ViT ear verification: synthesize, train, embed, evaluate, compare"};
    app.require_subcommand(1);
    Options o;

    int image_size = 0, patch_size = 0, stride = 0;
    auto* grid = app.add_subcommand("grid-info", "Token count and pixel coverage of a patch grid");
    grid->add_option("image_size", image_size, "Image side W")->required();
    grid->add_option("patch_size", patch_size, "Patch side P")->required();
    grid->add_option("stride", stride, "Stride S")->required();

    std::string out;
    auto* synth = app.add_subcommand("synth", "Write a synthetic identity dataset");
    add_run_flags(synth, o, false);
    synth->add_option("--out", out, "Output dataset directory")->required();

    auto* trainc = app.add_subcommand("train", "Train a model and write checkpoints");
    add_run_flags(trainc, o, true);
    trainc->add_option("--out", out, "Run directory")->required();

    std::string checkpoint;
    auto* embed = app.add_subcommand("embed", "Extract unit embeddings for a dataset");
    add_run_flags(embed, o, false);
    embed->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    embed->add_option("--out", out, "Embedding file")->required();

    std::optional<std::string> embeddings;
    bool append = false;
    auto* eval = app.add_subcommand("eval", "Verification AUC over repeated impostor draws");
    add_run_flags(eval, o, false);
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file (names the row)")->required()->check(CLI::ExistingFile);
    eval->add_option("--embeddings", embeddings, "Reuse an embedding file instead of extracting")->check(CLI::ExistingFile);
    eval->add_option("--out", out, "Report CSV")->required();
    eval->add_flag("--append", append, "Add the row to an existing report");

    std::vector<std::string> reports;
    std::optional<std::string> table, pv_out;
    auto* pv = app.add_subcommand("pv", "Percentage variation between report rows");
    pv->add_option("reports", reports, "Two single-row reports, A then B")->expected(0, 2)->check(CLI::ExistingFile);
    pv->add_option("--table", table, "Pair every half-stride row with its non-overlapping row")->check(CLI::ExistingFile);
    pv->add_option("--out", pv_out, "PV CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kValidationFailure;
    }

    // Config problems are validation failures even when they surface late.
    try {
        if (grid->parsed()) {
            cmd_grid_info(image_size, patch_size, stride, std::cout);
        } else if (synth->parsed()) {
            RunConfig c = resolve(o);
            if (o.seed) c.synth.seed = *o.seed;
            cmd_synth(c, out, std::cout);
        } else if (trainc->parsed()) {
            RunConfig c = resolve(o);
            if (o.seed) c.train.seed = *o.seed;
            cmd_train(c, out, std::cout);
        } else if (embed->parsed()) {
            cmd_embed(resolve(o), checkpoint, out, std::cout);
        } else if (eval->parsed()) {
            RunConfig c = resolve(o);
            if (o.seed) c.eval.seed = *o.seed;
            std::optional<fs::path> emb;
            if (embeddings) emb = *embeddings;
            cmd_eval(c, checkpoint, emb, out, append, std::cout);
        } else if (pv->parsed()) {
            std::optional<fs::path> dest;
            if (pv_out) dest = *pv_out;
            if (table && reports.empty()) {
                cmd_pv_table(*table, dest, std::cout);
            } else if (!table && reports.size() == 2) {
                cmd_pv(reports[0], reports[1], dest, std::cout);
            } else {
                std::cerr << "pv: give two report files or --table REPORT\n";
                return kValidationFailure;
            }
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationFailure;
    } catch (const GridError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationFailure;
    } catch (const ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidationFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeFailure;
    }
    return 0;
}
