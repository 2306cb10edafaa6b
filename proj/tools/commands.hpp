#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "run_config.hpp"

namespace earvit::cli {

namespace fs = std::filesystem;

// Written next to a run's outputs when it stops early.
inline constexpr const char* kPartialMarker = "PARTIAL";

struct GridReport {
    PatchGrid grid;
    int count = 0;
    int min_multiplicity = 0;
    int max_multiplicity = 0;
    double overlap_fraction = 0.0;  // pixels covered by more than one window
};

GridReport grid_report(int image_size, int patch_size, int stride);
void cmd_grid_info(int image_size, int patch_size, int stride, std::ostream& out);

// Writes the synthetic set under `out_dir` in the dataset layout.
void cmd_synth(const RunConfig& config, const fs::path& out_dir, std::ostream& out);

// Outputs in `out_dir`: config.ini, train_log.csv, checkpoint.bin (latest
// epoch) and best.bin (lowest epoch-mean loss). A failure leaves whatever was
// written plus a PARTIAL file holding the error.
void cmd_train(const RunConfig& config, const fs::path& out_dir, std::ostream& out);

void cmd_embed(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_file, std::ostream& out);

// One report row for the checkpoint on the configured dataset. Embeddings
// are extracted unless a file from `embed` is given.
ReportRow cmd_eval(const RunConfig& config, const fs::path& checkpoint, const std::optional<fs::path>& embeddings,
                   const fs::path& out_csv, bool append, std::ostream& out);

// A vs B, each file holding exactly one report row.
void cmd_pv(const fs::path& report_a, const fs::path& report_b, const std::optional<fs::path>& out_csv,
            std::ostream& out);
// Every half-stride row against its non-overlapping partner.
void cmd_pv_table(const fs::path& report, const std::optional<fs::path>& out_csv, std::ostream& out);

}  // namespace earvit::cli
