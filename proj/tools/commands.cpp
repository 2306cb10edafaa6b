#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <ostream>

#include "earvit/error.hpp"
#include "earvit/io.hpp"

namespace earvit::cli {

namespace {

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

DatasetIndex open_dataset(const RunConfig& config, std::ostream& out) {
    if (config.data_root.empty()) throw ConfigError("data.root is empty; set it in the config or pass --data");
    DatasetIndex index = load_dataset(config.data_root);
    for (const auto& issue : index.issues) out << "skipped " << issue.path.string() << ": " << issue.message << "\n";
    return index;
}

std::vector<ReportRow> read_report(const fs::path& path) {
    try {
        return parse_report_csv(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void emit_pv(const std::vector<PvRow>& rows, const std::optional<fs::path>& out_csv, std::ostream& out) {
    for (const auto& r : rows) {
        out << r.setting_a << " vs " << r.setting_b << ": " << fixed(r.auc_a, 4) << " vs " << fixed(r.auc_b, 4)
            << ", PV " << fixed(r.pv_percent, 2) << "%\n";
    }
    if (out_csv) write_file_atomic(*out_csv, pv_csv(rows));
}

}  // namespace

GridReport grid_report(int image_size, int patch_size, int stride) {
    GridReport r;
    r.grid = PatchGrid::make(image_size, patch_size, stride);
    r.count = r.grid.count();
    const std::vector<int> cover = coverage_map(r.grid);
    const auto [lo, hi] = std::minmax_element(cover.begin(), cover.end());
    r.min_multiplicity = *lo;
    r.max_multiplicity = *hi;
    const auto shared = std::count_if(cover.begin(), cover.end(), [](int c) { return c > 1; });
    r.overlap_fraction = static_cast<double>(shared) / static_cast<double>(cover.size());
    return r;
}

void cmd_grid_info(int image_size, int patch_size, int stride, std::ostream& out) {
    const GridReport r = grid_report(image_size, patch_size, stride);
    out << "grid " << r.grid.label() << " on " << image_size << "x" << image_size << "\n"
        << "N=" << r.count << " (" << r.grid.per_side() << " per side)\n"
        << "multiplicity min=" << r.min_multiplicity << " max=" << r.max_multiplicity << "\n"
        << "overlap fraction=" << fixed(r.overlap_fraction, 4) << "\n";
}

void cmd_synth(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
    const SyntheticDataset set = synth_dataset(config.synth);
    write_dataset(set, out_dir);
    out << "wrote " << set.index.size() << " images of " << set.index.num_classes() << " identities to "
        << out_dir.string() << "\n";
}

void cmd_train(const RunConfig& config, const fs::path& out_dir, std::ostream& out) {
    const DatasetIndex index = open_dataset(config, out);
    const LabeledImages data = load_images(index, config.model.grid.image_size, config.model.channels);

    fs::create_directories(out_dir);
    const fs::path partial = out_dir / kPartialMarker;
    fs::remove(partial);
    write_file_atomic(out_dir / "config.ini", serialize_run_config(config));
    out << "training " << config.model.label() << " on " << data.images.size() << " images, "
        << data.num_classes << " identities\n";

    std::vector<StepRecord> log;
    int epochs_done = 0;
    auto on_step = [&](const StepRecord& r, const ModelParams&, const Tensor&) { log.push_back(r); };
    auto on_epoch = [&](int epoch, const Checkpoint& current, bool improved) {
        save_checkpoint(current, out_dir / "checkpoint.bin");
        if (improved) save_checkpoint(current, out_dir / "best.bin");
        write_file_atomic(out_dir / "train_log.csv", training_log_csv(log));
        epochs_done = epoch + 1;
        out << "epoch " << epoch + 1 << "/" << config.train.epochs << " loss " << fixed(log.back().loss, 4) << "\n";
    };
    try {
        const TrainResult result =
            train(config.model, config.train, config.loss, config.loss_seed, data, on_epoch, on_step);
        if (config.train.epochs == 0) {
            save_checkpoint(result.final_checkpoint, out_dir / "checkpoint.bin");
            save_checkpoint(result.best_checkpoint, out_dir / "best.bin");
            write_file_atomic(out_dir / "train_log.csv", training_log_csv(log));
        }
    } catch (const std::exception& e) {
        write_file_atomic(partial, "stopped after " + std::to_string(epochs_done) + " of " +
                                       std::to_string(config.train.epochs) + " epochs: " + e.what() + "\n");
        throw;
    }
}

void cmd_embed(const RunConfig& config, const fs::path& checkpoint, const fs::path& out_file, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    const DatasetIndex index = open_dataset(config, out);
    const EmbeddingSet set = extract_embeddings(ck, index, ck.config.grid.image_size);
    write_file_atomic(out_file, serialize_embeddings(set));
    out << "wrote " << set.size() << " embeddings to " << out_file.string() << "\n";
}

ReportRow cmd_eval(const RunConfig& config, const fs::path& checkpoint, const std::optional<fs::path>& embeddings,
                   const fs::path& out_csv, bool append, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(checkpoint);
    EmbeddingSet set;
    if (embeddings) {
        set = deserialize_embeddings(read_file(*embeddings));
    } else {
        set = extract_embeddings(ck, open_dataset(config, out), ck.config.grid.image_size);
    }
    const RepeatResult res = repeat_eval(set, config.eval);

    ReportRow row{ck.config.label(), config.data_name, ck.config.grid.patch_size, ck.config.grid.stride, res.mean,
                  res.deviation};
    std::vector<ReportRow> rows;
    if (append && fs::exists(out_csv)) rows = read_report(out_csv);
    rows.push_back(row);
    write_file_atomic(out_csv, report_csv(rows));
    out << row.model_label << " on " << row.dataset << ": AUC " << res.formatted() << " over " << res.aucs.size()
        << " repeats\n";
    return row;
}

void cmd_pv(const fs::path& report_a, const fs::path& report_b, const std::optional<fs::path>& out_csv,
            std::ostream& out) {
    auto single = [](const fs::path& p) {
        auto rows = read_report(p);
        if (rows.size() != 1) {
            throw ConfigError(p.string() + ": expected exactly one report row, found " + std::to_string(rows.size()) +
                              " (use --table for whole reports)");
        }
        return rows.front();
    };
    emit_pv({compare_rows(single(report_a), single(report_b))}, out_csv, out);
}

void cmd_pv_table(const fs::path& report, const std::optional<fs::path>& out_csv, std::ostream& out) {
    const auto rows = read_report(report);
    const auto table = overlap_pv_table(rows);
    if (table.empty()) throw ConfigError(report.string() + ": no half-stride / non-overlapping row pairs");
    emit_pv(table, out_csv, out);
}

}  // namespace earvit::cli
