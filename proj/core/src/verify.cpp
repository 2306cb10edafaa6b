#include "earvit/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "earvit/error.hpp"
#include "earvit/io.hpp"
#include "earvit/rng.hpp"

namespace earvit {

// ---- embeddings ----------------------------------------------------------------

void EmbeddingSet::add(std::string identity_key, std::string image_id, std::span<const double> vec) {
    if (vec.size() != dim_) {
        throw ShapeError("EmbeddingSet: vector of length " + std::to_string(vec.size()) + ", expected " +
                         std::to_string(dim_));
    }
    double ss = 0.0;
    for (double v : vec) ss += v * v;
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-6) {
        throw ContractError("EmbeddingSet: embedding for '" + image_id + "' is not unit norm");
    }
    values_.insert(values_.end(), vec.begin(), vec.end());
    keys_.push_back(std::move(identity_key));
    image_ids_.push_back(std::move(image_id));
}

EmbeddingSet extract_embeddings(const Checkpoint& checkpoint, const DatasetIndex& index,
                                std::span<const Tensor> images, std::size_t batch_size) {
    const ViTConfig& config = checkpoint.config;
    if (images.size() != index.size()) throw ShapeError("extract_embeddings: image count does not match index");
    const auto side = static_cast<std::size_t>(config.grid.image_size);
    for (const Tensor& img : images) {
        if (img.rank() != 3 || img.dim(1) != side || img.dim(2) != side) {
            throw ConfigError("extract_embeddings: image " + shape_str(img.shape()) + " does not match the model grid " +
                              config.grid.label() + " at W=" + std::to_string(side));
        }
    }
    NoGradGuard no_grad;
    EmbeddingSet out(static_cast<std::size_t>(config.embed_dim));
    batch_size = std::max<std::size_t>(batch_size, 1);
    for (std::size_t start = 0; start < images.size(); start += batch_size) {
        const std::size_t count = std::min(batch_size, images.size() - start);
        const Tensor emb = embed_images(config, checkpoint.params, images.subspan(start, count));
        for (std::size_t i = 0; i < count; ++i) {
            const auto& rec = index.records[start + i];
            out.add(rec.identity_key, rec.image_id, emb.data().subspan(i * out.dim(), out.dim()));
        }
    }
    return out;
}

EmbeddingSet extract_embeddings(const Checkpoint& checkpoint, const DatasetIndex& index, int preprocess_side) {
    if (preprocess_side != checkpoint.config.grid.image_size) {
        throw ConfigError("extract_embeddings: preprocessing side " + std::to_string(preprocess_side) +
                          " does not match checkpoint grid W=" + std::to_string(checkpoint.config.grid.image_size));
    }
    const LabeledImages loaded = load_images(index, preprocess_side, checkpoint.config.channels);
    return extract_embeddings(checkpoint, index, loaded.images);
}

std::string serialize_embeddings(const EmbeddingSet& set) {
    ByteWriter w;
    w.put_bytes(kEmbeddingMagic);
    w.put_u32(kEmbeddingVersion);
    w.put_u64(set.size());
    w.put_u32(static_cast<std::uint32_t>(set.dim()));
    for (std::size_t i = 0; i < set.size(); ++i)
        for (double v : set.row(i)) w.put_f32(static_cast<float>(v));
    for (std::size_t i = 0; i < set.size(); ++i) {
        w.put_string(set.identity_key(i));
        w.put_string(set.image_id(i));
    }
    return w.take();
}

EmbeddingSet deserialize_embeddings(std::string_view bytes) {
    ByteReader r(bytes, "embedding file");
    if (r.get_bytes(kEmbeddingMagic.size()) != kEmbeddingMagic) r.fail("bad magic");
    const std::uint32_t version = r.get_u32();
    if (version != kEmbeddingVersion) r.fail("unsupported version " + std::to_string(version));
    const std::uint64_t count = r.get_u64();
    const std::uint32_t dim = r.get_u32();
    if (dim != kEmbeddingDim) r.fail("embedding dimension " + std::to_string(dim) + ", expected 512");
    if (count > bytes.size() / (4ull * dim)) r.fail("row count exceeds file size");
    std::vector<double> values(count * dim);
    for (double& v : values) v = r.get_f32();
    EmbeddingSet set(dim);
    for (std::uint64_t i = 0; i < count; ++i) {
        std::string key = r.get_string();
        std::string id = r.get_string();
        set.add(std::move(key), std::move(id), std::span<const double>(values.data() + i * dim, dim));
    }
    if (!r.at_end()) r.fail("trailing data");
    return set;
}

// ---- pairs -----------------------------------------------------------------------

PairSet make_pairs(const EmbeddingSet& set, double impostor_ratio, std::uint64_t seed) {
    if (!(impostor_ratio >= 0.0)) throw ParameterError("make_pairs: impostor ratio must be non-negative");
    const std::size_t n = set.size();
    std::map<std::string, std::vector<std::uint32_t>> groups;
    std::vector<std::uint32_t> identity(n);
    for (std::size_t i = 0; i < n; ++i) groups[set.identity_key(i)].push_back(static_cast<std::uint32_t>(i));
    {
        std::uint32_t id = 0;
        for (const auto& [key, members] : groups) {
            for (auto m : members) identity[m] = id;
            ++id;
        }
    }
    if (groups.size() < 2) throw ContractError("make_pairs: need at least two identities");

    PairSet out;
    out.seed = seed;
    for (const auto& [key, members] : groups)
        for (std::size_t a = 0; a < members.size(); ++a)
            for (std::size_t b = a + 1; b < members.size(); ++b) out.genuine.emplace_back(members[a], members[b]);
    if (out.genuine.empty()) throw ContractError("make_pairs: no identity has two images, no genuine pairs");
    std::sort(out.genuine.begin(), out.genuine.end());

    const std::uint64_t total = static_cast<std::uint64_t>(n) * (n - 1) / 2;
    const std::uint64_t available = total - out.genuine.size();
    const double wanted_d = std::floor(impostor_ratio * static_cast<double>(out.genuine.size()));
    const std::uint64_t wanted =
        wanted_d >= static_cast<double>(available) ? available : static_cast<std::uint64_t>(wanted_d);

    Rng rng(seed);
    if (wanted * 2 > available) {
        // Dense regime: enumerate and take a uniform prefix.
        std::vector<IndexPair> all;
        all.reserve(available);
        for (std::uint32_t i = 0; i < n; ++i)
            for (std::uint32_t j = i + 1; j < n; ++j)
                if (identity[i] != identity[j]) all.emplace_back(i, j);
        for (std::uint64_t k = 0; k < wanted; ++k) {
            const std::uint64_t j = k + rng.below(all.size() - k);
            std::swap(all[k], all[j]);
        }
        all.resize(wanted);
        out.impostor = std::move(all);
    } else {
        // Sparse regime: rejection over ordered draws is uniform on unordered pairs.
        std::set<IndexPair> chosen;
        while (chosen.size() < wanted) {
            auto i = static_cast<std::uint32_t>(rng.below(n));
            auto j = static_cast<std::uint32_t>(rng.below(n));
            if (identity[i] == identity[j]) continue;
            if (i > j) std::swap(i, j);
            chosen.emplace(i, j);
        }
        out.impostor.assign(chosen.begin(), chosen.end());
    }
    std::sort(out.impostor.begin(), out.impostor.end());
    return out;
}

ScoredPairs score_pairs(const EmbeddingSet& set, const PairSet& pairs) {
    auto dot = [&](const IndexPair& p) {
        if (p.first >= set.size() || p.second >= set.size()) throw ContractError("score_pairs: pair index out of range");
        const auto a = set.row(p.first);
        const auto b = set.row(p.second);
        double s = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) s += a[k] * b[k];
        return std::clamp(s, -1.0, 1.0);  // rounding can push near-duplicates past 1
    };
    ScoredPairs out;
    out.genuine.reserve(pairs.genuine.size());
    out.impostor.reserve(pairs.impostor.size());
    for (const auto& p : pairs.genuine) out.genuine.push_back(dot(p));
    for (const auto& p : pairs.impostor) out.impostor.push_back(dot(p));
    return out;
}

// ---- ROC ---------------------------------------------------------------------------

RocCurve roc_auc(std::span<const double> genuine, std::span<const double> impostor) {
    if (genuine.empty() || impostor.empty()) {
        throw ContractError("roc_auc: AUC is undefined without both genuine and impostor scores");
    }
    std::vector<std::pair<double, bool>> scores;
    scores.reserve(genuine.size() + impostor.size());
    for (double s : genuine) scores.emplace_back(s, true);
    for (double s : impostor) scores.emplace_back(s, false);
    for (const auto& s : scores) {
        if (std::isnan(s.first)) throw NumericError("roc_auc: NaN score");
    }
    std::sort(scores.begin(), scores.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    const double ng = static_cast<double>(genuine.size());
    const double ni = static_cast<double>(impostor.size());
    RocCurve curve;
    curve.points.push_back({0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    double area = 0.0;
    for (std::size_t i = 0; i < scores.size();) {
        std::size_t j = i;
        std::size_t dtp = 0, dfp = 0;
        while (j < scores.size() && scores[j].first == scores[i].first) {
            (scores[j].second ? dtp : dfp) += 1;
            ++j;
        }
        // Trapezoid over the tied block, in counts: dfp * (2 tp + dtp) / 2.
        area += static_cast<double>(dfp) * (2.0 * static_cast<double>(tp) + static_cast<double>(dtp)) / 2.0;
        tp += dtp;
        fp += dfp;
        curve.points.push_back({static_cast<double>(fp) / ni, static_cast<double>(tp) / ng});
        i = j;
    }
    curve.auc = area / (ng * ni);
    return curve;
}

// ---- repeats and reports ----------------------------------------------------------------

std::string RepeatResult::formatted() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f \xC2\xB1 %.4f", mean, deviation);
    return buf;
}

RepeatResult repeat_eval(const EmbeddingSet& set, const EvalSettings& settings) {
    if (settings.repeats < 1) throw ParameterError("repeat_eval: repeats must be at least 1");
    RepeatResult out;
    for (int k = 0; k < settings.repeats; ++k) {
        const PairSet pairs = make_pairs(set, settings.impostor_ratio, settings.seed + static_cast<std::uint64_t>(k));
        const ScoredPairs scored = score_pairs(set, pairs);
        out.aucs.push_back(roc_auc(scored.genuine, scored.impostor).auc);
    }
    double sum = 0.0;
    for (double a : out.aucs) sum += a;
    out.mean = sum / static_cast<double>(out.aucs.size());
    if (out.aucs.size() > 1) {
        double ss = 0.0;
        for (double a : out.aucs) ss += (a - out.mean) * (a - out.mean);
        out.deviation = std::sqrt(ss / static_cast<double>(out.aucs.size() - 1));
    }
    return out;
}

RepeatResult repeat_eval(const Checkpoint& checkpoint, const DatasetIndex& index, std::span<const Tensor> images,
                         const EvalSettings& settings) {
    return repeat_eval(extract_embeddings(checkpoint, index, images), settings);
}

double percentage_variation(double auc_a, double auc_b) {
    if (!(auc_b > 0.0)) throw ParameterError("percentage_variation: AUC(B) must be positive");
    return (auc_a - auc_b) / auc_b * 100.0;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        cells.emplace_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

std::vector<std::vector<std::string>> parse_csv(std::string_view text, const std::vector<std::string>& header,
                                                const char* what) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    bool first = true;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (first) {
            if (cells != header) throw FormatError(std::string(what) + ": unexpected header '" + line + "'");
            first = false;
            continue;
        }
        if (cells.size() != header.size()) {
            throw FormatError(std::string(what) + ": line " + std::to_string(lineno) + " has " +
                              std::to_string(cells.size()) + " cells, expected " + std::to_string(header.size()));
        }
        rows.push_back(std::move(cells));
    }
    if (first) throw FormatError(std::string(what) + ": missing header");
    return rows;
}

double to_double(const std::string& s, const char* what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw FormatError(std::string(what) + ": bad number '" + s + "'");
    }
}

int to_int(const std::string& s, const char* what) {
    const double v = to_double(s, what);
    if (v != std::floor(v)) throw FormatError(std::string(what) + ": bad integer '" + s + "'");
    return static_cast<int>(v);
}

void check_cell(const std::string& s) {
    if (s.find_first_of(",\n\r") != std::string::npos) throw FormatError("CSV cell contains a separator: '" + s + "'");
}

const std::vector<std::string> kReportHeader = {"model_label", "dataset", "patch", "stride", "mean_auc", "std_auc"};
const std::vector<std::string> kPvHeader = {"setting_a", "setting_b", "auc_a", "auc_b", "pv_percent"};

}  // namespace

std::string report_csv(std::span<const ReportRow> rows) {
    std::string out = "model_label,dataset,patch,stride,mean_auc,std_auc\n";
    char buf[96];
    for (const auto& r : rows) {
        check_cell(r.model_label);
        check_cell(r.dataset);
        std::snprintf(buf, sizeof buf, ",%d,%d,%.6f,%.6f\n", r.patch, r.stride, r.mean_auc, r.std_auc);
        out += r.model_label + "," + r.dataset + buf;
    }
    return out;
}

std::vector<ReportRow> parse_report_csv(std::string_view text) {
    std::vector<ReportRow> rows;
    for (auto& c : parse_csv(text, kReportHeader, "report CSV")) {
        rows.push_back({c[0], c[1], to_int(c[2], "report CSV"), to_int(c[3], "report CSV"),
                        to_double(c[4], "report CSV"), to_double(c[5], "report CSV")});
    }
    return rows;
}

std::string pv_csv(std::span<const PvRow> rows) {
    std::string out = "setting_a,setting_b,auc_a,auc_b,pv_percent\n";
    char buf[96];
    for (const auto& r : rows) {
        check_cell(r.setting_a);
        check_cell(r.setting_b);
        std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.4f\n", r.auc_a, r.auc_b, r.pv_percent);
        out += r.setting_a + "," + r.setting_b + buf;
    }
    return out;
}

std::vector<PvRow> parse_pv_csv(std::string_view text) {
    std::vector<PvRow> rows;
    for (auto& c : parse_csv(text, kPvHeader, "PV CSV")) {
        rows.push_back({c[0], c[1], to_double(c[2], "PV CSV"), to_double(c[3], "PV CSV"), to_double(c[4], "PV CSV")});
    }
    return rows;
}

PvRow compare_rows(const ReportRow& a, const ReportRow& b) {
    auto setting = [](const ReportRow& r) { return r.dataset.empty() ? r.model_label : r.model_label + "/" + r.dataset; };
    return {setting(a), setting(b), a.mean_auc, b.mean_auc, percentage_variation(a.mean_auc, b.mean_auc)};
}

std::string model_family(std::string_view model_label) {
    const auto p = model_label.rfind("_p");
    if (p == std::string_view::npos) return std::string(model_label);
    const auto s = model_label.find("_s", p + 2);
    if (s == std::string_view::npos) return std::string(model_label);
    return std::string(model_label.substr(0, p));
}

std::vector<PvRow> overlap_pv_table(std::span<const ReportRow> rows) {
    std::vector<PvRow> out;
    for (const ReportRow& a : rows) {
        if (a.stride * 2 != a.patch) continue;
        const std::string family = model_family(a.model_label);
        const ReportRow* match = nullptr;
        for (const ReportRow& b : rows) {
            if (b.patch == a.patch && b.stride == b.patch && b.dataset == a.dataset && model_family(b.model_label) == family) {
                match = &b;
                break;
            }
        }
        if (match) out.push_back(compare_rows(a, *match));
    }
    return out;
}

}  // namespace earvit
