#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "earvit/error.hpp"
#include "earvit/io.hpp"

namespace earvit::cli {

namespace pt = boost::property_tree;

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
    Int out{};
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) bad_value(key, v, "an integer");
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
        bad_value(key, v, "a finite number");
    }
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true") return true;
    if (v == "false") return false;
    bad_value(key, v, "true or false");
}

// Shortest text that parses back to the same double.
std::string show(double v) {
    char buf[64];
    auto end = std::to_chars(buf, buf + sizeof buf, v).ptr;
    return std::string(buf, end);
}

struct Field {
    std::string key;  // "section.name"
    std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
    std::function<std::string(const RunConfig&)> get;
    bool preset_fixed = false;
};

#define EARVIT_INT(KEY, MEMBER, T)                                                                  \
    Field {                                                                                          \
        KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_int<T>(k, v); }, \
            [](const RunConfig& c) { return std::to_string(c.MEMBER); }                             \
    }
#define EARVIT_REAL(KEY, MEMBER)                                                                    \
    Field {                                                                                          \
        KEY, [](RunConfig& c, const std::string& k, const std::string& v) { c.MEMBER = to_double(k, v); }, \
            [](const RunConfig& c) { return show(c.MEMBER); }                                       \
    }
#define EARVIT_TEXT(KEY, MEMBER)                                                                    \
    Field {                                                                                          \
        KEY, [](RunConfig& c, const std::string&, const std::string& v) { c.MEMBER = v; },           \
            [](const RunConfig& c) { return c.MEMBER; }                                             \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = [] {
        std::vector<Field> f{
            Field{"model.variant",
                  [](RunConfig& c, const std::string& k, const std::string& v) {
                      try {
                          c.set_variant(v);
                      } catch (const Error&) {
                          bad_value(k, v, "T, S, B, L or custom");
                      }
                  },
                  [](const RunConfig& c) { return std::string(variant_code(c.model.variant)); }},
            EARVIT_INT("model.depth", model.depth, int),
            EARVIT_INT("model.width", model.width, int),
            EARVIT_INT("model.heads", model.heads, int),
            EARVIT_REAL("model.mlp_ratio", model.mlp_ratio),
            EARVIT_INT("model.channels", model.channels, int),
            EARVIT_INT("model.image_size", model.grid.image_size, int),
            EARVIT_INT("model.patch_size", model.grid.patch_size, int),
            EARVIT_INT("model.stride", model.grid.stride, int),

            EARVIT_REAL("loss.scale", loss.scale),
            EARVIT_REAL("loss.margin", loss.margin),
            EARVIT_REAL("loss.sample_rate", loss.sample_rate),
            EARVIT_INT("loss.seed", loss_seed, std::uint64_t),

            EARVIT_REAL("train.base_lr", train.base_lr),
            EARVIT_REAL("train.weight_decay", train.weight_decay),
            EARVIT_INT("train.epochs", train.epochs, int),
            EARVIT_INT("train.warmup_epochs", train.warmup_epochs, int),
            EARVIT_INT("train.batch_size", train.batch_size, int),
            EARVIT_INT("train.seed", train.seed, std::uint64_t),
            EARVIT_REAL("train.beta1", train.beta1),
            EARVIT_REAL("train.beta2", train.beta2),
            EARVIT_REAL("train.eps", train.eps),
            EARVIT_REAL("train.clip_norm", train.clip_norm),

            EARVIT_TEXT("data.root", data_root),
            EARVIT_TEXT("data.name", data_name),

            EARVIT_INT("synth.identities", synth.identities, int),
            EARVIT_INT("synth.images_per_identity", synth.images_per_identity, int),
            EARVIT_INT("synth.image_size", synth.image_size, int),
            EARVIT_REAL("synth.noise_std", synth.noise_std),
            EARVIT_INT("synth.seed", synth.seed, std::uint64_t),
            Field{"synth.with_sides",
                  [](RunConfig& c, const std::string& k, const std::string& v) { c.synth.with_sides = to_bool(k, v); },
                  [](const RunConfig& c) { return std::string(c.synth.with_sides ? "true" : "false"); }},

            EARVIT_INT("eval.repeats", eval.repeats, int),
            EARVIT_REAL("eval.impostor_ratio", eval.impostor_ratio),
            EARVIT_INT("eval.seed", eval.seed, std::uint64_t),
        };
        for (auto& x : f) {
            x.preset_fixed = x.key == "model.depth" || x.key == "model.width" || x.key == "model.heads" ||
                             x.key == "model.mlp_ratio";
        }
        return f;
    }();
    return table;
}

#undef EARVIT_INT
#undef EARVIT_REAL
#undef EARVIT_TEXT

const Field* find_field(const std::string& key) {
    for (const auto& f : fields()) {
        if (f.key == key) return &f;
    }
    return nullptr;
}

}  // namespace

RunConfig::RunConfig() {
    model.grid = PatchGrid{32, 8, 4};
    model.depth = 2;
    model.width = 64;
    model.heads = 4;
    model.channels = 1;
}

void RunConfig::set_variant(std::string_view code) {
    if (code == "custom") {
        model.variant = Variant::Custom;
        return;
    }
    // Any valid grid will do; only the shape fields are taken.
    const ViTConfig preset = config_for(parse_variant(code), PatchGrid{16, 16, 16}, 1);
    model.variant = preset.variant;
    model.depth = preset.depth;
    model.width = preset.width;
    model.heads = preset.heads;
    model.mlp_ratio = preset.mlp_ratio;
}

void RunConfig::set_grid(int patch_size, int stride) {
    model.grid.patch_size = patch_size;
    model.grid.stride = stride;
}

void RunConfig::validate() const {
    try {
        model.validate();
    } catch (const GridError& e) {
        throw GridError("model.patch_size/model.stride: " + std::string(e.what()));
    }
    loss.validate();
    train.validate();
    if (synth.identities < 2) throw ConfigError("synth.identities must be at least 2");
    if (synth.images_per_identity < 2) throw ConfigError("synth.images_per_identity must be at least 2");
    if (synth.image_size < 1) throw ConfigError("synth.image_size must be positive");
    if (!(synth.noise_std >= 0.0)) throw ConfigError("synth.noise_std must be non-negative");
    if (eval.repeats < 1) throw ConfigError("eval.repeats must be positive");
    if (!(eval.impostor_ratio > 0.0)) throw ConfigError("eval.impostor_ratio must be positive");
    if (data_name.empty() || data_name.find_first_of(",\"\n") != std::string::npos) {
        throw ConfigError("data.name must be non-empty and free of commas, quotes and newlines");
    }
}

bool operator==(const RunConfig& a, const RunConfig& b) {
    for (const auto& f : fields()) {
        if (f.get(a) != f.get(b)) return false;
    }
    return true;
}

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
    pt::ptree tree;
    std::istringstream in(text);
    try {
        pt::ini_parser::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
    }

    RunConfig c;
    bool has_version = false;
    bool preset = false;
    std::vector<std::string> fixed_keys;
    for (const auto& [section, node] : tree) {
        if (node.empty()) {
            if (section != "version") throw ConfigError(origin + ": unknown key '" + section + "'");
            int v = 0;
            try {
                v = to_int<int>("version", node.data());
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ": " + e.what());
            }
            if (v != kConfigVersion) {
                throw ConfigError(origin + ": version " + std::to_string(v) + " is not supported (expected " +
                                  std::to_string(kConfigVersion) + ")");
            }
            has_version = true;
            continue;
        }
        for (const auto& [name, leaf] : node) {
            const std::string key = section + "." + name;
            const Field* f = find_field(key);
            if (!f) throw ConfigError(origin + ": unknown key '" + key + "'");
            if (!leaf.empty()) throw ConfigError(origin + ": '" + key + "' is not a plain value");
            try {
                f->set(c, key, leaf.data());
            } catch (const ConfigError& e) {
                throw ConfigError(origin + ": " + e.what());
            }
            if (key == "model.variant") preset = c.model.variant != Variant::Custom;
            if (f->preset_fixed) fixed_keys.push_back(key);
        }
    }
    if (!has_version) throw ConfigError(origin + ": missing 'version' (expected " + std::to_string(kConfigVersion) + ")");
    if (preset && !fixed_keys.empty()) {
        throw ConfigError(origin + ": '" + fixed_keys.front() + "' is fixed by variant " +
                          std::string(variant_code(c.model.variant)) + "; remove it or use variant = custom");
    }
    try {
        c.validate();
    } catch (const Error& e) {
        throw ConfigError(origin + ": " + e.what());
    }
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const Error& e) {
        throw ConfigError(e.what());
    }
    return parse_run_config(text, path.string());
}

std::string serialize_run_config(const RunConfig& config) {
    std::string out = "version = " + std::to_string(kConfigVersion) + "\n";
    std::string section;
    const bool preset = config.model.variant != Variant::Custom;
    for (const auto& f : fields()) {
        if (preset && f.preset_fixed) continue;
        const std::string sec = f.key.substr(0, f.key.find('.'));
        if (sec != section) {
            out += "\n[" + sec + "]\n";
            section = sec;
        }
        out += f.key.substr(sec.size() + 1) + " = " + f.get(config) + "\n";
    }
    return out;
}

}  // namespace earvit::cli
