#include "earvit/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>

#include "earvit/error.hpp"
#include "earvit/io.hpp"
#include "earvit/rng.hpp"

namespace fs = std::filesystem;

namespace earvit {

std::string_view side_name(Side side) {
    switch (side) {
        case Side::Left: return "left";
        case Side::Right: return "right";
        case Side::Unspecified: return "unspecified";
    }
    return "unspecified";
}

// ---- PNM codec ---------------------------------------------------------------

namespace {

class PnmHeader {
   public:
    PnmHeader(std::string_view bytes, const std::string& name) : in_(bytes), name_(name) {}

    int next_int() {
        skip_space();
        if (pos_ >= in_.size() || !std::isdigit(static_cast<unsigned char>(in_[pos_]))) {
            throw FormatError(name_ + ": malformed PNM header");
        }
        long v = 0;
        while (pos_ < in_.size() && std::isdigit(static_cast<unsigned char>(in_[pos_]))) {
            v = v * 10 + (in_[pos_++] - '0');
            if (v > 1'000'000) throw FormatError(name_ + ": PNM header value too large");
        }
        return static_cast<int>(v);
    }

    // Binary payload starts after exactly one whitespace byte.
    std::size_t payload_start() {
        if (pos_ >= in_.size() || !std::isspace(static_cast<unsigned char>(in_[pos_]))) {
            throw FormatError(name_ + ": malformed PNM header");
        }
        return pos_ + 1;
    }

   private:
    void skip_space() {
        while (pos_ < in_.size()) {
            const char c = in_[pos_];
            if (c == '#') {
                while (pos_ < in_.size() && in_[pos_] != '\n') ++pos_;
            } else if (std::isspace(static_cast<unsigned char>(c))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    std::string_view in_;
    std::string name_;
    std::size_t pos_ = 2;
};

}  // namespace

RawImage decode_image(std::string_view bytes, const std::string& name) {
    if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '2' && bytes[1] != '3' && bytes[1] != '5' && bytes[1] != '6')) {
        throw FormatError(name + ": unsupported image format (expected PGM/PPM)");
    }
    const bool ascii = bytes[1] == '2' || bytes[1] == '3';
    const int channels = (bytes[1] == '3' || bytes[1] == '6') ? 3 : 1;
    PnmHeader header(bytes, name);
    RawImage img;
    img.width = header.next_int();
    img.height = header.next_int();
    const int maxval = header.next_int();
    img.channels = channels;
    if (img.width < 1 || img.height < 1) throw FormatError(name + ": empty image");
    if (maxval < 1 || maxval > 65535) throw FormatError(name + ": bad maxval " + std::to_string(maxval));
    const std::size_t count = static_cast<std::size_t>(img.width) * img.height * channels;
    img.values.resize(count);
    if (ascii) {
        for (std::size_t i = 0; i < count; ++i) {
            const int v = header.next_int();
            if (v > maxval) throw FormatError(name + ": sample exceeds maxval");
            img.values[i] = static_cast<double>(v) / maxval;
        }
        return img;
    }
    const std::size_t start = header.payload_start();
    const std::size_t width = maxval > 255 ? 2 : 1;
    if (bytes.size() - start < count * width) throw FormatError(name + ": truncated pixel data");
    for (std::size_t i = 0; i < count; ++i) {
        const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + start + i * width);
        const int v = width == 2 ? (p[0] << 8 | p[1]) : p[0];
        if (v > maxval) throw FormatError(name + ": sample exceeds maxval");
        img.values[i] = static_cast<double>(v) / maxval;
    }
    return img;
}

std::string encode_pnm(const RawImage& image) {
    if (image.channels != 1 && image.channels != 3) throw FormatError("encode_pnm: channels must be 1 or 3");
    std::string out = (image.channels == 1 ? "P5\n" : "P6\n") + std::to_string(image.width) + " " +
                      std::to_string(image.height) + "\n255\n";
    out.reserve(out.size() + image.values.size());
    for (double v : image.values) {
        const long q = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    return out;
}

// ---- preprocessing -------------------------------------------------------------

RawImage resize_bilinear(const RawImage& image, int width, int height) {
    if (width < 1 || height < 1) throw ParameterError("resize_bilinear: target size must be positive");
    RawImage out;
    out.width = width;
    out.height = height;
    out.channels = image.channels;
    out.values.resize(static_cast<std::size_t>(width) * height * image.channels);

    struct Tap {
        int lo, hi;
        double frac;
    };
    auto taps = [](int in, int outn) {
        std::vector<Tap> t(static_cast<std::size_t>(outn));
        const double ratio = static_cast<double>(in) / outn;
        for (int i = 0; i < outn; ++i) {
            double src = (i + 0.5) * ratio - 0.5;
            src = std::clamp(src, 0.0, static_cast<double>(in - 1));
            const int lo = static_cast<int>(std::floor(src));
            const int hi = std::min(lo + 1, in - 1);
            t[static_cast<std::size_t>(i)] = {lo, hi, src - lo};
        }
        return t;
    };
    const auto xs = taps(image.width, width);
    const auto ys = taps(image.height, height);
    for (int y = 0; y < height; ++y) {
        const Tap& ty = ys[static_cast<std::size_t>(y)];
        for (int x = 0; x < width; ++x) {
            const Tap& tx = xs[static_cast<std::size_t>(x)];
            for (int c = 0; c < image.channels; ++c) {
                const double top = image.at(ty.lo, tx.lo, c) * (1 - tx.frac) + image.at(ty.lo, tx.hi, c) * tx.frac;
                const double bot = image.at(ty.hi, tx.lo, c) * (1 - tx.frac) + image.at(ty.hi, tx.hi, c) * tx.frac;
                out.values[(static_cast<std::size_t>(y) * width + x) * image.channels + c] =
                    top * (1 - ty.frac) + bot * ty.frac;
            }
        }
    }
    return out;
}

Tensor preprocess(const RawImage& image, int side, int channels) {
    if (channels != 1 && channels != 3) throw ParameterError("preprocess: channels must be 1 or 3");
    if (side < 1) throw ParameterError("preprocess: side must be positive");
    const RawImage resized = resize_bilinear(image, side, side);
    const auto plane = static_cast<std::size_t>(side) * side;
    std::vector<double> out(plane * channels);
    for (std::size_t i = 0; i < plane; ++i) {
        const double* px = resized.values.data() + i * resized.channels;
        for (int c = 0; c < channels; ++c) {
            double v;
            if (resized.channels == channels) {
                v = px[c];
            } else if (resized.channels == 1) {
                v = px[0];
            } else {
                v = 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2];
            }
            out[static_cast<std::size_t>(c) * plane + i] = (v - kNormMean) / kNormStd;
        }
    }
    const auto s = static_cast<std::size_t>(side);
    return Tensor({static_cast<std::size_t>(channels), s, s}, std::move(out));
}

Tensor preprocess(std::string_view bytes, const std::string& name, int side, int channels) {
    return preprocess(decode_image(bytes, name), side, channels);
}

// ---- directory datasets ----------------------------------------------------------

namespace {

std::vector<fs::path> sorted_entries(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (!name.empty() && name[0] == '.') continue;
        out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end(),
              [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });
    return out;
}

bool parse_side(std::string name, Side& side) {
    for (char& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (name == "left" || name == "l") {
        side = Side::Left;
        return true;
    }
    if (name == "right" || name == "r") {
        side = Side::Right;
        return true;
    }
    return false;
}

std::string identity_key(const std::string& subject, Side side) {
    return side == Side::Unspecified ? subject : subject + "/" + std::string(side_name(side));
}

void assign_labels(DatasetIndex& index) {
    std::vector<std::string> keys;
    for (const auto& r : index.records) keys.push_back(r.identity_key);
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (auto& r : index.records) {
        r.label = static_cast<int>(std::lower_bound(keys.begin(), keys.end(), r.identity_key) - keys.begin());
    }
    index.identities = std::move(keys);
}

}  // namespace

DatasetIndex load_dataset(const fs::path& root) {
    if (!fs::is_directory(root)) throw DatasetError("dataset root " + root.string() + " is not a directory");
    DatasetIndex index;
    auto add_file = [&](const fs::path& file, const std::string& subject, Side side) {
        try {
            decode_image(read_file(file), file.string());
        } catch (const Error& e) {
            index.issues.push_back({file, e.what()});
            return;
        }
        ImageRecord r;
        r.subject_id = subject;
        r.side = side;
        r.identity_key = identity_key(subject, side);
        r.path = fs::absolute(file);
        r.image_id = fs::relative(file, root).generic_string();
        index.records.push_back(std::move(r));
    };

    for (const fs::path& subject_dir : sorted_entries(root)) {
        if (!fs::is_directory(subject_dir)) {
            index.issues.push_back({subject_dir, "not inside a subject directory"});
            continue;
        }
        const std::string subject = subject_dir.filename().string();
        for (const fs::path& entry : sorted_entries(subject_dir)) {
            if (fs::is_directory(entry)) {
                Side side;
                if (!parse_side(entry.filename().string(), side)) {
                    index.issues.push_back({entry, "unrecognized side directory (expected left/right)"});
                    continue;
                }
                for (const fs::path& file : sorted_entries(entry)) {
                    if (fs::is_regular_file(file)) {
                        add_file(file, subject, side);
                    } else {
                        index.issues.push_back({file, "nested directory ignored"});
                    }
                }
            } else if (fs::is_regular_file(entry)) {
                add_file(entry, subject, Side::Unspecified);
            }
        }
    }
    if (index.records.empty()) {
        throw DatasetError("dataset root " + root.string() + " contains no decodable images");
    }
    assign_labels(index);
    return index;
}

LabeledImages load_images(const DatasetIndex& index, int side, int channels) {
    LabeledImages out;
    out.num_classes = index.num_classes();
    out.images.reserve(index.size());
    for (const auto& r : index.records) {
        out.images.push_back(preprocess(read_file(r.path), r.path.string(), side, channels));
        out.labels.push_back(r.label);
    }
    return out;
}

// ---- synthetic identities -----------------------------------------------------------

RawImage synth_template(const SynthSpec& spec, int identity) {
    if (spec.image_size < 2) throw ParameterError("synth: image_size must be at least 2");
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(identity)));
    const double pi = std::numbers::pi;
    const int n = std::max(spec.identities, 1);
    // Orientations are spread evenly so no two identities share a grating.
    const double theta = pi * (identity + 0.5 * rng.uniform()) / n;
    const double freq = 1.5 + 3.0 * rng.uniform();
    const double phase = 2.0 * pi * rng.uniform();
    struct Blob {
        double cx, cy, sigma, amp;
    };
    std::vector<Blob> blobs(3);
    for (Blob& b : blobs) {
        b.cx = 0.15 + 0.7 * rng.uniform();
        b.cy = 0.15 + 0.7 * rng.uniform();
        b.sigma = 0.06 + 0.09 * rng.uniform();
        b.amp = (rng.uniform() < 0.5 ? -1.0 : 1.0) * (0.2 + 0.2 * rng.uniform());
    }

    RawImage img;
    img.width = img.height = spec.image_size;
    img.channels = 1;
    img.values.resize(static_cast<std::size_t>(spec.image_size) * spec.image_size);
    for (int y = 0; y < spec.image_size; ++y) {
        for (int x = 0; x < spec.image_size; ++x) {
            const double u = (x + 0.5) / spec.image_size;
            const double v = (y + 0.5) / spec.image_size;
            double val = 0.5 + 0.25 * std::sin(2.0 * pi * freq * (u * std::cos(theta) + v * std::sin(theta)) + phase);
            for (const Blob& b : blobs) {
                const double dx = u - b.cx, dy = v - b.cy;
                val += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            }
            img.values[static_cast<std::size_t>(y) * spec.image_size + x] = std::clamp(val, 0.0, 1.0);
        }
    }
    return img;
}

SyntheticDataset synth_dataset(const SynthSpec& spec) {
    if (spec.identities < 2) throw ParameterError("synth: need at least 2 identities");
    if (spec.images_per_identity < 1) throw ParameterError("synth: need at least 1 image per identity");
    if (!(spec.noise_std >= 0.0)) throw ParameterError("synth: noise_std must be non-negative");

    SyntheticDataset out;
    char buf[64];
    for (int id = 0; id < spec.identities; ++id) {
        const RawImage tmpl = synth_template(spec, id);
        Side side = Side::Unspecified;
        int subject_no = id;
        if (spec.with_sides) {
            subject_no = id / 2;
            side = id % 2 == 0 ? Side::Left : Side::Right;
        }
        std::snprintf(buf, sizeof buf, "s%04d", subject_no);
        const std::string subject = buf;
        Rng noise(mix_seed(spec.seed ^ 0x5EEDF00DULL, static_cast<std::uint64_t>(id)));
        for (int k = 0; k < spec.images_per_identity; ++k) {
            RawImage img = tmpl;
            for (double& v : img.values) {
                const double noisy = std::clamp(v + spec.noise_std * noise.normal(), 0.0, 1.0);
                v = static_cast<double>(std::lround(noisy * 255.0)) / 255.0;
            }
            std::snprintf(buf, sizeof buf, "img%04d.pgm", k);
            ImageRecord r;
            r.subject_id = subject;
            r.side = side;
            r.identity_key = identity_key(subject, side);
            fs::path rel = fs::path(subject);
            if (side != Side::Unspecified) rel /= std::string(side_name(side));
            rel /= buf;
            r.path = rel;
            r.image_id = rel.generic_string();
            out.index.records.push_back(std::move(r));
            out.images.push_back(std::move(img));
        }
    }
    assign_labels(out.index);
    return out;
}

void write_dataset(const SyntheticDataset& dataset, const fs::path& root) {
    for (std::size_t i = 0; i < dataset.images.size(); ++i) {
        write_file_atomic(root / dataset.index.records[i].path, encode_pnm(dataset.images[i]));
    }
}

LabeledImages preprocess_all(const SyntheticDataset& dataset, int side, int channels) {
    LabeledImages out;
    out.num_classes = dataset.index.num_classes();
    for (std::size_t i = 0; i < dataset.images.size(); ++i) {
        out.images.push_back(preprocess(dataset.images[i], side, channels));
        out.labels.push_back(dataset.index.records[i].label);
    }
    return out;
}

}  // namespace earvit
