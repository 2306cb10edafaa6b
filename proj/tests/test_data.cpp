#include <cmath>
#include <fstream>

#include "doctest.h"
#include "earvit/data.hpp"
#include "earvit/error.hpp"
#include "earvit/io.hpp"
#include "support.hpp"

using namespace earvit;
using earvit::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::string gray_pgm(int w, int h, unsigned char value) {
    std::string s = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    s.append(static_cast<std::size_t>(w) * h, static_cast<char>(value));
    return s;
}

void put(const fs::path& p, const std::string& bytes) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << bytes;
}

}  // namespace

TEST_CASE("decode binary and ascii PNM") {
    auto g = decode_image("P2\n# comment\n2 2\n4\n0 1\n2 4\n", "a.pgm");
    CHECK(g.width == 2);
    CHECK(g.height == 2);
    CHECK(g.channels == 1);
    CHECK(g.at(0, 1) == 0.25);
    CHECK(g.at(1, 1) == 1.0);

    std::string p6 = "P6 1 1 255\n";
    p6 += static_cast<char>(255);
    p6 += static_cast<char>(0);
    p6 += static_cast<char>(51);
    auto c = decode_image(p6, "b.ppm");
    CHECK(c.channels == 3);
    CHECK(c.at(0, 0, 0) == 1.0);
    CHECK(c.at(0, 0, 1) == 0.0);
    CHECK(c.at(0, 0, 2) == doctest::Approx(0.2));

    auto p3 = decode_image("P3\n1 1\n10\n10 5 0\n", "c.ppm");
    CHECK(p3.at(0, 0, 1) == 0.5);

    std::string wide = "P5 1 1 65535\n";
    wide += static_cast<char>(0x80);
    wide += static_cast<char>(0x00);
    CHECK(decode_image(wide, "d.pgm").at(0, 0) == doctest::Approx(32768.0 / 65535.0));
}

TEST_CASE("decode rejects malformed input and names the file") {
    CHECK_THROWS_AS(decode_image("\x89PNG\r\n", "photo.png"), FormatError);
    try {
        decode_image("GIF89a", "ear.gif");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("ear.gif") != std::string::npos);
    }
    CHECK_THROWS_AS(decode_image("P5\n2 2\n255\n\x01", "t.pgm"), FormatError);
    CHECK_THROWS_AS(decode_image("P2\n1 1\n4\n9\n", "v.pgm"), FormatError);
    CHECK_THROWS_AS(decode_image("P5\n0 2\n255\n", "z.pgm"), FormatError);
    CHECK_THROWS_AS(decode_image("P5\n2", "h.pgm"), FormatError);
}

TEST_CASE("encode and decode round-trip 8-bit images") {
    RawImage img;
    img.width = 3;
    img.height = 2;
    img.channels = 3;
    for (int i = 0; i < 18; ++i) img.values.push_back((i * 13 % 256) / 255.0);
    auto back = decode_image(encode_pnm(img), "x.ppm");
    CHECK(back.values == img.values);
    CHECK(encode_pnm(back) == encode_pnm(img));
}

TEST_CASE("white and black images standardize to +1 and -1") {
    auto white = preprocess(gray_pgm(7, 5, 255), "w.pgm", 8, 1);
    CHECK(white.shape() == Shape{1, 8, 8});
    for (double v : white.data()) CHECK(v == 1.0);
    auto black = preprocess(gray_pgm(3, 9, 0), "b.pgm", 8, 3);
    CHECK(black.shape() == Shape{3, 8, 8});
    for (double v : black.data()) CHECK(v == -1.0);
}

TEST_CASE("checkerboard bilinear upscale") {
    RawImage board;
    board.width = 2;
    board.height = 2;
    board.values = {0.0, 1.0, 1.0, 0.0};
    auto up = resize_bilinear(board, 4, 4);
    // Half-pixel centres map output 0..3 to source 0, 0.25, 0.75, 1 after
    // edge clamping; on this board the bilinear value is u + v - 2uv.
    const double pos[4] = {0.0, 0.25, 0.75, 1.0};
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            double u = pos[y], v = pos[x];
            CHECK(up.at(y, x) == doctest::Approx(u + v - 2 * u * v).epsilon(1e-15));
        }
}

TEST_CASE("resize keeps constant images constant and handles aspect ratio") {
    RawImage flat;
    flat.width = 5;
    flat.height = 3;
    flat.values.assign(15, 0.4);
    auto r = resize_bilinear(flat, 11, 11);
    for (double v : r.values) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));
    auto same = resize_bilinear(flat, 5, 3);
    CHECK(same.values == flat.values);
    CHECK_THROWS_AS(resize_bilinear(flat, 0, 3), ParameterError);
}

TEST_CASE("channel conversion") {
    RawImage rgb;
    rgb.width = 1;
    rgb.height = 1;
    rgb.channels = 3;
    rgb.values = {1.0, 0.0, 0.0};
    auto g = preprocess(rgb, 1, 1);
    CHECK(g.data()[0] == doctest::Approx((0.299 - 0.5) / 0.5));
    RawImage gray;
    gray.width = gray.height = 1;
    gray.values = {0.75};
    auto c = preprocess(gray, 1, 3);
    for (double v : c.data()) CHECK(v == 0.5);
    CHECK_THROWS_AS(preprocess(gray, 1, 2), ParameterError);
}

TEST_CASE("dataset with sides") {
    TempDir dir("sides");
    for (std::string subject : {"bob", "alice"})
        for (std::string side : {"left", "right"})
            for (int k = 0; k < 3; ++k)
                put(dir.path() / subject / side / ("i" + std::to_string(k) + ".pgm"), gray_pgm(4, 4, 10 * k));
    auto idx = load_dataset(dir.path());
    CHECK(idx.size() == 12);
    CHECK(idx.num_classes() == 4);
    CHECK(idx.identities == std::vector<std::string>{"alice/left", "alice/right", "bob/left", "bob/right"});
    CHECK(idx.issues.empty());
    CHECK(idx.records[0].image_id == "alice/left/i0.pgm");
    CHECK(idx.records[0].side == Side::Left);
    CHECK(idx.records[11].identity_key == "bob/right");
    CHECK(idx.records[11].label == 3);
    for (std::size_t i = 1; i < idx.size(); ++i) CHECK(idx.records[i - 1].image_id < idx.records[i].image_id);

    auto imgs = load_images(idx, 8, 1);
    CHECK(imgs.images.size() == 12);
    CHECK(imgs.num_classes == 4);
    CHECK(imgs.labels[4] == 1);
}

TEST_CASE("dataset without side directories") {
    TempDir dir("flat");
    for (std::string subject : {"s2", "s1", "s3"})
        for (int k = 0; k < 2; ++k) put(dir.path() / subject / ("x" + std::to_string(k) + ".pgm"), gray_pgm(2, 2, 1));
    auto idx = load_dataset(dir.path());
    CHECK(idx.num_classes() == 3);
    CHECK(idx.identities == std::vector<std::string>{"s1", "s2", "s3"});
    for (auto& r : idx.records) CHECK(r.side == Side::Unspecified);
}

TEST_CASE("short side names and mixed layouts") {
    TempDir dir("mixed");
    put(dir.path() / "a" / "L" / "1.pgm", gray_pgm(2, 2, 1));
    put(dir.path() / "a" / "r" / "1.pgm", gray_pgm(2, 2, 1));
    put(dir.path() / "a" / "top.pgm", gray_pgm(2, 2, 1));
    put(dir.path() / "a" / "front" / "1.pgm", gray_pgm(2, 2, 1));
    put(dir.path() / "stray.pgm", gray_pgm(2, 2, 1));
    auto idx = load_dataset(dir.path());
    CHECK(idx.identities == std::vector<std::string>{"a", "a/left", "a/right"});
    CHECK(idx.issues.size() == 2);
}

TEST_CASE("corrupt files are reported and skipped") {
    TempDir dir("corrupt");
    for (int k = 0; k < 3; ++k) put(dir.path() / "s1" / ("ok" + std::to_string(k) + ".pgm"), gray_pgm(3, 3, 50));
    put(dir.path() / "s1" / "bad.pgm", "not an image");
    put(dir.path() / "s2" / "ok.pgm", gray_pgm(3, 3, 50));
    auto idx = load_dataset(dir.path());
    CHECK(idx.size() == 4);
    REQUIRE(idx.issues.size() == 1);
    CHECK(idx.issues[0].path.filename() == "bad.pgm");
    for (auto& r : idx.records) CHECK(r.path.filename() != "bad.pgm");
}

TEST_CASE("empty or missing roots") {
    TempDir dir("empty");
    CHECK_THROWS_AS(load_dataset(dir.path()), DatasetError);
    CHECK_THROWS_AS(load_dataset(dir.path() / "missing"), DatasetError);
    put(dir.path() / "s" / "bad.pgm", "junk");
    CHECK_THROWS_AS(load_dataset(dir.path()), DatasetError);
}

TEST_CASE("synthetic identities") {
    SynthSpec spec;
    spec.identities = 3;
    spec.images_per_identity = 4;
    spec.image_size = 16;
    spec.noise_std = 0.0;
    auto ds = synth_dataset(spec);
    REQUIRE(ds.images.size() == 12);
    CHECK(ds.index.num_classes() == 3);
    for (int id = 0; id < 3; ++id)
        for (int k = 1; k < 4; ++k) CHECK(ds.images[id * 4 + k].values == ds.images[id * 4].values);
    CHECK(ds.images[0].values != ds.images[4].values);
    CHECK(ds.index.records[5].image_id == "s0001/img0001.pgm");

    spec.noise_std = 0.1;
    spec.seed = 3;
    auto a = synth_dataset(spec);
    auto b = synth_dataset(spec);
    for (std::size_t i = 0; i < a.images.size(); ++i) CHECK(a.images[i].values == b.images[i].values);
    spec.seed = 4;
    CHECK(synth_dataset(spec).images[0].values != a.images[0].values);

    spec.with_sides = true;
    spec.identities = 4;
    auto sided = synth_dataset(spec);
    CHECK(sided.index.identities == std::vector<std::string>{"s0000/left", "s0000/right", "s0001/left", "s0001/right"});

    CHECK_THROWS_AS(synth_dataset(SynthSpec{1, 4, 16, 0.0, 0, false}), ParameterError);
}

TEST_CASE("synthetic set survives a disk round trip") {
    SynthSpec spec;
    spec.identities = 2;
    spec.images_per_identity = 3;
    spec.image_size = 12;
    spec.with_sides = true;
    auto ds = synth_dataset(spec);
    TempDir dir("synth");
    write_dataset(ds, dir.path());
    auto idx = load_dataset(dir.path());
    REQUIRE(idx.size() == ds.index.size());
    CHECK(idx.identities == ds.index.identities);
    auto from_disk = load_images(idx, 12, 1);
    auto in_memory = preprocess_all(ds, 12, 1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        CHECK(idx.records[i].image_id == ds.index.records[i].image_id);
        CHECK(from_disk.labels[i] == in_memory.labels[i]);
        CHECK(std::equal(from_disk.images[i].data().begin(), from_disk.images[i].data().end(),
                         in_memory.images[i].data().begin()));
    }
}

namespace {

// Nearest-template accuracy over n_ids identities, by exhaustive distance
// comparison.
double template_accuracy(double noise, std::uint64_t seed) {
    SynthSpec spec;
    spec.identities = 2;
    spec.images_per_identity = 200;
    spec.image_size = 16;
    spec.noise_std = noise;
    spec.seed = seed;
    auto ds = synth_dataset(spec);
    std::vector<RawImage> templates{synth_template(spec, 0), synth_template(spec, 1)};
    int correct = 0;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        double best = INFINITY;
        int guess = -1;
        for (int t = 0; t < 2; ++t) {
            double d = 0.0;
            for (std::size_t j = 0; j < templates[t].values.size(); ++j) {
                double e = ds.images[i].values[j] - templates[t].values[j];
                d += e * e;
            }
            if (d < best) {
                best = d;
                guess = t;
            }
        }
        correct += guess == ds.index.records[i].label;
    }
    return static_cast<double>(correct) / static_cast<double>(ds.images.size());
}

}  // namespace

TEST_CASE("template matching degrades with noise") {
    CHECK(template_accuracy(0.0, 1) == 1.0);
    CHECK(template_accuracy(0.05, 1) == 1.0);
    double noisy = template_accuracy(50.0, 1);
    CHECK(noisy < 0.65);
    CHECK(noisy > 0.35);
}
