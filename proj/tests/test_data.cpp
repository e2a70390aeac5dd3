#include "helpers.hpp"

#include "wmu/data.hpp"

#include <doctest.h>

#include <fstream>
#include <set>

using namespace wmu;
using testutil::TempDir;

namespace {

// Straight transcription of Zhang-Suen on a padded copy.
std::vector<std::uint8_t> thin_reference(const std::vector<std::uint8_t>& mask, int h, int w)
{
    const int W = w + 2;
    std::vector<int> img(static_cast<std::size_t>((h + 2) * W), 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) img[(y + 1) * W + x + 1] = mask[y * w + x] ? 1 : 0;
    for (bool changed = true; changed;) {
        changed = false;
        for (int step = 1; step <= 2; ++step) {
            std::vector<int> del;
            for (int y = 1; y <= h; ++y)
                for (int x = 1; x <= w; ++x) {
                    if (!img[y * W + x]) continue;
                    const int P2 = img[(y - 1) * W + x], P3 = img[(y - 1) * W + x + 1], P4 = img[y * W + x + 1],
                              P5 = img[(y + 1) * W + x + 1], P6 = img[(y + 1) * W + x], P7 = img[(y + 1) * W + x - 1],
                              P8 = img[y * W + x - 1], P9 = img[(y - 1) * W + x - 1];
                    const int B = P2 + P3 + P4 + P5 + P6 + P7 + P8 + P9;
                    const int seq[9] = {P2, P3, P4, P5, P6, P7, P8, P9, P2};
                    int A = 0;
                    for (int i = 0; i < 8; ++i) A += seq[i] == 0 && seq[i + 1] == 1;
                    if (B < 2 || B > 6 || A != 1) continue;
                    if (step == 1 && P2 * P4 * P6 == 0 && P4 * P6 * P8 == 0) del.push_back(y * W + x);
                    if (step == 2 && P2 * P4 * P8 == 0 && P2 * P6 * P8 == 0) del.push_back(y * W + x);
                }
            for (int i : del) img[i] = 0;
            changed = changed || !del.empty();
        }
    }
    std::vector<std::uint8_t> out(mask.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out[y * w + x] = static_cast<std::uint8_t>(img[(y + 1) * W + x + 1]);
    return out;
}

DenseLabel random_blobs(std::uint64_t seed, int h, int w)
{
    Rng rng(seed);
    DenseLabel d(h, w, 0);
    const int blobs = 1 + static_cast<int>(rng() % 4);
    for (int b = 0; b < blobs; ++b) {
        const int cls = 1 + static_cast<int>(rng() % 3);
        const int y0 = static_cast<int>(rng() % h), x0 = static_cast<int>(rng() % w);
        const int bh = 1 + static_cast<int>(rng() % (h / 2)), bw = 1 + static_cast<int>(rng() % (w / 2));
        for (int y = y0; y < std::min(h, y0 + bh); ++y)
            for (int x = x0; x < std::min(w, x0 + bw); ++x) d.at(y, x) = static_cast<std::uint8_t>(cls);
    }
    return d;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes)
{
    std::ofstream f(p, std::ios::binary);
    f << bytes;
}

} // namespace

TEST_CASE("PGM write then read is exact")
{
    TempDir dir("pgm");
    GrayImage img{5, 7, {}};
    for (int i = 0; i < 35; ++i) {
        img.pixels.push_back(static_cast<std::uint8_t>(i * 7));
    }
    write_pgm(dir / "a.pgm", img);
    CHECK(read_pgm(dir / "a.pgm") == img);
}

TEST_CASE("PGM reader accepts comments and rejects malformed files")
{
    TempDir dir("pgmbad");
    write_bytes(dir / "c.pgm", std::string("P5\n# note\n2 1\n255\n") + '\x01' + '\x02');
    const auto img = read_pgm(dir / "c.pgm");
    CHECK(img.width == 2);
    CHECK(img.pixels == std::vector<std::uint8_t>{1, 2});
    write_bytes(dir / "p2.pgm", "P2\n2 1\n255\n1 2\n");
    CHECK_THROWS_AS(read_pgm(dir / "p2.pgm"), DataError);
    write_bytes(dir / "short.pgm", "P5\n4 4\n255\nab");
    CHECK_THROWS_AS(read_pgm(dir / "short.pgm"), DataError);
    write_bytes(dir / "deep.pgm", "P5\n1 1\n65535\nab");
    CHECK_THROWS_AS(read_pgm(dir / "deep.pgm"), DataError);
    write_bytes(dir / "hdr.pgm", "P5\n4x 4\n255\n");
    CHECK_THROWS_AS(read_pgm(dir / "hdr.pgm"), DataError);
    CHECK_THROWS_AS(read_pgm(dir / "missing.pgm"), IoError);
}

TEST_CASE("all-black image loads as zeros and values map to [0, 1]")
{
    const GrayImage black{4, 4, std::vector<std::uint8_t>(16, 0)};
    const auto zeros = to_tensor(black);
    for (float v : zeros.values()) {
        CHECK(v == 0.0f);
    }
    const GrayImage white{1, 2, {255, 51}};
    const auto t = to_tensor(white);
    CHECK(t.shape() == Shape{1, 1, 2});
    CHECK(t[0] == 1.0f);
    CHECK(t[1] == doctest::Approx(0.2f));
    CHECK(to_gray(t) == white);
}

TEST_CASE("nearest label resize never introduces new classes")
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto d = random_blobs(seed, 13, 17);
        const std::set<std::uint8_t> before(d.data.begin(), d.data.end());
        for (auto [h, w] : {std::pair{64, 64}, std::pair{7, 5}, std::pair{26, 34}}) {
            const auto r = resize_nearest(d, h, w);
            CHECK(r.height == h);
            for (auto v : r.data) {
                CHECK(before.count(v) == 1);
            }
        }
        CHECK(resize_nearest(d, 13, 17) == static_cast<const LabelMap&>(d));
    }
}

TEST_CASE("bilinear resize keeps constant images constant and identity at native size")
{
    const GrayImage flat{6, 6, std::vector<std::uint8_t>(36, 90)};
    const auto up = resize_bilinear(flat, 11, 9);
    for (auto v : up.pixels) {
        CHECK(v == 90);
    }
    const auto s = synthesize_sample(32, 1);
    CHECK(resize_bilinear(s.image, 32, 32) == s.image);
}

TEST_CASE("synthetic samples: labels in 0..3 and deterministic")
{
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto a = synthesize_sample(64, seed);
        const auto b = synthesize_sample(64, seed);
        CHECK(a.image == b.image);
        CHECK(a.label == b.label);
        for (auto v : a.label.data) {
            CHECK(v <= 3);
        }
    }
}

TEST_CASE("synthetic class shares over 100 samples")
{
    std::array<double, 4> count{};
    double total = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto s = synthesize_sample(64, mix_seed(99, seed));
        for (auto v : s.label.data) {
            count[v] += 1;
        }
        total += static_cast<double>(s.label.size());
    }
    CHECK(count[0] / total >= 0.60);
    for (int k = 1; k < 4; ++k) {
        CHECK(count[static_cast<std::size_t>(k)] / total >= 0.01);
    }
}

TEST_CASE("thinning matches the reference transcription")
{
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        const auto d = random_blobs(seed, 20, 24);
        std::vector<std::uint8_t> mask(d.size());
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = d.data[i] != 0;
        }
        const auto skel = zhang_suen_thin(mask, 20, 24);
        CHECK(skel == thin_reference(mask, 20, 24));
        for (std::size_t i = 0; i < mask.size(); ++i) {
            CHECK((skel[i] == 0 || mask[i] == 1));
        }
    }
}

TEST_CASE("scribbles are a class-wise subset with at least one pixel per present class")
{
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto d = synthesize_sample(64, seed).label;
        for (double cov : {0.05, 0.5, 1.0}) {
            const auto s = scribblify(d, cov, seed);
            std::set<std::uint8_t> hit;
            for (std::size_t i = 0; i < s.size(); ++i) {
                if (s.data[i] != kUnlabeled) {
                    CHECK(s.data[i] == d.data[i]);
                    hit.insert(s.data[i]);
                }
            }
            CHECK(hit == std::set<std::uint8_t>(d.data.begin(), d.data.end()));
        }
    }
}

TEST_CASE("a one-pixel class region is labelled at full coverage")
{
    DenseLabel d(8, 8, 0);
    d.at(3, 4) = 2;
    const auto s = scribblify(d, 1.0, 5);
    CHECK(s.at(3, 4) == 2);
    CHECK_THROWS_AS(scribblify(d, 0.0, 1), ConfigError);
    CHECK_THROWS_AS(scribblify(d, 1.5, 1), ConfigError);
}

TEST_CASE("scribble fraction at coverage 0.5 lies in [0.2%, 5%]")
{
    double labeled = 0, total = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto d = synthesize_sample(64, mix_seed(7, seed)).label;
        const auto s = scribblify(d, 0.5, seed);
        for (auto v : s.data) {
            labeled += v != kUnlabeled;
        }
        total += static_cast<double>(s.size());
    }
    INFO("fraction ", labeled / total);
    CHECK(labeled / total >= 0.002);
    CHECK(labeled / total <= 0.05);
}

TEST_CASE("scribbles are deterministic in the seed")
{
    const auto d = synthesize_sample(64, 3).label;
    CHECK(scribblify(d, 0.5, 11) == scribblify(d, 0.5, 11));
}

TEST_CASE("generated dataset round-trips and is reproducible")
{
    TempDir a("gen_a"), b("gen_b");
    SyntheticOptions o;
    o.n_train = 5;
    o.n_val = 2;
    o.n_test = 2;
    o.size = 32;
    o.seed = 4;
    const auto idx = gen_synthetic(o, a.path());
    gen_synthetic(o, b.path());
    CHECK(idx.train.size() == 5);
    CHECK(idx.val.size() == 2);
    CHECK(idx.test.size() == 2);
    const auto loaded = load_index(a.path());
    CHECK(loaded.train == idx.train);
    CHECK(loaded.test == idx.test);
    for (const auto& id : idx.train) {
        CHECK(read_pgm(a / ("images/" + id + ".pgm")) == read_pgm(b / ("images/" + id + ".pgm")));
        CHECK(read_pgm(idx.scribble_path(id)) == read_pgm(b / ("scribbles/" + id + ".pgm")));
        const auto sample = load_sample(loaded, id, Split::Train, 32, 4);
        CHECK(to_gray(sample.image) == read_pgm(idx.image_path(id)));
        for (auto v : sample.label.data) {
            CHECK((v < 4 || v == kUnlabeled));
        }
    }
    for (const auto& id : idx.test) {
        const auto sample = load_sample(loaded, id, Split::Test, 32, 4);
        CHECK(sample.label.data == read_pgm(idx.label_path(id)).pixels);
    }
    // Loading at another size resizes both image and labels.
    const auto big = load_sample(loaded, idx.val[0], Split::Val, 64, 4);
    CHECK(big.image.shape() == Shape{1, 64, 64});
    CHECK(big.label.height == 64);
}

TEST_CASE("loader rejects bad labels and overlapping splits")
{
    TempDir dir("bad");
    SyntheticOptions o;
    o.n_train = 2;
    o.n_val = 1;
    o.n_test = 1;
    o.size = 16;
    const auto idx = gen_synthetic(o, dir.path());
    auto lbl = read_pgm(idx.label_path(idx.test[0]));
    lbl.pixels[3] = 7;
    write_pgm(idx.label_path(idx.test[0]), lbl);
    CHECK_THROWS_AS(load_dense(idx, idx.test[0], 16, 4), DataError);
    auto dup = idx;
    dup.val.push_back(idx.train[0]);
    write_splits(dup);
    CHECK_THROWS_AS(load_index(dir.path()), DataError);
}

TEST_CASE("split counts default to 80/10/10")
{
    const auto o = split_counts(300);
    CHECK(o.n_train == 240);
    CHECK(o.n_val == 30);
    CHECK(o.n_test == 30);
    const auto small = split_counts(3);
    CHECK(small.n_train == 1);
    CHECK(small.n_val == 1);
    CHECK(small.n_test == 1);
    CHECK(split_counts(2).n_train == 2);
    CHECK_THROWS_AS(split_counts(0), ConfigError);
}
