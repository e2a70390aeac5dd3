#include "wmu/data.hpp"

#include "wmu/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <deque>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>

namespace wmu {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// PGM / PPM

namespace {

void write_netpbm(const fs::path& path, const char* magic, int height, int width, const std::uint8_t* data,
                  std::size_t bytes)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
    f << magic << '\n' << width << ' ' << height << "\n255\n";
    f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) {
        throw IoError("failed writing " + path.string());
    }
}

// Next header token, skipping whitespace and '#' comments.
std::string header_token(const std::vector<unsigned char>& buf, std::size_t& pos, const fs::path& path)
{
    for (;;) {
        while (pos < buf.size() && std::isspace(buf[pos])) {
            ++pos;
        }
        if (pos < buf.size() && buf[pos] == '#') {
            while (pos < buf.size() && buf[pos] != '\n') {
                ++pos;
            }
            continue;
        }
        break;
    }
    std::string tok;
    while (pos < buf.size() && !std::isspace(buf[pos])) {
        tok.push_back(static_cast<char>(buf[pos++]));
    }
    if (tok.empty()) {
        throw DataError(path.string() + ": truncated PGM header");
    }
    return tok;
}

int header_int(const std::vector<unsigned char>& buf, std::size_t& pos, const fs::path& path)
{
    const auto tok = header_token(buf, pos, path);
    int v = 0;
    const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc{} || end != tok.data() + tok.size() || v <= 0) {
        throw DataError(path.string() + ": invalid PGM header field '" + tok + "'");
    }
    return v;
}

} // namespace

void write_pgm(const fs::path& path, const GrayImage& image)
{
    if (image.pixels.size() != static_cast<std::size_t>(image.height) * static_cast<std::size_t>(image.width)) {
        throw ConfigError("write_pgm: pixel buffer does not match dimensions");
    }
    write_netpbm(path, "P5", image.height, image.width, image.pixels.data(), image.pixels.size());
}

GrayImage read_pgm(const fs::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot open " + path.string());
    }
    std::vector<unsigned char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t pos = 0;
    if (header_token(buf, pos, path) != "P5") {
        throw DataError(path.string() + ": not a binary PGM (P5)");
    }
    GrayImage img;
    img.width = header_int(buf, pos, path);
    img.height = header_int(buf, pos, path);
    const int maxval = header_int(buf, pos, path);
    if (maxval > 255) {
        throw DataError(path.string() + ": 16-bit PGM not supported (maxval " + std::to_string(maxval) + ")");
    }
    ++pos; // single whitespace after maxval
    const std::size_t n = static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height);
    if (pos + n != buf.size()) {
        throw DataError(path.string() + ": expected " + std::to_string(n) + " raster bytes, found " +
                        std::to_string(buf.size() >= pos ? buf.size() - pos : 0));
    }
    img.pixels.assign(buf.begin() + static_cast<std::ptrdiff_t>(pos), buf.end());
    return img;
}

void write_ppm(const fs::path& path, int height, int width, const std::vector<std::uint8_t>& rgb)
{
    if (rgb.size() != 3 * static_cast<std::size_t>(height) * static_cast<std::size_t>(width)) {
        throw ConfigError("write_ppm: RGB buffer does not match dimensions");
    }
    write_netpbm(path, "P6", height, width, rgb.data(), rgb.size());
}

// ---------------------------------------------------------------------------
// Index

std::string to_string(Split split)
{
    switch (split) {
    case Split::Train:
        return "train";
    case Split::Val:
        return "val";
    case Split::Test:
        return "test";
    }
    return "?";
}

Split parse_split(std::string_view name)
{
    if (name == "train") {
        return Split::Train;
    }
    if (name == "val") {
        return Split::Val;
    }
    if (name == "test") {
        return Split::Test;
    }
    throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

const std::vector<std::string>& DatasetIndex::ids(Split split) const
{
    switch (split) {
    case Split::Train:
        return train;
    case Split::Val:
        return val;
    case Split::Test:
        break;
    }
    return test;
}

fs::path DatasetIndex::image_path(const std::string& id) const { return root / "images" / (id + ".pgm"); }
fs::path DatasetIndex::label_path(const std::string& id) const { return root / "labels" / (id + ".pgm"); }
fs::path DatasetIndex::scribble_path(const std::string& id) const { return root / "scribbles" / (id + ".pgm"); }

namespace {

std::vector<std::string> read_split(const fs::path& path)
{
    std::ifstream f(path);
    if (!f) {
        throw IoError("cannot open split file " + path.string());
    }
    std::vector<std::string> ids;
    std::string line;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (!line.empty()) {
            ids.push_back(line);
        }
    }
    return ids;
}

} // namespace

DatasetIndex load_index(const fs::path& root)
{
    DatasetIndex index;
    index.root = root;
    index.train = read_split(root / "splits" / "train.txt");
    index.val = read_split(root / "splits" / "val.txt");
    index.test = read_split(root / "splits" / "test.txt");
    std::set<std::string> seen;
    for (auto split : {Split::Train, Split::Val, Split::Test}) {
        for (const auto& id : index.ids(split)) {
            if (!seen.insert(id).second) {
                throw DataError("sample id '" + id + "' appears in more than one split (or twice)");
            }
            if (!fs::exists(index.image_path(id))) {
                throw DataError("missing image " + index.image_path(id).string());
            }
            const auto label = split == Split::Train ? index.scribble_path(id) : index.label_path(id);
            if (split == Split::Train ? !fs::exists(label) && !fs::exists(index.label_path(id)) : !fs::exists(label)) {
                throw DataError("missing label " + label.string());
            }
        }
    }
    return index;
}

void write_splits(const DatasetIndex& index)
{
    fs::create_directories(index.root / "splits");
    for (auto split : {Split::Train, Split::Val, Split::Test}) {
        const auto path = index.root / "splits" / (to_string(split) + ".txt");
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw IoError("cannot write " + path.string());
        }
        for (const auto& id : index.ids(split)) {
            f << id << '\n';
        }
    }
}

// ---------------------------------------------------------------------------
// Conversion and resizing

GrayImage to_gray(const TensorF& image)
{
    GrayImage g;
    g.height = static_cast<int>(image.dim(-2));
    g.width = static_cast<int>(image.dim(-1));
    g.pixels.resize(static_cast<std::size_t>(g.height) * static_cast<std::size_t>(g.width));
    for (std::size_t i = 0; i < g.pixels.size(); ++i) {
        const float v = std::clamp(image[static_cast<std::int64_t>(i)], 0.0f, 1.0f);
        g.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return g;
}

TensorF to_tensor(const GrayImage& image)
{
    TensorF t({1, image.height, image.width});
    for (std::size_t i = 0; i < image.pixels.size(); ++i) {
        t[static_cast<std::int64_t>(i)] = static_cast<float>(image.pixels[i]) / 255.0f;
    }
    return t;
}

GrayImage to_gray(const LabelMap& label)
{
    return {label.height, label.width, label.data};
}

GrayImage resize_bilinear(const GrayImage& src, int height, int width)
{
    if (src.height == height && src.width == width) {
        return src;
    }
    GrayImage out{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width)};
    const double sy = static_cast<double>(src.height) / height;
    const double sx = static_cast<double>(src.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double ly = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double lx = fx - x0;
            auto px = [&](int yy, int xx) { return static_cast<double>(src.pixels[static_cast<std::size_t>(yy) * src.width + xx]); };
            const double v = (1 - ly) * ((1 - lx) * px(y0, x0) + lx * px(y0, x1)) +
                             ly * ((1 - lx) * px(y1, x0) + lx * px(y1, x1));
            out.pixels[static_cast<std::size_t>(y) * width + x] = static_cast<std::uint8_t>(std::lround(v));
        }
    }
    return out;
}

LabelMap resize_nearest(const LabelMap& src, int height, int width)
{
    if (src.height == height && src.width == width) {
        return src;
    }
    LabelMap out(height, width);
    for (int y = 0; y < height; ++y) {
        const int sy = std::min(src.height - 1, static_cast<int>((y + 0.5) * src.height / height));
        for (int x = 0; x < width; ++x) {
            const int sx = std::min(src.width - 1, static_cast<int>((x + 0.5) * src.width / width));
            out.at(y, x) = src.at(sy, sx);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Loading

namespace {

LabelMap load_label_file(const fs::path& path, int size, int num_classes, bool allow_unlabeled)
{
    const auto img = read_pgm(path);
    LabelMap label;
    label.height = img.height;
    label.width = img.width;
    label.data = img.pixels;
    for (std::size_t i = 0; i < label.data.size(); ++i) {
        const auto v = label.data[i];
        if (v >= num_classes && !(allow_unlabeled && v == kUnlabeled)) {
            throw DataError(path.string() + ": label value " + std::to_string(v) + " at pixel " +
                            std::to_string(i) + " is not a class < " + std::to_string(num_classes) +
                            (allow_unlabeled ? " or 255" : ""));
        }
    }
    return resize_nearest(label, size, size);
}

} // namespace

TensorF load_image(const DatasetIndex& index, const std::string& id, int size)
{
    return to_tensor(resize_bilinear(read_pgm(index.image_path(id)), size, size));
}

DenseLabel load_dense(const DatasetIndex& index, const std::string& id, int size, int num_classes)
{
    DenseLabel out;
    static_cast<LabelMap&>(out) = load_label_file(index.label_path(id), size, num_classes, false);
    return out;
}

ScribbleLabel load_scribble(const DatasetIndex& index, const std::string& id, int size, int num_classes)
{
    ScribbleLabel out;
    static_cast<LabelMap&>(out) = load_label_file(index.scribble_path(id), size, num_classes, true);
    return out;
}

Sample load_sample(const DatasetIndex& index, const std::string& id, Split split, int size, int num_classes)
{
    Sample s;
    s.image = load_image(index, id, size);
    if (split == Split::Train) {
        s.label = load_scribble(index, id, size, num_classes);
    } else {
        s.label = load_dense(index, id, size, num_classes);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

// Inside test for an ellipse with centre (cx, cy), semi-axes (a, b), rotation t.
struct Ellipse {
    double cx, cy, a, b, t;

    double level(double x, double y) const
    {
        const double dx = x - cx, dy = y - cy;
        const double u = dx * std::cos(t) + dy * std::sin(t);
        const double v = -dx * std::sin(t) + dy * std::cos(t);
        return (u * u) / (a * a) + (v * v) / (b * b);
    }
    bool contains(double x, double y) const { return level(x, y) <= 1.0; }
};

constexpr double kIntensity[4] = {0.15, 0.70, 0.38, 0.82};
constexpr double kNoiseSigma = 0.05;

} // namespace

SyntheticSample synthesize_sample(int size, std::uint64_t seed)
{
    Rng rng(seed);
    auto u = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    const double s = size;

    const double cx = s * u(0.45, 0.58), cy = s * u(0.42, 0.58);
    const double a = s * u(0.085, 0.13);
    const double b = a * u(0.8, 1.2);
    const double t = u(0.0, std::numbers::pi);
    const double thick = s * u(0.04, 0.065);
    const Ellipse lv{cx, cy, a, b, t};
    const Ellipse myo{cx, cy, a + thick, b + thick, t};

    const double phi = std::numbers::pi + u(-0.45, 0.45);
    const double rv_a = s * u(0.11, 0.16), rv_b = rv_a * u(0.6, 0.95);
    const double reach = std::max(a, b) + thick + 0.55 * rv_a;
    const Ellipse rv{cx + reach * std::cos(phi), cy + reach * std::sin(phi), rv_a, rv_b, phi + u(-0.3, 0.3)};

    SyntheticSample out;
    out.label = DenseLabel(size, size, 0);
    out.image = GrayImage{size, size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size)};

    const double psi = u(0.0, 2.0 * std::numbers::pi);
    const double slope = u(-0.12, 0.12);
    std::normal_distribution<double> noise(0.0, kNoiseSigma);
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            const double px = x + 0.5, py = y + 0.5;
            std::uint8_t cls = 0;
            if (lv.contains(px, py)) {
                cls = 3;
            } else if (myo.contains(px, py)) {
                cls = 2;
            } else if (rv.contains(px, py)) {
                cls = 1;
            }
            out.label.at(y, x) = cls;
            const double ramp = ((px - s / 2) * std::cos(psi) + (py - s / 2) * std::sin(psi)) / s;
            const double v = kIntensity[cls] + slope * ramp * 2.0 + noise(rng);
            out.image.pixels[static_cast<std::size_t>(y) * size + x] =
                static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
    }
    return out;
}

SyntheticOptions split_counts(int n)
{
    SyntheticOptions o;
    if (n < 1) {
        throw ConfigError("need at least one sample");
    }
    o.n_val = n >= 3 ? std::max(1, n / 10) : 0;
    o.n_test = n >= 3 ? std::max(1, n / 10) : 0;
    o.n_train = n - o.n_val - o.n_test;
    return o;
}

DatasetIndex gen_synthetic(const SyntheticOptions& options, const fs::path& out)
{
    if (options.n_train < 0 || options.n_val < 0 || options.n_test < 0 ||
        options.n_train + options.n_val + options.n_test < 1) {
        throw ConfigError("gen_synthetic: need at least one sample");
    }
    if (options.size < 16) {
        throw ConfigError("gen_synthetic: size must be at least 16");
    }
    std::error_code ec;
    for (const char* sub : {"images", "labels", "scribbles", "splits"}) {
        fs::create_directories(out / sub, ec);
        if (ec) {
            throw IoError("cannot create " + (out / sub).string() + ": " + ec.message());
        }
    }
    DatasetIndex index;
    index.root = out;
    const int total = options.n_train + options.n_val + options.n_test;
    for (int i = 0; i < total; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "case%04d", i);
        const std::string id = buf;
        const auto sample = synthesize_sample(options.size, hash_seed(options.seed, id));
        write_pgm(index.image_path(id), sample.image);
        write_pgm(index.label_path(id), to_gray(sample.label));
        if (i < options.n_train) {
            index.train.push_back(id);
            const auto scrib = scribblify(sample.label, options.coverage, scribble_seed(options.seed, id));
            write_pgm(index.scribble_path(id), to_gray(scrib));
        } else if (i < options.n_train + options.n_val) {
            index.val.push_back(id);
        } else {
            index.test.push_back(id);
        }
    }
    write_splits(index);
    return index;
}

// ---------------------------------------------------------------------------
// Thinning and scribbles

std::vector<std::uint8_t> zhang_suen_thin(const std::vector<std::uint8_t>& mask, int height, int width)
{
    std::vector<std::uint8_t> img(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        img[i] = mask[i] ? 1 : 0;
    }
    auto px = [&](int y, int x) -> int {
        return (y < 0 || y >= height || x < 0 || x >= width) ? 0 : img[static_cast<std::size_t>(y) * width + x];
    };
    std::vector<std::size_t> doomed;
    bool changed = true;
    while (changed) {
        changed = false;
        for (int pass = 0; pass < 2; ++pass) {
            doomed.clear();
            for (int y = 0; y < height; ++y) {
                for (int x = 0; x < width; ++x) {
                    if (!px(y, x)) {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    const int p[8] = {px(y - 1, x), px(y - 1, x + 1), px(y, x + 1), px(y + 1, x + 1),
                                      px(y + 1, x), px(y + 1, x - 1), px(y, x - 1), px(y - 1, x - 1)};
                    int b = 0, a = 0;
                    for (int k = 0; k < 8; ++k) {
                        b += p[k];
                        a += (p[k] == 0 && p[(k + 1) % 8] == 1) ? 1 : 0;
                    }
                    if (b < 2 || b > 6 || a != 1) {
                        continue;
                    }
                    const bool cond = pass == 0 ? (p[0] * p[2] * p[4] == 0 && p[2] * p[4] * p[6] == 0)
                                                : (p[0] * p[2] * p[6] == 0 && p[0] * p[4] * p[6] == 0);
                    if (cond) {
                        doomed.push_back(static_cast<std::size_t>(y) * width + x);
                    }
                }
            }
            for (auto i : doomed) {
                img[i] = 0;
            }
            changed = changed || !doomed.empty();
        }
    }
    return img;
}

std::uint64_t scribble_seed(std::uint64_t seed, const std::string& id)
{
    return hash_seed(seed, "scribble:" + id);
}

ScribbleLabel scribblify(const DenseLabel& dense, double coverage, std::uint64_t seed)
{
    if (!(coverage > 0.0 && coverage <= 1.0)) {
        throw ConfigError("scribble coverage must lie in (0, 1], got " + std::to_string(coverage));
    }
    const int h = dense.height, w = dense.width;
    ScribbleLabel out(h, w, kUnlabeled);
    std::set<std::uint8_t> present(dense.data.begin(), dense.data.end());
    for (auto cls : present) {
        Rng rng(mix_seed(seed, cls));
        std::vector<std::uint8_t> mask(dense.size());
        for (std::size_t i = 0; i < mask.size(); ++i) {
            mask[i] = dense.data[i] == cls;
        }
        auto skel = zhang_suen_thin(mask, h, w);
        std::vector<std::size_t> pts;
        for (std::size_t i = 0; i < skel.size(); ++i) {
            if (skel[i]) {
                pts.push_back(i);
            }
        }
        if (pts.empty()) {
            // Thinning can erase tiny blobs (a 2x2 square); fall back to the region itself.
            skel = mask;
            for (std::size_t i = 0; i < skel.size(); ++i) {
                if (skel[i]) {
                    pts.push_back(i);
                }
            }
        }
        const auto target = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(coverage * pts.size())));
        const std::size_t start = pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)];

        // Breadth-first growth along the 8-connected skeleton from the start pixel.
        std::deque<std::size_t> queue{start};
        std::vector<std::uint8_t> taken(skel.size(), 0);
        taken[start] = 1;
        std::size_t kept = 0;
        while (!queue.empty() && kept < target) {
            const std::size_t cur = queue.front();
            queue.pop_front();
            out.data[cur] = cls;
            ++kept;
            const int cy = static_cast<int>(cur / static_cast<std::size_t>(w));
            const int cx = static_cast<int>(cur % static_cast<std::size_t>(w));
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int ny = cy + dy, nx = cx + dx;
                    if ((dy || dx) && ny >= 0 && ny < h && nx >= 0 && nx < w) {
                        const std::size_t ni = static_cast<std::size_t>(ny) * w + nx;
                        if (skel[ni] && !taken[ni]) {
                            taken[ni] = 1;
                            queue.push_back(ni);
                        }
                    }
                }
            }
        }
    }
    return out;
}

void rescribble(const DatasetIndex& index, double coverage, std::uint64_t seed)
{
    fs::create_directories(index.root / "scribbles");
    for (const auto& id : index.train) {
        const auto img = read_pgm(index.label_path(id));
        DenseLabel dense(img.height, img.width);
        dense.data = img.pixels;
        write_pgm(index.scribble_path(id), to_gray(scribblify(dense, coverage, scribble_seed(seed, id))));
    }
}

} // namespace wmu
