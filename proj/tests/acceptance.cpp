// One PASS/FAIL line per acceptance criterion.
//
//   wmu_acceptance                 every criterion except `directional`
//   wmu_acceptance all             every criterion
//   wmu_acceptance <name>...       the named criteria
//
// Unit-suite criteria (gradient, oracle, mixer) run the matching doctest cases
// from the unit test binaries in WMU_TEST_BIN_DIR. The rest train and measure here.

#include "wmu/data.hpp"
#include "wmu/mixer.hpp"
#include "wmu/random.hpp"
#include "wmu/trainer.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

using namespace wmu;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4)
{
    std::ostringstream os;
    os.setf(std::ios::fixed);
    os.precision(prec);
    os << v;
    return os.str();
}

fs::path scratch(const std::string& tag)
{
    const auto p = fs::temp_directory_path() / ("wmu_accept_" + tag + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

// ---------------------------------------------------------------------------
// Unit-suite criteria

struct SuitePart {
    std::string binary;
    std::string filter;
};

std::string capture(const std::string& cmd, int& status)
{
    std::string out;
    FILE* pipe = ::popen(cmd.c_str(), "r");
    if (!pipe) {
        status = -1;
        return out;
    }
    std::array<char, 4096> buf{};
    while (std::fgets(buf.data(), buf.size(), pipe)) {
        out += buf.data();
    }
    status = ::pclose(pipe);
    return out;
}

// Runs each part; fails if a binary fails or a filter selects nothing.
Outcome run_suite(const std::vector<SuitePart>& parts, double budget_s)
{
    const auto t0 = Clock::now();
    int cases = 0;
    for (const auto& part : parts) {
        const auto bin = fs::path(WMU_TEST_BIN_DIR) / part.binary;
        const auto filter = part.filter.empty() ? std::string() : " '-tc=" + part.filter + "'";
        int status = 0;
        const auto listing = capture(bin.string() + " --count" + filter + " 2>&1", status);
        const auto at = listing.find("current filters: ");
        const int n = at == std::string::npos ? 0 : std::atoi(listing.c_str() + at + 17);
        if (status != 0 || n == 0) {
            return {false, part.binary + " selected no cases for '" + part.filter + "'"};
        }
        cases += n;
        const auto log = capture(bin.string() + filter + " 2>&1", status);
        if (status != 0) {
            std::cerr << log;
            return {false, part.binary + " failed"};
        }
    }
    const double secs = seconds_since(t0);
    return {secs < budget_s, std::to_string(cases) + " cases passed in " + fmt(secs, 1) + " s (budget " +
                                 fmt(budget_s, 0) + " s)"};
}

Outcome gradient_suite()
{
    return run_suite({{"test_tensor_core", "grad_check:*"},
                      {"test_blocks", "*gradient check*"},
                      {"test_losses", "*gradient matches finite differences*"},
                      {"test_backbones", "end-to-end gradient check*"}},
                     300.0);
}

Outcome oracle_suite()
{
    return run_suite({{"test_tensor_core", "*oracle*"},
                      {"test_losses", "*loop reference on 20 seeds*"},
                      {"test_metrics", "*references on 20 seeds*,*brute force*,*match the reference*"}},
                     600.0);
}

Outcome mixer_suite()
{
    return run_suite({{"test_mixer", ""}}, 600.0);
}

// ---------------------------------------------------------------------------
// Overfit smoke

Outcome overfit_smoke()
{
    const auto t0 = Clock::now();
    TrainConfig cfg;
    cfg.iterations = 500;
    cfg.batch_size = 4;
    cfg.seed = 0;
    auto nets = build_networks(cfg);
    auto state = init_run_state(nets, cfg.seed);

    Batch batch;
    batch.images = TensorF({4, 1, cfg.image_size, cfg.image_size});
    std::vector<LabelMap> gts;
    const auto plane = static_cast<std::size_t>(cfg.image_size) * cfg.image_size;
    for (int i = 0; i < 4; ++i) {
        const auto s = synthesize_sample(cfg.image_size, mix_seed(2024, static_cast<std::uint64_t>(i)));
        const auto img = to_tensor(s.image);
        std::copy(img.values().begin(), img.values().end(), batch.images.values().begin() + i * plane);
        batch.labels.insert(batch.labels.end(), s.label.data.begin(), s.label.data.end());
        gts.push_back(s.label);
    }
    for (int it = 0; it < cfg.iterations; ++it) {
        train_iteration(nets, batch, state, cfg);
    }

    bool pass = true;
    std::string detail = "train dice";
    for (const auto& net : nets) {
        const double d = mean_foreground_dice(predict_labels({&net}, batch.images), gts, cfg.num_classes);
        pass = pass && d > 0.95;
        detail += " " + to_string(net.kind()) + "=" + fmt(d);
    }
    const double ens = mean_foreground_dice(predict_labels({&nets[0], &nets[1], &nets[2]}, batch.images), gts,
                                            cfg.num_classes);
    pass = pass && ens > 0.95;
    const double secs = seconds_since(t0);
    pass = pass && secs < 600.0;
    return {pass, detail + " ensemble=" + fmt(ens) + " (> 0.95), " + fmt(secs, 1) + " s (< 600 s)"};
}

// ---------------------------------------------------------------------------
// Training-based criteria

DatasetIndex corpus(const fs::path& root, int n_train, int n_val, int n_test, double coverage)
{
    SyntheticOptions o;
    o.n_train = n_train;
    o.n_val = n_val;
    o.n_test = n_test;
    o.coverage = coverage;
    o.seed = 0;
    return gen_synthetic(o, root);
}

double median3(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

Outcome directional()
{
    const auto t0 = Clock::now();
    const auto root = scratch("directional");
    const auto index = corpus(root / "data", 200, 20, 50, 0.5);
    std::vector<double> triple, baseline;
    std::string detail;
    for (std::uint64_t seed : {0, 1, 2}) {
        TrainConfig cfg;
        cfg.seed = seed;
        cfg.iterations = 2000;
        cfg.batch_size = 4;
        cfg.coverage = 0.5;
        const auto tag = "seed" + std::to_string(seed);
        const auto t = fit(cfg, index, root / ("triple_" + tag)).test_report.mean.dice;
        cfg.backbones = {BackboneKind::Cnn};
        const auto b = fit_baseline_pce(cfg, index, root / ("baseline_" + tag)).test_report.mean.dice;
        triple.push_back(t);
        baseline.push_back(b);
        detail += " s" + std::to_string(seed) + ":" + fmt(t) + "/" + fmt(b);
        std::cerr << "directional seed " << seed << ": triple " << t << " baseline " << b << "\n";
    }
    const double mt = median3(triple), mb = median3(baseline), secs = seconds_since(t0);
    fs::remove_all(root);
    return {mt >= mb + 0.02 && secs < 7200.0, "median ensemble " + fmt(mt) + " vs baseline " + fmt(mb) +
                                                  " (need +0.02), triple/baseline per seed" + detail + ", " +
                                                  fmt(secs / 60.0, 1) + " min (< 120)"};
}

std::vector<std::string> row_keys(const std::string& csv, bool& finite)
{
    std::vector<std::string> keys;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    keys.push_back(line);
    while (std::getline(in, line)) {
        std::istringstream row(line);
        std::string id, cls, cell;
        std::getline(row, id, ',');
        std::getline(row, cls, ',');
        keys.push_back(id.rfind("mean:", 0) == 0 ? "mean:member," + cls : id + "," + cls);
        while (std::getline(row, cell, ',')) {
            finite = finite && std::isfinite(std::stod(cell));
        }
    }
    return keys;
}

Outcome ablation()
{
    const auto t0 = Clock::now();
    const auto root = scratch("ablation");
    const auto index = corpus(root / "data", 200, 20, 50, 0.5);
    std::vector<std::vector<std::string>> layouts;
    bool pass = true;
    std::string detail;
    for (const char* list : {"cnn,cnn,cnn", "attn,attn,attn", "ssm,ssm,ssm", "cnn,attn,ssm"}) {
        TrainConfig cfg;
        cfg.iterations = 200;
        cfg.val_every = 100;
        cfg.backbones = parse_backbone_list(list);
        const auto dir = root / std::string(list);
        const auto result = fit(cfg, index, dir);
        bool finite = true;
        const auto csv = slurp(dir / "report.csv");
        layouts.push_back(row_keys(csv, finite));
        pass = pass && finite && !csv.empty();
        detail += std::string(" ") + list + "=" + fmt(result.test_report.mean.dice);
    }
    for (const auto& l : layouts) {
        pass = pass && l == layouts.front();
    }
    fs::remove_all(root);
    return {pass, "four report.csv with matching rows, test dice" + detail + ", " +
                      fmt(seconds_since(t0) / 60.0, 1) + " min"};
}

Outcome determinism()
{
    const auto root = scratch("determinism");
    const auto index = corpus(root / "data", 16, 4, 4, 0.5);
    TrainConfig cfg;
    cfg.iterations = 60;
    cfg.val_every = 20;
    cfg.seed = 11;
    fit(cfg, index, root / "a");
    fit(cfg, index, root / "b");
    bool pass = true;
    std::string detail;
    for (const char* name : {"loss.csv", "best.ckpt"}) {
        const auto a = slurp(root / "a" / name), b = slurp(root / "b" / name);
        const bool same = !a.empty() && a == b;
        pass = pass && same;
        detail += std::string(" ") + name + (same ? " identical" : " differs") + " (" + std::to_string(a.size()) +
                  " B)";
    }
    fs::remove_all(root);
    return {pass, "two seeded runs, threads=" + std::to_string(worker_threads()) + ":" + detail};
}

// Random blobs, stripes and synthetic cardiac masks of assorted sizes.
DenseLabel random_mask(Rng& rng)
{
    std::uniform_int_distribution<int> kind_d(0, 2), size_d(8, 64), cls_d(0, 3);
    const int kind = kind_d(rng);
    if (kind == 0) {
        const int s = std::max(16, size_d(rng));
        return synthesize_sample(s, rng()).label;
    }
    const int h = size_d(rng), w = size_d(rng);
    DenseLabel d(h, w, 0);
    if (kind == 1) {
        std::uniform_int_distribution<int> n_d(1, 6);
        const int n = n_d(rng);
        for (int i = 0; i < n; ++i) {
            std::uniform_int_distribution<int> yd(0, h - 1), xd(0, w - 1), rd(0, std::max(1, std::min(h, w) / 3));
            const int cy = yd(rng), cx = xd(rng), r = rd(rng);
            const auto c = static_cast<std::uint8_t>(cls_d(rng));
            for (int y = 0; y < h; ++y) {
                for (int x = 0; x < w; ++x) {
                    if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) {
                        d.at(y, x) = c;
                    }
                }
            }
        }
    } else {
        std::uniform_int_distribution<int> pd(1, 5);
        const int period = pd(rng);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                d.at(y, x) = static_cast<std::uint8_t>(((x + y) / period) % 4);
            }
        }
    }
    return d;
}

Outcome scribble_subset()
{
    Rng rng(mix_seed(99, 0));
    std::uniform_real_distribution<double> cov_d(0.0, 1.0);
    int bad = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const auto mask = random_mask(rng);
        const double coverage = std::max(1e-3, 1.0 - cov_d(rng));
        const auto s = scribblify(mask, coverage, rng());
        std::set<std::uint8_t> hit;
        bool ok = s.height == mask.height && s.width == mask.width;
        for (std::size_t i = 0; ok && i < s.size(); ++i) {
            if (s.data[i] != kUnlabeled) {
                ok = s.data[i] == mask.data[i];
                hit.insert(s.data[i]);
            }
        }
        ok = ok && hit == std::set<std::uint8_t>(mask.data.begin(), mask.data.end());
        bad += ok ? 0 : 1;
    }
    return {bad == 0, std::to_string(1000 - bad) + "/1000 triples valid"};
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria()
{
    static const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
        {"gradient", gradient_suite}, {"oracle", oracle_suite},   {"mixer", mixer_suite},
        {"overfit", overfit_smoke},   {"directional", directional}, {"ablation", ablation},
        {"determinism", determinism}, {"scribble", scribble_subset},
    };
    return all;
}

} // namespace

int main(int argc, char** argv)
{
    std::vector<std::string> wanted(argv + 1, argv + argc);
    if (wanted.empty()) {
        for (const auto& [name, fn] : criteria()) {
            if (name != "directional") {
                wanted.push_back(name);
            }
        }
    } else if (wanted.size() == 1 && wanted[0] == "all") {
        wanted.clear();
        for (const auto& [name, fn] : criteria()) {
            wanted.push_back(name);
        }
    }
    int failures = 0;
    for (const auto& name : wanted) {
        const auto it = std::find_if(criteria().begin(), criteria().end(),
                                     [&](const auto& c) { return c.first == name; });
        if (it == criteria().end()) {
            std::cerr << "unknown criterion: " << name << "\n";
            return 1;
        }
        Outcome out;
        try {
            out = it->second();
        } catch (const std::exception& e) {
            out = {false, std::string("error: ") + e.what()};
        }
        std::cout << (out.pass ? "PASS " : "FAIL ") << name << ": " << out.detail << std::endl;
        failures += out.pass ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}
