#include "wmu/cli.hpp"

#include "wmu/trainer.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace wmu {

namespace fs = std::filesystem;

namespace {

// Overlay colours for classes 1..3; further classes cycle.
constexpr std::uint8_t kPalette[][3] = {{230, 60, 60}, {60, 200, 80}, {70, 110, 240}, {240, 200, 40}};

struct TrainFlags {
    std::string data, out, config, backbones;
    std::optional<std::uint64_t> seed;
    std::optional<int> iterations;
};

TrainConfig resolve_config(const TrainFlags& f, bool baseline)
{
    TrainConfig cfg = f.config.empty() ? TrainConfig{} : load_config(f.config);
    if (baseline && f.config.empty()) {
        cfg.backbones = {BackboneKind::Cnn};
    }
    if (!f.backbones.empty()) {
        cfg.backbones = parse_backbone_list(f.backbones);
    } else if (baseline && cfg.backbones.size() == 3) {
        cfg.backbones = {cfg.backbones.front()};
    }
    if (f.seed) {
        cfg.seed = *f.seed;
    }
    if (f.iterations) {
        cfg.iterations = *f.iterations;
        cfg.val_every = std::min(cfg.val_every, cfg.iterations);
    }
    return cfg;
}

void write_file(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

void predict_command(const std::string& ckpt, const std::string& image_path, const std::string& out_dir, bool overlay)
{
    const auto loaded = load_networks(ckpt);
    const auto& arch = loaded.nets.front().config();
    const auto gray = read_pgm(image_path);
    if (gray.height != arch.image_size || gray.width != arch.image_size) {
        throw DataError("image " + image_path + " is " + std::to_string(gray.height) + "x" +
                        std::to_string(gray.width) + " but the checkpoint expects " +
                        std::to_string(arch.image_size) + "x" + std::to_string(arch.image_size));
    }
    std::vector<const Network*> nets;
    for (const auto& n : loaded.nets) {
        nets.push_back(&n);
    }
    const auto img = to_tensor(gray).reshaped({1, 1, gray.height, gray.width});
    const auto pred = predict_labels(nets, img).front();

    fs::create_directories(out_dir);
    const auto stem = fs::path(image_path).stem().string();
    write_pgm(fs::path(out_dir) / (stem + "_pred.pgm"), to_gray(pred));
    if (overlay) {
        std::vector<std::uint8_t> rgb(pred.size() * 3);
        for (std::size_t i = 0; i < pred.size(); ++i) {
            const int c = pred.data[i];
            for (int ch = 0; ch < 3; ++ch) {
                const int base = gray.pixels[i];
                const int tint = c == 0 ? base : kPalette[(c - 1) % 4][ch];
                rgb[i * 3 + static_cast<std::size_t>(ch)] = static_cast<std::uint8_t>((base + tint) / 2);
            }
        }
        write_ppm(fs::path(out_dir) / (stem + "_overlay.ppm"), pred.height, pred.width, rgb);
    }
}

} // namespace

int run_cli(int argc, char** argv)
{
    CLI::App app{"Scribble-supervised segmentation with three co-trained networks"};
    app.require_subcommand(1);

    std::string data, out, ckpt, split = "test", image;
    std::uint64_t seed = 0;
    int n = 20, size = 64;
    std::optional<int> n_train, n_val, n_test;
    double coverage = 0.5;
    bool overlay = false;
    TrainFlags tf;

    auto* gen = app.add_subcommand("gen-data", "Write a synthetic cardiac-like dataset");
    gen->add_option("--out", out, "Dataset directory")->required();
    gen->add_option("--n", n, "Total samples, split 80/10/10")->check(CLI::PositiveNumber);
    gen->add_option("--n-train", n_train, "Train samples (overrides --n split)")->check(CLI::NonNegativeNumber);
    gen->add_option("--n-val", n_val, "Validation samples")->check(CLI::NonNegativeNumber);
    gen->add_option("--n-test", n_test, "Test samples")->check(CLI::NonNegativeNumber);
    gen->add_option("--size", size, "Image side length")->check(CLI::PositiveNumber);
    gen->add_option("--seed", seed, "Random seed");
    gen->add_option("--coverage", coverage, "Scribble coverage of the skeleton");

    auto* scrib = app.add_subcommand("scribblify", "Regenerate train scribbles from dense labels");
    scrib->add_option("--data", data, "Dataset directory")->required();
    scrib->add_option("--coverage", coverage, "Scribble coverage of the skeleton");
    scrib->add_option("--seed", seed, "Random seed");

    const auto add_train_flags = [&](CLI::App* sub) {
        sub->add_option("--data", tf.data, "Dataset directory")->required();
        sub->add_option("--out", tf.out, "Run directory")->required();
        sub->add_option("--config", tf.config, "Flat TOML config");
        sub->add_option("--seed", tf.seed, "Random seed (overrides config)");
        sub->add_option("--backbones", tf.backbones, "Comma-separated backbones, e.g. cnn,attn,ssm");
        sub->add_option("--iterations", tf.iterations, "Iterations (overrides config)")->check(CLI::PositiveNumber);
    };
    auto* train = app.add_subcommand("train", "Co-train three networks");
    add_train_flags(train);
    auto* baseline = app.add_subcommand("train-baseline", "Train one network with pCE only");
    add_train_flags(baseline);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
    eval->add_option("--ckpt", ckpt, "Checkpoint")->required();
    eval->add_option("--data", data, "Dataset directory")->required();
    eval->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));
    eval->add_option("--out", out, "CSV path (stdout when omitted)");

    auto* predict = app.add_subcommand("predict", "Segment one PGM image");
    predict->add_option("--ckpt", ckpt, "Checkpoint")->required();
    predict->add_option("--image", image, "Input PGM")->required();
    predict->add_option("--out", out, "Output directory")->required();
    predict->add_flag("--overlay", overlay, "Also write a colour overlay PPM");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            auto opts = split_counts(n);
            if (n_train || n_val || n_test) {
                opts.n_train = n_train.value_or(0);
                opts.n_val = n_val.value_or(0);
                opts.n_test = n_test.value_or(0);
            }
            opts.size = size;
            opts.seed = seed;
            opts.coverage = coverage;
            gen_synthetic(opts, out);
        } else if (scrib->parsed()) {
            rescribble(load_index(data), coverage, seed);
        } else if (train->parsed()) {
            fit(resolve_config(tf, false), load_index(tf.data), tf.out, &std::cerr);
        } else if (baseline->parsed()) {
            fit_baseline_pce(resolve_config(tf, true), load_index(tf.data), tf.out, &std::cerr);
        } else if (eval->parsed()) {
            const auto loaded = load_networks(ckpt);
            std::vector<const Network*> nets;
            for (const auto& net : loaded.nets) {
                nets.push_back(&net);
            }
            const auto csv = evaluate(nets, load_index(data), parse_split(split)).to_csv();
            if (out.empty()) {
                std::cout << csv;
            } else {
                write_file(out, csv);
            }
        } else if (predict->parsed()) {
            predict_command(ckpt, image, out, overlay);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}

} // namespace wmu
