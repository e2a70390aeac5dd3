#include "wmu/trainer.hpp"

#include "wmu/mixer.hpp"
#include "wmu/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <thread>

namespace wmu {

namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kMixSalt = 0x6d6978;
constexpr std::uint64_t kDataSalt = 0x64617461;

// Runs fn(i) for i < n, on up to worker_threads() threads.
template <typename Fn>
void for_each_net(std::size_t n, Fn&& fn)
{
    const auto threads = static_cast<std::size_t>(worker_threads());
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    for (std::size_t start = 0; start < n; start += threads) {
        std::vector<std::thread> pool;
        for (std::size_t i = start; i < std::min(n, start + threads); ++i) {
            pool.emplace_back([&, i] {
                try {
                    fn(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

TensorF stack_images(const std::vector<TensorF>& images)
{
    const auto s = images.front().dim(-1);
    TensorF out({static_cast<std::int64_t>(images.size()), 1, s, s});
    auto* dst = out.data();
    for (const auto& img : images) {
        std::copy(img.data(), img.data() + img.numel(), dst);
        dst += img.numel();
    }
    return out;
}

// (y, x) -> source coordinates after k quarter turns and an optional flip.
std::pair<int, int> source_pixel(int y, int x, int s, int turns, bool flip)
{
    if (flip) {
        x = s - 1 - x;
    }
    for (int t = 0; t < turns; ++t) {
        const int ny = x;
        const int nx = s - 1 - y;
        y = ny;
        x = nx;
    }
    return {y, x};
}

std::string fmt(double x)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.8g", x);
    return buf;
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
}

std::vector<const Network*> pointers(const std::vector<Network>& nets)
{
    std::vector<const Network*> out;
    for (const auto& n : nets) {
        out.push_back(&n);
    }
    return out;
}

// Class map of a one-image pseudo label.
LabelMap single_map(const PseudoLabel& lbl)
{
    LabelMap m(static_cast<int>(lbl.height()), static_cast<int>(lbl.width()));
    m.data = lbl.classes();
    return m;
}

struct ValScores {
    std::vector<double> member;
    double ensemble = 0.0;
};

ValScores validate_dice(const std::vector<Network>& nets, const SplitData& val, int num_classes)
{
    ValScores out;
    std::vector<std::vector<TensorF>> probs(nets.size());
    for_each_net(nets.size(), [&](std::size_t i) {
        for (const auto& img : val.images) {
            probs[i].push_back(predict_probs(nets[i], stack_images({img})));
        }
    });
    std::vector<LabelMap> ensemble;
    for (std::size_t i = 0; i < nets.size(); ++i) {
        std::vector<LabelMap> preds;
        for (const auto& p : probs[i]) {
            preds.push_back(single_map(argmax_label(p)));
        }
        out.member.push_back(mean_foreground_dice(preds, val.labels, num_classes));
    }
    for (std::size_t s = 0; s < val.images.size(); ++s) {
        TensorF mean(probs[0][s].shape());
        for (std::size_t i = 0; i < nets.size(); ++i) {
            for (std::int64_t j = 0; j < mean.numel(); ++j) {
                mean[j] += probs[i][s][j];
            }
        }
        ensemble.push_back(single_map(argmax_label(mean)));
    }
    out.ensemble = mean_foreground_dice(ensemble, val.labels, num_classes);
    return out;
}

RunResult run_training(const TrainConfig& cfg, const DatasetIndex& index, const fs::path& out, std::ostream* log)
{
    cfg.validate();
    const auto train = load_split(index, Split::Train, cfg);
    const auto val = load_split(index, Split::Val, cfg);
    if (train.ids.empty() || val.ids.empty() || index.test.empty()) {
        throw DataError("dataset " + index.root.string() + " needs non-empty train, val and test splits");
    }
    fs::create_directories(out);
    write_text(out / "config.txt", cfg.to_text());

    auto nets = build_networks(cfg);
    auto state = init_run_state(nets, cfg.seed);
    std::string loss_csv = "iter,pce1,pce2,pce3,dice1,dice2,dice3,total\n";
    std::string val_csv = "iter,dice1,dice2,dice3,ensemble\n";

    for (int it = 0; it < cfg.iterations; ++it) {
        const auto picks = next_picks(state, train.ids.size(), cfg.batch_size);
        const auto batch = make_batch(train, picks, cfg.augment, state.data_rng);
        const auto lb = train_iteration(nets, batch, state, cfg);
        loss_csv += std::to_string(state.iteration);
        for (std::size_t i = 0; i < 3; ++i) {
            loss_csv += "," + fmt(i < lb.pce.size() ? lb.pce[i] : 0.0);
        }
        for (std::size_t i = 0; i < 3; ++i) {
            loss_csv += "," + fmt(i < lb.dice.size() ? lb.dice[i] : 0.0);
        }
        loss_csv += "," + fmt(lb.total) + "\n";

        if (state.iteration % cfg.val_every == 0 || state.iteration == cfg.iterations) {
            const auto scores = validate_dice(nets, val, cfg.num_classes);
            val_csv += std::to_string(state.iteration);
            for (std::size_t i = 0; i < 3; ++i) {
                val_csv += "," + fmt(i < scores.member.size() ? scores.member[i] : 0.0);
            }
            val_csv += "," + fmt(scores.ensemble) + "\n";
            const bool improved = scores.ensemble > state.best_val_dice;
            if (improved) {
                state.best_val_dice = scores.ensemble;
                state.best_iteration = state.iteration;
                write_checkpoint(out / "best.ckpt", pack_checkpoint(nets, state.best_val_dice, state.best_iteration));
            }
            if (log) {
                *log << "iter " << state.iteration << "/" << cfg.iterations << " loss " << fmt(lb.total)
                     << " val ensemble dice " << fmt(scores.ensemble) << (improved ? " (best)" : "") << std::endl;
            }
        }
    }
    write_text(out / "loss.csv", loss_csv);
    write_text(out / "val.csv", val_csv);

    const auto best = load_networks(out / "best.ckpt");
    RunResult result;
    result.dir = out;
    result.best_val_dice = best.best_val_dice;
    result.best_iteration = best.best_iteration;
    result.test_report = evaluate(pointers(best.nets), index, Split::Test);
    write_text(out / "report.csv", result.test_report.to_csv());
    if (log) {
        *log << "best iteration " << result.best_iteration << ", test mean dice " << fmt(result.test_report.mean.dice)
             << std::endl;
    }
    return result;
}

} // namespace

int worker_threads()
{
    const char* env = std::getenv("WMU_THREADS");
    if (!env || !*env) {
        return 1;
    }
    const int n = std::atoi(env);
    return std::max(1, n);
}

void sgd_step(const std::vector<Var<float>>& params, SgdState& state, double lr, double momentum,
              double weight_decay)
{
    if (state.velocity.size() != params.size()) {
        state.velocity.clear();
        for (const auto& p : params) {
            state.velocity.emplace_back(p.shape());
        }
    }
    for (const auto& p : params) {
        if (!p.has_grad()) {
            continue;
        }
        for (float g : p.grad().values()) {
            if (!std::isfinite(g)) {
                throw NumericError("non-finite gradient in parameter '" + p.name() + "'");
            }
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i];
        auto& v = state.velocity[i];
        if (v.shape() != p.shape()) {
            throw ConfigError("momentum buffer shape mismatch for '" + p.name() + "'");
        }
        const bool has = p.has_grad();
        auto& val = p.mutable_value();
        for (std::int64_t j = 0; j < val.numel(); ++j) {
            const double g = has ? static_cast<double>(p.grad()[j]) : 0.0;
            const double vj = momentum * v[j] + (g + weight_decay * val[j]);
            v[j] = static_cast<float>(vj);
            val[j] = static_cast<float>(val[j] - lr * vj);
        }
    }
}

double poly_lr(const TrainConfig& cfg, int iter)
{
    const double frac = 1.0 - static_cast<double>(iter) / cfg.iterations;
    return cfg.lr0 * std::pow(std::max(frac, 0.0), cfg.lr_decay_power);
}

RunState init_run_state(const std::vector<Network>& nets, std::uint64_t seed)
{
    RunState s;
    s.sgd.resize(nets.size());
    for (std::size_t i = 0; i < nets.size(); ++i) {
        for (const auto& p : nets[i].params()) {
            s.sgd[i].velocity.emplace_back(p.shape());
        }
    }
    s.rng.seed(mix_seed(seed, kMixSalt));
    s.data_rng.seed(mix_seed(seed, kDataSalt));
    return s;
}

std::vector<Network> build_networks(const TrainConfig& cfg)
{
    std::vector<Network> nets;
    for (std::size_t i = 0; i < cfg.backbones.size(); ++i) {
        nets.emplace_back(cfg.arch(cfg.backbones[i]), mix_seed(cfg.seed, i + 1));
    }
    return nets;
}

LossBreakdown train_iteration(std::vector<Network>& nets, const Batch& batch, RunState& state, const TrainConfig& cfg)
{
    if (nets.size() != 1 && nets.size() != 3) {
        throw ConfigError("train_iteration needs one or three networks");
    }
    const double lr = poly_lr(cfg, state.iteration);
    const Var<float> images(batch.images);
    const std::span<const std::uint8_t> labels(batch.labels);

    const auto at_iteration = " at iteration " + std::to_string(state.iteration + 1);

    std::vector<Var<float>> probs(nets.size());
    LossBreakdown lb;
    std::vector<Var<float>> objective(nets.size());
    try {
        for_each_net(nets.size(), [&](std::size_t i) { probs[i] = softmax_channels(nets[i].forward(images)); });
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + at_iteration);
    }
    if (nets.size() == 3) {
        const auto w = sample_mix_weights(state.rng);
        const auto pseudo = mix_pseudo(probs[0].value(), probs[1].value(), probs[2].value(), w);
        lb.pce.resize(3);
        lb.dice.resize(3);
        for_each_net(3, [&](std::size_t i) {
            auto pce = pce_loss(probs[i], labels, cfg.loss_norm);
            auto dice = dice_loss(probs[i], pseudo);
            lb.pce[i] = pce.value()[0];
            lb.dice[i] = dice.value()[0];
            objective[i] = add(pce, dice);
        });
    } else {
        objective[0] = pce_loss(probs[0], labels, cfg.loss_norm);
        lb.pce = {static_cast<double>(objective[0].value()[0])};
        lb.dice = {0.0};
    }
    for (std::size_t i = 0; i < nets.size(); ++i) {
        lb.total += lb.pce[i] + lb.dice[i];
    }
    if (!std::isfinite(lb.total)) {
        throw NumericError("non-finite loss" + at_iteration);
    }
    try {
        for_each_net(nets.size(), [&](std::size_t i) {
            nets[i].zero_grad();
            if (objective[i].requires_grad()) {
                backward(objective[i]);
            }
            sgd_step(nets[i].params(), state.sgd[i], lr, cfg.momentum, cfg.weight_decay);
        });
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + at_iteration);
    }
    ++state.iteration;
    state.history.push_back(lb);
    return lb;
}

TensorF predict_probs(const Network& net, const TensorF& images)
{
    NoGradGuard guard;
    return softmax_channels(net.forward(Var<float>(images))).value();
}

std::vector<LabelMap> predict_labels(const std::vector<const Network*>& nets, const TensorF& images)
{
    if (nets.empty()) {
        throw ConfigError("predict_labels: no networks");
    }
    TensorF mean(Shape{images.dim(0), nets[0]->config().num_classes, images.dim(2), images.dim(3)});
    for (const auto* net : nets) {
        const auto p = predict_probs(*net, images);
        for (std::int64_t j = 0; j < mean.numel(); ++j) {
            mean[j] += p[j];
        }
    }
    const auto lbl = argmax_label(mean);
    const auto h = static_cast<int>(lbl.height()), w = static_cast<int>(lbl.width());
    std::vector<LabelMap> out;
    for (std::int64_t n = 0; n < lbl.batch(); ++n) {
        LabelMap m(h, w);
        const auto begin = lbl.classes().begin() + n * h * w;
        std::copy(begin, begin + h * w, m.data.begin());
        out.push_back(std::move(m));
    }
    return out;
}

MetricsReport evaluate(const std::vector<const Network*>& nets, const DatasetIndex& index, Split split)
{
    if (nets.empty()) {
        throw ConfigError("evaluate: no networks");
    }
    if (split == Split::Train) {
        throw ConfigError("evaluate needs a dense-labelled split (val or test)");
    }
    const auto& arch = nets[0]->config();
    const auto& ids = index.ids(split);
    if (ids.empty()) {
        throw DataError("split " + to_string(split) + " of " + index.root.string() + " is empty");
    }
    std::vector<LabelMap> gts, ens;
    std::vector<std::vector<LabelMap>> members(nets.size() > 1 ? nets.size() : 0);
    for (const auto& id : ids) {
        const auto sample = load_sample(index, id, split, arch.image_size, arch.num_classes);
        const auto img = stack_images({sample.image});
        gts.push_back(sample.label);
        ens.push_back(predict_labels(nets, img).front());
        for (std::size_t i = 0; i < members.size(); ++i) {
            members[i].push_back(predict_labels({nets[i]}, img).front());
        }
    }
    auto report = summarize_predictions(ids, ens, gts, arch.num_classes);
    for (std::size_t i = 0; i < members.size(); ++i) {
        const auto r = summarize_predictions(ids, members[i], gts, arch.num_classes);
        report.extra.emplace_back("net" + std::to_string(i + 1) + "-" + to_string(nets[i]->kind()), r.mean);
    }
    return report;
}

std::vector<NamedTensor> pack_checkpoint(const std::vector<Network>& nets, double best_val_dice, int best_iteration)
{
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < nets.size(); ++i) {
        const auto& a = nets[i].config();
        const std::string prefix = "net" + std::to_string(i + 1);
        out.push_back({"meta/" + prefix,
                       TensorF({7}, {static_cast<float>(static_cast<int>(a.kind)), float(a.image_size),
                                     float(a.num_classes), float(a.width), float(a.patch), float(a.window),
                                     float(a.d_state)})});
        for (const auto& p : nets[i].params()) {
            out.push_back({prefix + "/" + p.name(), p.value()});
        }
    }
    out.push_back({"meta/best_val_dice", TensorF({1}, static_cast<float>(best_val_dice))});
    out.push_back({"meta/best_iteration", TensorF({1}, static_cast<float>(best_iteration))});
    return out;
}

LoadedCheckpoint load_networks(const fs::path& path)
{
    const auto tensors = read_checkpoint(path);
    const auto find = [&](const std::string& name) -> const TensorF* {
        for (const auto& t : tensors) {
            if (t.name == name) {
                return &t.value;
            }
        }
        return nullptr;
    };
    LoadedCheckpoint out;
    for (int i = 1;; ++i) {
        const std::string prefix = "net" + std::to_string(i);
        const auto* meta = find("meta/" + prefix);
        if (!meta) {
            break;
        }
        if (meta->numel() != 7) {
            throw DataError(path.string() + ": malformed meta/" + prefix);
        }
        const auto kind = static_cast<int>((*meta)[0]);
        if (kind < 0 || kind > 2) {
            throw DataError(path.string() + ": unknown backbone kind in meta/" + prefix);
        }
        ArchConfig a;
        a.kind = static_cast<BackboneKind>(kind);
        a.image_size = static_cast<int>((*meta)[1]);
        a.num_classes = static_cast<int>((*meta)[2]);
        a.width = static_cast<int>((*meta)[3]);
        a.patch = static_cast<int>((*meta)[4]);
        a.window = static_cast<int>((*meta)[5]);
        a.d_state = static_cast<int>((*meta)[6]);
        Network net(a, 0);
        for (auto p : net.params()) {
            const auto* t = find(prefix + "/" + p.name());
            if (!t || t->shape() != p.shape()) {
                throw DataError(path.string() + ": missing or mis-shaped tensor " + prefix + "/" + p.name());
            }
            p.mutable_value() = *t;
        }
        out.nets.push_back(std::move(net));
    }
    if (out.nets.empty()) {
        throw DataError(path.string() + ": no networks in checkpoint");
    }
    if (const auto* d = find("meta/best_val_dice")) {
        out.best_val_dice = (*d)[0];
    }
    if (const auto* it = find("meta/best_iteration")) {
        out.best_iteration = static_cast<int>((*it)[0]);
    }
    return out;
}

SplitData load_split(const DatasetIndex& index, Split split, const TrainConfig& cfg)
{
    SplitData out;
    out.ids = index.ids(split);
    for (const auto& id : out.ids) {
        out.images.push_back(load_image(index, id, cfg.image_size));
        if (split != Split::Train) {
            out.labels.push_back(load_dense(index, id, cfg.image_size, cfg.num_classes));
        } else if (fs::exists(index.scribble_path(id))) {
            out.labels.push_back(load_scribble(index, id, cfg.image_size, cfg.num_classes));
        } else {
            const auto dense = load_dense(index, id, cfg.image_size, cfg.num_classes);
            out.labels.push_back(scribblify(dense, cfg.coverage, scribble_seed(cfg.seed, id)));
        }
    }
    return out;
}

std::vector<std::size_t> next_picks(RunState& state, std::size_t n_samples, int batch_size)
{
    std::vector<std::size_t> picks;
    while (picks.size() < static_cast<std::size_t>(batch_size)) {
        if (state.cursor >= state.order.size()) {
            state.order.resize(n_samples);
            for (std::size_t i = 0; i < n_samples; ++i) {
                state.order[i] = i;
            }
            // Fisher-Yates with explicit draws: std::shuffle is not portable across standard libraries.
            for (std::size_t i = n_samples; i > 1; --i) {
                const auto j = static_cast<std::size_t>(state.data_rng() % i);
                std::swap(state.order[i - 1], state.order[j]);
            }
            state.cursor = 0;
        }
        picks.push_back(state.order[state.cursor++]);
    }
    return picks;
}

Batch make_batch(const SplitData& data, const std::vector<std::size_t>& picks, bool augment, Rng& rng)
{
    if (picks.empty()) {
        throw ConfigError("make_batch: empty selection");
    }
    const auto s = static_cast<int>(data.images.front().dim(-1));
    const auto plane = static_cast<std::size_t>(s) * s;
    Batch b;
    b.images = TensorF({static_cast<std::int64_t>(picks.size()), 1, s, s});
    b.labels.resize(picks.size() * plane);
    for (std::size_t n = 0; n < picks.size(); ++n) {
        const auto& img = data.images.at(picks[n]);
        const auto& lbl = data.labels.at(picks[n]);
        int turns = 0;
        bool flip = false;
        if (augment) {
            flip = (rng() & 1U) != 0;
            turns = static_cast<int>(rng() % 4);
        }
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                const auto [sy, sx] = source_pixel(y, x, s, turns, flip);
                const auto dst = n * plane + static_cast<std::size_t>(y) * s + x;
                const auto src = static_cast<std::size_t>(sy) * s + sx;
                b.images[static_cast<std::int64_t>(dst)] = img[static_cast<std::int64_t>(src)];
                b.labels[dst] = lbl.data[src];
            }
        }
    }
    return b;
}

RunResult fit(const TrainConfig& cfg, const DatasetIndex& index, const fs::path& out, std::ostream* log)
{
    if (cfg.backbones.size() != 3) {
        throw ConfigError("fit trains exactly three networks; got " + std::to_string(cfg.backbones.size()));
    }
    return run_training(cfg, index, out, log);
}

RunResult fit_baseline_pce(const TrainConfig& cfg, const DatasetIndex& index, const fs::path& out, std::ostream* log)
{
    if (cfg.backbones.size() != 1) {
        throw ConfigError("the pCE baseline trains exactly one network; got " + std::to_string(cfg.backbones.size()));
    }
    return run_training(cfg, index, out, log);
}

} // namespace wmu
