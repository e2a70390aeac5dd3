#pragma once

#include "wmu/backbones.hpp"
#include "wmu/checkpoint.hpp"
#include "wmu/config.hpp"
#include "wmu/data.hpp"
#include "wmu/losses.hpp"
#include "wmu/metrics.hpp"

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace wmu {

using Network = SegNetwork<float>;

/// Momentum buffers congruent to one network's parameters.
struct SgdState {
    std::vector<TensorF> velocity;
};

/// v = momentum * v + (g + weight_decay * p); p -= lr * v.
/// Throws NumericError naming the first parameter with a non-finite gradient.
/// Parameters without a gradient buffer are treated as having zero gradient.
void sgd_step(const std::vector<Var<float>>& params, SgdState& state, double lr, double momentum,
              double weight_decay);

/// lr0 * (1 - iter / iterations)^power, iter counted from 0.
double poly_lr(const TrainConfig& cfg, int iter);

/// Images (N, 1, S, S) with one label per pixel (N*S*S, kUnlabeled allowed).
struct Batch {
    TensorF images;
    std::vector<std::uint8_t> labels;
};

struct RunState {
    int iteration = 0;
    std::vector<SgdState> sgd;
    double best_val_dice = -1.0;
    int best_iteration = 0;
    /// Mixture-weight draws.
    Rng rng;
    /// Batch selection and augmentation, separate so the baseline sees the
    /// same batches as the triple.
    Rng data_rng;
    std::vector<std::size_t> order;
    std::size_t cursor = 0;
    std::vector<LossBreakdown> history;
};

RunState init_run_state(const std::vector<Network>& nets, std::uint64_t seed);

/// One joint update. Three networks: softmax, one mixture draw, pseudo label,
/// pce + dice per network, SGD per network. One network: pce only.
/// Throws NumericError on a non-finite loss.
LossBreakdown train_iteration(std::vector<Network>& nets, const Batch& batch, RunState& state,
                              const TrainConfig& cfg);

std::vector<Network> build_networks(const TrainConfig& cfg);

/// Softmax probabilities without recording a graph.
TensorF predict_probs(const Network& net, const TensorF& images);
/// Per-pixel argmax of the equal-weight mean of the members' probabilities,
/// one map per image.
std::vector<LabelMap> predict_labels(const std::vector<const Network*>& nets, const TensorF& images);

/// Metrics of the equal-weight ensemble on a dense-labelled split. With more
/// than one member, each member's overall mean is appended as an extra row.
MetricsReport evaluate(const std::vector<const Network*>& nets, const DatasetIndex& index, Split split);

/// Checkpoint tensors: "net<i>/<param>" for each member, "meta/net<i>" with the
/// architecture, "meta/best_val_dice" and "meta/best_iteration".
std::vector<NamedTensor> pack_checkpoint(const std::vector<Network>& nets, double best_val_dice, int best_iteration);

struct LoadedCheckpoint {
    std::vector<Network> nets;
    double best_val_dice = 0.0;
    int best_iteration = 0;
};

LoadedCheckpoint load_networks(const std::filesystem::path& path);

/// In-memory copy of one split: images and either scribbles or dense labels.
struct SplitData {
    std::vector<std::string> ids;
    std::vector<TensorF> images;
    std::vector<LabelMap> labels;
};

/// Train split: scribble files when present, otherwise scribbles derived from
/// the dense labels at `cfg.coverage`. Val/test: dense labels.
SplitData load_split(const DatasetIndex& index, Split split, const TrainConfig& cfg);

/// Stacks the chosen samples, applying the same random flip / rotation to
/// image and label when `augment` is set.
Batch make_batch(const SplitData& data, const std::vector<std::size_t>& picks, bool augment, Rng& rng);

/// Next batch_size training indices: an epoch-wise shuffle drawn from state.data_rng.
std::vector<std::size_t> next_picks(RunState& state, std::size_t n_samples, int batch_size);

struct RunResult {
    std::filesystem::path dir;
    double best_val_dice = 0.0;
    int best_iteration = 0;
    MetricsReport test_report;
};

/// Trains cfg.backbones (three networks) on the dataset. Writes config.txt,
/// loss.csv, val.csv, best.ckpt and report.csv into `out`.
RunResult fit(const TrainConfig& cfg, const DatasetIndex& index, const std::filesystem::path& out,
              std::ostream* log = nullptr);

/// Single-network pCE-only baseline with the same schedule and outputs.
RunResult fit_baseline_pce(const TrainConfig& cfg, const DatasetIndex& index, const std::filesystem::path& out,
                           std::ostream* log = nullptr);

/// Worker threads for per-network work, from WMU_THREADS (default 1).
int worker_threads();

} // namespace wmu
