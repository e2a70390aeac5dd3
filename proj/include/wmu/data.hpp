#pragma once

#include "wmu/labels.hpp"
#include "wmu/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace wmu {

/// 8-bit single-channel raster as stored in a binary PGM.
struct GrayImage {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> pixels;

    bool operator==(const GrayImage&) const = default;
};

/// Binary PGM (P5), maxval 255.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);
GrayImage read_pgm(const std::filesystem::path& path);
/// Binary PPM (P6) from interleaved RGB bytes.
void write_ppm(const std::filesystem::path& path, int height, int width, const std::vector<std::uint8_t>& rgb);

enum class Split { Train, Val, Test };
std::string to_string(Split split);
Split parse_split(std::string_view name);

/// root/{images,labels,scribbles}/<id>.pgm plus root/splits/{train,val,test}.txt.
struct DatasetIndex {
    std::filesystem::path root;
    std::vector<std::string> train;
    std::vector<std::string> val;
    std::vector<std::string> test;

    const std::vector<std::string>& ids(Split split) const;
    std::filesystem::path image_path(const std::string& id) const;
    std::filesystem::path label_path(const std::string& id) const;
    std::filesystem::path scribble_path(const std::string& id) const;
};

/// Reads the split files; throws DataError on overlapping splits or missing files.
DatasetIndex load_index(const std::filesystem::path& root);
void write_splits(const DatasetIndex& index);

/// (1, size, size) image in [0, 1]; bilinear resize when the file differs in size.
TensorF load_image(const DatasetIndex& index, const std::string& id, int size);
/// Nearest-neighbour resized, every value < num_classes.
DenseLabel load_dense(const DatasetIndex& index, const std::string& id, int size, int num_classes);
/// Nearest-neighbour resized, every value < num_classes or kUnlabeled.
ScribbleLabel load_scribble(const DatasetIndex& index, const std::string& id, int size, int num_classes);

struct Sample {
    TensorF image;
    /// Scribbles for the train split, dense labels otherwise.
    LabelMap label;
};

Sample load_sample(const DatasetIndex& index, const std::string& id, Split split, int size, int num_classes);

GrayImage to_gray(const TensorF& image);
TensorF to_tensor(const GrayImage& image);
GrayImage to_gray(const LabelMap& label);

/// Half-pixel-centre bilinear resampling of a gray image.
GrayImage resize_bilinear(const GrayImage& src, int height, int width);
/// Nearest-neighbour resampling; never introduces values absent from `src`.
LabelMap resize_nearest(const LabelMap& src, int height, int width);

struct SyntheticOptions {
    int n_train = 16;
    int n_val = 2;
    int n_test = 2;
    int size = 64;
    std::uint64_t seed = 0;
    double coverage = 0.5;
};

/// One cardiac-like sample: background 0, RV 1, MYO ring 2 around LV disk 3.
struct SyntheticSample {
    GrayImage image;
    DenseLabel label;
};

SyntheticSample synthesize_sample(int size, std::uint64_t seed);

/// Writes a full dataset (images, dense labels, train scribbles, splits) and
/// returns its index. Deterministic in `seed`; sample i uses hash(seed, id).
DatasetIndex gen_synthetic(const SyntheticOptions& options, const std::filesystem::path& out);

/// Splits `n` samples into train/val/test as 80/10/10 (at least one val and
/// test sample when n >= 3).
SyntheticOptions split_counts(int n);

/// Zhang-Suen iterative thinning; pixels outside the image count as background.
std::vector<std::uint8_t> zhang_suen_thin(const std::vector<std::uint8_t>& mask, int height, int width);

/// Sparse scribble from a dense label: per present class, a random 8-connected
/// run over the class skeleton holding about coverage * skeleton length pixels
/// (at least one). Everything else is kUnlabeled. Throws ConfigError unless
/// 0 < coverage <= 1.
ScribbleLabel scribblify(const DenseLabel& dense, double coverage, std::uint64_t seed);

/// Scribble seed of sample `id` in a dataset generated or rescribbled with `seed`.
std::uint64_t scribble_seed(std::uint64_t seed, const std::string& id);

/// Rewrites root/scribbles for the train split from the dense labels.
void rescribble(const DatasetIndex& index, double coverage, std::uint64_t seed);

} // namespace wmu
