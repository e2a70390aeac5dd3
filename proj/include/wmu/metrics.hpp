#pragma once

#include "wmu/labels.hpp"

#include <string>
#include <utility>
#include <vector>

namespace wmu {

struct ConfusionMetrics {
    double dice = 1.0;
    double acc = 1.0;
    double pre = 1.0;
    double sen = 1.0;
    double spe = 1.0;
};

/// One-vs-rest similarity measures of class k. Every 0/0 ratio is 1.
ConfusionMetrics confusion_metrics(const LabelMap& pred, const LabelMap& gt, int k);

struct SurfaceDistances {
    double hd95 = 0.0;
    double asd = 0.0;
};

/// Pixels of class k with at least one 4-neighbour outside the class (the
/// image border counts as outside), as (y, x) in raster order.
std::vector<std::pair<int, int>> boundary_pixels(const LabelMap& label, int k);

/// Exact squared Euclidean distance from every pixel to the nearest marked
/// pixel (two-pass lower-envelope transform). Unmarked everywhere -> +inf.
std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& marked, int height, int width);

/// Boundary distances of class k: hd95 is the nearest-rank 95th percentile
/// and asd the mean of the pred->gt and gt->pred nearest-boundary distances
/// taken together. One side empty -> both equal the image diagonal; both empty -> 0.
SurfaceDistances hd95_asd(const LabelMap& pred, const LabelMap& gt, int k);

/// All seven measures of one class.
struct ClassMetrics {
    int cls = 0;
    double dice = 0, acc = 0, pre = 0, sen = 0, spe = 0, hd95 = 0, asd = 0;
};

ClassMetrics class_metrics(const LabelMap& pred, const LabelMap& gt, int k);

struct SampleMetrics {
    std::string id;
    std::vector<ClassMetrics> classes;
};

/// Per-sample, per-class and overall means for the foreground classes.
struct MetricsReport {
    std::vector<int> classes;
    std::vector<SampleMetrics> samples;
    std::vector<ClassMetrics> class_means;
    ClassMetrics mean;
    /// Additional labelled overall means (single ensemble members).
    std::vector<std::pair<std::string, ClassMetrics>> extra;

    /// `id,class,dice,acc,pre,sen,spe,hd95,asd`, 4 decimals; sample rows, then
    /// `mean,<class>` rows, `mean,all`, and `mean:<tag>,all` for each extra.
    std::string to_csv() const;
};

/// Aggregates metrics of predictions against dense ground truth over classes
/// 1..num_classes-1.
MetricsReport summarize_predictions(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                                    const std::vector<LabelMap>& gts, int num_classes);

/// Mean foreground dice only; the cheap selection score used during validation.
double mean_foreground_dice(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes);

} // namespace wmu
