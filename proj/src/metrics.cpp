#include "wmu/metrics.hpp"

#include "wmu/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace wmu {

namespace {

void check_shapes(const LabelMap& pred, const LabelMap& gt)
{
    if (pred.height != gt.height || pred.width != gt.width || pred.size() != gt.size()) {
        throw ConfigError("metric inputs differ in size: " + std::to_string(pred.height) + "x" +
                          std::to_string(pred.width) + " vs " + std::to_string(gt.height) + "x" +
                          std::to_string(gt.width));
    }
}

double ratio(double num, double den)
{
    return den == 0.0 ? 1.0 : num / den;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform of a sampled function (lower envelope of parabolas).
void dt_1d(const double* f, double* d, int n, std::vector<int>& v, std::vector<double>& z)
{
    int k = 0;
    int first = 0;
    while (first < n && f[first] == kInf) {
        ++first;
    }
    if (first == n) {
        std::fill(d, d + n, kInf);
        return;
    }
    v[0] = first;
    z[0] = -kInf;
    z[1] = kInf;
    for (int q = first + 1; q < n; ++q) {
        if (f[q] == kInf) {
            continue;
        }
        double s = 0;
        while (true) {
            const int p = v[static_cast<std::size_t>(k)];
            s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * (q - p));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
            } else {
                break;
            }
        }
        ++k;
        v[static_cast<std::size_t>(k)] = q;
        z[static_cast<std::size_t>(k)] = s;
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[static_cast<std::size_t>(k) + 1] < q) {
            ++k;
        }
        const int p = v[static_cast<std::size_t>(k)];
        d[q] = double(q - p) * (q - p) + f[p];
    }
}

std::vector<double> directed_distances(const std::vector<std::pair<int, int>>& from, const std::vector<double>& sq_to,
                                       int width)
{
    std::vector<double> out;
    out.reserve(from.size());
    for (const auto& [y, x] : from) {
        out.push_back(std::sqrt(sq_to[static_cast<std::size_t>(y) * width + x]));
    }
    return out;
}

std::vector<std::uint8_t> mark(const std::vector<std::pair<int, int>>& pts, int height, int width)
{
    std::vector<std::uint8_t> m(static_cast<std::size_t>(height) * width, 0);
    for (const auto& [y, x] : pts) {
        m[static_cast<std::size_t>(y) * width + x] = 1;
    }
    return m;
}

void put_row(std::ostringstream& os, const std::string& id, const std::string& cls, const ClassMetrics& m)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", id.c_str(), cls.c_str(), m.dice,
                  m.acc, m.pre, m.sen, m.spe, m.hd95, m.asd);
    os << buf;
}

ClassMetrics average(const std::vector<ClassMetrics>& rows, int cls)
{
    ClassMetrics m;
    m.cls = cls;
    if (rows.empty()) {
        return m;
    }
    for (const auto& r : rows) {
        m.dice += r.dice;
        m.acc += r.acc;
        m.pre += r.pre;
        m.sen += r.sen;
        m.spe += r.spe;
        m.hd95 += r.hd95;
        m.asd += r.asd;
    }
    const double n = static_cast<double>(rows.size());
    m.dice /= n;
    m.acc /= n;
    m.pre /= n;
    m.sen /= n;
    m.spe /= n;
    m.hd95 /= n;
    m.asd /= n;
    return m;
}

} // namespace

ConfusionMetrics confusion_metrics(const LabelMap& pred, const LabelMap& gt, int k)
{
    check_shapes(pred, gt);
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred.data[i] == k;
        const bool g = gt.data[i] == k;
        tp += p && g;
        fp += p && !g;
        fn += !p && g;
        tn += !p && !g;
    }
    ConfusionMetrics m;
    m.dice = ratio(2 * tp, 2 * tp + fp + fn);
    m.acc = ratio(tp + tn, tp + tn + fp + fn);
    m.pre = ratio(tp, tp + fp);
    m.sen = ratio(tp, tp + fn);
    m.spe = ratio(tn, tn + fp);
    return m;
}

std::vector<std::pair<int, int>> boundary_pixels(const LabelMap& label, int k)
{
    std::vector<std::pair<int, int>> out;
    const auto in = [&](int y, int x) {
        return y >= 0 && y < label.height && x >= 0 && x < label.width && label.at(y, x) == k;
    };
    for (int y = 0; y < label.height; ++y) {
        for (int x = 0; x < label.width; ++x) {
            if (in(y, x) && !(in(y - 1, x) && in(y + 1, x) && in(y, x - 1) && in(y, x + 1))) {
                out.emplace_back(y, x);
            }
        }
    }
    return out;
}

std::vector<double> squared_distance_transform(const std::vector<std::uint8_t>& marked, int height, int width)
{
    const std::size_t total = static_cast<std::size_t>(height) * width;
    if (marked.size() != total) {
        throw ConfigError("distance transform mask size mismatch");
    }
    std::vector<double> grid(total);
    for (std::size_t i = 0; i < total; ++i) {
        grid[i] = marked[i] ? 0.0 : kInf;
    }
    const int longest = std::max(height, width);
    std::vector<int> v(static_cast<std::size_t>(longest));
    std::vector<double> z(static_cast<std::size_t>(longest) + 1);
    std::vector<double> f(static_cast<std::size_t>(longest)), d(static_cast<std::size_t>(longest));
    for (int x = 0; x < width; ++x) {
        for (int y = 0; y < height; ++y) {
            f[static_cast<std::size_t>(y)] = grid[static_cast<std::size_t>(y) * width + x];
        }
        dt_1d(f.data(), d.data(), height, v, z);
        for (int y = 0; y < height; ++y) {
            grid[static_cast<std::size_t>(y) * width + x] = d[static_cast<std::size_t>(y)];
        }
    }
    for (int y = 0; y < height; ++y) {
        double* row = grid.data() + static_cast<std::size_t>(y) * width;
        std::copy(row, row + width, f.begin());
        dt_1d(f.data(), row, width, v, z);
    }
    return grid;
}

SurfaceDistances hd95_asd(const LabelMap& pred, const LabelMap& gt, int k)
{
    check_shapes(pred, gt);
    const auto bp = boundary_pixels(pred, k);
    const auto bg = boundary_pixels(gt, k);
    if (bp.empty() && bg.empty()) {
        return {};
    }
    if (bp.empty() || bg.empty()) {
        const double diag = std::hypot(double(pred.height), double(pred.width));
        return {diag, diag};
    }
    const int h = pred.height, w = pred.width;
    auto dists = directed_distances(bp, squared_distance_transform(mark(bg, h, w), h, w), w);
    const auto back = directed_distances(bg, squared_distance_transform(mark(bp, h, w), h, w), w);
    dists.insert(dists.end(), back.begin(), back.end());

    SurfaceDistances out;
    double sum = 0;
    for (double d : dists) {
        sum += d;
    }
    out.asd = sum / static_cast<double>(dists.size());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(dists.size())));
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(rank - 1), dists.end());
    out.hd95 = dists[rank - 1];
    return out;
}

ClassMetrics class_metrics(const LabelMap& pred, const LabelMap& gt, int k)
{
    const auto c = confusion_metrics(pred, gt, k);
    const auto s = hd95_asd(pred, gt, k);
    return {k, c.dice, c.acc, c.pre, c.sen, c.spe, s.hd95, s.asd};
}

std::string MetricsReport::to_csv() const
{
    std::ostringstream os;
    os << "id,class,dice,acc,pre,sen,spe,hd95,asd\n";
    for (const auto& s : samples) {
        for (const auto& c : s.classes) {
            put_row(os, s.id, std::to_string(c.cls), c);
        }
    }
    for (const auto& c : class_means) {
        put_row(os, "mean", std::to_string(c.cls), c);
    }
    put_row(os, "mean", "all", mean);
    for (const auto& [tag, m] : extra) {
        put_row(os, "mean:" + tag, "all", m);
    }
    return os.str();
}

MetricsReport summarize_predictions(const std::vector<std::string>& ids, const std::vector<LabelMap>& preds,
                                    const std::vector<LabelMap>& gts, int num_classes)
{
    if (ids.size() != preds.size() || preds.size() != gts.size()) {
        throw ConfigError("summarize_predictions: ids, predictions and labels differ in count");
    }
    MetricsReport report;
    for (int k = 1; k < num_classes; ++k) {
        report.classes.push_back(k);
    }
    std::vector<std::vector<ClassMetrics>> per_class(report.classes.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        SampleMetrics sm{ids[i], {}};
        for (std::size_t c = 0; c < report.classes.size(); ++c) {
            sm.classes.push_back(class_metrics(preds[i], gts[i], report.classes[c]));
            per_class[c].push_back(sm.classes.back());
        }
        report.samples.push_back(std::move(sm));
    }
    for (std::size_t c = 0; c < report.classes.size(); ++c) {
        report.class_means.push_back(average(per_class[c], report.classes[c]));
    }
    report.mean = average(report.class_means, 0);
    return report;
}

double mean_foreground_dice(const std::vector<LabelMap>& preds, const std::vector<LabelMap>& gts, int num_classes)
{
    if (preds.size() != gts.size() || preds.empty() || num_classes < 2) {
        throw ConfigError("mean_foreground_dice: need matching non-empty prediction and label lists");
    }
    double sum = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (int k = 1; k < num_classes; ++k) {
            sum += confusion_metrics(preds[i], gts[i], k).dice;
        }
    }
    return sum / (static_cast<double>(preds.size()) * (num_classes - 1));
}

} // namespace wmu
