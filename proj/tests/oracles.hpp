#pragma once

// Direct loop references used to cross-check the library. Plain vectors and
// doubles only; nothing here calls into the implementation under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;

// (N, C, H, W) input, (O, C, K, K) kernel, (O) bias.
inline Vec conv2d(const Vec& in, int n, int c, int h, int w, const Vec& kernel, int o, int k, const Vec& bias,
                  int stride, int pad, int& oh, int& ow)
{
    oh = (h + 2 * pad - k) / stride + 1;
    ow = (w + 2 * pad - k) / stride + 1;
    Vec out(static_cast<std::size_t>(n) * o * oh * ow, 0.0);
    for (int b = 0; b < n; ++b)
        for (int oc = 0; oc < o; ++oc)
            for (int y = 0; y < oh; ++y)
                for (int x = 0; x < ow; ++x) {
                    double acc = bias.empty() ? 0.0 : bias[oc];
                    for (int ic = 0; ic < c; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int iy = y * stride - pad + ky;
                                const int ix = x * stride - pad + kx;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += in[((b * c + ic) * h + iy) * w + ix] * kernel[((oc * c + ic) * k + ky) * k + kx];
                            }
                    out[((b * o + oc) * oh + y) * ow + x] = acc;
                }
    return out;
}

// y = x W^T + b for a (rows, in) input and (out, in) weight.
inline Vec linear(const Vec& x, int rows, int in, const Vec& wt, int out, const Vec& b)
{
    Vec y(static_cast<std::size_t>(rows) * out);
    for (int r = 0; r < rows; ++r)
        for (int j = 0; j < out; ++j) {
            double acc = b.empty() ? 0.0 : b[j];
            for (int i = 0; i < in; ++i) acc += x[r * in + i] * wt[j * in + i];
            y[r * out + j] = acc;
        }
    return y;
}

// tokens (nw, len, dim); projection weights (dim, dim) with biases (dim).
inline Vec window_attention(const Vec& tok, int nw, int len, int dim, const Vec& wq, const Vec& bq, const Vec& wk,
                            const Vec& bk, const Vec& wv, const Vec& bv, const Vec& wo, const Vec& bo, int heads)
{
    const int rows = nw * len;
    const Vec q = linear(tok, rows, dim, wq, dim, bq);
    const Vec k = linear(tok, rows, dim, wk, dim, bk);
    const Vec v = linear(tok, rows, dim, wv, dim, bv);
    const int dh = dim / heads;
    Vec ctx(static_cast<std::size_t>(rows) * dim, 0.0);
    for (int win = 0; win < nw; ++win)
        for (int hd = 0; hd < heads; ++hd)
            for (int i = 0; i < len; ++i) {
                Vec score(len);
                double mx = -std::numeric_limits<double>::infinity();
                for (int j = 0; j < len; ++j) {
                    double s = 0;
                    for (int e = 0; e < dh; ++e)
                        s += q[(win * len + i) * dim + hd * dh + e] * k[(win * len + j) * dim + hd * dh + e];
                    score[j] = s / std::sqrt(double(dh));
                    mx = std::max(mx, score[j]);
                }
                double z = 0;
                for (int j = 0; j < len; ++j) z += (score[j] = std::exp(score[j] - mx));
                for (int j = 0; j < len; ++j)
                    for (int e = 0; e < dh; ++e)
                        ctx[(win * len + i) * dim + hd * dh + e] += score[j] / z * v[(win * len + j) * dim + hd * dh + e];
            }
    return linear(ctx, rows, dim, wo, dim, bo);
}

// Single sequence: x, delta (L, D); a (D, S); b, c (L, S); d (D).
inline Vec selective_scan(const Vec& x, const Vec& delta, const Vec& a, const Vec& b, const Vec& c, const Vec& d,
                          int len, int dim, int states)
{
    Vec y(static_cast<std::size_t>(len) * dim);
    for (int ch = 0; ch < dim; ++ch)
        for (int s = 0; s < states; ++s) {
            double h = 0;
            for (int t = 0; t < len; ++t) {
                const double dt = delta[t * dim + ch];
                h = std::exp(dt * a[ch * states + s]) * h + dt * b[t * states + s] * x[t * dim + ch];
                y[t * dim + ch] += c[t * states + s] * h;
            }
        }
    for (int t = 0; t < len; ++t)
        for (int ch = 0; ch < dim; ++ch) y[t * dim + ch] += d[ch] * x[t * dim + ch];
    return y;
}

// probs (N, K, H, W) flattened; labels (N, H, W), 255 = unlabeled.
inline double pce(const Vec& probs, const std::vector<std::uint8_t>& labels, int n, int k, int hw, bool mean = true)
{
    double total = 0;
    int count = 0;
    for (int b = 0; b < n; ++b)
        for (int p = 0; p < hw; ++p) {
            const int cls = labels[b * hw + p];
            if (cls == 255) continue;
            total -= std::log(std::max(probs[(b * k + cls) * hw + p], 1e-12));
            ++count;
        }
    if (count == 0) return 0.0;
    return mean ? total / count : total;
}

inline double dice(const Vec& probs, const std::vector<std::uint8_t>& target, int n, int k, int hw)
{
    const double eps = 1e-5;
    double loss = 0;
    for (int cls = 0; cls < k; ++cls) {
        double inter = 0, ps = 0, gs = 0;
        for (int b = 0; b < n; ++b)
            for (int p = 0; p < hw; ++p) {
                const double pv = probs[(b * k + cls) * hw + p];
                const double g = target[b * hw + p] == cls ? 1.0 : 0.0;
                inter += pv * g;
                ps += pv;
                gs += g;
            }
        loss += 1.0 - (2 * inter + eps) / (ps + gs + eps);
    }
    return loss / k;
}

struct Confusion {
    double dice, acc, pre, sen, spe;
};

inline Confusion confusion(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt, int k)
{
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == k && gt[i] == k) tp += 1;
        else if (pred[i] == k) fp += 1;
        else if (gt[i] == k) fn += 1;
        else tn += 1;
    }
    auto r = [](double a, double b) { return b == 0 ? 1.0 : a / b; };
    return {r(2 * tp, 2 * tp + fp + fn), r(tp + tn, tp + tn + fp + fn), r(tp, tp + fp), r(tp, tp + fn), r(tn, tn + fp)};
}

inline std::vector<std::pair<int, int>> boundary(const std::vector<std::uint8_t>& m, int h, int w, int k)
{
    std::vector<std::pair<int, int>> out;
    auto is = [&](int y, int x) { return y >= 0 && y < h && x >= 0 && x < w && m[y * w + x] == k; };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!is(y, x)) continue;
            if (!is(y - 1, x) || !is(y + 1, x) || !is(y, x - 1) || !is(y, x + 1)) out.emplace_back(y, x);
        }
    return out;
}

// All-pairs directed boundary distances, hd95 by sorting, asd by averaging.
inline std::pair<double, double> hd95_asd(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
                                          int h, int w, int k)
{
    const auto bp = boundary(pred, h, w, k);
    const auto bg = boundary(gt, h, w, k);
    if (bp.empty() && bg.empty()) return {0.0, 0.0};
    if (bp.empty() || bg.empty()) {
        const double diag = std::sqrt(double(h) * h + double(w) * w);
        return {diag, diag};
    }
    Vec all;
    auto directed = [&](const auto& from, const auto& to) {
        for (const auto& [y, x] : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const auto& [v, u] : to) best = std::min(best, std::sqrt(double(y - v) * (y - v) + double(x - u) * (x - u)));
            all.push_back(best);
        }
    };
    directed(bp, bg);
    directed(bg, bp);
    double sum = 0;
    for (double d : all) sum += d;
    std::sort(all.begin(), all.end());
    const auto rank = static_cast<std::size_t>(std::ceil(0.95 * all.size()));
    return {all[rank - 1], sum / all.size()};
}

} // namespace oracle
