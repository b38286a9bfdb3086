#include "eventness/roi_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "eventness/errors.hpp"

namespace eventness::roi {

FeatureRegion map_to_feature(const rpn::Box& proposal, std::size_t stride, std::size_t h_f,
                             std::size_t w_f) {
    const double s = static_cast<double>(stride);
    if (proposal.t1 <= 0.0 || proposal.f1 <= 0.0) {
        throw DataError("proposal outside feature map");
    }
    // Upstream clips boxes to the spectrogram, whose ragged tail can extend
    // past the last full stride cell; such regions snap to the nearest covered
    // cell, the same rule that fills empty pooling bins.
    auto lo = [s](double v, std::size_t n) {
        const double cell = std::floor(std::max(0.0, v) / s);
        return std::min(static_cast<std::size_t>(cell), n - 1);
    };
    auto hi = [s](double v, std::size_t n) {
        const double cell = std::ceil(v / s);
        return std::min(static_cast<std::size_t>(std::max(0.0, cell)), n);
    };
    FeatureRegion r;
    r.t0 = lo(proposal.t0, w_f);
    r.t1 = hi(proposal.t1, w_f);
    r.f0 = lo(proposal.f0, h_f);
    r.f1 = hi(proposal.f1, h_f);
    if (r.t1 <= r.t0) r.t1 = r.t0 + 1;
    if (r.f1 <= r.f0) r.f1 = r.f0 + 1;
    return r;
}

ad::Var roi_pool(ad::Tape& tape, ad::Var features, const rpn::Box& proposal, std::size_t stride,
                 std::size_t pool_size) {
    const ad::Tensor& x = tape.value(features);
    if (x.rank() != 3) throw std::invalid_argument("roi_pool: features must be [C,H,W]");
    const std::size_t c_n = x.dim(0), h_f = x.dim(1), w_f = x.dim(2);
    const FeatureRegion r = map_to_feature(proposal, stride, h_f, w_f);
    const std::size_t rh = r.f1 - r.f0, rw = r.t1 - r.t0;
    const std::size_t p = pool_size;

    ad::Tensor out({c_n, p, p});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
    // integer bin boundaries; an empty bin collapses onto its covering cell
    auto bin = [p](std::size_t idx, std::size_t extent) {
        std::size_t lo = idx * extent / p;
        std::size_t hi = (idx + 1) * extent / p;
        if (hi <= lo) hi = lo + 1;
        return std::pair<std::size_t, std::size_t>(lo, hi);
    };
    for (std::size_t c = 0; c < c_n; ++c) {
        for (std::size_t py = 0; py < p; ++py) {
            const auto [y_lo, y_hi] = bin(py, rh);
            for (std::size_t px = 0; px < p; ++px) {
                const auto [x_lo, x_hi] = bin(px, rw);
                double best = -std::numeric_limits<double>::infinity();
                std::size_t best_idx = 0;
                for (std::size_t y = y_lo; y < y_hi; ++y) {
                    for (std::size_t xx = x_lo; xx < x_hi; ++xx) {
                        const std::size_t idx = (c * h_f + r.f0 + y) * w_f + r.t0 + xx;
                        if (x[idx] > best) {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                const std::size_t o = (c * p + py) * p + px;
                out[o] = best;
                (*argmax)[o] = best_idx;
            }
        }
    }
    const std::size_t fi = features.idx;
    return tape.push(std::move(out), [fi, argmax](ad::Tape& t, std::size_t self) {
        const ad::Tensor& g = t.grad_at(self);
        ad::Tensor& gx = t.grad_at(fi);
        for (std::size_t o = 0; o < g.size(); ++o) gx[(*argmax)[o]] += g[o];
    });
}

RoiHead::RoiHead(std::size_t in_c, std::size_t p, std::size_t hid, std::size_t k, Rng& rng)
    : in_channels(in_c),
      pool_size(p),
      hidden(hid),
      num_classes(k),
      fc1_w("roi.fc1.weight", ad::Tensor({hid, in_c * p * p})),
      fc1_b("roi.fc1.bias", ad::Tensor({hid})),
      fc2_w("roi.fc2.weight", ad::Tensor({hid, hid})),
      fc2_b("roi.fc2.bias", ad::Tensor({hid})),
      cls_w("roi.cls.weight", ad::Tensor({k + 1, hid})),
      cls_b("roi.cls.bias", ad::Tensor({k + 1})),
      reg_w("roi.reg.weight", ad::Tensor({4 * k, hid})),
      reg_b("roi.reg.bias", ad::Tensor({4 * k})) {
    ad::init_he_uniform(fc1_w.tensor, in_c * p * p, rng);
    ad::init_he_uniform(fc2_w.tensor, hid, rng);
    ad::init_he_uniform(cls_w.tensor, hid, rng);
    ad::init_he_uniform(reg_w.tensor, hid, rng);
}

std::vector<ad::Parameter*> RoiHead::parameters() {
    return {&fc1_w, &fc1_b, &fc2_w, &fc2_b, &cls_w, &cls_b, &reg_w, &reg_b};
}

RoiOutput classify_and_refine(ad::Tape& tape, ad::Var pooled, RoiHead& head) {
    const ad::Tensor& x = tape.value(pooled);
    const std::size_t want = head.in_channels * head.pool_size * head.pool_size;
    if (x.size() != want) throw std::invalid_argument("classify_and_refine: pooled size mismatch");
    ad::Var flat = tape.reshape(pooled, {want});
    ad::Var h1 = tape.relu(tape.linear(flat, tape.param(head.fc1_w), tape.param(head.fc1_b)));
    ad::Var h2 = tape.relu(tape.linear(h1, tape.param(head.fc2_w), tape.param(head.fc2_b)));
    RoiOutput out;
    out.cls_logits = tape.linear(h2, tape.param(head.cls_w), tape.param(head.cls_b));
    out.reg = tape.linear(h2, tape.param(head.reg_w), tape.param(head.reg_b));
    return out;
}

std::vector<double> posteriors_of(const ad::Tensor& logits) {
    std::vector<double> p(logits.size());
    double mx = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double denom = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        denom += p[i];
    }
    for (double& v : p) v /= denom;
    return p;
}

std::vector<Detection> finalize_detections(const std::vector<rpn::Proposal>& proposals,
                                           const std::vector<std::vector<double>>& posteriors,
                                           const std::vector<std::vector<double>>& reg_deltas,
                                           const std::vector<std::string>& class_names,
                                           double f_extent, double t_extent,
                                           const DetectConfig& cfg) {
    if (proposals.size() != posteriors.size() || proposals.size() != reg_deltas.size()) {
        throw std::invalid_argument("finalize_detections: misaligned inputs");
    }
    const std::size_t k_n = class_names.size();

    std::vector<Detection> all;
    for (std::size_t k = 0; k < k_n; ++k) {
        std::vector<rpn::Box> boxes;
        std::vector<double> scores;
        for (std::size_t i = 0; i < proposals.size(); ++i) {
            const double score = posteriors[i][k];
            if (score < cfg.score_thresh) continue;
            const rpn::BoxDelta d{reg_deltas[i][4 * k + 0], reg_deltas[i][4 * k + 1],
                                  reg_deltas[i][4 * k + 2], reg_deltas[i][4 * k + 3]};
            const rpn::Box b =
                rpn::clip_box(rpn::decode_box(proposals[i].box, d), f_extent, t_extent);
            if (b.width() < cfg.min_side || b.height() < cfg.min_side) continue;
            boxes.push_back(b);
            scores.push_back(score);
        }
        for (std::size_t idx : rpn::nms(boxes, scores, cfg.nms_thresh)) {
            all.push_back(Detection{boxes[idx], class_names[k], scores[idx]});
        }
    }
    std::stable_sort(all.begin(), all.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    return all;
}

}  // namespace eventness::roi
