#include "eventness/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "eventness/errors.hpp"

namespace eventness::rpn {

std::vector<Anchor> generate_anchors(std::size_t h_f, std::size_t w_f, std::size_t stride,
                                     const AnchorConfig& cfg) {
    if (h_f < 1 || w_f < 1) throw std::invalid_argument("generate_anchors: empty feature map");
    const double s = static_cast<double>(stride);
    const double f_extent = static_cast<double>(h_f) * s;
    const double t_extent = static_cast<double>(w_f) * s;

    std::vector<Anchor> out;
    out.reserve(h_f * w_f * cfg.scales.size() * cfg.ratios.size());
    for (std::size_t i = 0; i < h_f; ++i) {
        for (std::size_t j = 0; j < w_f; ++j) {
            const double cf = (static_cast<double>(i) + 0.5) * s;
            const double ct = (static_cast<double>(j) + 0.5) * s;
            for (std::size_t si = 0; si < cfg.scales.size(); ++si) {
                for (std::size_t ri = 0; ri < cfg.ratios.size(); ++ri) {
                    const double base = cfg.scales[si] * s;
                    const double r = cfg.ratios[ri];
                    const double w = base / std::sqrt(r);
                    const double h = base * std::sqrt(r);
                    Anchor a;
                    a.box = Box{ct - 0.5 * w, ct + 0.5 * w, cf - 0.5 * h, cf + 0.5 * h};
                    a.scale_idx = si;
                    a.ratio_idx = ri;
                    a.cell_i = i;
                    a.cell_j = j;
                    a.inside = a.box.t0 >= 0.0 && a.box.f0 >= 0.0 && a.box.t1 <= t_extent &&
                               a.box.f1 <= f_extent;
                    out.push_back(a);
                }
            }
        }
    }
    return out;
}

double iou(const Box& a, const Box& b) {
    const double it = std::min(a.t1, b.t1) - std::max(a.t0, b.t0);
    const double jf = std::min(a.f1, b.f1) - std::max(a.f0, b.f0);
    if (it <= 0.0 || jf <= 0.0) return 0.0;
    const double inter = it * jf;
    return inter / (a.area() + b.area() - inter);
}

BoxDelta encode_box(const Box& anchor, const Box& target) {
    BoxDelta d;
    d.tx = (target.center_t() - anchor.center_t()) / anchor.width();
    d.tf = (target.center_f() - anchor.center_f()) / anchor.height();
    d.tw = std::log(target.width() / anchor.width());
    d.th = std::log(target.height() / anchor.height());
    return d;
}

Box decode_box(const Box& anchor, const BoxDelta& d) {
    if (!std::isfinite(d.tx) || !std::isfinite(d.tf) || !std::isfinite(d.tw) ||
        !std::isfinite(d.th)) {
        throw NumericError("non-finite box delta");
    }
    const double ct = anchor.center_t() + d.tx * anchor.width();
    const double cf = anchor.center_f() + d.tf * anchor.height();
    const double w = anchor.width() * std::exp(d.tw);
    const double h = anchor.height() * std::exp(d.th);
    return Box{ct - 0.5 * w, ct + 0.5 * w, cf - 0.5 * h, cf + 0.5 * h};
}

Box clip_box(const Box& b, double f_extent, double t_extent) {
    Box c = b;
    c.t0 = std::clamp(c.t0, 0.0, t_extent);
    c.t1 = std::clamp(c.t1, 0.0, t_extent);
    c.f0 = std::clamp(c.f0, 0.0, f_extent);
    c.f1 = std::clamp(c.f1, 0.0, f_extent);
    return c;
}

std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                             double iou_threshold) {
    if (boxes.size() != scores.size()) throw std::invalid_argument("nms: length mismatch");
    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    std::vector<std::size_t> kept;
    for (std::size_t idx : order) {
        bool suppressed = false;
        for (std::size_t k : kept) {
            if (iou(boxes[idx], boxes[k]) > iou_threshold) {
                suppressed = true;
                break;
            }
        }
        if (!suppressed) kept.push_back(idx);
    }
    return kept;
}

TargetAssignment assign_targets(const std::vector<Anchor>& anchors,
                                const std::vector<Box>& gt_boxes, const AssignConfig& cfg,
                                Rng& rng) {
    if (anchors.empty()) throw std::invalid_argument("assign_targets: no anchors");
    const std::size_t n = anchors.size();

    TargetAssignment out;
    out.labels.assign(n, -1);
    out.deltas.assign(n, BoxDelta{});
    out.matched_gt.assign(n, 0);

    std::vector<double> best_iou(n, 0.0);
    std::vector<std::size_t> best_gt(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
            const double v = iou(anchors[i].box, gt_boxes[g]);
            if (v > best_iou[i]) {
                best_iou[i] = v;
                best_gt[i] = g;
            }
        }
    }

    std::vector<int> raw(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
        if (gt_boxes.empty() || best_iou[i] <= cfg.iou_neg) raw[i] = 0;
        if (!gt_boxes.empty() && best_iou[i] >= cfg.iou_pos) raw[i] = 1;
    }
    // max-IoU fallback: each gt that overlaps anything gets its argmax
    // anchors (all ties) marked positive regardless of threshold
    for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) best = std::max(best, iou(anchors[i].box, gt_boxes[g]));
        if (best <= 0.0) continue;
        for (std::size_t i = 0; i < n; ++i) {
            if (iou(anchors[i].box, gt_boxes[g]) == best) raw[i] = 1;
        }
    }

    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < n; ++i) {
        if (raw[i] == 1) pos.push_back(i);
        else if (raw[i] == 0) neg.push_back(i);
    }

    // subsample with a seeded partial Fisher-Yates so results are deterministic
    auto take = [&rng](std::vector<std::size_t>& v, std::size_t want) {
        if (v.size() <= want) return;
        for (std::size_t i = 0; i < want; ++i) {
            const std::size_t j = i + rng.index(v.size() - i);
            std::swap(v[i], v[j]);
        }
        v.resize(want);
    };
    const std::size_t pos_quota =
        static_cast<std::size_t>(std::floor(cfg.pos_fraction * static_cast<double>(cfg.batch)));
    take(pos, std::min(pos_quota, cfg.batch));
    take(neg, cfg.batch - std::min(pos.size(), cfg.batch));

    for (std::size_t i : pos) {
        out.labels[i] = 1;
        out.matched_gt[i] = best_gt[i];
        out.deltas[i] = encode_box(anchors[i].box, gt_boxes[best_gt[i]]);
    }
    for (std::size_t i : neg) out.labels[i] = 0;
    out.n_pos = pos.size();
    out.n_neg = neg.size();
    return out;
}

RpnHead::RpnHead(std::size_t in_c, std::size_t mid_c, std::size_t a_per_cell, Rng& rng)
    : in_channels(in_c),
      mid_channels(mid_c),
      anchors_per_cell(a_per_cell),
      conv_w("rpn.conv.weight", ad::Tensor({mid_c, in_c, 3, 3})),
      conv_b("rpn.conv.bias", ad::Tensor({mid_c})),
      score_w("rpn.score.weight", ad::Tensor({2 * a_per_cell, mid_c, 1, 1})),
      score_b("rpn.score.bias", ad::Tensor({2 * a_per_cell})),
      delta_w("rpn.delta.weight", ad::Tensor({4 * a_per_cell, mid_c, 1, 1})),
      delta_b("rpn.delta.bias", ad::Tensor({4 * a_per_cell})) {
    ad::init_he_uniform(conv_w.tensor, in_c * 9, rng);
    ad::init_he_uniform(score_w.tensor, mid_c, rng);
    ad::init_he_uniform(delta_w.tensor, mid_c, rng);
}

std::vector<ad::Parameter*> RpnHead::parameters() {
    return {&conv_w, &conv_b, &score_w, &score_b, &delta_w, &delta_b};
}

RpnForward rpn_forward(ad::Tape& tape, ad::Var features, RpnHead& head) {
    const ad::Tensor& x = tape.value(features);
    if (x.rank() != 3 || x.dim(0) != head.in_channels) {
        throw std::invalid_argument("rpn_forward: feature channel mismatch");
    }
    ad::Var trunk = tape.relu(
        tape.bias_add(tape.conv2d(features, tape.param(head.conv_w), 1, 1), tape.param(head.conv_b)));
    ad::Var score_map =
        tape.bias_add(tape.conv2d(trunk, tape.param(head.score_w), 1, 0), tape.param(head.score_b));
    ad::Var delta_map =
        tape.bias_add(tape.conv2d(trunk, tape.param(head.delta_w), 1, 0), tape.param(head.delta_b));
    RpnForward out;
    out.score_rows = tape.anchor_rows(score_map, head.anchors_per_cell, 2);
    out.delta_rows = tape.anchor_rows(delta_map, head.anchors_per_cell, 4);
    return out;
}

std::vector<double> eventness_probs(const ad::Tensor& score_rows) {
    const std::size_t n = score_rows.dim(0);
    std::vector<double> probs(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double bg = score_rows.at(i, 0), fg = score_rows.at(i, 1);
        const double m = std::max(bg, fg);
        const double eb = std::exp(bg - m), ef = std::exp(fg - m);
        probs[i] = ef / (eb + ef);
    }
    return probs;
}

std::vector<Proposal> propose(const ad::Tensor& score_rows, const ad::Tensor& delta_rows,
                              const std::vector<Anchor>& anchors, double f_extent,
                              double t_extent, const ProposalConfig& cfg) {
    if (score_rows.dim(0) != anchors.size() || delta_rows.dim(0) != anchors.size()) {
        throw std::invalid_argument("propose: head outputs do not match anchor count");
    }
    const std::vector<double> probs = eventness_probs(score_rows);

    std::vector<Box> boxes;
    std::vector<double> scores;
    boxes.reserve(anchors.size());
    scores.reserve(anchors.size());
    for (std::size_t i = 0; i < anchors.size(); ++i) {
        const BoxDelta d{delta_rows.at(i, 0), delta_rows.at(i, 1), delta_rows.at(i, 2),
                         delta_rows.at(i, 3)};
        const Box b = clip_box(decode_box(anchors[i].box, d), f_extent, t_extent);
        if (b.width() < cfg.min_side || b.height() < cfg.min_side) continue;
        boxes.push_back(b);
        scores.push_back(probs[i]);
    }

    std::vector<std::size_t> order(boxes.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return a < b;
    });
    if (order.size() > cfg.pre_nms_top) order.resize(cfg.pre_nms_top);

    std::vector<Box> top_boxes;
    std::vector<double> top_scores;
    for (std::size_t idx : order) {
        top_boxes.push_back(boxes[idx]);
        top_scores.push_back(scores[idx]);
    }
    std::vector<std::size_t> kept = nms(top_boxes, top_scores, cfg.nms_thresh);
    if (kept.size() > cfg.post_nms_top) kept.resize(cfg.post_nms_top);

    std::vector<Proposal> out;
    out.reserve(kept.size());
    for (std::size_t k : kept) out.push_back(Proposal{top_boxes[k], top_scores[k]});
    return out;
}

}  // namespace eventness::rpn
