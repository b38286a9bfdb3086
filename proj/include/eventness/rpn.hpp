#pragma once

#include <cstddef>
#include <vector>

#include "eventness/autodiff.hpp"
#include "eventness/rng.hpp"

namespace eventness::rpn {

// Axis-aligned time-frequency rectangle in spectrogram pixel coordinates:
// t along frames (x), f along mel bands (y). Continuous, area (t1-t0)*(f1-f0).
struct Box {
    double t0 = 0.0, t1 = 0.0, f0 = 0.0, f1 = 0.0;

    double width() const { return t1 - t0; }    // time extent
    double height() const { return f1 - f0; }   // band extent
    double area() const { return width() * height(); }
    double center_t() const { return 0.5 * (t0 + t1); }
    double center_f() const { return 0.5 * (f0 + f1); }
};

struct Anchor {
    Box box;
    std::size_t scale_idx = 0, ratio_idx = 0;
    std::size_t cell_i = 0, cell_j = 0;  // feature cell (band, frame)
    bool inside = false;                 // fully within the covered pixel area
};

// Center/log-size offsets: tx,tw along time, tf,th along bands.
struct BoxDelta {
    double tx = 0.0, tf = 0.0, tw = 0.0, th = 0.0;
};

struct Proposal {
    Box box;
    double eventness_score = 0.0;  // in [0,1]
};

struct AnchorConfig {
    std::vector<double> scales = {1.0, 2.0, 4.0};   // multiples of the stride
    std::vector<double> ratios = {0.5, 1.0, 2.0};   // height:width
};

// 9 anchors per feature cell, centered at ((j+0.5)S, (i+0.5)S), area-preserving
// ratio split: width = scale*S/sqrt(r), height = scale*S*sqrt(r). Anchors are
// kept even when they cross the bounds; `inside` flags the ones that do not.
// List index = (i*W_f + j)*9 + scale_idx*ratios + ratio_idx.
std::vector<Anchor> generate_anchors(std::size_t h_f, std::size_t w_f, std::size_t stride,
                                     const AnchorConfig& cfg = {});

double iou(const Box& a, const Box& b);

BoxDelta encode_box(const Box& anchor, const Box& target);
Box decode_box(const Box& anchor, const BoxDelta& d);  // throws on non-finite deltas
Box clip_box(const Box& b, double f_extent, double t_extent);

// Greedy descending-score suppression; score ties keep the lower index.
// Returns surviving indices sorted by descending score.
std::vector<std::size_t> nms(const std::vector<Box>& boxes, const std::vector<double>& scores,
                             double iou_threshold);

struct AssignConfig {
    double iou_pos = 0.7;
    double iou_neg = 0.3;
    std::size_t batch = 256;
    double pos_fraction = 0.5;
};

struct TargetAssignment {
    // 1 positive, 0 negative, -1 ignore (after minibatch sampling)
    std::vector<int> labels;
    std::vector<BoxDelta> deltas;         // valid where labels == 1
    std::vector<std::size_t> matched_gt;  // valid where labels == 1
    std::size_t n_pos = 0, n_neg = 0;
};

// Positive: IoU >= iou_pos with some gt, or argmax anchor of a gt (ties all
// positive; skipped for gts no anchor overlaps). Negative: max IoU <= iou_neg.
// The sampled minibatch keeps at most batch*pos_fraction positives and fills
// the remainder with negatives; everything unsampled becomes ignore.
TargetAssignment assign_targets(const std::vector<Anchor>& anchors,
                                const std::vector<Box>& gt_boxes, const AssignConfig& cfg,
                                Rng& rng);

struct RpnHead {
    std::size_t in_channels, mid_channels, anchors_per_cell;
    ad::Parameter conv_w, conv_b;
    ad::Parameter score_w, score_b;
    ad::Parameter delta_w, delta_b;

    RpnHead(std::size_t in_channels, std::size_t mid_channels, std::size_t anchors_per_cell,
            Rng& rng);

    std::vector<ad::Parameter*> parameters();
};

struct RpnForward {
    ad::Var score_rows;  // [H_f*W_f*A, 2] logits (background, event)
    ad::Var delta_rows;  // [H_f*W_f*A, 4] (tx, tf, tw, th)
};

// 3x3 conv trunk + relu, then 1x1 score and delta siblings, rearranged so row
// r aligns with generate_anchors' list index.
RpnForward rpn_forward(ad::Tape& tape, ad::Var features, RpnHead& head);

// Per-row P(event) via a stable two-way softmax over the logits.
std::vector<double> eventness_probs(const ad::Tensor& score_rows);

struct ProposalConfig {
    std::size_t pre_nms_top = 2000;
    double nms_thresh = 0.7;
    std::size_t post_nms_top = 300;
    double min_side = 2.0;  // drop degenerate boxes under this many pixels
};

// decode + clip + degenerate drop + top-k + NMS + truncate; sorted by
// descending score.
std::vector<Proposal> propose(const ad::Tensor& score_rows, const ad::Tensor& delta_rows,
                              const std::vector<Anchor>& anchors, double f_extent,
                              double t_extent, const ProposalConfig& cfg = {});

}  // namespace eventness::rpn
