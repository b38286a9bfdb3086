#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "eventness/autodiff.hpp"
#include "eventness/rng.hpp"
#include "eventness/rpn.hpp"

namespace eventness::roi {

struct Detection {
    rpn::Box box;
    std::string class_label;  // never the background class
    double score = 0.0;
};

// Half-open feature-cell index ranges covering a pixel-space proposal.
struct FeatureRegion {
    std::size_t f0 = 0, f1 = 0;  // band cells
    std::size_t t0 = 0, t1 = 0;  // frame cells
};

// Pixel box -> feature cells: floor the start, ceil the end, clamp, and keep
// at least one cell per axis. Throws when the box misses the map entirely.
FeatureRegion map_to_feature(const rpn::Box& proposal, std::size_t stride, std::size_t h_f,
                             std::size_t w_f);

// Max-pools the region into [C,P,P] by integer bin boundaries; bins narrower
// than one cell replicate their covering cell. Differentiable: gradients
// route to per-bin argmax cells (lowest linear index on ties).
ad::Var roi_pool(ad::Tape& tape, ad::Var features, const rpn::Box& proposal, std::size_t stride,
                 std::size_t pool_size);

struct RoiHead {
    std::size_t in_channels, pool_size, hidden, num_classes;  // classes exclude background
    ad::Parameter fc1_w, fc1_b, fc2_w, fc2_b;
    ad::Parameter cls_w, cls_b;  // K+1 outputs, background last
    ad::Parameter reg_w, reg_b;  // 4K outputs, class k at [4k, 4k+4)

    RoiHead(std::size_t in_channels, std::size_t pool_size, std::size_t hidden,
            std::size_t num_classes, Rng& rng);

    std::vector<ad::Parameter*> parameters();
};

struct RoiOutput {
    ad::Var cls_logits;  // [K+1]
    ad::Var reg;         // [4K]
};

// pooled [C,P,P] -> two FC+relu layers -> sibling class/regression outputs.
RoiOutput classify_and_refine(ad::Tape& tape, ad::Var pooled, RoiHead& head);

// Stable softmax of a logits tensor, computed outside the tape.
std::vector<double> posteriors_of(const ad::Tensor& logits);

struct DetectConfig {
    double score_thresh = 0.5;
    double nms_thresh = 0.3;  // per class
    double min_side = 1.0;
};

// Per-proposal posteriors/deltas -> thresholded, refined, clipped, per-class
// NMS'd detections sorted by descending score.
std::vector<Detection> finalize_detections(const std::vector<rpn::Proposal>& proposals,
                                           const std::vector<std::vector<double>>& posteriors,
                                           const std::vector<std::vector<double>>& reg_deltas,
                                           const std::vector<std::string>& class_names,
                                           double f_extent, double t_extent,
                                           const DetectConfig& cfg = {});

}  // namespace eventness::roi
