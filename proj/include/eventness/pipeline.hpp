#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "eventness/backbone.hpp"
#include "eventness/dsp_frontend.hpp"
#include "eventness/roi_head.hpp"
#include "eventness/rpn.hpp"
#include "eventness/scene_synth.hpp"

namespace eventness::pipeline {

using dsp::Waveform;

struct ModelConfig {
    dsp::SpectrogramParams spectrogram;
    backbone::BackboneConfig backbone;
    std::size_t rpn_mid_channels = 64;
    rpn::AnchorConfig anchors;
    rpn::AssignConfig rpn_assign;
    rpn::ProposalConfig proposals;
    std::size_t roi_pool_size = 7;
    std::size_t roi_hidden = 256;
    roi::DetectConfig detect;
    std::vector<std::string> class_names;  // background excluded
};

struct TrainConfig {
    double learning_rate = 0.005;
    double momentum = 0.9;
    std::size_t iterations = 1500;
    std::uint64_t seed = 0;
    double lambda_rpn_cls = 1.0;
    double lambda_rpn_box = 1.0;
    double lambda_roi_cls = 1.0;
    double lambda_roi_box = 1.0;
    std::size_t roi_batch = 32;  // proposals sampled per step
    double roi_fg_fraction = 0.25;
    double roi_fg_iou = 0.4;
};

// Shared-feature detector: one backbone forward per clip feeds both heads.
struct DetectionModel {
    ModelConfig config;
    backbone::Backbone net;
    rpn::RpnHead rpn_head;
    roi::RoiHead roi_head;

    DetectionModel(const ModelConfig& cfg, Rng& rng);

    std::vector<ad::Parameter*> parameters();
};

// Bit-exact round-trip: the checkpoint stores the config as JSON plus every
// parameter tensor. Loading rebuilds the model and matches parameters by name.
void save_model(DetectionModel& model, const std::string& path);
DetectionModel load_model(const std::string& path);

struct GtBox {
    rpn::Box box;
    std::string class_label;
};

// Time extent [onset, offset] / (hop/sr) in frame pixels, clamped to the
// frame count; frequency extent from the annotation's band fields, or the 95%
// band-marginal of the mel time slice when they are absent. Zero-length
// annotations and annotations starting past the last frame are errors.
std::vector<GtBox> ground_truth_boxes(const std::vector<synth::Annotation>& annotations,
                                      const dsp::MelSpectrogram& mel);

struct EventDetection {
    std::string class_label;
    double onset = 0.0;    // seconds
    double offset = 0.0;   // seconds
    double band_lo = 0.0;  // mel-band pixels
    double band_hi = 0.0;
    double confidence = 0.0;
};

// onset = t0 * frame_to_seconds, offset = t1 * frame_to_seconds; band extents
// and score copied.
EventDetection box_to_event(const roi::Detection& d, double frame_to_seconds);

struct LabeledClip {
    Waveform waveform;
    std::vector<synth::Annotation> annotations;
};

struct TrainResult {
    DetectionModel model;
    std::vector<double> losses;  // one total per optimization step
};

// Approximate joint training, one clip per step in corpus order. The step
// loss sums the four weighted terms; classification terms average over the
// sampled examples, box terms over the positives. The RoI batch is sampled
// from proposals plus the ground-truth boxes. A non-finite loss aborts with
// NumericError.
TrainResult train(const std::vector<LabeledClip>& clips, const ModelConfig& mcfg,
                  const TrainConfig& tcfg);

// frontend -> backbone -> propose -> roi head -> box_to_event, sorted by
// descending confidence. Deterministic; safe on a frozen model.
std::vector<EventDetection> detect(DetectionModel& model, const Waveform& w);

// Config serialization used inside checkpoints (JSON text).
std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace eventness::pipeline
