#include "eventness/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "eventness/checkpoint.hpp"
#include "eventness/errors.hpp"
#include "json.hpp"

namespace eventness::pipeline {

namespace {

std::size_t anchors_per_cell(const ModelConfig& cfg) {
    return cfg.anchors.scales.size() * cfg.anchors.ratios.size();
}

void validate_config(const ModelConfig& cfg) {
    if (cfg.class_names.empty()) throw DataError("no classes configured");
    for (const std::string& name : cfg.class_names) {
        if (name.empty() || name == "background") {
            throw DataError("invalid class name in configuration");
        }
    }
}

// keeps the first `take` entries as the sample, like a dealt hand
void deal(std::vector<std::size_t>& pool, std::size_t take, Rng& rng) {
    for (std::size_t k = 0; k < take; ++k) {
        std::swap(pool[k], pool[k + rng.index(pool.size() - k)]);
    }
    pool.resize(take);
}

struct PreparedClip {
    ad::Tensor tri;  // [3, n_mels, n_frames]
    std::size_t n_frames = 0;
    std::vector<rpn::Box> gt_boxes;
    std::vector<std::size_t> gt_labels;  // indices into class_names
    std::vector<rpn::Anchor> anchors;
};

PreparedClip prepare_clip(const LabeledClip& clip, const ModelConfig& cfg,
                          std::size_t model_stride) {
    const dsp::MelSpectrogram mel = dsp::log_mel(clip.waveform, cfg.spectrogram);
    PreparedClip out;
    out.tri = dsp::tri_channel_map(dsp::normalize_unit(mel)).values;
    out.n_frames = mel.values.dim(1);

    std::map<std::string, std::size_t> label_of;
    for (std::size_t k = 0; k < cfg.class_names.size(); ++k) label_of[cfg.class_names[k]] = k;

    for (const GtBox& gt : ground_truth_boxes(clip.annotations, mel)) {
        const auto it = label_of.find(gt.class_label);
        if (it == label_of.end()) {
            throw DataError("unknown class in annotations: " + gt.class_label);
        }
        out.gt_boxes.push_back(gt.box);
        out.gt_labels.push_back(it->second);
    }

    const std::size_t h_f = cfg.spectrogram.n_mels / model_stride;
    const std::size_t w_f = out.n_frames / model_stride;
    if (h_f == 0 || w_f == 0) throw DataError("input too small");
    out.anchors = rpn::generate_anchors(h_f, w_f, model_stride, cfg.anchors);
    return out;
}

struct RoiSample {
    rpn::Box box;
    std::size_t label = 0;   // class index, or K for background
    std::size_t gt_idx = 0;  // valid when label < K
};

std::vector<RoiSample> sample_rois(const std::vector<rpn::Proposal>& proposals,
                                   const std::vector<rpn::Box>& gt_boxes,
                                   const std::vector<std::size_t>& gt_labels,
                                   std::size_t num_classes, const TrainConfig& tcfg, Rng& rng) {
    std::vector<RoiSample> candidates;
    std::vector<double> overlap;  // max IoU against any gt, sampling only
    candidates.reserve(proposals.size() + gt_boxes.size());
    auto add_candidate = [&](const rpn::Box& box) {
        double best = 0.0;
        std::size_t best_gt = gt_boxes.size();
        for (std::size_t g = 0; g < gt_boxes.size(); ++g) {
            const double v = rpn::iou(box, gt_boxes[g]);
            if (v > best) {
                best = v;
                best_gt = g;
            }
        }
        RoiSample s;
        s.box = box;
        if (best_gt < gt_boxes.size() && best >= tcfg.roi_fg_iou) {
            s.label = gt_labels[best_gt];
            s.gt_idx = best_gt;
        } else {
            s.label = num_classes;
        }
        candidates.push_back(s);
        overlap.push_back(best);
    };
    for (const rpn::Proposal& p : proposals) add_candidate(p.box);
    for (const rpn::Box& g : gt_boxes) add_candidate(g);  // guaranteed positives

    // Background fills from overlapping negatives first. Max-pooled sub-boxes
    // of an event look almost exactly like the event itself, so only these
    // hard negatives teach the classifier to reject near-duplicates.
    std::vector<std::size_t> fg, bg_hard, bg_easy;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i].label < num_classes) {
            fg.push_back(i);
        } else {
            (overlap[i] >= 0.1 ? bg_hard : bg_easy).push_back(i);
        }
    }
    const std::size_t fg_quota =
        static_cast<std::size_t>(static_cast<double>(tcfg.roi_batch) * tcfg.roi_fg_fraction);
    const std::size_t n_fg = std::min(fg_quota, fg.size());
    const std::size_t bg_quota = tcfg.roi_batch - n_fg;
    const std::size_t n_hard = std::min(bg_quota, bg_hard.size());
    const std::size_t n_easy = std::min(bg_quota - n_hard, bg_easy.size());
    deal(fg, n_fg, rng);
    deal(bg_hard, n_hard, rng);
    deal(bg_easy, n_easy, rng);

    std::vector<RoiSample> batch;
    batch.reserve(n_fg + n_hard + n_easy);
    for (std::size_t i : fg) batch.push_back(candidates[i]);
    for (std::size_t i : bg_hard) batch.push_back(candidates[i]);
    for (std::size_t i : bg_easy) batch.push_back(candidates[i]);
    return batch;
}

ad::Tensor delta_tensor(const rpn::BoxDelta& d) {
    return ad::Tensor({4}, {d.tx, d.tf, d.tw, d.th});
}

}  // namespace

DetectionModel::DetectionModel(const ModelConfig& cfg, Rng& rng)
    : config(cfg),
      net(cfg.backbone, 3, rng),
      rpn_head(cfg.backbone.channels.back(), cfg.rpn_mid_channels, anchors_per_cell(cfg), rng),
      roi_head(cfg.backbone.channels.back(), cfg.roi_pool_size, cfg.roi_hidden,
               cfg.class_names.size(), rng) {
    validate_config(cfg);
}

std::vector<ad::Parameter*> DetectionModel::parameters() {
    std::vector<ad::Parameter*> out = net.parameters();
    for (ad::Parameter* p : rpn_head.parameters()) out.push_back(p);
    for (ad::Parameter* p : roi_head.parameters()) out.push_back(p);
    return out;
}

std::vector<GtBox> ground_truth_boxes(const std::vector<synth::Annotation>& annotations,
                                      const dsp::MelSpectrogram& mel) {
    const double frame_to_seconds =
        static_cast<double>(mel.params.hop) / static_cast<double>(mel.sample_rate);
    const std::size_t n_mels = mel.values.dim(0);
    const std::size_t n_frames = mel.values.dim(1);

    std::vector<GtBox> out;
    for (const synth::Annotation& a : annotations) {
        if (!(a.offset > a.onset)) throw DataError("zero-length annotation");
        if (a.onset < 0.0) throw DataError("annotation outside clip");
        const double t0 = a.onset / frame_to_seconds;
        const double t1 = std::min(a.offset / frame_to_seconds, static_cast<double>(n_frames));
        if (t0 >= static_cast<double>(n_frames)) throw DataError("annotation outside clip");

        double f0 = 0.0, f1 = static_cast<double>(n_mels);
        if (a.has_band) {
            f0 = std::max(0.0, a.band_lo);
            f1 = std::min(static_cast<double>(n_mels), a.band_hi);
            if (!(f0 < f1)) throw DataError("invalid annotation band extent");
        } else {
            std::size_t lo_frame = static_cast<std::size_t>(std::floor(t0));
            std::size_t hi_frame = static_cast<std::size_t>(std::ceil(t1));
            if (lo_frame >= n_frames) lo_frame = n_frames - 1;
            if (hi_frame <= lo_frame) hi_frame = lo_frame + 1;
            const auto [lo, hi] = dsp::band_energy_extent(mel, 0.95, lo_frame, hi_frame);
            f0 = static_cast<double>(lo);
            f1 = static_cast<double>(hi + 1);
        }
        out.push_back({rpn::Box{t0, t1, f0, f1}, a.class_label});
    }
    return out;
}

EventDetection box_to_event(const roi::Detection& d, double frame_to_seconds) {
    EventDetection e;
    e.class_label = d.class_label;
    e.onset = d.box.t0 * frame_to_seconds;
    e.offset = d.box.t1 * frame_to_seconds;
    e.band_lo = d.box.f0;
    e.band_hi = d.box.f1;
    e.confidence = d.score;
    return e;
}

TrainResult train(const std::vector<LabeledClip>& clips, const ModelConfig& mcfg,
                  const TrainConfig& tcfg) {
    if (clips.empty()) throw DataError("empty training set");
    if (tcfg.iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    validate_config(mcfg);

    Rng rng(tcfg.seed);
    DetectionModel model(mcfg, rng);
    const std::size_t stride = model.net.stride();
    const std::size_t num_classes = mcfg.class_names.size();

    std::vector<PreparedClip> prepared;
    prepared.reserve(clips.size());
    for (const LabeledClip& clip : clips) prepared.push_back(prepare_clip(clip, mcfg, stride));

    const std::vector<ad::Parameter*> params = model.parameters();
    ad::SgdOptimizer opt(tcfg.learning_rate, tcfg.momentum);
    std::vector<double> losses;
    losses.reserve(tcfg.iterations);

    for (std::size_t step = 0; step < tcfg.iterations; ++step) {
        const PreparedClip& clip = prepared[step % prepared.size()];

        ad::Tape tape;
        const ad::Var input = tape.leaf(clip.tri);
        const backbone::FeatureMap features = backbone::extract_features(tape, input, model.net);
        const rpn::RpnForward fwd = rpn_forward(tape, features.values, model.rpn_head);

        const rpn::TargetAssignment assignment =
            rpn::assign_targets(clip.anchors, clip.gt_boxes, mcfg.rpn_assign, rng);

        std::vector<ad::Var> rpn_ce, rpn_box;
        for (std::size_t i = 0; i < assignment.labels.size(); ++i) {
            const int label = assignment.labels[i];
            if (label < 0) continue;
            rpn_ce.push_back(tape.cross_entropy(tape.row(fwd.score_rows, i),
                                                label == 1 ? 1u : 0u));
            if (label == 1) {
                rpn_box.push_back(
                    tape.smooth_l1(tape.row(fwd.delta_rows, i), delta_tensor(assignment.deltas[i])));
            }
        }

        std::vector<rpn::Proposal> proposals =
            rpn::propose(tape.value(fwd.score_rows), tape.value(fwd.delta_rows), clip.anchors,
                         static_cast<double>(mcfg.spectrogram.n_mels),
                         static_cast<double>(clip.n_frames), mcfg.proposals);
        const std::vector<RoiSample> batch =
            sample_rois(proposals, clip.gt_boxes, clip.gt_labels, num_classes, tcfg, rng);

        std::vector<ad::Var> roi_ce, roi_box;
        for (const RoiSample& s : batch) {
            const ad::Var pooled =
                roi::roi_pool(tape, features.values, s.box, stride, mcfg.roi_pool_size);
            const roi::RoiOutput out = roi::classify_and_refine(tape, pooled, model.roi_head);
            roi_ce.push_back(tape.cross_entropy(out.cls_logits, s.label));
            if (s.label < num_classes) {
                const rpn::BoxDelta d = rpn::encode_box(s.box, clip.gt_boxes[s.gt_idx]);
                const ad::Var reg_rows = tape.reshape(out.reg, {num_classes, 4});
                roi_box.push_back(
                    tape.smooth_l1(tape.row(reg_rows, s.label), delta_tensor(d)));
            }
        }

        ad::Var total = tape.leaf(ad::Tensor::scalar(0.0));
        if (!rpn_ce.empty()) {
            total = tape.add(total, tape.scale(tape.average(rpn_ce), tcfg.lambda_rpn_cls));
        }
        if (!rpn_box.empty()) {
            total = tape.add(total, tape.scale(tape.average(rpn_box), tcfg.lambda_rpn_box));
        }
        if (!roi_ce.empty()) {
            total = tape.add(total, tape.scale(tape.average(roi_ce), tcfg.lambda_roi_cls));
        }
        if (!roi_box.empty()) {
            total = tape.add(total, tape.scale(tape.average(roi_box), tcfg.lambda_roi_box));
        }

        const double loss = tape.value(total)[0];
        if (!std::isfinite(loss)) {
            throw NumericError("training diverged at step " + std::to_string(step) +
                               ": loss is not finite");
        }
        losses.push_back(loss);

        ad::SgdOptimizer::zero_grad(params);
        tape.backward(total);
        opt.step(params);
    }

    return {std::move(model), std::move(losses)};
}

std::vector<EventDetection> detect(DetectionModel& model, const Waveform& w) {
    const ModelConfig& cfg = model.config;
    const dsp::MelSpectrogram mel = dsp::log_mel(w, cfg.spectrogram);
    const ad::Tensor tri = dsp::tri_channel_map(dsp::normalize_unit(mel)).values;
    const std::size_t n_frames = mel.values.dim(1);
    const double frame_to_seconds =
        static_cast<double>(cfg.spectrogram.hop) / static_cast<double>(mel.sample_rate);

    ad::Tape tape;
    const ad::Var input = tape.leaf(tri);
    const backbone::FeatureMap features = backbone::extract_features(tape, input, model.net);
    const rpn::RpnForward fwd = rpn_forward(tape, features.values, model.rpn_head);

    const std::size_t stride = features.stride;
    const std::vector<rpn::Anchor> anchors = rpn::generate_anchors(
        cfg.spectrogram.n_mels / stride, n_frames / stride, stride, cfg.anchors);
    const std::vector<rpn::Proposal> proposals =
        rpn::propose(tape.value(fwd.score_rows), tape.value(fwd.delta_rows), anchors,
                     static_cast<double>(cfg.spectrogram.n_mels),
                     static_cast<double>(n_frames), cfg.proposals);

    std::vector<std::vector<double>> posteriors, reg_deltas;
    posteriors.reserve(proposals.size());
    reg_deltas.reserve(proposals.size());
    for (const rpn::Proposal& p : proposals) {
        const ad::Var pooled =
            roi::roi_pool(tape, features.values, p.box, stride, cfg.roi_pool_size);
        const roi::RoiOutput out = roi::classify_and_refine(tape, pooled, model.roi_head);
        posteriors.push_back(roi::posteriors_of(tape.value(out.cls_logits)));
        const ad::Tensor& reg = tape.value(out.reg);
        reg_deltas.emplace_back(reg.data(), reg.data() + reg.size());
    }

    const std::vector<roi::Detection> dets = roi::finalize_detections(
        proposals, posteriors, reg_deltas, cfg.class_names,
        static_cast<double>(cfg.spectrogram.n_mels), static_cast<double>(n_frames), cfg.detect);

    std::vector<EventDetection> out;
    out.reserve(dets.size());
    for (const roi::Detection& d : dets) out.push_back(box_to_event(d, frame_to_seconds));
    return out;
}

std::string model_config_to_json(const ModelConfig& cfg) {
    nlohmann::json j;
    j["spectrogram"] = {{"n_fft", cfg.spectrogram.n_fft},   {"hop", cfg.spectrogram.hop},
                        {"n_mels", cfg.spectrogram.n_mels}, {"window_fn", cfg.spectrogram.window_fn},
                        {"f_min", cfg.spectrogram.f_min},   {"f_max", cfg.spectrogram.f_max}};
    j["backbone"] = {{"channels", cfg.backbone.channels},
                     {"pools_per_block", cfg.backbone.pools_per_block}};
    j["rpn"] = {{"mid_channels", cfg.rpn_mid_channels},
                {"scales", cfg.anchors.scales},
                {"ratios", cfg.anchors.ratios},
                {"assign",
                 {{"iou_pos", cfg.rpn_assign.iou_pos},
                  {"iou_neg", cfg.rpn_assign.iou_neg},
                  {"batch", cfg.rpn_assign.batch},
                  {"pos_fraction", cfg.rpn_assign.pos_fraction}}},
                {"proposals",
                 {{"pre_nms_top", cfg.proposals.pre_nms_top},
                  {"nms_thresh", cfg.proposals.nms_thresh},
                  {"post_nms_top", cfg.proposals.post_nms_top},
                  {"min_side", cfg.proposals.min_side}}}};
    j["roi"] = {{"pool_size", cfg.roi_pool_size},
                {"hidden", cfg.roi_hidden},
                {"detect",
                 {{"score_thresh", cfg.detect.score_thresh},
                  {"nms_thresh", cfg.detect.nms_thresh},
                  {"min_side", cfg.detect.min_side}}}};
    j["class_names"] = cfg.class_names;
    return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
    const nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw DataError("malformed model configuration");
    try {
        ModelConfig cfg;
        const auto& sp = j.at("spectrogram");
        cfg.spectrogram.n_fft = sp.at("n_fft").get<std::size_t>();
        cfg.spectrogram.hop = sp.at("hop").get<std::size_t>();
        cfg.spectrogram.n_mels = sp.at("n_mels").get<std::size_t>();
        cfg.spectrogram.window_fn = sp.at("window_fn").get<std::string>();
        cfg.spectrogram.f_min = sp.at("f_min").get<double>();
        cfg.spectrogram.f_max = sp.at("f_max").get<double>();
        const auto& bb = j.at("backbone");
        cfg.backbone.channels = bb.at("channels").get<std::vector<std::size_t>>();
        cfg.backbone.pools_per_block = bb.at("pools_per_block").get<std::size_t>();
        const auto& rp = j.at("rpn");
        cfg.rpn_mid_channels = rp.at("mid_channels").get<std::size_t>();
        cfg.anchors.scales = rp.at("scales").get<std::vector<double>>();
        cfg.anchors.ratios = rp.at("ratios").get<std::vector<double>>();
        const auto& as = rp.at("assign");
        cfg.rpn_assign.iou_pos = as.at("iou_pos").get<double>();
        cfg.rpn_assign.iou_neg = as.at("iou_neg").get<double>();
        cfg.rpn_assign.batch = as.at("batch").get<std::size_t>();
        cfg.rpn_assign.pos_fraction = as.at("pos_fraction").get<double>();
        const auto& pr = rp.at("proposals");
        cfg.proposals.pre_nms_top = pr.at("pre_nms_top").get<std::size_t>();
        cfg.proposals.nms_thresh = pr.at("nms_thresh").get<double>();
        cfg.proposals.post_nms_top = pr.at("post_nms_top").get<std::size_t>();
        cfg.proposals.min_side = pr.at("min_side").get<double>();
        const auto& ro = j.at("roi");
        cfg.roi_pool_size = ro.at("pool_size").get<std::size_t>();
        cfg.roi_hidden = ro.at("hidden").get<std::size_t>();
        const auto& de = ro.at("detect");
        cfg.detect.score_thresh = de.at("score_thresh").get<double>();
        cfg.detect.nms_thresh = de.at("nms_thresh").get<double>();
        cfg.detect.min_side = de.at("min_side").get<double>();
        cfg.class_names = j.at("class_names").get<std::vector<std::string>>();
        return cfg;
    } catch (const nlohmann::json::exception&) {
        throw DataError("malformed model configuration");
    }
}

void save_model(DetectionModel& model, const std::string& path) {
    std::vector<const ad::Parameter*> params;
    for (ad::Parameter* p : model.parameters()) params.push_back(p);
    ad::save_checkpoint(path, model_config_to_json(model.config), params);
}

DetectionModel load_model(const std::string& path) {
    const ad::Checkpoint ckpt = ad::load_checkpoint(path);
    const ModelConfig cfg = model_config_from_json(ckpt.config_json);
    Rng rng(0);
    DetectionModel model(cfg, rng);

    std::map<std::string, const ad::Tensor*> stored;
    for (const auto& [name, tensor] : ckpt.params) stored[name] = &tensor;
    for (ad::Parameter* p : model.parameters()) {
        const auto it = stored.find(p->identifier);
        if (it == stored.end()) {
            throw DataError("checkpoint parameter mismatch: " + p->identifier);
        }
        if (it->second->shape() != p->tensor.shape()) {
            throw DataError("checkpoint shape mismatch: " + p->identifier);
        }
        p->tensor = *it->second;
        stored.erase(it);
    }
    if (!stored.empty()) {
        throw DataError("checkpoint parameter mismatch: " + stored.begin()->first);
    }
    return model;
}

}  // namespace eventness::pipeline
