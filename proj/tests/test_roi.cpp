#include <cmath>
#include <vector>

#include "doctest.h"
#include "eventness/errors.hpp"
#include "eventness/roi_head.hpp"
#include "gradcheck.hpp"

using namespace eventness;
using rpn::Box;

TEST_CASE("map_to_feature floors starts, ceils ends, keeps one cell minimum") {
    // stride 16: pixels [20, 70) x [10, 40) -> cells t [1,5), f [0,3)
    roi::FeatureRegion r = roi::map_to_feature(Box{20.0, 70.0, 10.0, 40.0}, 16, 8, 13);
    CHECK(r.t0 == 1);
    CHECK(r.t1 == 5);
    CHECK(r.f0 == 0);
    CHECK(r.f1 == 3);

    // sliver inside one cell
    roi::FeatureRegion s = roi::map_to_feature(Box{32.0, 33.0, 16.0, 17.0}, 16, 8, 13);
    CHECK(s.t1 - s.t0 == 1);
    CHECK(s.f1 - s.f0 == 1);

    // overhang past the last full stride cell snaps to the nearest covered cell
    roi::FeatureRegion tail = roi::map_to_feature(Box{209.0, 214.0, 0.0, 16.0}, 16, 8, 13);
    CHECK(tail.t0 == 12);
    CHECK(tail.t1 == 13);

    // boxes entirely at negative coordinates are unmappable
    CHECK_THROWS_WITH_AS(roi::map_to_feature(Box{-20.0, -4.0, 0.0, 16.0}, 16, 8, 13),
                         "proposal outside feature map", DataError);
}

TEST_CASE("roi_pool matches the hand-enumerated 3x5 oracle at P=2") {
    // feature plane rows x cols = 3 x 5, values row*10+col
    ad::Tape tape;
    ad::Tensor feats({1, 3, 5});
    for (std::size_t y = 0; y < 3; ++y) {
        for (std::size_t x = 0; x < 5; ++x) feats.at(0, y, x) = static_cast<double>(y * 10 + x);
    }
    ad::Var v = tape.leaf(feats);
    // stride 1: pixel box = cell box, covering rows [0,3) x cols [0,5)
    ad::Var pooled = roi::roi_pool(tape, v, Box{0.0, 5.0, 0.0, 3.0}, 1, 2);
    const ad::Tensor& p = tape.value(pooled);
    REQUIRE(p.shape() == std::vector<std::size_t>{1, 2, 2});
    // row bins [0,1) [1,3); col bins [0,2) [2,5)
    CHECK(p.at(0, 0, 0) == 1.0);
    CHECK(p.at(0, 0, 1) == 4.0);
    CHECK(p.at(0, 1, 0) == 21.0);
    CHECK(p.at(0, 1, 1) == 24.0);

    // gradients land only on each bin's argmax cell
    ad::Tensor weights({1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
    ad::Var loss = gradcheck::weighted_sum(tape, pooled, weights);
    tape.backward(loss);
    const ad::Tensor& g = tape.grad(v);
    CHECK(g.at(0, 0, 1) == 1.0);
    CHECK(g.at(0, 0, 4) == 2.0);
    CHECK(g.at(0, 2, 1) == 3.0);
    CHECK(g.at(0, 2, 4) == 4.0);
    double total = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) total += std::abs(g[i]);
    CHECK(total == 10.0);
}

TEST_CASE("roi_pool degenerate and structural properties") {
    Rng rng(0x20f);

    // whole-map pooling of a constant plane reproduces the constant
    {
        ad::Tape tape;
        ad::Var v = tape.leaf(ad::Tensor::full({2, 4, 6}, 3.25));
        ad::Var pooled = roi::roi_pool(tape, v, Box{0.0, 6.0, 0.0, 4.0}, 1, 7);
        const ad::Tensor& p = tape.value(pooled);
        REQUIRE(p.shape() == std::vector<std::size_t>{2, 7, 7});
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == 3.25);
    }

    // a P x P region pools to itself
    {
        ad::Tape tape;
        ad::Tensor feats = gradcheck::distinct_tensor({3, 7, 7}, rng);
        ad::Var pooled = roi::roi_pool(tape, tape.leaf(feats), Box{0.0, 7.0, 0.0, 7.0}, 1, 7);
        const ad::Tensor& p = tape.value(pooled);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == feats[i]);
    }

    // a single-cell region replicates that cell across all P x P bins
    {
        ad::Tape tape;
        ad::Tensor feats = gradcheck::distinct_tensor({1, 5, 5}, rng);
        ad::Var pooled = roi::roi_pool(tape, tape.leaf(feats), Box{2.1, 2.9, 3.1, 3.9}, 1, 4);
        const ad::Tensor& p = tape.value(pooled);
        for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == feats.at(0, 3, 2));
    }

    // cells outside the region never influence the output
    {
        ad::Tensor feats = gradcheck::distinct_tensor({2, 6, 8}, rng);
        ad::Tensor bumped = feats;
        for (std::size_t c = 0; c < 2; ++c) bumped.at(c, 0, 0) += 100.0;
        const Box region{2.0, 8.0, 2.0, 6.0};  // cells t [2,8), f [2,6)
        ad::Tape ta, tb;
        ad::Var pa = roi::roi_pool(ta, ta.leaf(feats), region, 1, 3);
        ad::Var pb = roi::roi_pool(tb, tb.leaf(bumped), region, 1, 3);
        for (std::size_t i = 0; i < ta.value(pa).size(); ++i) {
            CHECK(ta.value(pa)[i] == tb.value(pb)[i]);
        }
    }

    // random geometries: output shape is always [C,P,P] and every pooled value
    // is attained somewhere inside the mapped region
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t h = 2 + rng.index(7), w = 2 + rng.index(12);
        const std::size_t pool = 1 + rng.index(6);
        ad::Tensor feats = gradcheck::distinct_tensor({2, h, w}, rng);
        const double t0 = rng.uniform(0.0, 16.0 * (w - 1));
        const double f0 = rng.uniform(0.0, 16.0 * (h - 1));
        const Box b{t0, t0 + rng.uniform(1.0, 16.0 * w - t0), f0,
                    f0 + rng.uniform(1.0, 16.0 * h - f0)};
        ad::Tape tape;
        ad::Var pooled = roi::roi_pool(tape, tape.leaf(feats), b, 16, pool);
        const ad::Tensor& p = tape.value(pooled);
        REQUIRE(p.shape() == std::vector<std::size_t>{2, pool, pool});
        roi::FeatureRegion r = roi::map_to_feature(b, 16, h, w);
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t i = 0; i < pool * pool; ++i) {
                const double val = p[c * pool * pool + i];
                bool found = false;
                for (std::size_t y = r.f0; y < r.f1 && !found; ++y) {
                    for (std::size_t x = r.t0; x < r.t1 && !found; ++x) {
                        found = feats.at(c, y, x) == val;
                    }
                }
                CHECK(found);
            }
        }
    }

    // fully outside the map on the negative side
    ad::Tape tape;
    ad::Var v = tape.leaf(ad::Tensor::full({1, 4, 4}, 1.0));
    CHECK_THROWS_WITH_AS(roi::roi_pool(tape, v, Box{10.0, 20.0, -8.0, -1.0}, 16, 2),
                         "proposal outside feature map", DataError);

    // overhang past the covered cells pools from the nearest covered column
    ad::Var tail = roi::roi_pool(tape, v, Box{200.0, 220.0, 0.0, 16.0}, 16, 2);
    for (std::size_t i = 0; i < tape.value(tail).size(); ++i) {
        CHECK(tape.value(tail)[i] == 1.0);
    }
}

TEST_CASE("classify_and_refine shapes and softmax") {
    Rng rng(5);
    roi::RoiHead head(4, 3, 16, 5, rng);
    ad::Tape tape;
    ad::Var pooled = tape.leaf(gradcheck::random_tensor({4, 3, 3}, rng));
    roi::RoiOutput out = roi::classify_and_refine(tape, pooled, head);
    CHECK(tape.value(out.cls_logits).shape() == std::vector<std::size_t>{6});
    CHECK(tape.value(out.reg).shape() == std::vector<std::size_t>{20});

    std::vector<double> post = roi::posteriors_of(tape.value(out.cls_logits));
    double total = 0.0;
    for (double p : post) total += p;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("finalize_detections thresholds, suppression, ordering") {
    const std::vector<std::string> classes = {"beep", "chirp"};
    std::vector<rpn::Proposal> props(3);
    props[0].box = Box{10.0, 50.0, 20.0, 60.0};
    props[1].box = Box{10.5, 50.5, 20.5, 60.5};
    props[2].box = Box{100.0, 140.0, 20.0, 60.0};

    // background dominates everywhere -> empty
    std::vector<std::vector<double>> bg_post(3, {0.05, 0.05, 0.9});
    std::vector<std::vector<double>> zero_reg(3, std::vector<double>(8, 0.0));
    CHECK(roi::finalize_detections(props, bg_post, zero_reg, classes, 128.0, 208.0).empty());

    // two near-duplicates of class 0 and one clear class 1
    std::vector<std::vector<double>> post = {
        {0.8, 0.1, 0.1}, {0.7, 0.1, 0.2}, {0.1, 0.85, 0.05}};
    std::vector<roi::Detection> dets =
        roi::finalize_detections(props, post, zero_reg, classes, 128.0, 208.0);
    REQUIRE(dets.size() == 2);
    CHECK(dets[0].class_label == "chirp");
    CHECK(dets[0].score == doctest::Approx(0.85));
    CHECK(dets[1].class_label == "beep");
    CHECK(dets[1].score == doctest::Approx(0.8));
    for (const roi::Detection& d : dets) {
        CHECK(d.score >= 0.5);
        CHECK(d.class_label != "background");
    }
}

TEST_CASE("roi head gradient check end-to-end") {
    double err = gradcheck::sweep(5, 0xe2, [](Rng& rng) {
        roi::RoiHead head(3, 3, 12, 2, rng);
        for (ad::Parameter* p : head.parameters()) {
            for (std::size_t i = 0; i < p->tensor.size(); ++i) {
                if (p->tensor[i] == 0.0) p->tensor[i] = rng.uniform(0.01, 0.05);
            }
        }
        ad::Tensor feats = gradcheck::distinct_tensor({3, 6, 9}, rng);
        const Box proposal{4.0, 30.0, 2.0, 20.0};
        const std::size_t target = rng.index(3);
        ad::Tensor reg_target = gradcheck::random_tensor({4}, rng);
        const std::size_t reg_class = rng.index(2);
        return gradcheck::param_max_rel_error(head.parameters(), [&](ad::Tape& t) {
            ad::Var pooled = roi::roi_pool(t, t.leaf(feats), proposal, 4, 3);
            roi::RoiOutput out = roi::classify_and_refine(t, pooled, head);
            ad::Var cls_loss = t.cross_entropy(out.cls_logits, target);
            ad::Var reg_rows = t.reshape(out.reg, {2, 4});
            ad::Var reg_loss = t.smooth_l1(t.row(reg_rows, reg_class), reg_target);
            return t.add(cls_loss, reg_loss);
        });
    });
    CHECK(err < 1e-4);
}
