#include <vector>

#include "doctest.h"
#include "eventness/backbone.hpp"
#include "eventness/errors.hpp"
#include "gradcheck.hpp"

using namespace eventness;

TEST_CASE("feature map dims follow floor(dim/stride)") {
    Rng rng(1);
    backbone::Backbone net({}, 3, rng);
    CHECK(net.stride() == 16);
    CHECK(net.out_channels() == 64);

    ad::Tape tape;
    ad::Var in = tape.leaf(gradcheck::random_tensor({3, 128, 322}, rng));
    backbone::FeatureMap fm = backbone::extract_features(tape, in, net);
    CHECK(tape.value(fm.values).shape() == std::vector<std::size_t>{64, 8, 20});
    CHECK(fm.stride == 16);

    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t h = 16 + rng.index(120);
        const std::size_t w = 16 + rng.index(200);
        ad::Tape t2;
        backbone::FeatureMap f2 =
            backbone::extract_features(t2, t2.leaf(gradcheck::random_tensor({3, h, w}, rng)), net);
        CHECK(t2.value(f2.values).dim(1) == h / 16);
        CHECK(t2.value(f2.values).dim(2) == w / 16);
    }
}

TEST_CASE("extraction is deterministic and rejects undersized input") {
    Rng rng(2);
    backbone::Backbone net({}, 3, rng);
    ad::Tensor x = gradcheck::random_tensor({3, 32, 48}, rng);

    ad::Tape t1, t2;
    backbone::FeatureMap a = backbone::extract_features(t1, t1.leaf(x), net);
    backbone::FeatureMap b = backbone::extract_features(t2, t2.leaf(x), net);
    const ad::Tensor& va = t1.value(a.values);
    const ad::Tensor& vb = t2.value(b.values);
    REQUIRE(va.shape() == vb.shape());
    for (std::size_t i = 0; i < va.size(); ++i) CHECK(va[i] == vb[i]);

    ad::Tape t3;
    CHECK_THROWS_WITH_AS(
        backbone::extract_features(t3, t3.leaf(ad::Tensor({3, 15, 64})), net), "input too small",
        DataError);
}

TEST_CASE("zero input with fresh (zero) biases yields zero features") {
    Rng rng(3);
    backbone::Backbone net({}, 3, rng);
    ad::Tape tape;
    backbone::FeatureMap fm =
        backbone::extract_features(tape, tape.leaf(ad::Tensor({3, 32, 32})), net);
    const ad::Tensor& v = tape.value(fm.values);
    for (std::size_t i = 0; i < v.size(); ++i) CHECK(v[i] == 0.0);
}

TEST_CASE("backbone parameter gradients match finite differences") {
    double err = gradcheck::sweep(3, 0xbb02, [](Rng& rng) {
        backbone::BackboneConfig cfg;
        cfg.channels = {4, 6};
        backbone::Backbone net(cfg, 3, rng);
        // Fresh biases are zero, putting every relu exactly on its kink; nudge
        // them off so finite differences stay on one side.
        for (ad::Parameter* p : net.parameters()) {
            for (std::size_t i = 0; i < p->tensor.size(); ++i) {
                if (p->tensor[i] == 0.0) p->tensor[i] = rng.uniform(0.01, 0.05);
            }
        }
        ad::Tensor x = gradcheck::distinct_tensor({3, 8, 12}, rng);
        ad::Tensor w = gradcheck::random_tensor({6, 2, 3}, rng);
        return gradcheck::param_max_rel_error(net.parameters(), [&](ad::Tape& t) {
            backbone::FeatureMap fm = backbone::extract_features(t, t.leaf(x), net);
            return gradcheck::weighted_sum(t, fm.values, w);
        });
    });
    CHECK(err < 1e-4);
}
