#include <doctest.h>

#include <cmath>

#include "rangesam/losses.hpp"
#include "rangesam/rng.hpp"

using namespace rangesam;
using ad::Tensor;

namespace {

std::vector<std::uint8_t> labels_2x3(std::initializer_list<int> v) {
    std::vector<std::uint8_t> out;
    for (int x : v) out.push_back(static_cast<std::uint8_t>(x));
    return out;
}

} // namespace

TEST_CASE("uniform logits give wce = ln(classes)") {
    const int c = 19;
    Tensor<float> logits = Tensor<float>::zeros({1, c, 2, 3});
    std::vector<std::uint8_t> tgt = labels_2x3({0, 5, 18, 7, 255, 3});
    losses::ClassWeights unit;
    unit.w.assign(c, 1.0);
    const float got = losses::wce_loss(logits, tgt, unit).item();
    CHECK(got == doctest::Approx(std::log(19.0)).epsilon(1e-5));
}

TEST_CASE("near-perfect prediction drives dice, iou and boundary to ~0") {
    const int c = 4;
    std::vector<std::uint8_t> tgt = labels_2x3({0, 1, 2, 3, 0, 255});
    Tensor<float> logits = Tensor<float>::zeros({1, c, 2, 3});
    for (int p = 0; p < 6; ++p) {
        if (tgt[static_cast<std::size_t>(p)] == kitti::kIgnore) continue;
        logits.data()[tgt[static_cast<std::size_t>(p)] * 6 + p] = 50.f;
    }
    CHECK(losses::dice_loss(logits, tgt).item() <= 1e-3f);
    CHECK(losses::iou_loss(logits, tgt).item() <= 1e-3f);
    CHECK(losses::boundary_loss(logits, tgt).item() <= 1e-3f);
}

TEST_CASE("wce weights act per target class") {
    // two pixels of class 0 and 1 with logits that make p = softmax(2,0)
    Tensor<float> logits =
        Tensor<float>::from_data({1, 2, 1, 2}, {2.f, 0.f, 0.f, 2.f});  // ch0: (2,0), ch1: (0,2)
    std::vector<std::uint8_t> tgt = {0, 1};
    losses::ClassWeights w;
    w.w = {2.0, 0.5};
    const double p = std::exp(2.0) / (std::exp(2.0) + 1.0);
    const double expect = (2.0 * -std::log(p) + 0.5 * -std::log(p)) / 2.0;
    CHECK(losses::wce_loss(logits, tgt, w).item() == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("dice and iou closed forms on a single-class half split") {
    // 2 classes, 2 pixels, target both class 0, predictions uniform
    Tensor<float> logits = Tensor<float>::zeros({1, 2, 1, 2});
    std::vector<std::uint8_t> tgt = {0, 0};
    // p_0 = 0.5 per pixel: S=1, A=1, B=2 -> dice = 2/(3), iou = 1/(2)
    CHECK(losses::dice_loss(logits, tgt).item() ==
          doctest::Approx(1.0 - 2.0 / 3.0).epsilon(1e-5));
    CHECK(losses::iou_loss(logits, tgt).item() == doctest::Approx(1.0 - 0.5).epsilon(1e-5));
}

TEST_CASE("losses ignore perturbations at IGNORE pixels") {
    Rng rng(5);
    Tensor<float> a = Tensor<float>::randn({1, 4, 2, 3}, rng);
    std::vector<std::uint8_t> tgt = labels_2x3({0, 255, 2, 3, 255, 1});
    Tensor<float> b = Tensor<float>::from_data(a.shape(), a.vec());
    // blast the ignored pixels (flat positions 1 and 4) in every channel
    for (int ch = 0; ch < 4; ++ch) {
        b.data()[ch * 6 + 1] = 1e3f;
        b.data()[ch * 6 + 4] = -1e3f;
    }
    losses::ClassWeights unit;
    unit.w.assign(4, 1.0);
    CHECK(losses::wce_loss(a, tgt, unit).item() == losses::wce_loss(b, tgt, unit).item());
    CHECK(losses::dice_loss(a, tgt).item() == losses::dice_loss(b, tgt).item());
    CHECK(losses::iou_loss(a, tgt).item() == losses::iou_loss(b, tgt).item());
    CHECK(losses::boundary_loss(a, tgt).item() == losses::boundary_loss(b, tgt).item());
}

TEST_CASE("total loss equals the independently summed terms") {
    Rng rng(9);
    Tensor<float> main = Tensor<float>::randn({1, 5, 4, 4}, rng);
    Tensor<float> aux1 = Tensor<float>::randn({1, 5, 2, 2}, rng);
    std::vector<std::uint8_t> tgt(16);
    for (auto& t : tgt) t = static_cast<std::uint8_t>(rng.uniform_int(5));
    losses::ClassWeights w;
    w.w = {1.0, 2.0, 0.5, 1.5, 1.0};
    const std::array<double, 4> lambda{0.7, 1.3, 0.9, 1.1};
    const double aux_w = 0.4;

    losses::LossTerms terms;
    const double total =
        losses::total_loss<float>(main, {aux1}, tgt, w, lambda, aux_w, &terms).item();

    auto composite = [&](const Tensor<float>& lg, const std::vector<std::uint8_t>& t) {
        return lambda[0] * losses::wce_loss(lg, t, w).item() +
               lambda[1] * losses::dice_loss(lg, t).item() +
               lambda[2] * losses::boundary_loss(lg, t).item() +
               lambda[3] * losses::iou_loss(lg, t).item();
    };
    const auto tgt_ds = losses::downsample_labels(tgt, 1, 4, 4, 2, 2);
    const double expect = composite(main, tgt) + aux_w * composite(aux1, tgt_ds);
    CHECK(total == doctest::Approx(expect).epsilon(1e-6));
    CHECK(terms.total == doctest::Approx(total).epsilon(1e-7));
}

TEST_CASE("boundary mask marks exactly the pixels with differing 4-neighbors") {
    // 3x4 image: left half class 0, right half class 1, one ignore
    std::vector<std::uint8_t> tgt = {0, 0, 1, 1,
                                     0, 255, 1, 1,
                                     0, 0, 1, 1};
    const auto mask = losses::boundary_mask(tgt, 1, 3, 4);
    // boundary sits along columns 1-2; the ignore pixel interrupts it in
    // the middle row (the neighbors across 255 never see each other)
    const std::vector<std::uint8_t> expect = {0, 1, 1, 0,
                                              0, 0, 0, 0,
                                              0, 1, 1, 0};
    CHECK(mask == expect);
}

TEST_CASE("class weights: inverse sqrt frequency, mean one") {
    std::vector<double> freq(19, 0.0);
    freq[0] = 0.5;
    freq[8] = 0.5;
    const auto cw = losses::class_weights_from_freq(freq);
    REQUIRE(cw.w.size() == 19);
    double mean = 0;
    for (double w : cw.w) mean += w;
    CHECK(mean / 19.0 == doctest::Approx(1.0).epsilon(1e-9));
    // rarer (zero-frequency) classes get strictly larger weights
    CHECK(cw.w[1] > cw.w[0]);
    CHECK(cw.w[0] == doctest::Approx(cw.w[8]));
}

TEST_CASE("miou from a hand confusion matrix") {
    losses::ConfusionMatrix cm(19);
    // class 0: tp=3, fn=1 (0->1), fp=1 (1->0): IoU = 3/5
    for (int i = 0; i < 3; ++i) cm.add(0, 0);
    cm.add(0, 1);
    cm.add(1, 0);
    // class 1: tp=2, fn=1, fp=1: IoU = 2/4
    for (int i = 0; i < 2; ++i) cm.add(1, 1);
    const auto r = losses::miou(cm);
    CHECK(r.per_class[0] == doctest::Approx(0.6));
    CHECK(r.per_class[1] == doctest::Approx(0.5));
    CHECK_FALSE(r.present[2]);  // untouched class excluded
    CHECK(r.mean == doctest::Approx(0.55));
    CHECK_FALSE(r.empty);

    losses::ConfusionMatrix empty_cm(19);
    const auto e = losses::miou(empty_cm);
    CHECK(e.empty);
    CHECK(e.mean == 0.0);
}

TEST_CASE("random uniform predictor on balanced 2-class data scores ~1/3") {
    // tp = N/4, fp = N/4, fn = N/4 per class in expectation -> IoU 1/3
    Rng rng(31);
    losses::ConfusionMatrix cm(19);
    for (int i = 0; i < 60000; ++i)
        cm.add(static_cast<std::uint8_t>(rng.uniform_int(2)),
               static_cast<std::uint8_t>(rng.uniform_int(2)));
    const auto r = losses::miou(cm);
    CHECK(r.mean == doctest::Approx(1.0 / 3.0).epsilon(0.05));
}

TEST_CASE("ignore entries never enter the confusion matrix") {
    losses::ConfusionMatrix cm(19);
    cm.add(255, 0);
    cm.add(0, 255);
    CHECK(cm.total() == 0);
}

TEST_CASE("report row lists 19 class columns plus mIoU") {
    losses::ConfusionMatrix cm(19);
    cm.add(0, 0);
    const auto r = losses::miou(cm);
    const std::string table = losses::format_miou_table(r);
    for (const auto& name : kitti::class_names())
        CHECK(table.find(name) != std::string::npos);
    CHECK(table.find("mIoU") != std::string::npos);
    const std::string js = losses::format_miou_json(r);
    CHECK(js.find("\"miou\"") != std::string::npos);
}

TEST_CASE("nearest-neighbor label downsampling") {
    std::vector<std::uint8_t> tgt = {0, 1, 2, 3,
                                     4, 5, 6, 7,
                                     8, 9, 10, 11,
                                     12, 13, 14, 15};
    const auto ds = losses::downsample_labels(tgt, 1, 4, 4, 2, 2);
    CHECK(ds == std::vector<std::uint8_t>{0, 2, 8, 10});
    CHECK_THROWS(losses::downsample_labels(tgt, 1, 4, 4, 3, 2));
}
